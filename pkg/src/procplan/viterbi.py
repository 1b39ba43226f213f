"""Hard decoding over a transition graph: Viterbi, exhaustive search, beam search.

Scores are log-domain sums
    log b[1, a_1] + sum_{t>1} (log w(a_{t-1}, a_t) + log b[t, a_t])
with a uniform prior over the first action and zeros replaced by a finite
log floor. Every max breaks ties towards the lowest action id, which makes
the backtrace return, among all optimal plans, the one whose reversed
action tuple is lexicographically smallest.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .graph import TransitionMatrix

LOG_FLOOR = -1e9
BRUTE_FORCE_LIMIT = 10**7


class DecodeError(ValueError):
    pass


@dataclass(frozen=True)
class DiscretePlan:
    actions: tuple[int, ...]
    log_score: float = 0.0
    # beam search only: False when no path avoids a forbidden transition
    feasible: bool = True
    # beam search only: whether the plan ends at the requested end action
    reached_end: bool = True

    def __post_init__(self):
        object.__setattr__(self, "actions", tuple(int(a) for a in self.actions))

    def __len__(self):
        return len(self.actions)


@dataclass(frozen=True)
class ViterbiTrellis:
    delta: np.ndarray  # (T, N) best log-score of a path ending in each state
    psi: np.ndarray  # (T, N) argmax predecessor; row 0 unused


def log_emissions(emissions: np.ndarray, log_floor: float = LOG_FLOOR) -> np.ndarray:
    b = np.asarray(emissions, dtype=np.float64)
    with np.errstate(divide="ignore"):
        return np.where(b > 0, np.log(np.where(b > 0, b, 1.0)), log_floor)


def _check(graph: TransitionMatrix, emissions) -> np.ndarray:
    b = np.asarray(emissions, dtype=np.float64)
    if b.ndim != 2:
        raise DecodeError(f"emissions must be a T x N matrix, got shape {b.shape}")
    if b.shape[0] == 0:
        raise DecodeError("horizon T must be at least 1")
    if b.shape[1] != graph.n:
        raise DecodeError(f"emissions have {b.shape[1]} columns, graph has {graph.n} actions")
    if np.any(b < 0) or not np.all(np.isfinite(b)):
        raise DecodeError("emissions must be finite and nonnegative")
    return b


def viterbi_decode(
    graph: TransitionMatrix, emissions, log_floor: float = LOG_FLOOR
) -> tuple[DiscretePlan, ViterbiTrellis]:
    b = _check(graph, emissions)
    return viterbi_decode_log(graph.log_weights(log_floor), log_emissions(b, log_floor))


def viterbi_decode_log(log_w: np.ndarray, log_b: np.ndarray) -> tuple[DiscretePlan, ViterbiTrellis]:
    """Viterbi on precomputed log transition and log emission matrices. O(T N^2)."""
    T, N = log_b.shape
    delta = np.empty((T, N))
    psi = np.zeros((T, N), dtype=np.int64)
    delta[0] = log_b[0]
    for t in range(1, T):
        # scores[i, j] = delta_{t-1}(i) + log w(i, j)
        scores = delta[t - 1][:, None] + log_w
        best = np.argmax(scores, axis=0)
        psi[t] = best
        delta[t] = log_b[t] + scores[best, np.arange(N)]
    path = np.empty(T, dtype=np.int64)
    path[-1] = int(np.argmax(delta[-1]))
    for t in range(T - 1, 0, -1):
        path[t - 1] = psi[t, path[t]]
    plan = DiscretePlan(tuple(path.tolist()), float(delta[-1, path[-1]]))
    return plan, ViterbiTrellis(delta, psi)


def path_log_score(graph: TransitionMatrix, emissions, actions, log_floor: float = LOG_FLOOR) -> float:
    """Objective of a single plan, accumulated in the same order as Viterbi."""
    lb = log_emissions(_check(graph, emissions), log_floor)
    lw = graph.log_weights(log_floor)
    a = list(actions)
    s = lb[0, a[0]]
    for t in range(1, len(a)):
        s = lb[t, a[t]] + (s + lw[a[t - 1], a[t]])
    return float(s)


def _all_paths(n: int, T: int) -> np.ndarray:
    return np.array(list(itertools.product(range(n), repeat=T)), dtype=np.int64).reshape(-1, T)


def _all_path_scores(graph, emissions, log_floor):
    b = _check(graph, emissions)
    T, N = b.shape
    if N**T > BRUTE_FORCE_LIMIT:
        raise DecodeError(f"N^T = {N}^{T} exceeds the brute-force limit {BRUTE_FORCE_LIMIT}")
    lb = log_emissions(b, log_floor)
    lw = graph.log_weights(log_floor)
    paths = _all_paths(N, T)
    s = lb[0, paths[:, 0]]
    for t in range(1, T):
        s = lb[t, paths[:, t]] + (s + lw[paths[:, t - 1], paths[:, t]])
    return paths, s


def brute_force_best(graph: TransitionMatrix, emissions, log_floor: float = LOG_FLOOR) -> DiscretePlan:
    """Exhaustive maximum over all N^T plans (test oracle), same tie-break as Viterbi."""
    paths, s = _all_path_scores(graph, emissions, log_floor)
    best = s.max()
    cand = paths[s == best]
    # smallest reversed tuple: np.lexsort treats its last key as primary
    order = np.lexsort(cand.T)
    return DiscretePlan(tuple(cand[order[0]].tolist()), float(best))


def brute_force_log_partition(graph: TransitionMatrix, emissions, log_floor: float = LOG_FLOOR) -> float:
    """log of the sum over all plans of prod(transition * emission)."""
    _, s = _all_path_scores(graph, emissions, log_floor)
    m = s.max()
    return float(m + np.log(np.exp(s - m).sum()))


# -- transition-only beam search baseline ------------------------------------


def _beam_key(item, end_action, floor_half):
    actions, score = item
    feasible = score > floor_half
    return (
        not (feasible and actions[-1] == end_action),
        not feasible,
        -score,
        actions,
    )


def beam_search(
    graph: TransitionMatrix,
    start_action: int,
    end_action: int,
    horizon: int,
    beam_width: int = 10,
    log_floor: float = LOG_FLOOR,
) -> DiscretePlan:
    """Best transition-only path of ``horizon`` actions starting at ``start_action``.

    Among the final beam, feasible paths ending at ``end_action`` win; then
    any feasible path; then the best floored path. Equal scores fall back to
    lexicographic order of the action ids. The returned plan carries
    ``feasible`` and ``reached_end`` flags.
    """
    if beam_width < 1:
        raise DecodeError("beam_width must be >= 1")
    if horizon < 1:
        raise DecodeError("horizon must be >= 1")
    n = graph.n
    for a in (start_action, end_action):
        if not 0 <= a < n:
            raise DecodeError(f"action id {a} out of range")
    lw = graph.log_weights(log_floor)
    # a floored path accumulates at least one log_floor term
    floor_half = log_floor / 2
    beam = [((int(start_action),), 0.0)]
    for _ in range(horizon - 1):
        expanded = [
            (acts + (j,), score + lw[acts[-1], j]) for acts, score in beam for j in range(n)
        ]
        expanded.sort(key=lambda it: (-it[1], it[0]))
        beam = expanded[:beam_width]
    best = min(beam, key=lambda it: _beam_key(it, end_action, floor_half))
    actions, score = best
    feasible = score > floor_half
    return DiscretePlan(actions, float(score), feasible, actions[-1] == end_action)


def exhaustive_constrained_path(
    graph: TransitionMatrix, start_action: int, end_action: int, horizon: int, log_floor: float = LOG_FLOOR
) -> DiscretePlan:
    """Oracle for ``beam_search`` with an unbounded beam."""
    lw = graph.log_weights(log_floor)
    items = []
    for tail in itertools.product(range(graph.n), repeat=horizon - 1):
        acts = (int(start_action),) + tail
        s = 0.0
        for t in range(1, horizon):
            s = s + lw[acts[t - 1], acts[t]]
        items.append((acts, s))
    floor_half = log_floor / 2
    actions, score = min(items, key=lambda it: _beam_key(it, end_action, floor_half))
    feasible = score > floor_half
    return DiscretePlan(actions, float(score), feasible, actions[-1] == end_action)
