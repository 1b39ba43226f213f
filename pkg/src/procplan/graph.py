"""Procedural knowledge graph: a first-order transition matrix over actions.

Edge weights are estimated from bigram counts over a corpus of action
sequences. Actions never seen as a predecessor keep an all-zero row (a
"sink"); decoders deal with those through a log floor instead of inventing
transitions the corpus never showed.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

ROW_SUM_TOL = 1e-9


class GraphError(ValueError):
    """Invalid corpus, taxonomy or graph file."""


@dataclass(frozen=True)
class ActionTaxonomy:
    names: tuple[str, ...]

    def __post_init__(self):
        names = tuple(self.names)
        object.__setattr__(self, "names", names)
        if not names:
            raise GraphError("taxonomy must contain at least one action")
        if any(not isinstance(n, str) or not n for n in names):
            raise GraphError("action names must be non-empty strings")
        if len(set(names)) != len(names):
            raise GraphError("action names must be unique")

    @classmethod
    def of_size(cls, n: int) -> "ActionTaxonomy":
        return cls(tuple(f"action_{i}" for i in range(n)))

    @property
    def size(self) -> int:
        return len(self.names)

    def id_of(self, name: str) -> int:
        return self.names.index(name)

    def __len__(self):
        return len(self.names)


@dataclass(frozen=True)
class SequenceCorpus:
    sequences: tuple[tuple[int, ...], ...]
    taxonomy: ActionTaxonomy
    tasks: tuple[int, ...] | None = None

    def __post_init__(self):
        seqs = tuple(tuple(int(a) for a in s) for s in self.sequences)
        object.__setattr__(self, "sequences", seqs)
        if self.tasks is not None:
            tasks = tuple(int(t) for t in self.tasks)
            if len(tasks) != len(seqs):
                raise GraphError("tasks and sequences differ in length")
            object.__setattr__(self, "tasks", tasks)
        n = self.taxonomy.size
        for k, s in enumerate(seqs):
            if len(s) < 2:
                raise GraphError(f"sequence {k} has fewer than 2 actions")
            for a in s:
                if a < 0 or a >= n:
                    raise GraphError(f"sequence {k}: action id {a} out of range [0, {n})")

    def __len__(self):
        return len(self.sequences)

    def filter_task(self, task: int) -> "SequenceCorpus":
        """Sub-corpus for one task (per-task graphs are built this way)."""
        if self.tasks is None:
            raise GraphError("corpus carries no task labels")
        keep = [i for i, t in enumerate(self.tasks) if t == task]
        return SequenceCorpus(
            tuple(self.sequences[i] for i in keep), self.taxonomy, tuple(task for _ in keep)
        )

    def merge(self, other: "SequenceCorpus") -> "SequenceCorpus":
        if other.taxonomy != self.taxonomy:
            raise GraphError("cannot merge corpora over different taxonomies")
        tasks = None
        if self.tasks is not None and other.tasks is not None:
            tasks = self.tasks + other.tasks
        return SequenceCorpus(self.sequences + other.sequences, self.taxonomy, tasks)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(str(self.taxonomy.size).encode())
        for s in self.sequences:
            h.update(b"|" + ",".join(map(str, s)).encode())
        return h.hexdigest()


@dataclass(frozen=True, eq=False)
class TransitionMatrix:
    """Row-stochastic transition weights; all-zero rows are sinks."""

    weights: np.ndarray
    taxonomy: ActionTaxonomy
    smoothing: float = 0.0
    source_corpus_hash: str = ""
    _log_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64, copy=True)
        n = self.taxonomy.size
        if w.shape != (n, n):
            raise GraphError(f"weights shape {w.shape} does not match taxonomy size {n}")
        if not np.all(np.isfinite(w)) or np.any(w < 0) or np.any(w > 1):
            raise GraphError("transition weights must lie in [0, 1]")
        sums = w.sum(axis=1)
        live = sums > 0
        bad = np.abs(sums[live] - 1.0) > ROW_SUM_TOL
        if np.any(bad):
            row = int(np.flatnonzero(live)[np.argmax(bad)])
            raise GraphError(f"row {row} sums to {sums[row]!r}, expected 1")
        if self.smoothing < 0:
            raise GraphError("smoothing must be nonnegative")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.taxonomy.size

    @property
    def sink_rows(self) -> np.ndarray:
        return np.flatnonzero(self.weights.sum(axis=1) == 0)

    @property
    def n_edges(self) -> int:
        return int(np.count_nonzero(self.weights))

    def log_weights(self, log_floor: float = -1e9) -> np.ndarray:
        """log(weights) with zero entries replaced by ``log_floor``."""
        cached = self._log_cache.get(log_floor)
        if cached is None:
            w = self.weights
            with np.errstate(divide="ignore"):
                cached = np.where(w > 0, np.log(w), log_floor)
            cached.setflags(write=False)
            self._log_cache[log_floor] = cached
        return cached

    def __eq__(self, other):
        if not isinstance(other, TransitionMatrix):
            return NotImplemented
        return (
            self.taxonomy == other.taxonomy
            and self.smoothing == other.smoothing
            and np.array_equal(self.weights, other.weights)
        )

    __hash__ = None


def transition_counts(corpus: SequenceCorpus) -> np.ndarray:
    n = corpus.taxonomy.size
    counts = np.zeros((n, n), dtype=np.int64)
    for s in corpus.sequences:
        a = np.asarray(s)
        np.add.at(counts, (a[:-1], a[1:]), 1)
    return counts


def build_graph(corpus: SequenceCorpus, smoothing: float = 0.0) -> TransitionMatrix:
    """Estimate transition probabilities from bigram co-occurrence.

    ``smoothing`` is a Laplace pseudo-count added to every edge of rows that
    have at least one observed outgoing transition; rows without any
    observation stay all-zero.
    """
    if len(corpus) == 0:
        raise GraphError("corpus is empty")
    if smoothing < 0:
        raise GraphError("smoothing must be nonnegative")
    counts = transition_counts(corpus).astype(np.float64)
    observed = counts.sum(axis=1) > 0
    weights = np.zeros_like(counts)
    num = counts[observed] + smoothing
    weights[observed] = num / num.sum(axis=1, keepdims=True)
    return TransitionMatrix(weights, corpus.taxonomy, float(smoothing), corpus.digest())


def coverage(graph: TransitionMatrix, test_corpus: SequenceCorpus) -> float:
    """Fraction of sequences whose every transition has nonzero weight."""
    if len(test_corpus) == 0:
        raise GraphError("test corpus is empty")
    if test_corpus.taxonomy.size != graph.n:
        raise GraphError("taxonomy sizes differ")
    w = graph.weights
    hits = 0
    for s in test_corpus.sequences:
        a = np.asarray(s)
        if np.all(w[a[:-1], a[1:]] > 0):
            hits += 1
    return hits / len(test_corpus)


def corrupt_graph(
    graph: TransitionMatrix,
    edge_dropout: float = 0.0,
    weight_noise_sigma: float = 0.0,
    rng_seed: int = 0,
) -> TransitionMatrix:
    """Drop edges at random and jitter the survivors.

    One uniform and one normal draw is taken per matrix entry (row-major),
    so for a fixed seed a larger dropout removes a superset of the edges a
    smaller one removes. Rows that lose every edge become sinks.
    """
    if not 0 <= edge_dropout < 1:
        raise GraphError("edge_dropout must be in [0, 1)")
    if weight_noise_sigma < 0:
        raise GraphError("weight_noise_sigma must be nonnegative")
    rng = np.random.default_rng(rng_seed)
    n = graph.n
    u = rng.random((n, n))
    noise = rng.standard_normal((n, n))
    w = np.array(graph.weights)
    keep = (w > 0) & (u >= edge_dropout)
    if weight_noise_sigma > 0:
        w = w + weight_noise_sigma * noise
    w = np.where(keep, np.maximum(w, 0.0), 0.0)
    # renormalize only rows that changed, so untouched rows stay bit-identical
    changed = np.any(w != graph.weights, axis=1, keepdims=True)
    sums = w.sum(axis=1, keepdims=True)
    w = np.divide(w, sums, out=np.zeros_like(w), where=sums > 0)
    w = np.where(changed, w, graph.weights)
    return TransitionMatrix(w, graph.taxonomy, graph.smoothing, graph.source_corpus_hash)


# -- persistence ------------------------------------------------------------


def graph_to_dict(graph: TransitionMatrix) -> dict:
    return {
        "n": graph.n,
        "names": list(graph.taxonomy.names),
        "smoothing": graph.smoothing,
        "source_corpus_hash": graph.source_corpus_hash,
        "rows": graph.weights.tolist(),
    }


def graph_from_dict(data: dict, expected_n: int | None = None) -> TransitionMatrix:
    try:
        n = int(data["n"])
        names = data.get("names") or [f"action_{i}" for i in range(n)]
        rows = data["rows"]
    except (KeyError, TypeError, ValueError) as exc:
        raise GraphError(f"malformed graph object: {exc}") from exc
    if expected_n is not None and n != expected_n:
        raise GraphError(f"graph has {n} actions, expected {expected_n}")
    if len(names) != n:
        raise GraphError("names length does not match n")
    try:
        w = np.array(rows, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise GraphError(f"malformed rows: {exc}") from exc
    if w.shape != (n, n):
        raise GraphError(f"rows shape {w.shape} does not match n={n}")
    return TransitionMatrix(
        w,
        ActionTaxonomy(tuple(names)),
        float(data.get("smoothing", 0.0)),
        str(data.get("source_corpus_hash", "")),
    )


def save_graph(graph: TransitionMatrix, path) -> None:
    # json writes floats with repr(), which round-trips float64 exactly.
    Path(path).write_text(json.dumps(graph_to_dict(graph)))


def load_graph(path, expected_n: int | None = None) -> TransitionMatrix:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise GraphError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise GraphError(f"{path}: expected a JSON object")
    return graph_from_dict(data, expected_n)


def read_corpus(path, taxonomy: ActionTaxonomy | None = None, n_actions: int | None = None) -> SequenceCorpus:
    """Read line-delimited JSON records ``{"task": int, "actions": [...]}``.

    Without a taxonomy, one of size ``n_actions`` (or max id + 1) is made up.
    """
    seqs, tasks = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                seqs.append([int(a) for a in rec["actions"]])
                tasks.append(int(rec.get("task", -1)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise GraphError(f"{path}:{lineno}: bad corpus record ({exc})") from exc
    if not seqs:
        raise GraphError(f"{path}: corpus is empty")
    if taxonomy is None:
        n = n_actions if n_actions is not None else max(max(s) for s in seqs) + 1
        taxonomy = ActionTaxonomy.of_size(n)
    return SequenceCorpus(tuple(map(tuple, seqs)), taxonomy, tuple(tasks))


def write_corpus(corpus: SequenceCorpus, path) -> None:
    tasks: Iterable[int] = corpus.tasks if corpus.tasks is not None else [-1] * len(corpus)
    with open(path, "w") as fh:
        for t, s in zip(tasks, corpus.sequences):
            fh.write(json.dumps({"task": t, "actions": list(s)}) + "\n")


def corpus_from_lists(sequences: Sequence[Sequence[int]], n_actions: int | None = None) -> SequenceCorpus:
    if n_actions is None:
        n_actions = max(max(s) for s in sequences) + 1 if sequences else 1
    return SequenceCorpus(tuple(map(tuple, sequences)), ActionTaxonomy.of_size(n_actions))
