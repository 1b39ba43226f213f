"""Differentiable Viterbi layer.

The hard max/argmax of the Viterbi recursion are replaced by a tempered
log-sum-exp (``s_max``) and softmax (``s_argmax``), in log space:

    L_1(j)    = log b[1, j]
    S_t(i, j) = L_{t-1}(i) + log w(i, j)
    L_t(j)    = log b[t, j] + s_max_i S_t(i, j)
    psi_t(j)  = s_argmax_i S_t(i, j)          (soft backpointers)

The soft plan is the soft backtrace: p_T = s_argmax(L_T) and
p_t = psi_{t+1}^T p_{t+1}. At temperature 1 the forward pass is the HMM
forward algorithm and the soft plan equals the posterior state marginals;
as the temperature goes to 0 it collapses onto the Viterbi path.

The layer has no parameters. ``dvl_backward`` is hand-written reverse
accumulation over the saved forward quantities, O(T N^2) like the forward.
All functions accept a leading batch axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import TransitionMatrix
from .viterbi import LOG_FLOOR


@dataclass(frozen=True)
class SmoothConfig:
    temperature: float = 1.0
    log_floor: float = LOG_FLOOR

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if not self.log_floor < 0:
            raise ValueError("log_floor must be negative")


def s_max(x, temperature: float = 1.0, axis: int = -1):
    """Tempered log-sum-exp, shifted by the max for stability."""
    x = np.asarray(x, dtype=np.float64)
    m = np.max(x, axis=axis, keepdims=True)
    out = temperature * np.log(np.sum(np.exp((x - m) / temperature), axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis)


def s_argmax(x, temperature: float = 1.0, axis: int = -1):
    """Tempered softmax; the gradient of ``s_max``."""
    x = np.asarray(x, dtype=np.float64)
    m = np.max(x, axis=axis, keepdims=True)
    e = np.exp((x - m) / temperature)
    return e / np.sum(e, axis=axis, keepdims=True)


@dataclass
class DvlTrellis:
    log_delta: np.ndarray  # (..., T, N)
    soft_psi: np.ndarray  # (..., T, N, N); [t, j, i] = P(predecessor i | state j at t); t=0 unused
    log_emissions: np.ndarray
    temperature: float
    soft_plan: np.ndarray | None = None

    @property
    def horizon(self) -> int:
        return self.log_delta.shape[-2]

    def log_partition(self) -> np.ndarray:
        """s_max over final states; at temperature 1 this is log sum over all paths."""
        return s_max(self.log_delta[..., -1, :], self.temperature, axis=-1)


def floored_log(b, log_floor: float = LOG_FLOOR):
    b = np.asarray(b, dtype=np.float64)
    return np.where(b > 0, np.log(np.where(b > 0, b, 1.0)), log_floor)


def dvl_forward(graph: TransitionMatrix, emissions, cfg: SmoothConfig = SmoothConfig()) -> DvlTrellis:
    b = np.asarray(emissions, dtype=np.float64)
    if b.ndim < 2 or b.shape[-1] != graph.n:
        raise ValueError(f"emissions shape {b.shape} incompatible with {graph.n} actions")
    if b.shape[-2] < 1:
        raise ValueError("horizon T must be at least 1")
    return dvl_forward_log(graph.log_weights(cfg.log_floor), floored_log(b, cfg.log_floor), cfg.temperature)


def dvl_forward_log(log_w: np.ndarray, log_b: np.ndarray, temperature: float = 1.0) -> DvlTrellis:
    log_b = np.asarray(log_b, dtype=np.float64)
    *batch, T, N = log_b.shape
    L = np.empty_like(log_b)
    psi = np.zeros(tuple(batch) + (T, N, N))
    L[..., 0, :] = log_b[..., 0, :]
    for t in range(1, T):
        # S[..., i, j]; reduce over predecessors i
        S = L[..., t - 1, :, None] + log_w
        m = np.max(S, axis=-2, keepdims=True)
        e = np.exp((S - m) / temperature)
        z = np.sum(e, axis=-2, keepdims=True)
        L[..., t, :] = log_b[..., t, :] + np.squeeze(temperature * np.log(z) + m, axis=-2)
        psi[..., t, :, :] = np.swapaxes(e / z, -1, -2)
    return DvlTrellis(L, psi, log_b, temperature)


def compose_soft_plan(trellis: DvlTrellis) -> np.ndarray:
    """Soft backtrace of the trellis into a (..., T, N) row-stochastic plan."""
    L, psi = trellis.log_delta, trellis.soft_psi
    T = L.shape[-2]
    P = np.empty_like(L)
    P[..., T - 1, :] = s_argmax(L[..., T - 1, :], trellis.temperature)
    for t in range(T - 2, -1, -1):
        # p_t(k) = sum_j p_{t+1}(j) psi_{t+1}(j, k)
        P[..., t, :] = np.einsum("...j,...jk->...k", P[..., t + 1, :], psi[..., t + 1, :, :])
    trellis.soft_plan = P
    return P


def dvl_backward(trellis: DvlTrellis, grad_soft_plan) -> np.ndarray:
    """Gradient w.r.t. the log emissions, given dLoss/d(soft plan)."""
    if trellis.soft_plan is None:
        raise ValueError("trellis has no composed soft plan; call compose_soft_plan first")
    L, psi, P, tau = trellis.log_delta, trellis.soft_psi, trellis.soft_plan, trellis.temperature
    gP = np.array(grad_soft_plan, dtype=np.float64)
    if gP.shape != P.shape:
        raise ValueError(f"gradient shape {gP.shape} does not match plan {P.shape}")
    T = L.shape[-2]
    gpsi = np.zeros_like(psi)
    # adjoint of the backtrace, visited in reverse of its compute order
    for t in range(T - 1):
        gpsi[..., t + 1, :, :] = P[..., t + 1, :, None] * gP[..., t, None, :]
        gP[..., t + 1, :] += np.einsum("...jk,...k->...j", psi[..., t + 1, :, :], gP[..., t, :])
    gL = np.zeros_like(L)
    pT = P[..., T - 1, :]
    gL[..., T - 1, :] = pT * (gP[..., T - 1, :] - np.sum(gP[..., T - 1, :] * pT, axis=-1, keepdims=True)) / tau
    g_logb = np.zeros_like(L)
    for t in range(T - 1, 0, -1):
        ps = psi[..., t, :, :]
        g = gpsi[..., t, :, :]
        # softmax adjoint, laid out [j, i]
        gS_ji = ps * (g - np.sum(g * ps, axis=-1, keepdims=True)) / tau
        # s_max adjoint: dL_t(j)/dS_t(i, j) = psi_t(j, i)
        gS_ji = gS_ji + gL[..., t, :, None] * ps
        g_logb[..., t, :] = gL[..., t, :]
        gL[..., t - 1, :] += np.sum(gS_ji, axis=-2)
    g_logb[..., 0, :] = gL[..., 0, :]
    return g_logb


def dvl_backward_emissions(trellis: DvlTrellis, emissions, grad_soft_plan) -> np.ndarray:
    """Gradient w.r.t. the emission probabilities b (zero where b is floored)."""
    b = np.asarray(emissions, dtype=np.float64)
    g = dvl_backward(trellis, grad_soft_plan)
    return np.divide(g, b, out=np.zeros_like(g), where=b > 0)


def soft_plan(graph: TransitionMatrix, emissions, cfg: SmoothConfig = SmoothConfig()) -> np.ndarray:
    return compose_soft_plan(dvl_forward(graph, emissions, cfg))
