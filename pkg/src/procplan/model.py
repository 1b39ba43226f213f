"""Emission network, task head, losses and the training loop.

The network maps (start, goal) observations to a T x N matrix of emission
probabilities:

    v_s, v_g   = linear projection of the observations (shared weights)
    token_t    = relu([v_s; v_g] W_in + b_in + pos_t)          t = 1..T
    token      = token + SelfAttention(token)                  (optional)
    b[t, :]    = sigmoid(relu(token_t W_1 + b_1) W_2 + b_2)

Dropout acts on the two hidden activations only. All gradients are written
out layer by layer; there is no autodiff engine.
"""

from __future__ import annotations

import base64
import csv
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .dvl import compose_soft_plan, dvl_backward, dvl_forward_log
from .graph import TransitionMatrix
from .viterbi import LOG_FLOOR, DiscretePlan, beam_search

log = logging.getLogger(__name__)

MODES = ("argmax_emissions", "vd_on_emissions", "argmax_dvl", "vd_on_dvl", "pkg_beam")
MODE_ALIASES = {"base_argmax": "argmax_emissions", "base_vd": "vd_on_emissions"}

# Ablation grid: configuration -> (trained through the DVL, inference mode)
TABLE_CONFIGS = {
    1: (False, "argmax_emissions"),
    2: (False, "vd_on_emissions"),
    3: (False, "argmax_dvl"),
    4: (False, "vd_on_dvl"),
    5: (True, "argmax_emissions"),
    6: (True, "vd_on_emissions"),
    7: (True, "argmax_dvl"),
    8: (True, "vd_on_dvl"),
}


class TrainingDiverged(RuntimeError):
    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot


@dataclass
class NetConfig:
    embed_dim: int = 32
    n_actions: int = 24
    horizon: int = 3
    n_tasks: int = 6
    enc_dim: int = 32
    hidden: int = 128
    attention: bool = False
    dropout: float = 0.20

    def __post_init__(self):
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")


@dataclass
class TrainConfig:
    lr: float = 9e-3
    dropout: float = 0.20
    batch_size: int = 256
    epochs: int = 200
    temperature: float = 1.0
    train_dvl: bool = True
    use_plan: bool = True
    use_align: bool = True
    use_task: bool = True
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    hidden: int = 128
    enc_dim: int | None = None
    attention: bool = False
    log_floor: float = LOG_FLOOR
    log_every: int = 10

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")

    @classmethod
    def full_preset(cls, **overrides) -> "TrainConfig":
        return cls(**{"epochs": 500, "batch_size": 256, "lr": 9e-3, "dropout": 0.20, **overrides})

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)


# -- small layer helpers ----------------------------------------------------------


def _relu(x):
    return np.maximum(x, 0.0)


def _sigmoid(z):
    return np.exp(-np.logaddexp(0.0, -z))


def _log_sigmoid(z):
    return -np.logaddexp(0.0, -z)


def _softmax(x, axis=-1):
    m = x.max(axis=axis, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=axis, keepdims=True)


class EmissionNet:
    """Observation encoder plus per-step emission head."""

    def __init__(self, cfg: NetConfig, params: dict | None = None, seed: int = 0):
        self.cfg = cfg
        self.params = params if params is not None else self._init(np.random.default_rng(seed))

    def _init(self, rng):
        c = self.cfg
        E, D, H, N, T = c.embed_dim, c.enc_dim, c.hidden, c.n_actions, c.horizon

        def he(fan_in, shape, gain=2.0):
            return rng.standard_normal(shape) * np.sqrt(gain / fan_in)

        p = {
            "enc.W": he(E, (E, D), 1.0),
            "enc.b": np.zeros(D),
            "emb.W_in": he(2 * D, (2 * D, H)),
            "emb.b_in": np.zeros(H),
            "emb.pos": 0.1 * rng.standard_normal((T, H)),
            "emb.W1": he(H, (H, H)),
            "emb.b1": np.zeros(H),
            "emb.W2": he(H, (H, N), 1.0),
            "emb.b2": np.zeros(N),
        }
        if c.attention:
            for k in ("Wq", "Wk", "Wv", "Wo"):
                p[f"attn.{k}"] = he(H, (H, H), 1.0)
        return p

    @property
    def n_params(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def encode(self, x):
        return x @ self.params["enc.W"] + self.params["enc.b"]

    def forward(self, starts, goals, horizon=None, train=False, rng=None):
        """Return (logits (B, T, N), cache). ``horizon`` <= trained horizon uses the first positions."""
        p, c = self.params, self.cfg
        xs = np.atleast_2d(np.asarray(starts, dtype=np.float64))
        xg = np.atleast_2d(np.asarray(goals, dtype=np.float64))
        if xs.shape[1] != c.embed_dim or xg.shape != xs.shape:
            raise ValueError(f"observations must be (B, {c.embed_dim}); got {xs.shape} and {xg.shape}")
        T = c.horizon if horizon is None else int(horizon)
        if not 1 <= T <= c.horizon:
            raise ValueError(f"horizon {T} outside [1, {c.horizon}]")
        drop = c.dropout if train else 0.0
        vs, vg = self.encode(xs), self.encode(xg)
        ctx = np.concatenate([vs, vg], axis=1)
        z = (ctx @ p["emb.W_in"] + p["emb.b_in"])[:, None, :] + p["emb.pos"][None, :T]
        h = _relu(z)
        m1 = self._mask(rng, h.shape, drop)
        h1 = h * m1 if m1 is not None else h
        cache = dict(xs=xs, xg=xg, ctx=ctx, z=z, m1=m1, h1=h1, T=T)
        if c.attention:
            Hd = c.hidden
            Q, K, V = h1 @ p["attn.Wq"], h1 @ p["attn.Wk"], h1 @ p["attn.Wv"]
            A = _softmax(Q @ np.swapaxes(K, 1, 2) / np.sqrt(Hd))
            O = A @ V
            h2 = h1 + O @ p["attn.Wo"]
            cache.update(Q=Q, K=K, V=V, A=A, O=O)
        else:
            h2 = h1
        u_pre = h2 @ p["emb.W1"] + p["emb.b1"]
        u = _relu(u_pre)
        m2 = self._mask(rng, u.shape, drop)
        if m2 is not None:
            u = u * m2
        logits = u @ p["emb.W2"] + p["emb.b2"]
        cache.update(h2=h2, u_pre=u_pre, u=u, m2=m2)
        return logits, cache

    @staticmethod
    def _mask(rng, shape, rate):
        if rate <= 0:
            return None
        if rng is None:
            raise ValueError("training-mode dropout needs an rng")
        return (rng.random(shape) >= rate) / (1.0 - rate)

    def backward(self, cache, g_logits, g_ctx=None) -> dict:
        """Parameter gradients given dL/dlogits and an extra dL/d[v_s; v_g]."""
        p, c = self.params, self.cfg
        T = cache["T"]
        g = {}
        u, h2 = cache["u"], cache["h2"]
        g["emb.W2"] = np.einsum("btk,btn->kn", u, g_logits)
        g["emb.b2"] = g_logits.sum(axis=(0, 1))
        gu = g_logits @ p["emb.W2"].T
        if cache["m2"] is not None:
            gu = gu * cache["m2"]
        gu = gu * (cache["u_pre"] > 0)
        g["emb.W1"] = np.einsum("btk,bth->kh", h2, gu)
        g["emb.b1"] = gu.sum(axis=(0, 1))
        gh2 = gu @ p["emb.W1"].T
        gh1 = gh2
        if c.attention:
            h1, Q, K, V, A, O = (cache[k] for k in ("h1", "Q", "K", "V", "A", "O"))
            scale = 1.0 / np.sqrt(c.hidden)
            g["attn.Wo"] = np.einsum("bti,btj->ij", O, gh2)
            gO = gh2 @ p["attn.Wo"].T
            gA = gO @ np.swapaxes(V, 1, 2)
            gV = np.swapaxes(A, 1, 2) @ gO
            gS = A * (gA - np.sum(gA * A, axis=-1, keepdims=True)) * scale
            gQ = gS @ K
            gK = np.swapaxes(gS, 1, 2) @ Q
            g["attn.Wq"] = np.einsum("bti,btj->ij", h1, gQ)
            g["attn.Wk"] = np.einsum("bti,btj->ij", h1, gK)
            g["attn.Wv"] = np.einsum("bti,btj->ij", h1, gV)
            gh1 = gh2 + gQ @ p["attn.Wq"].T + gK @ p["attn.Wk"].T + gV @ p["attn.Wv"].T
        if cache["m1"] is not None:
            gh1 = gh1 * cache["m1"]
        gz = gh1 * (cache["z"] > 0)
        gpos = np.zeros_like(p["emb.pos"])
        gpos[:T] = gz.sum(axis=0)
        g["emb.pos"] = gpos
        gz0 = gz.sum(axis=1)
        g["emb.W_in"] = cache["ctx"].T @ gz0
        g["emb.b_in"] = gz0.sum(axis=0)
        gctx = gz0 @ p["emb.W_in"].T
        if g_ctx is not None:
            gctx = gctx + g_ctx
        D = c.enc_dim
        gvs, gvg = gctx[:, :D], gctx[:, D:]
        g["enc.W"] = cache["xs"].T @ gvs + cache["xg"].T @ gvg
        g["enc.b"] = gvs.sum(axis=0) + gvg.sum(axis=0)
        return g


class TaskHead:
    """Linear map from [v_s; v_g] to one score per task."""

    def __init__(self, in_dim: int, n_tasks: int, params: dict | None = None, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.n_tasks = n_tasks
        self.params = params if params is not None else {
            "task.W": rng.standard_normal((in_dim, n_tasks)) / np.sqrt(in_dim),
            "task.b": np.zeros(n_tasks),
        }

    def forward(self, ctx):
        return ctx @ self.params["task.W"] + self.params["task.b"]

    def backward(self, ctx, g_out):
        grads = {"task.W": ctx.T @ g_out, "task.b": g_out.sum(axis=0)}
        return grads, g_out @ self.params["task.W"].T


# -- losses (all averaged over leading batch axes) -----------------------------------


def plan_loss(soft_plan, gt_plan):
    """Mean over steps of the squared distance to the one-hot plan, and its gradient."""
    P = np.asarray(soft_plan, dtype=np.float64)
    a = np.asarray(gt_plan, dtype=np.int64)
    Y = np.zeros_like(P)
    np.put_along_axis(Y, a[..., None], 1.0, axis=-1)
    T = P.shape[-2]
    n = int(np.prod(P.shape[:-2])) if P.ndim > 2 else 1
    diff = P - Y
    loss = float(np.sum(diff**2) / (T * n))
    return loss, 2.0 * diff / (T * n)


def task_loss(head_out, label):
    """Mean squared error against the one-hot task label, and its gradient."""
    out = np.asarray(head_out, dtype=np.float64)
    lab = np.asarray(label, dtype=np.int64)
    Y = np.zeros_like(out)
    np.put_along_axis(Y, lab.reshape(lab.shape + (1,)), 1.0, axis=-1)
    nt = out.shape[-1]
    n = int(np.prod(out.shape[:-1])) if out.ndim > 1 else 1
    diff = out - Y
    return float(np.sum(diff**2) / (nt * n)), 2.0 * diff / (nt * n)


def _contrastive(v, descs, pos):
    """Per-row -log softmax(cos(v, d))[pos] and gradient w.r.t. v."""
    vn = np.linalg.norm(v, axis=-1, keepdims=True)
    dn = np.linalg.norm(descs, axis=-1)
    if np.any(vn == 0) or np.any(dn == 0):
        raise ValueError("cosine similarity of a zero-norm vector")
    dhat = descs / dn[:, None]
    vhat = v / vn
    sim = vhat @ dhat.T
    rows = np.arange(len(v))
    m = sim.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(sim - m).sum(axis=-1)) + m[:, 0]
    loss = lse - sim[rows, pos]
    gsim = _softmax(sim)
    gsim[rows, pos] -= 1.0
    # d cos(v, d_k)/dv = (dhat_k - cos_k vhat) / |v|
    gv = (gsim @ dhat - np.sum(gsim * sim, axis=-1, keepdims=True) * vhat) / vn
    return loss, gv


def align_loss(start_emb, goal_emb, descriptions, positive_start, positive_goal):
    """Contrastive cross-entropy over cosine similarities to all descriptions.

    Returns (loss, grad_start, grad_goal); inputs may be single vectors or
    batches, the loss is averaged over the batch.
    """
    descs = np.asarray(descriptions, dtype=np.float64)
    if descs.ndim != 2 or len(descs) < 2:
        raise ValueError("need at least two description vectors")
    vs = np.atleast_2d(np.asarray(start_emb, dtype=np.float64))
    vg = np.atleast_2d(np.asarray(goal_emb, dtype=np.float64))
    ps = np.atleast_1d(np.asarray(positive_start, dtype=np.int64))
    pg = np.atleast_1d(np.asarray(positive_goal, dtype=np.int64))
    ls, gs = _contrastive(vs, descs, ps)
    lg, gg = _contrastive(vg, descs, pg)
    n = len(vs)
    loss = float((ls.sum() + lg.sum()) / n)
    gs, gg = gs / n, gg / n
    if np.ndim(start_emb) == 1:
        gs, gg = gs[0], gg[0]
    return loss, gs, gg


def total_loss(plan=0.0, align=0.0, task=0.0, use_plan=True, use_align=True, use_task=True) -> float:
    """Unit-weight sum of the enabled loss terms."""
    return (plan if use_plan else 0.0) + (align if use_align else 0.0) + (task if use_task else 0.0)


# -- model bundle -----------------------------------------------------------------


@dataclass
class PlanModel:
    net: EmissionNet
    head: TaskHead
    train_cfg: TrainConfig
    meta: dict = field(default_factory=dict)

    @property
    def params(self) -> dict:
        return {**self.net.params, **self.head.params}

    @property
    def trained_with_dvl(self) -> bool:
        return self.train_cfg.train_dvl


def build_model(net_cfg: NetConfig, train_cfg: TrainConfig) -> PlanModel:
    net = EmissionNet(net_cfg, seed=train_cfg.seed)
    head = TaskHead(2 * net_cfg.enc_dim, net_cfg.n_tasks, seed=train_cfg.seed + 7919)
    return PlanModel(net, head, train_cfg)


def base_soft_plan(log_b):
    """Row-normalised emissions: what the DVL yields with no transitions at all."""
    return _softmax(log_b)


def forward_losses(model: PlanModel, graph: TransitionMatrix, batch, descriptions=None, train=False, rng=None):
    """Forward + backward on one batch. Returns (loss terms dict, grads dict, soft plan)."""
    cfg = model.train_cfg
    starts, goals, plans, tasks = batch
    net, head = model.net, model.head
    logits, cache = net.forward(starts, goals, train=train, rng=rng)
    terms = {"plan": 0.0, "align": 0.0, "task": 0.0}
    g_logits = np.zeros_like(logits)
    log_b = _log_sigmoid(logits)
    if cfg.train_dvl:
        tr = dvl_forward_log(graph.log_weights(cfg.log_floor), log_b, cfg.temperature)
        P = compose_soft_plan(tr)
    else:
        P = base_soft_plan(log_b)
    if cfg.use_plan:
        terms["plan"], gP = plan_loss(P, plans)
        if cfg.train_dvl:
            g_logb = dvl_backward(tr, gP)
        else:
            g_logb = P * (gP - np.sum(gP * P, axis=-1, keepdims=True))
        # d log sigmoid(z)/dz = 1 - sigmoid(z)
        g_logits = g_logb * _sigmoid(-logits)
    ctx = cache["ctx"]
    g_ctx = np.zeros_like(ctx)
    grads = {}
    if cfg.use_task:
        out = head.forward(ctx)
        terms["task"], g_out = task_loss(out, tasks)
        hg, g_c = head.backward(ctx, g_out)
        grads.update(hg)
        g_ctx += g_c
    else:
        grads.update({k: np.zeros_like(v) for k, v in head.params.items()})
    if cfg.use_align and descriptions is not None:
        D = net.cfg.enc_dim
        N = net.cfg.n_actions
        plans_arr = np.asarray(plans)
        terms["align"], gs, gg = align_loss(ctx[:, :D], ctx[:, D:], descriptions, plans_arr[:, 0], N + plans_arr[:, -1])
        g_ctx[:, :D] += gs
        g_ctx[:, D:] += gg
    grads.update(net.backward(cache, g_logits, g_ctx))
    terms["total"] = total_loss(terms["plan"], terms["align"], terms["task"], cfg.use_plan,
                                cfg.use_align and descriptions is not None, cfg.use_task)
    return terms, grads, P


class Adam:
    def __init__(self, params: dict, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict):
        self.t += 1
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class EpochLog:
    epoch: int
    loss: float
    plan: float
    align: float
    task: float
    train_sr: float | None


def train(dataset, graph: TransitionMatrix, config: TrainConfig, descriptions=None, n_tasks: int | None = None,
          snapshot_dir=None) -> tuple[PlanModel, list[EpochLog]]:
    """Minibatch Adam on the summed losses; deterministic for a fixed seed."""
    T = dataset.horizon
    if graph.n != dataset.n_actions:
        raise ValueError(f"graph has {graph.n} actions, dataset {dataset.n_actions}")
    n_tasks = n_tasks or int(dataset.tasks.max()) + 1
    enc_dim = config.enc_dim or (descriptions.shape[1] if descriptions is not None else dataset.embed_dim)
    if descriptions is not None and descriptions.shape[1] != enc_dim:
        raise ValueError("description vectors must have the encoder output dimension")
    net_cfg = NetConfig(dataset.embed_dim, dataset.n_actions, T, n_tasks, enc_dim, config.hidden,
                        config.attention, config.dropout)
    model = build_model(net_cfg, config)
    params = model.params
    opt = Adam(params, config.lr, config.beta1, config.beta2, config.eps)
    rng = np.random.default_rng(config.seed + 1)
    M = len(dataset)
    history = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(M)
        sums = {"total": 0.0, "plan": 0.0, "align": 0.0, "task": 0.0}
        for lo in range(0, M, config.batch_size):
            idx = order[lo : lo + config.batch_size]
            batch = (dataset.starts[idx], dataset.goals[idx], dataset.plans[idx], dataset.tasks[idx])
            terms, grads, _ = forward_losses(model, graph, batch, descriptions, train=True, rng=rng)
            if not np.isfinite(terms["total"]):
                snap = None
                if snapshot_dir is not None:
                    snap = Path(snapshot_dir) / f"diverged_seed{config.seed}_epoch{epoch}.json"
                    save_checkpoint(model, snap)
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}: {terms}", snap)
            for k in sums:
                sums[k] += terms[k] * len(idx)
            opt.step(params, grads)
        sr = None
        if config.log_every and (epoch % config.log_every == 0 or epoch == config.epochs):
            preds = infer_plans(model, graph, dataset.starts, dataset.goals, default_mode(model))
            sr = 100.0 * float(np.mean(np.all(preds == dataset.plans, axis=1)))
        history.append(EpochLog(epoch, sums["total"] / M, sums["plan"] / M, sums["align"] / M, sums["task"] / M, sr))
        if sr is not None:
            log.debug("epoch %d loss %.5f train SR %.2f", epoch, sums["total"] / M, sr)
    model.meta.update(n_params=model.net.n_params + sum(v.size for v in model.head.params.values()))
    return model, history


def default_mode(model: PlanModel) -> str:
    return "vd_on_dvl" if model.trained_with_dvl else "argmax_emissions"


# -- inference ----------------------------------------------------------------


def predict_emissions(net: EmissionNet, start, goal, horizon=None) -> np.ndarray:
    """Eval-mode emission matrix b in [0, 1]; (T, N) for one instance, (B, T, N) for a batch."""
    logits, _ = net.forward(start, goal, horizon=horizon, train=False)
    b = _sigmoid(logits)
    return b[0] if np.ndim(start) == 1 else b


def viterbi_batch(log_w: np.ndarray, log_b: np.ndarray) -> np.ndarray:
    """Vectorised hard Viterbi over a batch of (T, N) log-emission matrices."""
    B, T, N = log_b.shape
    delta = log_b[:, 0].copy()
    psi = np.zeros((B, T, N), dtype=np.int64)
    for t in range(1, T):
        scores = delta[:, :, None] + log_w
        best = np.argmax(scores, axis=1)
        psi[:, t] = best
        delta = log_b[:, t] + np.take_along_axis(scores, best[:, None, :], axis=1)[:, 0, :]
    path = np.empty((B, T), dtype=np.int64)
    path[:, -1] = np.argmax(delta, axis=1)
    rows = np.arange(B)
    for t in range(T - 1, 0, -1):
        path[:, t - 1] = psi[rows, t, path[:, t]]
    return path


def _floored_log(x, floor):
    return np.where(x > 0, np.log(np.where(x > 0, x, 1.0)), floor)


def infer_plans(model: PlanModel, graph: TransitionMatrix, starts, goals, mode: str | None = None,
                horizon=None, beam_width: int = 10) -> np.ndarray:
    """Discrete plans (B, T) under one of the inference modes."""
    mode = MODE_ALIASES.get(mode, mode) if mode else default_mode(model)
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; choose from {MODES + tuple(MODE_ALIASES)}")
    cfg = model.train_cfg
    logits, _ = model.net.forward(starts, goals, horizon=horizon, train=False)
    if mode == "argmax_emissions":
        return np.argmax(logits, axis=-1)
    log_w = graph.log_weights(cfg.log_floor)
    log_b = _log_sigmoid(logits)
    if mode == "vd_on_emissions":
        return viterbi_batch(log_w, log_b)
    if mode == "pkg_beam":
        ends = np.argmax(logits, axis=-1)
        T = logits.shape[1]
        return np.array([beam_search(graph, int(e[0]), int(e[-1]), T, beam_width, cfg.log_floor).actions
                         for e in ends], dtype=np.int64).reshape(len(ends), T)
    P = compose_soft_plan(dvl_forward_log(log_w, log_b, cfg.temperature))
    if mode == "argmax_dvl":
        return np.argmax(P, axis=-1)
    return viterbi_batch(log_w, _floored_log(P, cfg.log_floor))


def infer_plan(model: PlanModel, graph: TransitionMatrix, start, goal, mode: str | None = None,
               horizon=None) -> DiscretePlan:
    return DiscretePlan(tuple(infer_plans(model, graph, start, goal, mode, horizon)[0].tolist()))


# -- persistence ----------------------------------------------------------------------


def _encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "dtype": "<f8", "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _decode_array(d: dict) -> np.ndarray:
    raw = base64.b64decode(d["data"])
    return np.frombuffer(raw, dtype=d.get("dtype", "<f8")).reshape(d["shape"]).astype(np.float64)


def save_checkpoint(model: PlanModel, path, run_config: dict | None = None) -> None:
    payload = {
        "format": "procplan-checkpoint/1",
        "net_config": asdict(model.net.cfg),
        "train_config": asdict(model.train_cfg),
        "run_config": run_config or {},
        "meta": model.meta,
        "params": {k: _encode_array(v) for k, v in model.params.items()},
    }
    Path(path).write_text(json.dumps(payload, indent=1))


def load_checkpoint(path) -> PlanModel:
    d = json.loads(Path(path).read_text())
    if d.get("format") != "procplan-checkpoint/1":
        raise ValueError(f"{path}: not a procplan checkpoint")
    net_cfg = NetConfig(**d["net_config"])
    train_cfg = TrainConfig.from_dict(d["train_config"])
    params = {k: _decode_array(v) for k, v in d["params"].items()}
    net = EmissionNet(net_cfg, {k: v for k, v in params.items() if not k.startswith("task.")})
    head = TaskHead(2 * net_cfg.enc_dim, net_cfg.n_tasks, {k: v for k, v in params.items() if k.startswith("task.")})
    return PlanModel(net, head, train_cfg, d.get("meta", {}))


def write_training_log(history: list[EpochLog], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss", "plan", "align", "task", "train_sr"])
        for h in history:
            w.writerow([h.epoch, repr(h.loss), repr(h.plan), repr(h.align), repr(h.task),
                        "" if h.train_sr is None else f"{h.train_sr:.4f}"])
