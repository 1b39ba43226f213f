"""Synthetic procedural benchmarks.

A world holds, for every task, a sparse chain-with-branches transition
matrix over a subset of the shared action vocabulary, a unit-norm visual
prototype per action (its after-state), one initial-state prototype per
task, and unit-norm "description" vectors for the before/after state of
every action.

An instance rolls the task chain from its head for ``offset + T`` steps and
keeps the last T actions as the plan. The start observation is the
prototype of the action preceding the plan (or the task's initial state
when the plan starts at the head), the goal observation is the prototype of
the last planned action; both get isotropic Gaussian noise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .graph import ActionTaxonomy, SequenceCorpus
from .viterbi import viterbi_decode_log

MAX_RESAMPLE = 1000


class SynthError(ValueError):
    pass


@dataclass
class SyntheticWorld:
    taxonomy: ActionTaxonomy
    n_tasks: int
    task_matrices: np.ndarray  # (n_tasks, N, N); rows of actions outside a task are zero
    task_chains: list  # per task, the ordered chain of action ids
    prototypes: np.ndarray  # (N, E) after-state appearance of each action
    init_prototypes: np.ndarray  # (n_tasks, E)
    descriptions: np.ndarray  # (2N, D): rows [0, N) before-states, [N, 2N) after-states
    noise_sigma: float = 0.3
    max_offset: int = 2
    seed: int = 0
    params: dict = field(default_factory=dict)

    @property
    def n_actions(self) -> int:
        return self.taxonomy.size

    @property
    def embed_dim(self) -> int:
        return self.prototypes.shape[1]

    def to_dict(self) -> dict:
        return {
            "names": list(self.taxonomy.names),
            "n_tasks": self.n_tasks,
            "task_matrices": self.task_matrices.tolist(),
            "task_chains": [list(map(int, c)) for c in self.task_chains],
            "prototypes": self.prototypes.tolist(),
            "init_prototypes": self.init_prototypes.tolist(),
            "descriptions": self.descriptions.tolist(),
            "noise_sigma": self.noise_sigma,
            "max_offset": self.max_offset,
            "seed": self.seed,
            "params": self.params,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticWorld":
        return cls(
            taxonomy=ActionTaxonomy(tuple(d["names"])),
            n_tasks=int(d["n_tasks"]),
            task_matrices=np.array(d["task_matrices"], dtype=np.float64),
            task_chains=[list(c) for c in d["task_chains"]],
            prototypes=np.array(d["prototypes"], dtype=np.float64),
            init_prototypes=np.array(d["init_prototypes"], dtype=np.float64),
            descriptions=np.array(d["descriptions"], dtype=np.float64),
            noise_sigma=float(d["noise_sigma"]),
            max_offset=int(d["max_offset"]),
            seed=int(d["seed"]),
            params=dict(d.get("params", {})),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "SyntheticWorld":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _unit_rows(rng, n, dim):
    v = rng.standard_normal((n, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def generate_world(
    n_actions: int = 24,
    n_tasks: int = 6,
    embed_dim: int = 32,
    branching: float = 1.5,
    seed: int = 0,
    chain_length: int = 10,
    noise_sigma: float = 0.3,
    max_offset: int = 2,
    desc_dim: int | None = None,
    skip_reach: int = 2,
) -> SyntheticWorld:
    """Random world; ``branching`` is the expected out-degree of a chain node.

    Each non-terminal chain node keeps its edge to the next node and gets
    Poisson(branching - 1) extra forward edges skipping up to ``skip_reach``
    nodes ahead. ``branching == 1`` gives deterministic chains.
    """
    if branching < 1:
        raise SynthError("branching must be >= 1")
    if chain_length < 2 or chain_length > n_actions:
        raise SynthError("chain_length must be in [2, n_actions]")
    rng = np.random.default_rng(seed)
    desc_dim = desc_dim or embed_dim
    N = n_actions
    mats = np.zeros((n_tasks, N, N))
    chains = []
    for k in range(n_tasks):
        chain = rng.choice(N, size=chain_length, replace=False)
        chains.append([int(a) for a in chain])
        for p in range(chain_length - 1):
            targets = [chain[p + 1]]
            n_extra = rng.poisson(branching - 1.0) if branching > 1 else 0
            ahead = list(chain[p + 2 : p + 2 + skip_reach])
            if n_extra and ahead:
                pick = rng.choice(len(ahead), size=min(n_extra, len(ahead)), replace=False)
                targets += [ahead[i] for i in sorted(pick)]
            conc = np.ones(len(targets))
            conc[0] = 3.0
            probs = rng.dirichlet(conc) if len(targets) > 1 else np.ones(1)
            mats[k, chain[p], targets] = probs
    protos = _unit_rows(rng, N, embed_dim)
    init = _unit_rows(rng, n_tasks, embed_dim)
    descs = _unit_rows(rng, 2 * N, desc_dim)
    params = dict(
        n_actions=n_actions, n_tasks=n_tasks, embed_dim=embed_dim, branching=branching,
        seed=seed, chain_length=chain_length, noise_sigma=noise_sigma, max_offset=max_offset,
        desc_dim=desc_dim, skip_reach=skip_reach,
    )
    return SyntheticWorld(
        ActionTaxonomy.of_size(N), n_tasks, mats, chains, protos, init, descs,
        noise_sigma, max_offset, seed, params,
    )


@dataclass
class PlanInstance:
    start: np.ndarray
    goal: np.ndarray
    actions: tuple
    task: int

    @property
    def horizon(self) -> int:
        return len(self.actions)


@dataclass
class PlanDataset:
    """Column-stored instances sharing one horizon."""

    starts: np.ndarray  # (M, E)
    goals: np.ndarray  # (M, E)
    plans: np.ndarray  # (M, T) int
    tasks: np.ndarray  # (M,) int
    n_actions: int
    # action preceding the plan, -1 when the plan starts at the chain head
    preds: np.ndarray | None = None

    def __post_init__(self):
        self.starts = np.asarray(self.starts, dtype=np.float64)
        self.goals = np.asarray(self.goals, dtype=np.float64)
        self.plans = np.asarray(self.plans, dtype=np.int64).reshape(len(self.starts), -1)
        self.tasks = np.asarray(self.tasks, dtype=np.int64)
        if self.preds is None:
            self.preds = np.full(len(self.tasks), -1, dtype=np.int64)
        self.preds = np.asarray(self.preds, dtype=np.int64)

    def __len__(self):
        return len(self.tasks)

    @property
    def horizon(self) -> int:
        return self.plans.shape[1]

    @property
    def embed_dim(self) -> int:
        return self.starts.shape[1]

    def subset(self, idx) -> "PlanDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return PlanDataset(
            self.starts[idx], self.goals[idx], self.plans[idx], self.tasks[idx], self.n_actions, self.preds[idx]
        )

    def instance(self, i: int) -> PlanInstance:
        return PlanInstance(self.starts[i], self.goals[i], tuple(self.plans[i].tolist()), int(self.tasks[i]))

    def __iter__(self):
        return (self.instance(i) for i in range(len(self)))

    def corpus(self, taxonomy: ActionTaxonomy | None = None) -> SequenceCorpus:
        taxonomy = taxonomy or ActionTaxonomy.of_size(self.n_actions)
        return SequenceCorpus(tuple(map(tuple, self.plans.tolist())), taxonomy, tuple(self.tasks.tolist()))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            for i in range(len(self)):
                rec = {
                    "task": int(self.tasks[i]),
                    "actions": self.plans[i].tolist(),
                    "start": self.starts[i].tolist(),
                    "goal": self.goals[i].tolist(),
                    "pred": int(self.preds[i]),
                }
                fh.write(json.dumps(rec) + "\n")

    @classmethod
    def load(cls, path, n_actions: int) -> "PlanDataset":
        recs = [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
        if not recs:
            raise SynthError(f"{path}: empty dataset")
        lens = {len(r["actions"]) for r in recs}
        if len(lens) != 1:
            raise SynthError(f"{path}: mixed horizons {sorted(lens)}")
        return cls(
            np.array([r["start"] for r in recs]),
            np.array([r["goal"] for r in recs]),
            np.array([r["actions"] for r in recs]),
            np.array([r["task"] for r in recs]),
            n_actions,
            np.array([r.get("pred", -1) for r in recs]),
        )


def _roll(world: SyntheticWorld, task: int, length: int, rng) -> list | None:
    """Roll ``length`` actions from the task's chain head; None on hitting a sink."""
    W = world.task_matrices[task]
    a = world.task_chains[task][0]
    traj = [a]
    while len(traj) < length:
        row = W[a]
        if row.sum() == 0:
            return None
        a = int(rng.choice(len(row), p=row))
        traj.append(a)
    return traj


def sample_trajectories(world: SyntheticWorld, task: int, count: int, seed: int = 0) -> SequenceCorpus:
    """Full rollouts of one task from head to sink."""
    rng = np.random.default_rng(seed)
    seqs = []
    W = world.task_matrices[task]
    for _ in range(count):
        a = world.task_chains[task][0]
        traj = [a]
        while W[a].sum() > 0:
            a = int(rng.choice(world.n_actions, p=W[a]))
            traj.append(a)
        seqs.append(tuple(traj))
    return SequenceCorpus(tuple(seqs), world.taxonomy, tuple([task] * count))


def sample_instances(world: SyntheticWorld, per_task: int, horizon: int, seed: int = 0,
                     noise_sigma: float | None = None) -> PlanDataset:
    if horizon < 1:
        raise SynthError("horizon must be >= 1")
    sigma = world.noise_sigma if noise_sigma is None else noise_sigma
    rng = np.random.default_rng(seed)
    E = world.embed_dim
    starts, goals, plans, tasks, preds = [], [], [], [], []
    for k in range(world.n_tasks):
        for _ in range(per_task):
            for _attempt in range(MAX_RESAMPLE):
                offset = int(rng.integers(0, world.max_offset + 1))
                traj = _roll(world, k, offset + horizon, rng)
                if traj is not None:
                    break
            else:
                raise SynthError(f"task {k} has no path of length {horizon + world.max_offset}")
            plan = traj[offset:]
            pred = traj[offset - 1] if offset > 0 else -1
            base_s = world.prototypes[pred] if pred >= 0 else world.init_prototypes[k]
            starts.append(base_s + sigma * rng.standard_normal(E))
            goals.append(world.prototypes[plan[-1]] + sigma * rng.standard_normal(E))
            plans.append(plan)
            tasks.append(k)
            preds.append(pred)
    return PlanDataset(np.array(starts), np.array(goals), np.array(plans), np.array(tasks), world.n_actions,
                       np.array(preds))


def split(dataset: PlanDataset, train_frac: float, seed: int = 0) -> tuple[PlanDataset, PlanDataset]:
    """Stratified train/test split; the test side must be non-empty."""
    if not 0 < train_frac < 1:
        raise SynthError("train_frac must be in (0, 1) so that the test split is non-empty")
    train_idx, test_idx = [], []
    for k, idx in _stratified_orders(dataset, seed):
        n_train = int(round(train_frac * len(idx)))
        train_idx += idx[:n_train].tolist()
        test_idx += idx[n_train:].tolist()
    if not test_idx:
        raise SynthError("test split is empty")
    return dataset.subset(sorted(train_idx)), dataset.subset(sorted(test_idx))


def subsample(dataset: PlanDataset, frac: float, seed: int = 0) -> PlanDataset:
    """Stratified training subset; for a fixed seed smaller fractions are nested in larger ones."""
    if not 0 < frac <= 1:
        raise SynthError("frac must be in (0, 1]")
    keep = []
    for k, idx in _stratified_orders(dataset, seed):
        keep += idx[: max(1, int(round(frac * len(idx))))].tolist()
    return dataset.subset(sorted(keep))


def _stratified_orders(dataset, seed):
    rng = np.random.default_rng(seed)
    for k in np.unique(dataset.tasks):
        idx = np.flatnonzero(dataset.tasks == k)
        yield int(k), idx[rng.permutation(len(idx))]


def extract_subhorizon(dataset: PlanDataset, world: SyntheticWorld, horizon: int, seed: int = 0,
                       noise_sigma: float | None = None, window: bool = False) -> PlanDataset:
    """Shorter plans cut from longer ones, with the goal re-drawn for the new last action.

    Prefixes by default, so the start observation stays valid. ``window``
    picks a random contiguous window instead and rebuilds the start too.
    """
    T = dataset.horizon
    if not 1 <= horizon <= T:
        raise SynthError(f"sub-horizon {horizon} must be in [1, {T}]")
    sigma = world.noise_sigma if noise_sigma is None else noise_sigma
    rng = np.random.default_rng(seed)
    M, E = len(dataset), dataset.embed_dim
    offs = rng.integers(0, T - horizon + 1, size=M) if window else np.zeros(M, dtype=np.int64)
    plans = np.stack([dataset.plans[i, o : o + horizon] for i, o in enumerate(offs)])
    goals = world.prototypes[plans[:, -1]] + sigma * rng.standard_normal((M, E))
    starts = dataset.starts.copy()
    preds = dataset.preds.copy()
    if window:
        for i, o in enumerate(offs):
            if o > 0:
                preds[i] = dataset.plans[i, o - 1]
                starts[i] = world.prototypes[preds[i]] + sigma * rng.standard_normal(E)
    return PlanDataset(starts, goals, plans, dataset.tasks.copy(), dataset.n_actions, preds)


def oracle_success_rate(world: SyntheticWorld, horizon: int, noise_sigma: float, per_task: int = 50,
                        seed: int = 0) -> float:
    """SR of Viterbi with the true task transitions and Gaussian emissions from per-step observations.

    Every step t gets an observation prototype(a_t) + noise; this is the
    learnability ceiling of the world at a given noise level.
    """
    rng = np.random.default_rng(seed)
    data = sample_instances(world, per_task, horizon, seed=seed, noise_sigma=0.0)
    P = world.prototypes
    hits = 0
    for i in range(len(data)):
        plan = data.plans[i]
        obs = P[plan] + noise_sigma * rng.standard_normal((horizon, world.embed_dim))
        d2 = ((obs[:, None, :] - P[None, :, :]) ** 2).sum(-1)
        if noise_sigma == 0:
            log_b = np.where(d2 < 1e-12, 0.0, -1e9)
        else:
            log_b = -d2 / (2 * noise_sigma**2)
        W = world.task_matrices[data.tasks[i]]
        with np.errstate(divide="ignore"):
            log_w = np.where(W > 0, np.log(np.where(W > 0, W, 1.0)), -1e9)
        decoded, _ = viterbi_decode_log(log_w, log_b)
        hits += decoded.actions == tuple(plan.tolist())
    return 100.0 * hits / len(data)


def with_noise(world: SyntheticWorld, noise_sigma: float) -> SyntheticWorld:
    return replace(world, noise_sigma=noise_sigma, params={**world.params, "noise_sigma": noise_sigma})
