"""Evaluation harness and benchmark sweeps on synthetic worlds.

Every sweep returns plain rows (lists of dicts) so callers can print them,
dump them to CSV or run bootstrap comparisons over the per-seed scores.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, replace

import numpy as np

from .graph import TransitionMatrix, build_graph, corrupt_graph
from .metrics import EvalReport, evaluate_plans
from .model import MODE_ALIASES, MODES, TABLE_CONFIGS, PlanModel, TrainConfig, infer_plans, train
from .synth import PlanDataset, SyntheticWorld, extract_subhorizon, generate_world, sample_instances, split, subsample

log = logging.getLogger(__name__)

FRACTIONS = (0.05, 0.10, 0.25, 0.50, 1.0)
DROPOUTS = (0.0, 0.1, 0.3, 0.5)
SUB_HORIZONS = (3, 4, 5)


class HorizonError(ValueError):
    pass


def evaluate_model(model: PlanModel, graph: TransitionMatrix, dataset: PlanDataset, modes=None,
                   beam_width: int = 10) -> dict[str, EvalReport]:
    """EvalReport per inference mode on ``dataset``."""
    modes = modes or MODES
    out = {}
    for mode in modes:
        canon = MODE_ALIASES.get(mode, mode)
        preds = infer_plans(model, graph, dataset.starts, dataset.goals, canon, horizon=dataset.horizon,
                            beam_width=beam_width)
        out[mode] = evaluate_plans(preds, dataset.plans, canon)
    return out


def cross_horizon_eval(model: PlanModel, graph: TransitionMatrix, dataset: PlanDataset, mode: str | None = None,
                       beam_width: int = 10) -> EvalReport:
    """Evaluate a model on plans no longer than its training horizon.

    The emission net is queried only for the first ``dataset.horizon`` step
    positions. Equal horizons reduce to the standard evaluation.
    """
    t_train = model.net.cfg.horizon
    t_test = dataset.horizon
    if t_test > t_train:
        raise HorizonError(f"test horizon {t_test} exceeds the training horizon {t_train}")
    preds = infer_plans(model, graph, dataset.starts, dataset.goals, mode, horizon=t_test, beam_width=beam_width)
    return evaluate_plans(preds, dataset.plans, mode or "")


# -- benchmark setup ------------------------------------------------------------------


@dataclass
class BenchConfig:
    """Synthetic benchmark defaults shared by the sweeps and the CLI."""

    n_actions: int = 24
    n_tasks: int = 6
    embed_dim: int = 32
    branching: float = 1.5
    chain_length: int = 10
    noise_sigma: float = 0.3
    max_offset: int = 2
    world_seed: int = 0
    n_train: int = 500
    n_test: int = 200
    horizon: int = 3
    seeds: tuple = (0, 1, 2, 3, 4)

    def world(self) -> SyntheticWorld:
        return generate_world(self.n_actions, self.n_tasks, self.embed_dim, self.branching, self.world_seed,
                              self.chain_length, self.noise_sigma, self.max_offset)

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["seeds"] = list(self.seeds)
        return d


def make_split(world: SyntheticWorld, bench: BenchConfig, seed: int, horizon: int | None = None):
    """Stratified train/test split with about ``n_train`` / ``n_test`` instances."""
    T = horizon or bench.horizon
    total = bench.n_train + bench.n_test
    per_task = -(-total // world.n_tasks)
    data = sample_instances(world, per_task, T, seed=1000 + seed)
    return split(data, bench.n_train / (per_task * world.n_tasks), seed=seed)


def _train(train_set, graph, world, cfg: TrainConfig, train_dvl: bool, seed: int):
    c = replace(cfg, train_dvl=train_dvl, seed=seed)
    model, _ = train(train_set, graph, c, descriptions=world.descriptions, n_tasks=world.n_tasks)
    return model


def _sr(model, graph, data, mode):
    return cross_horizon_eval(model, graph, data, mode).sr


def ablation_grid(bench: BenchConfig, cfg: TrainConfig, configs=tuple(TABLE_CONFIGS)) -> list[dict]:
    """One row per (seed, configuration): the DVL x VD grid."""
    world = bench.world()
    rows = []
    for seed in bench.seeds:
        tr, te = make_split(world, bench, seed)
        graph = build_graph(tr.corpus())
        for dvl in (False, True):
            wanted = [c for c in configs if TABLE_CONFIGS[c][0] == dvl]
            if not wanted:
                continue
            model = _train(tr, graph, world, cfg, dvl, seed)
            for c in wanted:
                rep = evaluate_model(model, graph, te, [TABLE_CONFIGS[c][1]])[TABLE_CONFIGS[c][1]]
                rows.append({"seed": seed, "conf": c, "train_dvl": dvl, "mode": rep.mode, "sr": rep.sr,
                             "macc": rep.macc, "miou_set": rep.miou_set, "miou_mask": rep.miou_mask})
                log.info("seed %d conf %d SR %.2f", seed, c, rep.sr)
    return rows


def sample_efficiency(bench: BenchConfig, cfg: TrainConfig, fractions=FRACTIONS) -> list[dict]:
    """SR of the base model (conf. 1) and the DVL model (conf. 8) on nested training fractions."""
    world = bench.world()
    rows = []
    for seed in bench.seeds:
        tr, te = make_split(world, bench, seed)
        # the graph always comes from the full training corpus
        graph = build_graph(tr.corpus())
        for frac in fractions:
            sub = subsample(tr, frac, seed=seed)
            row = {"seed": seed, "fraction": frac, "n_train": len(sub)}
            for name, conf in (("base", 1), ("dvl", 8)):
                dvl, mode = TABLE_CONFIGS[conf]
                row[name] = _sr(_train(sub, graph, world, cfg, dvl, seed), graph, te, mode)
            row["gap"] = row["dvl"] - row["base"]
            rows.append(row)
            log.info("seed %d fraction %.2f base %.2f dvl %.2f", seed, frac, row["base"], row["dvl"])
    return rows


def cross_horizon(bench: BenchConfig, cfg: TrainConfig, train_horizon: int = 6,
                  test_horizons=SUB_HORIZONS) -> list[dict]:
    """Train at ``train_horizon``; SR at each shorter horizon for conf. 1 and conf. 8."""
    world = bench.world()
    rows = []
    for seed in bench.seeds:
        tr, te = make_split(world, bench, seed, horizon=train_horizon)
        graph = build_graph(tr.corpus())
        models = {name: _train(tr, graph, world, cfg, TABLE_CONFIGS[c][0], seed)
                  for name, c in (("base", 1), ("dvl", 8))}
        for t in test_horizons:
            sub = extract_subhorizon(te, world, t, seed=seed)
            row = {"seed": seed, "train_horizon": train_horizon, "test_horizon": t}
            for name, c in (("base", 1), ("dvl", 8)):
                row[name] = _sr(models[name], graph, sub, TABLE_CONFIGS[c][1])
            rows.append(row)
            log.info("seed %d %d->%d base %.2f dvl %.2f", seed, train_horizon, t, row["base"], row["dvl"])
    return rows


def pkg_robustness(bench: BenchConfig, cfg: TrainConfig, dropouts=DROPOUTS, weight_noise: float = 0.0) -> list[dict]:
    """SR of DVL models trained and decoded with a corrupted graph."""
    world = bench.world()
    rows = []
    for seed in bench.seeds:
        tr, te = make_split(world, bench, seed)
        clean = build_graph(tr.corpus())
        for p in dropouts:
            graph = corrupt_graph(clean, p, weight_noise, rng_seed=seed)
            model = _train(tr, graph, world, cfg, True, seed)
            sr = _sr(model, graph, te, TABLE_CONFIGS[8][1])
            rows.append({"seed": seed, "dropout": p, "n_edges": graph.n_edges, "sr": sr})
            log.info("seed %d dropout %.2f SR %.2f", seed, p, sr)
    return rows


def pivot(rows: list[dict], key: str, value: str) -> dict:
    """Group ``value`` by ``key`` into lists ordered by seed."""
    out: dict = {}
    for r in sorted(rows, key=lambda r: r["seed"]):
        out.setdefault(r[key], []).append(r[value])
    return out


def write_rows(rows: list[dict], path) -> None:
    if not rows:
        raise ValueError("no rows to write")
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


def mean_by(rows: list[dict], key: str, value: str) -> dict:
    return {k: float(np.mean(v)) for k, v in pivot(rows, key, value).items()}
