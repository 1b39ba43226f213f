"""Command-line entry point: ``procplan <command> [options]``.

Options resolve as defaults < ``--config`` JSON file < ``PROCPLAN_<OPTION>``
environment variables < command-line flags. The resolved configuration is
written next to every artifact. Exit codes: 0 success, 1 usage error,
2 data or validation error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import experiments as ex
from .graph import GraphError, build_graph, corrupt_graph, coverage, graph_to_dict, load_graph, read_corpus
from .metrics import bootstrap_compare, bootstrap_single, dump_json, evaluate_plans, format_table
from .model import (
    TABLE_CONFIGS,
    TrainConfig,
    TrainingDiverged,
    infer_plans,
    load_checkpoint,
    save_checkpoint,
    train,
    write_training_log,
)
from .synth import PlanDataset, SynthError, SyntheticWorld, generate_world, sample_instances, split
from .viterbi import DecodeError

log = logging.getLogger("procplan")

ENV_PREFIX = "PROCPLAN_"
OUT_ENV = "PROCPLAN_OUT"
DEFAULT_OUT = "runs"

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class Opt:
    name: str
    type: type
    default: object
    help: str = ""
    nargs: str | None = None
    choices: tuple | None = None


def _bool(s) -> bool:
    if isinstance(s, bool):
        return s
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


WORLD_OPTS = [
    Opt("n_actions", int, 24, "action vocabulary size"),
    Opt("n_tasks", int, 6, "number of tasks"),
    Opt("embed_dim", int, 32, "observation dimension"),
    Opt("branching", float, 1.5, "expected out-degree of a chain node"),
    Opt("chain_length", int, 10, "actions per task chain"),
    Opt("noise", float, 0.3, "observation noise sigma"),
    Opt("max_offset", int, 2, "largest offset of a plan from the chain head"),
    Opt("world_seed", int, 0, "seed of the world"),
]

TRAIN_OPTS = [
    Opt("train_dvl", _bool, True, "train through the differentiable Viterbi layer (on/off)"),
    Opt("epochs", int, 200, "training epochs"),
    Opt("lr", float, 9e-3, "Adam learning rate"),
    Opt("dropout", float, 0.2, "hidden-layer dropout"),
    Opt("batch_size", int, 256, "minibatch size"),
    Opt("temperature", float, 1.0, "smoothing temperature"),
    Opt("hidden", int, 128, "hidden width"),
    Opt("attention", _bool, False, "add a self-attention block over step tokens"),
    Opt("use_plan", _bool, True, "plan loss switch"),
    Opt("use_align", _bool, True, "alignment loss switch"),
    Opt("use_task", _bool, True, "task loss switch"),
]

SEEDS = Opt("seeds", int, [0], "seeds to run", nargs="+")

COMMANDS: dict[str, list[Opt]] = {
    "synth": WORLD_OPTS + [
        Opt("horizons", int, [3], "plan horizons to generate", nargs="+"),
        Opt("n_train", int, 500, "training instances per horizon"),
        Opt("n_test", int, 200, "test instances per horizon"),
        Opt("seed", int, 0, "sampling seed"),
    ],
    "pkg build": [
        Opt("corpus", str, None, "JSONL corpus with an 'actions' field"),
        Opt("n_actions", int, None, "vocabulary size (default: max id + 1)"),
        Opt("smoothing", float, 0.0, "Laplace smoothing of observed rows"),
    ],
    "pkg coverage": [
        Opt("graph", str, None, "graph JSON"),
        Opt("corpus", str, None, "JSONL corpus"),
    ],
    "pkg corrupt": [
        Opt("graph", str, None, "graph JSON"),
        Opt("corpus", str, None, "corpus for the coverage column (optional)"),
        Opt("dropouts", float, [0.0, 0.1, 0.3, 0.5], "edge dropout grid", nargs="+"),
        Opt("weight_noise", float, 0.0, "Gaussian weight noise sigma"),
        Opt("seed", int, 0, "corruption seed"),
    ],
    "train": [
        Opt("data", str, None, "training JSONL"),
        Opt("graph", str, None, "graph JSON (default: built from the training data)"),
        Opt("world", str, None, "world JSON supplying description vectors"),
        SEEDS,
    ] + TRAIN_OPTS,
    "eval": [
        Opt("checkpoints", str, None, "checkpoint files", nargs="+"),
        Opt("graph", str, None, "graph JSON"),
        Opt("data", str, None, "test JSONL"),
        Opt("confs", int, [], "ablation configurations to report (default: all available)", nargs="*"),
        Opt("compare", int, [], "two configurations to compare with a bootstrap test", nargs="*"),
        Opt("beam_width", int, 10, "beam width for the graph-only baseline"),
    ],
    "decode": [
        Opt("checkpoint", str, None, "checkpoint file"),
        Opt("graph", str, None, "graph JSON"),
        Opt("data", str, None, "JSONL with start/goal"),
        Opt("mode", str, "", "inference mode (default: the model's own)"),
        Opt("horizon", int, 0, "plan length (default: trained horizon)"),
        Opt("beam_width", int, 10, "beam width for pkg_beam"),
    ],
    "bench": WORLD_OPTS + [
        Opt("n_train", int, 500, "training instances"),
        Opt("n_test", int, 200, "test instances"),
        Opt("horizon", int, 3, "plan horizon"),
        SEEDS,
        Opt("fractions", float, list(ex.FRACTIONS), "training fractions", nargs="+"),
        Opt("dropouts", float, list(ex.DROPOUTS), "edge dropout grid", nargs="+"),
        Opt("train_horizon", int, 6, "training horizon of the cross-horizon sweep"),
        Opt("test_horizons", int, list(ex.SUB_HORIZONS), "evaluation horizons", nargs="+"),
    ] + TRAIN_OPTS,
}

BENCHES = ("sample-efficiency", "cross-horizon", "pkg-robustness", "ablation")


# -- parsing and config resolution --------------------------------------------------


def _add_opts(p: argparse.ArgumentParser, opts: list[Opt]) -> None:
    for o in opts:
        flag = "--" + o.name.replace("_", "-")
        kw = dict(dest=o.name, default=argparse.SUPPRESS, help=f"{o.help} (default: {o.default})")
        if o.nargs:
            kw["nargs"] = o.nargs
        if o.choices:
            kw["choices"] = o.choices
        p.add_argument(flag, type=o.type, **kw)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of option values")
    common.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or ./{DEFAULT_OUT})")
    common.add_argument("--threads", type=int, default=None, help="BLAS thread limit; 1 forces serial runs")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="procplan", description="Structure-aware procedure planning on synthetic data.")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("synth", parents=[common], help="generate a world and train/test datasets")
    _add_opts(s, COMMANDS["synth"])
    pk = sub.add_parser("pkg", help="build, inspect or corrupt a transition graph")
    pks = pk.add_subparsers(dest="action", required=True)
    for action in ("build", "coverage", "corrupt"):
        _add_opts(pks.add_parser(action, parents=[common]), COMMANDS[f"pkg {action}"])
    for name, help_ in (("train", "train emission models, one checkpoint per seed"),
                        ("eval", "evaluate checkpoints over the ablation grid"),
                        ("decode", "print plans for instances")):
        _add_opts(sub.add_parser(name, parents=[common], help=help_), COMMANDS[name])
    b = sub.add_parser("bench", parents=[common], help="run a benchmark sweep")
    b.add_argument("sweep", choices=BENCHES)
    _add_opts(b, COMMANDS["bench"])
    return p


def _command_key(ns) -> str:
    return f"pkg {ns.action}" if ns.command == "pkg" else ns.command


def _coerce(o: Opt, value, source: str):
    try:
        if o.nargs:
            items = value if isinstance(value, list) else str(value).replace(",", " ").split()
            return [o.type(v) for v in items]
        return None if value is None else o.type(value)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"{source}: bad value for {o.name}: {value!r}") from exc


def resolve_config(ns, environ=None) -> dict:
    """Merge defaults, config file, environment and flags; unknown file keys are rejected."""
    environ = os.environ if environ is None else environ
    key = _command_key(ns)
    opts = {o.name: o for o in COMMANDS[key]}
    cfg = {k: (list(o.default) if isinstance(o.default, list) else o.default) for k, o in opts.items()}
    if ns.config:
        try:
            data = json.loads(Path(ns.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config file {ns.config}: {exc}") from exc
        if not isinstance(data, dict):
            raise UsageError(f"{ns.config}: expected a JSON object")
        unknown = sorted(set(data) - set(opts))
        if unknown:
            raise UsageError(f"{ns.config}: unknown keys for '{key}': {', '.join(unknown)}")
        for k, v in data.items():
            cfg[k] = _coerce(opts[k], v, ns.config)
    for k, o in opts.items():
        env = ENV_PREFIX + k.upper()
        if env in environ:
            cfg[k] = _coerce(o, environ[env], env)
    for k in opts:
        if hasattr(ns, k):
            cfg[k] = getattr(ns, k)
    cfg["command"] = key
    if key == "bench":
        cfg["sweep"] = ns.sweep
    cfg["out"] = str(ns.out or environ.get(OUT_ENV) or DEFAULT_OUT)
    return cfg


def _require(cfg, *names):
    missing = [n for n in names if not cfg.get(n)]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + n.replace("_", "-") for n in missing))


def _train_config(cfg) -> TrainConfig:
    keys = [o.name for o in TRAIN_OPTS]
    return TrainConfig(**{k: cfg[k] for k in keys})


def _world_from(cfg) -> SyntheticWorld:
    return generate_world(cfg["n_actions"], cfg["n_tasks"], cfg["embed_dim"], cfg["branching"], cfg["world_seed"],
                          cfg["chain_length"], cfg["noise"], cfg["max_offset"])


def _out_dir(cfg) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_config(out: Path, name: str, cfg: dict) -> None:
    (out / name).write_text(json.dumps(cfg, indent=2))


def _load_data(path, n_actions) -> PlanDataset:
    return PlanDataset.load(path, n_actions)


# -- commands -----------------------------------------------------------------------


def cmd_synth(cfg) -> int:
    out = _out_dir(cfg)
    world = _world_from(cfg)
    world.save(out / "world.json")
    files = {"world": "world.json"}
    for T in cfg["horizons"]:
        total = cfg["n_train"] + cfg["n_test"]
        per_task = -(-total // world.n_tasks)
        data = sample_instances(world, per_task, T, seed=cfg["seed"] * 1000 + T)
        tr, te = split(data, cfg["n_train"] / len(data), seed=cfg["seed"])
        for name, part in (("train", tr), ("test", te)):
            fname = f"{name}_T{T}.jsonl"
            part.save(out / fname)
            files[f"{name}_T{T}"] = fname
            print(f"wrote {out / fname} ({len(part)} instances)")
    _write_config(out, "synth_config.json", {**cfg, "files": files})
    return EXIT_OK


def cmd_pkg(cfg) -> int:
    out = _out_dir(cfg)
    action = cfg["command"].split()[1]
    if action == "build":
        _require(cfg, "corpus")
        corpus = read_corpus(cfg["corpus"], n_actions=cfg["n_actions"])
        graph = build_graph(corpus, cfg["smoothing"])
        path = out / "graph.json"
        path.write_text(json.dumps({**graph_to_dict(graph), "config": cfg}))
        print(f"wrote {path}: {graph.n} actions, {graph.n_edges} edges, {len(graph.sink_rows)} sink rows")
        return EXIT_OK
    _require(cfg, "graph")
    graph = load_graph(cfg["graph"])
    if action == "coverage":
        _require(cfg, "corpus")
        cov = coverage(graph, read_corpus(cfg["corpus"], n_actions=graph.n))
        dump_json({"coverage": cov, "n_edges": graph.n_edges}, out / "coverage.json", cfg)
        print(f"coverage {100 * cov:.2f}%")
        return EXIT_OK
    corpus = read_corpus(cfg["corpus"], n_actions=graph.n) if cfg["corpus"] else None
    rows = []
    for p in cfg["dropouts"]:
        g = corrupt_graph(graph, p, cfg["weight_noise"], cfg["seed"])
        tag = f"graph_dropout{p:g}.json"
        (out / tag).write_text(json.dumps({**graph_to_dict(g), "config": {**cfg, "dropout": p}}))
        row = {"dropout": p, "weight_noise": cfg["weight_noise"], "n_edges": g.n_edges, "file": tag}
        if corpus is not None:
            row["coverage"] = coverage(g, corpus)
        rows.append(row)
    ex.write_rows(rows, out / "corrupt.csv")
    _write_config(out, "corrupt_config.json", cfg)
    print(format_table(list(rows[0]), [list(r.values()) for r in rows]))
    return EXIT_OK


def cmd_train(cfg) -> int:
    _require(cfg, "data")
    out = _out_dir(cfg)
    world = SyntheticWorld.load(cfg["world"]) if cfg["world"] else None
    if world is not None:
        data = _load_data(cfg["data"], world.n_actions)
    else:
        corpus = read_corpus(cfg["data"])
        data = _load_data(cfg["data"], corpus.taxonomy.size)
    graph = load_graph(cfg["graph"], data.n_actions) if cfg["graph"] else build_graph(data.corpus())
    descs = world.descriptions if world is not None else None
    n_tasks = world.n_tasks if world is not None else None
    tag = "dvl" if cfg["train_dvl"] else "base"
    for seed in cfg["seeds"]:
        tcfg = replace(_train_config(cfg), seed=seed)
        try:
            model, history = train(data, graph, tcfg, descriptions=descs, n_tasks=n_tasks, snapshot_dir=out)
        except TrainingDiverged as exc:
            print(f"error: {exc}; snapshot: {exc.snapshot}", file=sys.stderr)
            return EXIT_NUMERIC
        ck = out / f"{tag}_seed{seed}.ckpt.json"
        save_checkpoint(model, ck, {**cfg, "seed": seed})
        write_training_log(history, out / f"{tag}_seed{seed}.log.csv")
        last = history[-1]
        sr = "" if last.train_sr is None else f", train SR {last.train_sr:.2f}"
        print(f"seed {seed}: loss {last.loss:.4f}{sr} -> {ck}")
    _write_config(out, f"train_{tag}_config.json", cfg)
    return EXIT_OK


def cmd_eval(cfg) -> int:
    _require(cfg, "checkpoints", "graph", "data")
    out = _out_dir(cfg)
    per_conf: dict[int, dict[int, float]] = {}
    per_seed = []
    graph = None
    data = None
    for path in cfg["checkpoints"]:
        model = load_checkpoint(path)
        if graph is None:
            graph = load_graph(cfg["graph"], model.net.cfg.n_actions)
            data = _load_data(cfg["data"], graph.n)
        seed = int(model.train_cfg.seed)
        for conf, (dvl, mode) in TABLE_CONFIGS.items():
            if dvl != model.trained_with_dvl or (cfg["confs"] and conf not in cfg["confs"]):
                continue
            preds = infer_plans(model, graph, data.starts, data.goals, mode, horizon=data.horizon,
                                beam_width=cfg["beam_width"])
            rep = evaluate_plans(preds, data.plans, mode)
            per_conf.setdefault(conf, {})[seed] = rep.sr
            per_seed.append({"checkpoint": str(path), "seed": seed, "conf": conf, **rep.to_dict()})
    if not per_seed:
        raise UsageError("no checkpoint matches the requested configurations")
    agg = []
    for conf in sorted(per_conf):
        srs = [per_conf[conf][s] for s in sorted(per_conf[conf])]
        if len(srs) >= 2:
            bs = bootstrap_single(srs, k=100)
            agg.append({"conf": conf, "mode": TABLE_CONFIGS[conf][1], "n_seeds": len(srs), "sr": bs.mean,
                        "ci_low": bs.ci_low, "ci_high": bs.ci_high})
        else:
            agg.append({"conf": conf, "mode": TABLE_CONFIGS[conf][1], "n_seeds": 1, "sr": srs[0],
                        "ci_low": None, "ci_high": None})
    result = {"per_seed": per_seed, "aggregate": agg}
    if cfg["compare"]:
        if len(cfg["compare"]) != 2:
            raise UsageError("--compare takes exactly two configurations")
        a, b = cfg["compare"]
        if a not in per_conf or b not in per_conf:
            raise UsageError(f"configurations {a} and {b} need matching checkpoints")
        cmp_ = bootstrap_compare(list(per_conf[a].values()), list(per_conf[b].values()), k=1000)
        result["compare"] = {"a": a, "b": b, **cmp_.to_dict()}
        print(f"conf {a} - conf {b}: {cmp_}")
    dump_json(result, out / "eval.json", cfg)
    ex.write_rows(per_seed, out / "eval_per_seed.csv")
    rows = [[r["conf"], r["mode"], r["n_seeds"], f"{r['sr']:.2f}",
             "" if r["ci_low"] is None else f"[{r['ci_low']:.2f}, {r['ci_high']:.2f}]"] for r in agg]
    print(format_table(["conf", "mode", "seeds", "SR", "90% CI"], rows))
    return EXIT_OK


def cmd_decode(cfg) -> int:
    _require(cfg, "checkpoint", "graph", "data")
    out = _out_dir(cfg)
    model = load_checkpoint(cfg["checkpoint"])
    graph = load_graph(cfg["graph"], model.net.cfg.n_actions)
    data = _load_data(cfg["data"], graph.n)
    horizon = cfg["horizon"] or None
    preds = infer_plans(model, graph, data.starts, data.goals, cfg["mode"] or None, horizon=horizon,
                        beam_width=cfg["beam_width"])
    names = graph.taxonomy.names
    with open(out / "plans.jsonl", "w") as fh:
        for i, p in enumerate(preds):
            rec = {"index": i, "plan": p.tolist(), "names": [names[a] for a in p]}
            fh.write(json.dumps(rec) + "\n")
            print(" -> ".join(rec["names"]))
    _write_config(out, "decode_config.json", cfg)
    return EXIT_OK


def cmd_bench(cfg) -> int:
    out = _out_dir(cfg)
    bench = ex.BenchConfig(cfg["n_actions"], cfg["n_tasks"], cfg["embed_dim"], cfg["branching"],
                           cfg["chain_length"], cfg["noise"], cfg["max_offset"], cfg["world_seed"],
                           cfg["n_train"], cfg["n_test"], cfg["horizon"], tuple(cfg["seeds"]))
    tcfg = replace(_train_config(cfg), log_every=0)
    sweep = cfg["sweep"]
    if sweep == "sample-efficiency":
        rows = ex.sample_efficiency(bench, tcfg, cfg["fractions"])
        summary = {f: {"base": np.mean(v["base"]), "dvl": np.mean(v["dvl"])}
                   for f, v in _group(rows, "fraction", ("base", "dvl")).items()}
    elif sweep == "cross-horizon":
        rows = ex.cross_horizon(bench, tcfg, cfg["train_horizon"], cfg["test_horizons"])
        summary = {f"SR[{cfg['train_horizon']}->{t}]": {"base": np.mean(v["base"]), "dvl": np.mean(v["dvl"])}
                   for t, v in _group(rows, "test_horizon", ("base", "dvl")).items()}
    elif sweep == "pkg-robustness":
        rows = ex.pkg_robustness(bench, tcfg, cfg["dropouts"])
        summary = {p: {"sr": np.mean(v["sr"])} for p, v in _group(rows, "dropout", ("sr",)).items()}
    else:
        rows = ex.ablation_grid(bench, tcfg)
        summary = {c: {"sr": np.mean(v["sr"])} for c, v in _group(rows, "conf", ("sr",)).items()}
    name = sweep.replace("-", "_")
    ex.write_rows(rows, out / f"{name}.csv")
    dump_json({"rows": rows, "summary": {str(k): v for k, v in summary.items()}}, out / f"{name}.json", cfg)
    cols = list(next(iter(summary.values())))
    print(format_table([sweep] + cols, [[k] + [f"{v[c]:.2f}" for c in cols] for k, v in summary.items()]))
    return EXIT_OK


def _group(rows, key, values):
    out: dict = {}
    for r in rows:
        g = out.setdefault(r[key], {v: [] for v in values})
        for v in values:
            g[v].append(r[v])
    return out


HANDLERS = {"synth": cmd_synth, "pkg": cmd_pkg, "train": cmd_train, "eval": cmd_eval, "decode": cmd_decode,
            "bench": cmd_bench}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on bad usage; this tool reserves 2 for data errors
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(ns.verbose, 2), format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(ns)
        with threadpool_limits(limits=ns.threads):
            return HANDLERS[ns.command](cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDiverged, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (GraphError, SynthError, DecodeError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
