import pytest

from procplan.experiments import (
    BenchConfig,
    HorizonError,
    ablation_grid,
    cross_horizon_eval,
    evaluate_model,
    make_split,
    mean_by,
    pivot,
    sample_efficiency,
    write_rows,
)
from procplan.graph import build_graph
from procplan.model import MODES, TrainConfig, train
from procplan.synth import extract_subhorizon

SMALL = BenchConfig(n_train=60, n_test=30, seeds=(0, 1))
FAST = TrainConfig(epochs=3, log_every=0)


@pytest.fixture(scope="module")
def setup():
    bench = BenchConfig(n_train=60, n_test=30, horizon=5)
    world = bench.world()
    tr, te = make_split(world, bench, seed=0)
    graph = build_graph(tr.corpus())
    model, _ = train(tr, graph, FAST, descriptions=world.descriptions, n_tasks=world.n_tasks)
    return world, graph, model, te


class TestCrossHorizon:
    def test_equal_horizon_is_standard_eval(self, setup):
        world, graph, model, te = setup
        std = evaluate_model(model, graph, te, ["vd_on_dvl"])["vd_on_dvl"]
        assert cross_horizon_eval(model, graph, te, "vd_on_dvl").to_dict() == std.to_dict()

    @pytest.mark.parametrize("mode", MODES)
    def test_plan_length(self, setup, mode):
        world, graph, model, te = setup
        sub = extract_subhorizon(te, world, 3)
        rep = cross_horizon_eval(model, graph, sub, mode)
        assert rep.horizon == 3 and rep.n_instances == len(te)

    def test_longer_test_horizon_rejected(self, setup):
        world, graph, model, _ = setup
        bench = BenchConfig(n_train=30, n_test=30, horizon=6)
        _, longer = make_split(world, bench, seed=0)
        with pytest.raises(HorizonError):
            cross_horizon_eval(model, graph, longer)


class TestBench:
    def test_split_sizes(self):
        world = BenchConfig().world()
        tr, te = make_split(world, BenchConfig(), seed=0)
        assert abs(len(tr) - 500) <= world.n_tasks and abs(len(te) - 200) <= world.n_tasks

    def test_ablation_rows(self):
        rows = ablation_grid(BenchConfig(n_train=60, n_test=30, seeds=(0,)), FAST, configs=(1, 2, 8))
        assert [r["conf"] for r in rows] == [1, 2, 8]
        assert all(0 <= r["sr"] <= r["macc"] + 1e-12 <= 100 + 1e-12 for r in rows)

    def test_sample_efficiency_rows(self):
        rows = sample_efficiency(SMALL, FAST, fractions=(0.5, 1.0))
        assert len(rows) == 4
        n = pivot(rows, "fraction", "n_train")
        assert all(a < b for a, b in zip(n[0.5], n[1.0]))
        assert all(abs(r["gap"] - (r["dvl"] - r["base"])) < 1e-12 for r in rows)

    def test_deterministic(self):
        bench = BenchConfig(n_train=60, n_test=30, seeds=(3,))
        assert ablation_grid(bench, FAST, (8,)) == ablation_grid(bench, FAST, (8,))


def test_row_helpers(tmp_path):
    rows = [{"seed": 1, "k": "a", "v": 2.0}, {"seed": 0, "k": "a", "v": 4.0}, {"seed": 0, "k": "b", "v": 1.0}]
    assert pivot(rows, "k", "v") == {"a": [4.0, 2.0], "b": [1.0]}
    assert mean_by(rows, "k", "v") == {"a": 3.0, "b": 1.0}
    write_rows(rows, tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_text().splitlines()[0] == "seed,k,v"
    with pytest.raises(ValueError):
        write_rows([], tmp_path / "e.csv")
