import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from procplan.graph import ActionTaxonomy, TransitionMatrix
from procplan.viterbi import (
    DecodeError,
    beam_search,
    brute_force_best,
    brute_force_log_partition,
    exhaustive_constrained_path,
    path_log_score,
    viterbi_decode,
)


def make_graph(w):
    w = np.asarray(w, dtype=np.float64)
    return TransitionMatrix(w, ActionTaxonomy.of_size(len(w)))


def random_graph(rng, n, density=0.6):
    w = rng.random((n, n)) * (rng.random((n, n)) < density)
    s = w.sum(1, keepdims=True)
    return make_graph(np.divide(w, s, out=np.zeros_like(w), where=s > 0))


def random_emissions(rng, T, n, zeros=0.1):
    b = rng.random((T, n))
    b[rng.random((T, n)) < zeros] = 0.0
    return b


instances = st.tuples(st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**32 - 1))


class TestViterbi:
    def test_single_state(self):
        plan, _ = viterbi_decode(make_graph([[1.0]]), np.full((4, 1), 0.3))
        assert plan.actions == (0, 0, 0, 0)

    def test_hand_example(self):
        g = make_graph([[0, 1], [1, 0]])
        plan, _ = viterbi_decode(g, [[0.9, 0.1], [0.9, 0.1]])
        assert plan.actions == (1, 0)
        assert plan.log_score == pytest.approx(np.log(0.09), abs=1e-12)

    def test_trellis_shapes(self):
        rng = np.random.default_rng(0)
        plan, tr = viterbi_decode(random_graph(rng, 4), random_emissions(rng, 3, 4))
        assert tr.delta.shape == (3, 4) and tr.psi.shape == (3, 4)
        assert np.all((tr.psi >= 0) & (tr.psi < 4))
        assert len(plan) == 3

    def test_errors(self):
        g = make_graph([[0.5, 0.5], [1, 0]])
        with pytest.raises(DecodeError):
            viterbi_decode(g, np.zeros((0, 2)))
        with pytest.raises(DecodeError):
            viterbi_decode(g, np.ones((2, 3)))
        with pytest.raises(DecodeError):
            viterbi_decode(g, np.ones(2))

    def test_all_ties_pick_lowest_ids(self):
        g = make_graph(np.full((3, 3), 1 / 3))
        plan, _ = viterbi_decode(g, np.ones((4, 3)))
        assert plan.actions == (0, 0, 0, 0)

    @given(instances)
    @settings(max_examples=300, deadline=None)
    def test_matches_brute_force(self, inst):
        n, T, seed = inst
        rng = np.random.default_rng(seed)
        g = random_graph(rng, n)
        b = random_emissions(rng, T, n)
        plan, _ = viterbi_decode(g, b)
        oracle = brute_force_best(g, b)
        assert plan.actions == oracle.actions
        assert plan.log_score == oracle.log_score

    @given(instances)
    @settings(max_examples=150, deadline=None)
    def test_matches_brute_force_with_ties(self, inst):
        # quantized weights and emissions make exact ties common
        n, T, seed = inst
        rng = np.random.default_rng(seed)
        w = rng.integers(0, 3, (n, n)).astype(float)
        s = w.sum(1, keepdims=True)
        g = make_graph(np.divide(w, s, out=np.zeros_like(w), where=s > 0))
        b = rng.integers(0, 3, (T, n)) / 2.0
        assert viterbi_decode(g, b)[0].actions == brute_force_best(g, b).actions

    @given(instances)
    @settings(max_examples=100, deadline=None)
    def test_score_consistency(self, inst):
        n, T, seed = inst
        rng = np.random.default_rng(seed)
        g = random_graph(rng, n)
        b = random_emissions(rng, T, n)
        plan, _ = viterbi_decode(g, b)
        assert abs(path_log_score(g, b, plan.actions) - plan.log_score) <= 1e-9 * max(1.0, abs(plan.log_score))

    @given(instances)
    @settings(max_examples=100, deadline=None)
    def test_permutation_equivariance(self, inst):
        n, T, seed = inst
        rng = np.random.default_rng(seed)
        g = random_graph(rng, n, density=1.0)
        b = rng.random((T, n)) + 0.01
        perm = rng.permutation(n)
        # relabel: new id perm[k] plays the role of old id k
        inv = np.argsort(perm)
        gp = make_graph(g.weights[np.ix_(inv, inv)])
        plan = viterbi_decode(g, b)[0].actions
        plan_p = viterbi_decode(gp, b[:, inv])[0].actions
        assert tuple(perm[a] for a in plan) == plan_p

    @given(instances, st.floats(0.01, 100.0))
    @settings(max_examples=100, deadline=None)
    def test_scale_invariance(self, inst, c):
        n, T, seed = inst
        rng = np.random.default_rng(seed)
        g = random_graph(rng, n, density=1.0)
        b = rng.random((T, n)) * 0.5 + 0.01
        p1 = viterbi_decode(g, b)[0]
        p2 = viterbi_decode(g, b * min(c, 1.0 / b.max()))[0]
        assert p1.actions == p2.actions


class TestBruteForce:
    def test_single_state(self):
        assert brute_force_best(make_graph([[1.0]]), np.ones((3, 1))).actions == (0, 0, 0)

    def test_guard(self):
        g = make_graph(np.full((20, 20), 0.05))
        with pytest.raises(DecodeError):
            brute_force_best(g, np.ones((6, 20)))

    def test_log_partition_small(self):
        g = make_graph([[0.5, 0.5], [0.2, 0.8]])
        b = np.array([[0.3, 0.7], [0.6, 0.4]])
        total = sum(b[0, i] * g.weights[i, j] * b[1, j] for i in range(2) for j in range(2))
        assert brute_force_log_partition(g, b) == pytest.approx(np.log(total), abs=1e-12)


class TestBeamSearch:
    def test_chain(self):
        g = make_graph([[0, 1, 0], [0, 0, 1], [0, 0, 0]])
        plan = beam_search(g, 0, 2, 3, beam_width=2)
        assert plan.actions == (0, 1, 2) and plan.feasible and plan.reached_end

    def test_sink_start_flagged(self):
        g = make_graph([[0, 1], [0, 0]])
        plan = beam_search(g, 1, 0, 3)
        assert not plan.feasible and len(plan) == 3

    def test_prefers_end_action(self):
        # 0->1 is likelier than 0->2, but the requested end is 2
        g = make_graph([[0, 0.9, 0.1], [1, 0, 0], [1, 0, 0]])
        plan = beam_search(g, 0, 2, 2, beam_width=5)
        assert plan.actions == (0, 2) and plan.reached_end

    def test_unreachable_end_is_flagged(self):
        g = make_graph([[0, 1, 0], [1, 0, 0], [0, 0, 1]])
        plan = beam_search(g, 0, 2, 3)
        assert plan.feasible and not plan.reached_end

    def test_errors(self):
        g = make_graph([[1.0]])
        with pytest.raises(DecodeError):
            beam_search(g, 0, 0, 2, beam_width=0)
        with pytest.raises(DecodeError):
            beam_search(g, 1, 0, 2)

    @given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**32 - 1))
    @settings(max_examples=150, deadline=None)
    def test_wide_beam_equals_exhaustive(self, n, T, seed):
        rng = np.random.default_rng(seed)
        g = random_graph(rng, n, density=0.5)
        s, e = rng.integers(0, n, 2)
        got = beam_search(g, int(s), int(e), T, beam_width=n**T)
        want = exhaustive_constrained_path(g, int(s), int(e), T)
        assert got.actions == want.actions
        assert (got.feasible, got.reached_end) == (want.feasible, want.reached_end)
