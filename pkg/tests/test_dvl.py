import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import (
    dense_graph,
    dvl_fd_check,
    make_graph,
    path_marginals,
    path_total,
    random_dvl_instance,
    random_graph,
    relative_error,
)

from procplan.dvl import (
    SmoothConfig,
    compose_soft_plan,
    dvl_backward,
    dvl_backward_emissions,
    dvl_forward,
    dvl_forward_log,
    s_argmax,
    s_max,
    soft_plan,
)
from procplan.viterbi import viterbi_decode

vectors = st.lists(st.floats(-50, 50), min_size=1, max_size=8).map(np.array)


class TestSmoothOps:
    def test_single_element(self):
        for tau in (1e-6, 0.3, 1.0, 7.0):
            assert s_max([2.5], tau) == 2.5
            assert s_argmax([2.5], tau).tolist() == [1.0]

    def test_log_two(self):
        assert s_max([0.0, 0.0]) == pytest.approx(np.log(2), abs=1e-15)
        assert s_argmax([0.0, 0.0]).tolist() == [0.5, 0.5]

    def test_huge_inputs_stable(self):
        x = np.array([-1e9, 0.0, -1e9 + 1])
        assert np.isfinite(s_max(x)) and s_max(x) == pytest.approx(0.0, abs=1e-12)

    @given(vectors)
    @settings(max_examples=100, deadline=None)
    def test_hard_limit(self, x):
        assert abs(s_max(x, 1e-6) - x.max()) < 1e-5

    @given(vectors, st.floats(0.1, 5.0))
    @settings(max_examples=100, deadline=None)
    def test_argmax_sums_to_one(self, x, tau):
        assert abs(s_argmax(x, tau).sum() - 1) < 1e-12

    def test_gradient_duality(self):
        rng = np.random.default_rng(0)
        h = 1e-6
        for _ in range(50):
            x = rng.normal(0, 3, rng.integers(1, 8))
            tau = rng.uniform(0.2, 3)
            fd = np.array([(s_max(x + h * e, tau) - s_max(x - h * e, tau)) / (2 * h) for e in np.eye(len(x))])
            np.testing.assert_allclose(fd, s_argmax(x, tau), atol=1e-8)

    def test_temperature_validated(self):
        with pytest.raises(ValueError):
            SmoothConfig(temperature=0.0)
        with pytest.raises(ValueError):
            SmoothConfig(log_floor=1.0)


class TestForward:
    def test_single_state(self):
        b = np.array([[0.5], [0.25], [0.8]])
        tr = dvl_forward(make_graph([[1.0]]), b)
        np.testing.assert_allclose(tr.log_delta[:, 0], np.cumsum(np.log(b[:, 0])), atol=1e-14)
        assert np.all(tr.soft_psi[1:] == 1.0)
        assert np.all(compose_soft_plan(tr) == 1.0)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            dvl_forward(make_graph([[1.0]]), np.ones((2, 3)))

    def test_forward_identity(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            n, T = rng.integers(1, 5, 2)
            g = random_graph(rng, n)
            b = rng.uniform(0.01, 1, (T, n))
            tr = dvl_forward(g, b)
            total = path_total(g, b)
            if total > 0:
                assert abs(tr.log_partition() - np.log(total)) < 1e-9

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=100, deadline=None)
    def test_stochastic_rows(self, seed):
        rng = np.random.default_rng(seed)
        n, T = rng.integers(1, 7, 2)
        g = random_graph(rng, n, density=0.4)
        b = rng.random((T, n))
        b[rng.random((T, n)) < 0.2] = 0
        tr = dvl_forward(g, b, SmoothConfig(float(rng.uniform(0.1, 3))))
        P = compose_soft_plan(tr)
        assert np.all(np.abs(tr.soft_psi[1:].sum(-1) - 1) < 1e-7)
        assert np.all(np.abs(P.sum(-1) - 1) < 1e-7)
        assert np.all(np.isfinite(tr.log_delta))

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=60, deadline=None)
    def test_soft_plan_is_posterior_marginal(self, seed):
        rng = np.random.default_rng(seed)
        n, T = rng.integers(1, 5, 2)
        g = dense_graph(rng, n)
        b = rng.uniform(0.05, 1, (T, n))
        np.testing.assert_allclose(soft_plan(g, b), path_marginals(g, b), atol=1e-10)

    def test_chain_with_sharp_emissions(self):
        n = 5
        w = np.zeros((n, n))
        w[np.arange(n - 1), np.arange(1, n)] = 1.0
        w[n - 1, 0] = 1.0
        path = [1, 2, 3, 4]
        b = np.full((4, n), 0.01)
        b[np.arange(4), path] = 0.99
        P = soft_plan(make_graph(w), b)
        assert np.all(P[np.arange(4), path] >= 0.99)

    def test_hard_limit_matches_viterbi(self):
        rng = np.random.default_rng(2)
        agree = total = 0
        cfg = SmoothConfig(1e-6)
        while total < 300:
            n, T = rng.integers(2, 6, 2)
            g = dense_graph(rng, n)
            b = rng.uniform(0.01, 1, (T, n))
            plan, tr = viterbi_decode(g, b)
            top2 = np.sort(tr.delta[-1])[-2:]
            if top2[1] - top2[0] < 1e-3:
                continue
            total += 1
            P = soft_plan(g, b, cfg)
            agree += tuple(np.argmax(P, axis=1)) == plan.actions
        assert agree / total >= 0.99

    def test_no_state(self):
        rng = np.random.default_rng(3)
        g = dense_graph(rng, 4)
        b = rng.random((3, 4))
        a = soft_plan(g, b)
        assert np.array_equal(a, soft_plan(g, b))

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=50, deadline=None)
    def test_permutation_equivariance(self, seed):
        rng = np.random.default_rng(seed)
        n, T = rng.integers(1, 6, 2)
        g = dense_graph(rng, n)
        b = rng.uniform(0.05, 1, (T, n))
        perm = rng.permutation(n)
        inv = np.argsort(perm)
        gp = make_graph(g.weights[np.ix_(inv, inv)])
        np.testing.assert_allclose(soft_plan(gp, b[:, inv]), soft_plan(g, b)[:, inv], atol=1e-12)

    def test_batched_equals_looped(self):
        rng = np.random.default_rng(4)
        g = dense_graph(rng, 5)
        lb = np.log(rng.uniform(0.05, 1, (7, 4, 5)))
        lw = g.log_weights()
        Pb = compose_soft_plan(dvl_forward_log(lw, lb))
        for i in range(7):
            np.testing.assert_allclose(Pb[i], compose_soft_plan(dvl_forward_log(lw, lb[i])), atol=1e-14)


class TestBackward:
    def test_finite_differences(self):
        rng = np.random.default_rng(5)
        worst = 0.0
        for _ in range(40):
            g, b, target = random_dvl_instance(rng)
            ana, num = dvl_fd_check(g, b, target)
            worst = max(worst, relative_error(ana, num))
        assert worst < 1e-4

    @pytest.mark.parametrize("tau", [0.3, 2.0])
    def test_finite_differences_tempered(self, tau):
        rng = np.random.default_rng(6)
        for _ in range(10):
            g, b, target = random_dvl_instance(rng, 4, 4)
            ana, num = dvl_fd_check(g, b, target, cfg=SmoothConfig(tau))
            assert relative_error(ana, num) < 1e-4

    def test_sparse_graph_finite_differences(self):
        # with no feasible path every score carries the -1e9 floor and finite
        # differences lose their precision, so only feasible instances count
        rng = np.random.default_rng(7)
        checked = 0
        while checked < 20:
            n, T = rng.integers(2, 5, 2)
            g = random_graph(rng, n, density=0.5)
            b = rng.uniform(0.05, 1, (T, n))
            if path_total(g, b) == 0:
                continue
            checked += 1
            ana, num = dvl_fd_check(g, b, rng.integers(0, n, T))
            assert relative_error(ana, num) < 1e-4

    def test_zero_upstream(self):
        rng = np.random.default_rng(8)
        tr = dvl_forward(dense_graph(rng, 4), rng.random((3, 4)))
        compose_soft_plan(tr)
        assert np.all(dvl_backward(tr, np.zeros((3, 4))) == 0)

    def test_requires_composed_plan(self):
        rng = np.random.default_rng(9)
        tr = dvl_forward(dense_graph(rng, 3), rng.random((2, 3)))
        with pytest.raises(ValueError):
            dvl_backward(tr, np.zeros((2, 3)))

    def test_floored_emissions_finite(self):
        rng = np.random.default_rng(10)
        for _ in range(1000):
            n, T = rng.integers(1, 6, 2)
            g = random_graph(rng, n, density=0.5)
            b = rng.random((T, n))
            b[rng.random((T, n)) < 0.3] = 0.0
            tr = dvl_forward(g, b)
            P = compose_soft_plan(tr)
            grad = dvl_backward_emissions(tr, b, rng.normal(size=P.shape))
            assert np.all(np.isfinite(grad))
