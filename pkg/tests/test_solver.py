import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

from paretomoe.errors import DimensionError, DomainError
from paretomoe.model import ParamPartition
from paretomoe.numeric import ParamGroup, parameter
from paretomoe.oracles import grid_search, min_norm_oracle, project_to_simplex, random_psd, simplex_grid
from paretomoe.solver import (
    FIXED_DECAY,
    FWConfig,
    GradientBundle,
    apply_updates,
    closed_form_two,
    curvature_constant_quadratic,
    duality_gap,
    frank_wolfe,
    gram_matrix,
    pareto_stationarity_residual,
    quadratic,
    verify_descent_lemma,
    verify_gap_bound,
    verify_primal_bound,
)


def _slsqp_min(M):
    """Third, unrelated route to the simplex minimum."""
    K = M.shape[0]
    res = minimize(lambda w: w @ M @ w, np.full(K, 1.0 / K), jac=lambda w: 2 * M @ w,
                   bounds=[(0, 1)] * K, constraints=[{"type": "eq", "fun": lambda w: w.sum() - 1}],
                   method="SLSQP", options={"ftol": 1e-15, "maxiter": 500})
    return res.fun


def _bundle(*shared):
    return GradientBundle([np.asarray(g, float) for g in shared], [np.zeros(0) for _ in shared])


class TestGram:
    def test_orthonormal(self):
        np.testing.assert_array_equal(gram_matrix(_bundle([1, 0], [0, 1])), np.eye(2))

    def test_scaled_copy(self):
        np.testing.assert_array_equal(gram_matrix(_bundle([0.6, 0.8], [1.2, 1.6])),
                                      [[1.0, 2.0], [2.0, 4.0]])

    def test_single(self):
        np.testing.assert_array_equal(gram_matrix([np.array([3.0, 4.0])]), [[25.0]])

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            gram_matrix([np.ones(2), np.ones(3)])

    def test_symmetric_psd(self):
        rng = np.random.default_rng(0)
        M = gram_matrix(list(rng.normal(size=(4, 30))))
        np.testing.assert_array_equal(M, M.T)
        assert np.linalg.eigvalsh(M).min() >= -1e-9 * np.trace(M)


class TestClosedFormTwo:
    def test_equal_vectors(self):
        assert closed_form_two(2.0, 2.0, 2.0) == 1.0

    def test_orthogonal_example(self):
        l1, l2 = np.array([1.0, 0.0]), np.array([0.0, 2.0])
        w = closed_form_two(l1 @ l1, l1 @ l2, l2 @ l2)
        assert w == pytest.approx(0.8, abs=1e-15)
        point = w * l1 + (1 - w) * l2
        np.testing.assert_allclose(point, [0.8, 0.4], atol=1e-15)
        assert point @ point == pytest.approx(0.8, abs=1e-15)
        # grid oracle at step 1e-4
        grid = np.linspace(0, 1, 10001)
        norms = [(g * l1 + (1 - g) * l2) @ (g * l1 + (1 - g) * l2) for g in grid]
        assert abs(grid[int(np.argmin(norms))] - w) <= 1e-4

    def test_opposing_gives_zero_vector(self):
        l1, l2 = np.array([2.0, 0.0]), np.array([-1.0, 0.0])
        w = closed_form_two(l1 @ l1, l1 @ l2, l2 @ l2)
        assert abs(w - 1 / 3) <= 1e-12
        np.testing.assert_allclose(w * l1 + (1 - w) * l2, 0.0, atol=1e-12)

    def test_second_branch(self):
        # l2 lies "inside" l1's direction: l1.l2 >= l2.l2
        l1, l2 = np.array([3.0, 0.0]), np.array([1.0, 0.0])
        assert closed_form_two(l1 @ l1, l1 @ l2, l2 @ l2) == 0.0

    @settings(max_examples=300, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_matches_dense_scan(self, seed):
        rng = np.random.default_rng(seed)
        l1, l2 = rng.normal(size=(2, 3))
        w = closed_form_two(l1 @ l1, l1 @ l2, l2 @ l2)
        assert 0.0 <= w <= 1.0
        best = min(np.linalg.norm(g * l1 + (1 - g) * l2) ** 2 for g in np.linspace(0, 1, 2001))
        assert np.linalg.norm(w * l1 + (1 - w) * l2) ** 2 <= best + 1e-12


class TestFrankWolfe:
    def test_identity_uniform(self):
        w, diag = frank_wolfe(np.eye(3))
        np.testing.assert_allclose(w, [1 / 3] * 3, atol=1e-15)

    def test_diagonal_kkt(self):
        # minimiser of sum d_i w_i^2 on the simplex is w_i proportional to 1/d_i
        d = np.array([1.0, 1.0, 100.0])
        expect = (1 / d) / np.sum(1 / d)  # (100, 100, 1) / 201
        np.testing.assert_allclose(expect, np.array([100, 100, 1]) / 201, rtol=1e-15)
        w, _ = frank_wolfe(np.diag(d))
        np.testing.assert_allclose(w, expect, atol=1e-3)
        wg, vg = grid_search(np.diag(d), 1e-2)
        assert quadratic(np.diag(d), w) <= vg + 1e-12

    def test_two_objective_matches_closed_form(self):
        M = gram_matrix(_bundle([1, 0], [0, 2]))
        w, _ = frank_wolfe(M)
        np.testing.assert_allclose(w, [0.8, 0.2], atol=1e-4)

    def test_empty_and_nonfinite(self):
        with pytest.raises(DomainError):
            frank_wolfe(np.zeros((0, 0)))
        with pytest.raises(DomainError):
            frank_wolfe(np.array([[1.0, np.nan], [np.nan, 1.0]]))

    def test_zero_matrix_uniform(self):
        w, diag = frank_wolfe(np.zeros((4, 4)))
        np.testing.assert_array_equal(w, 0.25)
        assert diag.gaps == [0.0] and diag.n_iter == 0

    def test_tie_breaks_low_index(self):
        _, diag = frank_wolfe(np.array([[1.0, 0.0], [0.0, 1.0]]) * 0 + np.array([[2.0, 1.0], [1.0, 2.0]]))
        assert diag.vertices[0] == 0

    def test_vertex_optimum_stops(self):
        M = np.array([[1.0, 2.0], [2.0, 9.0]])
        w, diag = frank_wolfe(M)
        np.testing.assert_allclose(w, [1.0, 0.0])
        assert diag.n_iter <= 2

    @pytest.mark.parametrize("K", [2, 3, 5])
    def test_properties_random(self, K):
        rng = np.random.default_rng(K)
        for _ in range(40):
            M = random_psd(rng, K, rank=int(rng.integers(1, 9)))
            w, diag = frank_wolfe(M)
            assert np.all(w >= 0) and abs(w.sum() - 1) <= 1e-12
            assert np.all(np.diff(diag.objectives) <= 1e-15)
            assert pareto_stationarity_residual(M, w) <= pareto_stationarity_residual(M, np.full(K, 1 / K))

    def test_scale_equivariance(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            M = random_psd(rng, 4)
            w1, d1 = frank_wolfe(M)
            w2, d2 = frank_wolfe(8.0 * M)
            np.testing.assert_array_equal(w1, w2)
            assert d1.vertices == d2.vertices
            w3, d3 = frank_wolfe(3.7 * M)
            assert d1.vertices == d3.vertices
            np.testing.assert_allclose(w1, w3, atol=1e-12)

    def test_fixed_decay_schedule(self):
        _, diag = frank_wolfe(np.eye(3), FWConfig(max_iter=5, step_mode=FIXED_DECAY))
        np.testing.assert_allclose(diag.steps, [2 / (r + 2) for r in range(5)])

    def test_diagnostic_rows(self):
        _, diag = frank_wolfe(np.diag([1.0, 4.0]))
        rows = diag.rows()
        assert len(rows) == diag.n_iter + 1
        assert set(rows[0]) == {"r", "w1", "w2", "objective", "gap", "vertex", "step"}
        assert rows[-1]["step"] == ""


class TestOracle:
    def test_grid_sizes(self):
        assert len(simplex_grid(2, 1e-3)) == 1001
        assert len(simplex_grid(3, 1e-2)) == 101 * 102 // 2

    def test_projection(self):
        np.testing.assert_allclose(project_to_simplex(np.array([2.0, 0.0])), [1.0, 0.0])
        np.testing.assert_allclose(project_to_simplex(np.array([0.3, 0.3, 0.3])), [1 / 3] * 3)

    @pytest.mark.parametrize("K", [2, 3, 5])
    def test_against_slsqp(self, K):
        rng = np.random.default_rng(100 + K)
        for _ in range(15):
            M = random_psd(rng, K, rank=int(rng.integers(1, 9)))
            assert abs(min_norm_oracle(M)[1] - _slsqp_min(M)) <= 1e-7


class TestGapAndCurvature:
    def test_gap_at_optimum(self):
        assert duality_gap(np.eye(2), [0.5, 0.5]) == 0.0

    def test_gap_at_vertex(self):
        assert duality_gap(np.eye(2), [1.0, 0.0]) == 2.0

    def test_weak_duality(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            K = int(rng.integers(2, 6))
            M = random_psd(rng, K, rank=int(rng.integers(1, 9)))
            w = rng.dirichlet(np.ones(K))
            assert duality_gap(M, w) >= quadratic(M, w) - min_norm_oracle(M)[1] - 1e-12

    def test_curvature_identity(self):
        assert curvature_constant_quadratic(np.eye(5)) == 4.0

    def test_curvature_zero(self):
        assert curvature_constant_quadratic(np.zeros((3, 3))) == 0.0

    def test_curvature_pair(self):
        assert curvature_constant_quadratic(np.diag([1.0, 4.0])) == 10.0

    def test_curvature_is_sup(self):
        # sampled (s, w, gamma) never exceed the vertex-pair value
        rng = np.random.default_rng(2)
        M = random_psd(rng, 4)
        C = curvature_constant_quadratic(M)
        for _ in range(2000):
            s, w = rng.dirichlet(np.ones(4)), rng.dirichlet(np.ones(4))
            g = rng.uniform(0.01, 1)
            wp = w + g * (s - w)
            val = 2 / g**2 * (quadratic(M, wp) - quadratic(M, w) - (wp - w) @ (2 * M @ w))
            assert val <= C + 1e-10

    def test_residual_examples(self):
        g = np.array([1.0, -2.0])
        M = gram_matrix([g, -g])
        assert pareto_stationarity_residual(M, [0.5, 0.5]) == 0.0
        assert pareto_stationarity_residual(np.eye(2), [0.5, 0.5]) == 0.5


class TestBoundCheckers:
    def test_primal_identity(self):
        rep = verify_primal_bound(np.eye(3), 50)
        assert rep.passed and rep.checked == 50

    def test_primal_zero(self):
        rep = verify_primal_bound(np.zeros((3, 3)), 50)
        assert rep.passed and rep.violations == 0

    def test_gap_identity(self):
        rep = verify_gap_bound(np.eye(2), 10)
        assert rep.passed
        assert rep.detail["min_gap"] <= (27 / 4) * 4.0 / 12

    def test_gap_zero(self):
        assert verify_gap_bound(np.zeros((2, 2)), 10).passed

    def test_gap_needs_two(self):
        with pytest.raises(DomainError):
            verify_gap_bound(np.eye(2), 1)

    @pytest.mark.parametrize("K", [2, 3, 5])
    def test_random_suites(self, K):
        rng = np.random.default_rng(7 * K)
        for _ in range(30):
            M = random_psd(rng, K, rank=int(rng.integers(1, 9)))
            assert verify_primal_bound(M, 100).violations == 0
            assert all(verify_gap_bound(M, R).passed for R in (2, 10, 50))
            assert verify_descent_lemma(M, 100).violations == 0


def _partition(K, shared_size, specific_sizes):
    shared = [ParamGroup("sh", [parameter(np.zeros(shared_size))])]
    specific = [[ParamGroup(f"s{k}", [parameter(np.zeros(n))])] for k, n in enumerate(specific_sizes)]
    return ParamPartition(shared, specific)


class TestApplyUpdates:
    def test_zero_gradients(self):
        part = _partition(2, 3, [2, 2])
        part.shared[0].tensors[0].data[:] = [1.0, 2.0, 3.0]
        bundle = GradientBundle([np.zeros(3)] * 2, [np.zeros(2)] * 2)
        apply_updates(part, bundle, np.array([0.5, 0.5]), 0.1)
        np.testing.assert_array_equal(part.shared[0].tensors[0].data, [1.0, 2.0, 3.0])

    def test_single_objective_is_sgd(self):
        part = _partition(1, 2, [2])
        bundle = GradientBundle([np.array([1.0, -1.0])], [np.array([2.0, 4.0])])
        apply_updates(part, bundle, np.array([1.0]), 0.5)
        np.testing.assert_array_equal(part.shared[0].tensors[0].data, [-0.5, 0.5])
        np.testing.assert_array_equal(part.specific[0][0].tensors[0].data, [-1.0, -2.0])

    def test_one_hot_weights(self):
        part = _partition(2, 2, [1, 1])
        bundle = GradientBundle([np.array([1.0, 0.0]), np.array([0.0, 5.0])],
                                [np.array([1.0]), np.array([3.0])])
        apply_updates(part, bundle, np.array([1.0, 0.0]), 1.0)
        np.testing.assert_array_equal(part.shared[0].tensors[0].data, [-1.0, 0.0])
        np.testing.assert_array_equal(part.specific[0][0].tensors[0].data, [-1.0])
        np.testing.assert_array_equal(part.specific[1][0].tensors[0].data, [-3.0])

    def test_shape_mismatch(self):
        part = _partition(2, 2, [1, 1])
        bundle = GradientBundle([np.ones(3), np.ones(3)], [np.ones(1), np.ones(1)])
        with pytest.raises(DimensionError):
            apply_updates(part, bundle, np.array([0.5, 0.5]), 1.0)

    def test_rejects_off_simplex(self):
        part = _partition(2, 2, [1, 1])
        bundle = GradientBundle([np.ones(2), np.ones(2)], [np.ones(1), np.ones(1)])
        with pytest.raises(DomainError):
            apply_updates(part, bundle, np.array([0.7, 0.7]), 1.0)
