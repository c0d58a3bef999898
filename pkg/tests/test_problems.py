import numpy as np
import pytest

import cao
from cao.errors import (
    ContractViolationError,
    DegenerateStepError,
    NumericOverflowError,
    OracleUnavailableError,
)
from cao.problems import (
    Batch,
    ProblemMeta,
    QuadraticProblem,
    fd_hvp,
    from_config,
    logreg,
    mlp_synthetic,
    quadratic,
    rosenbrock,
)


def all_problems():
    return [
        quadratic([3.0, 1.0, 0.5], seed=5),
        rosenbrock(6),
        logreg(8, 60, seed=2),
        mlp_synthetic([4, 5, 2], seed=0, n_samples=30),
    ]


def diag28():
    return QuadraticProblem([2.0, 8.0], rotate=False)


class TestQuadratic:
    def test_minimum_is_zero(self):
        assert diag28().loss(np.zeros(2)) == 0.0

    def test_loss_at_ones(self):
        # 0.5 * (2 + 8)
        assert diag28().loss(np.array([1.0, 1.0])) == pytest.approx(5.0)

    def test_grad_is_a_theta(self):
        g = diag28().grad(np.array([1.0, 1.0]))
        np.testing.assert_allclose(g, [2.0, 8.0])

    def test_hvp_picks_column(self):
        hv = diag28().hvp(np.zeros(2), np.array([1.0, 0.0]))
        np.testing.assert_allclose(hv, [2.0, 0.0])

    def test_dense_hessian(self):
        np.testing.assert_array_equal(diag28().dense_hessian(np.zeros(2)),
                                      np.diag([2.0, 8.0]))

    def test_rotated_spectrum_exact(self):
        p = quadratic([7.0, 4.0, 1.0], seed=3)
        np.testing.assert_allclose(np.linalg.eigvalsh(p.matrix), [1.0, 4.0, 7.0],
                                   atol=1e-12)
        assert p.meta.smoothness_L == 7.0
        assert p.meta.pl_mu == 1.0
        assert p.meta.f_star == 0.0


class TestRosenbrock:
    def test_global_minimum(self):
        assert rosenbrock(5).loss(np.ones(5)) == 0.0

    def test_gradient_zero_at_minimum(self):
        np.testing.assert_allclose(rosenbrock(5).grad(np.ones(5)), np.zeros(5))

    def test_hvp_matches_fd_at_origin(self):
        p = rosenbrock(4)
        theta = np.zeros(4)
        v = np.array([1.0, 0.0, 0.0, 0.0])
        fd = fd_hvp(p, theta, v, eps=1e-4)
        np.testing.assert_allclose(p.hvp(theta, v), fd, rtol=1e-4)

    def test_hessian_eigenvalues_at_minimum(self):
        # frozen from the dense eigendecomposition oracle at the all-ones point
        p = rosenbrock(2)
        h = p.dense_hessian(np.ones(2))
        np.testing.assert_allclose(np.linalg.eigvalsh(h),
                                   [0.3993607674876216, 1001.6006392325123], rtol=1e-10)


class TestHvpContracts:
    def test_hvp_of_zero_direction(self):
        for p in all_problems():
            theta = p.initial_point(1)
            np.testing.assert_array_equal(p.hvp(theta, np.zeros(p.dim)),
                                          np.zeros(p.dim))

    def test_symmetry(self):
        rng = np.random.default_rng(10)
        for p in all_problems():
            theta = p.initial_point(3)
            for _ in range(20):
                u = rng.standard_normal(p.dim)
                v = rng.standard_normal(p.dim)
                uhv = float(u @ p.hvp(theta, v))
                vhu = float(v @ p.hvp(theta, u))
                assert abs(uhv - vhu) <= 1e-8 * (1.0 + abs(uhv))

    def test_linearity(self):
        rng = np.random.default_rng(11)
        for p in all_problems():
            theta = p.initial_point(4)
            u = rng.standard_normal(p.dim)
            v = rng.standard_normal(p.dim)
            a, b = 0.7, -1.3
            combo = p.hvp(theta, a * u + b * v)
            split = a * p.hvp(theta, u) + b * p.hvp(theta, v)
            np.testing.assert_allclose(combo, split, rtol=1e-10, atol=1e-12)

    def test_dense_columns_equal_hvp_exactly(self):
        for p in all_problems():
            theta = p.initial_point(5)
            h = p.dense_hessian(theta)
            eye = np.eye(p.dim)
            for j in range(0, p.dim, max(1, p.dim // 5)):
                np.testing.assert_array_equal(h[:, j], p.hvp(theta, eye[:, j]))

    def test_dense_cap(self):
        class Big(cao.Problem):
            meta = ProblemMeta(dim=501, name="big")

        with pytest.raises(OracleUnavailableError):
            Big().dense_hessian(np.zeros(501))


class TestGradChecks:
    @pytest.mark.parametrize("problem", all_problems(), ids=lambda p: p.meta.name)
    def test_directional_derivative(self, problem):
        rng = np.random.default_rng(20)
        h = 1e-5
        for _ in range(20):
            theta = problem.initial_point(2) + 0.3 * rng.standard_normal(problem.dim)
            u = rng.standard_normal(problem.dim)
            g = problem.grad(theta)
            fd = (problem.loss(theta + h * u) - problem.loss(theta - h * u)) / (2 * h)
            assert abs(float(g @ u) - fd) <= 1e-5 * (1.0 + abs(fd))

    @pytest.mark.parametrize("problem", all_problems(), ids=lambda p: p.meta.name)
    def test_fd_hvp_agreement(self, problem):
        rng = np.random.default_rng(21)
        for _ in range(5):
            theta = problem.initial_point(2) + 0.3 * rng.standard_normal(problem.dim)
            v = rng.standard_normal(problem.dim)
            an = problem.hvp(theta, v)
            fd = fd_hvp(problem, theta, v, eps=1e-4)
            assert np.linalg.norm(fd - an) <= 1e-4 * (1.0 + np.linalg.norm(an))


class TestFdHvp:
    def test_quadratic_fd_is_exact(self):
        p = quadratic([5.0, 2.0], seed=1)
        theta = np.array([0.3, -0.7])
        v = np.array([1.0, 2.0])
        np.testing.assert_allclose(fd_hvp(p, theta, v, eps=1e-3), p.hvp(theta, v),
                                   rtol=1e-9)

    def test_zero_direction(self):
        p = quadratic([5.0, 2.0], seed=1)
        np.testing.assert_array_equal(fd_hvp(p, np.ones(2), np.zeros(2)), np.zeros(2))

    def test_degenerate_step(self):
        p = quadratic([5.0, 2.0], seed=1)
        with pytest.raises(DegenerateStepError):
            fd_hvp(p, np.ones(2), np.ones(2), eps=1e-300)

    def test_bad_eps(self):
        p = quadratic([5.0, 2.0], seed=1)
        with pytest.raises(ContractViolationError):
            fd_hvp(p, np.ones(2), np.ones(2), eps=0.0)


class TestBatches:
    def test_minibatch_changes_loss(self):
        p = logreg(6, 40, seed=3)
        theta = p.initial_point(0)
        full = p.loss(theta)
        sub = p.loss(theta, Batch(indices=np.arange(10)))
        assert full != sub

    def test_out_of_range_indices(self):
        p = logreg(6, 40, seed=3)
        with pytest.raises(ContractViolationError):
            p.loss(p.initial_point(0), Batch(indices=np.array([40])))

    def test_deterministic_problem_rejects_batches(self):
        p = quadratic([2.0, 1.0], seed=0)
        with pytest.raises(ContractViolationError):
            p.loss(np.zeros(2), Batch(indices=np.array([0])))

    def test_batch_determinism(self):
        p = mlp_synthetic([4, 5, 2], seed=9, n_samples=30)
        theta = p.initial_point(1)
        b = Batch(indices=np.arange(7))
        g1 = p.grad(theta, b)
        g2 = p.grad(theta, b)
        assert g1.tobytes() == g2.tobytes()


class TestThreadSafety:
    def test_concurrent_evaluation_matches_serial(self):
        from concurrent.futures import ThreadPoolExecutor

        p = mlp_synthetic([4, 6, 2], seed=3, n_samples=40)
        thetas = [p.initial_point(s) for s in range(8)]
        serial = [p.grad(t).tobytes() for t in thetas]
        with ThreadPoolExecutor(max_workers=4) as pool:
            threaded = [g.tobytes() for g in pool.map(p.grad, thetas)]
        assert serial == threaded


class TestConstructionDeterminism:
    def test_same_seed_bit_identical(self):
        a = mlp_synthetic([4, 5, 2], seed=7, n_samples=30)
        b = mlp_synthetic([4, 5, 2], seed=7, n_samples=30)
        theta = a.initial_point(2)
        assert a.loss(theta) == b.loss(theta)
        assert a.grad(theta).tobytes() == b.grad(theta).tobytes()

    def test_different_seed_differs(self):
        a = logreg(6, 40, seed=1)
        b = logreg(6, 40, seed=2)
        assert not np.array_equal(a.x, b.x)


class TestContracts:
    def test_dimension_mismatch(self):
        p = quadratic([2.0, 1.0], seed=0)
        with pytest.raises(ContractViolationError):
            p.loss(np.zeros(3))
        with pytest.raises(ContractViolationError):
            p.hvp(np.zeros(2), np.zeros(3))

    def test_nonfinite_input_direction(self):
        p = quadratic([2.0, 1.0], seed=0)
        with pytest.raises(NumericOverflowError):
            p.hvp(np.zeros(2), np.array([np.inf, 0.0]))

    def test_meta_invariants(self):
        with pytest.raises(ContractViolationError):
            ProblemMeta(dim=2, name="bad", pl_mu=0.5)  # pl_mu without f_star
        with pytest.raises(ContractViolationError):
            ProblemMeta(dim=2, name="bad", smoothness_L=1.0, pl_mu=2.0, f_star=0.0)

    def test_logreg_smoothness_bound(self):
        p = logreg(6, 50, seed=4)
        rng = np.random.default_rng(0)
        for _ in range(3):
            h = p.dense_hessian(rng.standard_normal(6))
            assert np.linalg.eigvalsh(h)[-1] <= p.meta.smoothness_L + 1e-10


class TestFromConfig:
    def test_dispatch(self):
        p = from_config({"name": "quadratic", "spectrum": [4.0, 1.0], "seed": 2})
        assert p.dim == 2
        p = from_config({"name": "rosenbrock", "n": 5})
        assert p.dim == 5
        p = from_config({"name": "logreg", "n_features": 3, "n_samples": 20, "seed": 1})
        assert p.num_samples == 20
        p = from_config({"name": "mlp", "widths": [3, 4, 2], "seed": 1,
                         "n_samples": 12})
        assert p.dim == 3 * 4 + 4 + 4 * 2 + 2

    def test_unknown_name(self):
        with pytest.raises(ContractViolationError):
            from_config({"name": "nope"})

    def test_missing_parameter(self):
        with pytest.raises(ContractViolationError):
            from_config({"name": "quadratic"})
