import itertools

import numpy as np
import pytest

from tswsl.exact_ot import (
    CostMatrix,
    OTError,
    euclidean_cost,
    exact_ot,
    network_simplex,
    tree_cost_matrix,
    wasserstein,
    wasserstein_1d,
)
from tswsl.measures import validate_and_normalize
from tswsl.radon import project
from tswsl.splitting import Uniform
from tswsl.tree_system import GroundPoint, TreeSystem, sample_chain, tree_distance

from conftest import lp_transport, random_measure


class TestOneDimensional:
    def test_identical(self, rng):
        x = rng.normal(size=7)
        assert wasserstein_1d(x, None, x, None, 2) == 0.0

    @pytest.mark.parametrize("p", [1, 2, 3.5])
    def test_two_diracs(self, p):
        assert wasserstein_1d([0.0], [1.0], [3.0], [1.0], p) == pytest.approx(3.0, abs=1e-15)

    def test_quantile_example(self):
        assert wasserstein_1d([0, 1], [0.5, 0.5], [0, 2], [0.5, 0.5], 1) == 0.5

    def test_weight_check(self):
        with pytest.raises(OTError):
            wasserstein_1d([0, 1], [0.5, 0.6], [0], [1], 1)
        with pytest.raises(OTError):
            wasserstein_1d([0], [1], [0], [1], 0.5)

    @pytest.mark.parametrize("p", [1, 2, 3])
    def test_matches_lp(self, rng, p):
        for _ in range(20):
            n, m = rng.integers(1, 9, size=2)
            x, y = rng.normal(size=n), rng.normal(size=m)
            a, b = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(m))
            ref = lp_transport(a, b, np.abs(x[:, None] - y[None]) ** p)
            assert wasserstein_1d(x, a, y, b, p) ** p == pytest.approx(ref, abs=1e-9)


class TestExactOT:
    def test_identical_zero(self, rng):
        m = random_measure(rng, 6, 2)
        assert exact_ot(m.weights, m.weights, euclidean_cost(m.points, m.points, 1)) == pytest.approx(0, abs=1e-15)

    def test_matches_1d(self, rng):
        for _ in range(20):
            x, y = rng.normal(size=6), rng.normal(size=5)
            a, b = rng.dirichlet(np.ones(6)), rng.dirichlet(np.ones(5))
            cost = CostMatrix(np.abs(x[:, None] - y[None]) ** 2)
            assert exact_ot(a, b, cost) == pytest.approx(wasserstein_1d(x, a, y, b, 2) ** 2, abs=1e-9)

    def test_brute_force_permutations(self, rng):
        for _ in range(20):
            C = rng.random((3, 3))
            best = min(sum(C[i, s[i]] for i in range(3)) / 3 for s in itertools.permutations(range(3)))
            assert exact_ot(np.full(3, 1 / 3), np.full(3, 1 / 3), CostMatrix(C)) == pytest.approx(best, abs=1e-12)

    def test_matches_lp_random(self, rng):
        for _ in range(40):
            n, m = rng.integers(1, 15, size=2)
            a, b = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(m))
            C = rng.random((n, m)) * 10
            assert exact_ot(a, b, CostMatrix(C)) == pytest.approx(lp_transport(a, b, C), rel=1e-9, abs=1e-12)

    def test_degenerate_marginals(self):
        # uniform marginals with integer costs produce many ties and degenerate pivots
        rng = np.random.default_rng(0)
        for n in (5, 20, 60):
            C = rng.integers(0, 3, size=(n, n)).astype(float)
            a = np.full(n, 1 / n)
            assert exact_ot(a, a, CostMatrix(C)) == pytest.approx(lp_transport(a, a, C), abs=1e-9)

    def test_plan_marginals(self, rng):
        a, b = rng.dirichlet(np.ones(7)), rng.dirichlet(np.ones(9))
        res = network_simplex(a, b, rng.random((7, 9)))
        np.testing.assert_allclose(res.plan.sum(1), a, atol=1e-12)
        np.testing.assert_allclose(res.plan.sum(0), b, atol=1e-12)
        assert np.all(res.plan >= -1e-15)

    def test_zero_mass_rows(self):
        a = np.array([0.5, 0.0, 0.5])
        b = np.array([1.0])
        C = CostMatrix(np.array([[1.0], [100.0], [3.0]]))
        assert exact_ot(a, b, C) == pytest.approx(2.0)

    def test_symmetry_and_scaling(self, rng):
        a, b = rng.dirichlet(np.ones(6)), rng.dirichlet(np.ones(4))
        C = CostMatrix(rng.random((6, 4)))
        v = exact_ot(a, b, C)
        assert exact_ot(b, a, C.T) == pytest.approx(v, abs=1e-12)
        assert exact_ot(a, b, C.scaled(3.5)) == pytest.approx(3.5 * v, abs=1e-12)

    def test_errors(self):
        with pytest.raises(OTError):
            exact_ot([0.5, 0.6], [1.0], CostMatrix(np.ones((2, 1))))
        with pytest.raises(OTError):
            exact_ot([1.0], [1.0], CostMatrix(np.ones((2, 1))))
        with pytest.raises(OTError):
            CostMatrix(np.array([[-1.0]]))
        big = CostMatrix.__new__(CostMatrix)
        object.__setattr__(big, "values", np.zeros((4000, 4000)))
        with pytest.raises(OTError):
            exact_ot(np.full(4000, 1 / 4000), np.full(4000, 1 / 4000), big)

    def test_wasserstein_gaussian_shift(self, rng):
        m = random_measure(rng, 30, 3, uniform=True)
        shift = np.array([0.3, -0.1, 0.2])
        moved = validate_and_normalize(m.points + shift)
        assert wasserstein(m, moved, 2) == pytest.approx(np.linalg.norm(shift), abs=1e-9)


class TestTreeCost:
    def test_same_line(self):
        ts = TreeSystem.from_params([0.0, 0.0], [[1.0, 0.0]], [-1], [0.0])
        mu = validate_and_normalize([[1.0, 0.0]])
        nu = validate_and_normalize([[-2.5, 4.0]])
        C = tree_cost_matrix(ts, project(mu, ts, Uniform(1)), project(nu, ts, Uniform(1)))
        assert C.values[0, 0] == 3.5 and C.metric == "tree"

    def test_across_attachment(self):
        e1, e2 = np.eye(2)
        ts = TreeSystem.from_params([0.0, 0.0], [e1, e2], [-1, 0], [0.0, 1.0])
        from tswsl.radon import ProjectedMeasure
        pa = ProjectedMeasure((np.array([0.0]), np.array([])), (np.array([1.0]), np.array([])),
                              (np.array([0]), np.array([], dtype=int)))
        pb = ProjectedMeasure((np.array([]), np.array([2.0])), (np.array([]), np.array([1.0])),
                              (np.array([], dtype=int), np.array([0])))
        assert tree_cost_matrix(ts, pa, pb).values[0, 0] == 3.0

    def test_symmetric_self(self, rng):
        ts = sample_chain(3, 2, seed=1)
        pm = project(random_measure(rng, 5, 2), ts, Uniform(3))
        C = tree_cost_matrix(ts, pm, pm).values
        np.testing.assert_array_equal(C, C.T)
        assert np.all(np.diag(C) == 0)
