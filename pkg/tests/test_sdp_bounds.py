import numpy as np
import pytest

import covbounds.sdp_bounds as sdp
from conftest import c_objective, three_by_three
from covbounds.barrier import LinearObjective, SolverConfig
from covbounds.data_model import MaskedDataset, MissingCell, build_design, identifiability_mask, missing_cells
from covbounds.em_engine import EmState, em_fit
from covbounds.errors import CovBoundsError
from covbounds.mvn_stats import MvnParams
from covbounds.sdp_bounds import (
    barrier_solve,
    bound_cells,
    build_objective,
    impute_bounds,
    linear_functional_bounds,
)
from covbounds.simulate import SimSpec, simulate


def _state(mu, sigma, dataset):
    params = MvnParams.from_arrays(mu, sigma)
    return EmState(dataset.values.copy(), params.mu, params.sigma, 1, converged=True)


def _two_block(x, n_first=1):
    n = len(x)
    d = build_design([range(n_first), range(n_first, n)], [[0, 1], [1, 2]], n, 3)
    x = np.array(x, dtype=float)
    x[~d.observed_mask()] = np.nan
    return MaskedDataset.from_array(x), d


class TestBuildObjective:
    def test_hand_example(self):
        # J = {1, 2}, j = 3 (1-based), identity block and x - mu = (1, 2)
        ds, d = _two_block([[1.0, 2.0, 0.0], [0.0, 0.0, 0.0]])
        obj = build_objective(MissingCell(0, 2, 0), np.eye(3), np.zeros(3), ds, d)
        expect = np.zeros((3, 3))
        expect[2, 0] = expect[0, 2] = 0.5
        expect[2, 1] = expect[1, 2] = 1.0
        assert np.array_equal(obj.C, expect)
        S = np.array([[1.0, 0.1, 0.3], [0.1, 1.0, 0.7], [0.3, 0.7, 1.0]])
        assert obj.value(S) == pytest.approx(0.3 * 1 + 0.7 * 2)

    def test_centered_row(self):
        ds, d = _two_block([[0.5, -0.5, 0.0], [0.0, 0.0, 0.0]])
        mu = np.array([0.5, -0.5, 2.0])
        obj = build_objective(MissingCell(0, 2, 0), np.eye(3), mu, ds, d)
        assert not obj.C.any() and obj.constant_offset == 2.0

    def test_value_at_sigma_hat_is_em_imputation(self):
        sim = simulate(SimSpec(n=400, seed=1))
        st = em_fit(sim.dataset, sim.design)
        from covbounds.em_engine import impute_point
        pts = {(i, j): v for i, j, v in impute_point(st, sim.dataset, sim.design)}
        for cell in missing_cells(sim.dataset, sim.design)[:30]:
            obj = build_objective(cell, st.sigma.sigma, st.mu, sim.dataset, sim.design)
            assert obj.value(st.sigma.sigma) == pytest.approx(pts[cell.row, cell.col], abs=1e-10)


class TestBarrierSolve:
    @pytest.mark.parametrize("a,b,lo,hi", [(0.6, 0.8, 0.0, 0.96), (0.0, 0.0, -1.0, 1.0)])
    def test_three_by_three(self, a, b, lo, hi):
        sigma, mask = three_by_three(a, b, c=a * b)
        r_lo = barrier_solve(c_objective(), sigma, mask, direction="min")
        r_hi = barrier_solve(c_objective(), sigma, mask, direction="max")
        assert r_lo.optimum == pytest.approx(lo, abs=1e-5)
        assert r_hi.optimum == pytest.approx(hi, abs=1e-5)
        for r in (r_lo, r_hi):
            assert r.converged and not r.perturbed
            assert np.array_equal(r.sigma_star.sigma[mask.identified], sigma[mask.identified])
            assert r.min_eig_final >= -1e-8

    def test_objective_trace_monotone(self):
        sigma, mask = three_by_three(0.3, -0.4, c=-0.12)
        r = barrier_solve(c_objective(), sigma, mask, direction="min")
        assert np.all(np.diff(r.objective_trace) <= 1e-9)
        r = barrier_solve(c_objective(), sigma, mask, direction="max")
        assert np.all(np.diff(r.objective_trace) >= -1e-9)

    def test_constant_in_free_entries(self):
        sigma, mask = three_by_three(0.6, 0.8, c=0.48)
        C = np.zeros((3, 3))
        C[0, 1] = C[1, 0] = 1.0
        r = barrier_solve(LinearObjective(C, 1.0), sigma, mask, direction="max")
        assert r.optimum == pytest.approx(2.2)

    def test_empty_interior_uses_perturbed_set(self):
        # a = b = 1 pins c = 1: S is a single boundary point
        sigma, mask = three_by_three(1.0, 1.0, c=1.0)
        lo = barrier_solve(c_objective(), sigma, mask, direction="min")
        hi = barrier_solve(c_objective(), sigma, mask, direction="max")
        assert lo.perturbed and hi.perturbed
        assert lo.optimum == pytest.approx(1.0, abs=1e-3)
        assert hi.optimum == pytest.approx(1.0, abs=1e-3)
        assert np.array_equal(lo.sigma_star.sigma[mask.identified], sigma[mask.identified])
        assert lo.min_eig_final >= -1e-8 * 1.0

    def test_bad_direction(self):
        sigma, mask = three_by_three(0.1, 0.1, c=0.01)
        with pytest.raises(ValueError):
            barrier_solve(c_objective(), sigma, mask, direction="up")


class TestImputeBounds:
    def test_fast_path(self, monkeypatch):
        # target col 3 in a block observing {1, 2}: pairs (1,3), (2,3) are identified
        # through block 3, and the only free pair (0,3) carries no weight
        d = build_design([[0], [1], [2]], [[1, 2], [0, 1, 2], [1, 2, 3]], 3, 4)
        ds = MaskedDataset.from_array(np.where(d.observed_mask(), 0.5, np.nan))
        mask = identifiability_mask(d)
        assert mask.free_pairs == ((0, 3),)

        def boom(*a, **k):
            raise AssertionError("solver called")

        monkeypatch.setattr(sdp, "barrier_solve", boom)
        st = _state(np.zeros(4), np.eye(4) + 0.2 * (1 - np.eye(4)), ds)
        res = impute_bounds(MissingCell(0, 3, 0), st, ds, d)
        assert res.fast_path and res.width == 0.0 and res.lower == res.em_value

    def test_interval_contains_em_value(self):
        ds, d = _two_block([[0.4, -1.0, 0.0], [0.0, 0.7, 1.2]])
        sigma = np.array([[1.0, 0.6, 0.48], [0.6, 1.0, 0.8], [0.48, 0.8, 1.0]])
        st = _state(np.zeros(3), sigma, ds)
        res = impute_bounds(MissingCell(0, 2, 0), st, ds, d)
        assert res.lower - 1e-6 <= res.em_value <= res.upper + 1e-6
        assert res.width > 0.1 and res.converged == (True, True)

    def test_failure_is_recorded(self, monkeypatch):
        ds, d = _two_block([[0.4, -1.0, 0.0], [0.0, 0.7, 1.2]])
        sigma = np.array([[1.0, 0.6, 0.48], [0.6, 1.0, 0.8], [0.48, 0.8, 1.0]])

        def fail(*a, **k):
            raise CovBoundsError("synthetic failure")

        monkeypatch.setattr(sdp, "barrier_solve", fail)
        res = impute_bounds(MissingCell(0, 2, 0), _state(np.zeros(3), sigma, ds), ds, d)
        assert res.error == "synthetic failure" and np.isnan(res.lower)
        assert res.converged == (False, False)


class TestBoundCells:
    def test_parallel_matches_serial(self):
        sim = simulate(SimSpec(n=300, p=8, K=3, vars_per_block=6, sigma=np.eye(8) * 0.8 + 0.2, seed=5))
        st = em_fit(sim.dataset, sim.design)
        cells = missing_cells(sim.dataset, sim.design)[:8]
        cfg = SolverConfig(inner_eps=1e-6)
        serial = bound_cells(cells, st.sigma.sigma, st.mu, sim.dataset, sim.design, cfg, jobs=1)
        par = bound_cells(cells, st.sigma.sigma, st.mu, sim.dataset, sim.design, cfg, jobs=3)
        assert [(r.row, r.col) for r in par] == [(c.row, c.col) for c in cells]
        for a, b in zip(serial, par):
            assert (a.lower, a.upper, a.em_value) == (b.lower, b.upper, b.em_value)


class TestLinearFunctional:
    def test_basis_vector(self):
        sigma, mask = three_by_three(0.6, 0.8, c=0.48)
        assert linear_functional_bounds([0, 1, 0], sigma, mask) == (1.0, 1.0)

    def test_supported_on_one_block(self):
        sigma, mask = three_by_three(0.6, 0.8, c=0.48)
        lo, hi = linear_functional_bounds([1, 1, 0], sigma, mask)
        assert lo == hi == pytest.approx(3.2)

    def test_u_plus_w(self):
        sigma, mask = three_by_three(0.6, 0.8, c=0.48)
        lo, hi = linear_functional_bounds([1, 0, 1], sigma, mask)
        assert lo == pytest.approx(2.0, abs=2e-5)
        assert hi == pytest.approx(2 + 2 * 0.96, abs=2e-5)

    def test_zero_vector(self):
        sigma, mask = three_by_three(0.6, 0.8, c=0.48)
        with pytest.raises(ValueError):
            linear_functional_bounds([0, 0, 0], sigma, mask)
