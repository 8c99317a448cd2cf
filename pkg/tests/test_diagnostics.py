import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pksns.diagnostics import (
    BOUNDED,
    CSV_COLUMNS_V1,
    INCONCLUSIVE,
    SUSPECTED_BLOWUP,
    check_inequality_catalog,
    classify_run,
    compute_energies,
    fit_nonzero_decay,
    lp_ladder,
    mass_bound,
    mass_decay_check,
    new_accumulator,
)
from pksns.dynamics import Params, make_state, step
from pksns.errors import AccumulatorTimeError
from pksns.field import Grid, PhysicalField, random_smooth_field


def _rec(t, linf=1.0, dt=0.1, M_zero=1.0, n0_sq=0.0):
    return SimpleNamespace(t=t, linf_n=linf, dt=dt, M_zero=M_zero, n0_sq=n0_sq)


class TestMassBound:
    def test_worked_example(self):
        assert mass_bound(0.1, 1.0, 4 * math.pi, 1.0) == pytest.approx(10 / 11)

    def test_initial_value_and_zero_mass(self):
        assert mass_bound(0.0, 3.0, 1.0, 5.0) == pytest.approx(3.0)
        assert mass_bound(2.0, 0.0, 1.0, 5.0) == 0.0

    def test_unrescaled(self):
        assert mass_bound(1.0, 1.0, 4 * math.pi, 0.0) == pytest.approx(0.5)

    @given(st.floats(0, 100), st.floats(0, 100), st.floats(0.01, 100), st.floats(0.1, 1e4))
    def test_monotone_in_time(self, t1, dt, M0, A):
        assert mass_bound(t1 + dt, M0, 1.0, A) <= mass_bound(t1, M0, 1.0, A) * (1 + 1e-14)

    def test_check_skipped_without_logistic(self):
        rep = mass_decay_check([_rec(0.0)], Params(mu=0.0))
        assert rep.skipped and rep.passed and "mu = 0" in rep.notice

    def test_check_on_exact_trajectory(self):
        p = Params(A=10.0, mu=1.0)
        hist = [_rec(t, M_zero=mass_bound(t, 2.0, p.mu, p.A)) for t in np.linspace(0, 5, 11)]
        rep = mass_decay_check(hist, p)
        assert rep.pointwise_ok and rep.max_ratio == pytest.approx(1.0)

    def test_check_flags_violation(self):
        p = Params(A=10.0, mu=1.0)
        hist = [_rec(0.0, M_zero=1.0), _rec(100.0, M_zero=1.0)]
        rep = mass_decay_check(hist, p)
        assert not rep.passed and rep.violations[0][0] == 100.0

    def test_integrated_bound(self):
        p = Params(A=1.0, mu=1.0)
        hist = [_rec(0.0, M_zero=1.0, n0_sq=10.0), _rec(1.0, M_zero=0.5, n0_sq=10.0)]
        rep = mass_decay_check(hist, p)
        assert rep.integral_lhs == pytest.approx(10.0)
        assert not rep.integral_ok


class TestDecayFit:
    def test_exponential(self):
        t = np.linspace(0, 10, 50)
        fit = fit_nonzero_decay(t, 3.0 * np.exp(-0.3 * t))
        assert fit.rate == pytest.approx(0.3, rel=1e-10)
        assert fit.r2 == pytest.approx(1.0)
        assert fit.intercept == pytest.approx(math.log(3.0))

    def test_constant_series(self):
        fit = fit_nonzero_decay(np.arange(20.0), np.full(20, 2.0))
        assert fit.rate == pytest.approx(0.0, abs=1e-14) and fit.r2 == 1.0

    def test_window(self):
        t = np.linspace(0, 10, 101)
        v = np.where(t < 5, np.exp(-t), np.exp(-5) * np.exp(-2 * (t - 5)))
        assert fit_nonzero_decay(t, v, window=(6, 10)).rate == pytest.approx(2.0)

    def test_floor_rule_drops_roundoff(self):
        t = np.linspace(0, 40, 41)
        v = np.maximum(np.exp(-t), 1e-16)
        fit = fit_nonzero_decay(t, v, floor=1e-16)
        assert fit.n_used == sum(np.exp(-t) > 1e-14)
        assert fit.rate == pytest.approx(1.0)
        with pytest.raises(ValueError):
            fit_nonzero_decay(t, v, floor=1e-4)

    def test_errors(self):
        with pytest.raises(ValueError):
            fit_nonzero_decay([0, 1], [1.0])
        with pytest.raises(ValueError):
            fit_nonzero_decay(np.arange(5.0), -np.ones(5))


class TestLpLadder:
    def test_constant(self, small_grid):
        f = PhysicalField(small_grid, np.full(small_grid.shape, 3.0))
        vol = small_grid.volume
        lad = lp_ladder(f, 3)
        assert len(lad) == 4
        for j, v in enumerate(lad):
            assert v == pytest.approx(3.0 * vol ** (1 / 2**j))

    def test_increasing_toward_sup_for_peaked_field(self, grid):
        X, Y, Z = grid.mesh()
        f = PhysicalField(grid, np.exp(-10 * (1 - np.cos(X)) - 10 * Y**2) * (1 - Y**2))
        lad = lp_ladder(f, 7)
        normalized = [v / grid.volume ** (1 / 2**j) for j, v in enumerate(lad)]
        assert all(b >= a for a, b in zip(normalized, normalized[1:]))
        assert normalized[-1] <= f.values.max()

    def test_limits(self, small_grid):
        with pytest.raises(ValueError):
            lp_ladder(PhysicalField.zeros(small_grid), 8)
        with pytest.raises(ValueError):
            lp_ladder(PhysicalField.zeros(small_grid), -1)


class TestClassify:
    def test_bounded(self):
        p = Params(t_end=1.0, dt_min=1e-6)
        hist = [_rec(0.0, 1.0), _rec(0.5, 3.0), _rec(1.0, 2.0)]
        assert classify_run(hist, p) == BOUNDED

    def test_blowup(self):
        p = Params(t_end=1.0, dt_min=1e-6, dt_init=1e-6)
        hist = [_rec(0.0, 1.0), _rec(0.2, 5e3, dt=1e-6)]
        assert classify_run(hist, p) == SUSPECTED_BLOWUP

    def test_inconclusive_cases(self):
        p = Params(t_end=1.0, dt_min=1e-6)
        assert classify_run([_rec(0.0, 1.0), _rec(1.0, 50.0)], p) == INCONCLUSIVE
        assert classify_run([_rec(0.0, 1.0), _rec(0.5, 2.0)], p) == INCONCLUSIVE
        assert classify_run([_rec(0.0, 1.0), _rec(0.5, 5e3)], p, dt_floor_hit=False) == INCONCLUSIVE
        assert classify_run([], p) == INCONCLUSIVE

    def test_explicit_flags(self):
        p = Params(t_end=1.0)
        hist = [_rec(0.0, 1.0), _rec(0.5, 1.0)]
        assert classify_run(hist, p, reached_end=True) == BOUNDED
        assert classify_run(hist, p, dt_floor_hit=True, reached_end=True) == INCONCLUSIVE


def _sinx(grid, k):
    X, Y, Z = grid.mesh()
    return PhysicalField(grid, np.sin(k * X) * (1 - Y**2) ** 2 * (1 + 0 * Z))


class TestCatalog:
    def test_fourier_equality_for_unit_wavenumber(self, grid):
        r = check_inequality_catalog([_sinx(grid, 1)]).by_name()
        for j in (1, 2, 3):
            assert r[f"sob_neq_dx{j}"].max_ratio == pytest.approx(1.0, rel=1e-12)
            assert r[f"sob_neq_dx{j}"].passed

    def test_fourier_ratio_for_wavenumber_two(self, grid):
        r = check_inequality_catalog([_sinx(grid, 2)]).by_name()
        for j in (1, 2, 3):
            assert r[f"sob_neq_dx{j}"].max_ratio == pytest.approx(4.0 ** (-j), rel=1e-12)
        assert r["sob_dx_dx2"].max_ratio == pytest.approx(0.25, rel=1e-12)

    def test_wall_violations_excluded(self, grid):
        X, Y, Z = grid.mesh()
        f = PhysicalField(grid, np.cos(X) + 1.0)
        rep = check_inequality_catalog([f])
        assert any("excluded" in n for n in rep.notices)

    def test_random_corpus_passes(self, rng):
        g = Grid(8, 17, 8)
        fields = [random_smooth_field(g, rng, kmax=2, ydeg=6) for _ in range(6)]
        rep = check_inequality_catalog(fields)
        assert rep.passed, [r for r in rep.results if not r.passed]
        kinds = {r.kind for r in rep.results}
        assert kinds == {"exact", "fitted"}

    def test_argument_checks(self, small_grid):
        f = [PhysicalField.zeros(small_grid)]
        with pytest.raises(ValueError):
            check_inequality_catalog([])
        with pytest.raises(ValueError):
            check_inequality_catalog(f, alpha=0.5)
        with pytest.raises(ValueError):
            check_inequality_catalog(f, tau=0.0)


class TestEnergies:
    def test_zero_state(self, small_grid):
        p = Params(A=10.0)
        s = make_state(small_grid, np.zeros(small_grid.shape))
        rec = compute_energies(s, new_accumulator(small_grid, p), p)
        for name in ("M_total", "M_zero", "E11", "E12", "E13", "E21", "E22", "E3", "linf_n", "l2_n_neq"):
            assert getattr(rec, name) == 0.0
        assert len(rec.row()) == len(CSV_COLUMNS_V1)

    def test_x_independent_density(self, grid):
        X, Y, Z = grid.mesh()
        nv = (1 - Y**2) * (2 + np.cos(Z)) + 0 * X
        p = Params(A=10.0)
        s = make_state(grid, nv)
        rec = compute_energies(s, new_accumulator(grid, p), p)
        wyz = grid.weights_yz
        n0 = nv[0]
        # E11 is the full-domain norm, M_zero the cross-section one
        assert rec.E11 == pytest.approx(math.sqrt(2 * math.pi * np.sum(wyz * n0**2)))
        assert rec.M_zero == pytest.approx(np.sum(wyz * n0))
        assert rec.M_total == pytest.approx(2 * math.pi * rec.M_zero)
        assert rec.l2_n_neq == pytest.approx(0.0, abs=1e-12)
        assert rec.E21 == pytest.approx(0.0, abs=1e-12)
        assert rec.E3 == pytest.approx(nv.max())

    def test_unrescaled_energies_nan(self, small_grid):
        p = Params(A=0.0, dt_init=1e-3, dt_max=1e-2)
        s = make_state(small_grid, np.zeros(small_grid.shape))
        rec = compute_energies(s, new_accumulator(small_grid, p), p, ladder=2)
        assert math.isnan(rec.E21) and math.isnan(rec.E13)
        assert rec.lp_ladder == [0.0, 0.0, 0.0]

    def test_energies_nondecreasing_in_time(self, small_grid, rng):
        p = Params(A=20.0, mu=0.1)
        s = make_state(small_grid, np.abs(random_smooth_field(small_grid, rng).values))
        acc = new_accumulator(small_grid, p)
        prev = None
        for _ in range(4):
            rec = compute_energies(s, acc, p)
            if prev is not None:
                for name in ("E11", "E12", "E13", "E21", "E22", "E3"):
                    assert getattr(rec, name) >= getattr(prev, name) * (1 - 1e-12)
            prev = rec
            s = step(s, p, dt=0.05)

    def test_accumulator_ahead(self, small_grid):
        p = Params(A=10.0)
        acc = new_accumulator(small_grid, p)
        s = make_state(small_grid, np.zeros(small_grid.shape), t=1.0)
        compute_energies(s, acc, p)
        with pytest.raises(AccumulatorTimeError):
            compute_energies(make_state(small_grid, np.zeros(small_grid.shape)), acc, p)
