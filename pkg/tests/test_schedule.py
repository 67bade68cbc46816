import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

import oracles
from splatdistill.errors import FitWarning, ParamError
from splatdistill.schedule import (
    PhaseTable, ScheduleParams, SearchGrid, fit_schedule, phase_masses, phase_occupancy, sample_timestep,
    t_curve, w_dg,
)

# Minimum of the phase-mass objective on a grid four times finer than the
# fitter's coarse grid (s1, s2 in [10, 400] step 2.5, T in [20, 800] step 2.5),
# computed with oracles.fine_grid_objective.
FINE_GRID_OBJECTIVE = 1.048304332105685e-4


@pytest.fixture(scope="module")
def fitted():
    table = PhaseTable()
    return table, fit_schedule(table)


class TestPhaseTable:
    def test_defaults(self):
        t = PhaseTable()
        assert t.total_steps == 2400
        assert t.phase_of(20) == 0 and t.phase_of(349) == 0 and t.phase_of(350) == 1 and t.phase_of(800) == 2

    @pytest.mark.parametrize("kwargs", [
        dict(boundaries=(20, 20, 450, 800)),
        dict(boundaries=(0, 350, 450, 800)),
        dict(budgets=(900, 500)),
        dict(budgets=(900, 0, 1000)),
        dict(lower_bounds=(20, 400, 400)),
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ParamError):
            PhaseTable(**kwargs)

    def test_scaled_keeps_total(self):
        t = PhaseTable().scaled(300)
        assert t.total_steps == 300
        assert t.budgets == (112, 62, 126)
        assert t.warmup_steps == 62

    def test_dict_round_trip(self):
        t = PhaseTable(warmup_steps=10)
        assert PhaseTable.from_dict(t.to_dict()) == t


class TestWeight:
    def test_equal_spreads_agree_at_mode(self):
        p = ScheduleParams(50.0, 50.0, 400.0)
        raw = w_dg(400, p) * p.Z
        assert raw == pytest.approx(1 / math.sqrt(2 * math.pi * 50.0**2))

    def test_mode_uses_left_branch(self):
        p = ScheduleParams(30.0, 90.0, 400.0)
        assert w_dg(400, p) * p.Z == pytest.approx(1 / math.sqrt(2 * math.pi * 30.0**2))

    @given(st.floats(5, 500), st.floats(5, 500), st.floats(1, 1000))
    def test_normalized(self, s1, s2, T):
        p = ScheduleParams(s1, s2, T)
        assert abs(np.sum(w_dg(np.arange(1, 1001), p)) - 1.0) < 1e-9

    def test_matches_oracle_bell(self):
        p = ScheduleParams(120.0, 45.0, 333.3)
        t = np.arange(1, 1001)
        ref = oracles.dual_bell(t, 120.0, 45.0, 333.3)
        np.testing.assert_allclose(w_dg(t, p), ref / ref.sum(), rtol=1e-12)

    def test_errors(self):
        with pytest.raises(ParamError):
            ScheduleParams(0.0, 10.0, 100.0)
        with pytest.raises(ParamError):
            w_dg(0, ScheduleParams(10.0, 10.0, 100.0))


class TestFit:
    def test_phase_masses_match_budgets(self, fitted):
        table, p = fitted
        np.testing.assert_allclose(phase_masses(p, table), [0.375, 0.2083, 0.4167], atol=0.02)

    def test_not_worse_than_fine_grid(self, fitted):
        _, p = fitted
        assert p.objective <= FINE_GRID_OBJECTIVE + 1e-6
        assert p.warning is None

    def test_deterministic(self, fitted):
        table, p = fitted
        q = fit_schedule(table)
        assert (q.s1, q.s2, q.T, q.objective) == (p.s1, p.s2, p.T, p.objective)

    def test_single_phase(self):
        table = PhaseTable(boundaries=(1, 1000), budgets=(100,), lower_bounds=(1,), warmup_steps=0, warmup_floor=1)
        p = fit_schedule(table)
        assert np.isfinite([p.s1, p.s2, p.T]).all()
        assert p.objective < 1e-12

    def test_poor_fit_warns(self):
        # a single bump cannot put half its mass at each end and little between
        table = PhaseTable(boundaries=(20, 40, 960, 980), budgets=(49, 2, 49), lower_bounds=(20, 40, 960))
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            p = fit_schedule(table, SearchGrid(refine_iters=5))
        assert p.objective > 0.01 and p.warning
        assert any(issubclass(w.category, FitWarning) for w in caught)

    def test_bad_grid(self):
        with pytest.raises(ParamError):
            fit_schedule(PhaseTable(), SearchGrid(s_min=0))


class TestCurve:
    def test_matches_prefix_sum_oracle(self, fitted):
        table, p = fitted
        ref = oracles.tail_inversion(list(p.weights()), table.total_steps, table.t_min, table.t_max)
        np.testing.assert_array_equal(t_curve(p, table), ref)

    def test_endpoints_and_monotone(self, fitted):
        table, p = fitted
        c = t_curve(p, table)
        assert len(c) == 2400
        assert c[0] == 800 and c[-1] == 20
        assert np.all(np.diff(c) <= 0)

    def test_occupancy_within_three_percent(self, fitted):
        table, p = fitted
        occ = phase_occupancy(t_curve(p, table), table)
        assert np.all(np.abs(occ - np.array(table.budgets)) <= 0.03 * 2400)

    def test_offset_shifts_and_clamps(self, fitted):
        table, p = fitted
        raw = oracles.tail_inversion(list(p.weights()), table.total_steps, 1, 1000)
        shifted = t_curve(p, table, offset=5)
        np.testing.assert_array_equal(shifted, np.clip(raw + 5, 20, 800))

    @given(st.floats(10, 400), st.floats(10, 400), st.floats(20, 800))
    def test_monotone_for_any_params(self, s1, s2, T):
        table = PhaseTable()
        c = t_curve(ScheduleParams(s1, s2, T), table, total_steps=300)
        assert np.all(np.diff(c) <= 0) and c.min() >= 20 and c.max() <= 800


class TestSampling:
    def test_warmup_range(self, fitted):
        table, p = fitted
        curve = t_curve(p, table)
        rng = np.random.default_rng(0)
        draws = [sample_timestep(100, curve, table, rng) for _ in range(2000)]
        assert min(draws) >= 500 and max(draws) <= 800

    def test_degenerate_interval(self, fitted):
        table, _ = fitted
        curve = np.full(2400, 20)
        assert sample_timestep(2400, curve, table, np.random.default_rng(0)) == 20

    def test_below_bound_returns_bound(self):
        table = PhaseTable()
        curve = np.full(2400, 360)  # in the middle range, whose floor is 150
        rng = np.random.default_rng(1)
        draws = {sample_timestep(2000, curve, table, rng) for _ in range(500)}
        assert min(draws) >= 150 and max(draws) <= 360

    def test_uniform_chi_square(self, fitted):
        table, p = fitted
        curve = t_curve(p, table)
        i = 1200
        lo, hi = table.lower_bounds[table.phase_of(int(curve[i - 1]))], int(curve[i - 1])
        rng = np.random.default_rng(42)
        draws = np.array([sample_timestep(i, curve, table, rng) for _ in range(100_000)])
        counts = np.bincount(draws - lo, minlength=hi - lo + 1)
        assert len(counts) == hi - lo + 1
        assert stats.chisquare(counts).pvalue > 0.01

    @given(st.integers(1, 2400), st.integers(0, 2**32 - 1))
    def test_never_below_phase_floor(self, i, seed):
        table = PhaseTable()
        p = ScheduleParams(245.66, 160.98, 408.0)
        curve = t_curve(p, table)
        t = sample_timestep(i, curve, table, np.random.default_rng(seed))
        floor = table.warmup_floor if i < table.warmup_steps else table.lower_bounds[table.phase_of(int(curve[i - 1]))]
        assert floor <= t <= 800

    def test_step_out_of_range(self, fitted):
        table, p = fitted
        with pytest.raises(ParamError):
            sample_timestep(0, t_curve(p, table), table, np.random.default_rng(0))
