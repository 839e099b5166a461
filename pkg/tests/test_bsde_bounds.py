import itertools
import math

import numpy as np
import pytest

from esscher2.bsde_bounds import (
    Claim,
    bang_bang_field,
    bounds,
    class_compare,
    default_schedule,
    interval_sandwich,
    lower_via_duality,
    moment_diagnostic,
    scheme_margin,
    solve_n,
    solve_psi,
)
from esscher2.esscher_solver import EsscherClass
from esscher2.lattice import build
from esscher2.market_model import MarketModel


class TestClaim:
    def test_parse_forms(self):
        assert Claim.parse("call,K=100") == Claim.call(100.0)
        assert Claim.parse("capped_call,K=100,cap=25") == Claim.capped_call(100.0, 25.0)
        assert Claim.parse("constant,c=7") == Claim.constant(7.0)
        assert Claim.parse("forward") == Claim.forward()
        with pytest.raises(ValueError):
            Claim.parse("lookback,K=1")

    def test_payoffs(self):
        s = np.array([80.0, 100.0, 130.0])
        assert np.array_equal(Claim.call(100.0).payoff(s), [0.0, 0.0, 30.0])
        assert np.array_equal(Claim.put(100.0).payoff(s), [20.0, 0.0, 0.0])
        assert np.array_equal(Claim.digital(100.0).payoff(s), [0.0, 0.0, 1.0])
        assert np.array_equal(Claim.capped_call(100.0, 25.0).payoff(s), [0.0, 0.0, 25.0])
        assert np.array_equal(Claim.forward().payoff(s), s)
        assert np.array_equal(Claim.constant(3.0).payoff(s), [3.0, 3.0, 3.0])

    def test_bounded_flags(self):
        assert Claim.put(1.0).bounded and Claim.digital(1.0).bounded
        assert Claim.constant(1.0).bounded and Claim.capped_call(1.0, 1.0).bounded
        assert not Claim.call(1.0).bounded and not Claim.forward().bounded


class TestSolvePsi:
    def test_constant_claim_discounts_exactly(self, baseline, lat120):
        sol = solve_psi(lat120, Claim.constant(5.0), 0.7, collect=False)
        target = 5.0 * math.exp(-baseline.segments[0].r * baseline.horizon)
        assert sol.y0 == pytest.approx(target, rel=1e-12)

    def test_forward_zero_rate_order_h(self, r0_model):
        for m in (60, 120):
            lat = build(r0_model, EsscherClass.LINEAR, m)
            for psi in (-3.0, 0.0, 3.0):
                sol = solve_psi(lat, Claim.forward(), psi, collect=False)
                assert abs(sol.y0 - r0_model.s0) <= 1.0 * r0_model.s0 / m

    def test_per_segment_and_per_step_psi(self, multiseg_model):
        lat = build(multiseg_model, EsscherClass.LINEAR, 150)
        claim = Claim.capped_call(100.0, 30.0)
        by_segment = solve_psi(lat, claim, [0.5, -1.0, 2.0], collect=False)
        per_step = np.array([0.5, -1.0, 2.0])[lat.coeffs.segment_index]
        by_step = solve_psi(lat, claim, per_step, collect=False)
        assert by_segment.y0 == by_step.y0

    def test_potential_representation_zero_rate(self, r0_model):
        # E0[Y_t] telescopes to E0[xi] + sum_{s>=t} h*E0[g_s] when r = 0
        lat = build(r0_model, EsscherClass.LINEAR, 60)
        sol = solve_psi(lat, Claim.call(100.0), 1.5, collect=False)
        tail = np.concatenate([np.cumsum((lat.h * sol.g_agg)[::-1])[::-1], [0.0]])
        assert np.allclose(sol.y_agg, sol.y_agg[-1] + tail, atol=1e-9)

    def test_node_field_psi_matches_constant(self, lat120):
        claim = Claim.put(100.0)
        const = solve_psi(lat120, claim, 2.0)
        field = [np.full((i + 1, i + 1), 2.0) for i in range(lat120.n_steps)]
        fielded = solve_psi(lat120, claim, field)
        assert all(np.array_equal(a, b) for a, b in zip(const.Y, fielded.Y))


class TestSolveN:
    def test_n0_equals_psi0_bitwise(self, lat120):
        claim = Claim.call(100.0)
        a = solve_psi(lat120, claim, 0.0)
        b = solve_n(lat120, claim, 0, "upper")
        c = solve_n(lat120, claim, 0, "lower")
        assert all(np.array_equal(x, y) for x, y in zip(a.Y, b.Y))
        assert all(np.array_equal(x, y) for x, y in zip(a.Y, c.Y))

    @pytest.mark.parametrize("side", ["upper", "lower"])
    @pytest.mark.parametrize("n", [3, 16])
    def test_bang_bang_fixed_point_bitwise(self, lat120, side, n):
        claim = Claim.call(100.0)
        sol = solve_n(lat120, claim, n, side)
        field = bang_bang_field(lat120, sol, n, side)
        replay = solve_psi(lat120, claim, field)
        assert all(np.array_equal(a, b) for a, b in zip(sol.Y, replay.Y))

    def test_k_increments_nonnegative(self, lat120):
        sol = solve_n(lat120, Claim.call(100.0), 8, "upper")
        assert all(np.all(k >= 0.0) for k in sol.k_inc)
        assert np.all(np.diff(sol.k_curve) >= 0.0)

    def test_skorokhod_exactly_zero(self, lat120):
        for side in ("upper", "lower"):
            for n in (1, 8, 64):
                sol = solve_n(lat120, Claim.call(100.0), n, side, collect=False)
                assert sol.skorokhod == 0.0

    def test_monotone_in_n_at_root(self, lat120):
        claim = Claim.digital(100.0)
        uppers = [solve_n(lat120, claim, n, "upper", collect=False).y0
                  for n in (0, 1, 2, 4, 8, 16)]
        lowers = [solve_n(lat120, claim, n, "lower", collect=False).y0
                  for n in (0, 1, 2, 4, 8, 16)]
        assert all(a <= b for a, b in zip(uppers, uppers[1:]))
        assert all(a >= b for a, b in zip(lowers, lowers[1:]))

    def test_monotone_per_node_when_margin_positive(self, lat120):
        claim = Claim.call(100.0)
        a = solve_n(lat120, claim, 4, "upper")
        b = solve_n(lat120, claim, 8, "upper")
        assert min(a.mono_margin, b.mono_margin) > 0.0
        assert all(np.all(yb >= ya - 1e-12) for ya, yb in zip(a.Y, b.Y))

    def test_supermartingale_gap_aggregate(self, lat120):
        # E0[Y^(n+m)_t - Y^(n)_t] is nonincreasing in t
        claim = Claim.call(100.0)
        a = solve_n(lat120, claim, 2, "upper", collect=False)
        b = solve_n(lat120, claim, 16, "upper", collect=False)
        gap = b.y_agg - a.y_agg
        assert np.all(np.diff(gap) <= 1e-12)
        assert gap[-1] == pytest.approx(0.0, abs=1e-15)

    def test_violation_decreases_with_n(self, lat120):
        claim = Claim.call(100.0)
        v = [solve_n(lat120, claim, n, "upper", collect=False).violation
             for n in (1, 4, 16, 64, 256)]
        assert all(a >= b for a, b in zip(v, v[1:]))


class TestDuality:
    @pytest.mark.parametrize("claim", [Claim.call(100.0), Claim.put(100.0),
                                       Claim.digital(100.0)])
    def test_lower_equals_negated_upper(self, lat120, claim):
        for n in (0, 1, 4, 16, 64):
            direct = solve_n(lat120, claim, n, "lower")
            dual = lower_via_duality(lat120, claim, n)
            worst = max(float(np.max(np.abs(a - b)))
                        for a, b in zip(direct.Y, dual.Y))
            assert worst <= 1e-10
            assert abs(direct.y0 - dual.y0) <= 1e-10

    def test_constant_claim(self, baseline, lat120):
        dual = lower_via_duality(lat120, Claim.constant(3.0), 4, collect=False)
        assert dual.y0 == pytest.approx(
            3.0 * math.exp(-baseline.segments[0].r), rel=1e-12)


class TestEnumerationOracle:
    def test_two_step_exhaustive_sup(self, baseline):
        seg = baseline.segments[0]
        short = MarketModel.single(s0=100.0, horizon=0.5, r=seg.r, b=seg.b,
                                   sigma=seg.sigma, gamma=seg.gamma, lam=seg.lam)
        lat2 = build(short, EsscherClass.LINEAR, 2)
        claim = Claim.call(100.0)
        n = 3
        envelope = solve_n(lat2, claim, n, "upper", collect=False)
        best = -math.inf
        for assign in itertools.product((-float(n), 0.0, float(n)), repeat=5):
            field = [np.full((1, 1), assign[0]),
                     np.array([[assign[1], assign[2]], [assign[3], assign[4]]])]
            best = max(best, solve_psi(lat2, claim, field, collect=False).y0)
        assert abs(best - envelope.y0) <= 1e-8

    def test_two_step_exhaustive_inf(self, baseline):
        seg = baseline.segments[0]
        short = MarketModel.single(s0=100.0, horizon=0.5, r=seg.r, b=seg.b,
                                   sigma=seg.sigma, gamma=seg.gamma, lam=seg.lam)
        lat2 = build(short, EsscherClass.LINEAR, 2)
        claim = Claim.digital(100.0)
        n = 3
        envelope = solve_n(lat2, claim, n, "lower", collect=False)
        best = math.inf
        for assign in itertools.product((-float(n), 0.0, float(n)), repeat=5):
            field = [np.full((1, 1), assign[0]),
                     np.array([[assign[1], assign[2]], [assign[3], assign[4]]])]
            best = min(best, solve_psi(lat2, claim, field, collect=False).y0)
        assert abs(best - envelope.y0) <= 1e-8


class TestBounds:
    def test_constant_claim_collapses_at_n0(self, baseline, lat120):
        report = bounds(lat120, Claim.constant(5.0))
        assert report.ns == (0, 1)
        assert report.converged_upper and report.converged_lower
        assert report.y_up_final == report.y_low_final
        assert report.y_up_final == pytest.approx(
            5.0 * math.exp(-baseline.segments[0].r), rel=1e-12)

    def test_forward_zero_rate_collapses(self, r0_model):
        lat = build(r0_model, EsscherClass.LINEAR, 120)
        report = bounds(lat, Claim.forward())
        assert report.converged_upper and report.converged_lower
        gap = report.y_up_final - report.y_low_final
        assert 0.0 <= gap <= 0.1 * r0_model.s0 * lat.h
        assert abs(report.y_up_final - r0_model.s0) <= 1.0 * r0_model.s0 * lat.h

    def test_call_schedule_truncates_with_flag(self, lat120):
        report = bounds(lat120, Claim.call(100.0))
        assert report.truncated_at is not None
        assert not report.converged_upper
        assert all(m >= 0.0 for m in report.margins_upper)
        assert all(a <= b for a, b in zip(report.y_upper, report.y_upper[1:]))
        assert all(a >= b for a, b in zip(report.y_lower, report.y_lower[1:]))
        assert all(s == 0.0 for s in report.sk_upper + report.sk_lower)

    def test_unenforced_schedule_runs_everything(self, lat120):
        report = bounds(lat120, Claim.put(100.0), n_schedule=[0, 2], tol=1e-12,
                        enforce_margin=False)
        assert report.truncated_at is None
        assert report.ns == (0, 2)

    def test_report_round_trips_to_dict(self, lat120):
        report = bounds(lat120, Claim.digital(100.0), n_schedule=[0, 1, 2])
        payload = report.to_dict()
        assert payload["Y_up"] == report.y_up_final
        assert len(payload["n_schedule"]) == len(payload["Y_upper"])

    def test_strict_interval_for_call(self, lat120):
        report = bounds(lat120, Claim.call(100.0), n_schedule=[0, 1, 2, 4, 8, 16])
        y0 = report.y_upper[0]
        assert report.y_low_final < y0 < report.y_up_final


class TestMomentDiagnostic:
    def test_bounded_claims_skip(self, lat120):
        report = bounds(lat120, Claim.put(100.0), n_schedule=[0, 1])
        assert report.moment_diag is None

    def test_call_recorded_finite(self, lat120):
        diag = moment_diagnostic(lat120, Claim.call(100.0))
        assert diag["admissible"]
        assert all(math.isfinite(v) for v in diag["pos"])
        assert all(v == 0.0 for v in diag["neg"])  # call payoff is nonnegative


class TestSandwich:
    def test_call_grid_inside(self, lat120):
        claim = Claim.call(100.0)
        report = bounds(lat120, claim, n_schedule=default_schedule(64))
        result = interval_sandwich(lat120, claim, range(-8, 9), report=report)
        assert result["inside"]
        values = np.array(sorted(result["psi_values"].values()))
        assert values[0] >= result["Y_inf"] - result["eps"]
        assert values[-1] <= result["Y_up"] + result["eps"]

    def test_constant_collapse(self, lat120):
        claim = Claim.constant(2.0)
        result = interval_sandwich(lat120, claim, (-3.0, 0.0, 3.0))
        vals = set(result["psi_values"].values())
        assert len(vals) == 1
        assert result["Y_inf"] == result["Y_up"] == vals.pop()

    def test_psi_outside_converged_range_still_inside(self, lat120):
        claim = Claim.call(100.0)
        report = bounds(lat120, claim, n_schedule=default_schedule(64))
        result = interval_sandwich(lat120, claim, (50.0, -50.0), report=report)
        assert result["inside"]


class TestClassCompare:
    def test_reports_structure(self, baseline):
        out = class_compare(baseline, Claim.capped_call(100.0, 25.0),
                            steps_list=(30, 60), n_schedule=[0, 1, 2, 4])
        assert len(out["upper_gap"]) == 2
        assert all(math.isfinite(g) for g in out["upper_gap"] + out["lower_gap"])

    def test_constant_claim_classes_agree_exactly(self, baseline):
        out = class_compare(baseline, Claim.constant(4.0), steps_list=(30,),
                            n_schedule=[0, 1])
        assert out["upper_gap"][0] == 0.0
        assert out["lower_gap"][0] == 0.0

    def test_forward_zero_rate_both_near_s0(self, r0_model):
        out = class_compare(r0_model, Claim.forward(), steps_list=(60,))
        for value in out["upper"][60].values():
            assert abs(value - r0_model.s0) <= 1.0 * r0_model.s0 / 60


class TestSchemeMargin:
    def test_margin_decreases_with_n(self, lat120):
        margins = [scheme_margin(lat120, n) for n in (0, 16, 256, 1024)]
        assert all(a > b for a, b in zip(margins, margins[1:]))
        assert margins[0] == pytest.approx(1.0, abs=1e-12)
        assert margins[-1] < 0.0
