import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from esscher2.esscher_solver import (
    EsscherClass,
    EsscherSpec,
    OneSidedJumpsError,
    RootConfig,
    cp_residual_exponential,
    cp_residual_linear,
    eta,
    eta_residual,
    eta_star,
    kappa_exponential,
    kappa_linear,
    minimize_theta,
    phi,
    phi_inverse,
    theta_root_cp_exponential,
    theta_root_cp_linear,
    zeta,
)
from esscher2.market_model import JumpLaw, MarketModel

BOTH_CLASSES = [EsscherClass.LINEAR, EsscherClass.EXPONENTIAL]


def bisect(f, lo, hi, iters=200):
    """Independent bisection oracle; assumes a sign change on [lo, hi]."""
    flo = f(lo)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if (f(mid) < 0.0) == (flo < 0.0):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@pytest.fixture(scope="module")
def seg(baseline):
    return baseline.segments[0]


class TestPhi:
    def test_at_zero(self, seg):
        for klass in BOTH_CLASSES:
            assert phi(0.0, seg, klass) == seg.lam * seg.gamma_tilde * zeta(seg, klass)

    def test_linear_term_dominates_left_tail(self, seg):
        assert phi(-50.0, seg, EsscherClass.LINEAR) == pytest.approx(
            seg.sigma**2 * -50.0, rel=1e-12)

    def test_value_at_one(self, seg):
        gt = seg.gamma_tilde
        assert phi(1.0, seg, EsscherClass.LINEAR) == pytest.approx(
            0.04 + gt * gt * math.e, rel=1e-15)

    def test_strictly_increasing(self, seg):
        xs = np.linspace(-30, 10, 200)
        vals = [phi(float(x), seg, EsscherClass.LINEAR) for x in xs]
        assert all(a < b for a, b in zip(vals, vals[1:]))


class TestPhiInverse:
    def test_zero_image(self, seg):
        for klass in BOTH_CLASSES:
            y0 = seg.lam * seg.gamma_tilde * zeta(seg, klass)
            assert abs(phi_inverse(y0, seg, klass)) < 1e-14

    def test_round_trip(self, seg):
        y = phi(5.0, seg, EsscherClass.LINEAR)
        assert phi_inverse(y, seg, EsscherClass.LINEAR) == pytest.approx(5.0, abs=1e-12)

    def test_huge_target_matches_bisection(self, seg):
        klass = EsscherClass.LINEAR
        x = phi_inverse(1e6, seg, klass)
        oracle = bisect(lambda t: phi(t, seg, klass) - 1e6, 0.0, 100.0)
        assert x == pytest.approx(oracle, abs=1e-10)

    @given(y=st.floats(-1e3, 1e3))
    @settings(max_examples=60, deadline=None)
    def test_monotone_and_consistent(self, seg, y):
        x = phi_inverse(y, seg, EsscherClass.EXPONENTIAL)
        assert abs(phi(x, seg, EsscherClass.EXPONENTIAL) - y) <= 1e-12 * max(1.0, abs(y))


class TestEta:
    def test_zero_when_r_equals_b_tilde(self, seg):
        for klass in BOTH_CLASSES:
            assert abs(eta(0.0, seg, klass)) < 1e-14

    @pytest.mark.parametrize("klass", BOTH_CLASSES)
    def test_residual_on_log_grid(self, seg, klass):
        grid = np.concatenate([-np.logspace(4, -2, 20), [0.0], np.logspace(-2, 4, 20)])
        for p in grid:
            e = eta(float(p), seg, klass)
            assert abs(eta_residual(e, float(p), seg, klass)) <= 1e-10

    @pytest.mark.parametrize("klass", BOTH_CLASSES)
    def test_strictly_decreasing_resolvable_range(self, seg, klass):
        # Beyond |psi| ~ 3e3 the true decrements fall below one ulp of eta; on
        # the resolvable range the monotonicity is strict in floats as well.
        grid = np.concatenate([-np.logspace(3, -2, 15), [0.0], np.logspace(-2, 3, 15)])
        gt = seg.gamma_tilde
        vals = [eta(float(p), seg, klass) / gt for p in grid]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    @given(psi1=st.floats(-100, 100), psi2=st.floats(-100, 100))
    @settings(max_examples=60, deadline=None)
    def test_monotone_pairs(self, seg, psi1, psi2):
        if abs(psi1 - psi2) < 1e-6:
            return
        lo, hi = min(psi1, psi2), max(psi1, psi2)
        gt = seg.gamma_tilde
        assert eta(lo, seg, EsscherClass.LINEAR) / gt > eta(hi, seg, EsscherClass.LINEAR) / gt

    @pytest.mark.parametrize("klass", BOTH_CLASSES)
    def test_limit_negative_infinity(self, seg, klass):
        gt = seg.gamma_tilde
        assert abs(eta(-1e6, seg, klass) / gt - eta_star(seg) / gt) <= 1e-3

    @pytest.mark.parametrize("klass", BOTH_CLASSES)
    def test_large_n_slope(self, seg, klass):
        # -eta(n)/(n gamma~) -> zeta/gamma~ with an O(log n / n) correction:
        # the gap shrinks under n-doubling and is within 1% by n = 1e6.
        gt = seg.gamma_tilde
        target = zeta(seg, klass) / gt
        gaps = [abs(-eta(float(n), seg, klass) / (n * gt) - target)
                for n in (1e4, 1e5, 1e6)]
        assert gaps[0] > gaps[1] > gaps[2]
        assert gaps[2] <= 0.01 * abs(target)

    @pytest.mark.parametrize("klass", BOTH_CLASSES)
    def test_upper_bound_on_decrement(self, seg, klass):
        gt = seg.gamma_tilde
        e0 = eta(0.0, seg, klass)
        for psi in (0.5, 2.0, 10.0, 100.0):
            lhs = (e0 - eta(psi, seg, klass)) / gt
            assert lhs <= zeta(seg, klass) / gt * psi + 1e-12

    def test_discount_flag(self, seg):
        # with the flag off, r is dropped: baseline has r = b~, so the
        # rate-free root at psi=0 is no longer zero
        assert abs(eta(0.0, seg, EsscherClass.LINEAR, discount=False)) > 1e-3

    def test_eta_star_values(self, seg):
        # r = b~ here, so eta* = lam*gamma~/sigma^2
        assert eta_star(seg) == pytest.approx(seg.lam * seg.gamma_tilde / seg.sigma**2,
                                              rel=1e-14)
        assert eta_star(seg, discount=False) == pytest.approx(
            (seg.lam * seg.gamma_tilde - seg.b_tilde) / seg.sigma**2, rel=1e-14)


class TestThetaRootsCp:
    def test_exponential_two_point_closed_form(self):
        for a in (0.1, 0.3, 1.0):
            law = JumpLaw.two_point(a)
            for psi in (-2.0, 0.0, 2.0):
                assert theta_root_cp_exponential(psi, law) == pytest.approx(-0.5, abs=1e-12)

    def test_linear_two_point_matches_bisection(self, two_point_law):
        for psi in (0.0, 1.0):
            root = theta_root_cp_linear(psi, two_point_law)
            oracle = bisect(lambda t: cp_residual_linear(t, psi, two_point_law), -20.0, 20.0)
            assert root == pytest.approx(oracle, abs=1e-10)
            assert abs(cp_residual_linear(root, psi, two_point_law)) <= 1e-12
        assert theta_root_cp_linear(1.0, two_point_law) != \
            theta_root_cp_linear(0.0, two_point_law)

    def test_already_risk_neutral_law(self):
        # law with E[e^J] = 1: atoms {a, -a} reweighted
        a = 0.3
        p_up = (1.0 - math.exp(-a)) / (math.exp(a) - math.exp(-a))
        law = JumpLaw.atoms([(a, p_up), (-a, 1.0 - p_up)])
        assert abs(law.expect(lambda x: np.expm1(x))) < 1e-16
        assert abs(theta_root_cp_linear(0.0, law)) < 1e-12
        assert abs(theta_root_cp_exponential(0.0, law)) < 1e-12

    def test_gerber_shiu_reduction_normal_law(self):
        # psi=0 exponential-class root equals the classical Esscher parameter
        # from an independent Newton solve on E[(e^J - 1) e^{theta J}] = 0.
        law = JumpLaw.normal(-0.05, 0.1, n=128)
        root = theta_root_cp_exponential(0.0, law)
        th = 0.0
        for _ in range(50):
            f = law.expect(lambda x: np.expm1(x) * np.exp(th * x))
            fp = law.expect(lambda x: x * np.expm1(x) * np.exp(th * x))
            th -= f / fp
        assert root == pytest.approx(th, abs=1e-10)

    def test_one_sided_law_rejected(self):
        law = JumpLaw.atoms([(0.1, 0.4), (0.3, 0.6)])
        with pytest.raises(OneSidedJumpsError):
            theta_root_cp_linear(0.0, law)

    @given(psi=st.floats(-3.0, 3.0))
    @settings(max_examples=40, deadline=None)
    def test_residual_increasing_in_theta(self, two_point_law, psi):
        root = theta_root_cp_exponential(psi, two_point_law)
        below = cp_residual_exponential(root - 0.5, psi, two_point_law)
        above = cp_residual_exponential(root + 0.5, psi, two_point_law)
        assert below < 0 < above


class TestKappa:
    def test_zero_parameters(self, two_point_law):
        assert kappa_exponential(0.0, 0.0, two_point_law) == 0.0
        assert kappa_linear(0.0, 0.0, two_point_law) == pytest.approx(0.0, abs=1e-16)

    def test_exponential_cosh_form(self, two_point_law):
        assert kappa_exponential(1.0, 0.0, two_point_law) == pytest.approx(
            math.cosh(0.3) - 1.0, rel=1e-15)

    def test_negative_psi_range(self, two_point_law):
        v = kappa_exponential(0.0, -3.0, two_point_law)
        assert -1.0 < v <= 0.0

    def test_factored_identity(self, two_point_law):
        for th in (-1.0, -0.5, 0.0, 0.5, 1.0):
            for ps in (-1.0, -0.5, 0.0, 0.5, 1.0):
                direct = two_point_law.expect(
                    lambda x: np.exp(th * np.expm1(x) + ps * np.expm1(x) ** 2)) - 1.0
                assert abs(kappa_linear(th, ps, two_point_law) - direct) <= 1e-13

    def test_above_minus_one_at_root(self, two_point_law):
        th = theta_root_cp_linear(0.0, two_point_law)
        assert kappa_linear(th, 0.0, two_point_law) > -1.0

    def test_overflow_flagged(self, two_point_law):
        with pytest.raises(OverflowError):
            kappa_exponential(0.0, 1e5, two_point_law)


class TestMinimize:
    def test_jump_diffusion_matches_rate_free_root(self, baseline):
        seg = baseline.segments[0]
        for klass in BOTH_CLASSES:
            for psi in (-1.0, 0.0, 2.0):
                th_hat = minimize_theta(psi, klass=klass, segment=seg)
                root = eta(psi, seg, klass, discount=False)
                assert th_hat == pytest.approx(root, abs=1e-7)

    def test_zero_drift_gives_zero(self):
        b = -(0.5 * 0.2**2 + 1.0 * (math.expm1(0.1) - 0.1))  # b~ = 0
        m = MarketModel.single(s0=100.0, horizon=1.0, r=0.0, b=b,
                               sigma=0.2, gamma=0.1, lam=1.0)
        th_hat = minimize_theta(0.0, klass=EsscherClass.LINEAR, segment=m.segments[0])
        assert th_hat == pytest.approx(0.0, abs=1e-7)

    def test_compound_poisson_matches_roots(self, two_point_law):
        th_hat = minimize_theta(0.7, klass=EsscherClass.EXPONENTIAL, law=two_point_law)
        assert th_hat == pytest.approx(-0.5, abs=1e-7)
        th_lin = minimize_theta(0.7, klass=EsscherClass.LINEAR, law=two_point_law)
        assert th_lin == pytest.approx(theta_root_cp_linear(0.7, two_point_law), abs=1e-7)

    def test_objective_convexity(self, two_point_law):
        y = np.expm1(two_point_law.x)

        def objective(th, ps=0.5):
            return float(np.dot(two_point_law.w, np.exp(th * y + ps * y * y))) - 1.0

        rng = np.random.default_rng(5)
        for _ in range(50):
            t1, t2 = rng.uniform(-3, 3, 2)
            mid = objective(0.5 * (t1 + t2))
            assert mid <= 0.5 * objective(t1) + 0.5 * objective(t2) + 1e-12


class TestEsscherSpec:
    def test_solve_records_residuals(self, baseline):
        spec = EsscherSpec.solve(baseline, EsscherClass.LINEAR, 0.5)
        assert len(spec.theta) == 1
        assert abs(spec.residual[0]) <= 1e-10

    def test_per_segment_psi(self, multiseg_model):
        spec = EsscherSpec.solve(multiseg_model, EsscherClass.EXPONENTIAL, [0.0, 1.0, -1.0])
        assert len(spec.theta) == 3
        for k, seg in enumerate(multiseg_model.segments):
            assert abs(eta_residual(spec.theta[k], spec.psi[k], seg,
                                    EsscherClass.EXPONENTIAL)) <= 1e-10
