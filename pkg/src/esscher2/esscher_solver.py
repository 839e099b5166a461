"""Martingale root equations for two-parameter Esscher tilts.

For the jump-diffusion, given the quadratic parameter psi, the first
parameter is the unique root eta(psi) of

    b~ - r + eta*sigma^2 + lambda*gamma~*(exp(eta*zeta + psi*zeta^2) - 1) = 0

where zeta = gamma~ for the linear class and zeta = gamma for the
exponential class.  The root is expressed through the strictly increasing
bijection

    Phi(x) = sigma^2*x + lambda*gamma~*zeta*e^x,
    eta(psi) = Phi^{-1}(zeta*(r - b~ + lambda*gamma~) + sigma^2*zeta^2*psi)/zeta - zeta*psi.

For the compound-Poisson model the analogous pointwise equations are

    linear:       E[(e^J - 1) exp(theta*(e^J-1) + psi*(e^J-1)^2)] = 0
    exponential:  E[(e^J - 1) exp(theta*J + psi*J^2)] = 0

whose residuals are strictly increasing in theta, so a sign-change bracket
always isolates exactly one root.  All expectations are exact sums over the
JumpLaw representation.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .market_model import CompoundPoissonModel, JumpLaw, MarketModel, Segment

__all__ = [
    "EsscherClass",
    "EsscherSpec",
    "RootConfig",
    "SolverFailure",
    "OneSidedJumpsError",
    "zeta",
    "phi",
    "phi_inverse",
    "eta",
    "eta_residual",
    "eta_star",
    "theta_root_cp_linear",
    "theta_root_cp_exponential",
    "cp_residual_linear",
    "cp_residual_exponential",
    "kappa_exponential",
    "kappa_linear",
    "minimize_theta",
]

_EPS = np.finfo(float).eps


class EsscherClass(enum.Enum):
    LINEAR = "linear"
    EXPONENTIAL = "exponential"

    @classmethod
    def parse(cls, name: str) -> "EsscherClass":
        try:
            return cls(name.lower())
        except ValueError:
            raise ValueError(f"unknown Esscher class {name!r}; use 'linear' or 'exponential'")


def zeta(segment: Segment, klass: EsscherClass) -> float:
    """Jump size of the tilting shock: gamma~ (linear) or gamma (exponential)."""
    return segment.gamma_tilde if klass is EsscherClass.LINEAR else segment.gamma


@dataclass(frozen=True)
class RootConfig:
    abs_tol: float = 1e-12
    max_iter: int = 200
    expand: float = 2.0

    def __post_init__(self):
        if self.abs_tol <= 0:
            raise ValueError("abs_tol must be positive")


DEFAULT_ROOT_CONFIG = RootConfig()


class SolverFailure(RuntimeError):
    """Root search did not converge; carries the last bracket examined."""

    def __init__(self, message: str, bracket: tuple[float, float] | None = None):
        super().__init__(message)
        self.bracket = bracket


class OneSidedJumpsError(ValueError):
    """The jump law charges only one sign, so the residual has no sign change."""


def _expand_bracket(f, config: RootConfig) -> tuple[float, float, float, float]:
    """Geometrically widen [-1, 1] until f changes sign across the bracket."""
    lo, hi = -1.0, 1.0
    flo, fhi = f(lo), f(hi)
    for _ in range(config.max_iter):
        if flo == 0.0:
            return lo, lo, flo, flo
        if fhi == 0.0:
            return hi, hi, fhi, fhi
        if (flo < 0.0) != (fhi < 0.0):
            return lo, hi, flo, fhi
        lo *= config.expand
        hi *= config.expand
        flo, fhi = f(lo), f(hi)
    raise SolverFailure("no sign change found during bracket expansion", (lo, hi))


def _brent(f, lo: float, hi: float, flo: float, fhi: float, config: RootConfig) -> float:
    """Brent iteration with bisection fallback, polished to machine bracket width.

    Iterating past |f| <= abs_tol costs a handful of extra steps and pins the
    root to the last representable bracket, which the exact-value tests rely on.
    """
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    a, b, fa, fb = lo, hi, flo, fhi
    c, fc = a, fa
    d = e = b - a
    for _ in range(config.max_iter):
        if abs(fc) < abs(fb):
            a, b, c = b, c, b
            fa, fb, fc = fb, fc, fb
        tol = 2.0 * _EPS * abs(b)
        m = 0.5 * (c - b)
        if abs(m) <= tol or fb == 0.0:
            return b
        if abs(e) < tol or abs(fa) <= abs(fb):
            d = e = m
        else:
            s = fb / fa
            if a == c:
                p = 2.0 * m * s
                q = 1.0 - s
            else:
                q = fa / fc
                r = fb / fc
                p = s * (2.0 * m * q * (q - r) - (b - a) * (r - 1.0))
                q = (q - 1.0) * (r - 1.0) * (s - 1.0)
            if p > 0.0:
                q = -q
            else:
                p = -p
            s, e = e, d
            if 2.0 * p < 3.0 * m * q - abs(tol * q) and p < abs(0.5 * s * q):
                d = p / q
            else:
                d = e = m
        a, fa = b, fb
        b += d if abs(d) > tol else (tol if m > 0.0 else -tol)
        fb = f(b)
        if (fb > 0.0) == (fc > 0.0):
            c, fc = a, fa
            d = e = b - a
    raise SolverFailure("max_iter exceeded in Brent iteration", (min(b, c), max(b, c)))


def _solve_scalar(f, config: RootConfig) -> float:
    lo, hi, flo, fhi = _expand_bracket(f, config)
    if lo == hi:
        return lo
    return _brent(f, lo, hi, flo, fhi, config)


# ---------------------------------------------------------------------------
# jump-diffusion: Phi, eta
# ---------------------------------------------------------------------------

def _exp(x: float) -> float:
    """exp that saturates to inf instead of raising during bracket probes."""
    return math.exp(x) if x < 709.0 else math.inf


def phi(x: float, segment: Segment, klass: EsscherClass) -> float:
    """Strictly increasing map sigma^2*x + lambda*gamma~*zeta*e^x."""
    z = zeta(segment, klass)
    return segment.sigma**2 * x + segment.lam * segment.gamma_tilde * z * _exp(x)


def phi_inverse(y: float, segment: Segment, klass: EsscherClass,
                config: RootConfig = DEFAULT_ROOT_CONFIG) -> float:
    """Solve phi(x) = y.

    The residual at the returned x is below ``abs_tol * max(1, |y|)``; for
    targets of order one this is the plain abs_tol guarantee, while for huge
    |y| the bound accounts for the float resolution of Phi near the root.
    """
    x = _solve_scalar(lambda x: phi(x, segment, klass) - y, config)
    if abs(phi(x, segment, klass) - y) > config.abs_tol * max(1.0, abs(y)):
        raise SolverFailure(f"phi_inverse residual above tolerance at y={y!r}", (x, x))
    return x


def _r_eff(segment: Segment, discount: bool) -> float:
    return segment.r if discount else 0.0


def eta(psi: float, segment: Segment, klass: EsscherClass, *,
        discount: bool = True, config: RootConfig = DEFAULT_ROOT_CONFIG) -> float:
    """Unique martingale root eta(psi) for one segment.

    With discount off, r is replaced by 0, which recovers the rate-free
    equations of the pure martingale-density characterizations.
    """
    z = zeta(segment, klass)
    r = _r_eff(segment, discount)
    target = z * (r - segment.b_tilde + segment.lam * segment.gamma_tilde) \
        + segment.sigma**2 * z**2 * psi
    x = phi_inverse(target, segment, klass, config)
    return x / z - z * psi


def eta_residual(eta_value: float, psi: float, segment: Segment, klass: EsscherClass,
                 *, discount: bool = True) -> float:
    """Residual of the defining equation at a candidate eta."""
    z = zeta(segment, klass)
    r = _r_eff(segment, discount)
    return (segment.b_tilde - r + eta_value * segment.sigma**2
            + segment.lam * segment.gamma_tilde * math.expm1(eta_value * z + psi * z**2))


def eta_star(segment: Segment, *, discount: bool = True) -> float:
    """psi -> -infinity limit of eta(psi): (lambda*gamma~ + r - b~)/sigma^2."""
    r = _r_eff(segment, discount)
    return (segment.lam * segment.gamma_tilde + r - segment.b_tilde) / segment.sigma**2


# ---------------------------------------------------------------------------
# compound Poisson: theta roots and cumulants
# ---------------------------------------------------------------------------

def _cp_parts(law: JumpLaw, klass: EsscherClass) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(weights*leading factor, tilt shock s, shock^2) for the residual."""
    y = np.expm1(law.x)
    s = y if klass is EsscherClass.LINEAR else law.x
    return law.w * y, s, s * s


def _cp_residual_arrays(theta, wy, s, q, psi):
    with np.errstate(over="ignore"):
        return float(np.dot(wy, np.exp(theta * s + psi * q)))


def cp_residual_linear(theta: float, psi: float, law: JumpLaw) -> float:
    """E[(e^J-1) exp(theta (e^J-1) + psi (e^J-1)^2)]."""
    wy, s, q = _cp_parts(law, EsscherClass.LINEAR)
    return _cp_residual_arrays(theta, wy, s, q, psi)


def cp_residual_exponential(theta: float, psi: float, law: JumpLaw) -> float:
    """E[(e^J-1) exp(theta J + psi J^2)]."""
    wy, s, q = _cp_parts(law, EsscherClass.EXPONENTIAL)
    return _cp_residual_arrays(theta, wy, s, q, psi)


def _theta_root_cp(psi: float, law: JumpLaw, klass: EsscherClass,
                   config: RootConfig) -> float:
    if not law.two_sided:
        raise OneSidedJumpsError(
            "jump law charges only one sign of J; the residual cannot change sign")
    wy, s, q = _cp_parts(law, klass)

    def f_scaled(theta: float) -> float:
        # Shift by the max exponent so endpoint evaluations during bracket
        # expansion cannot overflow; the sign (hence the root) is unchanged.
        a = theta * s + psi * q
        return float(np.dot(wy, np.exp(a - a.max())))

    root = _solve_scalar(f_scaled, config)
    # Residual guarantee, relative to the magnitude of the expectation's
    # terms: |residual| <= abs_tol * max(1, scale).  Compared in the shifted
    # domain when the raw exponents exceed float range.
    a = root * s + psi * q
    shift = float(a.max())
    r_shifted = float(np.dot(wy, np.exp(a - shift)))
    s_shifted = float(np.dot(np.abs(wy), np.exp(a - shift)))
    if shift <= 700.0:
        ok = abs(r_shifted) * math.exp(shift) <= config.abs_tol * max(1.0, s_shifted * math.exp(shift))
    else:
        ok = abs(r_shifted) <= config.abs_tol * s_shifted
    if not ok:
        raise SolverFailure(f"theta root residual above tolerance at theta={root!r}",
                            (root, root))
    return root


def theta_root_cp_linear(psi: float, law: JumpLaw,
                         config: RootConfig = DEFAULT_ROOT_CONFIG) -> float:
    return _theta_root_cp(psi, law, EsscherClass.LINEAR, config)


def theta_root_cp_exponential(psi: float, law: JumpLaw,
                              config: RootConfig = DEFAULT_ROOT_CONFIG) -> float:
    return _theta_root_cp(psi, law, EsscherClass.EXPONENTIAL, config)


def kappa_exponential(theta: float, psi: float, law: JumpLaw) -> float:
    """E[exp(theta J + psi J^2)] - 1."""
    with np.errstate(over="ignore"):
        value = law.expect(lambda x: np.exp(theta * x + psi * x * x)) - 1.0
    if not math.isfinite(value):
        raise OverflowError("kappa overflow; psi too extreme for this jump law")
    return value


def kappa_linear(theta: float, psi: float, law: JumpLaw) -> float:
    """exp(-theta+psi) * E[exp(theta e^J + psi e^{2J} - 2 psi e^J)] - 1.

    Algebraically equal to E[exp(theta (e^J-1) + psi (e^J-1)^2)] - 1; kept in
    this factored form so the identity is a genuine cross-check.
    """
    ex = np.exp(law.x)
    with np.errstate(over="ignore"):
        value = math.exp(-theta + psi) * law.expect(
            lambda x: np.exp(theta * ex + psi * ex * ex - 2.0 * psi * ex)) - 1.0
    if not math.isfinite(value):
        raise OverflowError("kappa overflow; psi too extreme for this jump law")
    return value


# ---------------------------------------------------------------------------
# minimization route (first-order condition == martingale equation)
# ---------------------------------------------------------------------------

def minimize_theta(psi: float, *, klass: EsscherClass,
                   segment: Segment | None = None,
                   law: JumpLaw | None = None) -> float:
    """Pointwise convex minimization whose first-order condition is the
    martingale equation (rate-free form).

    A value-only minimizer resolves the argmin to O(sqrt(eps)); callers that
    need more accuracy should use the root operations directly.
    """
    if (segment is None) == (law is None):
        raise ValueError("pass exactly one of segment= or law=")

    if segment is not None:
        bt, sig, gt, lam, g = (segment.b_tilde, segment.sigma, segment.gamma_tilde,
                               segment.lam, segment.gamma)
        if klass is EsscherClass.LINEAR:
            def objective(th):
                return th * bt + 0.5 * sig**2 * th**2 \
                    + lam * (math.exp(th * gt + psi * gt**2) - 1.0 - th * gt)
        else:
            w = gt / g  # (e^gamma - 1)/gamma > 0
            def objective(th):
                return th * bt + 0.5 * sig**2 * th**2 \
                    + lam * (w * (math.exp(th * g + psi * g**2) - 1.0) - th * gt)
    else:
        if klass is EsscherClass.LINEAR:
            y = np.expm1(law.x)
            def objective(th):
                return float(np.dot(law.w, np.exp(th * y + psi * y * y))) - 1.0
        else:
            x = law.x
            w = np.where(x != 0.0, np.expm1(x) / np.where(x != 0.0, x, 1.0), 1.0)
            def objective(th):
                return float(np.dot(law.w * w, np.exp(th * x + psi * x * x)))

    # two-point bracket: scipy expands downhill to enclose the minimum
    result = minimize_scalar(objective, bracket=(-1.0, 1.0),
                             method="brent", options={"xtol": 1e-12, "maxiter": 500})
    if not math.isfinite(result.x):
        raise SolverFailure("minimization did not converge")
    return float(result.x)


# ---------------------------------------------------------------------------
# solved parameter pairs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EsscherSpec:
    """A calibrated (theta, psi) pair per segment, with recorded residuals."""

    klass: EsscherClass
    psi: tuple[float, ...]
    theta: tuple[float, ...]
    residual: tuple[float, ...]
    discount: bool

    @classmethod
    def solve(cls, model: MarketModel, klass: EsscherClass, psi,
              *, discount: bool = True,
              config: RootConfig = DEFAULT_ROOT_CONFIG) -> "EsscherSpec":
        """theta = eta(psi) per segment; psi may be scalar or per-segment."""
        psis = np.broadcast_to(np.asarray(psi, dtype=float), (len(model.segments),))
        thetas, residuals = [], []
        for p, seg in zip(psis, model.segments):
            th = eta(p, seg, klass, discount=discount, config=config)
            thetas.append(th)
            residuals.append(eta_residual(th, p, seg, klass, discount=discount))
        return cls(klass=klass, psi=tuple(float(p) for p in psis),
                   theta=tuple(thetas), residual=tuple(residuals), discount=discount)
