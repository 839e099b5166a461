"""Market models and their parameter transforms.

Two model families are supported:

* a one-dimensional jump-diffusion for the log price,
  ``dX = b dt + sigma dW + gamma dN~`` with ``N~ = N - integral(lambda dt)``
  and piecewise-constant-in-time coefficients, and
* a compound-Poisson log price ``X = sum_{k<=N_t} J_k`` with i.i.d. jump
  sizes ``J`` drawn from a discrete (or quadrature-discretized) law.

The stochastic-exponential ("tilde") coefficients of the price shock are

    b~     = b + sigma^2/2 + lambda*(e^gamma - 1 - gamma)
    sigma~ = sigma
    gamma~ = e^gamma - 1

so that ``S = s0 * e^X`` is also ``s0`` times the stochastic exponential of
the shock with those coefficients.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Segment",
    "MarketModel",
    "TildeParams",
    "JumpLaw",
    "CompoundPoissonModel",
    "ValidationReport",
    "StepCoeffs",
    "GridAlignmentError",
    "derive_tilde",
    "validate",
    "step_coefficients",
    "load_model",
    "dump_model",
]

# Lattice sizing used only for validation notes; the lattice module enforces
# its own step bound at build time.
_DEFAULT_LATTICE_STEPS = 120


@dataclass(frozen=True)
class Segment:
    """Constant coefficients on one time interval [t0, t1)."""

    t0: float
    t1: float
    r: float
    b: float
    sigma: float
    gamma: float
    lam: float

    @property
    def gamma_tilde(self) -> float:
        return math.expm1(self.gamma)

    @property
    def b_tilde(self) -> float:
        return self.b + 0.5 * self.sigma**2 + self.lam * (math.expm1(self.gamma) - self.gamma)

    @property
    def length(self) -> float:
        return self.t1 - self.t0


@dataclass(frozen=True)
class MarketModel:
    """Jump-diffusion market with piecewise-constant coefficients on [0, T]."""

    s0: float
    horizon: float
    segments: tuple[Segment, ...]

    @classmethod
    def single(cls, *, s0: float, horizon: float, r: float, b: float,
               sigma: float, gamma: float, lam: float) -> "MarketModel":
        seg = Segment(t0=0.0, t1=horizon, r=r, b=b, sigma=sigma, gamma=gamma, lam=lam)
        return cls(s0=s0, horizon=horizon, segments=(seg,))

    @classmethod
    def from_segments(cls, *, s0: float, horizon: float,
                      specs: Sequence[dict]) -> "MarketModel":
        """Build from per-segment dicts carrying t0, r, b, sigma, gamma, lambda."""
        specs = sorted(specs, key=lambda d: d["t0"])
        segs = []
        for k, d in enumerate(specs):
            t1 = specs[k + 1]["t0"] if k + 1 < len(specs) else horizon
            segs.append(Segment(t0=float(d["t0"]), t1=float(t1), r=float(d["r"]),
                                b=float(d["b"]), sigma=float(d["sigma"]),
                                gamma=float(d["gamma"]), lam=float(d["lambda"])))
        return cls(s0=float(s0), horizon=float(horizon), segments=tuple(segs))

    @property
    def breakpoints(self) -> tuple[float, ...]:
        return tuple(s.t0 for s in self.segments) + (self.horizon,)

    def segment_at(self, t: float) -> Segment:
        """Segment containing t (left-closed intervals; t=T maps to the last one)."""
        for seg in self.segments:
            if seg.t0 <= t < seg.t1:
                return seg
        if t >= self.segments[-1].t0:
            return self.segments[-1]
        raise ValueError(f"time {t} outside [0, {self.horizon}]")

    def to_dict(self) -> dict:
        return {
            "T": self.horizon,
            "s0": self.s0,
            "segments": [
                {"t0": s.t0, "r": s.r, "b": s.b, "sigma": s.sigma,
                 "gamma": s.gamma, "lambda": s.lam}
                for s in self.segments
            ],
        }


@dataclass(frozen=True)
class TildeParams:
    """Per-segment stochastic-exponential coefficients of the price shock."""

    b_tilde: np.ndarray
    sigma_tilde: np.ndarray
    gamma_tilde: np.ndarray


def derive_tilde(model: MarketModel) -> TildeParams:
    """Closed-form tilde coefficients, one entry per segment."""
    return TildeParams(
        b_tilde=np.array([s.b_tilde for s in model.segments]),
        sigma_tilde=np.array([s.sigma for s in model.segments]),
        gamma_tilde=np.array([s.gamma_tilde for s in model.segments]),
    )


def recover_b(tilde: TildeParams, model: MarketModel) -> np.ndarray:
    """Invert the b~ formula; used to cross-check derive_tilde round trips."""
    out = []
    for k, s in enumerate(model.segments):
        out.append(tilde.b_tilde[k] - 0.5 * s.sigma**2 - s.lam * (math.expm1(s.gamma) - s.gamma))
    return np.array(out)


@dataclass(frozen=True)
class ValidationReport:
    passed: bool
    bound_constant: float
    issues: tuple[str, ...]
    notes: tuple[str, ...]

    def __str__(self) -> str:  # pragma: no cover - debugging aid
        status = "pass" if self.passed else "FAIL"
        lines = [f"validation: {status}, C = {self.bound_constant:.6g}"]
        lines += [f"  issue: {m}" for m in self.issues]
        lines += [f"  note:  {m}" for m in self.notes]
        return "\n".join(lines)


def validate(model: MarketModel) -> ValidationReport:
    """Check the standing coefficient bounds and report the smallest admissible C.

    Violations are reported, not raised: a failing report carries one entry per
    broken invariant with its segment index.
    """
    issues: list[str] = []
    notes: list[str] = []

    if model.s0 <= 0:
        issues.append("s0 > 0 violated")
    if model.horizon <= 0:
        issues.append("T > 0 violated")

    bps = model.breakpoints
    if any(b1 <= b0 for b0, b1 in zip(bps, bps[1:])):
        issues.append("breakpoints not strictly increasing")
    if bps and bps[0] != 0.0:
        issues.append("first breakpoint must be 0")

    c_terms = []
    for k, s in enumerate(model.segments):
        if s.sigma <= 0:
            issues.append(f"segment {k}: sigma > 0 violated")
        if s.lam <= 0:
            issues.append(f"segment {k}: lambda > 0 violated")
        if s.gamma == 0:
            issues.append(f"segment {k}: |gamma| > 0 violated")
        if s.r < 0:
            issues.append(f"segment {k}: r >= 0 violated")
        if s.sigma > 0 and s.lam > 0 and s.gamma != 0:
            c_terms.append(s.sigma + s.lam + 1.0 / s.sigma + 1.0 / s.lam
                           + abs(s.r) + abs(s.b) + abs(s.gamma) + 1.0 / abs(s.gamma))

    bound = max(c_terms) if c_terms else math.inf

    max_lam = max((s.lam for s in model.segments), default=0.0)
    if max_lam * model.horizon > 0.5 * _DEFAULT_LATTICE_STEPS:
        notes.append(
            "jump intensity is high: lattice step will require h < 1/lambda0 "
            f"(lambda0 ~ lambda = {max_lam:g}), i.e. more than "
            f"{int(max_lam * model.horizon)} steps over the horizon"
        )

    return ValidationReport(passed=not issues, bound_constant=bound,
                            issues=tuple(issues), notes=tuple(notes))


class GridAlignmentError(ValueError):
    """Time grid does not align with the segment breakpoints."""

    def __init__(self, message: str, suggested_steps: int | None = None):
        super().__init__(message)
        self.suggested_steps = suggested_steps


@dataclass(frozen=True)
class StepCoeffs:
    """Per-step coefficient arrays on the uniform grid t_i = i*T/M."""

    h: float
    t: np.ndarray            # grid points, length M+1
    r: np.ndarray            # each of length M
    b: np.ndarray
    sigma: np.ndarray
    gamma: np.ndarray
    lam: np.ndarray
    b_tilde: np.ndarray
    gamma_tilde: np.ndarray
    segment_index: np.ndarray

    @property
    def n_steps(self) -> int:
        return self.r.size

    @property
    def discount_total(self) -> float:
        return float(np.exp(-np.sum(self.r) * self.h))


def step_coefficients(model: MarketModel, n_steps: int) -> StepCoeffs:
    """Coefficients per uniform step; every breakpoint must sit on the grid."""
    if n_steps < 1:
        raise ValueError("need at least one step")
    h = model.horizon / n_steps
    tol = 1e-9 * max(1.0, model.horizon)
    misaligned = [bp for bp in model.breakpoints
                  if abs(bp - round(bp / h) * h) > tol]
    if misaligned:
        suggestion = _suggest_steps(model, n_steps)
        raise GridAlignmentError(
            f"breakpoints {misaligned} do not sit on the {n_steps}-step grid"
            + (f"; smallest aligned step count >= {n_steps} is {suggestion}"
               if suggestion else ""),
            suggested_steps=suggestion)
    t = np.linspace(0.0, model.horizon, n_steps + 1)
    mids = 0.5 * (t[:-1] + t[1:])
    segs = [model.segment_at(tm) for tm in mids]
    idx = {seg: k for k, seg in enumerate(model.segments)}
    return StepCoeffs(
        h=h, t=t,
        r=np.array([s.r for s in segs]),
        b=np.array([s.b for s in segs]),
        sigma=np.array([s.sigma for s in segs]),
        gamma=np.array([s.gamma for s in segs]),
        lam=np.array([s.lam for s in segs]),
        b_tilde=np.array([s.b_tilde for s in segs]),
        gamma_tilde=np.array([s.gamma_tilde for s in segs]),
        segment_index=np.array([idx[s] for s in segs], dtype=int),
    )


def _suggest_steps(model: MarketModel, n_steps: int, limit: int = 100_000) -> int | None:
    tol = 1e-9 * max(1.0, model.horizon)
    for m in range(n_steps, limit):
        h = model.horizon / m
        if all(abs(bp - round(bp / h) * h) <= tol for bp in model.breakpoints):
            return m
    return None


class JumpLaw:
    """Discrete representation of the jump-size law: atoms x with weights w.

    Continuous laws are represented by fixed quadrature nodes/weights; every
    expectation in the package is the exact weighted sum over this
    representation, so calibration residuals are deterministic.
    """

    def __init__(self, x: Sequence[float], w: Sequence[float], name: str = "atoms"):
        x = np.asarray(x, dtype=float)
        w = np.asarray(w, dtype=float)
        if x.shape != w.shape or x.ndim != 1 or x.size == 0:
            raise ValueError("atoms and weights must be matching 1-d arrays")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1 (got {w.sum()!r})")
        order = np.argsort(x)
        self.x = x[order]
        self.w = w[order]
        self.name = name

    @classmethod
    def atoms(cls, pairs: Sequence[tuple[float, float]]) -> "JumpLaw":
        xs, ws = zip(*pairs)
        return cls(xs, ws, name="atoms")

    @classmethod
    def two_point(cls, a: float) -> "JumpLaw":
        """J in {+a, -a} with probability 1/2 each."""
        if a <= 0:
            raise ValueError("two-point size a must be positive")
        return cls([a, -a], [0.5, 0.5], name=f"two_point({a:g})")

    @classmethod
    def normal(cls, m: float, s: float, n: int = 128) -> "JumpLaw":
        """Gauss-Hermite discretization of Normal(m, s^2)."""
        if s <= 0:
            raise ValueError("normal scale must be positive")
        t, w = np.polynomial.hermite.hermgauss(n)
        return cls(m + s * math.sqrt(2.0) * t, w / math.sqrt(math.pi),
                   name=f"normal({m:g},{s:g})")

    @classmethod
    def uniform(cls, lo: float, hi: float, n: int = 128) -> "JumpLaw":
        """Gauss-Legendre discretization of Uniform(lo, hi)."""
        if hi <= lo:
            raise ValueError("need lo < hi")
        t, w = np.polynomial.legendre.leggauss(n)
        return cls(0.5 * (lo + hi) + 0.5 * (hi - lo) * t, 0.5 * w,
                   name=f"uniform({lo:g},{hi:g})")

    def expect(self, f: Callable[[np.ndarray], np.ndarray]) -> float:
        """E[f(J)] as the exact sum over the representation."""
        return float(np.dot(self.w, f(self.x)))

    @property
    def two_sided(self) -> bool:
        """True when the law charges both {J > 0} and {J < 0}."""
        return bool(np.any((self.x > 0) & (self.w > 0)) and np.any((self.x < 0) & (self.w > 0)))

    def exp_moment(self, order: float) -> float:
        with np.errstate(over="ignore"):
            return self.expect(lambda x: np.exp(order * x))

    def to_dict(self) -> dict:
        return {"type": "atoms", "x": self.x.tolist(), "p": self.w.tolist()}


@dataclass(frozen=True)
class CompoundPoissonModel:
    """Compound-Poisson log price: N has rate lam, jump sizes follow law."""

    lam: float
    law: JumpLaw
    s0: float
    horizon: float

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("lambda must be positive")
        if not math.isfinite(self.law.exp_moment(2.0)):
            raise ValueError("law must have a finite second exponential moment")

    def to_dict(self) -> dict:
        return {"T": self.horizon, "s0": self.s0,
                "cp": {"lambda": self.lam, "law": self.law.to_dict()}}


def _law_from_dict(d: dict) -> JumpLaw:
    kind = d["type"]
    if kind == "atoms":
        return JumpLaw(d["x"], d["p"])
    if kind == "two_point":
        return JumpLaw.two_point(float(d["a"]))
    if kind == "normal":
        return JumpLaw.normal(float(d["m"]), float(d["s"]), int(d.get("n", 128)))
    if kind == "uniform":
        return JumpLaw.uniform(float(d["lo"]), float(d["hi"]), int(d.get("n", 128)))
    raise ValueError(f"unknown jump-law type {kind!r}")


def load_model(path: str) -> MarketModel | CompoundPoissonModel:
    """Read a model JSON file (jump-diffusion or compound-Poisson schema)."""
    with open(path) as fh:
        data = json.load(fh)
    if "cp" in data:
        cp = data["cp"]
        return CompoundPoissonModel(lam=float(cp["lambda"]), law=_law_from_dict(cp["law"]),
                                    s0=float(data["s0"]), horizon=float(data["T"]))
    return MarketModel.from_segments(s0=data["s0"], horizon=data["T"],
                                     specs=data["segments"])


def dump_model(model: MarketModel | CompoundPoissonModel, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(model.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
