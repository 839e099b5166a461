"""Pricing-interval bounds via a monotone family of linear lattice BSDEs.

Under the baseline tilted measure, the psi-price of a claim solves a linear
BSDE whose driver (discounting handled multiplicatively) is

    g_psi(i, z, u) = sigma*(eta_i(psi) - eta_i(0))/gamma~ * (gamma~ z - sigma u),

and the level-n upper/lower envelopes solve BSDEs with the bang-bang driver

    upper:  A_n*(gamma~ z - sigma u)^+ + B_n*(gamma~ z - sigma u)^-
    lower: -(B_n*(gamma~ z - sigma u)^+ + A_n*(gamma~ z - sigma u)^-)

with A_n = sigma*(eta(-n) - eta(0))/gamma~ >= 0 and
B_n = sigma*(eta(0) - eta(n))/gamma~ >= 0.  The upper solutions increase in
n toward the supremum price; the compensator increments h*B_n*(X)^- are
nonnegative and vanish exactly off the constraint-violation region, so the
discrete Skorokhod integral is exactly zero at every n.

The scheme is explicit: Y_i = e^{-r h} (E[Y_{i+1}] + h*g).  Per-node
comparison arguments require every effective transition weight to stay
nonnegative; the minimum weight ("monotonicity margin") is computed per
solve and recorded, since the bang-bang slopes grow with n while the step
stays fixed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .esscher_solver import DEFAULT_ROOT_CONFIG, EsscherClass, RootConfig, eta
from .lattice import Lattice

__all__ = [
    "Claim",
    "BsdeSolution",
    "BoundsReport",
    "solve_psi",
    "solve_n",
    "bang_bang_field",
    "bounds",
    "scheme_margin",
    "lower_via_duality",
    "interval_sandwich",
    "class_compare",
    "moment_diagnostic",
    "default_schedule",
]

_BOUNDED_KINDS = {"constant", "put", "digital", "capped_call"}


@dataclass(frozen=True)
class Claim:
    """Terminal payoff xi = payoff(S_T)."""

    kind: str
    strike: float | None = None
    cap: float | None = None
    level: float | None = None

    @classmethod
    def constant(cls, c: float) -> "Claim":
        return cls("constant", level=float(c))

    @classmethod
    def forward(cls) -> "Claim":
        return cls("forward")

    @classmethod
    def call(cls, strike: float) -> "Claim":
        return cls("call", strike=float(strike))

    @classmethod
    def put(cls, strike: float) -> "Claim":
        return cls("put", strike=float(strike))

    @classmethod
    def digital(cls, strike: float) -> "Claim":
        return cls("digital", strike=float(strike))

    @classmethod
    def capped_call(cls, strike: float, cap: float) -> "Claim":
        return cls("capped_call", strike=float(strike), cap=float(cap))

    @classmethod
    def parse(cls, text: str) -> "Claim":
        """Parse CLI form, e.g. 'call,K=100' or 'capped_call,K=100,cap=40'."""
        parts = [p.strip() for p in text.split(",") if p.strip()]
        kind, kv = parts[0], {}
        for p in parts[1:]:
            key, _, val = p.partition("=")
            kv[key.strip()] = float(val)
        if kind == "constant":
            return cls.constant(kv.get("c", 1.0))
        if kind == "forward":
            return cls.forward()
        if kind == "call":
            return cls.call(kv["K"])
        if kind == "put":
            return cls.put(kv["K"])
        if kind == "digital":
            return cls.digital(kv["K"])
        if kind == "capped_call":
            return cls.capped_call(kv["K"], kv["cap"])
        raise ValueError(f"unknown claim kind {kind!r}")

    @property
    def bounded(self) -> bool:
        return self.kind in _BOUNDED_KINDS

    def payoff(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        if self.kind == "constant":
            return np.full_like(s, self.level)
        if self.kind == "forward":
            return s.copy()
        if self.kind == "call":
            return np.maximum(s - self.strike, 0.0)
        if self.kind == "put":
            return np.maximum(self.strike - s, 0.0)
        if self.kind == "digital":
            return (s > self.strike).astype(float)
        if self.kind == "capped_call":
            return np.minimum(np.maximum(s - self.strike, 0.0), self.cap)
        raise ValueError(f"unknown claim kind {self.kind!r}")

    def describe(self) -> str:
        bits = [self.kind]
        if self.strike is not None:
            bits.append(f"K={self.strike:g}")
        if self.cap is not None:
            bits.append(f"cap={self.cap:g}")
        if self.level is not None:
            bits.append(f"c={self.level:g}")
        return ",".join(bits)


@dataclass(frozen=True)
class BsdeSolution:
    """One backward solve: root value, per-slice aggregates, optional fields."""

    y0: float
    y_agg: np.ndarray            # E0[Y_{t_i}], length M+1
    g_agg: np.ndarray            # E0[g(t_i)], length M
    k_curve: np.ndarray          # E0[K_{t_i}], length M+1 (zeros for psi solves)
    violation: float             # E0[int (constraint violation) dt]
    skorokhod: float             # E0[int (opposite part) dK]
    mono_margin: float           # min effective transition weight
    label: str
    Y: list | None = field(default=None, repr=False)
    Z: list | None = field(default=None, repr=False)
    U: list | None = field(default=None, repr=False)
    X: list | None = field(default=None, repr=False)   # gamma~ Z - sigma U
    k_inc: list | None = field(default=None, repr=False)

    @property
    def k_total(self) -> float:
        return float(self.k_curve[-1])


def _margin_for(lat: Lattice, i: int, c_lo: float, c_hi: float) -> float:
    """Smallest transition weight of the c-tilted one-step operator."""
    p = float(lat.p_jump[i])
    lam0 = float(lat.lam0[i])
    gt, sig, sq = lat.gamma_tilde, lat.sigma, lat.sqrt_h
    worst = math.inf
    for c in (c_lo, c_hi):
        bump_jump = -c * sig / lam0
        bump_stay = c * sig * lat.h / (1.0 - p)
        for brownian in (c * gt * sq, -c * gt * sq):
            worst = min(worst, 1.0 + brownian + bump_jump, 1.0 + brownian + bump_stay)
    return worst


def _backward(lat: Lattice, terminal: np.ndarray, step_fn, *, discounted: bool = True,
              collect: bool = True, label: str = "") -> BsdeSolution:
    """Explicit backward sweep; step_fn(i, z, u, X) -> (g, kinc, viol, skfac)."""
    M = lat.n_steps
    h = lat.h
    Y = np.array(terminal, dtype=float)
    y_agg = np.empty(M + 1)
    g_agg = np.empty(M)
    k_agg = np.zeros(M)
    y_agg[M] = float(np.sum(lat.node_probs(M) * Y))
    violation = 0.0
    skorokhod = 0.0
    margin = math.inf

    Ys = [None] * (M + 1) if collect else None
    Zs = [None] * M if collect else None
    Us = [None] * M if collect else None
    Xs = [None] * M if collect else None
    Ks = [None] * M if collect else None
    if collect:
        Ys[M] = Y.copy()

    for i in reversed(range(M)):
        y_exp, z, u = lat.project(Y, i)
        X = lat.gamma_tilde * z - lat.sigma * u
        g, kinc, viol, skfac, m_i = step_fn(i, z, u, X)
        margin = min(margin, m_i)
        Y = y_exp + h * g
        if discounted:
            Y = math.exp(-lat.coeffs.r[i] * h) * Y
        probs = lat.node_probs(i)
        g_agg[i] = float(np.sum(probs * g))
        if kinc is not None:
            k_agg[i] = float(np.sum(probs * kinc))
            violation += h * float(np.sum(probs * viol))
            skorokhod += float(np.sum(probs * (skfac * kinc)))
        y_agg[i] = float(np.sum(probs * Y))
        if collect:
            Ys[i], Zs[i], Us[i], Xs[i] = Y.copy(), z, u, X
            Ks[i] = kinc if kinc is not None else np.zeros_like(X)

    k_curve = np.concatenate([[0.0], np.cumsum(k_agg)])
    return BsdeSolution(y0=float(Y[0, 0]), y_agg=y_agg, g_agg=g_agg, k_curve=k_curve,
                        violation=violation, skorokhod=skorokhod, mono_margin=margin,
                        label=label, Y=Ys, Z=Zs, U=Us, X=Xs, k_inc=Ks)


class _EtaCache:
    """eta(psi) per (segment, psi); identical floats across solver calls."""

    def __init__(self, lat: Lattice, config: RootConfig):
        self.lat = lat
        self.config = config
        self._store: dict[tuple[int, float], float] = {}

    def eta(self, seg_index: int, psi: float) -> float:
        key = (seg_index, float(psi))
        if key not in self._store:
            seg = self.lat.model.segments[seg_index]
            self._store[key] = eta(psi, seg, self.lat.klass,
                                   discount=True, config=self.config)
        return self._store[key]

    def coeff(self, i: int, psi: float) -> float:
        """sigma*(eta(psi) - eta(0))/gamma~ at step i."""
        seg_index = int(self.lat.coeffs.segment_index[i])
        c = self.lat.coeffs
        return float(c.sigma[i]) * (self.eta(seg_index, psi) - float(self.lat.eta0[i])) \
            / float(c.gamma_tilde[i])


def _psi_coefficients(lat: Lattice, psi, cache: _EtaCache) -> list:
    """Normalize psi (scalar, per-segment, per-step, or node fields) to
    per-step driver coefficients (scalars or node arrays)."""
    M = lat.n_steps
    if isinstance(psi, (list, tuple)) and psi and isinstance(psi[0], np.ndarray):
        if len(psi) != M:
            raise ValueError("node-field psi must supply one array per step")
        out = []
        for i, field_i in enumerate(psi):
            values = np.unique(field_i)
            coeff = np.empty_like(field_i, dtype=float)
            for v in values:
                coeff[field_i == v] = cache.coeff(i, float(v))
            out.append(coeff)
        return out
    arr = np.asarray(psi, dtype=float)
    if arr.ndim == 0:
        return [cache.coeff(i, float(arr)) for i in range(M)]
    if arr.size == M:
        return [cache.coeff(i, float(arr[i])) for i in range(M)]
    if arr.size == len(lat.model.segments):
        return [cache.coeff(i, float(arr[lat.coeffs.segment_index[i]]))
                for i in range(M)]
    raise ValueError("psi must be scalar, per-segment, per-step, or node fields")


def solve_psi(lat: Lattice, claim: Claim, psi, *, collect: bool = True,
              discounted: bool = True,
              config: RootConfig = DEFAULT_ROOT_CONFIG) -> BsdeSolution:
    """Price process under the psi-tilted measure (linear driver)."""
    cache = _EtaCache(lat, config)
    coeffs = _psi_coefficients(lat, psi, cache)
    terminal = claim.payoff(lat.s_slice(lat.n_steps))

    def step_fn(i, z, u, X):
        c = coeffs[i]
        if isinstance(c, np.ndarray):
            m_i = _margin_for(lat, i, float(c.min()), float(c.max()))
        else:
            m_i = _margin_for(lat, i, c, c)
        return c * X, None, None, None, m_i

    return _backward(lat, terminal, step_fn, discounted=discounted,
                     collect=collect, label=f"psi-solve")


def _envelope_slopes(lat: Lattice, n: float, cache: _EtaCache) -> tuple[np.ndarray, np.ndarray]:
    """(A_n, B_n) per step; both nonnegative by eta-monotonicity."""
    A = np.array([cache.coeff(i, -n) for i in range(lat.n_steps)])
    B = np.array([-cache.coeff(i, n) for i in range(lat.n_steps)])
    return A, B


def solve_n(lat: Lattice, claim: Claim, n: float, side: str = "upper", *,
            collect: bool = True,
            config: RootConfig = DEFAULT_ROOT_CONFIG) -> BsdeSolution:
    """Level-n envelope BSDE; records compensator and constraint diagnostics."""
    if side not in ("upper", "lower"):
        raise ValueError("side must be 'upper' or 'lower'")
    if n < 0:
        raise ValueError("n must be >= 0")
    cache = _EtaCache(lat, config)
    A, B = _envelope_slopes(lat, n, cache)
    terminal = claim.payoff(lat.s_slice(lat.n_steps))
    h = lat.h
    upper = side == "upper"

    def step_fn(i, z, u, X):
        Xp = np.maximum(X, 0.0)
        Xm = np.maximum(-X, 0.0)
        if upper:
            g = A[i] * Xp + B[i] * Xm
            kinc = h * B[i] * Xm
            viol, skfac = Xm, Xp
        else:
            g = -(B[i] * Xp + A[i] * Xm)
            kinc = h * B[i] * Xp
            viol, skfac = Xp, Xm
        m_i = _margin_for(lat, i, -float(B[i]), float(A[i]))
        return g, kinc, viol, skfac, m_i

    return _backward(lat, terminal, step_fn, discounted=True, collect=collect,
                     label=f"{side}-n={n:g}")


def bang_bang_field(lat: Lattice, solution: BsdeSolution, n: float,
                    side: str = "upper") -> list[np.ndarray]:
    """Extremal control realizing the envelope driver of `solution`.

    Upper side: psi = -n where gamma~Z - sigma U >= 0, +n elsewhere (mirrored
    for the lower side), read off the solution's own (Z, U) fields.
    """
    if solution.X is None:
        raise ValueError("solution was computed without collected fields")
    lo, hi = (-n, n) if side == "upper" else (n, -n)
    return [np.where(X_i >= 0.0, lo, hi) for X_i in solution.X]


def default_schedule(n_max: int = 1024) -> list[int]:
    """0, 1, 2, 4, ... up to n_max."""
    out = [0, 1]
    while out[-1] < n_max:
        out.append(min(out[-1] * 2, n_max))
    return out


@dataclass(frozen=True)
class BoundsReport:
    claim: str
    klass: str
    n_steps: int
    tol: float
    truncated_at: float | None
    ns: tuple[float, ...]
    y_upper: tuple[float, ...]
    y_lower: tuple[float, ...]
    v_upper: tuple[float, ...]
    v_lower: tuple[float, ...]
    k_upper: tuple[float, ...]
    k_lower: tuple[float, ...]
    sk_upper: tuple[float, ...]
    sk_lower: tuple[float, ...]
    margins_upper: tuple[float, ...]
    margins_lower: tuple[float, ...]
    converged_upper: bool
    converged_lower: bool
    moment_diag: dict | None

    @property
    def y_up_final(self) -> float:
        return self.y_upper[-1]

    @property
    def y_low_final(self) -> float:
        return self.y_lower[-1]

    def to_dict(self) -> dict:
        return {
            "claim": self.claim,
            "class": self.klass,
            "steps": self.n_steps,
            "tol": self.tol,
            "truncated_at": self.truncated_at,
            "n_schedule": list(self.ns),
            "Y_upper": list(self.y_upper),
            "Y_lower": list(self.y_lower),
            "v_upper": list(self.v_upper),
            "v_lower": list(self.v_lower),
            "K_T_upper": list(self.k_upper),
            "K_T_lower": list(self.k_lower),
            "skorokhod_upper": list(self.sk_upper),
            "skorokhod_lower": list(self.sk_lower),
            "monotone_margin_upper": list(self.margins_upper),
            "monotone_margin_lower": list(self.margins_lower),
            "converged_upper": self.converged_upper,
            "converged_lower": self.converged_lower,
            "Y_up": self.y_up_final,
            "Y_inf": self.y_low_final,
            "moment_diagnostic": self.moment_diag,
        }


def moment_diagnostic(lat: Lattice, claim: Claim,
                      psi_grid=(-8.0, -2.0, 0.0, 2.0, 8.0), p: float = 2.0,
                      config: RootConfig = DEFAULT_ROOT_CONFIG) -> dict:
    """Empirical admissibility check for unbounded payoffs.

    Evaluates E0[D^psi_T (xi^+/-)^p] on the psi grid (undiscounted); the
    claim passes when every entry is finite.
    """
    xi = claim.payoff(lat.s_slice(lat.n_steps))
    out: dict = {"p": p, "psi_grid": list(psi_grid), "pos": [], "neg": []}
    for part, arr in (("pos", np.maximum(xi, 0.0) ** p),
                      ("neg", np.maximum(-xi, 0.0) ** p)):
        for psi in psi_grid:
            cache = _EtaCache(lat, config)
            coeffs = [cache.coeff(i, float(psi)) for i in range(lat.n_steps)]

            def step_fn(i, z, u, X, _c=coeffs):
                return _c[i] * X, None, None, None, math.inf

            sol = _backward(lat, arr, step_fn, discounted=False, collect=False)
            out[part].append(sol.y0)
    out["admissible"] = all(math.isfinite(v) for v in out["pos"] + out["neg"])
    return out


def scheme_margin(lat: Lattice, n: float,
                  config: RootConfig = DEFAULT_ROOT_CONFIG) -> float:
    """A-priori minimum transition weight of the level-n envelope operator.

    Nonnegative margin is the per-node comparison threshold h < h*(n): the
    bang-bang slopes grow with n, so for fixed h only finitely many levels
    are monotone.
    """
    cache = _EtaCache(lat, config)
    A, B = _envelope_slopes(lat, n, cache)
    return min(_margin_for(lat, i, -float(B[i]), float(A[i]))
               for i in range(lat.n_steps))


def bounds(lat: Lattice, claim: Claim, n_schedule=None, tol: float | None = None,
           *, config: RootConfig = DEFAULT_ROOT_CONFIG,
           check_admissibility: bool = True,
           enforce_margin: bool = True) -> BoundsReport:
    """Run the monotone envelope family on a geometric schedule until the
    root values are tol-Cauchy on both sides (or the schedule is exhausted;
    non-convergence is flagged, never silently accepted).

    Levels whose one-step operator would lose monotonicity (negative scheme
    margin) are not solved: the explicit scheme is unreliable there, so the
    schedule is truncated and reported as such.
    """
    if n_schedule is None:
        n_schedule = default_schedule()
    if tol is None:
        tol = 1e-6 * lat.model.s0

    diag = None
    if check_admissibility and not claim.bounded:
        diag = moment_diagnostic(lat, claim, config=config)
        if not diag["admissible"]:
            raise ValueError(f"claim {claim.describe()} fails the moment diagnostic")

    rows: dict[str, list] = {k: [] for k in
                             ("y_up", "y_low", "v_up", "v_low", "k_up", "k_low",
                              "sk_up", "sk_low", "m_up", "m_low")}
    ns_run: list[float] = []
    conv_up = conv_low = False
    truncated_at = None
    for n in n_schedule:
        if enforce_margin and scheme_margin(lat, n, config) < 0.0:
            truncated_at = float(n)
            break
        up = solve_n(lat, claim, n, "upper", collect=False, config=config)
        low = solve_n(lat, claim, n, "lower", collect=False, config=config)
        ns_run.append(n)
        rows["y_up"].append(up.y0)
        rows["y_low"].append(low.y0)
        rows["v_up"].append(up.violation)
        rows["v_low"].append(low.violation)
        rows["k_up"].append(up.k_total)
        rows["k_low"].append(low.k_total)
        rows["sk_up"].append(up.skorokhod)
        rows["sk_low"].append(low.skorokhod)
        rows["m_up"].append(up.mono_margin)
        rows["m_low"].append(low.mono_margin)
        if len(ns_run) > 1:
            conv_up = abs(rows["y_up"][-1] - rows["y_up"][-2]) < tol
            conv_low = abs(rows["y_low"][-1] - rows["y_low"][-2]) < tol
            if conv_up and conv_low:
                break

    return BoundsReport(
        claim=claim.describe(), klass=lat.klass.value, n_steps=lat.n_steps,
        tol=tol, truncated_at=truncated_at, ns=tuple(ns_run),
        y_upper=tuple(rows["y_up"]), y_lower=tuple(rows["y_low"]),
        v_upper=tuple(rows["v_up"]), v_lower=tuple(rows["v_low"]),
        k_upper=tuple(rows["k_up"]), k_lower=tuple(rows["k_low"]),
        sk_upper=tuple(rows["sk_up"]), sk_lower=tuple(rows["sk_low"]),
        margins_upper=tuple(rows["m_up"]), margins_lower=tuple(rows["m_low"]),
        converged_upper=conv_up, converged_lower=conv_low, moment_diag=diag)


def lower_via_duality(lat: Lattice, claim: Claim, n: float, *, collect: bool = True,
                      config: RootConfig = DEFAULT_ROOT_CONFIG) -> BsdeSolution:
    """Lower envelope as -upper(-xi): sign-symmetry of the explicit scheme
    makes this agree with the direct lower solve to float exactness."""
    terminal = -claim.payoff(lat.s_slice(lat.n_steps))
    cache = _EtaCache(lat, config)
    A, B = _envelope_slopes(lat, n, cache)
    h = lat.h

    def step_fn(i, z, u, X):
        Xp = np.maximum(X, 0.0)
        Xm = np.maximum(-X, 0.0)
        g = A[i] * Xp + B[i] * Xm
        kinc = h * B[i] * Xm
        return g, kinc, Xm, Xp, _margin_for(lat, i, -float(B[i]), float(A[i]))

    up = _backward(lat, terminal, step_fn, discounted=True, collect=collect,
                   label=f"dual-lower-n={n:g}")
    return BsdeSolution(
        y0=-up.y0, y_agg=-up.y_agg, g_agg=-up.g_agg, k_curve=up.k_curve,
        violation=up.violation, skorokhod=up.skorokhod, mono_margin=up.mono_margin,
        label=f"lower-duality-n={n:g}",
        Y=[-y for y in up.Y] if up.Y else None,
        Z=[-z for z in up.Z] if up.Z else None,
        U=[-u for u in up.U] if up.U else None,
        X=[-x for x in up.X] if up.X else None,
        k_inc=up.k_inc)


def interval_sandwich(lat: Lattice, claim: Claim, psi_grid, *,
                      report: BoundsReport | None = None, eps: float | None = None,
                      config: RootConfig = DEFAULT_ROOT_CONFIG) -> dict:
    """Check Y_inf - eps <= Y^psi <= Y_up + eps over a psi grid.

    eps defaults to a scheme-error allowance proportional to s0*h.
    """
    if report is None:
        report = bounds(lat, claim, config=config)
    if eps is None:
        eps = 0.5 * lat.model.s0 * lat.h
    values = {float(p): solve_psi(lat, claim, p, collect=False, config=config).y0
              for p in psi_grid}
    ok = all(report.y_low_final - eps <= v <= report.y_up_final + eps
             for v in values.values())
    return {"Y_inf": report.y_low_final, "Y_up": report.y_up_final, "eps": eps,
            "psi_values": values, "inside": ok}


def class_compare(model, claim: Claim, steps_list=(30, 60, 120), *,
                  n_schedule=None, tol: float | None = None,
                  config: RootConfig = DEFAULT_ROOT_CONFIG) -> dict:
    """Bounds under both Esscher classes across lattice refinements.

    Both classes solve the same constrained equation in the limit; the
    reported gaps are expected to shrink with h and are measured, not assumed.
    """
    from .lattice import build

    out: dict = {"steps": list(steps_list), "upper_gap": [], "lower_gap": [],
                 "upper": {}, "lower": {}}
    for m in steps_list:
        reps = {}
        for klass in (EsscherClass.LINEAR, EsscherClass.EXPONENTIAL):
            lat = build(model, klass, m, config)
            reps[klass.value] = bounds(lat, claim, n_schedule=n_schedule, tol=tol,
                                       config=config)
        out["upper"][m] = {k: r.y_up_final for k, r in reps.items()}
        out["lower"][m] = {k: r.y_low_final for k, r in reps.items()}
        out["upper_gap"].append(abs(reps["linear"].y_up_final
                                    - reps["exponential"].y_up_final))
        out["lower_gap"].append(abs(reps["linear"].y_low_final
                                    - reps["exponential"].y_low_final))
    return out
