"""Recombining chain approximating the model under the baseline tilted measure.

All pricing BSDEs are posed under the psi=0 Esscher measure, where the
driving noise is a Brownian motion W0 and the Poisson process N with
intensity lambda0 = lambda * e^{eta(0)*zeta}.  The chain state at slice i is
(j, m): j = number of +sqrt(h) Brownian moves so far, m = number of jumps.
Per step the Brownian move is +/-sqrt(h) with probability 1/2 each and the
jump indicator is Bernoulli(lambda0*h), independent of it, so slice i holds
(i+1)^2 nodes and

    S(i, j, m) = s0 * exp( sum_{k<i} (b_k + sigma^2*eta_k(0) - gamma*lambda_k)*h
                           + sigma*sqrt(h)*(2j - i) + gamma*m ).

Recombination in (j, m) requires sigma and gamma to be uniform across
segments; r, b and lambda may vary per segment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .esscher_solver import DEFAULT_ROOT_CONFIG, EsscherClass, RootConfig, eta, zeta
from .market_model import MarketModel, StepCoeffs, step_coefficients

__all__ = ["Lattice", "CflError", "build", "project"]


class CflError(ValueError):
    """Jump probability lambda0*h would reach 1; more steps are required."""

    def __init__(self, message: str, min_steps: int):
        super().__init__(message)
        self.min_steps = min_steps


@dataclass(frozen=True)
class Lattice:
    model: MarketModel
    klass: EsscherClass
    n_steps: int
    coeffs: StepCoeffs
    eta0: np.ndarray         # eta(0) per step
    lam0: np.ndarray         # tilted jump intensity per step
    p_jump: np.ndarray       # Bernoulli jump probability per step
    drift_cum: np.ndarray    # cumulative drift at slice times, length M+1
    prob_j: list[np.ndarray] = field(repr=False)   # Brownian-count marginal per slice
    prob_m: list[np.ndarray] = field(repr=False)   # jump-count marginal per slice

    @property
    def h(self) -> float:
        return self.coeffs.h

    @property
    def sqrt_h(self) -> float:
        return math.sqrt(self.coeffs.h)

    @property
    def sigma(self) -> float:
        return float(self.coeffs.sigma[0])

    @property
    def gamma(self) -> float:
        return float(self.coeffs.gamma[0])

    @property
    def gamma_tilde(self) -> float:
        return float(self.coeffs.gamma_tilde[0])

    def s_slice(self, i: int) -> np.ndarray:
        """Node prices at slice i, indexed [j, m], shape (i+1, i+1)."""
        j = np.arange(i + 1)
        log_s = (self.drift_cum[i]
                 + self.sigma * self.sqrt_h * (2.0 * j - i)[:, None]
                 + self.gamma * j[None, :])
        return self.model.s0 * np.exp(log_s)

    def node_probs(self, i: int) -> np.ndarray:
        """Chain probability of each (j, m) node at slice i."""
        return np.outer(self.prob_j[i], self.prob_m[i])

    def project(self, V_next: np.ndarray, i: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Least-squares coefficients of V_next ~ y + z*dW0 + u*dN0~ at slice i.

        Returns (y_exp, z, u) arrays shaped (i+1, i+1):
        y_exp = E[V'], z = E[V' dW0]/h, u = E[V' dN0~]/(p(1-p)) with
        dN0~ = dN - p.  dW0 and dN0~ are independent under the chain law.
        """
        p = self.p_jump[i]
        up_no = V_next[1:, :-1]     # (j+1, m)
        dn_no = V_next[:-1, :-1]    # (j,   m)
        up_jp = V_next[1:, 1:]      # (j+1, m+1)
        dn_jp = V_next[:-1, 1:]     # (j,   m+1)
        mean_no = 0.5 * (up_no + dn_no)
        mean_jp = 0.5 * (up_jp + dn_jp)
        y_exp = (1.0 - p) * mean_no + p * mean_jp
        z = (0.5 * (1.0 - p) * (up_no - dn_no) + 0.5 * p * (up_jp - dn_jp)) / self.sqrt_h
        u = mean_jp - mean_no
        return y_exp, z, u

    def s_martingale_error(self) -> float:
        """max over slices/nodes of |E[e^{-rh} S_{i+1} | node]/S_i - 1|.

        The chain drift makes this O(h^2) per step; the diagnostic guards the
        measure-change bookkeeping behind the lattice construction.
        """
        worst = 0.0
        for i in range(self.n_steps):
            s_next = self.s_slice(i + 1)
            y_exp, _, _ = self.project(s_next, i)
            ratio = math.exp(-self.coeffs.r[i] * self.h) * y_exp / self.s_slice(i)
            worst = max(worst, float(np.max(np.abs(ratio - 1.0))))
        return worst

    def dump_slices(self, max_slice: int = 2) -> list[dict]:
        """Plain row dicts for slices 0..max_slice (debugging CSV)."""
        rows = []
        for i in range(min(max_slice, self.n_steps) + 1):
            s = self.s_slice(i)
            probs = self.node_probs(i)
            for j in range(i + 1):
                for m in range(i + 1):
                    rows.append({"slice": i, "j": j, "m": m,
                                 "S": s[j, m], "prob": probs[j, m]})
        return rows


def build(model: MarketModel, klass: EsscherClass, n_steps: int,
          config: RootConfig = DEFAULT_ROOT_CONFIG) -> Lattice:
    """Build the tilted-measure chain; errors carry the smallest viable M."""
    coeffs = step_coefficients(model, n_steps)

    if np.ptp(coeffs.sigma) != 0.0 or np.ptp(coeffs.gamma) != 0.0:
        raise ValueError(
            "lattice recombination requires sigma and gamma uniform across "
            "segments; vary r, b, lambda only")

    eta0 = np.empty(n_steps)
    lam0 = np.empty(n_steps)
    segs = model.segments
    eta_by_segment = {k: eta(0.0, seg, klass, discount=True, config=config)
                      for k, seg in enumerate(segs)}
    for i in range(n_steps):
        k = int(coeffs.segment_index[i])
        eta0[i] = eta_by_segment[k]
        lam0[i] = coeffs.lam[i] * math.exp(eta0[i] * zeta(segs[k], klass))

    p_jump = lam0 * coeffs.h
    if np.any(p_jump >= 1.0):
        min_steps = math.ceil(model.horizon * float(np.max(lam0))) + 1
        raise CflError(
            f"jump probability lambda0*h reaches {float(np.max(p_jump)):.3g}; "
            f"need n_steps >= {min_steps}", min_steps=min_steps)

    drift = coeffs.b + coeffs.sigma**2 * eta0 - coeffs.gamma * coeffs.lam
    drift_cum = np.concatenate([[0.0], np.cumsum(drift * coeffs.h)])

    # Marginals of (j, m) under the chain: symmetric binomial for j, an
    # inhomogeneous Bernoulli convolution for m.
    prob_j = [np.array([1.0])]
    prob_m = [np.array([1.0])]
    for i in range(n_steps):
        pj_prev, pm_prev = prob_j[-1], prob_m[-1]
        pj = np.zeros(i + 2)
        pj[:-1] += 0.5 * pj_prev
        pj[1:] += 0.5 * pj_prev
        p = p_jump[i]
        pm = np.zeros(i + 2)
        pm[:-1] += (1.0 - p) * pm_prev
        pm[1:] += p * pm_prev
        prob_j.append(pj)
        prob_m.append(pm)

    return Lattice(model=model, klass=klass, n_steps=n_steps, coeffs=coeffs,
                   eta0=eta0, lam0=lam0, p_jump=p_jump, drift_cum=drift_cum,
                   prob_j=prob_j, prob_m=prob_m)


def project(lattice: Lattice, V_next: np.ndarray, i: int):
    """Module-level alias of Lattice.project."""
    return lattice.project(V_next, i)
