"""Γ-sensitivity bounds and the transition uncertainty sets they induce."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core_mdp import ObservedPolicy
from .data import EmpiricalModel, Widths
from .errors import InfeasibleError

FEAS_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class SensitivityBounds:
    gamma: float
    alpha: np.ndarray   # [T, s, a]
    beta: np.ndarray    # [T, s, a]


def _as_table(pi) -> np.ndarray:
    if isinstance(pi, EmpiricalModel):
        return pi.pi_b
    if isinstance(pi, ObservedPolicy):
        return pi.table
    t = np.asarray(pi, dtype=float)
    return t[None] if t.ndim == 2 else t


def sensitivity_bounds(pi_b_hat, gamma: float) -> SensitivityBounds:
    """``alpha = pi + (1 - pi)/Γ`` and ``beta = Γ + pi (1 - Γ)`` elementwise."""
    if not gamma >= 1.0:
        raise ValueError("gamma must be >= 1")
    pi = _as_table(pi_b_hat)
    alpha = pi + (1.0 - pi) / gamma
    beta = gamma + pi * (1.0 - gamma)
    return SensitivityBounds(float(gamma), alpha, beta)


@dataclass(eq=False)
class TransitionUncertainty:
    """Elementwise envelopes ``lo <= P(.|s,a) <= hi`` per timestep (``T = 1``: stationary)."""

    lo: np.ndarray        # [T, s, a, s']
    hi: np.ndarray        # [T, s, a, s']
    visited: np.ndarray   # [T, s, a]
    kind: str
    gamma: float

    @property
    def T(self) -> int:
        return self.lo.shape[0]

    @property
    def stationary(self) -> bool:
        return self.T == 1

    def at(self, h: int):
        t = min(h, self.T - 1)
        return self.lo[t], self.hi[t]

    def visited_at(self, h: int) -> np.ndarray:
        return self.visited[min(h, self.T - 1)]

    def infeasible_cells(self) -> list:
        slo = self.lo.sum(-1)
        shi = self.hi.sum(-1)
        bad = (slo > 1 + FEAS_TOL) | (shi < 1 - FEAS_TOL) | np.any(self.lo > self.hi + FEAS_TOL, axis=-1)
        return [tuple(c) for c in np.argwhere(bad)]

    def check(self):
        cells = self.infeasible_cells()
        if cells:
            raise InfeasibleError(cells)
        return self

    def intersect(self) -> "TransitionUncertainty":
        """Stationary set ``[max_h lo_h, min_h hi_h]``."""
        if self.stationary:
            return self
        return TransitionUncertainty(self.lo.max(0, keepdims=True), self.hi.min(0, keepdims=True),
                                     self.visited.any(0, keepdims=True), self.kind, self.gamma)

    def contains(self, P, tol: float = 1e-12) -> bool:
        """Whether a kernel ``[s, a, s']`` (or ``[T, s, a, s']``) lies in the set on visited rows."""
        P = np.asarray(P)
        if P.ndim == 3:
            P = np.broadcast_to(P, self.lo.shape)
        ok = (P >= self.lo - tol) & (P <= self.hi + tol)
        return bool(np.all(ok.all(-1) | ~self.visited))


def hoeffding_factors(pi_hat: np.ndarray, d_pi: np.ndarray, gamma: float):
    """Conservative ``alpha``/``beta`` when ``pi_hat`` is only known up to ``d_pi``.

    ``alpha`` increases and ``beta`` decreases in the behavior probability, so both use
    the lower end ``max(pi_hat - d_pi, 0)`` of the confidence interval.
    """
    lower = np.clip(pi_hat - d_pi[..., None], 0.0, 1.0)
    alpha = 1.0 / gamma + (1.0 - 1.0 / gamma) * lower
    beta = gamma + (1.0 - gamma) * lower
    return alpha, beta


def build_uncertainty(model: EmpiricalModel, sb: SensitivityBounds | None = None, widths: Widths | None = None,
                      gamma: float | None = None) -> TransitionUncertainty:
    """Envelopes from a model and Γ, optionally widened by Hoeffding widths.

    Point estimate: ``lo = alpha P_hat``, ``hi = beta P_hat``.  Widened:
    ``lo = alpha_d (P_hat - d_P)_+`` and ``hi = min(beta_d (P_hat + d_P), 1)``.  Rows never
    observed get the whole simplex ``[0, 1]`` and are flagged as unvisited; estimators
    decide whether such a row may be used.
    """
    if sb is None:
        if gamma is None:
            raise ValueError("pass either sensitivity bounds or gamma")
        sb = sensitivity_bounds(model.pi_b, gamma)
    P = model.P
    visited = model.visited_sa.copy()
    if widths is None:
        lo = sb.alpha[..., None] * P
        hi = sb.beta[..., None] * P
        kind = "point"
    else:
        if widths.d_P.shape[0] != P.shape[0]:
            raise ValueError("widths and model use different time pooling")
        a_d, b_d = hoeffding_factors(model.pi_b, widths.d_pi, sb.gamma)
        dP = widths.d_P[..., None]
        with np.errstate(invalid="ignore"):
            lo = a_d[..., None] * np.clip(P - dP, 0.0, None)
            hi = np.minimum(b_d[..., None] * (P + dP), 1.0)
        kind = "hoeffding"
    lo = np.where(visited[..., None], lo, 0.0)
    hi = np.where(visited[..., None], hi, 1.0)
    return TransitionUncertainty(lo, hi, visited, kind, sb.gamma)
