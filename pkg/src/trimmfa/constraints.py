"""Projection of noise variances and loading spectra onto the ratio constraints.

Given non-negative values ``v_gk`` grouped by component, weights ``w_g`` and a
ratio bound ``c``, each value is clamped to ``[m, c*m]`` with the threshold
``m`` chosen to minimise

    f(m) = sum_g w_g sum_k ( log [v_gk]_m + v_gk / [v_gk]_m ).

With the clamping pattern held fixed, ``f`` has the form
``W log m + A/m + const`` whose minimiser is ``A/W``.  The breakpoints
``{v} U {v/c}`` cut ``(0, inf)`` into at most ``2K+1`` intervals on which the
pattern is constant, so the global minimiser is found by clamping each
interval's stationary point into the interval and comparing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DegenerateThresholdError


@dataclass(frozen=True, eq=False)
class TruncationProblem:
    """Values to be clamped jointly, with one weight per value."""

    values: np.ndarray
    weights: np.ndarray
    ratio_bound: float

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        w = np.asarray(self.weights, dtype=float).ravel()
        if v.shape != w.shape:
            raise ValueError("values and weights must have the same size")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ValueError("values must be finite and non-negative")
        if np.any(w < 0):
            raise ValueError("weights must be non-negative")
        if not self.ratio_bound >= 1:
            raise ValueError(f"ratio_bound must be >= 1, got {self.ratio_bound!r}")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_groups(cls, grouped_values, group_weights, ratio_bound) -> "TruncationProblem":
        """Build from a (G, k) array of values and G component weights."""
        grouped = np.asarray(grouped_values, dtype=float)
        gw = np.asarray(group_weights, dtype=float)
        if grouped.ndim != 2 or grouped.shape[0] != gw.shape[0]:
            raise ValueError("grouped_values must be (G, k) with G matching group_weights")
        return cls(grouped, np.repeat(gw, grouped.shape[1]), float(ratio_bound))


def truncate(v, m, c):
    """Clamp ``v`` into ``[m, c*m]``."""
    return np.minimum(c * m, np.maximum(v, m))


def objective(problem: TruncationProblem, m) -> np.ndarray | float:
    """Evaluate the threshold objective at one or several thresholds ``m``."""
    m_arr = np.asarray(m, dtype=float)
    mm = np.atleast_1d(m_arr)[:, None]
    t = truncate(problem.values[None, :], mm, problem.ratio_bound)
    out = np.sum(problem.weights * (np.log(t) + problem.values / t), axis=1)
    return float(out[0]) if m_arr.ndim == 0 else out


def optimal_threshold(problem: TruncationProblem) -> float:
    """Global minimiser of :func:`objective` over ``m > 0``."""
    return _threshold(problem.values, problem.weights, problem.ratio_bound)


def _objective(v, w, c, m):
    t = np.minimum(c * m[:, None], np.maximum(v[None, :], m[:, None]))
    return np.sum(w * (np.log(t) + v / t), axis=1)


def _threshold(v, w, c) -> float:
    if not np.any(v > 0):
        raise DegenerateThresholdError("all values are zero; no positive threshold exists")

    bps = np.unique(np.concatenate([v, v / c]))
    bps = bps[bps > 0]
    # interval j spans (lo[j], hi[j]); the first starts at 0, the last is unbounded
    lo = np.concatenate([[0.0], bps])
    hi = np.concatenate([bps, [np.inf]])
    probe = np.where(np.isinf(hi), 2.0 * lo, 0.5 * (lo + hi))

    low = v[None, :] < probe[:, None]
    high = v[None, :] > c * probe[:, None]
    wl, wh = w * low, w * high
    num = wl @ v + wh @ (v / c)
    den = wl.sum(axis=1) + wh.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        stationary = np.where(den > 0, num / den, probe)
    cand = np.clip(stationary, lo, hi)
    cand = np.where(cand > 0, cand, probe)
    cand = np.concatenate([cand, bps])
    return float(cand[int(np.argmin(_objective(v, w, c, cand)))])


def enforce_noise_constraint(noise_diags, weights, c_noise: float) -> np.ndarray:
    """Clamp all noise variances jointly so that their max/min ratio is at most ``c_noise``."""
    psi = np.asarray(noise_diags, dtype=float)
    w = np.repeat(np.asarray(weights, dtype=float), psi.shape[1])
    m = _threshold(psi.ravel(), w, float(c_noise))
    return truncate(psi, m, c_noise)


def enforce_loading_constraint(loadings, weights, c_load: float) -> np.ndarray:
    """Clamp the eigenvalues of every ``L_g L_g'`` jointly to a ratio of at most ``c_load``.

    Each ``L_g = U_g diag(s_g) V_g'`` is rebuilt as ``U_g diag(sqrt(e*)) V_g'``
    with ``e*`` the clamped squared singular values, so loadings whose
    spectrum is already admissible come back unchanged.
    """
    lam = np.asarray(loadings, dtype=float)
    U, s, Vt = np.linalg.svd(lam, full_matrices=False)
    eig = s**2
    w = np.repeat(np.asarray(weights, dtype=float), eig.shape[1])
    m = _threshold(eig.ravel(), w, float(c_load))
    new_s = np.sqrt(truncate(eig, m, c_load))
    return np.einsum("gpk,gk,gkd->gpd", U, new_s, Vt)
