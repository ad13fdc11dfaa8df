"""Parameter containers for mixtures of Gaussian factor analyzers.

A G-component model in p dimensions with d latent factors is described by
mixing weights, component means, p x d loading matrices and the diagonals of
the (diagonal) noise covariances.  Component covariances are never stored;
they are derived on demand as ``L @ L.T + diag(psi)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

WEIGHT_SUM_TOL = 1e-12


def _frozen(a, dtype=float) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class MfaParams:
    """Full parameter vector of a mixture of factor analyzers.

    Attributes
    ----------
    weights : ndarray of shape (G,)
    means : ndarray of shape (G, p)
    loadings : ndarray of shape (G, p, d)
    noise_diag : ndarray of shape (G, p)
        Diagonals of the noise covariance matrices; strictly positive.
    """

    weights: np.ndarray
    means: np.ndarray
    loadings: np.ndarray
    noise_diag: np.ndarray

    def __post_init__(self):
        w = _frozen(self.weights)
        mu = _frozen(self.means)
        lam = _frozen(self.loadings)
        psi = _frozen(self.noise_diag)
        if w.ndim != 1 or mu.ndim != 2 or lam.ndim != 3 or psi.ndim != 2:
            raise ValueError("expected weights (G,), means (G,p), loadings (G,p,d), noise_diag (G,p)")
        G, p = mu.shape
        if w.shape[0] != G or lam.shape[:2] != (G, p) or psi.shape != (G, p):
            raise ValueError(
                f"inconsistent shapes: weights {w.shape}, means {mu.shape}, "
                f"loadings {lam.shape}, noise_diag {psi.shape}"
            )
        d = lam.shape[2]
        if not 1 <= d < p:
            raise ValueError(f"need 1 <= d < p, got d={d}, p={p}")
        if np.any(w <= 0) or np.any(w > 1):
            raise ValueError(f"weights must lie in (0, 1], got {w}")
        if abs(w.sum() - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError(f"weights must sum to 1, got sum {w.sum()!r}")
        if not np.all(psi > 0):
            raise ValueError("noise_diag entries must be strictly positive")
        for a in (w, mu, lam, psi):
            if not np.all(np.isfinite(a)):
                raise ValueError("parameters must be finite")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "loadings", lam)
        object.__setattr__(self, "noise_diag", psi)

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def n_features(self) -> int:
        return self.means.shape[1]

    @property
    def n_factors(self) -> int:
        return self.loadings.shape[2]

    def covariances(self) -> np.ndarray:
        """All component covariances stacked as (G, p, p)."""
        return np.stack([component_covariance(self, g) for g in range(self.n_components)])

    def permuted(self, order: Sequence[int]) -> "MfaParams":
        """Return a copy whose component ``k`` is this model's component ``order[k]``."""
        order = np.asarray(order)
        return MfaParams(
            self.weights[order], self.means[order], self.loadings[order], self.noise_diag[order]
        )

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "loadings": self.loadings.tolist(),
            "noise_diag": self.noise_diag.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MfaParams":
        return cls(d["weights"], d["means"], d["loadings"], d["noise_diag"])


@dataclass(frozen=True)
class ConstraintBounds:
    """Ratio bounds on noise variances and on loading eigenvalues.

    A "virtually unconstrained" fit uses a large finite value such as 1e10.
    """

    c_noise: float = 1e10
    c_load: float = 1e10

    def __post_init__(self):
        for name in ("c_noise", "c_load"):
            c = getattr(self, name)
            if not np.isfinite(c) or c < 1:
                raise ValueError(f"{name} must be finite and >= 1, got {c!r}")


@dataclass(frozen=True, eq=False)
class DataMatrix:
    """An n x p block of finite observations with optional column names."""

    values: np.ndarray
    column_names: Optional[tuple] = field(default=None)

    def __post_init__(self):
        x = _frozen(self.values)
        if x.ndim != 2:
            raise ValueError(f"data must be 2-dimensional, got shape {x.shape}")
        bad = np.argwhere(~np.isfinite(x))
        if bad.size:
            i, j = bad[0]
            raise ValueError(f"non-finite value at row {i}, column {j}")
        object.__setattr__(self, "values", x)
        if self.column_names is not None:
            names = tuple(str(c) for c in self.column_names)
            if len(names) != x.shape[1]:
                raise ValueError(f"{len(names)} column names for {x.shape[1]} columns")
            object.__setattr__(self, "column_names", names)

    @property
    def shape(self):
        return self.values.shape

    def check_size(self, n_components: int) -> None:
        n, p = self.values.shape
        if n < n_components * (p + 1):
            raise ValueError(
                f"n={n} observations is too small for G={n_components}, p={p} "
                f"(need at least G*(p+1) = {n_components * (p + 1)})"
            )


def component_covariance(params: MfaParams, g: int) -> np.ndarray:
    """Return ``Lambda_g Lambda_g' + diag(psi_g)``."""
    if not 0 <= g < params.n_components:
        raise IndexError(f"component {g} out of range for G={params.n_components}")
    lam = params.loadings[g]
    cov = lam @ lam.T
    cov[np.diag_indices_from(cov)] += params.noise_diag[g]
    return 0.5 * (cov + cov.T)


@dataclass(frozen=True)
class ConstraintCheck:
    satisfied: bool
    noise_ratio: float
    load_ratio: float
    noise_ok: bool
    load_ok: bool

    def __bool__(self):
        return self.satisfied


def loading_eigenvalues(loadings: np.ndarray) -> np.ndarray:
    """The d leading eigenvalues of ``L L'`` for each component, shape (G, d).

    Obtained as squared singular values of the p x d loading matrices.
    """
    s = np.linalg.svd(np.asarray(loadings, dtype=float), compute_uv=False)
    return s**2


def _ratio(values: np.ndarray) -> float:
    hi, lo = float(values.max()), float(values.min())
    if hi == 0.0:
        return 1.0
    if lo == 0.0:
        return np.inf
    return hi / lo


def check_constraints(params: MfaParams, bounds: ConstraintBounds, tol: float = 1e-8) -> ConstraintCheck:
    """Check both eigenvalue-ratio constraints with relative slack ``tol``."""
    noise_ratio = _ratio(params.noise_diag)
    load_ratio = _ratio(loading_eigenvalues(params.loadings))
    noise_ok = noise_ratio <= bounds.c_noise * (1 + tol)
    load_ok = load_ratio <= bounds.c_load * (1 + tol)
    return ConstraintCheck(noise_ok and load_ok, noise_ratio, load_ratio, noise_ok, load_ok)


def parameter_count(p: int, d: int, G: int) -> int:
    """Free parameters of a G-component, d-factor model in p dimensions.

    Loadings are counted modulo rotation, i.e. ``p*d - d*(d-1)/2`` per component.
    """
    if not 1 <= d < p:
        raise ValueError(f"need 1 <= d < p, got d={d}, p={p}")
    return (G - 1) + G * p + G * (p * d - d * (d - 1) // 2) + G * p
