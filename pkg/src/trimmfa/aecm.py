"""Trimmed and constrained AECM fitting of mixtures of factor analyzers.

One iteration runs two cycles.  The first re-selects the trimmed set and
updates weights and means; the second re-selects the trimmed set again,
takes the latent factors as additional missing data and updates loadings
and noise variances, projecting both onto the ratio constraints.  A fit
consists of several random starts; the converged start with the largest
trimmed log-likelihood wins.

Random streams: ``fit`` derives one child ``SeedSequence`` per start from
``SeedSequence(config.seed)`` via ``spawn`` and feeds each to a PCG64
generator, so start ``k`` draws identical numbers on every platform and
regardless of how many other starts run.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .constraints import enforce_loading_constraint, enforce_noise_constraint
from .exceptions import AllStartsFailedError, EmptyComponentError, FitError, SingularKernelError
from .lowrank import batch_inner, batch_log_density
from .model import ConstraintBounds, MfaParams

logger = logging.getLogger(__name__)

TRIMMED = -1
MIN_COMPONENT_MASS = 1e-8
MAX_INIT_RETRIES = 10
INIT_COND_MAX = 1e12


@dataclass(frozen=True)
class FitConfig:
    """Settings of one trimmed, constrained fit."""

    n_components: int
    n_factors: int
    alpha: float = 0.0
    bounds: ConstraintBounds = field(default_factory=ConstraintBounds)
    n_starts: int = 10
    max_iter: int = 200
    tol: float = 1e-8
    tol_posterior: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.n_components < 1:
            raise ValueError("n_components must be >= 1")
        if self.n_factors < 1:
            raise ValueError("n_factors must be >= 1")
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError(f"alpha must lie in [0, 1), got {self.alpha!r}")
        if self.n_starts < 1 or self.max_iter < 1:
            raise ValueError("n_starts and max_iter must be >= 1")
        if not (self.tol > 0 and self.tol_posterior > 0):
            raise ValueError("tol and tol_posterior must be positive")
        if self.seed < 0 or self.seed >= 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    def check_data(self, n: int, p: int) -> None:
        if self.n_factors >= p:
            raise ValueError(f"n_factors={self.n_factors} must be smaller than p={p}")
        h = n_kept(n, self.alpha)
        need = self.n_components * (p + 1)
        if h < need:
            raise ValueError(
                f"only {h} untrimmed observations (n={n}, alpha={self.alpha}); "
                f"G*(p+1) = {need} are required"
            )


def n_kept(n: int, alpha: float) -> int:
    """Size of the untrimmed set, the integer part of ``n(1-alpha)``."""
    return int(math.floor(n * (1.0 - alpha) + 1e-9))


@dataclass(frozen=True, eq=False)
class TrimmedEStep:
    """Outcome of one trimming E-step.

    ``log_components[i, g]`` is ``log(pi_g phi(x_i; mu_g, Sigma_g))`` and
    ``log_density[i]`` its log-sum over components.
    """

    kept: np.ndarray
    posteriors: np.ndarray
    log_components: np.ndarray
    log_density: np.ndarray

    @property
    def target_terms(self) -> np.ndarray:
        return np.where(self.kept, self.log_density, 0.0)

    @property
    def target(self) -> float:
        return float(np.sum(self.log_density[self.kept]))

    @property
    def trim_set(self) -> np.ndarray:
        return np.flatnonzero(~self.kept)


@dataclass(eq=False)
class FitResult:
    params: MfaParams
    trim_indicator: np.ndarray
    posteriors: np.ndarray
    labels: np.ndarray
    target: float
    log_components: np.ndarray
    n_iter: int
    converged: bool
    start_index: int = 0
    history: list = field(default_factory=list)
    failed_starts: list = field(default_factory=list)

    @property
    def log_density(self) -> np.ndarray:
        return _logsumexp_rows(self.log_components)


def component_log_densities(X, params: MfaParams) -> np.ndarray:
    """``log(pi_g) + log phi(x_i; mu_g, Sigma_g)`` for every row and component."""
    X = np.asarray(X, dtype=float)
    logc = batch_log_density(X, params.means, params.loadings, params.noise_diag)
    return logc + np.log(params.weights)


def _logsumexp_rows(a: np.ndarray) -> np.ndarray:
    top = a.max(axis=1)
    safe = np.where(np.isfinite(top), top, 0.0)
    with np.errstate(divide="ignore"):
        return safe + np.log(np.sum(np.exp(a - safe[:, None]), axis=1))


def e_step_trim(X, params: MfaParams, alpha: float) -> TrimmedEStep:
    """Keep the ``floor(n(1-alpha))`` rows of largest mixture density and compute posteriors.

    Ties in the density are resolved in favour of the smaller row index.
    """
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    h = n_kept(n, alpha)
    logc = component_log_densities(X, params)
    logd = _logsumexp_rows(logc)
    order = np.argsort(-logd, kind="stable")
    kept = np.zeros(n, dtype=bool)
    kept[order[:h]] = True
    if not np.all(np.isfinite(logd[kept])):
        raise SingularKernelError("mixture density underflowed for an untrimmed observation")
    post = np.zeros_like(logc)
    post[kept] = np.exp(logc[kept] - logd[kept, None])
    return TrimmedEStep(kept, post, logc, logd)


def trimmed_target(X, params: MfaParams, alpha: float) -> float:
    """Trimmed log-likelihood at ``params`` with the optimal trimmed set."""
    return e_step_trim(X, params, alpha).target


def cm_step_1(X, posteriors, alpha: float):
    """Weights and means from trimmed posteriors. Returns ``(weights, means)``."""
    X = np.asarray(X, dtype=float)
    h = n_kept(X.shape[0], alpha)
    n_g = posteriors.sum(axis=0)
    if np.any(n_g < MIN_COMPONENT_MASS):
        raise EmptyComponentError(f"component masses {n_g} fell below {MIN_COMPONENT_MASS}")
    weights = n_g / h
    weights = weights / weights.sum()
    means = (posteriors.T @ X) / n_g[:, None]
    return weights, means


def weighted_scatter(X, posteriors, means) -> tuple[np.ndarray, np.ndarray]:
    """Per-component scatter matrices around ``means`` and the component masses."""
    n_g = posteriors.sum(axis=0)
    G, p = means.shape
    S = np.empty((G, p, p))
    for g in range(G):
        R = X - means[g]
        S[g] = (R * posteriors[:, g, None]).T @ R / n_g[g]
        S[g] = 0.5 * (S[g] + S[g].T)
    return S, n_g


def _expected_residual_diag(R, Y, post, n_g, inner_inv, loadings):
    """Diagonal of the expected residual scatter ``E[(r - L u)(r - L u)']`` per component.

    ``R`` (G, n, p) holds centred rows and ``Y`` (G, n, d) their posterior
    factor means.  Written as a weighted sum of squares plus
    ``diag(L M^{-1} L')`` so that it stays accurate when the residual is
    tiny compared with the scatter.
    """
    E = R - Y @ np.swapaxes(loadings, 1, 2)
    return (
        np.einsum("gn,gnp->gp", post, E * E) / n_g[:, None]
        + np.einsum("gpk,gkl,gpl->gp", loadings, inner_inv, loadings)
    )


def _q2(n_g, noise, resid_diag):
    return -0.5 * float(np.sum(n_g[:, None] * (np.log(noise) + resid_diag / noise)))


def cm_step_2(X, posteriors, means, params_prev: MfaParams, bounds: ConstraintBounds):
    """Constrained update of loadings and noise variances. Returns ``(loadings, noise_diag)``.

    Unconstrained loadings ``S gamma' Xi^{-1}`` are projected onto the
    loading constraint, then the noise variances are set to the diagonal of
    the expected residual scatter at those loadings (``diag(S - L gamma S)``
    when the projection is inactive) and projected onto the noise
    constraint.  Projecting loadings is not an exact constrained maximiser,
    so when the result scores below the previous loadings (with their own
    optimal noise) on the second-cycle objective, the previous loadings
    are kept; this makes every iteration non-decreasing in the trimmed
    likelihood.  The output satisfies ``bounds`` whenever ``params_prev``
    does, which holds along a fit because the initializer projects too.
    """
    X = np.asarray(X, dtype=float)
    n_g = posteriors.sum(axis=0)
    if np.any(n_g < MIN_COMPONENT_MASS):
        raise EmptyComponentError(f"component masses {n_g} fell below {MIN_COMPONENT_MASS}")
    weights = n_g / n_g.sum()

    gamma, resid, _ = batch_inner(params_prev.loadings, params_prev.noise_diag)
    post = posteriors.T  # (G, n)
    R = X[None, :, :] - means[:, None, :]
    Y = R @ np.swapaxes(gamma, 1, 2)  # posterior factor means
    tY = Y * post[:, :, None]
    sg = np.swapaxes(R, 1, 2) @ tY / n_g[:, None, None]  # S gamma'
    xi = resid + np.swapaxes(Y, 1, 2) @ tY / n_g[:, None, None]
    xi = 0.5 * (xi + np.swapaxes(xi, 1, 2))
    try:
        raw = np.swapaxes(np.linalg.solve(xi, np.swapaxes(sg, 1, 2)), 1, 2)
    except np.linalg.LinAlgError as exc:
        raise SingularKernelError("posterior factor second moment is singular") from exc

    if np.any(raw != 0):
        loadings = enforce_loading_constraint(raw, weights, bounds.c_load)
    else:
        # zero loadings have no spectrum to constrain and stay zero
        loadings = raw
    rdiag = np.maximum(_expected_residual_diag(R, Y, post, n_g, resid, loadings), 0.0)
    noise = enforce_noise_constraint(rdiag, weights, bounds.c_noise)

    if not np.array_equal(loadings, raw):
        prev = params_prev.loadings
        rdiag_prev = np.maximum(_expected_residual_diag(R, Y, post, n_g, resid, prev), 0.0)
        noise_prev = enforce_noise_constraint(rdiag_prev, weights, bounds.c_noise)
        if _q2(n_g, noise_prev, rdiag_prev) > _q2(n_g, noise, rdiag):
            return np.array(prev), noise_prev
    return loadings, noise


def _initial_component(Xsub: np.ndarray, U: np.ndarray):
    """Regression-style start for one component from a (p+1) x p subsample.

    The subsample is regressed on the random factor draws ``U`` ((p+1) x d);
    the coefficients give the loadings and the residual column variances
    (denominator p+1) the noise.  Returns ``(mean, loadings, noise_diag)``.
    """
    mean = Xsub.mean(axis=0)
    Xc = Xsub - mean
    coef = np.linalg.solve(U.T @ U, U.T @ Xc)  # d x p
    resid = Xc - U @ coef
    return mean, coef.T, resid.var(axis=0)


def initialize(X, config: FitConfig, rng: np.random.Generator) -> MfaParams:
    """Random start: per-component subsample regressions, then constraint projection.

    For each component in turn the generator draws the p+1 row indices
    (without replacement) followed by the (p+1) x d factor matrix; the
    weights are drawn last, uniformly on the simplex.
    """
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    G, d = config.n_components, config.n_factors
    if n < p + 1:
        raise ValueError(f"need at least p+1 = {p + 1} rows, got {n}")
    means = np.empty((G, p))
    loadings = np.empty((G, p, d))
    noise = np.empty((G, p))
    for g in range(G):
        idx = rng.choice(n, size=p + 1, replace=False)
        for _ in range(MAX_INIT_RETRIES):
            U = rng.standard_normal((p + 1, d))
            if np.linalg.cond(U.T @ U) < INIT_COND_MAX:
                break
        else:
            raise SingularKernelError("random factor matrix stayed singular")
        means[g], loadings[g], noise[g] = _initial_component(X[idx], U)
    weights = rng.dirichlet(np.ones(G))
    loadings = enforce_loading_constraint(loadings, weights, config.bounds.c_load)
    noise = enforce_noise_constraint(noise, weights, config.bounds.c_noise)
    return MfaParams(weights, means, loadings, noise)


def run_aecm(X, params0: MfaParams, config: FitConfig, start_index: int = 0) -> FitResult:
    """Iterate the two AECM cycles from ``params0`` until convergence or ``max_iter``.

    Converged means an unchanged trimmed set together with either a
    relative change of the trimmed target below ``config.tol`` or a largest
    change of any posterior probability below ``config.tol_posterior``.
    """
    X = np.asarray(X, dtype=float)
    alpha, bounds = config.alpha, config.bounds
    params = params0
    es = e_step_trim(X, params, alpha)
    history = [es.target]
    converged = False
    it = 0
    for it in range(1, config.max_iter + 1):
        weights, means = cm_step_1(X, es.posteriors, alpha)
        half = MfaParams(weights, means, params.loadings, params.noise_diag)
        es_half = e_step_trim(X, half, alpha)
        loadings, noise = cm_step_2(X, es_half.posteriors, means, params, bounds)
        params = MfaParams(weights, means, loadings, noise)

        es_new = e_step_trim(X, params, alpha)
        history.append(es_new.target)
        prev = history[-2]
        rel = abs(es_new.target - prev) / max(abs(prev), 1e-300)
        same_trim = np.array_equal(es_new.kept, es.kept)
        shift = float(np.max(np.abs(es_new.posteriors - es.posteriors)))
        es = es_new
        if same_trim and (rel < config.tol or shift < config.tol_posterior):
            converged = True
            break

    labels = np.where(es.kept, np.argmax(es.posteriors, axis=1), TRIMMED)
    return FitResult(
        params=params,
        trim_indicator=es.kept.astype(np.int8),
        posteriors=es.posteriors,
        labels=labels,
        target=es.target,
        log_components=es.log_components,
        n_iter=it,
        converged=converged,
        start_index=start_index,
        history=history,
    )


def fit_once(X, config: FitConfig, rng: np.random.Generator, start_index: int = 0) -> FitResult:
    """One random start followed by the AECM iterations."""
    params0 = initialize(X, config, rng)
    return run_aecm(X, params0, config, start_index)


def start_generators(seed: int, n_starts: int) -> list[np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(n_starts)
    return [np.random.Generator(np.random.PCG64(c)) for c in children]


def fit(X, config: FitConfig) -> FitResult:
    """Multistart driver; returns the converged start with the largest target.

    If no start converges the best non-converged start is returned with
    ``converged=False``.  Raises :class:`AllStartsFailedError` when every
    start aborts.
    """
    X = np.asarray(X, dtype=float)
    config.check_data(*X.shape)
    best: Optional[FitResult] = None
    best_nc: Optional[FitResult] = None
    failures = []
    for k, rng in enumerate(start_generators(config.seed, config.n_starts)):
        try:
            res = fit_once(X, config, rng, start_index=k)
        except FitError as exc:
            failures.append((k, f"{type(exc).__name__}: {exc}"))
            continue
        if res.converged:
            if best is None or res.target > best.target:
                best = res
        elif best_nc is None or res.target > best_nc.target:
            best_nc = res
    if best is None:
        if best_nc is None:
            raise AllStartsFailedError(failures)
        logger.warning("no start converged within %d iterations; returning best non-converged start",
                       config.max_iter)
        best = best_nc
    best.failed_starts = failures
    return best


def classify_trimmed(X, result: FitResult) -> np.ndarray:
    """Assign trimmed rows to the component with the largest ``pi_g phi_g(x)``."""
    X = np.asarray(X, dtype=float)
    labels = np.array(result.labels, copy=True)
    trimmed = result.trim_indicator == 0
    if np.any(trimmed):
        logc = component_log_densities(X[trimmed], result.params)
        labels[trimmed] = np.argmax(logc, axis=1)
    return labels
