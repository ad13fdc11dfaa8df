"""Simulation scenarios: a G=3, p=6, d=2 mixture plus optional contamination.

Row labels use ``0..G-1`` for mixture components and the negative codes
:data:`NOISE` and :data:`POINTWISE` for added outliers.

Scenario files are plain ``key = value`` text (``#`` starts a comment)::

    truth = g3p6d2          # name of a built-in truth
    n_clean = 150
    n_noise = 10
    n_pointwise = 10
    noise_box_expansion = 0.1
    pointwise_location = 25, 25, 25, 25, 25, 25
    pointwise_jitter = 0.1
    seed = 7

Every key except ``truth`` is optional and falls back to the defaults of
:class:`ScenarioSpec`.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .model import MfaParams

NOISE = -2
POINTWISE = -3


def g3p6d2_truth() -> MfaParams:
    """The three-component benchmark mixture (p=6 observed, d=2 factors)."""
    means = np.array([np.zeros(6), np.full(6, 5.0), np.full(6, 10.0)])
    noise = np.array([np.full(6, 0.1), np.full(6, 0.4), np.full(6, 0.2)])
    loadings = np.array(
        [
            [[0.50, 1.00], [1.00, 0.45], [0.05, -0.50], [-0.60, 0.50], [0.50, 0.10], [1.00, -0.15]],
            [[0.10, 0.20], [0.20, 0.50], [1.00, -1.00], [-0.20, 0.50], [1.00, 0.70], [1.20, -0.30]],
            [[0.10, 0.20], [0.20, 0.00], [1.00, 0.00], [-0.20, 0.00], [1.00, 0.00], [0.00, -1.30]],
        ]
    )
    return MfaParams([0.3, 0.4, 0.3], means, loadings, noise)


BUILTIN_TRUTHS = {"g3p6d2": g3p6d2_truth}


@dataclass(frozen=True, eq=False)
class ScenarioSpec:
    truth: MfaParams = field(default_factory=g3p6d2_truth)
    n_clean: int = 150
    n_noise: int = 0
    n_pointwise: int = 0
    noise_box_expansion: float = 0.1
    pointwise_location: Optional[np.ndarray] = None
    pointwise_jitter: float = 0.1
    seed: int = 0
    truth_name: str = "g3p6d2"

    def __post_init__(self):
        if min(self.n_clean, self.n_noise, self.n_pointwise) < 0:
            raise ValueError("row counts must be non-negative")
        if self.n_clean + self.n_noise + self.n_pointwise == 0:
            raise ValueError("scenario produces no rows")
        loc = self.pointwise_location
        if loc is None:
            loc = np.full(self.truth.n_features, 25.0)
        loc = np.asarray(loc, dtype=float)
        if loc.shape != (self.truth.n_features,):
            raise ValueError(f"pointwise_location must have length {self.truth.n_features}")
        object.__setattr__(self, "pointwise_location", loc)

    @property
    def name(self) -> str:
        parts = ["D"]
        if self.n_noise:
            parts.append("N")
        if self.n_pointwise:
            parts.append("PC")
        return "+".join(parts)

    def with_seed(self, seed: int) -> "ScenarioSpec":
        return replace(self, seed=seed)


def scenario(name: str, n_clean: int = 150, **kw) -> ScenarioSpec:
    """Named scenario: ``"D"``, ``"D+N"``, ``"D+PC"`` or ``"D+N+PC"``."""
    parts = set(name.upper().split("+"))
    if "D" not in parts or not parts <= {"D", "N", "PC"}:
        raise ValueError(f"unknown scenario {name!r}")
    return ScenarioSpec(
        n_clean=n_clean,
        n_noise=10 if "N" in parts else 0,
        n_pointwise=10 if "PC" in parts else 0,
        **kw,
    )


def sample_mixture(truth: MfaParams, n: int, rng: np.random.Generator):
    """Draw ``n`` rows from the mixture. Returns ``(X, labels)``."""
    G, p, d = truth.n_components, truth.n_features, truth.n_factors
    labels = rng.choice(G, size=n, p=truth.weights)
    u = rng.standard_normal((n, d))
    e = rng.standard_normal((n, p)) * np.sqrt(truth.noise_diag[labels])
    X = truth.means[labels] + np.einsum("ipk,ik->ip", truth.loadings[labels], u) + e
    return X, labels


def add_uniform_noise(X, n_noise: int, expansion: float, rng: np.random.Generator):
    """Append rows uniform on the data's per-column range widened by ``expansion * range``.

    Returns ``(X_out, is_noise)``.
    """
    X = np.asarray(X, dtype=float)
    if n_noise < 0:
        raise ValueError("n_noise must be non-negative")
    lo, hi = X.min(axis=0), X.max(axis=0)
    span = hi - lo
    noise = rng.uniform(lo - expansion * span, hi + expansion * span, size=(n_noise, X.shape[1]))
    flags = np.r_[np.zeros(len(X), bool), np.ones(n_noise, bool)]
    return np.vstack([X, noise]), flags


def add_pointwise(X, n_pw: int, location, rng: np.random.Generator, jitter: float = 0.1):
    """Append ``n_pw`` rows at ``location`` plus uniform ``[-jitter, jitter]`` noise.

    ``location`` must lie outside the bounding box of ``X``.  Returns
    ``(X_out, is_pointwise)``.
    """
    X = np.asarray(X, dtype=float)
    loc = np.asarray(location, dtype=float)
    lo, hi = X.min(axis=0), X.max(axis=0)
    if np.all((loc >= lo) & (loc <= hi)):
        raise ValueError("pointwise contamination location lies inside the data's bounding box")
    pts = loc + rng.uniform(-jitter, jitter, size=(n_pw, X.shape[1]))
    flags = np.r_[np.zeros(len(X), bool), np.ones(n_pw, bool)]
    return np.vstack([X, pts]), flags


def generate(spec: ScenarioSpec):
    """Realise a scenario. Returns ``(X, labels)`` with outliers appended after clean rows.

    The seed is split into three independent streams: mixture sample,
    uniform noise, pointwise contamination.
    """
    s_mix, s_noise, s_pc = (
        np.random.Generator(np.random.PCG64(c)) for c in np.random.SeedSequence(spec.seed).spawn(3)
    )
    X, labels = sample_mixture(spec.truth, spec.n_clean, s_mix)
    clean = X
    if spec.n_noise:
        X, _ = add_uniform_noise(clean, spec.n_noise, spec.noise_box_expansion, s_noise)
        labels = np.r_[labels, np.full(spec.n_noise, NOISE)]
    if spec.n_pointwise:
        pts, _ = add_pointwise(clean, spec.n_pointwise, spec.pointwise_location, s_pc,
                               spec.pointwise_jitter)
        X = np.vstack([X, pts[len(clean):]])
        labels = np.r_[labels, np.full(spec.n_pointwise, POINTWISE)]
    return X, labels


_INT_KEYS = {"n_clean", "n_noise", "n_pointwise", "seed"}
_FLOAT_KEYS = {"noise_box_expansion", "pointwise_jitter"}


def parse_scenario(text: str) -> ScenarioSpec:
    kw = {}
    truth_name = "g3p6d2"
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            if key == "truth":
                truth_name = value
            elif key in _INT_KEYS:
                kw[key] = int(value)
            elif key in _FLOAT_KEYS:
                kw[key] = float(value)
            elif key == "pointwise_location":
                kw[key] = np.array([float(v) for v in value.split(",")])
            else:
                raise ValueError(f"unknown key {key!r}")
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    if truth_name not in BUILTIN_TRUTHS:
        raise ValueError(f"unknown truth {truth_name!r}; available: {sorted(BUILTIN_TRUTHS)}")
    return ScenarioSpec(truth=BUILTIN_TRUTHS[truth_name](), truth_name=truth_name, **kw)


def load_scenario(path) -> ScenarioSpec:
    return parse_scenario(Path(path).read_text())


def format_scenario(spec: ScenarioSpec) -> str:
    loc = ", ".join(repr(float(v)) for v in spec.pointwise_location)
    return (
        f"truth = {spec.truth_name}\n"
        f"n_clean = {spec.n_clean}\n"
        f"n_noise = {spec.n_noise}\n"
        f"n_pointwise = {spec.n_pointwise}\n"
        f"noise_box_expansion = {spec.noise_box_expansion!r}\n"
        f"pointwise_location = {loc}\n"
        f"pointwise_jitter = {spec.pointwise_jitter!r}\n"
        f"seed = {spec.seed}\n"
    )
