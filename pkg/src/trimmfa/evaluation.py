"""Misclassification error, bias/MSE summaries and the Monte-Carlo experiment driver.

Labels follow the conventions of :mod:`trimmfa.aecm` and
:mod:`trimmfa.datagen`: predicted labels are ``0..G-1`` or
:data:`~trimmfa.aecm.TRIMMED`; true labels are ``0..G-1`` for clean rows and
negative codes for contamination.
"""

from __future__ import annotations

import csv
import itertools
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import orthogonal_procrustes
from scipy.optimize import linear_sum_assignment

from .aecm import TRIMMED, FitConfig, fit
from .datagen import ScenarioSpec, generate, scenario
from .exceptions import FitError
from .model import ConstraintBounds, MfaParams

logger = logging.getLogger(__name__)

MAX_EXHAUSTIVE_G = 8


def _best_assignment(score: np.ndarray) -> np.ndarray:
    """Permutation ``sigma`` maximising ``sum_g score[g, sigma[g]]`` for a square matrix.

    Exhaustive for up to :data:`MAX_EXHAUSTIVE_G` rows, Hungarian method beyond.
    """
    G = score.shape[0]
    if G > MAX_EXHAUSTIVE_G:
        rows, cols = linear_sum_assignment(score, maximize=True)
        return cols[np.argsort(rows)]
    perms = np.array(list(itertools.permutations(range(G))))
    totals = score[np.arange(G), perms].sum(axis=1)
    return perms[int(np.argmax(totals))]


def misclassification_error(predicted, truth, n_components: Optional[int] = None) -> float:
    """Share of wrongly labelled rows under the best relabelling of the predicted clusters.

    A clean row (``truth >= 0``) is correct when its relabelled prediction
    equals its true label; a contaminated row (``truth < 0``) is correct
    only when it was trimmed.
    """
    pred = np.asarray(predicted, dtype=int)
    true = np.asarray(truth, dtype=int)
    if pred.shape != true.shape or pred.ndim != 1:
        raise ValueError("predicted and truth must be 1-D with equal length")
    n = len(pred)
    if n == 0:
        raise ValueError("empty label vectors")
    if n_components is None:
        n_components = int(max(pred.max(initial=-1), true.max(initial=-1))) + 1
    G = max(n_components, 1)
    if pred.max(initial=-1) >= G or true.max(initial=-1) >= G:
        raise ValueError(f"labels exceed n_components={G}")
    if np.any((pred < 0) & (pred != TRIMMED)):
        raise ValueError(f"predicted labels must be in 0..G-1 or {TRIMMED}")

    clean = (true >= 0) & (pred >= 0)
    table = np.zeros((G, G))
    np.add.at(table, (pred[clean], true[clean]), 1)
    sigma = _best_assignment(table)
    hits = table[np.arange(G), sigma].sum()
    hits += np.sum((true < 0) & (pred == TRIMMED))
    return float((n - hits) / n)


def align_components(estimate: MfaParams, truth: MfaParams) -> tuple[np.ndarray, float]:
    """Order of the estimated components that best matches ``truth`` by mean distance.

    Returns ``(order, cost)`` so that ``estimate.permuted(order)`` lines up
    with ``truth`` and ``cost`` is the summed Euclidean distance of the means.
    """
    if estimate.n_components != truth.n_components:
        raise ValueError("component counts differ")
    dist = np.linalg.norm(truth.means[:, None, :] - estimate.means[None, :, :], axis=2)
    order = _best_assignment(-dist)
    return order, float(dist[np.arange(len(order)), order].sum())


def rotate_loadings(loadings, target) -> np.ndarray:
    """Right-rotate ``loadings`` by the orthogonal matrix that best matches ``target``."""
    R, _ = orthogonal_procrustes(loadings, target)
    return loadings @ R


def _blocks(params: MfaParams, truth: MfaParams) -> dict:
    out = {}
    for g in range(params.n_components):
        k = g + 1
        lam = rotate_loadings(params.loadings[g], truth.loadings[g])
        out[f"pi_{k}"] = np.atleast_1d(params.weights[g])
        out[f"mu_{k}"] = params.means[g]
        out[f"psi_{k}"] = params.noise_diag[g]
        out[f"lambda_{k}"] = lam.ravel()
        out[f"lambdalambda_{k}"] = (params.loadings[g] @ params.loadings[g].T).ravel()
    return out


@dataclass
class BiasMse:
    """Per-block bias and MSE over a set of aligned estimates.

    ``bias[key]`` is the mean absolute coordinate of ``mean(estimate) - truth``;
    ``mse[key]`` is the mean squared Euclidean (Frobenius for matrices) error,
    equal to the trace of the covariance plus the squared bias norm.
    """

    bias: dict
    mse: dict
    n_used: int
    n_excluded: int = 0


def bias_mse(estimates: Sequence[MfaParams], truth: MfaParams,
             max_mean_distance: Optional[float] = None) -> BiasMse:
    """Align every estimate to ``truth`` and summarise bias and MSE per parameter block.

    Loadings are compared in two ways: entrywise after an orthogonal
    Procrustes rotation onto the true loadings (``lambda_g``) and through the
    rotation-free product ``L L'`` (``lambdalambda_g``).  With
    ``max_mean_distance`` set, estimates whose aligned means are on average
    farther than that from the truth are excluded and counted.
    """
    if len(estimates) < 2:
        raise ValueError("bias_mse needs at least two estimates")
    truth_blocks = _blocks(truth, truth)
    stacks: dict = {k: [] for k in truth_blocks}
    excluded = 0
    for est in estimates:
        order, cost = align_components(est, truth)
        if max_mean_distance is not None and cost / truth.n_components > max_mean_distance:
            excluded += 1
            continue
        for k, v in _blocks(est.permuted(order), truth).items():
            stacks[k].append(v)
    n_used = len(estimates) - excluded
    bias, mse = {}, {}
    for k, t in truth_blocks.items():
        if n_used == 0:
            bias[k] = mse[k] = math.nan
            continue
        err = np.array(stacks[k]) - t
        bias[k] = float(np.mean(np.abs(err.mean(axis=0))))
        mse[k] = float(np.mean(np.sum(err**2, axis=1)))
    return BiasMse(bias, mse, n_used, excluded)


# Settings grid: (c_noise, c_load, alpha).
SETTINGS = {
    "S1": (1e10, 1e10, 0.0),
    "S2": (5.0, 1e10, 0.0),
    "S3": (5.0, 3.0, 0.0),
    "S4": (1e10, 1e10, 0.06),
    "S5": (5.0, 1e10, 0.06),
    "S6": (5.0, 3.0, 0.06),
}
# Ten noise plus ten pointwise rows exceed a 6% trimming budget, so trimmed
# settings on that scenario trim 12%.
CONTAMINATED_ALPHA = {"D+N+PC": 0.12}


def setting_config(setting: str, scenario_name: str = "D", **kw) -> FitConfig:
    """FitConfig for a named setting, with the trimming level adapted to the scenario."""
    c_noise, c_load, alpha = SETTINGS[setting]
    if alpha > 0:
        alpha = CONTAMINATED_ALPHA.get(scenario_name, alpha)
    kw.setdefault("n_components", 3)
    kw.setdefault("n_factors", 2)
    return FitConfig(alpha=alpha, bounds=ConstraintBounds(c_noise, c_load), **kw)


@dataclass
class RepetitionRecord:
    index: int
    data_seed: int
    fit_seed: int
    eta: float
    converged: bool
    n_iter: int
    target: float
    failed: Optional[str] = None


@dataclass
class ExperimentReport:
    scenario: str
    setting: str
    n_clean: int
    alpha: float
    c_noise: float
    c_load: float
    repetitions: int
    seed: int
    eta_mean: float
    eta_std: float
    per_parameter_bias: dict
    per_parameter_mse: dict
    n_failed: int
    n_not_converged: int
    n_excluded: int
    records: list = field(default_factory=list)
    elapsed: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentReport":
        d = dict(d)
        d["records"] = [RepetitionRecord(**r) for r in d.get("records", [])]
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, allow_nan=True)


def repetition_seeds(seed: int, repetitions: int) -> list[tuple[int, int]]:
    """``(data_seed, fit_seed)`` per repetition, from independent spawned streams."""
    out = []
    for child in np.random.SeedSequence(seed).spawn(repetitions):
        a, b = child.generate_state(2, dtype=np.uint64)
        out.append((int(a), int(b)))
    return out


def run_experiment(spec: ScenarioSpec, config: FitConfig, repetitions: int, seed: int = 0,
                   setting: str = "", max_mean_distance: Optional[float] = None) -> ExperimentReport:
    """Generate, fit and score ``repetitions`` independent replicates of a scenario.

    Repetitions whose fit fails on every start are recorded and left out of
    the averages.  The report is a deterministic function of the arguments.
    """
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    t0 = time.perf_counter()
    truth = spec.truth
    records, estimates = [], []
    for i, (ds, fs) in enumerate(repetition_seeds(seed, repetitions)):
        X, y = generate(spec.with_seed(ds))
        try:
            res = fit(X, replace(config, seed=fs))
        except FitError as exc:
            records.append(RepetitionRecord(i, ds, fs, math.nan, False, 0, math.nan, str(exc)))
            continue
        eta = misclassification_error(res.labels, y, truth.n_components)
        records.append(RepetitionRecord(i, ds, fs, eta, res.converged, res.n_iter, res.target))
        estimates.append(res.params)

    etas = np.array([r.eta for r in records if r.failed is None])
    if len(estimates) >= 2:
        bm = bias_mse(estimates, truth, max_mean_distance)
    else:
        bm = BiasMse({}, {}, len(estimates))
    return ExperimentReport(
        scenario=spec.name,
        setting=setting,
        n_clean=spec.n_clean,
        alpha=config.alpha,
        c_noise=config.bounds.c_noise,
        c_load=config.bounds.c_load,
        repetitions=repetitions,
        seed=seed,
        eta_mean=float(etas.mean()) if len(etas) else math.nan,
        eta_std=float(etas.std(ddof=1)) if len(etas) > 1 else math.nan,
        per_parameter_bias=bm.bias,
        per_parameter_mse=bm.mse,
        n_failed=sum(r.failed is not None for r in records),
        n_not_converged=sum(r.failed is None and not r.converged for r in records),
        n_excluded=bm.n_excluded,
        records=records,
        elapsed=time.perf_counter() - t0,
    )


# Preset grids: (scenario name, n_clean, contamination multiplier, settings).
PRESETS = {
    "table1": [("D", 150, 1, list(SETTINGS))],
    "table2": [(s, 150, 1, list(SETTINGS)) for s in ("D+N", "D+PC", "D+N+PC")],
    "bias-mse": [
        ("D", 150, 1, ["S1", "S6"]),
        ("D+N", 150, 1, ["S1", "S6"]),
        ("D+PC", 150, 1, ["S1", "S6"]),
        ("D+N+PC", 150, 1, ["S1", "S6"]),
        ("D+N+PC", 450, 3, ["S1", "S6"]),
    ],
}


def preset_cells(name: str):
    """Expand a preset into ``(ScenarioSpec, setting, FitConfig)`` cells."""
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    cells = []
    for scen, n_clean, mult, settings in PRESETS[name]:
        spec = scenario(scen, n_clean=n_clean)
        spec = replace(spec, n_noise=spec.n_noise * mult, n_pointwise=spec.n_pointwise * mult)
        for s in settings:
            cells.append((spec, s, setting_config(s, scen)))
    return cells


def run_preset(name: str, repetitions: int, seed: int = 0, progress=None) -> list[ExperimentReport]:
    reports = []
    for spec, s, cfg in preset_cells(name):
        rep = run_experiment(spec, cfg, repetitions, seed, setting=s)
        if progress is not None:
            progress(rep)
        reports.append(rep)
    return reports


def _cell_label(r: ExperimentReport) -> str:
    return r.scenario if r.n_clean == 150 else f"{r.scenario} (n={r.n_clean})"


def format_eta_table(reports: Sequence[ExperimentReport]) -> str:
    """Scenarios as rows, settings as columns, mean misclassification error in cells."""
    settings = list(dict.fromkeys(r.setting for r in reports))
    rows = list(dict.fromkeys(_cell_label(r) for r in reports))
    cell = {(_cell_label(r), r.setting): r.eta_mean for r in reports}
    w = max(len(x) for x in rows + ["scenario"])
    lines = ["scenario".ljust(w) + "".join(f"{s:>10}" for s in settings)]
    for row in rows:
        vals = [cell.get((row, s)) for s in settings]
        lines.append(row.ljust(w) + "".join(f"{v:>10.4f}" if v is not None else f"{'':>10}"
                                            for v in vals))
    return "\n".join(lines) + "\n"


def format_bias_table(reports: Sequence[ExperimentReport]) -> str:
    """Parameter blocks as rows; bias with MSE in parentheses for every report column."""
    keys = []
    for r in reports:
        keys.extend(k for k in r.per_parameter_bias if k not in keys)
    heads = [f"{_cell_label(r)} {r.setting}" for r in reports]
    cw = max(24, *(len(h) + 2 for h in heads))
    w = max(len(k) for k in keys + ["parameter"]) if keys else 9
    lines = ["parameter".ljust(w) + "".join(h.rjust(cw) for h in heads)]
    for k in keys:
        cells = []
        for r in reports:
            b, m = r.per_parameter_bias.get(k), r.per_parameter_mse.get(k)
            cells.append("" if b is None else f"{b:.4g} ({m:.4g})")
        lines.append(k.ljust(w) + "".join(c.rjust(cw) for c in cells))
    return "\n".join(lines) + "\n"


def write_records_csv(reports: Sequence[ExperimentReport], path) -> None:
    """One row per repetition, for external plotting."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["scenario", "n_clean", "setting", "rep", "data_seed", "fit_seed", "eta",
                     "converged", "n_iter", "target", "failed"])
        for r in reports:
            for rec in r.records:
                wr.writerow([r.scenario, r.n_clean, r.setting, rec.index, rec.data_seed,
                             rec.fit_seed, repr(rec.eta), int(rec.converged), rec.n_iter,
                             repr(rec.target), rec.failed or ""])
