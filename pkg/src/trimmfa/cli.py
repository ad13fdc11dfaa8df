"""Command-line entry point: ``trimmfa fit | simulate | experiment``.

Exit codes
----------
0  every requested fit converged
1  at least one fit stopped at the iteration limit without converging
2  bad input (unreadable CSV, non-numeric cells, too few rows, bad flags)
3  every random start of a fit failed
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .aecm import FitConfig, classify_trimmed, component_log_densities, fit
from .datagen import NOISE, POINTWISE, format_scenario, generate, load_scenario
from .evaluation import (
    PRESETS,
    format_bias_table,
    format_eta_table,
    misclassification_error,
    run_preset,
    write_records_csv,
)
from .exceptions import AllStartsFailedError
from .model import ConstraintBounds, DataMatrix, MfaParams

logger = logging.getLogger("trimmfa")

EXIT_OK, EXIT_NOT_CONVERGED, EXIT_INPUT, EXIT_ALL_FAILED = 0, 1, 2, 3


class InputError(Exception):
    """Problem with user-supplied files or flags."""


@dataclass
class CsvTable:
    values: np.ndarray
    column_names: list
    labels: Optional[list] = None
    label_name: Optional[str] = None


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def read_csv(path, label_col: Optional[str] = None, header: Optional[bool] = None,
             delimiter: str = ",") -> CsvTable:
    """Read a numeric CSV; the header is detected when ``header`` is None.

    ``label_col`` names (or, without a header, indexes from 0) a column that
    is set aside as class labels instead of being parsed as a number.
    """
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh, delimiter=delimiter)]
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    except csv.Error as exc:
        raise InputError(f"{path}: malformed CSV ({exc})") from None
    # keep the physical line number next to every non-blank row
    rows = [(i + 1, r) for i, r in enumerate(rows) if any(c.strip() for c in r)]
    if not rows:
        raise InputError(f"{path}: no data rows")

    first = [c.strip() for c in rows[0][1]]
    if header is None:
        # a numeric label index means that cell may legitimately be text
        skip = int(label_col) if label_col is not None and label_col.isdigit() else None
        header = not all(_is_number(c) for j, c in enumerate(first) if c != "" and j != skip)
    if header:
        names = first
        rows = rows[1:]
    else:
        names = [f"x{j + 1}" for j in range(len(first))]
    if not rows:
        raise InputError(f"{path}: header but no data rows")
    width = len(names)

    label_idx = None
    if label_col is not None:
        if label_col in names:
            label_idx = names.index(label_col)
        elif label_col.isdigit() and int(label_col) < width:
            label_idx = int(label_col)
        else:
            raise InputError(f"label column {label_col!r} not found; columns are {names}")

    keep = [j for j in range(width) if j != label_idx]
    values = np.empty((len(rows), len(keep)))
    labels = []
    for r, (lineno, row) in enumerate(rows):
        if len(row) != width:
            raise InputError(f"{path}, line {lineno}: expected {width} fields, found {len(row)}")
        for k, j in enumerate(keep):
            cell = row[j].strip()
            try:
                values[r, k] = float(cell)
            except ValueError:
                raise InputError(
                    f"{path}, line {lineno}, column {j + 1} ({names[j]!r}): "
                    f"cannot parse {cell!r} as a number"
                ) from None
            if not np.isfinite(values[r, k]):
                raise InputError(f"{path}, line {lineno}, column {j + 1} ({names[j]!r}): "
                                 f"non-finite value {cell!r}")
        if label_idx is not None:
            labels.append(row[label_idx].strip())
    return CsvTable(values, [names[j] for j in keep], labels if label_idx is not None else None,
                    names[label_idx] if label_idx is not None else None)


def standardize(X):
    """Column-wise centring and scaling by the sample (n-1) standard deviation."""
    mean = X.mean(axis=0)
    std = X.std(axis=0, ddof=1)
    if np.any(std == 0):
        j = int(np.flatnonzero(std == 0)[0])
        raise InputError(f"column {j + 1} is constant and cannot be standardized")
    return (X - mean) / std, mean, std


def _config_dict(cfg: FitConfig) -> dict:
    return {
        "n_components": cfg.n_components,
        "n_factors": cfg.n_factors,
        "alpha": cfg.alpha,
        "c_noise": cfg.bounds.c_noise,
        "c_load": cfg.bounds.c_load,
        "n_starts": cfg.n_starts,
        "max_iter": cfg.max_iter,
        "tol": cfg.tol,
        "tol_posterior": cfg.tol_posterior,
        "seed": cfg.seed,
    }


def _config_from_dict(d: dict) -> FitConfig:
    d = dict(d)
    bounds = ConstraintBounds(d.pop("c_noise"), d.pop("c_load"))
    return FitConfig(bounds=bounds, **d)


def _dump_json(obj, path: Path) -> None:
    # json writes floats with repr, the shortest string that round-trips
    path.write_text(json.dumps(obj, indent=1) + "\n")


def load_result(path) -> dict:
    """Read a ``result.json``; ``params`` and ``config`` come back as objects."""
    d = json.loads(Path(path).read_text())
    d["params"] = MfaParams.from_dict(d["params"])
    d["config"] = _config_from_dict(d["config"])
    return d


def fitted_data(result: dict, X) -> np.ndarray:
    """Apply the standardization recorded in a loaded result to raw data."""
    st = result.get("standardization")
    X = np.asarray(X, dtype=float)
    if st is None:
        return X
    return (X - np.array(st["mean"])) / np.array(st["std"])


CONTAMINATION_LABELS = {"noise": NOISE, "pointwise": POINTWISE}


def _encode_labels(raw: list):
    """Integer codes for class labels; the names written by ``simulate`` for
    outliers map to the negative contamination codes."""
    classes = sorted(set(raw) - set(CONTAMINATION_LABELS))
    index = {c: k for k, c in enumerate(classes)}
    index.update(CONTAMINATION_LABELS)
    return np.array([index[c] for c in raw]), classes


def cmd_fit(args) -> int:
    table = read_csv(args.input, args.label_col, args.header, args.delimiter)
    data = DataMatrix(table.values, tuple(table.column_names))
    try:
        data.check_size(args.g)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    X = data.values
    stats = None
    if args.standardize:
        X, mean, std = standardize(X)
        stats = {"mean": mean.tolist(), "std": std.tolist(), "ddof": 1}
    try:
        cfg = FitConfig(args.g, args.d, args.alpha, ConstraintBounds(args.c_noise, args.c_load),
                        n_starts=args.starts, max_iter=args.max_iter, tol=args.tol,
                        tol_posterior=args.tol_posterior, seed=args.seed)
        cfg.check_data(*X.shape)
    except ValueError as exc:
        raise InputError(str(exc)) from None

    res = fit(X, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    logc = component_log_densities(X, res.params)
    result = {
        "input": str(args.input),
        "columns": table.column_names,
        "config": _config_dict(cfg),
        "standardization": stats,
        "params": res.params.to_dict(),
        "target": res.target,
        "converged": res.converged,
        "n_iter": res.n_iter,
        "start_index": res.start_index,
        "failed_starts": [list(f) for f in res.failed_starts],
        "trim_indicator": res.trim_indicator.tolist(),
        "labels": res.labels.tolist(),
        "log_density": res.log_density.tolist(),
    }

    posthoc = classify_trimmed(X, res)
    with open(out / "labels.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        head = ["row", "cluster", "trimmed", "bayes_cluster"]
        if table.labels is not None:
            head.append(f"true_{table.label_name}")
        wr.writerow(head)
        for i in range(len(X)):
            row = [i + 1, int(res.labels[i]), int(res.trim_indicator[i] == 0), int(posthoc[i])]
            if table.labels is not None:
                row.append(table.labels[i])
            wr.writerow(row)

    if table.labels is not None:
        truth, classes = _encode_labels(table.labels)
        G = max(cfg.n_components, len(classes))
        summary = {
            "label_column": table.label_name,
            "classes": classes,
            "eta": misclassification_error(res.labels, truth, G),
            "eta_posthoc": misclassification_error(posthoc, truth, G),
            "trimmed": [
                {
                    "row": int(i) + 1,
                    "true_label": table.labels[i],
                    "assigned": int(posthoc[i]),
                    "log_D": logc[i].tolist(),
                }
                for i in np.flatnonzero(res.trim_indicator == 0)
            ],
        }
        result["misclassification"] = summary
        (out / "summary.txt").write_text(format_fit_summary(summary, cfg.n_components))
        print(f"misclassification error {summary['eta']:.4f}  "
              f"(trimmed rows assigned by Bayes rule: {summary['eta_posthoc']:.4f})")

    _dump_json(result, out / "result.json")
    print(f"target {res.target:.6f}  iterations {res.n_iter}  converged {res.converged}  "
          f"trimmed {int(np.sum(res.trim_indicator == 0))}")
    return EXIT_OK if res.converged else EXIT_NOT_CONVERGED


def format_fit_summary(summary: dict, G: int) -> str:
    lines = [
        f"label column: {summary['label_column']}",
        f"misclassification error: {summary['eta']:.4f}",
        f"misclassification error, trimmed rows assigned by Bayes rule: "
        f"{summary['eta_posthoc']:.4f}",
        "",
        "trimmed rows (numbered from 1) with log(pi_g phi_g(x)) per component g:",
        "row".rjust(6) + "true".rjust(12) + "assigned".rjust(10)
        + "".join(f"logD_{g}".rjust(14) for g in range(G)),
    ]
    for t in summary["trimmed"]:
        lines.append(f"{t['row']:>6}{t['true_label']:>12}{t['assigned']:>10}"
                     + "".join(f"{v:>14.4f}" for v in t["log_D"]))
    return "\n".join(lines) + "\n"


def cmd_simulate(args) -> int:
    try:
        spec = load_scenario(args.scenario)
    except (OSError, ValueError) as exc:
        raise InputError(f"{args.scenario}: {exc}") from None
    if args.seed is not None:
        spec = spec.with_seed(args.seed)
    X, y = generate(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    names = {NOISE: "noise", POINTWISE: "pointwise"}
    with open(out / "data.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow([f"x{j + 1}" for j in range(X.shape[1])] + ["label"])
        for row, lab in zip(X, y):
            wr.writerow([repr(float(v)) for v in row] + [names.get(int(lab), int(lab))])
    (out / "scenario.txt").write_text(format_scenario(spec))
    print(f"wrote {len(X)} rows to {out / 'data.csv'}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    def progress(r):
        print(f"{r.scenario:8} n={r.n_clean:<4} {r.setting}: eta {r.eta_mean:.4f} "
              f"({r.n_not_converged} not converged, {r.n_failed} failed, {r.elapsed:.1f}s)",
              flush=True)

    reports = run_preset(args.preset, args.reps, args.seed, progress=progress)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    # wall-clock time stays out of the artifacts so reruns are byte-identical
    dicts = [{k: v for k, v in r.to_dict().items() if k != "elapsed"} for r in reports]
    _dump_json({"preset": args.preset, "reports": dicts}, out / "report.json")
    text = format_eta_table(reports)
    if args.preset == "bias-mse":
        text += "\n" + format_bias_table(reports)
    (out / "table.txt").write_text(text)
    write_records_csv(reports, out / "records.csv")
    print(text, end="")
    if any(r.n_failed for r in reports):
        return EXIT_ALL_FAILED
    return EXIT_NOT_CONVERGED if any(r.n_not_converged for r in reports) else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="trimmfa", description=__doc__.split("\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit a model to a CSV file")
    f.add_argument("--input", required=True)
    f.add_argument("--g", type=int, required=True, help="number of components")
    f.add_argument("--d", type=int, required=True, help="number of factors")
    f.add_argument("--alpha", type=float, default=0.0)
    f.add_argument("--c-noise", type=float, default=1e10)
    f.add_argument("--c-load", type=float, default=1e10)
    f.add_argument("--starts", type=int, default=10)
    f.add_argument("--max-iter", type=int, default=200)
    f.add_argument("--tol", type=float, default=1e-8)
    f.add_argument("--tol-posterior", type=float, default=1e-6)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--standardize", action="store_true")
    f.add_argument("--label-col")
    hdr = f.add_mutually_exclusive_group()
    hdr.add_argument("--header", dest="header", action="store_true", default=None)
    hdr.add_argument("--no-header", dest="header", action="store_false")
    f.add_argument("--delimiter", default=",")
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("simulate", help="generate a scenario as CSV")
    s.add_argument("--scenario", required=True, help="scenario file (key = value lines)")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("experiment", help="run a preset Monte-Carlo experiment")
    e.add_argument("--preset", required=True, choices=sorted(PRESETS))
    e.add_argument("--reps", type=int, default=20)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_experiment)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except AllStartsFailedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ALL_FAILED


if __name__ == "__main__":
    sys.exit(main())
