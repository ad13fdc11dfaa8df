"""Acceptance suite: one test per criterion, each printing a PASS/FAIL/SKIP line.

The lines are also collected into a terminal summary section.  Criterion 9
needs the Australian Institute of Sport data as a CSV with an ``Sex`` column;
point ``TRIMMFA_AIS_CSV`` at it to enable the check.
"""

import os
import time
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

import conftest
from trimmfa.aecm import (
    FitConfig,
    cm_step_1,
    cm_step_2,
    e_step_trim,
    fit,
    fit_once,
    n_kept,
    start_generators,
)
from trimmfa.cli import main as cli_main
from trimmfa.constraints import (
    TruncationProblem,
    enforce_loading_constraint,
    enforce_noise_constraint,
    objective,
    optimal_threshold,
)
from trimmfa.datagen import generate, scenario
from trimmfa.evaluation import SETTINGS, run_experiment, setting_config
from trimmfa.exceptions import FitError
from trimmfa.lowrank import ComponentKernel, log_density
from trimmfa.model import ConstraintBounds, MfaParams, check_constraints

pytestmark = pytest.mark.slow


def record(n, ok, detail, started):
    status = {True: "PASS", False: "FAIL", None: "SKIP"}[ok]
    line = f"criterion {n}: {status}  {detail}  [{time.perf_counter() - started:.1f}s]"
    conftest.ACCEPTANCE_LINES[n] = line
    print(line)


# -- criterion 1 --------------------------------------------------------------

def test_criterion_1_threshold_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = -np.inf
    for _ in range(500):
        k = int(rng.integers(1, 13))
        v = 10.0 ** rng.uniform(-4, 4, k)
        v[rng.random(k) < 0.1] = 0.0
        if not np.any(v > 0):
            v[0] = 1.0
        c = 1.0 if rng.random() < 0.1 else float(10.0 ** rng.uniform(0, 4))
        prob = TruncationProblem(v, rng.uniform(0.01, 1, k), c)
        f = objective(prob, optimal_threshold(prob))
        pos = v[v > 0]
        grid = np.geomspace(pos.min() / c / 10, pos.max() * 10, 10_000)
        best = objective(prob, grid).min()
        worst = max(worst, (f - best) / max(abs(best), 1e-300))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-9 and elapsed < 5
    record(1, ok, f"max relative excess over grid minimum {worst:.2e} (limit 1e-9)", t0)
    assert ok


# -- criterion 2 --------------------------------------------------------------

def test_criterion_2_density_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(1000):
        p = int(rng.integers(2, 21))
        d = int(rng.integers(1, min(p - 1, 5) + 1))
        psi = 10.0 ** rng.uniform(-1.5, 1.5, p)
        k = ComponentKernel(rng.normal(size=p), rng.normal(size=(p, d)), psi)
        x = k.mean + rng.normal(size=(3, p)) * 3
        fast, dense = log_density(k, x), log_density(k, x, dense=True)
        worst = max(worst, float(np.max(np.abs(fast - dense) / np.abs(dense))))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-8 and elapsed < 5
    record(2, ok, f"max relative difference to dense oracle {worst:.2e} (limit 1e-8)", t0)
    assert ok


# -- criterion 3 --------------------------------------------------------------

def test_criterion_3_monotonicity():
    t0 = time.perf_counter()
    scen = ["D", "D+N", "D+PC", "D+N+PC"]
    sets = list(SETTINGS)
    worst, n_starts, n_aborted = 0.0, 0, 0
    for i in range(50):
        name = scen[i % 4]
        cfg = setting_config(sets[(i // 4) % 6], name)
        X, _ = generate(scenario(name, seed=1000 + i))
        for rng in start_generators(i, cfg.n_starts):
            try:
                res = fit_once(X, cfg, rng)
            except FitError:
                n_aborted += 1
                continue
            n_starts += 1
            worst = max(worst, float(-np.min(np.diff(res.history), initial=0.0)))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-8 and elapsed < 120
    record(3, ok, f"50 fits, {n_starts} starts ({n_aborted} aborted); largest decrease "
                  f"{worst:.2e} (limit 1e-8)", t0)
    assert ok


# -- criterion 4 --------------------------------------------------------------

def test_criterion_4_table1():
    t0 = time.perf_counter()
    etas = {}
    for s in SETTINGS:
        rep = run_experiment(scenario("D"), setting_config(s, "D"), 20, seed=41, setting=s)
        etas[s] = rep.eta_mean
    ok = all(etas[s] <= 0.01 for s in ("S1", "S2", "S3")) and all(
        0.050 <= etas[s] <= 0.075 for s in ("S4", "S5", "S6"))
    ok = ok and time.perf_counter() - t0 < 600
    detail = " ".join(f"{s}={v:.4f}" for s, v in etas.items())
    record(4, ok, f"eta on D, 20 reps: {detail}", t0)
    assert ok


# -- criterion 5 --------------------------------------------------------------

def test_criterion_5_table2():
    t0 = time.perf_counter()
    cells = [("D+N", "S6"), ("D+N+PC", "S6"), ("D+N+PC", "S1")]
    eta = {}
    for name, s in cells:
        rep = run_experiment(scenario(name), setting_config(s, name), 20, seed=51, setting=s)
        eta[(name, s)] = rep.eta_mean
    ok = (eta[("D+N", "S6")] <= 0.01 and eta[("D+N+PC", "S6")] <= 0.03
          and eta[("D+N+PC", "S1")] >= 0.20 and time.perf_counter() - t0 < 900)
    detail = " ".join(f"{n}/{s}={v:.4f}" for (n, s), v in eta.items())
    record(5, ok, f"20 reps: {detail}", t0)
    assert ok


# -- criteria 6 and 7 ---------------------------------------------------------

@pytest.fixture(scope="module")
def robust_150():
    return run_experiment(scenario("D+N+PC"), setting_config("S6", "D+N+PC"), 100, seed=61,
                          setting="S6")


def _ratios(num, den, prefix):
    return {k: num.per_parameter_mse[k] / den.per_parameter_mse[k]
            for k in num.per_parameter_mse if k.startswith(prefix)}


def test_criterion_6_bias_mse(robust_150):
    t0 = time.perf_counter()
    bench = run_experiment(scenario("D"), setting_config("S1", "D"), 100, seed=61, setting="S1")
    plain = run_experiment(scenario("D+N+PC"), setting_config("S1", "D+N+PC"), 100, seed=61,
                           setting="S1")
    mu_r = _ratios(plain, robust_150, "mu_")
    psi_r = _ratios(plain, robust_150, "psi_")
    ll_r = _ratios(plain, robust_150, "lambdalambda_")
    mu1 = bench.per_parameter_mse["mu_1"]
    finite = all(np.isfinite(v) for v in robust_150.per_parameter_mse.values())
    ok = (0.1 <= mu1 <= 1.0 and min(mu_r.values()) >= 10 and min(psi_r.values()) >= 10
          and min(ll_r.values()) >= 5 and finite)
    elapsed = time.perf_counter() - t0
    ok = ok and elapsed < 45 * 60
    detail = (f"clean S1 mu_1 MSE {mu1:.3f} in [0.1, 1]; S1/robust MSE ratios: "
              f"mu min {min(mu_r.values()):.1f}, psi min {min(psi_r.values()):.1f} (need >= 10), "
              f"LL' min {min(ll_r.values()):.1f} (need >= 5)")
    record(6, ok, detail, t0)
    assert ok


def test_criterion_7_sample_size(robust_150):
    t0 = time.perf_counter()
    spec = scenario("D+N+PC", n_clean=450)
    spec = replace(spec, n_noise=30, n_pointwise=30)
    big = run_experiment(spec, setting_config("S6", "D+N+PC"), 100, seed=71, setting="S6")
    red = {k: robust_150.per_parameter_mse[k] / big.per_parameter_mse[k]
           for k in big.per_parameter_mse if k.startswith("mu_")}
    ok = min(red.values()) >= 2
    detail = "robust mu MSE reduction n=150 -> 450: " + " ".join(
        f"{k}={v:.2f}" for k, v in red.items()) + " (need >= 2)"
    record(7, ok, detail, t0)
    assert ok


# -- criterion 8 --------------------------------------------------------------

def _random_problem(seed, G, n, p, alpha):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, p))
    w = rng.dirichlet(np.ones(G))
    params = MfaParams(w, rng.normal(scale=4, size=(G, p)), rng.normal(size=(G, p, d)),
                       rng.uniform(0.05, 2, (G, p)))
    lab = rng.choice(G, n, p=w)
    X = params.means[lab] + rng.normal(size=(n, p)) * 1.5
    return X, params


CASES = 1000
_counts = {"estep": 0, "cm2": 0, "det": 0}
_suite = st.integers(0, 2**32 - 1)


@settings(max_examples=CASES, deadline=None, derandomize=True,
          suppress_health_check=list(HealthCheck))
@given(seed=_suite, G=st.integers(1, 4), n=st.integers(20, 80), p=st.integers(2, 6),
       alpha=st.floats(0, 0.5))
def _estep_property(seed, G, n, p, alpha):
    X, params = _random_problem(seed, G, n, p, alpha)
    es = e_step_trim(X, params, alpha)
    assert es.kept.sum() == n_kept(n, alpha)
    np.testing.assert_allclose(es.posteriors[es.kept].sum(axis=1), 1.0, atol=1e-12)
    assert np.all(es.posteriors[~es.kept] == 0)
    _counts["estep"] += 1


@settings(max_examples=CASES, deadline=None, derandomize=True,
          suppress_health_check=list(HealthCheck))
@given(seed=_suite, G=st.integers(1, 4), p=st.integers(2, 6), alpha=st.floats(0, 0.3),
       c_noise=st.floats(1, 100), c_load=st.floats(1, 100))
def _cm2_property(seed, G, p, alpha, c_noise, c_load):
    X, params = _random_problem(seed, G, 60, p, alpha)
    bounds = ConstraintBounds(c_noise, c_load)
    # a fit only ever enters cm_step_2 with admissible parameters
    params = MfaParams(params.weights, params.means,
                       enforce_loading_constraint(params.loadings, params.weights, c_load),
                       enforce_noise_constraint(params.noise_diag, params.weights, c_noise))
    es = e_step_trim(X, params, alpha)
    try:
        w, mu = cm_step_1(X, es.posteriors, alpha)
        half = MfaParams(w, mu, params.loadings, params.noise_diag)
        L, psi = cm_step_2(X, e_step_trim(X, half, alpha).posteriors, mu, half, bounds)
    except FitError:
        return
    assert check_constraints(MfaParams(w, mu, L, psi), bounds)
    _counts["cm2"] += 1


@settings(max_examples=CASES, deadline=None, derandomize=True,
          suppress_health_check=list(HealthCheck))
@given(seed=_suite, alpha=st.sampled_from([0.0, 0.05, 0.1]))
def _determinism_property(seed, alpha):
    X, _ = _random_problem(seed, 2, 30, 3, alpha)
    cfg = FitConfig(2, 1, alpha, ConstraintBounds(10, 10), n_starts=2, max_iter=8,
                    seed=seed % 1000)
    try:
        a = fit(X, cfg)
    except FitError:
        with pytest.raises(FitError):
            fit(X, cfg)
        _counts["det"] += 1
        return
    b = fit(X, cfg)
    assert a.target == b.target
    np.testing.assert_array_equal(a.posteriors, b.posteriors)
    np.testing.assert_array_equal(a.params.loadings, b.params.loadings)
    _counts["det"] += 1


def test_criterion_8_invariants():
    t0 = time.perf_counter()
    failure = None
    try:
        _estep_property()
        _cm2_property()
        _determinism_property()
    except AssertionError as exc:
        failure = exc
    elapsed = time.perf_counter() - t0
    ok = failure is None and elapsed < 120
    detail = (f"cases: trim count/row sums {_counts['estep']}, constraints after cm_step_2 "
              f"{_counts['cm2']}, fit determinism {_counts['det']}")
    if failure is not None:
        detail += f"; counterexample: {str(failure).splitlines()[0]}"
    record(8, ok, detail, t0)
    assert ok


# -- criterion 9 --------------------------------------------------------------

def test_criterion_9_ais(tmp_path):
    t0 = time.perf_counter()
    path = os.environ.get("TRIMMFA_AIS_CSV")
    if not path or not os.path.exists(path):
        record(9, None, "AIS CSV not supplied (set TRIMMFA_AIS_CSV); grid check skipped", t0)
        pytest.skip("AIS CSV not supplied; set TRIMMFA_AIS_CSV to run criterion 9")
    import json

    def run(c_noise, c_load, tag):
        out = tmp_path / tag
        cli_main(["fit", "--input", path, "--g", "2", "--d", "6", "--alpha", "0.05",
                  "--c-noise", str(c_noise), "--c-load", str(c_load), "--starts", "30",
                  "--standardize", "--label-col", "Sex", "--out", str(out)])
        return json.loads((out / "result.json").read_text())["misclassification"]["eta_posthoc"]

    robust = run(45, 10, "robust")
    loose = run(1e10, 10, "loose")
    ok = abs(robust - 0.0149) <= 0.01 and loose >= 0.40
    record(9, ok, f"eta(c_noise=45, c_load=10) = {robust:.4f} (0.0149 +- 0.01); "
                  f"eta(c_noise=1e10, c_load=10) = {loose:.4f} (need >= 0.40)", t0)
    assert ok
