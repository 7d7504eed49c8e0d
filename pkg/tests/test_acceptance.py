"""Acceptance gate: twelve end-to-end checks against independent oracles.

Each test prints one pass/fail line; run with ``pytest -s`` (or ``pytest -v``)
to see them.  Tolerances are stated inline next to each assertion.
"""

import json
import math
import os
import signal
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from paramstudy import backend as be
from paramstudy import pipeline
from paramstudy.optimize import (
    Objective,
    compile_objective,
    min_input_at_target,
    minimize_lbfgsb,
)
from paramstudy.sampling import plan_samples
from paramstudy.study import (
    BackendConfig,
    GoalSpec,
    ParameterDef,
    QoISpec,
    load_spec,
    parse_prompt,
)
from paramstudy.subspace import (
    active_direction_ols,
    bootstrap_direction,
    jacobi_eigh,
)
from paramstudy.surrogate import (
    LinearSurrogate,
    Poly1DSurrogate,
    QuadraticSurrogate,
    fit_ols,
    fit_poly1d,
    fit_quadratic,
)

STUDIES = Path(__file__).resolve().parent.parent / "studies"


def report(n, label, ok):
    print(f"{'PASS' if ok else 'FAIL'} criterion {n:2d}: {label}")
    assert ok, f"criterion {n} failed: {label}"


def unit_params(m):
    return [ParameterDef(name=f"x{i+1}", lower=0.0, upper=1.0)
            for i in range(m)]


def test_criterion_01_rank_one_identity():
    """lambda = |b|^2 and w = +/- b/|b| for 100 random slopes."""
    rng = np.random.default_rng(101)
    ok = True
    for _ in range(100):
        m = int(rng.integers(1, 9))
        b = rng.normal(size=m)
        while np.linalg.norm(b) < 1e-6:
            b = rng.normal(size=m)
        lin = LinearSurrogate(c=0.0, b=b, r_squared=1.0, n_points=m + 2)
        res = active_direction_ols(lin)
        lam_ref = float(b @ b)
        w_ref = b / np.linalg.norm(b)
        ok &= abs(res.eigenvalues[0] - lam_ref) <= 1e-12 * lam_ref
        ok &= min(np.linalg.norm(res.w_hat - w_ref),
                  np.linalg.norm(res.w_hat + w_ref)) <= 1e-12
    report(1, "rank-1 eigen identity on 100 random slopes", ok)


def test_criterion_02_eigendecomposition():
    """Reconstruction, orthogonality, ordering for 100 random symmetric C."""
    rng = np.random.default_rng(202)
    ok = True
    for _ in range(100):
        m = int(rng.integers(2, 9))
        a = rng.normal(size=(m, m))
        c = (a + a.T) / 2
        vals, vecs = jacobi_eigh(c)
        recon = vecs @ np.diag(vals) @ vecs.T
        ok &= np.linalg.norm(recon - c, "fro") <= \
            1e-10 * (1 + np.linalg.norm(c, "fro"))
        ok &= np.linalg.norm(vecs.T @ vecs - np.eye(m), "fro") <= 1e-10
        ok &= bool(np.all(np.diff(vals) <= 1e-12))
    report(2, "eigendecomposition of 100 random symmetric matrices", ok)


def test_criterion_03_active_direction_recovery():
    """exp(a.x) ridge: angle to a/|a| within 5 deg at N=8, 2 deg at N=64."""
    a = np.array([0.7, 0.3])
    a_unit = a / np.linalg.norm(a)

    def angle(theta, seed):
        X = plan_samples(unit_params(2), theta, seed).points_normalized
        w = active_direction_ols(fit_ols(X, np.exp(X @ a))).w_hat
        cos = abs(float(w @ a_unit))
        return math.degrees(math.acos(min(1.0, cos)))

    a8 = angle(4.0, 1)     # N = 8
    a64 = angle(32.0, 1)   # N = 64
    ok = a8 <= 5.0 and a64 <= 2.0
    report(3, f"ridge direction recovery (angles {a8:.2f} deg @ N=8, "
              f"{a64:.2f} deg @ N=64)", ok)


def test_criterion_04_ranking_reproduction():
    """4-parameter linear model: |w| ranking equals coefficient ranking."""
    coeffs = np.array([1.0, 0.05, 0.02, 0.01])
    X = plan_samples(unit_params(4), 8.0, 0).points_normalized  # N = 32
    q = X @ coeffs
    res = active_direction_ols(fit_ols(X, q))
    ranking = list(np.argsort(-np.abs(res.w_hat)))
    ok = ranking == [0, 1, 2, 3] and res.w_hat[0] >= 0.99
    report(4, f"influence ranking (first component {res.w_hat[0]:.5f})", ok)


def _grid_refine_quadratic(h, b, lower, upper, stages=30, pts=11):
    """Oracle: exhaustive grid search with iterative zoom."""
    lo = np.array(lower, dtype=float)
    hi = np.array(upper, dtype=float)
    m = len(lo)
    best_x = (lo + hi) / 2
    for _ in range(stages):
        axes = [np.linspace(lo[i], hi[i], pts) for i in range(m)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts_mat = np.column_stack([g.ravel() for g in mesh])
        vals = 0.5 * np.einsum("ni,ij,nj->n", pts_mat, h, pts_mat) \
            + pts_mat @ b
        best_x = pts_mat[int(np.argmin(vals))]
        span = (hi - lo) * 0.35
        lo = np.maximum(np.array(lower, dtype=float), best_x - span / 2)
        hi = np.minimum(np.array(upper, dtype=float), best_x + span / 2)
    return float(0.5 * best_x @ h @ best_x + b @ best_x)


def test_criterion_05_lbfgsb_vs_grid_oracle():
    """20 random convex quadratics over boxes, plus Rosenbrock."""
    rng = np.random.default_rng(505)
    ok = True
    for _ in range(20):
        m = int(rng.integers(1, 5))
        a = rng.normal(size=(m, m))
        h = a @ a.T + 0.5 * np.eye(m)
        b = rng.normal(size=m)
        lower = rng.uniform(-2, 0, m)
        upper = lower + rng.uniform(0.5, 3, m)
        obj = Objective(
            eval=lambda x, h=h, b=b: float(0.5 * x @ h @ x + b @ x),
            grad=lambda x, h=h, b=b: h @ x + b,
            lower=lower, upper=upper)
        res = minimize_lbfgsb(obj, (lower + upper) / 2)
        f_oracle = _grid_refine_quadratic(h, b, lower, upper)
        ok &= res.f_star <= f_oracle + 1e-6
        ok &= abs(res.f_star - f_oracle) <= 1e-6

    def rosen(x):
        return float((1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2)

    def rosen_grad(x):
        return np.array([-2 * (1 - x[0]) - 400 * x[0] * (x[1] - x[0] ** 2),
                         200 * (x[1] - x[0] ** 2)])
    obj = Objective(eval=rosen, grad=rosen_grad,
                    lower=np.array([-2.0, -2.0]), upper=np.array([2.0, 2.0]))
    res = minimize_lbfgsb(obj, np.array([-1.5, 1.5]), max_iter=2000)
    ok &= bool(np.all(np.abs(res.x_star - 1.0) <= 1e-5))
    report(5, "box-constrained minimizer vs grid-refined oracle", ok)


def test_criterion_06_target_calibration_end_to_end(tmp_path):
    """Decay demo: recovered input within 1e-4 of the closed form and
    validation relative error within 1e-6."""
    spec = load_spec(str(STUDIES / "decay_calibration.yaml"))
    q0 = spec.backend.analytic_params["q0"]
    k = spec.backend.analytic_params["k"]
    target = spec.goal.target
    nu_true = math.log(q0 / target) / k

    study = tmp_path / "decay"
    pipeline.run_study(spec, study)
    pipeline.analyze_study(study)
    pipeline.optimize_study(study)
    optimum = json.loads((study / "optimum.json").read_text())
    nu_star = optimum["x_star"]["nu"]
    rel = optimum["validation"]["rel_error"]
    ok = abs(nu_star - nu_true) <= 1e-4 and rel <= 1e-6
    report(6, f"decay calibration (|dnu| = {abs(nu_star - nu_true):.2e}, "
              f"validation rel err = {rel:.2e})", ok)


def test_criterion_07_min_input_at_target(tmp_path):
    """Saturating ramp: smallest input reaching the plateau target."""
    spec = load_spec(str(STUDIES / "saturating_min_input.yaml"))
    p = spec.parameters[0]
    prm = spec.backend.analytic_params
    # over [phi0, phi1] the ramp is exactly linear: d = d_max*(phi-phi0)/W;
    # the 2% band around d_max is first entered at phi0 + 0.98*W
    crossing = prm["phi0"] + 0.98 * (prm["phi1"] - prm["phi0"])

    plan = plan_samples(spec.parameters, spec.theta, spec.seed)
    dataset = be.run_batch(spec.backend, spec.qoi, plan, spec.parameters,
                           tmp_path / "sat")
    g = fit_poly1d(dataset.raw_matrix()[:, 0], dataset.q)
    found = min_input_at_target(g, spec.goal.target)
    ok = found.reached and abs(found.x - crossing) <= 1e-3
    report(7, f"min input at target (phi = {found.x:.5f}, "
              f"closed form {crossing:.5f})", ok)


def test_criterion_08_bootstrap_degeneracy():
    """Noise-free linear data collapses the CIs; noise widens them."""
    X = plan_samples(unit_params(2), 16.0, 1).points_normalized
    q = 2.0 + X @ np.array([3.0, -1.0])
    clean = bootstrap_direction(X, q, b=200, seed=5)
    widths = [hi - lo for lo, hi in clean.per_component_ci]
    ok = all(w <= 1e-8 for w in widths)

    rng = np.random.default_rng(9)
    noisy = bootstrap_direction(X, q + rng.uniform(-0.1, 0.1, len(q)),
                                b=200, seed=5)
    for (cl, ch), (nl, nh) in zip(clean.per_component_ci,
                                  noisy.per_component_ci):
        ok &= (nh - nl) > (ch - cl)
    report(8, f"bootstrap collapse/widening (clean max width "
              f"{max(widths):.1e})", ok)


def test_criterion_09_gradient_checks():
    """All surrogate kinds and compiled objectives vs central differences."""
    rng = np.random.default_rng(909)
    h = 1e-5
    ok = True

    def check(f, grad_fn, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        fd = np.zeros_like(x)
        for i in range(len(x)):
            e = np.zeros_like(x)
            e[i] = h
            fd[i] = (f(x + e) - f(x - e)) / (2 * h)
        an = np.atleast_1d(grad_fn(x))
        return np.linalg.norm(an - fd) <= 1e-6 * (1 + np.linalg.norm(fd))

    X = plan_samples(unit_params(2), 10.0, 3).points_normalized
    lin = fit_ols(X, 1 + X @ np.array([2.0, -1.0]))
    quad = fit_quadratic(X, X[:, 0] * X[:, 1] + X[:, 1] ** 2)
    xs = np.linspace(0, 1, 12)
    poly = fit_poly1d(xs, 1 + 2 * xs - 0.5 * xs ** 3)

    for model, dim in ((lin, 2), (quad, 2), (poly, 1)):
        for _ in range(10):
            x = rng.uniform(0.1, 0.9, dim)
            ok &= check(lambda v: model.predict(v if dim > 1 else v[0]),
                        model.gradient, x)

    goals = [GoalSpec(kind="minimize", qoi="q"),
             GoalSpec(kind="maximize", qoi="q"),
             GoalSpec(kind="target", qoi="q", target=0.7),
             GoalSpec(kind="below", qoi="q", target=0.4)]
    for goal in goals:
        for model, dim in ((lin, 2), (quad, 2), (poly, 1)):
            obj = compile_objective(goal, model, np.zeros(dim), np.ones(dim))
            for _ in range(10):
                x = rng.uniform(0.1, 0.9, dim)
                ok &= check(obj.eval, obj.grad, x)
    report(9, "analytic gradients vs central differences", ok)


def test_criterion_10_pipeline_determinism(tmp_path):
    """Two fresh runs of the 2-parameter demo produce identical bytes."""
    spec_path = STUDIES / "demo_2d.yaml"
    digests = []
    for tag in ("a", "b"):
        study = tmp_path / tag
        spec = load_spec(str(spec_path))
        pipeline.run_study(spec, study)
        pipeline.analyze_study(study)
        pipeline.optimize_study(study)
        snapshot = {}
        for name in ("dataset.csv", "plan.csv", "summary_scatter.csv",
                     "summary_curve.csv", "component_bars.csv",
                     "summary.svg", "bars.svg", "report.txt",
                     "analysis.json", "optimum.json", "opt_trace.csv"):
            path = study / name
            snapshot[name] = path.read_bytes() if path.exists() else None
        digests.append(snapshot)
    ok = digests[0] == digests[1] and digests[0]["dataset.csv"] is not None
    report(10, "byte-identical artifacts across two pipeline runs", ok)


def test_criterion_11_prompt_parsing():
    """Benchmark prompts parse with verbatim bounds; 'below 25' compiles to
    the squared-distance objective."""
    ok = True
    spec = parse_prompt("Analyze the effect of inlet velocity (from 10.0 to "
                        "60.0 m/s) and inlet temperature (from 243 to 343 K) "
                        "on max temperature")
    ok &= [(p.lower, p.upper) for p in spec.parameters] == \
        [(10.0, 60.0), (243.0, 343.0)]

    spec = parse_prompt("Analyze the effect of equivalenceRatio (from 0.5 "
                        "to 1.5), initial turbulent kinetic energy (from 1 "
                        "to 10) and initial ignition duration time (from 0 "
                        "to 0.002) on the distance from the origin")
    ok &= [(p.lower, p.upper) for p in spec.parameters] == \
        [(0.5, 1.5), (1.0, 10.0), (0.0, 0.002)]

    spec = parse_prompt("analyze the effect of the laminar viscosity "
                        "nu_in_physicalProperties (from 0.01 to 0.1) on the "
                        "average turbulent kinetic energy")
    ok &= (spec.parameters[0].lower, spec.parameters[0].upper) == (0.01, 0.1)

    spec = parse_prompt("Analyze the effect of the temperature difference "
                        "between the hot and cold (from 10 K to 30 K) on "
                        "the max velocity in X direction")
    ok &= (spec.parameters[0].lower, spec.parameters[0].upper) == \
        (10.0, 30.0)

    spec = parse_prompt("Analyze the effect of the inlet flow velocity and "
                        "inlet turbulent kinetic energy on max yplus")
    ok &= spec.m == 2 and all(p.range_is_default for p in spec.parameters)

    # "below 25" compiles to (q - 25)^2
    g = Poly1DSurrogate(degree=1, coeffs=np.array([0.0, 1.0]),
                        domain=(0.0, 50.0), r_squared=1.0)
    obj = compile_objective(GoalSpec(kind="below", qoi="yplus", target=25.0),
                            g, [0.0], [50.0])
    for v in (0.0, 20.0, 30.0, 47.5):
        ok &= obj.eval(np.array([v])) == (v - 25.0) ** 2
    report(11, "templated prompt parsing and below-goal compilation", ok)


DRIVER = """\
import sys, time
sys.path.insert(0, {src!r})
from paramstudy import backend as be
from paramstudy.sampling import plan_samples
from paramstudy.study import BackendConfig, ParameterDef, QoISpec

orig = be.ANALYTIC_MODELS["linear"]
def slow(x_norm, x_raw, p):
    time.sleep(0.05)
    return orig(x_norm, x_raw, p)
be.ANALYTIC_MODELS["slow_linear"] = slow

params = [ParameterDef(name="x1", lower=0.0, upper=1.0),
          ParameterDef(name="x2", lower=0.0, upper=1.0)]
plan = plan_samples(params, 8.0, 4)
cfg = BackendConfig(kind="analytic", analytic_name="slow_linear",
                    analytic_params={{"b1": 1.0, "b2": 2.0}})
be.run_batch(cfg, QoISpec(name="q"), plan, params, sys.argv[1])
"""


def test_criterion_12_resume_after_kill(tmp_path):
    """Kill a 16-case batch at 6 completions; rerun does 10 new evaluations
    and reproduces the uninterrupted dataset."""
    src = str(Path(be.__file__).resolve().parent.parent)
    driver = tmp_path / "driver.py"
    driver.write_text(DRIVER.format(src=src))

    workdir = tmp_path / "killed"
    proc = subprocess.Popen([sys.executable, str(driver), str(workdir)],
                            start_new_session=True)
    ledger = workdir / "ledger.ndjson"
    deadline = time.monotonic() + 30.0
    while time.monotonic() < deadline:
        if ledger.exists() and \
                len(ledger.read_text().strip().splitlines()) >= 6:
            break
        time.sleep(0.005)
    os.killpg(os.getpgid(proc.pid), signal.SIGKILL)
    proc.wait()
    committed = len(ledger.read_text().strip().splitlines())

    # resume with the same (fast) model values
    be.ANALYTIC_MODELS["slow_linear"] = be.ANALYTIC_MODELS["linear"]
    try:
        params = unit_params(2)
        plan = plan_samples(params, 8.0, 4)
        cfg = BackendConfig(kind="analytic", analytic_name="slow_linear",
                            analytic_params={"b1": 1.0, "b2": 2.0})
        resumed = be.run_batch(cfg, QoISpec(name="q"), plan, params, workdir)
        total = len(ledger.read_text().strip().splitlines())
        new_evals = total - committed

        baseline = be.run_batch(cfg, QoISpec(name="q"), plan, params,
                                tmp_path / "uninterrupted")
    finally:
        be.ANALYTIC_MODELS.pop("slow_linear", None)
    ok = committed == 6 and new_evals == 10 \
        and resumed.to_csv() == baseline.to_csv()
    report(12, f"resume after kill ({committed} committed, "
               f"{new_evals} new evaluations)", ok)
