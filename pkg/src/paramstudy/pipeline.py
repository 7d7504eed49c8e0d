"""Study pipeline: run -> analyze -> optimize, with a deterministic report
bundle on disk.

Each stage works off the study directory.  The text report is templated from
computed artifacts only; every number in it exists in a CSV/JSON artifact.
Manifest digests are reproducible; wall-clock timestamps live only in the
manifest metadata block.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import backend as be
from . import optimize as opt
from . import subspace as subs
from . import surrogate as surr
from .errors import StudyError, ValidationError, ValidationUnavailable
from .sampling import denormalize, plan_samples
from .study import StudySpec, load_spec, render_spec

OLS_FALLBACK_R2 = 0.9
BOOTSTRAP_B = 200

SPEC_FILE = "study.yaml"
DATASET_FILE = "dataset.csv"
ANALYSIS_FILE = "analysis.json"
REPORT_FILE = "report.txt"
MANIFEST_FILE = "manifest.json"
OPT_MARKER = "== Optimization =="


@dataclass
class ReportBundle:
    study_dir: Path
    files: list[dict]  # {role, path}

    def paths(self) -> dict[str, Path]:
        return {f["role"]: self.study_dir / f["path"] for f in self.files}


def _fmt(v: float) -> str:
    return format(float(v), ".6g")


def _write(study_dir: Path, name: str, text: str) -> None:
    (study_dir / name).write_text(text, encoding="utf-8")


def _csv(rows: list[list], header: list[str]) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(repr(float(c)) if isinstance(c, (int, float))
                              and not isinstance(c, bool) else str(c)
                              for c in row))
    return "\n".join(lines) + "\n"


def load_study(study_dir: str | Path) -> StudySpec:
    return load_spec(str(Path(study_dir) / SPEC_FILE))


def load_dataset(study_dir: str | Path, spec: StudySpec) -> be.Dataset:
    text = (Path(study_dir) / DATASET_FILE).read_text(encoding="utf-8")
    return be.Dataset.from_csv(text, spec.parameters, spec.qoi)


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------

def run_study(spec: StudySpec, study_dir: str | Path,
              workers: int = 1) -> be.Dataset:
    """Plan samples and evaluate the batch; persists study.yaml, plan.csv,
    ledger, and dataset.csv under the study directory."""
    spec.validate(require_ranges=True)
    if spec.backend is None:
        raise ValidationError("study has no backend; cannot run")
    study_dir = Path(study_dir)
    study_dir.mkdir(parents=True, exist_ok=True)
    _write(study_dir, SPEC_FILE, render_spec(spec))

    plan = plan_samples(spec.parameters, spec.theta, spec.seed)
    _write(study_dir, "plan.csv", plan.to_csv())
    return be.run_batch(spec.backend, spec.qoi, plan, spec.parameters,
                        study_dir, max_workers=workers)


# ---------------------------------------------------------------------------
# analyze
# ---------------------------------------------------------------------------

def _poly_payload(g: surr.Poly1DSurrogate) -> dict:
    return {
        "degree": g.degree,
        "coeffs": [float(c) for c in g.coeffs],
        "domain": [g.domain[0], g.domain[1]],
        "r_squared": g.r_squared,
        "diagnostics": g.diagnostics,
    }


def _poly_from_payload(d: dict) -> surr.Poly1DSurrogate:
    return surr.Poly1DSurrogate(
        degree=d["degree"],
        coeffs=np.array(d["coeffs"]),
        domain=(d["domain"][0], d["domain"][1]),
        r_squared=d["r_squared"],
    )


def _trend(g: surr.Poly1DSurrogate) -> str:
    lo, hi = g.domain
    deriv = [g.derivative(x) for x in np.linspace(lo, hi, 201)]
    if all(d >= -1e-12 for d in deriv):
        return "increasing"
    if all(d <= 1e-12 for d in deriv):
        return "decreasing"
    return "non-monotonic"


def _analysis_report(spec: StudySpec, dataset: be.Dataset,
                     analysis: dict) -> str:
    lines = []
    lines.append(f"Study report: {spec.qoi.name}")
    lines.append("=" * len(lines[0]))
    lines.append("")
    for p in spec.parameters:
        unit = f" {p.units}" if p.units else ""
        lines.append(f"Parameter {p.name}: range [{_fmt(p.lower)}, "
                     f"{_fmt(p.upper)}]{unit}")
    lines.append(f"Samples: {dataset.n_ok} ok of {len(dataset.records)}")
    lines.append("")

    if analysis["mode"] == "poly1d":
        g = analysis["poly1d"]
        p = spec.parameters[0]
        lines.append(f"Response surface: polynomial degree {g['degree']}, "
                     f"R^2 = {_fmt(g['r_squared'])}")
        lines.append(f"Trend: {spec.qoi.name} is {analysis['trend']} in "
                     f"{p.name} over the sampled range.")
    else:
        if analysis["surrogate_source"] == "quadratic":
            lines.append(
                f"Surrogate: quadratic (QPHD) fallback; OLS R^2 = "
                f"{_fmt(analysis['ols']['r_squared'])} below "
                f"{_fmt(OLS_FALLBACK_R2)}")
            lines.append(f"Quadratic R^2 = "
                         f"{_fmt(analysis['quadratic']['r_squared'])}")
        else:
            lines.append(f"Surrogate: OLS linear, R^2 = "
                         f"{_fmt(analysis['ols']['r_squared'])}")
        asr = analysis["as"]
        comps = list(zip(asr["param_names"], asr["w_hat"]))
        ranked = sorted(comps, key=lambda kv: abs(kv[1]), reverse=True)
        lines.append("Active direction components: "
                     + ", ".join(f"{n} = {_fmt(w)}" for n, w in comps))
        lines.append("Ranking by influence: "
                     + " > ".join(n for n, _ in ranked))
        lines.append("Eigenvalues: "
                     + ", ".join(_fmt(v) for v in asr["eigenvalues"]))
        if asr["split_n"] is not None:
            lines.append(f"Eigenvalue gap after index {asr['split_n']} "
                         "supports the reduced subspace.")
        boot = analysis["bootstrap"]
        lines.append(f"Bootstrap (B = {boot['replicates']}): angle 95% CI "
                     f"[{_fmt(boot['angle_ci'][0])}, "
                     f"{_fmt(boot['angle_ci'][1])}] rad")
        for (name, _), ci in zip(comps, boot["per_component_ci"]):
            lines.append(f"  {name} component CI [{_fmt(ci[0])}, "
                         f"{_fmt(ci[1])}]")
        red = analysis["reduced"]["g"]
        lines.append(f"Reduced model g(z): degree {red['degree']}, "
                     f"R^2 = {_fmt(red['r_squared'])}")
        lines.append(f"Trend along the active direction: "
                     f"{analysis['trend']}.")
    lines.append("")
    return "\n".join(lines)


def analyze_study(study_dir: str | Path) -> ReportBundle:
    """Fit surrogates and (for m >= 2) the active subspace; emit CSVs, SVGs,
    the text report, and the manifest."""
    study_dir = Path(study_dir)
    spec = load_study(study_dir)
    dataset = load_dataset(study_dir, spec)
    if dataset.n_ok < dataset.m + 2:
        raise StudyError(f"only {dataset.n_ok} usable rows; add samples "
                         "(raise theta) and re-run")

    files = [
        {"role": "dataset", "path": DATASET_FILE},
    ]
    analysis: dict = {"qoi": spec.qoi.name,
                      "param_names": spec.param_names()}

    from .svg import bars_svg, scatter_curve_svg

    if spec.m == 1:
        p = spec.parameters[0]
        x_raw = dataset.raw_matrix()[:, 0]
        g = surr.fit_poly1d(x_raw, dataset.q)
        analysis.update(mode="poly1d", poly1d=_poly_payload(g),
                        trend=_trend(g))

        grid = np.linspace(g.domain[0], g.domain[1], 200)
        curve = np.column_stack([grid, [g.predict(v) for v in grid]])
        points = np.column_stack([x_raw, dataset.q])
        _write(study_dir, "response_curve.csv",
               _csv([list(r) for r in curve], [p.name, spec.qoi.name]))
        _write(study_dir, "response.svg",
               scatter_curve_svg(points, curve, p.name, spec.qoi.name))
        files += [{"role": "summary_curve", "path": "response_curve.csv"},
                  {"role": "response_svg", "path": "response.svg"}]
    else:
        analysis["mode"] = "subspace"
        lin = surr.fit_ols(dataset.x_matrix, dataset.q)
        analysis["ols"] = {"c": lin.c, "b": [float(v) for v in lin.b],
                           "r_squared": lin.r_squared}
        if lin.r_squared < OLS_FALLBACK_R2:
            quad = surr.fit_quadratic(dataset.x_matrix, dataset.q)
            asr = subs.active_subspace_quadratic(quad, dataset.x_matrix,
                                                 spec.param_names())
            analysis["surrogate_source"] = "quadratic"
            analysis["quadratic"] = {
                "c": quad.c, "b": [float(v) for v in quad.b],
                "A": [[float(v) for v in row] for row in quad.a_matrix],
                "r_squared": quad.r_squared,
            }
        else:
            asr = subs.active_direction_ols(lin, spec.param_names())
            analysis["surrogate_source"] = "ols"

        boot = subs.bootstrap_direction(dataset.x_matrix, dataset.q,
                                        b=BOOTSTRAP_B, seed=spec.seed)
        reduced = subs.build_reduced_model(dataset.x_matrix, dataset.q,
                                           asr.w_hat)
        summary = subs.summary_data(dataset.x_matrix, dataset.q, asr.w_hat,
                                    reduced.g, spec.param_names())

        analysis["as"] = {
            "w_hat": [float(v) for v in asr.w_hat],
            "eigenvalues": [float(v) for v in asr.eigenvalues],
            "split_n": asr.split_n,
            "source": asr.source,
            "param_names": asr.param_names,
        }
        analysis["bootstrap"] = {
            "replicates": boot.replicates,
            "per_component_ci": [list(ci) for ci in boot.per_component_ci],
            "angle_ci": list(boot.angle_ci),
            "seed": boot.seed,
        }
        analysis["reduced"] = {"g": _poly_payload(reduced.g),
                               "z_min": float(reduced.z_values.min()),
                               "z_max": float(reduced.z_values.max())}
        analysis["trend"] = _trend(reduced.g)

        _write(study_dir, "summary_scatter.csv",
               _csv([list(r) for r in summary.points],
                    ["z", spec.qoi.name]))
        _write(study_dir, "summary_curve.csv",
               _csv([list(r) for r in summary.curve], ["z", "g"]))
        _write(study_dir, "component_bars.csv",
               _csv([[n, w] for n, w in summary.component_bars],
                    ["parameter", "component"]))
        _write(study_dir, "summary.svg",
               scatter_curve_svg(summary.points, summary.curve,
                                 "active variable z", spec.qoi.name))
        _write(study_dir, "bars.svg",
               bars_svg(summary.component_bars, "active direction components"))
        files += [
            {"role": "summary_scatter", "path": "summary_scatter.csv"},
            {"role": "summary_curve", "path": "summary_curve.csv"},
            {"role": "component_bars", "path": "component_bars.csv"},
            {"role": "response_svg", "path": "summary.svg"},
            {"role": "bars_svg", "path": "bars.svg"},
        ]

    _write(study_dir, ANALYSIS_FILE,
           json.dumps(analysis, sort_keys=True, indent=1) + "\n")
    files.append({"role": "analysis", "path": ANALYSIS_FILE})

    _write(study_dir, REPORT_FILE, _analysis_report(spec, dataset, analysis))
    files.append({"role": "report_text", "path": REPORT_FILE})

    files.append({"role": "manifest", "path": MANIFEST_FILE})
    _write_manifest(study_dir, files)
    return ReportBundle(study_dir=study_dir, files=files)


# ---------------------------------------------------------------------------
# optimize
# ---------------------------------------------------------------------------

def _surrogate_from_analysis(analysis: dict):
    if analysis["surrogate_source"] == "quadratic":
        q = analysis["quadratic"]
        return surr.QuadraticSurrogate(c=q["c"], b=np.array(q["b"]),
                                       a_matrix=np.array(q["A"]),
                                       r_squared=q["r_squared"])
    o = analysis["ols"]
    return surr.LinearSurrogate(c=o["c"], b=np.array(o["b"]),
                                r_squared=o["r_squared"],
                                n_points=0)


def optimize_study(study_dir: str | Path) -> ReportBundle:
    """Compile the goal against the analysis artifacts, optimize, validate
    when a backend is available, and extend the report."""
    study_dir = Path(study_dir)
    spec = load_study(study_dir)
    if spec.goal is None:
        raise ValidationError("study has no goal; nothing to optimize")
    analysis_path = study_dir / ANALYSIS_FILE
    if not analysis_path.exists():
        raise StudyError("analysis artifacts missing; run 'analyze' first")
    analysis = json.loads(analysis_path.read_text(encoding="utf-8"))
    goal = spec.goal

    lines = [OPT_MARKER, ""]
    lines.append(f"Goal: {goal.kind} on {goal.qoi}"
                 + (f", target {_fmt(goal.target)}" if goal.target is not None
                    else ""))
    result: dict = {}
    trace_rows: list[list] = []

    if spec.m == 1:
        p = spec.parameters[0]
        g = _poly_from_payload(analysis["poly1d"])
        if goal.kind == "min_input_at_target":
            found = opt.min_input_at_target(g, goal.target)
            x_star_raw = [found.x]
            predicted = found.value
            objective_value = (found.value - goal.target) ** 2
            lines.append("Target reached within tolerance: "
                         + ("yes" if found.reached else "no"))
            result["target_reached"] = found.reached
        else:
            obj = opt.compile_objective(goal, g, [g.domain[0]], [g.domain[1]])
            res = opt.minimize_scalar_bounded(
                lambda x: obj.eval(np.array([x])), g.domain[0], g.domain[1])
            x_star_raw = [float(res.x_star[0])]
            predicted = g.predict(x_star_raw[0])
            objective_value = res.f_star
            trace_rows = [[i, f, width] for i, (f, width)
                          in enumerate(res.trace)]
            lines.append(f"Objective: {obj.description}")
            lines.append(f"Termination: {res.termination} after "
                         f"{res.iterations} iterations")
    else:
        model = _surrogate_from_analysis(analysis)
        red = analysis["reduced"]
        reduced = subs.ReducedModel(
            z_values=np.array([red["z_min"], red["z_max"]]),
            g=_poly_from_payload(red["g"]),
            r_squared=red["g"]["r_squared"])
        asr = subs.ASResult(
            w_hat=np.array(analysis["as"]["w_hat"]),
            eigenvalues=np.array(analysis["as"]["eigenvalues"]),
            w_matrix=np.eye(spec.m),
            split_n=analysis["as"]["split_n"],
            source=analysis["as"]["source"],
            param_names=analysis["as"]["param_names"])

        if goal.kind == "min_input_at_target":
            found = opt.min_input_at_target(reduced.g, goal.target)
            w = asr.w_hat
            center = np.full(spec.m, 0.5)
            x_norm = np.clip(center + (found.x - float(w @ center)) * w,
                             0.0, 1.0)
            predicted = reduced.g.predict(found.x)
            objective_value = (predicted - goal.target) ** 2
            result["target_reached"] = found.reached
        else:
            res_red = opt.optimize_reduced(reduced, asr, goal)
            x_norm = res_red.x_star
            predicted = reduced.g.predict(float(asr.w_hat @ x_norm))
            objective_value = res_red.f_star
            if res_red.clamp_perturbed:
                lines.append("Note: box clamping perturbed the reduced-space "
                             "optimum mapping.")

            # direct full-surrogate solve, emitted for comparison
            obj = opt.compile_objective(goal, model,
                                        np.zeros(spec.m), np.ones(spec.m))
            res_dir = opt.minimize_lbfgsb(obj, np.full(spec.m, 0.5))
            trace_rows = [[i, f, pg] for i, (f, pg)
                          in enumerate(res_dir.trace)]
            direct_raw = [denormalize(t, p.lower, p.upper)
                          for t, p in zip(res_dir.x_star, spec.parameters)]
            lines.append("Direct L-BFGS-B on the full surrogate (for "
                         "comparison): "
                         + ", ".join(f"{p.name} = {_fmt(v)}"
                                     for p, v in zip(spec.parameters,
                                                     direct_raw))
                         + f"; objective {_fmt(res_dir.f_star)}"
                         + f"; termination {res_dir.termination}")

        x_star_raw = [denormalize(t, p.lower, p.upper)
                      for t, p in zip(x_norm, spec.parameters)]

    for p, v in zip(spec.parameters, x_star_raw):
        unit = f" {p.units}" if p.units else ""
        lines.append(f"Optimized {p.name}: {_fmt(v)}{unit}")
    lines.append(f"Predicted {spec.qoi.name}: {_fmt(predicted)}")
    lines.append(f"Objective value: {_fmt(objective_value)}")

    result.update({
        "x_star": {p.name: float(v) for p, v in zip(spec.parameters,
                                                    x_star_raw)},
        "predicted": float(predicted),
        "objective_value": float(objective_value),
        "goal": {"kind": goal.kind, "qoi": goal.qoi, "target": goal.target},
    })

    if spec.backend is not None:
        try:
            report = opt.validate_optimum(
                spec.backend, spec.qoi,
                {p.name: v for p, v in zip(spec.parameters, x_star_raw)},
                predicted, param_defs=spec.parameters,
                case_dir=study_dir / "validation")
            result["validation"] = {"actual": report.actual,
                                    "predicted": report.predicted,
                                    "rel_error": report.rel_error}
            lines.append(f"Validation run: actual {_fmt(report.actual)}, "
                         f"relative error {_fmt(report.rel_error)}")
        except ValidationUnavailable as exc:
            result["validation"] = {"unavailable": str(exc)}
            lines.append(f"Validation unavailable: {exc}")
    lines.append("")

    _write(study_dir, "optimum.json",
           json.dumps(result, sort_keys=True, indent=1) + "\n")
    if trace_rows:
        _write(study_dir, "opt_trace.csv",
               _csv(trace_rows, ["iteration", "objective", "residual"]))

    # regenerate the report: analysis section + fresh optimization section
    report_path = study_dir / REPORT_FILE
    base = report_path.read_text(encoding="utf-8") if report_path.exists() else ""
    if OPT_MARKER in base:
        base = base.split(OPT_MARKER)[0]
    _write(study_dir, REPORT_FILE, base + "\n".join(lines))

    files = [{"role": "dataset", "path": DATASET_FILE},
             {"role": "analysis", "path": ANALYSIS_FILE},
             {"role": "optimum", "path": "optimum.json"},
             {"role": "report_text", "path": REPORT_FILE}]
    if trace_rows:
        files.append({"role": "opt_trace", "path": "opt_trace.csv"})
    for name, role in (("summary_scatter.csv", "summary_scatter"),
                       ("summary_curve.csv", "summary_curve"),
                       ("component_bars.csv", "component_bars"),
                       ("response_curve.csv", "summary_curve"),
                       ("summary.svg", "response_svg"),
                       ("response.svg", "response_svg"),
                       ("bars.svg", "bars_svg")):
        if (study_dir / name).exists() and not any(f["path"] == name
                                                   for f in files):
            files.append({"role": role, "path": name})
    files.append({"role": "manifest", "path": MANIFEST_FILE})
    _write_manifest(study_dir, files)
    return ReportBundle(study_dir=study_dir, files=files)


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------

def _write_manifest(study_dir: Path, files: list[dict]) -> None:
    entries = []
    for f in files:
        if f["path"] == MANIFEST_FILE:
            continue
        path = study_dir / f["path"]
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        entries.append({"role": f["role"], "path": f["path"],
                        "sha256": digest})
    manifest = {
        "files": sorted(entries, key=lambda e: (e["path"], e["role"])),
        "metadata": {"created_unix": time.time()},
    }
    _write(study_dir, MANIFEST_FILE,
           json.dumps(manifest, sort_keys=True, indent=1) + "\n")
