"""Command-line entry points.

Exit codes: 0 success, 2 spec/validation error, 3 backend failure,
4 insufficient data.  The workspace root defaults to the current directory
and can be overridden with the PARAMSTUDY_ROOT environment variable.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import pipeline
from .errors import (
    InsufficientData,
    StudyError,
    UnresolvedToken,
    ValidationError,
)
from .study import load_spec, parse_prompt, render_spec

EXIT_SPEC = 2
EXIT_BACKEND = 3
EXIT_DATA = 4


def workspace_root() -> Path:
    return Path(os.environ.get("PARAMSTUDY_ROOT", "."))


def _study_dir(arg: str) -> Path:
    path = Path(arg)
    if path.is_absolute() or path.exists():
        return path
    return workspace_root() / path


def _apply_overrides(spec, args):
    if getattr(args, "seed", None) is not None:
        spec.seed = args.seed
    if getattr(args, "theta", None) is not None:
        spec.theta = args.theta
    return spec


def cmd_run(args) -> int:
    spec = _apply_overrides(load_spec(args.spec), args)
    study_dir = Path(args.study_dir) if args.study_dir else (
        workspace_root() / Path(args.spec).stem)
    dataset = pipeline.run_study(spec, study_dir, workers=args.workers)
    print(f"{dataset.n_ok} ok of {len(dataset.records)} cases -> "
          f"{study_dir / pipeline.DATASET_FILE}")
    return 0


def cmd_analyze(args) -> int:
    bundle = pipeline.analyze_study(_study_dir(args.study_dir))
    print((bundle.study_dir / pipeline.REPORT_FILE).read_text(encoding="utf-8"))
    return 0


def cmd_optimize(args) -> int:
    bundle = pipeline.optimize_study(_study_dir(args.study_dir))
    text = (bundle.study_dir / pipeline.REPORT_FILE).read_text(encoding="utf-8")
    start = text.find(pipeline.OPT_MARKER)
    print(text[start:] if start >= 0 else text)
    return 0


def cmd_report(args) -> int:
    report = _study_dir(args.study_dir) / pipeline.REPORT_FILE
    if not report.exists():
        raise StudyError("no report yet; run 'analyze' first")
    print(report.read_text(encoding="utf-8"))
    return 0


def cmd_parse(args) -> int:
    spec = _apply_overrides(parse_prompt(args.prompt), args)
    sys.stdout.write(render_spec(spec))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="paramstudy",
        description="Parameter studies: sampling, sensitivity analysis, "
                    "and goal-driven optimization over a solver backend.")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the study seed")
    parser.add_argument("--theta", type=float, default=None,
                        help="override the oversampling factor (2..10)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="sample and evaluate the batch")
    p.add_argument("spec", help="path to the study YAML file")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--study-dir", default=None,
                   help="study directory (default: <root>/<spec stem>)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("analyze", help="fit surrogates and the active "
                                       "subspace; write the report bundle")
    p.add_argument("study_dir")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("optimize", help="solve the study goal on the "
                                        "analysis artifacts")
    p.add_argument("study_dir")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("report", help="print the current report")
    p.add_argument("study_dir")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("parse", help="parse a templated prompt into a "
                                     "study file")
    p.add_argument("prompt")
    p.set_defaults(func=cmd_parse)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InsufficientData as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (UnresolvedToken,) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (ValidationError, StudyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SPEC
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SPEC


if __name__ == "__main__":
    sys.exit(main())
