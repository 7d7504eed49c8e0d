"""HTTP front-end for the study pipeline.

Thin FastAPI wrapper over :mod:`paramstudy.pipeline`; studies live under the
workspace root (PARAMSTUDY_ROOT, default cwd), one directory per study name.
Run with ``uvicorn paramstudy.service:app``.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import pipeline
from .errors import InsufficientData, StudyError
from .study import loads_spec, parse_prompt, render_spec

app = FastAPI(title="paramstudy",
              description="Parameter-study orchestration: sampling, "
                          "sensitivity analysis, goal-driven optimization.")


def _study_dir(name: str) -> Path:
    from .cli import workspace_root
    if not name or "/" in name or name.startswith("."):
        raise HTTPException(status_code=422, detail="invalid study name")
    return workspace_root() / name


def _http(exc: StudyError) -> HTTPException:
    status = 409 if isinstance(exc, InsufficientData) else 422
    return HTTPException(status_code=status,
                         detail=f"{type(exc).__name__}: {exc}")


class ParseRequest(BaseModel):
    text: str
    nominals: Optional[dict[str, float]] = None


class ParseResponse(BaseModel):
    spec_yaml: str
    parameter_names: list[str]
    qoi: str
    goal_kind: Optional[str] = None


class RunRequest(BaseModel):
    spec_yaml: str
    workers: int = Field(default=1, ge=1)


class RunResponse(BaseModel):
    study_dir: str
    cases_total: int
    cases_ok: int


class BundleResponse(BaseModel):
    study_dir: str
    files: list[dict]
    report: str


class OptimizeResponse(BundleResponse):
    optimum: dict


@app.get("/health")
def health() -> dict:
    return {"status": "ok"}


@app.post("/parse", response_model=ParseResponse)
def parse(req: ParseRequest) -> ParseResponse:
    try:
        spec = parse_prompt(req.text, nominals=req.nominals)
    except StudyError as exc:
        raise _http(exc)
    return ParseResponse(
        spec_yaml=render_spec(spec),
        parameter_names=spec.param_names(),
        qoi=spec.qoi.name,
        goal_kind=spec.goal.kind if spec.goal else None,
    )


@app.post("/studies/{name}/run", response_model=RunResponse)
def run(name: str, req: RunRequest) -> RunResponse:
    study_dir = _study_dir(name)
    try:
        spec = loads_spec(req.spec_yaml)
        dataset = pipeline.run_study(spec, study_dir, workers=req.workers)
    except StudyError as exc:
        raise _http(exc)
    return RunResponse(study_dir=str(study_dir),
                       cases_total=len(dataset.records),
                       cases_ok=dataset.n_ok)


@app.post("/studies/{name}/analyze", response_model=BundleResponse)
def analyze(name: str) -> BundleResponse:
    study_dir = _study_dir(name)
    try:
        bundle = pipeline.analyze_study(study_dir)
    except FileNotFoundError:
        raise HTTPException(status_code=404, detail="study not found or not run")
    except StudyError as exc:
        raise _http(exc)
    report = (study_dir / pipeline.REPORT_FILE).read_text(encoding="utf-8")
    return BundleResponse(study_dir=str(study_dir), files=bundle.files,
                          report=report)


@app.post("/studies/{name}/optimize", response_model=OptimizeResponse)
def optimize(name: str) -> OptimizeResponse:
    study_dir = _study_dir(name)
    try:
        bundle = pipeline.optimize_study(study_dir)
    except FileNotFoundError:
        raise HTTPException(status_code=404, detail="study not found or not analyzed")
    except StudyError as exc:
        raise _http(exc)
    report = (study_dir / pipeline.REPORT_FILE).read_text(encoding="utf-8")
    optimum = json.loads((study_dir / "optimum.json").read_text(encoding="utf-8"))
    return OptimizeResponse(study_dir=str(study_dir), files=bundle.files,
                            report=report, optimum=optimum)


@app.get("/studies/{name}/report")
def report(name: str) -> dict:
    path = _study_dir(name) / pipeline.REPORT_FILE
    if not path.exists():
        raise HTTPException(status_code=404, detail="no report yet")
    return {"report": path.read_text(encoding="utf-8")}
