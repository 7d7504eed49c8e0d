"""Evaluates f(x) per sample point.

Two backend kinds: ``process_template`` copies a case-template directory,
substitutes ``@{name}`` tokens, and runs an external command per case;
``analytic`` evaluates a registered closed-form model.  ``run_batch`` owns a
bounded worker pool and an append-only ledger so interrupted batches resume
without re-running completed cases.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import re
import shutil
import signal
import subprocess
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (
    EmptyColumn,
    InsufficientData,
    NoMatch,
    NonNumericCapture,
    StudyError,
    UnresolvedToken,
    ValidationError,
)
from .sampling import SamplePlan, normalize
from .study import BackendConfig, ParameterDef, QoISpec

log = logging.getLogger(__name__)

_TOKEN_RE = re.compile(r"@\{([A-Za-z_]\w*)\}")


def format_value(v: float) -> str:
    """Decimal rendering used in substituted files and PARAM_* env vars:
    17 significant digits, positional notation for |v| in [1e-4, 1e6)."""
    v = float(v)
    if v == 0.0:
        return "0"
    if 1e-4 <= abs(v) < 1e6:
        s = np.format_float_positional(v, precision=17, unique=True, trim="-")
        return s.rstrip(".")
    return format(v, ".17g")


# ---------------------------------------------------------------------------
# Analytic model registry
# ---------------------------------------------------------------------------

def _vector(params: dict, prefix: str, m: int, default: float) -> np.ndarray:
    return np.array([float(params.get(f"{prefix}{i + 1}", default))
                     for i in range(m)])


def _linear(x_norm, x_raw, p):
    b = _vector(p, "b", len(x_norm), 1.0)
    return float(p.get("c", 0.0)) + float(b @ x_norm)


def _explinear(x_norm, x_raw, p):
    a = _vector(p, "a", len(x_norm), 1.0)
    return float(np.exp(a @ x_norm))


def _decay(x_norm, x_raw, p):
    return float(p.get("q0", 1.0)) * float(np.exp(-float(p.get("k", 1.0)) * x_raw[0]))


def _quench(x_norm, x_raw, p):
    t_lo = float(p.get("T_lo", 300.0))
    t_hi = float(p.get("T_hi", 2000.0))
    s = float(p.get("s", 0.5))
    v_c = float(p.get("v_c", 40.0))
    return t_lo + (t_hi - t_lo) / (1.0 + np.exp(s * (x_raw[0] - v_c)))


def _saturating(x_norm, x_raw, p):
    d_max = float(p.get("d_max", 0.0707))
    phi0 = float(p.get("phi0", 0.5))
    phi1 = float(p.get("phi1", 1.1))
    ramp = (x_raw[0] - phi0) / (phi1 - phi0)
    return d_max * float(np.clip(ramp, 0.0, 1.0))


ANALYTIC_MODELS: dict[str, Callable] = {
    "linear": _linear,         # c + b.x on normalized x
    "explinear": _explinear,   # exp(a.x) on normalized x
    "decay": _decay,           # q0*exp(-k*x) on raw x
    "quench": _quench,         # sigmoid cliff on raw x
    "saturating": _saturating, # clamped ramp on raw x
}


def evaluate_analytic(cfg: BackendConfig, raw: Sequence[float],
                      param_defs: Sequence[ParameterDef]) -> float:
    fn = ANALYTIC_MODELS.get(cfg.analytic_name or "")
    if fn is None:
        raise ValidationError(f"unknown analytic model {cfg.analytic_name!r}")
    x_raw = np.asarray(raw, dtype=float)
    # models defined on raw inputs tolerate parameters without bounds
    x_norm = np.array([normalize(v, p.lower, p.upper)
                       if p.lower is not None and p.upper is not None
                       else np.nan
                       for v, p in zip(x_raw, param_defs)])
    return fn(x_norm, x_raw, cfg.analytic_params)


# ---------------------------------------------------------------------------
# Case templating and QoI extraction
# ---------------------------------------------------------------------------

def substitute_tokens(template_dir: str | Path, values: dict[str, float],
                      case_dir: str | Path) -> Path:
    """Deep-copy the template tree into case_dir, replacing every ``@{name}``
    in text files; binary files are copied byte-identical."""
    template_dir = Path(template_dir)
    case_dir = Path(case_dir)
    if case_dir.exists():
        shutil.rmtree(case_dir)
    shutil.copytree(template_dir, case_dir)

    rendered = {name: format_value(v) for name, v in values.items()}
    seen: set[str] = set()
    for path in sorted(case_dir.rglob("*")):
        if not path.is_file():
            continue
        data = path.read_bytes()
        if b"\0" in data:
            continue
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError:
            continue
        tokens = set(_TOKEN_RE.findall(text))
        if not tokens:
            continue
        for tok in sorted(tokens):
            if tok not in rendered:
                raise UnresolvedToken(tok, str(path.relative_to(case_dir)))
        seen |= tokens
        text = _TOKEN_RE.sub(lambda m: rendered[m.group(1)], text)
        path.write_text(text, encoding="utf-8")

    orphans = set(rendered) - seen
    if orphans:
        log.warning("values matched no template token: %s", sorted(orphans))
    return case_dir


def _aggregate(op: str, values: list[float]) -> float:
    if op == "max":
        return max(values)
    if op == "min":
        return min(values)
    if op == "mean":
        return sum(values) / len(values)
    return values[-1]  # last


def extract_qoi(qoi_spec: QoISpec, case_dir: str | Path) -> float:
    """Pull the scalar QoI out of a finished case directory."""
    case_dir = Path(case_dir)
    if qoi_spec.extraction == "backend-direct":
        raise NoMatch("backend-direct QoI has no file extraction")

    files = sorted(case_dir.rglob(qoi_spec.file_pattern or "*"))
    files = [f for f in files if f.is_file()]
    if not files:
        raise NoMatch(f"no file matches {qoi_spec.file_pattern!r} "
                      f"under {case_dir}")

    if qoi_spec.extraction == "regex-last-match":
        pattern = re.compile(qoi_spec.pattern or "")
        last: Optional[str] = None
        for path in files:
            for m in pattern.finditer(path.read_text(encoding="utf-8",
                                                     errors="replace")):
                last = m.group(1) if m.groups() else m.group(0)
        if last is None:
            raise NoMatch(f"pattern {qoi_spec.pattern!r} matched nothing")
        try:
            value = float(last)
        except ValueError as exc:
            raise NonNumericCapture(f"capture {last!r} is not a number") from exc
    else:  # csv-aggregate: lexicographically last matching file
        path = files[-1]
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        column = []
        for row in rows:
            cell = (row.get(qoi_spec.column) or "").strip()
            if cell:
                try:
                    column.append(float(cell))
                except ValueError:
                    continue
        if not column:
            raise EmptyColumn(f"column {qoi_spec.column!r} in {path} "
                              "has no numeric entries")
        value = _aggregate(qoi_spec.op or "last", column)

    return apply_transform(qoi_spec, value)


def apply_transform(qoi_spec: QoISpec, value: float) -> float:
    if qoi_spec.has_transform:
        return qoi_spec.scale * value + qoi_spec.offset
    return value


# ---------------------------------------------------------------------------
# Case execution
# ---------------------------------------------------------------------------

@dataclass
class RunRecord:
    sample_index: int
    raw_values: dict[str, float]
    qoi_value: Optional[float]
    status: str  # ok | run_failed | extract_failed | timeout
    stdout_path: Optional[str] = None
    stderr_path: Optional[str] = None
    wall_time: float = 0.0

    def to_json(self) -> str:
        return json.dumps({
            "sample_index": self.sample_index,
            "raw_values": self.raw_values,
            "qoi_value": self.qoi_value,
            "status": self.status,
            "stdout_path": self.stdout_path,
            "stderr_path": self.stderr_path,
            "wall_time": self.wall_time,
        }, sort_keys=True)

    @staticmethod
    def from_json(line: str) -> "RunRecord":
        d = json.loads(line)
        return RunRecord(
            sample_index=d["sample_index"],
            raw_values={k: float(v) for k, v in d["raw_values"].items()},
            qoi_value=d["qoi_value"],
            status=d["status"],
            stdout_path=d.get("stdout_path"),
            stderr_path=d.get("stderr_path"),
            wall_time=d.get("wall_time", 0.0),
        )


def run_case(cfg: BackendConfig, qoi_spec: QoISpec,
             point: Sequence[float], param_defs: Sequence[ParameterDef],
             sample_index: int = 0,
             case_dir: Optional[str | Path] = None) -> RunRecord:
    """Evaluate one point; all failure modes end up in ``status``."""
    raw_values = {p.name: float(v) for p, v in zip(param_defs, point)}
    started = time.monotonic()

    def record(status: str, qoi: Optional[float] = None,
               out: Optional[str] = None, err: Optional[str] = None) -> RunRecord:
        return RunRecord(sample_index=sample_index, raw_values=raw_values,
                         qoi_value=qoi, status=status,
                         stdout_path=out, stderr_path=err,
                         wall_time=time.monotonic() - started)

    if cfg.kind == "analytic":
        try:
            value = evaluate_analytic(cfg, point, param_defs)
            value = apply_transform(qoi_spec, value)
            if not np.isfinite(value):
                return record("run_failed")
            return record("ok", qoi=float(value))
        except StudyError:
            raise
        except Exception:
            return record("run_failed")

    assert case_dir is not None, "process backend needs a case directory"
    case_dir = Path(case_dir)
    try:
        substitute_tokens(cfg.template_dir, raw_values, case_dir)
    except UnresolvedToken:
        raise
    except OSError:
        return record("run_failed")

    out_path = case_dir / "stdout.log"
    err_path = case_dir / "stderr.log"
    env = dict(os.environ)
    for name, v in raw_values.items():
        env[f"PARAM_{name.upper()}"] = format_value(v)

    try:
        with open(out_path, "wb") as out, open(err_path, "wb") as err:
            proc = subprocess.Popen(cfg.run_command, cwd=case_dir,
                                    stdout=out, stderr=err, env=env,
                                    start_new_session=True)
            try:
                rc = proc.wait(timeout=cfg.timeout)
            except subprocess.TimeoutExpired:
                try:
                    os.killpg(os.getpgid(proc.pid), signal.SIGKILL)
                except ProcessLookupError:
                    pass
                proc.wait()
                return record("timeout", out=str(out_path), err=str(err_path))
    except OSError:
        return record("run_failed")
    if rc != 0:
        return record("run_failed", out=str(out_path), err=str(err_path))

    try:
        value = extract_qoi(qoi_spec, case_dir)
    except StudyError:
        return record("extract_failed", out=str(out_path), err=str(err_path))
    if not np.isfinite(value):
        return record("extract_failed", out=str(out_path), err=str(err_path))
    return record("ok", qoi=float(value), out=str(out_path), err=str(err_path))


# ---------------------------------------------------------------------------
# Batch execution with ledger resume
# ---------------------------------------------------------------------------

@dataclass
class Dataset:
    x_matrix: np.ndarray  # (n_ok, m) normalized
    q: np.ndarray         # (n_ok,)
    records: list[RunRecord]
    param_defs: list[ParameterDef]
    qoi_spec: QoISpec

    @property
    def n_ok(self) -> int:
        return len(self.q)

    @property
    def m(self) -> int:
        return len(self.param_defs)

    def raw_matrix(self) -> np.ndarray:
        ok = [r for r in self.records if r.status == "ok"]
        return np.array([[r.raw_values[p.name] for p in self.param_defs]
                         for r in ok])

    def to_csv(self) -> str:
        buf = io.StringIO()
        names = [p.name for p in self.param_defs]
        buf.write(",".join(["index"] + names + ["qoi", "status"]) + "\n")
        for r in sorted(self.records, key=lambda r: r.sample_index):
            cells = [str(r.sample_index)]
            cells += [repr(r.raw_values[n]) for n in names]
            cells.append("" if r.qoi_value is None else repr(r.qoi_value))
            cells.append(r.status)
            buf.write(",".join(cells) + "\n")
        return buf.getvalue()

    @staticmethod
    def from_csv(text: str, param_defs: Sequence[ParameterDef],
                 qoi_spec: QoISpec) -> "Dataset":
        rows = list(csv.DictReader(io.StringIO(text)))
        records = []
        for row in rows:
            qcell = row["qoi"]
            records.append(RunRecord(
                sample_index=int(row["index"]),
                raw_values={p.name: float(row[p.name]) for p in param_defs},
                qoi_value=float(qcell) if qcell else None,
                status=row["status"],
            ))
        return _assemble_dataset(records, list(param_defs), qoi_spec)


def _assemble_dataset(records: list[RunRecord],
                      param_defs: list[ParameterDef],
                      qoi_spec: QoISpec) -> Dataset:
    records = sorted(records, key=lambda r: r.sample_index)
    ok = [r for r in records if r.status == "ok"]
    if ok:
        x = np.array([[normalize(r.raw_values[p.name], p.lower, p.upper)
                       for p in param_defs] for r in ok])
        q = np.array([r.qoi_value for r in ok], dtype=float)
    else:
        x = np.empty((0, len(param_defs)))
        q = np.empty(0)
    return Dataset(x_matrix=x, q=q, records=records,
                   param_defs=param_defs, qoi_spec=qoi_spec)


def load_ledger(path: str | Path) -> dict[int, RunRecord]:
    path = Path(path)
    records: dict[int, RunRecord] = {}
    if not path.exists():
        return records
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line:
            continue
        try:
            rec = RunRecord.from_json(line)
        except (json.JSONDecodeError, KeyError):
            continue  # torn write from an interrupted batch
        records[rec.sample_index] = rec
    return records


def run_batch(cfg: BackendConfig, qoi_spec: QoISpec, plan: SamplePlan,
              param_defs: Sequence[ParameterDef], workdir: str | Path,
              max_workers: int = 1) -> Dataset:
    """Evaluate every plan point, at most max_workers concurrently.

    Completed-ok rows found in the ledger are not re-run; row order in the
    Dataset follows plan order regardless of completion order.
    """
    workdir = Path(workdir)
    cases = workdir / "cases"
    cases.mkdir(parents=True, exist_ok=True)
    ledger_path = workdir / "ledger.ndjson"
    param_defs = list(param_defs)

    previous = load_ledger(ledger_path)
    done = {i: rec for i, rec in previous.items() if rec.status == "ok"}
    pending = [i for i in range(plan.n) if i not in done]

    lock = threading.Lock()

    def commit(rec: RunRecord) -> None:
        with lock:
            with open(ledger_path, "a", encoding="utf-8") as fh:
                fh.write(rec.to_json() + "\n")
                fh.flush()
                os.fsync(fh.fileno())

    def worker(index: int) -> RunRecord:
        rec = run_case(cfg, qoi_spec, plan.points_raw[index], param_defs,
                       sample_index=index, case_dir=cases / str(index))
        commit(rec)
        return rec

    new_records: dict[int, RunRecord] = {}
    if pending:
        with ThreadPoolExecutor(max_workers=max(1, max_workers)) as pool:
            for rec in pool.map(worker, pending):
                new_records[rec.sample_index] = rec

    all_records = [done.get(i) or new_records[i] for i in range(plan.n)]
    dataset = _assemble_dataset(all_records, param_defs, qoi_spec)
    (workdir / "dataset.csv").write_text(dataset.to_csv(), encoding="utf-8")

    if dataset.n_ok < plan.m + 2:
        raise InsufficientData(
            f"only {dataset.n_ok} successful runs; need at least {plan.m + 2}")
    return dataset
