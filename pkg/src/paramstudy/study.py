"""Study data model, prompt parsing, and study-file (de)serialization.

A study is the four-task decomposition used throughout the pipeline:
simulate (backend), postprocess (QoI extraction), analyze (parameters + QoI),
and optionally optimize (goal).  Two front doors produce a
:class:`StudySpec`: :func:`load_spec` for YAML study files and
:func:`parse_prompt` for the two templated natural-language forms

    analyze the effect of <P1> (from <A> to <B> [units]) [and <P2> ...] on <Q>
    determine the [optimal|min] <P> at which <Q> is [near|below] <T>

(possibly combined with "and determine ...", and with a trailing
"in a simulation: <solver text>" clause).  Anything outside that grammar is
rejected; the parser never invents a numeric bound.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional

import yaml

from .errors import (
    MalformedRange,
    MissingTarget,
    SchemaError,
    UnrecognizedTemplate,
    ValidationError,
)

GOAL_KINDS = ("minimize", "maximize", "target", "below", "min_input_at_target")
TARGET_KINDS = ("target", "below", "min_input_at_target")
EXTRACTION_MODES = ("regex-last-match", "csv-aggregate", "backend-direct")
CSV_OPS = ("max", "min", "mean", "last")

_NUM = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"


def snake_case(text: str) -> str:
    """Normalize an identifier: camelCase boundaries and any non-word runs
    become single underscores."""
    s = re.sub(r"(?<=[a-z0-9])(?=[A-Z])", "_", text.strip())
    s = re.sub(r"[^\w]+", "_", s, flags=re.UNICODE)
    s = re.sub(r"_+", "_", s).strip("_")
    return s.lower()


@dataclass
class ParameterDef:
    """One input parameter with its raw-unit box.

    Bounds may be unresolved (None) straight out of the prompt parser when
    neither an explicit range nor a nominal value is available; such a spec
    cannot be planned until ranges are filled in.
    """

    name: str
    lower: Optional[float] = None
    upper: Optional[float] = None
    nominal: Optional[float] = None
    units: Optional[str] = None
    range_is_default: bool = False

    def validate(self, require_range: bool = True) -> None:
        if not self.name:
            raise ValidationError("parameter with empty name")
        if self.lower is None or self.upper is None:
            if require_range:
                raise ValidationError(
                    f"parameter {self.name!r} has no range; supply lower/upper "
                    "or a nonzero nominal")
            return
        if not self.lower < self.upper:
            raise ValidationError(
                f"parameter {self.name!r}: lower ({self.lower}) must be < "
                f"upper ({self.upper})")
        if self.nominal is not None and not (self.lower <= self.nominal <= self.upper):
            raise ValidationError(
                f"parameter {self.name!r}: nominal {self.nominal} outside "
                f"[{self.lower}, {self.upper}]")


@dataclass
class QoISpec:
    """How the scalar quantity of interest is obtained from a finished case."""

    name: str
    extraction: str = "backend-direct"
    file_pattern: Optional[str] = None
    pattern: Optional[str] = None
    column: Optional[str] = None
    op: Optional[str] = None
    scale: Optional[float] = None
    offset: Optional[float] = None

    def validate(self) -> None:
        if self.extraction not in EXTRACTION_MODES:
            raise ValidationError(
                f"qoi {self.name!r}: unknown extraction mode {self.extraction!r}")
        if self.extraction == "regex-last-match":
            if not (self.file_pattern and self.pattern):
                raise ValidationError(
                    f"qoi {self.name!r}: regex-last-match needs file_pattern and pattern")
        if self.extraction == "csv-aggregate":
            if not (self.file_pattern and self.column and self.op):
                raise ValidationError(
                    f"qoi {self.name!r}: csv-aggregate needs file_pattern, column, op")
            if self.op not in CSV_OPS:
                raise ValidationError(f"qoi {self.name!r}: unknown op {self.op!r}")
        if (self.scale is None) != (self.offset is None):
            raise ValidationError(
                f"qoi {self.name!r}: transform needs both scale and offset")
        if self.scale is not None and self.scale == 0:
            raise ValidationError(f"qoi {self.name!r}: transform scale must be nonzero")

    @property
    def has_transform(self) -> bool:
        return self.scale is not None


@dataclass
class GoalSpec:
    kind: str
    qoi: str
    target: Optional[float] = None

    def validate(self) -> None:
        if self.kind not in GOAL_KINDS:
            raise ValidationError(f"unknown goal kind {self.kind!r}")
        needs = self.kind in TARGET_KINDS
        if needs and self.target is None:
            raise ValidationError(f"goal kind {self.kind!r} requires a target")
        if not needs and self.target is not None:
            raise ValidationError(f"goal kind {self.kind!r} takes no target")


@dataclass
class BackendConfig:
    """Where f(x) comes from: an external process run in a substituted case
    directory, or a registered analytic model."""

    kind: str  # "process_template" | "analytic"
    template_dir: Optional[str] = None
    run_command: Optional[list[str]] = None
    timeout: float = 300.0
    analytic_name: Optional[str] = None
    analytic_params: dict[str, float] = field(default_factory=dict)

    def validate(self) -> None:
        if self.kind == "process_template":
            if not (self.template_dir and self.run_command):
                raise ValidationError(
                    "process_template backend needs template_dir and run_command")
        elif self.kind == "analytic":
            if not self.analytic_name:
                raise ValidationError("analytic backend needs analytic_name")
        else:
            raise ValidationError(f"unknown backend kind {self.kind!r}")


@dataclass
class StudySpec:
    parameters: list[ParameterDef]
    qoi: QoISpec
    simulation_text: str = ""
    postprocess_text: str = ""
    backend: Optional[BackendConfig] = None
    goal: Optional[GoalSpec] = None
    seed: int = 0
    theta: float = 4.0

    @property
    def m(self) -> int:
        return len(self.parameters)

    def param_names(self) -> list[str]:
        return [p.name for p in self.parameters]

    def validate(self, require_ranges: bool = True) -> None:
        if not self.parameters:
            raise ValidationError("study needs at least one parameter")
        names = self.param_names()
        dupes = {n for n in names if names.count(n) > 1}
        if dupes:
            raise ValidationError(f"duplicate parameter names: {sorted(dupes)}")
        for p in self.parameters:
            p.validate(require_range=require_ranges)
        self.qoi.validate()
        if self.goal is not None:
            self.goal.validate()
        if self.backend is not None:
            self.backend.validate()
        if not (2.0 <= self.theta <= 10.0):
            raise ValidationError(f"theta {self.theta} outside [2, 10]")
        if self.seed < 0:
            raise ValidationError("seed must be non-negative")


# ---------------------------------------------------------------------------
# Prompt grammar
# ---------------------------------------------------------------------------

_RANGE_RE = re.compile(
    r"\(\s*from\s+(?P<a>" + _NUM + r")\s*(?P<ua>[^)]*?)\s*"
    r"to\s+(?P<b>" + _NUM + r")\s*(?P<ub>[^)]*?)\s*\)",
    re.IGNORECASE)

_ANALYSIS_RE = re.compile(
    r"analyz(?:e|ing)\s+the\s+effect\s+of\s+(?P<body>.*?)"
    r"(?=\s+and\s+determine\b|\s*$)",
    re.IGNORECASE | re.DOTALL)

_OPT_RE = re.compile(
    r"determine\s+the\s+(?P<mode>optimal|min(?:imum)?)\s+(?P<params>.+?)"
    r"\s+at\s+which\s+(?P<rest>.+)$",
    re.IGNORECASE | re.DOTALL)

_REL_RE = re.compile(
    r"^(?P<qoi>.+?)\s+(?:is|should\s+be)\s+"
    r"(?P<rel>near|below|blow|as\s+close\s+to)\s+(?P<tail>.+)$",
    re.IGNORECASE | re.DOTALL)

_SIM_CLAUSE_RE = re.compile(
    r"\s+in\s+(?:a|the)\s+simulation\s*:\s*(?P<sim>.+)$",
    re.IGNORECASE | re.DOTALL)


def _split_top_level(text: str, seps: list[str]) -> list[str]:
    """Split on any of the separator strings, ignoring matches inside
    parentheses."""
    parts, depth, start, i = [], 0, 0, 0
    while i < len(text):
        ch = text[i]
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth = max(0, depth - 1)
        elif depth == 0:
            for sep in seps:
                if text.startswith(sep, i):
                    parts.append(text[start:i])
                    i += len(sep)
                    start = i
                    break
            else:
                i += 1
                continue
            continue
        i += 1
    parts.append(text[start:])
    return [p.strip() for p in parts if p.strip()]


def _split_params(text: str) -> list[str]:
    """Split a parameter list on commas, then on " and " — but keep an
    " and " intact when it sits inside a single ranged phrase such as
    "difference between the hot and cold (from 10 to 30)"."""
    tokens = []
    for piece in _split_top_level(text, [","]):
        sub = _split_top_level(piece, [" and "])
        if len(sub) > 1 and _RANGE_RE.search(piece):
            # only accept the split when every part owns its range
            if not all(_RANGE_RE.search(s) for s in sub):
                sub = [piece]
        tokens.extend(sub)
    return tokens


def _parse_param_token(token: str, nominals: Optional[Mapping[str, float]]) -> ParameterDef:
    rm = _RANGE_RE.search(token)
    name_text = token if rm is None else (token[:rm.start()] + token[rm.end():])
    name_text = re.sub(r"^\s*the\s+", "", name_text.strip(), flags=re.IGNORECASE)
    name = snake_case(name_text)
    if not name:
        raise UnrecognizedTemplate(f"cannot extract a parameter name from {token!r}")
    if rm is not None:
        a, b = float(rm.group("a")), float(rm.group("b"))
        if a >= b:
            raise MalformedRange(f"parameter {name!r}: from {a} to {b}")
        units = rm.group("ub").strip() or rm.group("ua").strip() or None
        return ParameterDef(name=name, lower=a, upper=b, units=units)
    nominal = None if nominals is None else nominals.get(name)
    if nominal is not None:
        from .sampling import default_range  # deferred: sampling imports this module
        lo, hi = default_range(nominal)
        return ParameterDef(name=name, lower=lo, upper=hi, nominal=nominal,
                            range_is_default=True)
    return ParameterDef(name=name, range_is_default=True)


def _strip_trailing_annotation(text: str) -> str:
    # drop a trailing "(...)" annotation such as "(average(1/2*U^2))"
    text = text.strip().rstrip(".")
    if text.endswith(")"):
        depth, i = 0, len(text) - 1
        while i >= 0:
            if text[i] == ")":
                depth += 1
            elif text[i] == "(":
                depth -= 1
                if depth == 0:
                    return text[:i].strip().rstrip(".")
            i -= 1
    return text


def _parse_qoi_text(text: str) -> str:
    # QoI clause ends at the first comma ("..., defined as d = ...")
    head = _split_top_level(text, [","])[0]
    head = _strip_trailing_annotation(head)
    head = re.sub(r"^\s*the\s+", "", head, flags=re.IGNORECASE)
    return snake_case(head)


def parse_prompt(text: str,
                 nominals: Optional[Mapping[str, float]] = None) -> StudySpec:
    """Parse one of the two documented prompt templates (or their
    combination) into a StudySpec.

    ``nominals`` optionally maps parameter names to nominal values used to
    derive ±20% default ranges for parameters stated without "(from A to B)".
    """
    if not text or not text.strip():
        raise UnrecognizedTemplate("empty prompt")
    body = " ".join(text.split())

    sim_text = ""
    sm = _SIM_CLAUSE_RE.search(body)
    if sm:
        sim_text = sm.group("sim").strip()
        body = body[:sm.start()].strip()

    am = _ANALYSIS_RE.search(body)
    om = _OPT_RE.search(body)
    if am is None and om is None:
        raise UnrecognizedTemplate(
            "prompt matches neither 'analyze the effect of ...' nor "
            "'determine the ... at which ...'")

    params: list[ParameterDef] = []
    qoi_name = None
    postprocess_text = ""

    if am is not None:
        segment = am.group("body").strip().rstrip(".")
        pieces = _split_top_level(segment, [" on "])
        if len(pieces) < 2:
            raise UnrecognizedTemplate("analysis clause lacks 'on <quantity>'")
        param_part = pieces[0]
        qoi_part = " on ".join(pieces[1:])
        for token in _split_params(param_part):
            params.append(_parse_param_token(token, nominals))
        if not params:
            raise UnrecognizedTemplate("analysis clause names no parameters")
        qoi_name = _parse_qoi_text(qoi_part)
        postprocess_text = qoi_part.strip()

    goal = None
    if om is not None:
        mode = om.group("mode").lower()
        rm = _REL_RE.match(om.group("rest").strip().rstrip("."))
        if rm is None:
            raise UnrecognizedTemplate(
                "optimization clause lacks 'is near/below <target>'")
        rel = rm.group("rel").lower()
        tm = re.search(_NUM, rm.group("tail"))
        if tm is None:
            raise MissingTarget(f"no numeric target in {rm.group('tail')!r}")
        target = float(tm.group(0))
        opt_qoi = _parse_qoi_text(rm.group("qoi"))
        if qoi_name is None:
            qoi_name = opt_qoi
            postprocess_text = rm.group("qoi").strip()
        for token in _split_params(om.group("params")):
            pd = _parse_param_token(token, nominals)
            # the optimization clause often repeats a parameter under a
            # shorter alias ("nu_in_physicalProperties" vs "the laminar
            # viscosity nu_in_physicalProperties"); match by name suffix
            known = any(p.name == pd.name
                        or p.name.endswith("_" + pd.name)
                        or pd.name.endswith("_" + p.name)
                        for p in params)
            if not known:
                params.append(pd)
        kind = "min_input_at_target" if mode.startswith("min") else (
            "below" if rel in ("below", "blow") else "target")
        goal = GoalSpec(kind=kind, qoi=qoi_name, target=target)

    spec = StudySpec(
        parameters=params,
        qoi=QoISpec(name=qoi_name),
        simulation_text=sim_text,
        postprocess_text=postprocess_text,
        goal=goal,
    )
    spec.validate(require_ranges=False)
    return spec


def render_prompt(spec: StudySpec) -> str:
    """Render a spec back into canonical prompt text (inverse of
    :func:`parse_prompt` over the documented grammar)."""
    def fmt(v: float) -> str:
        return repr(float(v))

    parts = []
    for p in spec.parameters:
        token = p.name
        if p.lower is not None and not p.range_is_default:
            token += f" (from {fmt(p.lower)} to {fmt(p.upper)}"
            if p.units:
                token += f" {p.units}"
            token += ")"
        parts.append(token)
    text = f"analyze the effect of {' and '.join(parts)} on {spec.qoi.name}"
    if spec.goal is not None:
        g = spec.goal
        if g.kind == "min_input_at_target":
            text += (f" and determine the min {spec.parameters[0].name} "
                     f"at which {g.qoi} is near {fmt(g.target)}")
        elif g.kind in ("target", "below"):
            rel = "near" if g.kind == "target" else "below"
            text += (f" and determine the optimal {spec.parameters[0].name} "
                     f"at which {g.qoi} is {rel} {fmt(g.target)}")
    if spec.simulation_text:
        text += f" in a simulation: {spec.simulation_text}"
    return text


# ---------------------------------------------------------------------------
# Study file (YAML) schema
# ---------------------------------------------------------------------------

def _require(mapping: Any, key: str, path: str, types: tuple = ()) -> Any:
    if not isinstance(mapping, dict):
        raise SchemaError(path, "expected a mapping")
    if key not in mapping:
        raise SchemaError(f"{path}.{key}", "missing required field")
    val = mapping[key]
    if types and not isinstance(val, types):
        raise SchemaError(f"{path}.{key}",
                          f"expected {'/'.join(t.__name__ for t in types)}")
    return val


def _opt_num(mapping: dict, key: str, path: str) -> Optional[float]:
    if key not in mapping or mapping[key] is None:
        return None
    v = mapping[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise SchemaError(f"{path}.{key}", "expected a number")
    return float(v)


def _parse_qoi(node: dict, path: str) -> QoISpec:
    name = _require(node, "name", path, (str,))
    q = QoISpec(
        name=name,
        extraction=node.get("extraction", "backend-direct"),
        file_pattern=node.get("file_pattern"),
        pattern=node.get("pattern"),
        column=node.get("column"),
        op=node.get("op"),
    )
    tr = node.get("transform")
    if tr is not None:
        q.scale = _opt_num(tr, "scale", f"{path}.transform")
        q.offset = _opt_num(tr, "offset", f"{path}.transform")
    return q


def loads_spec(text: str) -> StudySpec:
    """Parse a YAML study document and validate every invariant."""
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise SchemaError("$", f"not valid YAML: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaError("$", "top level must be a mapping")

    sim = _require(doc, "simulation", "$", (dict,))
    post = _require(doc, "postprocess", "$", (dict,))
    raw_params = _require(doc, "parameters", "$", (list,))
    settings = doc.get("settings") or {}

    backend = None
    if sim.get("backend") is not None:
        b = sim["backend"]
        kind = _require(b, "kind", "$.simulation.backend", (str,))
        backend = BackendConfig(
            kind=kind,
            template_dir=b.get("template_dir"),
            run_command=list(b["run_command"]) if b.get("run_command") else None,
            timeout=float(b.get("timeout", 300.0)),
            analytic_name=b.get("analytic_name"),
            analytic_params={k: float(v) for k, v in (b.get("analytic_params") or {}).items()},
        )

    qoi = _parse_qoi(_require(post, "qoi", "$.postprocess", (dict,)), "$.postprocess.qoi")

    params = []
    for i, node in enumerate(raw_params):
        path = f"$.parameters[{i}]"
        name = _require(node, "name", path, (str,))
        params.append(ParameterDef(
            name=name,
            lower=_opt_num(node, "lower", path),
            upper=_opt_num(node, "upper", path),
            nominal=_opt_num(node, "nominal", path),
            units=node.get("units"),
            range_is_default=bool(node.get("range_is_default", False)),
        ))

    goal = None
    if doc.get("goal") is not None:
        g = doc["goal"]
        goal = GoalSpec(
            kind=_require(g, "kind", "$.goal", (str,)),
            qoi=_require(g, "qoi", "$.goal", (str,)),
            target=_opt_num(g, "target", "$.goal"),
        )

    theta = settings.get("theta", 4.0)
    seed = settings.get("seed", 0)
    if isinstance(theta, bool) or not isinstance(theta, (int, float)):
        raise SchemaError("$.settings.theta", "expected a number")
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise SchemaError("$.settings.seed", "expected an integer")

    spec = StudySpec(
        parameters=params,
        qoi=qoi,
        simulation_text=sim.get("text", "") or "",
        postprocess_text=post.get("text", "") or "",
        backend=backend,
        goal=goal,
        seed=seed,
        theta=float(theta),
    )
    spec.validate(require_ranges=True)
    return spec


def load_spec(path: str) -> StudySpec:
    with open(path, "r", encoding="utf-8") as fh:
        return loads_spec(fh.read())


def render_spec(spec: StudySpec) -> str:
    """Deterministic canonical YAML serialization; loads_spec(render_spec(s))
    reproduces s."""
    sim: dict[str, Any] = {"text": spec.simulation_text}
    if spec.backend is not None:
        b = spec.backend
        bn: dict[str, Any] = {"kind": b.kind}
        if b.template_dir is not None:
            bn["template_dir"] = b.template_dir
        if b.run_command is not None:
            bn["run_command"] = list(b.run_command)
        bn["timeout"] = b.timeout
        if b.analytic_name is not None:
            bn["analytic_name"] = b.analytic_name
        if b.analytic_params:
            bn["analytic_params"] = {k: b.analytic_params[k]
                                     for k in sorted(b.analytic_params)}
        sim["backend"] = bn

    qn: dict[str, Any] = {"name": spec.qoi.name, "extraction": spec.qoi.extraction}
    for key in ("file_pattern", "pattern", "column", "op"):
        val = getattr(spec.qoi, key)
        if val is not None:
            qn[key] = val
    if spec.qoi.has_transform:
        qn["transform"] = {"scale": spec.qoi.scale, "offset": spec.qoi.offset}

    pl = []
    for p in spec.parameters:
        node: dict[str, Any] = {"name": p.name}
        for key in ("lower", "upper", "nominal", "units"):
            val = getattr(p, key)
            if val is not None:
                node[key] = val
        if p.range_is_default:
            node["range_is_default"] = True
        pl.append(node)

    doc: dict[str, Any] = {
        "simulation": sim,
        "postprocess": {"text": spec.postprocess_text, "qoi": qn},
        "parameters": pl,
    }
    if spec.goal is not None:
        gn: dict[str, Any] = {"kind": spec.goal.kind, "qoi": spec.goal.qoi}
        if spec.goal.target is not None:
            gn["target"] = spec.goal.target
        doc["goal"] = gn
    doc["settings"] = {"seed": spec.seed, "theta": spec.theta}

    return yaml.safe_dump(doc, sort_keys=False, default_flow_style=False,
                          allow_unicode=True)
