"""Parameter-study orchestration: sample a parameter box, evaluate a scalar
quantity of interest through a pluggable backend, fit response surfaces, run
active-subspace sensitivity analysis with bootstrap confidence, and solve
goal-derived box-constrained optimization problems."""

__version__ = "0.1.0"

from .study import (  # noqa: F401
    BackendConfig,
    GoalSpec,
    ParameterDef,
    QoISpec,
    StudySpec,
    load_spec,
    loads_spec,
    parse_prompt,
    render_spec,
)
