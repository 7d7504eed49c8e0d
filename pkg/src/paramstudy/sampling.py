"""Input normalization, default-range derivation, and sample-plan construction.

Normalization maps raw parameter values onto [0, 1] per dimension; all
surrogates and subspace analyses operate in that unit box.  Sample plans are
deterministic: the i.i.d. path uses numpy's PCG64 generator seeded from the
study seed, so a (params, theta, seed) triple always reproduces the same plan.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from math import ceil
from typing import Sequence

import numpy as np

from .errors import DegenerateRange, ZeroNominal
from .study import ParameterDef


def normalize(x: float, lower: float, upper: float) -> float:
    """Map a raw value onto the unit interval.  Out-of-range inputs map
    outside [0, 1]; that is intentional (validation runs use it)."""
    if lower >= upper:
        raise DegenerateRange(f"lower {lower!r} >= upper {upper!r}")
    return (x - lower) / (upper - lower)


def denormalize(t: float, lower: float, upper: float) -> float:
    if lower >= upper:
        raise DegenerateRange(f"lower {lower!r} >= upper {upper!r}")
    return lower + t * (upper - lower)


def default_range(nominal: float) -> tuple[float, float]:
    """±20% box around a nonzero nominal, ordered ascending."""
    if nominal == 0:
        raise ZeroNominal("cannot derive a default range around 0; "
                          "supply an explicit range")
    lo, hi = 0.8 * nominal, 1.2 * nominal
    return (lo, hi) if lo < hi else (hi, lo)


def normalize_point(raw: Sequence[float], params: Sequence[ParameterDef]) -> np.ndarray:
    return np.array([normalize(v, p.lower, p.upper) for v, p in zip(raw, params)])


def denormalize_point(t: Sequence[float], params: Sequence[ParameterDef]) -> np.ndarray:
    return np.array([denormalize(v, p.lower, p.upper) for v, p in zip(t, params)])


@dataclass
class SamplePlan:
    m: int
    n: int
    points_normalized: np.ndarray  # (n, m) in [0, 1]
    points_raw: np.ndarray         # (n, m) in raw units
    seed: int
    mode: str                      # "grid_1d" | "iid_uniform"
    param_names: list[str] = field(default_factory=list)
    distribution: str = "uniform"

    def to_csv(self) -> str:
        """Header of parameter names, one row per point, raw units."""
        buf = io.StringIO()
        buf.write(",".join(self.param_names) + "\n")
        for row in self.points_raw:
            buf.write(",".join(repr(float(v)) for v in row) + "\n")
        return buf.getvalue()


def plan_samples(params: Sequence[ParameterDef], theta: float, seed: int) -> SamplePlan:
    """Build the sample plan: an even inclusive grid for one parameter,
    i.i.d. uniform points otherwise.  N = theta*m, floored at 5 (1-D) or
    m+2 (multi-D)."""
    m = len(params)
    for p in params:
        if p.lower is None or p.upper is None:
            raise DegenerateRange(f"parameter {p.name!r} has no resolved range")
        if p.lower >= p.upper:
            raise DegenerateRange(f"parameter {p.name!r}: lower >= upper")

    if m == 1:
        n = max(ceil(theta), 5)
        tnorm = np.linspace(0.0, 1.0, n).reshape(n, 1)
        mode = "grid_1d"
    else:
        n = max(ceil(theta * m), m + 2)
        rng = np.random.default_rng(seed)  # PCG64
        tnorm = rng.random((n, m))
        mode = "iid_uniform"

    lows = np.array([p.lower for p in params])
    highs = np.array([p.upper for p in params])
    raw = lows + tnorm * (highs - lows)
    return SamplePlan(
        m=m, n=n,
        points_normalized=tnorm, points_raw=raw,
        seed=seed, mode=mode,
        param_names=[p.name for p in params],
    )
