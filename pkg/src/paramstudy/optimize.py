"""Goal compilation and box-constrained minimization.

Two solvers: a from-scratch limited-memory BFGS with box projection
(two-loop recursion, projected backtracking line search, projected-gradient
stopping) and a derivative-free bounded 1-D search (golden-section with
parabolic acceleration).  Reduced-space optima are mapped back along the
active direction through the box center with component clamping.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import UnsupportedGoal
from .study import GoalSpec
from .subspace import ASResult, ReducedModel
from .surrogate import Poly1DSurrogate

GOLDEN = 0.5 * (3.0 - np.sqrt(5.0))


@dataclass
class Objective:
    eval: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]
    lower: np.ndarray
    upper: np.ndarray
    description: str = ""


@dataclass
class OptResult:
    x_star: np.ndarray
    f_star: float
    objective_value: float
    iterations: int
    termination: str  # gradient_tol | max_iter | line_search_fail | interval_tol
    trace: list[tuple[float, float]] = field(default_factory=list)
    clamp_perturbed: bool = False


@dataclass
class TargetSearchResult:
    x: float
    value: float
    reached: bool


@dataclass
class ValidationReport:
    actual: float
    predicted: float
    rel_error: float


def compile_objective(goal: GoalSpec, model, lower: Sequence[float],
                      upper: Sequence[float]) -> Objective:
    """Turn a goal into (eval, grad) over the model's input space.

    minimize -> f, maximize -> -f, target/below T -> (f - T)^2; gradients by
    chain rule from the surrogate's analytic gradient.
    """
    if goal.kind == "min_input_at_target":
        raise UnsupportedGoal("min_input_at_target has a dedicated solver")

    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)

    def f(x: np.ndarray) -> float:
        return model.predict(np.asarray(x, dtype=float))

    def fgrad(x: np.ndarray) -> np.ndarray:
        return np.atleast_1d(model.gradient(np.asarray(x, dtype=float)))

    if goal.kind == "minimize":
        return Objective(f, fgrad, lower, upper,
                         f"minimize {goal.qoi}")
    if goal.kind == "maximize":
        return Objective(lambda x: -f(x), lambda x: -fgrad(x), lower, upper,
                         f"maximize {goal.qoi}")
    # target and below both compile to squared distance
    t = goal.target

    def sq(x: np.ndarray) -> float:
        d = f(x) - t
        return d * d

    def sq_grad(x: np.ndarray) -> np.ndarray:
        return 2.0 * (f(x) - t) * fgrad(x)

    rel = "near" if goal.kind == "target" else "below"
    return Objective(sq, sq_grad, lower, upper,
                     f"drive {goal.qoi} {rel} {t}: minimize ({goal.qoi} - {t})^2")


def _projected_gradient(x: np.ndarray, g: np.ndarray, lower: np.ndarray,
                        upper: np.ndarray) -> np.ndarray:
    return x - np.clip(x - g, lower, upper)


def _two_loop(g: np.ndarray, s_hist: list[np.ndarray],
              y_hist: list[np.ndarray]) -> np.ndarray:
    """Two-loop recursion: apply the implicit inverse Hessian to g."""
    q = g.copy()
    alphas = []
    rhos = [1.0 / (y @ s) for s, y in zip(s_hist, y_hist)]
    for s, y, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rhos)):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    if s_hist:
        s, y = s_hist[-1], y_hist[-1]
        q *= (s @ y) / (y @ y)
    for (s, y, rho), a in zip(zip(s_hist, y_hist, rhos), reversed(alphas)):
        beta = rho * (y @ q)
        q += (a - beta) * s
    return q


def minimize_lbfgsb(obj: Objective, x0: Sequence[float], eps: float = 1e-8,
                    memory: int = 10, max_iter: int = 500,
                    c1: float = 1e-4, max_backtracks: int = 30) -> OptResult:
    """Limited-memory BFGS with box projection.

    Steps are projected onto the box during a backtracking line search with
    the Armijo sufficient-decrease condition; convergence is declared on the
    projected gradient norm.
    """
    lower, upper = obj.lower, obj.upper
    x = np.clip(np.asarray(x0, dtype=float), lower, upper)
    f = obj.eval(x)
    g = obj.grad(x)
    s_hist: list[np.ndarray] = []
    y_hist: list[np.ndarray] = []
    trace = [(f, float(np.linalg.norm(_projected_gradient(x, g, lower, upper))))]
    termination = "max_iter"
    iterations = 0

    for iterations in range(1, max_iter + 1):
        pg = _projected_gradient(x, g, lower, upper)
        if np.linalg.norm(pg) < eps:
            termination = "gradient_tol"
            iterations -= 1
            break

        # coordinates pinned at a bound with the gradient pointing outward
        # are frozen; otherwise the quasi-Newton direction keeps pushing
        # into the bound and the clipped step stops being a descent step
        active = ((x <= lower) & (g > 0.0)) | ((x >= upper) & (g < 0.0))
        g_free = np.where(active, 0.0, g)
        d = -_two_loop(g_free, s_hist, y_hist)
        d[active] = 0.0
        if g_free @ d >= 0.0:
            d = -g_free

        alpha = 1.0
        accepted = False
        for _ in range(max_backtracks):
            x_new = np.clip(x + alpha * d, lower, upper)
            step = x_new - x
            if not step.any():
                break
            f_new = obj.eval(x_new)
            if f_new <= f + c1 * min(0.0, float(g @ step)):
                accepted = True
                break
            alpha *= 0.5

        if not accepted:
            termination = "line_search_fail"
            break

        g_new = obj.grad(x_new)
        s = x_new - x
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            s_hist.append(s)
            y_hist.append(y)
            if len(s_hist) > memory:
                s_hist.pop(0)
                y_hist.pop(0)

        x, f, g = x_new, f_new, g_new
        trace.append((f, float(np.linalg.norm(
            _projected_gradient(x, g, lower, upper)))))

    return OptResult(x_star=x, f_star=f, objective_value=f,
                     iterations=iterations, termination=termination,
                     trace=trace)


def minimize_scalar_bounded(f: Callable[[float], float], lower: float,
                            upper: float, tol: float = 1e-10,
                            max_iter: int = 500) -> OptResult:
    """Derivative-free bounded minimization: golden-section shrinkage with a
    parabolic step when it is safe.  Never evaluates outside [lower, upper]."""
    a, b = float(lower), float(upper)
    x = w = v = a + GOLDEN * (b - a)
    fx = fw = fv = f(x)
    d = e = 0.0
    trace = [(fx, b - a)]
    termination = "max_iter"
    iterations = 0

    for iterations in range(1, max_iter + 1):
        xm = 0.5 * (a + b)
        tol1 = tol * (1.0 + abs(x))
        tol2 = 2.0 * tol1
        if abs(x - xm) <= tol2 - 0.5 * (b - a):
            termination = "interval_tol"
            break

        use_golden = True
        if abs(e) > tol1:
            # parabola through (x, fx), (w, fw), (v, fv)
            r = (x - w) * (fx - fv)
            qd = (x - v) * (fx - fw)
            p = (x - v) * qd - (x - w) * r
            qd = 2.0 * (qd - r)
            if qd > 0.0:
                p = -p
            qd = abs(qd)
            e_prev, e = e, d
            if (abs(p) < abs(0.5 * qd * e_prev) and p > qd * (a - x)
                    and p < qd * (b - x)):
                d = p / qd
                u = x + d
                if (u - a) < tol2 or (b - u) < tol2:
                    d = tol1 if xm >= x else -tol1
                use_golden = False
        if use_golden:
            e = (b - x) if x < xm else (a - x)
            d = GOLDEN * e

        u = x + d if abs(d) >= tol1 else x + (tol1 if d >= 0 else -tol1)
        u = min(max(u, a), b)
        fu = f(u)

        if fu <= fx:
            if u >= x:
                a = x
            else:
                b = x
            v, w, x = w, x, u
            fv, fw, fx = fw, fx, fu
        else:
            if u < x:
                a = u
            else:
                b = u
            if fu <= fw or w == x:
                v, w = w, u
                fv, fw = fw, fu
            elif fu <= fv or v == x or v == w:
                v, fv = u, fu
        trace.append((fx, b - a))

    return OptResult(x_star=np.array([x]), f_star=fx, objective_value=fx,
                     iterations=iterations, termination=termination,
                     trace=trace)


def optimize_reduced(reduced: ReducedModel, as_result: ASResult,
                     goal: GoalSpec, tol: float = 1e-10) -> OptResult:
    """Solve the goal on g(z) over the observed z range, then map z* back to
    the normalized box along the active direction through the box center."""
    z_lo = float(reduced.z_values.min())
    z_hi = float(reduced.z_values.max())
    obj = compile_objective(goal, reduced.g, [z_lo], [z_hi])

    res = minimize_scalar_bounded(lambda z: obj.eval(np.array([z])),
                                  z_lo, z_hi, tol=tol)
    z_star = float(res.x_star[0])

    w = as_result.w_hat
    center = np.full(len(w), 0.5)
    x_norm = np.clip(center + (z_star - float(w @ center)) * w, 0.0, 1.0)
    clamp_perturbed = abs(float(w @ x_norm) - z_star) > 1e-6

    return OptResult(x_star=x_norm, f_star=res.f_star,
                     objective_value=res.f_star, iterations=res.iterations,
                     termination=res.termination, trace=res.trace,
                     clamp_perturbed=clamp_perturbed)


def min_input_at_target(surface: Poly1DSurrogate, target: float,
                        rel_tol: float = 0.02,
                        scan_points: int = 1000) -> TargetSearchResult:
    """Smallest x in the surface domain with |g(x) - target| within
    rel_tol·|target|, by dense scan plus bisection refinement.  Falls back to
    the argmin of |g - target| with reached=False."""
    lo, hi = surface.domain
    band = rel_tol * abs(target)
    xs = np.linspace(lo, hi, scan_points)
    miss = np.array([abs(surface.predict(x) - target) for x in xs])

    hits = np.nonzero(miss <= band)[0]
    if len(hits) == 0:
        i = int(np.argmin(miss))
        return TargetSearchResult(x=float(xs[i]),
                                  value=surface.predict(float(xs[i])),
                                  reached=False)

    i = int(hits[0])
    x_hit = float(xs[i])
    if i > 0:
        # bisect the entry boundary between the last miss and the first hit
        a, b = float(xs[i - 1]), x_hit
        for _ in range(60):
            mid = 0.5 * (a + b)
            if abs(surface.predict(mid) - target) <= band:
                b = mid
            else:
                a = mid
        x_hit = b
    return TargetSearchResult(x=x_hit, value=surface.predict(x_hit),
                              reached=True)


def validate_optimum(backend_cfg, qoi_spec, x_star_raw: dict,
                     predicted: float, param_defs=None,
                     case_dir=None) -> ValidationReport:
    """Re-evaluate the true model at the optimum (one extra run).

    Backend failure surfaces as ValidationUnavailable; it never aborts a
    study.
    """
    from .backend import run_case  # local import keeps module load cheap
    from .errors import ValidationUnavailable
    from .study import ParameterDef

    if param_defs is None:
        param_defs = [ParameterDef(name=k) for k in x_star_raw]
    point = [x_star_raw[p.name] for p in param_defs]
    rec = run_case(backend_cfg, qoi_spec, point, param_defs,
                   sample_index=-1, case_dir=case_dir)
    if rec.status != "ok" or rec.qoi_value is None:
        raise ValidationUnavailable(f"validation run ended with status "
                                    f"{rec.status!r}")
    actual = rec.qoi_value
    rel = abs(actual - predicted) / (1.0 + abs(actual))
    return ValidationReport(actual=actual, predicted=predicted, rel_error=rel)
