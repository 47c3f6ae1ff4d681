"""Closest-point search inside a frozen region under a score ceiling.

Solves: minimize ||x - origin||^2 subject to frozen_score(x) <= threshold,
moving only the actionable coordinates. The solver is a sequential quadratic
programming loop: a damped BFGS model of the Lagrangian Hessian, a one-
constraint active-set QP step, and an l1-merit Armijo line search, preceded by
a feasibility-restoration phase when the start violates the ceiling (every
outlier does). Non-actionable coordinates are removed from the problem, never
penalized, so they hold their start values bit for bit.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from ._validation import as_point, check_mask
from .lof import ExactLOF
from .regions import CoincidentPointError, FrozenRegion, NeighborhoodKey, key_of

logger = logging.getLogger(__name__)

_ARMIJO = 1e-4
_MAX_HALVINGS = 45
_RESTORATION_ITERS = 50


class NumericalOptimizationError(RuntimeError):
    """Singular subproblem or undefined gradient at an iterate."""


def constraint_with_margin(threshold: float,
                           plausibility_target: Optional[float] = None) -> float:
    """Effective score ceiling: the plausibility target when set, else the threshold.

    Tightening the ceiling buys counterfactuals deeper inside the inlier
    region at the cost of distance; validity is still judged against the
    original threshold by callers.
    """
    threshold = float(threshold)
    if plausibility_target is None:
        return threshold
    target = float(plausibility_target)
    if target > threshold:
        raise ValueError(
            f"plausibility target {target} exceeds threshold {threshold}"
        )
    return target


@dataclass
class OptProblem:
    """One region-constrained search instance.

    ``origin`` anchors the objective; ``start`` seeds the iteration (its
    non-actionable coordinates are frozen into the solution). ``exclude`` is
    the query-mode excluded index the key was built under.
    """

    origin: np.ndarray
    key: NeighborhoodKey
    threshold: float
    start: np.ndarray
    actionable_mask: Optional[np.ndarray] = None
    exclude: Optional[int] = None
    constraint_tol: float = 1e-6
    grad_tol: float = 1e-6
    step_tol: float = 1e-9
    max_iterations: int = 200
    gradient_method: str = "analytic"


@dataclass
class OptResult:
    """Outcome of :func:`minimize_in_region`.

    ``constraint_value`` is the frozen-structure score at the solution;
    ``objective`` is the true Euclidean distance to the origin. ``trace``
    holds every location where the constraint was evaluated, starting at the
    start point. ``status``: "converged" carries a first-order certificate;
    "left_region_warning" means tolerances were met but the solution's true
    key differs from the frozen key; "iteration_limit" means the loop stopped
    on budget or stalled (score creases defeat one-sided gradients) with the
    final point still meeting the ceiling, so check ``constraint_value``;
    "infeasible" means the ceiling was still violated after a feasibility
    polish. ``merit_steps`` records (penalty, before, after) per accepted
    line-search step.
    """

    solution: np.ndarray
    objective: float
    constraint_value: float
    status: str
    iterations: int
    trace: np.ndarray
    multiplier: float = 0.0
    merit_steps: List[Tuple[float, float, float]] = field(default_factory=list)


def _damped_bfgs(B: np.ndarray, s: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Powell-damped BFGS update keeping B positive definite."""
    Bs = B @ s
    sBs = float(s @ Bs)
    if sBs <= 1e-16:
        return B
    sy = float(s @ y)
    if sy >= 0.2 * sBs:
        r = y
    else:
        theta = 0.8 * sBs / (sBs - sy)
        r = theta * y + (1.0 - theta) * Bs
    sr = float(s @ r)
    if sr <= 1e-16:
        return B
    B_new = B - np.outer(Bs, Bs) / sBs + np.outer(r, r) / sr
    B_new = 0.5 * (B_new + B_new.T)
    if not np.all(np.isfinite(B_new)):
        return B
    return B_new


def _solve_qp(B, g, a, c):
    """min 1/2 p'Bp + g'p  s.t.  c + a'p <= 0 (single inequality).

    Returns (p, lambda); (None, None) signals a flat constraint that cannot
    be activated (the caller decides whether that means infeasibility).
    """
    try:
        p_u = np.linalg.solve(B, -g)
    except np.linalg.LinAlgError:
        raise NumericalOptimizationError("singular quadratic subproblem") from None
    if not np.all(np.isfinite(p_u)):
        raise NumericalOptimizationError("non-finite quadratic subproblem step")
    if c + a @ p_u <= 0.0:
        return p_u, 0.0
    try:
        Bia = np.linalg.solve(B, a)
    except np.linalg.LinAlgError:
        raise NumericalOptimizationError("singular quadratic subproblem") from None
    denom = float(a @ Bia)
    if denom <= 1e-300 or not np.isfinite(denom):
        return None, None
    lam = float((c + a @ p_u) / denom)
    p = p_u - lam * Bia
    if not np.all(np.isfinite(p)):
        raise NumericalOptimizationError("non-finite quadratic subproblem step")
    return p, lam


def minimize_in_region(problem: OptProblem, model: ExactLOF) -> OptResult:
    """Run the SQP search for one frozen region. See the module docstring."""
    dim = model.n_features_in_
    origin = as_point(problem.origin, dim, name="origin")
    start = as_point(problem.start, dim, name="start")
    mask = check_mask(problem.actionable_mask, dim)
    if mask is None:
        mask = np.ones(dim, dtype=bool)
    if problem.max_iterations < 1:
        raise ValueError("max_iterations must be at least 1")
    for tol_name in ("constraint_tol", "grad_tol", "step_tol"):
        if getattr(problem, tol_name) <= 0:
            raise ValueError(f"{tol_name} must be positive")

    region = FrozenRegion(model, problem.key, problem.exclude)
    t = float(problem.threshold)
    ctol = problem.constraint_tol
    act = np.flatnonzero(mask)
    template = start.copy()
    trace: List[np.ndarray] = []
    merit_steps: List[Tuple[float, float, float]] = []

    def embed(z: np.ndarray) -> np.ndarray:
        x = template.copy()
        x[act] = z
        return x

    def c_of(x_full: np.ndarray) -> float:
        trace.append(x_full.copy())
        return region.score(x_full) - t

    def f_of(x_full: np.ndarray) -> float:
        d = x_full - origin
        return float(d @ d)

    def grad_c(x_full: np.ndarray) -> np.ndarray:
        try:
            return region.gradient(x_full, method=problem.gradient_method)[act]
        except CoincidentPointError as exc:
            raise NumericalOptimizationError(str(exc)) from exc

    def finish(z, c_val, status, iterations, lam):
        x_sol = embed(z)
        if status == "converged":
            if key_of(model, x_sol, problem.exclude) != problem.key:
                status = "left_region_warning"
        obj = float(np.linalg.norm(x_sol - origin))
        return OptResult(
            solution=x_sol,
            objective=obj,
            constraint_value=c_val + t,
            status=status,
            iterations=iterations,
            trace=np.array(trace),
            multiplier=lam,
            merit_steps=merit_steps,
        )

    z = start[act].copy()
    c0 = c_of(embed(z))

    if act.size == 0:
        status = "converged" if c0 <= ctol else "infeasible"
        return finish(z, c0, status, 0, 0.0)

    def restore(z, c0):
        """Plain descent on the violation until the ceiling is met."""
        for _ in range(_RESTORATION_ITERS):
            if c0 <= 0.0:
                break
            a = grad_c(embed(z))
            na = float(np.linalg.norm(a))
            if na < 1e-14:
                break  # flat violation: nothing to descend on
            direction = -a / na
            alpha = c0 / na
            accepted = False
            for _ in range(_MAX_HALVINGS):
                z_try = z + alpha * direction
                c_try = c_of(embed(z_try))
                if c_try <= c0 - _ARMIJO * alpha * na:
                    accepted = True
                    break
                alpha *= 0.5
            if not accepted:
                break
            z, c0 = z_try, c_try
        return z, c0

    # start the SQP from the admissible side (every outlier starts outside)
    if c0 > ctol:
        z, c0 = restore(z, c0)

    x_cur = embed(z)
    f0 = f_of(x_cur)
    g = 2.0 * (z - origin[act])
    a = grad_c(x_cur)
    B = 2.0 * np.eye(act.size)
    mu = 1.0
    lam = 0.0
    status = None
    iterations = 0

    for it in range(1, problem.max_iterations + 1):
        iterations = it
        p, lam_qp = _solve_qp(B, g, a, c0)
        if p is None:
            status = "infeasible" if c0 > ctol else "iteration_limit"
            break
        lam = lam_qp
        kkt = float(np.max(np.abs(g + lam * a))) if act.size else 0.0
        if c0 <= ctol and kkt <= problem.grad_tol:
            status = "converged"
            break

        mu = max(mu, 1.5 * lam + 0.1)
        viol0 = max(c0, 0.0)
        phi0 = f0 + mu * viol0
        descent = float(g @ p) - mu * viol0
        if descent >= 0.0:
            break  # no usable direction; post-loop logic decides the status

        alpha = 1.0
        accepted = False
        for _ in range(_MAX_HALVINGS):
            z_try = z + alpha * p
            x_try = embed(z_try)
            c_try = c_of(x_try)
            f_try = f_of(x_try)
            phi_try = f_try + mu * max(c_try, 0.0)
            if phi_try <= phi0 + _ARMIJO * alpha * descent:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            break

        merit_steps.append((mu, phi0, phi_try))
        s = alpha * p
        g_new = 2.0 * (z_try - origin[act])
        a_new = grad_c(x_try)
        y = (g_new + lam * a_new) - (g + lam * a)
        B = _damped_bfgs(B, s, y)
        z, f0, c0, g, a = z_try, f_try, c_try, g_new, a_new
        if float(np.max(np.abs(s))) <= problem.step_tol:
            # stalled: report convergence only if first-order optimality holds
            aa = float(a @ a)
            lam_ls = max(0.0, -float(g @ a) / aa) if aa > 0 else 0.0
            if c0 <= ctol and float(np.max(np.abs(g + lam_ls * a))) <= problem.grad_tol:
                lam = lam_ls
                status = "converged"
            break

    if status is None:
        status = "iteration_limit" if c0 <= ctol else "infeasible"

    if status == "infeasible":
        # one-sided gradients can stall the loop on a score crease with a
        # tiny residual violation; a feasibility polish settles those cases
        z, c0 = restore(z, c0)
        if c0 <= ctol:
            status = "iteration_limit"

    logger.debug(
        "minimize_in_region: status=%s iterations=%d evaluations=%d",
        status, iterations, len(trace),
    )
    return finish(z, c0, status, iterations, lam)
