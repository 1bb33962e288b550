"""Trust-region L-BFGS inner solver inside an augmented-Lagrangian loop.

The inner solver minimizes a smooth (possibly NaN-returning) objective
with a Steihaug truncated-CG step on a limited-memory BFGS model whose
seed matrix is the Gram operator of the control metric: all norms are
metric norms and the first step is the metric steepest-descent
direction. Candidate steps with NaN objective are treated as ratio
``-inf``: rejected, with the radius cut by 4. The outer loop handles a
single equality constraint with first-order multiplier updates and
penalty growth by 10 on constraint failure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import ContractError
from .metric import GramOperator


@dataclass
class TRState:
    """Trust-region radius, thresholds and L-BFGS memory."""

    radius: float = 1.0
    radius_min: float = 1e-12
    radius_max: float = 1e6
    shrink_threshold: float = 0.25
    grow_threshold: float = 0.75
    accept_threshold: float = 1e-4
    step_min: float = 1e-4
    max_iterations: int = 100
    lbfgs_memory: int = 10
    pairs: list = field(default_factory=list)

    def add_pair(self, s, y):
        """Store an (s, y) pair; skipped unless the curvature is positive."""
        sy = float(np.dot(s, y))
        if not (np.isfinite(sy) and sy > 0.0):
            return False
        self.pairs.append((np.array(s), np.array(y)))
        if len(self.pairs) > self.lbfgs_memory:
            self.pairs.pop(0)
        return True


@dataclass
class ALState:
    """Augmented-Lagrangian multiplier, penalty and tolerance schedule."""

    multiplier: float = 0.0
    penalty: float = 10.0
    omega: float = 1e-2
    eta: float = 1e-2


@dataclass
class ALParams:
    mu0: float = 10.0
    penalty_growth: float = 10.0
    omega0: float = 1e-2
    eta0: float = 1e-2
    omega_star: float = 1e-6
    eta_star: float = 1e-4
    max_outer: int = 10


@dataclass
class ConvergenceRecord:
    """One accepted iterate of the optimization run."""

    outer_iter: int
    inner_iter: int
    objective: float
    constraint: float
    penalty: float
    multiplier: float
    tr_radius: float
    step_norm: float
    grad_norm: float
    min_det_ratio: float


@dataclass
class InnerResult:
    control: np.ndarray
    value: float
    gradient: np.ndarray
    grad_norm: float
    reason: str
    iterations: int
    accepted: int


@dataclass
class ALResult:
    control: np.ndarray
    history: list
    converged: bool
    reason: str
    multiplier: float
    penalty: float
    constraint: float
    grad_norm: float
    outer_iterations: int


class _BFGSOperator:
    """Compact limited-memory BFGS Hessian seeded with the Gram matrix.

    B = G - [GS Y] [[S'GS, L], [L', -D]]^{-1} [GS Y]'   (Byrd-Nocedal-
    Schnabel), which keeps B positive definite for positive curvatures.
    """

    def __init__(self, gram: GramOperator, pairs):
        self.gram = gram
        self._mid = None
        if pairs:
            s_mat = np.stack([s for s, _ in pairs], axis=1)
            y_mat = np.stack([y for _, y in pairs], axis=1)
            gs = np.stack([gram.matvec(s_mat[:, j])
                           for j in range(s_mat.shape[1])], axis=1)
            sy = s_mat.T @ y_mat
            lower = np.tril(sy, k=-1)
            diag = np.diag(np.diag(sy))
            m = np.block([[s_mat.T @ gs, lower], [lower.T, -diag]])
            try:
                self._mid = scipy.linalg.lu_factor(m)
                self._u = np.concatenate([gs, y_mat], axis=1)
            except (ValueError, scipy.linalg.LinAlgError):
                self._mid = None

    def matvec(self, v):
        out = self.gram.matvec(v)
        if self._mid is not None:
            w = scipy.linalg.lu_solve(self._mid, self._u.T @ v)
            out = out - self._u @ w
        return out


def _steihaug(grad, bop, gram, radius, max_cg=200):
    """Truncated preconditioned CG for the trust-region subproblem.

    Returns (step, hit_boundary, predicted_reduction). The
    preconditioner is the Gram operator, so the first direction is the
    metric steepest descent and the trust region is a metric ball.
    """
    n = grad.shape[0]
    z = np.zeros(n)
    r = np.array(grad)
    y = gram.solve(r)
    rz = float(np.dot(r, y))
    gdual = math.sqrt(max(rz, 0.0))
    if gdual == 0.0:
        return z, False, 0.0
    tol = min(0.5, math.sqrt(gdual)) * gdual
    d = -y
    znorm2 = 0.0
    boundary = False
    for _ in range(min(max_cg, 2 * n + 10)):
        bd = bop.matvec(d)
        kappa = float(np.dot(d, bd))
        dnorm2 = gram.inner(d, d)
        zd = gram.inner(z, d)
        if kappa <= 0.0:
            tau = _boundary_tau(znorm2, zd, dnorm2, radius)
            z = z + tau * d
            boundary = True
            break
        alpha = rz / kappa
        znew2 = znorm2 + 2.0 * alpha * zd + alpha * alpha * dnorm2
        if znew2 >= radius * radius:
            tau = _boundary_tau(znorm2, zd, dnorm2, radius)
            z = z + tau * d
            boundary = True
            break
        z = z + alpha * d
        znorm2 = znew2
        r = r + alpha * bd
        y = gram.solve(r)
        rz_new = float(np.dot(r, y))
        if math.sqrt(max(rz_new, 0.0)) <= tol:
            break
        d = -y + (rz_new / rz) * d
        rz = rz_new
    pred = -(float(np.dot(grad, z)) + 0.5 * float(np.dot(z, bop.matvec(z))))
    return z, boundary, pred


def _boundary_tau(znorm2, zd, dnorm2, radius):
    disc = zd * zd + dnorm2 * (radius * radius - znorm2)
    return (-zd + math.sqrt(max(disc, 0.0))) / dnorm2


def inner_solve(model, x0, gram: GramOperator, tr: TRState, omega,
                callback=None) -> InnerResult:
    """Trust-region minimization of ``model`` down to dual-norm ``omega``.

    ``model`` exposes ``value(x) -> float`` (NaN allowed) and
    ``gradient(x) -> array`` (only called at finite points). Terminates
    when the dual gradient norm drops below ``omega``, when the radius
    or an accepted step undershoots ``step_min``, or at the iteration
    cap. Returns the best accepted point with a termination reason.
    """
    x = np.array(x0, dtype=float)
    fx = model.value(x)
    if not np.isfinite(fx):
        raise ContractError("inner solve started at a point with NaN value")
    g = model.gradient(x)
    gnorm = gram.dual_norm(g)
    reason = "max_iterations"
    accepted = 0
    iterations = 0
    if gnorm <= omega:
        return InnerResult(x, fx, g, gnorm, "gradient_tolerance", 0, 0)
    for iterations in range(1, tr.max_iterations + 1):
        bop = _BFGSOperator(gram, tr.pairs)
        step, boundary, pred = _steihaug(g, bop, gram, tr.radius)
        step_norm = gram.norm(step)
        trial = x + step
        f_trial = model.value(trial)
        if not np.isfinite(f_trial) or pred <= 0.0:
            rho = -math.inf
        else:
            rho = (fx - f_trial) / pred
        took_step = rho >= tr.accept_threshold
        if took_step:
            g_new = model.gradient(trial)
            tr.add_pair(step, g_new - g)
            x, fx, g = trial, f_trial, g_new
            gnorm = gram.dual_norm(g)
            accepted += 1
            if callback is not None:
                callback(x, fx, gnorm, step_norm, tr.radius, iterations)
        if rho < tr.shrink_threshold:
            tr.radius = max(tr.radius * 0.25, tr.radius_min)
        elif rho > tr.grow_threshold and boundary:
            tr.radius = min(tr.radius * 2.0, tr.radius_max)
        if gnorm <= omega:
            reason = "gradient_tolerance"
            break
        if tr.radius < tr.step_min:
            reason = "step_too_small"
            break
        if took_step and step_norm < tr.step_min:
            reason = "step_too_small"
            break
    return InnerResult(x, fx, g, gnorm, reason, iterations, accepted)


class AugmentedObjective:
    """J(x) + multiplier * c(x) + (penalty / 2) * c(x)^2."""

    def __init__(self, rf, constraint, multiplier, penalty):
        self.rf = rf
        self.constraint = constraint
        self.multiplier = multiplier
        self.penalty = penalty

    def value(self, x):
        j = self.rf.value(x)
        if not np.isfinite(j) or self.constraint is None:
            return j
        cv = self.constraint.value(x)
        return j + self.multiplier * cv + 0.5 * self.penalty * cv * cv

    def gradient(self, x):
        g = self.rf.gradient(x)
        if self.constraint is None:
            return g
        cv = self.constraint.value(x)
        return g + (self.multiplier + self.penalty * cv) \
            * self.constraint.gradient(x)


def augmented_lagrangian_solve(rf, constraint, gram: GramOperator,
                               al_params: ALParams = None,
                               tr_template: TRState = None, x0=None,
                               iterate_callback=None) -> ALResult:
    """Equality-constrained minimization of a reduced functional.

    Classic first-order scheme: minimize the augmented Lagrangian to
    tolerance ``omega``; if the constraint violation is within ``eta``
    update the multiplier and tighten both tolerances (halving, floored
    at the target tolerances), otherwise grow the penalty tenfold.
    Terminates on (|c| <= eta_star and dual grad <= omega_star), on an
    inner stall with no accepted step, or after ``max_outer`` rounds.
    Always returns the last iterate plus the convergence history.
    """
    params = al_params or ALParams()
    template = tr_template or TRState()
    x = np.zeros(rf.control_map.dim) if x0 is None else np.array(x0,
                                                                 dtype=float)
    state = ALState(multiplier=0.0, penalty=params.mu0,
                    omega=params.omega0, eta=params.eta0)
    history = []

    def quality_at(c):
        q = getattr(rf, "quality_of", None)
        return q(c).min_det_ratio if q is not None else float("nan")

    def snapshot(outer, inner, c, step_norm, grad_norm, radius):
        cv = constraint.value(c) if constraint is not None else 0.0
        rec = ConvergenceRecord(
            outer_iter=outer, inner_iter=inner, objective=rf.value(c),
            constraint=cv, penalty=state.penalty,
            multiplier=state.multiplier, tr_radius=radius,
            step_norm=step_norm, grad_norm=grad_norm,
            min_det_ratio=quality_at(c))
        history.append(rec)
        if iterate_callback is not None:
            iterate_callback(rec, c)

    j0 = rf.value(x)
    if not np.isfinite(j0):
        raise ContractError("augmented Lagrangian started at a NaN point")
    snapshot(0, 0, x, 0.0, float("nan"), template.radius)

    converged = False
    reason = "max_outer"
    res = None
    outer = 0
    for outer in range(params.max_outer):
        model = AugmentedObjective(rf, constraint, state.multiplier,
                                   state.penalty)
        tr = TRState(radius=template.radius, radius_min=template.radius_min,
                     radius_max=template.radius_max,
                     shrink_threshold=template.shrink_threshold,
                     grow_threshold=template.grow_threshold,
                     accept_threshold=template.accept_threshold,
                     step_min=template.step_min,
                     max_iterations=template.max_iterations,
                     lbfgs_memory=template.lbfgs_memory)

        def cb(c, fval, gnorm, step_norm, radius, inner_iter):
            del fval
            snapshot(outer + 1, inner_iter, c, step_norm, gnorm, radius)

        res = inner_solve(model, x, gram, tr, state.omega, callback=cb)
        x = res.control
        cv = constraint.value(x) if constraint is not None else 0.0
        if abs(cv) <= state.eta:
            state.multiplier += state.penalty * cv
            if abs(cv) <= params.eta_star and res.grad_norm <= params.omega_star:
                converged = True
                reason = "converged"
                break
            state.omega = max(0.5 * state.omega, params.omega_star)
            state.eta = max(0.5 * state.eta, params.eta_star)
        else:
            state.penalty *= params.penalty_growth
        if res.reason == "step_too_small" and res.accepted == 0:
            reason = "step_too_small"
            break
    final_grad = res.grad_norm if res is not None else float("nan")
    final_cv = constraint.value(x) if constraint is not None else 0.0
    return ALResult(control=x, history=history, converged=converged,
                    reason=reason, multiplier=state.multiplier,
                    penalty=state.penalty, constraint=final_cv,
                    grad_norm=final_grad, outer_iterations=outer + 1)
