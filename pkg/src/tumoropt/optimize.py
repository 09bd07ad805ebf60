"""Proximal projected-gradient minimisation over the admissible box.

The smooth cost part is handled by its adjoint gradient, the L1 dosage terms
and the box through their exact pointwise prox (soft-threshold then clamp).
Backtracking keeps the cost history monotone; a Barzilai-Borwein guess warms
up each line search.  Stationarity is measured as the unit-step prox
fixed-point gap, which vanishes exactly at points satisfying the discrete
first-order conditions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .adjoint import ReducedGradient, reduced_gradient, solve_adjoint
from .cost import CostWeights, eval_cost
from .state import (ControlSpace, ControlTriple, Direction,
                    PreconditionError, SolverError, StateTrajectory, System)


class GateError(SolverError):
    """The adjoint gradient failed its finite-difference gate."""


class SubgradientError(ValueError):
    pass


def _soft_threshold(z: np.ndarray, a: float) -> np.ndarray:
    return np.sign(z) * np.maximum(np.abs(z) - a, 0.0)


def prox_project(w: ControlTriple, g, step: float,
                 weights: CostWeights) -> ControlTriple:
    """One proximal step: gradient descent, L1 shrinkage, box projection.

    The composite soft-threshold-then-clamp is the exact prox of
    ``step * (gamma4 |w2| + gamma5 |w3|)`` plus the box indicator because the
    one-dimensional objectives are unimodal.
    """
    if step <= 0:
        raise PreconditionError("prox step must be positive")
    g1, g2, g3 = (g.g1, g.g2, g.g3) if isinstance(g, ReducedGradient) \
        else (g.h1, g.h2, g.h3)
    b = w.bounds
    # "+ 0.0" normalises negative zeros produced by the shrinkage
    w1 = np.clip(w.w1 - step * g1, b.w1_lo, b.w1_hi) + 0.0
    w2 = np.clip(_soft_threshold(w.w2 - step * g2, step * weights.gamma4),
                 b.w2_lo, b.w2_hi) + 0.0
    w3 = np.clip(_soft_threshold(w.w3 - step * g3, step * weights.gamma5),
                 b.w3_lo, b.w3_hi) + 0.0
    return ControlTriple(w1, w2, w3, b)


def stationarity_residual(space: ControlSpace, w: ControlTriple, g,
                          weights: CostWeights) -> float:
    """Norm of the unit-step prox fixed-point gap; zero iff stationary."""
    prox = prox_project(w, g, 1.0, weights)
    return space.norm(Direction.between(w, prox))


# ---------------------------------------------------------------------------
# reduced problem
# ---------------------------------------------------------------------------

@dataclass
class ControlProblem:
    """Reduced optimal-control problem over the discrete control space."""
    system: System
    phi0: np.ndarray
    sigma0: np.ndarray
    T: float
    n_steps: int
    weights: CostWeights
    adjoint_mode: str = "transpose"

    def __post_init__(self):
        self.space = self.system.control_space(self.T, self.n_steps)

    def solve(self, w: ControlTriple) -> StateTrajectory:
        return self.system.solve_state(w, self.phi0, self.sigma0, self.T,
                                       self.n_steps)

    def cost(self, w: ControlTriple, traj: StateTrajectory | None = None):
        traj = traj if traj is not None else self.solve(w)
        return eval_cost(self.system, traj, w, self.weights), traj

    def gradient(self, w: ControlTriple, traj: StateTrajectory | None = None,
                 mode: str | None = None) -> ReducedGradient:
        traj = traj if traj is not None else self.solve(w)
        adj = solve_adjoint(self.system, traj, w, self.weights,
                            mode or self.adjoint_mode)
        return reduced_gradient(self.system, traj, adj, w, self.weights)

    def smooth_cost(self, w: ControlTriple) -> float:
        (j, j1, j2), _ = self.cost(w)
        return j1


def gradient_fd_gate(problem: ControlProblem, w: ControlTriple,
                     grad: ReducedGradient, n_directions: int = 3,
                     eps: float = 1e-4, rtol: float = 1e-6,
                     rng: np.random.Generator | None = None) -> list[float]:
    """Compare the adjoint gradient against central differences of the
    smooth cost; raises GateError beyond ``rtol``."""
    rng = rng or np.random.default_rng(0)
    space = problem.space
    errors = []
    for _ in range(n_directions):
        h = space.random_direction(rng)
        fd = (problem.smooth_cost(w.axpy(eps, h))
              - problem.smooth_cost(w.axpy(-eps, h))) / (2 * eps)
        dj = space.inner(grad.direction(), h)
        scale = max(abs(fd), abs(dj), 1e-14)
        errors.append(abs(fd - dj) / scale)
    worst = max(errors)
    if worst > rtol:
        raise GateError(
            f"adjoint gradient failed the finite-difference gate: "
            f"relative error {worst:.3e} > {rtol:.1e}")
    return errors


# ---------------------------------------------------------------------------
# optimisation loop
# ---------------------------------------------------------------------------

@dataclass
class IterateRecord:
    iteration: int
    J: float
    J1: float
    J2: float
    step: float
    residual: float
    halvings: int


@dataclass
class OptimizationReport:
    history: list[IterateRecord]
    controls: ControlTriple
    converged: bool
    stagnated: bool
    message: str
    residual: float
    gate_errors: list[float] = field(default_factory=list)
    lambda2: np.ndarray | None = None
    lambda3: np.ndarray | None = None
    zero_intervals_w2: list[tuple[int, int]] = field(default_factory=list)
    zero_intervals_w3: list[tuple[int, int]] = field(default_factory=list)

    @property
    def costs(self) -> np.ndarray:
        return np.array([rec.J for rec in self.history])


@dataclass
class OptimizeOptions:
    max_iterations: int = 200
    tol: float = 1e-8
    step0: float | None = None
    armijo: float = 1e-4
    max_halvings: int = 40
    gate: bool = True
    gate_directions: int = 3
    gate_rtol: float = 1e-6
    gate_eps: float = 1e-4
    seed: int = 0
    zero_tol: float = 1e-10


def _default_step(weights: CostWeights) -> float:
    gammas = [gv for gv in (weights.gamma1, weights.gamma2, weights.gamma3)
              if gv > 0]
    return 1.0 / min(gammas) if gammas else 1.0


def optimize(problem: ControlProblem, w0: ControlTriple,
             opts: OptimizeOptions | None = None) -> OptimizationReport:
    """Minimise J1 + J2 over the admissible box from ``w0``.

    Gradients always come from the transpose adjoint mode: line searches at
    these tolerances need the exact discrete derivative, the continuous mode
    is a fidelity diagnostic only.
    """
    opts = opts or OptimizeOptions()
    if not w0.is_admissible(tol=1e-14):
        raise PreconditionError("initial control is not admissible")
    space = problem.space
    weights = problem.weights
    rng = np.random.default_rng(opts.seed)

    w = w0.copy()
    (J, J1, J2), traj = problem.cost(w)
    grad = problem.gradient(w, traj, mode="transpose")
    gate_errors = []
    if opts.gate:
        gate_errors = gradient_fd_gate(problem, w, grad, opts.gate_directions,
                                       opts.gate_eps, opts.gate_rtol, rng)

    step0 = opts.step0 if opts.step0 is not None else _default_step(weights)
    step_guess = step0
    history: list[IterateRecord] = []
    converged = False
    stagnated = False
    message = "iteration limit reached"
    last_step = 0.0
    last_halvings = 0
    residual = stationarity_residual(space, w, grad, weights)
    # relative stopping rule, floored so well-scaled problems read absolutely
    threshold = opts.tol * max(1.0, residual)

    for it in range(1, opts.max_iterations + 1):
        history.append(IterateRecord(it, J, J1, J2, last_step, residual,
                                     last_halvings))
        if residual <= threshold:
            converged = True
            message = f"stationarity residual {residual:.3e} <= {threshold:.1e}"
            break

        step = step_guess
        accepted = False
        for halvings in range(opts.max_halvings + 1):
            trial = prox_project(w, grad, step, weights)
            move = space.norm(Direction.between(trial, w))
            if move == 0.0:
                break
            (Jt, J1t, J2t), traj_t = problem.cost(trial)
            if Jt <= J - (opts.armijo / step) * move ** 2:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            stagnated = True
            message = (f"line search stagnated after {opts.max_halvings} "
                       f"halvings at iteration {it}")
            break

        grad_new = problem.gradient(trial, traj_t, mode="transpose")
        ds = Direction.between(trial, w)
        dy = Direction.between(grad_new.direction(), grad.direction())
        sy = space.inner(ds, dy)
        ss = space.inner(ds, ds)
        step_guess = min(max(ss / sy, 1e-6 * step0), 1e6 * step0) if sy > 0 \
            else step0
        w, traj, grad = trial, traj_t, grad_new
        J, J1, J2 = Jt, J1t, J2t
        last_step, last_halvings = step, halvings
        residual = stationarity_residual(space, w, grad, weights)
    else:
        history.append(IterateRecord(opts.max_iterations + 1, J, J1, J2,
                                     last_step, residual, last_halvings))
        if residual <= threshold:
            converged = True
            message = f"stationarity residual {residual:.3e} <= {threshold:.1e}"

    report = OptimizationReport(history=history, controls=w,
                                converged=converged, stagnated=stagnated,
                                message=message, residual=residual,
                                gate_errors=gate_errors)
    if weights.gamma4 > 0:
        report.lambda2 = _subgradient(w.w2, grad.kp_integral, weights.gamma4,
                                      opts.zero_tol)
        report.zero_intervals_w2 = zero_intervals(w.w2, opts.zero_tol)
    if weights.gamma5 > 0:
        report.lambda3 = _subgradient(w.w3, -grad.hr_integral, weights.gamma5,
                                      opts.zero_tol)
        report.zero_intervals_w3 = zero_intervals(w.w3, opts.zero_tol)
    return report


# ---------------------------------------------------------------------------
# optimality diagnostics
# ---------------------------------------------------------------------------

def _subgradient(vals: np.ndarray, dual: np.ndarray, gamma: float,
                 zero_tol: float) -> np.ndarray:
    return np.where(vals > zero_tol, 1.0,
                    np.where(vals < -zero_tol, -1.0,
                             np.clip(dual / gamma, -1.0, 1.0)))


def recover_subgradients(w: ControlTriple, grad: ReducedGradient,
                         weights: CostWeights, zero_tol: float = 1e-10):
    """L1-subgradient selections certifying stationarity of the dosages.

    Where a dosage is positive the selection is 1 (negative: -1); on its zero
    set the selection is the clamped dual quantity, which lies in [-1, 1] at
    stationary points.
    """
    if weights.gamma4 <= 0 or weights.gamma5 <= 0:
        raise SubgradientError(
            "subgradients are undefined without both L1 weights")
    return (_subgradient(w.w2, grad.kp_integral, weights.gamma4, zero_tol),
            _subgradient(w.w3, -grad.hr_integral, weights.gamma5, zero_tol))


def zero_intervals(values: np.ndarray, zero_tol: float = 1e-10) -> list[tuple[int, int]]:
    """Maximal runs of (inclusive) step indices where |value| <= zero_tol."""
    zero = np.abs(values) <= zero_tol
    intervals = []
    start = None
    for j, z in enumerate(zero):
        if z and start is None:
            start = j
        elif not z and start is not None:
            intervals.append((start, j - 1))
            start = None
    if start is not None:
        intervals.append((start, len(zero) - 1))
    return intervals


@dataclass
class SparsityReport:
    """Per-step comparison of the dosage zero sets with their dual conditions."""
    tau: float
    w2: np.ndarray
    kp_integral: np.ndarray
    w3: np.ndarray
    hr_integral: np.ndarray
    gamma4: float
    gamma5: float
    w2_zero: np.ndarray
    w2_condition: np.ndarray          # int k(phi) p dx <= gamma4
    w2_boundary: np.ndarray
    w3_zero: np.ndarray
    w3_condition: np.ndarray          # int h(phi) r dx >= -gamma5
    w3_boundary: np.ndarray
    zero_intervals_w2: list[tuple[int, int]]
    zero_intervals_w3: list[tuple[int, int]]

    def agreement(self, which: str) -> float:
        zero, cond, boundary = ((self.w2_zero, self.w2_condition, self.w2_boundary)
                                if which == "w2"
                                else (self.w3_zero, self.w3_condition, self.w3_boundary))
        keep = ~boundary
        if not keep.any():
            return 1.0
        return float(np.mean(zero[keep] == cond[keep]))


def sparsity_report(system: System, traj: StateTrajectory,
                    adj, w: ControlTriple, weights: CostWeights,
                    zero_tol: float = 1e-10, slack: float = 1e-8) -> SparsityReport:
    """Evaluate the zero-set characterisations of the two dosages."""
    grad = reduced_gradient(system, traj, adj, w, weights)
    kp, hr = grad.kp_integral, grad.hr_integral
    scale2 = max(1.0, weights.gamma4, float(np.abs(kp).max(initial=0.0)))
    scale3 = max(1.0, weights.gamma5, float(np.abs(hr).max(initial=0.0)))
    return SparsityReport(
        tau=traj.tau,
        w2=w.w2.copy(), kp_integral=kp,
        w3=w.w3.copy(), hr_integral=hr,
        gamma4=weights.gamma4, gamma5=weights.gamma5,
        w2_zero=np.abs(w.w2) <= zero_tol,
        w2_condition=kp <= weights.gamma4,
        w2_boundary=np.abs(kp - weights.gamma4) <= slack * scale2,
        w3_zero=np.abs(w.w3) <= zero_tol,
        w3_condition=hr >= -weights.gamma5,
        w3_boundary=np.abs(hr + weights.gamma5) <= slack * scale3,
        zero_intervals_w2=zero_intervals(w.w2, zero_tol),
        zero_intervals_w3=zero_intervals(w.w3, zero_tol),
    )


def projection_formula_check(system: System, traj: StateTrajectory, adj,
                             w: ControlTriple, weights: CostWeights,
                             zero_tol: float = 1e-10) -> dict[str, float]:
    """Pointwise deviation of the controls from their projection formulas.

    At a stationary point each deviation is bounded by the stationarity
    residual divided by the corresponding quadratic weight.
    """
    grad = reduced_gradient(system, traj, adj, w, weights)
    b = w.bounds
    out: dict[str, float] = {}
    if weights.gamma1 > 0:
        # g1 = gamma1 w1 + kappa r_hat, so -kappa r_hat / gamma1 = w1 - g1/gamma1
        formula = np.clip(w.w1 - grad.g1 / weights.gamma1, b.w1_lo, b.w1_hi)
        out["w1"] = float(np.abs(w.w1 - formula).max())
    if weights.gamma2 > 0 and weights.gamma4 > 0:
        lam2 = _subgradient(w.w2, grad.kp_integral, weights.gamma4, zero_tol)
        formula = np.clip((grad.kp_integral - weights.gamma4 * lam2) / weights.gamma2,
                          b.w2_lo, b.w2_hi)
        out["w2"] = float(np.abs(w.w2 - formula).max())
    if weights.gamma3 > 0 and weights.gamma5 > 0:
        lam3 = _subgradient(w.w3, -grad.hr_integral, weights.gamma5, zero_tol)
        formula = np.clip(-(weights.gamma5 * lam3 + grad.hr_integral) / weights.gamma3,
                          b.w3_lo, b.w3_hi)
        out["w3"] = float(np.abs(w.w3 - formula).max())
    if not out:
        raise PreconditionError(
            "projection formulas need positive quadratic weights")
    out["max"] = max(v for k, v in out.items())
    return out
