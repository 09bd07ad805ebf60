"""Cost functional: tracking + stress load + control regularisation.

Time integrals use the right-endpoint rectangle rule matching the implicit
stepping, so the objective is an exact function of the discrete trajectory
and the adjoint gradient is exact as well.  The smooth part J1 carries the
quadratic terms, J2 the L1 dosage terms.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import constitutive as con
from .fem import tensor_dot, tensor_norm2
from .state import ControlTriple, StateTrajectory, System


class CostConfigError(ValueError):
    pass


@dataclass
class CostWeights:
    """Weights and targets of the objective.

    ``phi_Q`` may be a single field (held fixed in time) or one row per
    snapshot, shape (n_steps + 1, n_nodes).
    """
    alpha_Q: float = 0.0
    alpha_Omega: float = 1.0
    alpha_E: float = 0.0
    gamma1: float = 0.1
    gamma2: float = 0.1
    gamma3: float = 0.1
    gamma4: float = 0.0
    gamma5: float = 0.0
    phi_Q: np.ndarray = field(default_factory=lambda: np.zeros(1))
    phi_Omega: np.ndarray = field(default_factory=lambda: np.zeros(1))
    weight_n: str = "ramp"

    def __post_init__(self):
        vals = [self.alpha_Q, self.alpha_Omega, self.alpha_E,
                self.gamma1, self.gamma2, self.gamma3, self.gamma4, self.gamma5]
        if any(v < 0 for v in vals):
            raise CostConfigError("cost weights must be non-negative (A7)")
        if all(v == 0 for v in vals):
            raise CostConfigError("cost weights must not all vanish (A7)")
        if self.gamma4 > 0 and self.gamma2 <= 0:
            raise CostConfigError(
                "gamma2 must be positive when gamma4 is positive (A7)")
        if self.gamma5 > 0 and self.gamma3 <= 0:
            raise CostConfigError(
                "gamma3 must be positive when gamma5 is positive (A7)")
        self.phi_Q = np.asarray(self.phi_Q, dtype=float)
        self.phi_Omega = np.asarray(self.phi_Omega, dtype=float)

    def target_Q(self, n: int) -> np.ndarray:
        if self.phi_Q.ndim == 2:
            return self.phi_Q[n]
        return self.phi_Q

    def validate_shapes(self, n_nodes: int, n_steps: int) -> None:
        if self.phi_Q.ndim == 2:
            if self.phi_Q.shape != (n_steps + 1, n_nodes):
                raise CostConfigError(
                    f"space-time target has shape {self.phi_Q.shape}, "
                    f"expected {(n_steps + 1, n_nodes)}")
        elif self.phi_Q.size not in (1, n_nodes):
            raise CostConfigError(
                f"target field has {self.phi_Q.size} entries, expected {n_nodes}")
        if self.phi_Omega.size not in (1, n_nodes):
            raise CostConfigError(
                f"final-time target has {self.phi_Omega.size} entries, "
                f"expected {n_nodes}")


def stress_load_density(system: System, weights: CostWeights,
                        phi: np.ndarray, u: np.ndarray) -> np.ndarray:
    """n(x, phi) |W_E|^2 at the Gauss points."""
    quad = system.quad
    phi_gp = quad.P @ phi
    w_e = con.stress(system.params, phi_gp, quad.strain(u))
    return system.nl.n_of(quad.xy, phi_gp) * tensor_norm2(w_e)


def eval_cost(system: System, traj: StateTrajectory, w: ControlTriple,
              weights: CostWeights) -> tuple[float, float, float]:
    """Return (J, J1, J2) for a trajectory produced by ``w``."""
    weights.validate_shapes(system.grid.n_nodes, traj.n_steps)
    tau = traj.tau
    N = traj.n_steps
    M = system.M
    J1 = 0.0
    if weights.alpha_Omega > 0:
        d = traj.snapshot(N).phi - weights.phi_Omega
        J1 += 0.5 * weights.alpha_Omega * float(d @ (M @ d))
    if weights.alpha_Q > 0 or weights.alpha_E > 0:
        for n in range(1, N + 1):
            snap = traj.snapshot(n)
            if weights.alpha_Q > 0:
                d = snap.phi - weights.target_Q(n)
                J1 += 0.5 * weights.alpha_Q * tau * float(d @ (M @ d))
            if weights.alpha_E > 0:
                J1 += 0.5 * weights.alpha_E * tau * system.quad.integrate(
                    stress_load_density(system, weights, snap.phi, snap.u))
    dg = system.dgamma
    J1 += 0.5 * weights.gamma1 * tau * float(np.einsum("bj,bj,b->", w.w1, w.w1, dg))
    J1 += 0.5 * weights.gamma2 * tau * float(w.w2 @ w.w2)
    J1 += 0.5 * weights.gamma3 * tau * float(w.w3 @ w.w3)
    J2 = (weights.gamma4 * tau * float(np.abs(w.w2).sum())
          + weights.gamma5 * tau * float(np.abs(w.w3).sum()))
    return J1 + J2, J1, J2


def tracking_source(system: System, weights: CostWeights, snap,
                    n: int) -> np.ndarray:
    """Nodal pairing of the phi-derivative of the running cost density.

    alpha_Q (phi - phi_Q) plus the stress-load terms
    (alpha_E/2) n'(x, phi)|W_E|^2 - alpha_E n(x, phi) W_E : C E*.
    """
    quad = system.quad
    out = np.zeros(system.grid.n_nodes)
    if weights.alpha_Q > 0:
        out += weights.alpha_Q * (system.M @ (snap.phi - weights.target_Q(n)))
    if weights.alpha_E > 0:
        p = system.params
        phi_gp = quad.P @ snap.phi
        w_e = con.stress(p, phi_gp, quad.strain(snap.u))
        n_gp = system.nl.n_of(quad.xy, phi_gp)
        np_gp = system.nl.n_prime(quad.xy, phi_gp)
        dens = (0.5 * np_gp * tensor_norm2(w_e)
                - n_gp * tensor_dot(w_e, p.C.apply(p.misfit_strain)))
        out += weights.alpha_E * quad.pair(dens)
    return out


def stress_weight_tensor(system: System, weights: CostWeights, snap) -> np.ndarray:
    """alpha_E n(x, phi) C W_E at the Gauss points (Voigt), the displacement
    source of the running cost; zero array when alpha_E vanishes."""
    quad = system.quad
    if weights.alpha_E == 0:
        return np.zeros((quad.nq, 3))
    p = system.params
    phi_gp = quad.P @ snap.phi
    w_e = con.stress(p, phi_gp, quad.strain(snap.u))
    n_gp = system.nl.n_of(quad.xy, phi_gp)
    return weights.alpha_E * n_gp[:, None] * p.C.apply(w_e)


def directional_cost_derivative(system: System, traj: StateTrajectory,
                                w: ControlTriple, weights: CostWeights,
                                lin_snaps, direction) -> float:
    """Chain-rule derivative of J1 through a linearised trajectory.

    Independent of the adjoint path; used to cross-check the reduced
    gradient via the duality identity.
    """
    tau = traj.tau
    N = traj.n_steps
    quad = system.quad
    p = system.params
    total = 0.0
    if weights.alpha_Omega > 0:
        d = traj.snapshot(N).phi - weights.phi_Omega
        total += weights.alpha_Omega * float(d @ (system.M @ lin_snaps[N].xi))
    for n in range(1, N + 1):
        snap = traj.snapshot(n)
        lin = lin_snaps[n]
        if weights.alpha_Q > 0:
            d = snap.phi - weights.target_Q(n)
            total += weights.alpha_Q * tau * float(d @ (system.M @ lin.xi))
        if weights.alpha_E > 0:
            phi_gp = quad.P @ snap.phi
            xi_gp = quad.P @ lin.xi
            w_e = con.stress(p, phi_gp, quad.strain(snap.u))
            n_gp = system.nl.n_of(quad.xy, phi_gp)
            np_gp = system.nl.n_prime(quad.xy, phi_gp)
            dstress = p.C.apply(quad.strain(lin.v)
                                - xi_gp[:, None] * p.misfit_strain)
            dens = (0.5 * np_gp * xi_gp * tensor_norm2(w_e)
                    + n_gp * tensor_dot(w_e, dstress))
            total += weights.alpha_E * tau * quad.integrate(dens)
    dg = system.dgamma
    total += weights.gamma1 * tau * float(np.einsum("bj,bj,b->", w.w1, direction.h1, dg))
    total += weights.gamma2 * tau * float(w.w2 @ direction.h2)
    total += weights.gamma3 * tau * float(w.w3 @ direction.h3)
    return total
