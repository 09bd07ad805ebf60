"""Adjoint sweep and reduced gradient.

Two modes:

* ``transpose`` applies the exact transposes of the per-step linearised
  solves, so the reduced gradient matches finite differences of the smooth
  cost part to solver precision.  This is the mode the optimizer uses.
* ``continuous`` discretizes the adjoint PDE system directly with backward
  implicit Euler, evaluating every coefficient at the snapshot it is
  associated with.  It certifies that the transpose sweep is a consistent
  discretization of the continuous optimality system: the two gradients
  converge to each other under grid/timestep refinement.

Snapshot ``adj[j]`` for ``j < n_steps`` carries the multiplier of step
``j+1`` (continuous-time scale, associated with time ``t_j``); ``adj[N]``
holds the terminal data ``p(T) = alpha_Omega (phi(T) - phi_Omega)``,
``r(T) = 0`` for a dynamic nutrient.  The stored ``s`` of level ``j`` is the
displacement multiplier entering that level's solve.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import splu

from . import constitutive as con
from .cost import CostWeights, stress_weight_tensor, tracking_source
from .fem import tensor_dot
from .state import (ControlTriple, Direction, PreconditionError, SolverError,
                    StateTrajectory, System)

ADJOINT_MODES = ("transpose", "continuous")


@dataclass
class AdjointSnapshot:
    p: np.ndarray       # composition multiplier
    q: np.ndarray       # potential multiplier
    r: np.ndarray       # nutrient multiplier
    s: np.ndarray       # displacement multiplier (2 nn,)
    t: float


@dataclass
class ReducedGradient:
    """L2-representation of the smooth cost derivative plus the dosage
    sensitivities entering the sparsity conditions."""
    g1: np.ndarray          # (nb, N)
    g2: np.ndarray          # (N,)
    g3: np.ndarray          # (N,)
    kp_integral: np.ndarray  # (N,)  int k(phi) p dx per step
    hr_integral: np.ndarray  # (N,)  int h(phi) r dx per step

    def direction(self) -> Direction:
        return Direction(self.g1, self.g2, self.g3)


def _du_dphi(system: System, phi_gp, sig_gp, stress_gp, w2):
    """d/dphi of the growth source at lagged arguments."""
    p, nl = system.params, system.nl
    g_gp = nl.g_of(stress_gp)
    gp_grad = nl.g_grad(stress_gp)
    mis_stress = p.C.apply(p.misfit_strain)
    return (p.lambda_p * sig_gp * (nl.f_prime(phi_gp) * g_gp
                                   - nl.f(phi_gp) * tensor_dot(gp_grad, mis_stress))
            - (p.lambda_a + w2) * nl.k_prime(phi_gp))


def _terminal_snapshot(system: System, traj: StateTrajectory, w: ControlTriple,
                       weights: CostWeights) -> AdjointSnapshot:
    N = traj.n_steps
    tau = traj.tau
    snap = traj.snapshot(N)
    p_T = weights.alpha_Omega * (snap.phi - weights.phi_Omega)
    if np.ndim(p_T) == 0 or p_T.size == 1:
        p_T = np.full(system.grid.n_nodes, float(np.asarray(p_T).ravel()[0]))
    q_T = system._mass_lu.solve(system.K @ p_T)
    quad = system.quad
    params, nl = system.params, system.nl
    phi_gp = quad.P @ snap.phi
    stress_gp = con.stress(params, phi_gp, quad.strain(snap.u))
    if params.beta > 0:
        r_T = np.zeros(system.grid.n_nodes)
    else:
        A = system.nutrient_operator(snap.phi, tau)
        rhs = (quad.pair(params.lambda_p * nl.f(phi_gp) * nl.g_of(stress_gp)
                         * (quad.P @ p_T))
               + params.chi * (system.M @ q_T))
        r_T = splu(A.tocsc()).solve(rhs)
    s_src = (system.Bc @ q_T
             + quad.pair_stress(params.lambda_p * (quad.P @ snap.sigma)[:, None]
                                * nl.f(phi_gp)[:, None] * (quad.P @ p_T)[:, None]
                                * params.C.apply(nl.g_grad(stress_gp)))
             + quad.pair_stress(stress_weight_tensor(system, weights, snap)))
    s_T = system.solve_elastic_free(s_src)
    return AdjointSnapshot(p=p_T, q=q_T, r=r_T, s=s_T, t=N * tau)


def solve_adjoint(system: System, traj: StateTrajectory, w: ControlTriple,
                  weights: CostWeights, mode: str = "transpose") -> list[AdjointSnapshot]:
    """Backward sweep producing multipliers adj[0..N]; see module docstring."""
    if mode not in ADJOINT_MODES:
        raise PreconditionError(f"unknown adjoint mode {mode!r}")
    N = traj.n_steps
    if w.n_steps != N:
        raise PreconditionError("control layout does not match the trajectory")
    weights.validate_shapes(system.grid.n_nodes, N)
    if len(traj) != N + 1:
        raise SolverError("trajectory is incomplete")
    tau = traj.tau
    quad = system.quad
    p_, nl, M, K = system.params, system.nl, system.M, system.K
    cE = system.misfit_curvature
    nn = system.grid.n_nodes

    out: list[AdjointSnapshot | None] = [None] * (N + 1)
    out[N] = _terminal_snapshot(system, traj, w, weights)

    for j in range(N - 1, -1, -1):
        nxt = out[j + 1]
        if mode == "transpose":
            state_lvl = traj.snapshot(j + 1)           # data of multiplier level j+1
            phi_gp = quad.P @ state_lvl.phi
            strain_gp = quad.strain(state_lvl.u)
            stress_gp = con.stress(p_, phi_gp, strain_gp)
            terminal = j + 1 == N

            # displacement multiplier of this level
            s_src = quad.pair_stress(stress_weight_tensor(system, weights, state_lvl))
            if not terminal:
                sig_next_gp = quad.P @ traj.snapshot(j + 2).sigma
                s_src = s_src + system.Bc @ nxt.q + quad.pair_stress(
                    p_.lambda_p * sig_next_gp[:, None] * nl.f(phi_gp)[:, None]
                    * (quad.P @ nxt.p)[:, None] * p_.C.apply(nl.g_grad(stress_gp)))
            s = system.solve_elastic_free(s_src)

            # composition/potential multipliers
            rhs1 = (tracking_source(system, weights, state_lvl, j + 1)
                    + system.Bc.T @ s)
            if terminal:
                rhs1 = rhs1 + (weights.alpha_Omega / tau) * (
                    M @ (state_lvl.phi - weights.phi_Omega))
            else:
                q_next_gp = quad.P @ nxt.q
                du_dphi = _du_dphi(system, phi_gp, sig_next_gp, stress_gp,
                                   float(w.w2[j + 1]))
                rhs1 = (rhs1 + (M @ nxt.p) / tau
                        - quad.pair(nl.psi2_second(phi_gp) * q_next_gp)
                        - cE * (M @ nxt.q)
                        + quad.pair(du_dphi * (quad.P @ nxt.p))
                        - quad.pair(nl.h_prime(phi_gp)
                                    * (p_.lambda_c * sig_next_gp - w.w3[j + 1])
                                    * (quad.P @ nxt.r)))
            J = system.ch_jacobian(state_lvl.phi, tau)
            sol = splu(J.T.tocsc()).solve(np.concatenate([rhs1, np.zeros(nn)]))
            # the adjoint block is the Jacobian transpose conjugated by
            # diag(I, -I): solve J^T (x, y) = (rhs1, 0), then (p, q) = (x, -y)
            p_lvl, q_lvl = sol[:nn], -sol[nn:]

            # nutrient multiplier; coefficients are the lagged ones of step j+1
            lag = traj.snapshot(j)
            lag_phi_gp = quad.P @ lag.phi
            lag_stress = con.stress(p_, lag_phi_gp, quad.strain(lag.u))
            rhs_r = (quad.pair(p_.lambda_p * nl.f(lag_phi_gp) * nl.g_of(lag_stress)
                               * (quad.P @ p_lvl))
                     + p_.chi * (M @ q_lvl))
            if p_.beta > 0 and not terminal:
                rhs_r = rhs_r + (p_.beta / tau) * (M @ nxt.r)
            A = system.nutrient_operator(lag.phi, tau)
            r_lvl = splu(A.tocsc()).solve(rhs_r)
        else:
            state_j = traj.snapshot(j)
            phi_gp = quad.P @ state_j.phi
            strain_gp = quad.strain(state_j.u)
            stress_gp = con.stress(p_, phi_gp, strain_gp)
            sig_gp = quad.P @ state_j.sigma

            rhs1 = (tracking_source(system, weights, state_j, j)
                    + system.Bc.T @ nxt.s
                    + (M @ nxt.p) / tau
                    - quad.pair(nl.psi2_second(phi_gp) * (quad.P @ nxt.q))
                    - cE * (M @ nxt.q)
                    + quad.pair(_du_dphi(system, phi_gp, sig_gp, stress_gp,
                                         float(w.w2[j])) * (quad.P @ nxt.p))
                    - quad.pair(nl.h_prime(phi_gp)
                                * (p_.lambda_c * sig_gp - w.w3[j])
                                * (quad.P @ nxt.r)))
            J = system.ch_jacobian(state_j.phi, tau)
            sol = splu(J.T.tocsc()).solve(np.concatenate([rhs1, np.zeros(nn)]))
            p_lvl, q_lvl = sol[:nn], -sol[nn:]

            rhs_r = (quad.pair(p_.lambda_p * nl.f(phi_gp) * nl.g_of(stress_gp)
                               * (quad.P @ p_lvl))
                     + p_.chi * (M @ q_lvl))
            if p_.beta > 0:
                rhs_r = rhs_r + (p_.beta / tau) * (M @ nxt.r)
            A = system.nutrient_operator(state_j.phi, tau)
            r_lvl = splu(A.tocsc()).solve(rhs_r)

            s_src = (system.Bc @ q_lvl
                     + quad.pair_stress(p_.lambda_p * sig_gp[:, None]
                                        * nl.f(phi_gp)[:, None]
                                        * (quad.P @ p_lvl)[:, None]
                                        * p_.C.apply(nl.g_grad(stress_gp)))
                     + quad.pair_stress(stress_weight_tensor(system, weights, state_j)))
            s = system.solve_elastic_free(s_src)

        out[j] = AdjointSnapshot(p=p_lvl, q=q_lvl, r=r_lvl, s=s, t=j * tau)
    return out  # type: ignore[return-value]


def reduced_gradient(system: System, traj: StateTrajectory,
                     adj: list[AdjointSnapshot], w: ControlTriple,
                     weights: CostWeights) -> ReducedGradient:
    """Gradient of the smooth cost part in the discrete control metric."""
    N = traj.n_steps
    quad = system.quad
    nl = system.nl
    g1 = np.empty_like(w.w1)
    kp = np.empty(N)
    hr = np.empty(N)
    for j in range(N):
        snap = traj.snapshot(j)
        phi_gp = quad.P @ snap.phi
        g1[:, j] = (weights.gamma1 * w.w1[:, j]
                    + system.params.kappa * system.boundary_trace_avg(adj[j].r))
        kp[j] = quad.integrate(nl.k(phi_gp) * (quad.P @ adj[j].p))
        hr[j] = quad.integrate(nl.h(phi_gp) * (quad.P @ adj[j].r))
    g2 = weights.gamma2 * w.w2 - kp
    g3 = weights.gamma3 * w.w3 + hr
    return ReducedGradient(g1=g1, g2=g2, g3=g3, kp_integral=kp, hr_integral=hr)
