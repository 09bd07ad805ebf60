"""Bilinear-quad finite element assembly on the uniform grid.

Symmetric 2x2 tensors travel as Voigt triples ``[Axx, Ayy, Axy]``; the
Frobenius pairing therefore carries the weight ``VOIGT_W = (1, 1, 2)`` on the
shear slot.  All operators are assembled with the 2x2 Gauss rule, which is
exact for every product of bilinear shape functions appearing here, so mass,
stiffness, elasticity and the composition coupling are integrated exactly.

Nonlinear terms are evaluated pointwise at the Gauss points through the
interpolation operator ``P`` and paired back with ``P^T diag(w)``; keeping a
single quadrature pipeline is what makes the discrete energy law and the
transpose-mode adjoint exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .grid import Grid, GridConfigError

VOIGT_W = np.array([1.0, 1.0, 2.0])

_GP1 = 1.0 / np.sqrt(3.0)
# reference nodes and Gauss points, ordered as the cell connectivity
_REF_NODES = np.array([(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)])
_REF_GPS = np.array([(-_GP1, -_GP1), (_GP1, -_GP1), (_GP1, _GP1), (-_GP1, _GP1)])


def tensor_dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Frobenius product of symmetric tensors in Voigt form (last axis 3)."""
    return a[..., 0] * b[..., 0] + a[..., 1] * b[..., 1] + 2.0 * a[..., 2] * b[..., 2]


def tensor_norm2(a: np.ndarray) -> np.ndarray:
    return tensor_dot(a, a)


class ElasticityTensor:
    """Constant symmetric positive-definite fourth-order tensor, Voigt 3x3.

    ``voigt`` maps strain triples to stress triples.  The induced quadratic
    form ``E : C E`` must be symmetric and positive definite; ``c0`` is its
    smallest eigenvalue relative to the Frobenius norm.
    """

    def __init__(self, voigt: np.ndarray):
        voigt = np.asarray(voigt, dtype=float)
        if voigt.shape != (3, 3):
            raise GridConfigError("elasticity tensor must be a 3x3 Voigt matrix")
        form = np.diag(VOIGT_W) @ voigt
        if not np.allclose(form, form.T, rtol=0, atol=1e-12 * max(1.0, abs(form).max())):
            raise GridConfigError("elasticity tensor is not symmetric as a quadratic form")
        form = 0.5 * (form + form.T)
        eigs = scipy.linalg.eigh(form, np.diag(VOIGT_W), eigvals_only=True)
        if eigs.min() <= 0:
            raise GridConfigError(
                f"elasticity tensor is not positive definite (c0 = {eigs.min():.3e})")
        self.voigt = voigt
        self.form = form          # diag(VOIGT_W) @ voigt, symmetric
        self.c0 = float(eigs.min())

    @classmethod
    def isotropic(cls, lam: float, mu: float) -> "ElasticityTensor":
        v = np.array([[lam + 2 * mu, lam, 0.0],
                      [lam, lam + 2 * mu, 0.0],
                      [0.0, 0.0, 2 * mu]])
        return cls(v)

    def apply(self, e: np.ndarray) -> np.ndarray:
        """Stress triples from strain triples, any leading shape."""
        return e @ self.voigt.T


@dataclass(frozen=True)
class Quadrature:
    """Gauss-point evaluation operators for one grid.

    P   : (nq, nn)     nodal -> Gauss-point values
    Gs  : (2 nq, nn)   nodal -> gradient components [d/dx; d/dy] per point
    G   : (3 nq, 2 nn) displacement dofs -> strain Voigt triples per point
    w   : (nq,)        quadrature weights (sum = area)
    xy  : (nq, 2)      Gauss point coordinates
    """
    P: sp.csr_matrix
    Gs: sp.csr_matrix
    G: sp.csr_matrix
    w: np.ndarray
    xy: np.ndarray

    @property
    def nq(self) -> int:
        return self.w.size

    def integrate(self, values_at_gps: np.ndarray) -> float:
        return float(self.w @ values_at_gps)

    def pair(self, values_at_gps: np.ndarray) -> np.ndarray:
        """Weak pairing (v, zeta) for all nodal test functions zeta."""
        return self.P.T @ (self.w * values_at_gps)

    def pair_stress(self, stress_v: np.ndarray) -> np.ndarray:
        """Weak pairing (T, E(eta)) of a symmetric tensor field at the GPs.

        ``stress_v`` has shape (nq, 3); returns a vector over displacement dofs.
        """
        weighted = (stress_v * VOIGT_W) * self.w[:, None]
        return self.G.T @ weighted.ravel()

    def strain(self, u: np.ndarray) -> np.ndarray:
        """Strain Voigt triples (nq, 3) of a displacement vector (2 nn,)."""
        return (self.G @ u).reshape(-1, 3)

    def reaction_matrix(self, coeff_at_gps: np.ndarray) -> sp.csr_matrix:
        """Assemble P^T diag(w * coeff) P, the weighted zero-order form."""
        return (self.P.T @ sp.diags(self.w * coeff_at_gps) @ self.P).tocsr()


def _shape_values():
    xi, eta = _REF_GPS[:, 0][:, None], _REF_GPS[:, 1][:, None]
    xa, ea = _REF_NODES[:, 0][None, :], _REF_NODES[:, 1][None, :]
    N = 0.25 * (1 + xi * xa) * (1 + eta * ea)          # (4 gps, 4 nodes)
    dN_dxi = 0.25 * xa * (1 + eta * ea)
    dN_deta = 0.25 * ea * (1 + xi * xa)
    return N, dN_dxi, dN_deta


def quadrature(grid: Grid) -> Quadrature:
    N, dN_dxi, dN_deta = _shape_values()
    dN_dx = dN_dxi * (2.0 / grid.hx)
    dN_dy = dN_deta * (2.0 / grid.hy)

    nc = grid.n_cells
    cells = grid.cells                                  # (nc, 4)
    nq = 4 * nc
    w = np.full(nq, grid.hx * grid.hy / 4.0)

    # Gauss point coordinates
    x0 = grid.nodes[cells[:, 0]]                        # lower-left corners
    loc = 0.5 * (1.0 + _REF_GPS) * np.array([grid.hx, grid.hy])
    xy = (x0[:, None, :] + loc[None, :, :]).reshape(nq, 2)

    rows = (np.arange(nq)[:, None] * np.ones(4, dtype=int)).ravel()
    cols = np.repeat(cells, 4, axis=0).ravel()          # cell c repeated for its 4 gps
    P = sp.coo_matrix((np.tile(N, (nc, 1)).ravel(), (rows, cols)),
                      shape=(nq, grid.n_nodes)).tocsr()

    gx = np.tile(dN_dx, (nc, 1)).ravel()
    gy = np.tile(dN_dy, (nc, 1)).ravel()
    rows_gx = (2 * np.arange(nq)[:, None] * np.ones(4, dtype=int)).ravel()
    Gs = sp.coo_matrix(
        (np.concatenate([gx, gy]),
         (np.concatenate([rows_gx, rows_gx + 1]), np.concatenate([cols, cols]))),
        shape=(2 * nq, grid.n_nodes)).tocsr()

    # strain rows: [Exx; Eyy; Exy] per gp, displacement dofs interleaved (x, y)
    r_xx = (3 * np.arange(nq)[:, None] * np.ones(4, dtype=int)).ravel()
    data = np.concatenate([gx, gy, 0.5 * gy, 0.5 * gx])
    rows_g = np.concatenate([r_xx, r_xx + 1, r_xx + 2, r_xx + 2])
    cols_g = np.concatenate([2 * cols, 2 * cols + 1, 2 * cols, 2 * cols + 1])
    G = sp.coo_matrix((data, (rows_g, cols_g)),
                      shape=(3 * nq, 2 * grid.n_nodes)).tocsr()

    return Quadrature(P=P, Gs=Gs, G=G, w=w, xy=xy)


def assemble_mass(grid: Grid, quad: Quadrature | None = None) -> sp.csr_matrix:
    quad = quad or quadrature(grid)
    return (quad.P.T @ sp.diags(quad.w) @ quad.P).tocsr()


def assemble_stiffness(grid: Grid, quad: Quadrature | None = None) -> sp.csr_matrix:
    quad = quad or quadrature(grid)
    w2 = np.repeat(quad.w, 2)
    return (quad.Gs.T @ sp.diags(w2) @ quad.Gs).tocsr()


def assemble_boundary_mass(grid: Grid, portion: str = "gamma") -> sp.csr_matrix:
    """Edge mass matrix of linear traces on the whole boundary or the Neumann part."""
    if portion == "gamma":
        edges = grid.boundary_edges
        sides = grid.edge_sides
    elif portion == "neumann":
        keep = ~grid.edge_is_dirichlet
        edges = grid.boundary_edges[keep]
        sides = grid.edge_sides[keep]
    else:
        raise ValueError(f"unknown boundary portion {portion!r}")
    n = grid.n_nodes
    if edges.size == 0:
        return sp.csr_matrix((n, n))
    lengths = np.where(sides <= 1, grid.hy, grid.hx)  # sides 0,1 = left,right
    third = lengths / 3.0
    sixth = lengths / 6.0
    rows = np.concatenate([edges[:, 0], edges[:, 1], edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 0], edges[:, 1], edges[:, 1], edges[:, 0]])
    data = np.concatenate([third, third, sixth, sixth])
    return sp.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()


def dirichlet_dof_mask(grid: Grid) -> np.ndarray:
    """Boolean mask over the 2*nn displacement dofs that are pinned."""
    mask = np.zeros(2 * grid.n_nodes, dtype=bool)
    mask[2 * grid.dirichlet_nodes] = True
    mask[2 * grid.dirichlet_nodes + 1] = True
    return mask


def assemble_elasticity(grid: Grid, C: ElasticityTensor,
                        quad: Quadrature | None = None,
                        reduce: bool = True):
    """Elasticity stiffness (C E(u), E(eta)) over displacement dofs.

    Returns ``(A, free)``: with ``reduce`` the pinned rows/columns are
    eliminated symmetrically and ``A`` lives on the free dofs, otherwise the
    full (singular) operator is returned.  ``free`` is the boolean mask of
    retained dofs.
    """
    quad = quad or quadrature(grid)
    block = sp.kron(sp.diags(quad.w), C.form)
    A = (quad.G.T @ block @ quad.G).tocsr()
    free = ~dirichlet_dof_mask(grid)
    if not reduce:
        return A, free
    Ared = A[free][:, free].tocsc()
    return Ared, free


def assemble_coupling_phi_to_strain(grid: Grid, C: ElasticityTensor,
                                    misfit_voigt: np.ndarray,
                                    quad: Quadrature | None = None) -> sp.csr_matrix:
    """Rectangular operator B with (B phi)_eta = (C(phi E*), E(eta)).

    Its transpose realises the pairing (C E* : E(v), zeta) used by the
    composition equation.
    """
    quad = quad or quadrature(grid)
    stress = C.form @ np.asarray(misfit_voigt, dtype=float)   # includes Voigt weights
    col = sp.csr_matrix(stress.reshape(3, 1))
    return (quad.G.T @ sp.kron(sp.diags(quad.w), col) @ quad.P).tocsr()


def neumann_load(grid: Grid, traction: np.ndarray) -> np.ndarray:
    """Nodal load vector of a constant traction on the Neumann part."""
    mb = assemble_boundary_mass(grid, "neumann")
    s = np.asarray(mb.sum(axis=1)).ravel()
    load = np.zeros(2 * grid.n_nodes)
    load[0::2] = traction[0] * s
    load[1::2] = traction[1] * s
    return load
