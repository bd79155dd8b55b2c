"""
Operators between boundary controls and boundary traces.

``p0_project`` is the L2 projection of a boundary function onto piecewise
constants: one mean value per boundary edge.  Restricted to continuous
piecewise-linear traces on the same boundary partition the projection is a
square map, and it is invertible exactly when the number of boundary edges
is odd; ``p1_tilde`` is that inverse, realized by a cyclic two-band solve.

``p1_tilde_operator_norm`` measures the lift's L2(boundary) -> L2(boundary)
operator norm through the generalized eigenproblem of the lifted trace
Gram matrix against the piecewise-constant Gram matrix (edge lengths).
``clamp_box`` is the componentwise interval projection; because the
piecewise-constant Gram matrix is diagonal, clamping coefficients is the
exact L2 projection onto the admissible box.
"""

import numpy as np

from .assembly import assemble_boundary_mass, assemble_p0_matrix
from .fespace import BoundaryControl, BoundaryTrace, quadrature_edge
from .linalg import SingularMatrixError, cyclic_bidiagonal_solve, dense_eig_max


class BoxBounds:
    """Admissible interval [u_a, u_b] for the control values."""

    def __init__(self, u_a, u_b):
        self.u_a = float(u_a)
        self.u_b = float(u_b)
        if not self.u_a < self.u_b:
            raise ValueError("box bounds need u_a < u_b, got [%g, %g]"
                             % (self.u_a, self.u_b))

    def __repr__(self):
        return "BoxBounds(%g, %g)" % (self.u_a, self.u_b)


def clamp_box(w, bounds):
    """
    Componentwise projection onto [u_a, u_b].

    Accepts a plain array, a BoundaryControl or a BoundaryTrace and returns
    the same kind of object.
    """
    if isinstance(w, BoundaryControl):
        return BoundaryControl(w.mesh, np.clip(w.coefficients,
                                               bounds.u_a, bounds.u_b))
    if isinstance(w, BoundaryTrace):
        return BoundaryTrace(w.mesh, np.clip(w.coefficients,
                                             bounds.u_a, bounds.u_b))
    return np.clip(np.asarray(w, dtype=float), bounds.u_a, bounds.u_b)


def p0_project(mesh, g, param="xy"):
    """
    L2 projection onto piecewise-constant boundary functions.

    Parameters
    ----------
    mesh : Mesh
    g : BoundaryTrace or callable
        For a trace the projection is exact (mean of a linear = average of
        its endpoint values).  A callable is integrated per edge with the
        3-point Gauss rule; it receives points of shape (n, 2) when
        ``param == "xy"`` or arclength values of shape (n,) when
        ``param == "arclength"``.
    """
    if isinstance(g, BoundaryTrace):
        b = assemble_p0_matrix(mesh)
        return BoundaryControl(mesh, b.matvec(g.coefficients))
    t, w = quadrature_edge(4)
    verts = mesh.boundary_cycle_vertices
    a = mesh.vertices[verts]
    bpt = mesh.vertices[np.roll(verts, -1)]
    if param == "xy":
        pts = a[:, None, :] + t[None, :, None] * (bpt - a)[:, None, :]
        vals = np.asarray(g(pts.reshape(-1, 2)), dtype=float)
    elif param == "arclength":
        breaks = mesh.boundary_arclength_breaks()
        lengths = mesh.boundary_edge_lengths()
        s = breaks[:-1, None] + t[None, :] * lengths[:, None]
        vals = np.asarray(g(s.reshape(-1)), dtype=float)
    else:
        raise ValueError("param must be 'xy' or 'arclength'")
    vals = vals.reshape(mesh.n_boundary_edges, len(t))
    return BoundaryControl(mesh, vals @ w)


def p1_tilde(mesh, u):
    """
    The unique continuous piecewise-linear trace whose edge means reproduce
    the given piecewise-constant control.

    Raises
    ------
    SingularMatrixError
        When the boundary has an even number of edges; apply
        ``ensure_odd_boundary`` to the mesh first.
    """
    if mesh.n_boundary_edges % 2 == 0:
        raise SingularMatrixError(
            "the projection onto piecewise constants is singular for an "
            "even boundary edge count (%d); apply ensure_odd_boundary to "
            "the mesh" % mesh.n_boundary_edges)
    b = assemble_p0_matrix(mesh)
    z = cyclic_bidiagonal_solve(b.diag, b.offdiag, u.coefficients)
    return BoundaryTrace(mesh, z)


def p1_tilde_operator_norm(mesh):
    """
    L2(boundary) -> L2(boundary) operator norm of the trace lift.

    Computed as the square root of the largest generalized eigenvalue of
    B^-T M B^-1 against the diagonal metric of edge lengths, where B is the
    projection matrix and M the trace mass matrix; the eigenvalue is found
    by power iteration on the explicitly formed (small) dense matrix.
    """
    if mesh.n_boundary_edges % 2 == 0:
        raise SingularMatrixError(
            "operator norm undefined: even boundary edge count %d"
            % mesh.n_boundary_edges)
    b = assemble_p0_matrix(mesh).to_dense()
    m_gamma = assemble_boundary_mass(mesh)
    b_inv = np.linalg.inv(b)
    k = b_inv.T @ m_gamma @ b_inv
    d_isqrt = 1.0 / np.sqrt(mesh.boundary_edge_lengths())
    c = d_isqrt[:, None] * k * d_isqrt[None, :]
    c = 0.5 * (c + c.T)
    return float(np.sqrt(dense_eig_max(c)))
