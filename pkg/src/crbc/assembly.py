"""
Assembly of the discrete forms.

Domain forms use the CR edge basis ``phi_i = 1 - 2 lambda_i``: the local
stiffness matrix is ``4 |T| G`` with ``G`` the Gram matrix of barycentric
gradients, and the local mass matrix is ``|T|/3`` times the identity (the
CR basis is L2-orthogonal on each triangle), so the global mass matrix is
diagonal.

Boundary forms live on the boundary cycle: the trace mass matrix couples
neighbouring boundary vertices through the hat-function products, and the
projection matrix onto piecewise constants has exactly two entries of 1/2
per row (each boundary edge sees its two endpoint hats with mean 1/2),
which gives it a cyclic two-band structure that is invertible precisely
when the number of boundary edges is odd.
"""

import numpy as np

from .fespace import barycentric_gradients, quadrature_triangle, triangle_points
from .linalg import CyclicBidiagonal, SparseMatrix


class AssemblyError(Exception):
    """Raised when assembly preconditions are violated."""


LOAD_QUADRATURE_ORDER = 4


def assemble_stiffness(mesh):
    """
    Broken stiffness matrix of the CR edge basis, shape (ne, ne).

    Raises
    ------
    AssemblyError
        If some triangle is degenerate (area <= 1e-14 h^2).
    """
    if np.any(mesh.areas <= 1e-14 * mesh.h ** 2):
        worst = int(np.argmin(mesh.areas))
        raise AssemblyError("degenerate triangle %d with area %.3g"
                            % (worst, mesh.areas[worst]))
    grads = barycentric_gradients(mesh)                 # (nt, 3, 2)
    gram = np.einsum("tix,tjx->tij", grads, grads)
    local = 4.0 * mesh.areas[:, None, None] * gram      # (nt, 3, 3)
    rows = np.repeat(mesh.tri_edges, 3, axis=1).ravel()
    cols = np.tile(mesh.tri_edges, (1, 3)).ravel()
    return SparseMatrix.from_coo(rows, cols, local.ravel(),
                                 (mesh.n_edges, mesh.n_edges))


def assemble_mass(mesh):
    """CR mass matrix; diagonal with entry sum(|T|/3) over incident triangles."""
    diag = mass_diagonal(mesh)
    idx = np.arange(mesh.n_edges)
    return SparseMatrix.from_coo(idx, idx, diag, (mesh.n_edges, mesh.n_edges))


def mass_diagonal(mesh):
    """Diagonal of the CR mass matrix as a plain vector."""
    diag = np.zeros(mesh.n_edges)
    np.add.at(diag, mesh.tri_edges.ravel(), np.repeat(mesh.areas / 3.0, 3))
    return diag


def assemble_load(mesh, f, order=LOAD_QUADRATURE_ORDER):
    """
    Load vector of a data function against the CR basis.

    Parameters
    ----------
    f : callable
        Vectorized map from points (n, 2) to values (n,).
    order : int
        Triangle quadrature order; the default is exact for cubic data.
    """
    bary, w = quadrature_triangle(order)
    pts = triangle_points(mesh, bary)
    fv = np.asarray(f(pts.reshape(-1, 2)), dtype=float)
    fv = fv.reshape(mesh.n_triangles, len(w))
    basis = 1.0 - 2.0 * bary                             # (nq, 3)
    contrib = np.einsum("q,tq,qi->ti", w, fv, basis) * mesh.areas[:, None]
    load = np.zeros(mesh.n_edges)
    np.add.at(load, mesh.tri_edges.ravel(), contrib.ravel())
    return load


def assemble_boundary_mass(mesh):
    """
    Mass matrix of the boundary-vertex hat functions on the boundary,
    indexed by boundary-cycle position.  On an edge of length L the local
    block is L/6 [[2, 1], [1, 2]].
    """
    n = mesh.n_boundary_edges
    lengths = mesh.boundary_edge_lengths()
    m = np.zeros((n, n))
    idx = np.arange(n)
    nxt = (idx + 1) % n
    np.add.at(m, (idx, idx), lengths / 3.0)
    np.add.at(m, (nxt, nxt), lengths / 3.0)
    np.add.at(m, (idx, nxt), lengths / 6.0)
    np.add.at(m, (nxt, idx), lengths / 6.0)
    return m


def assemble_p0_matrix(mesh):
    """
    Matrix of the mean-value projection from boundary traces onto
    piecewise-constant boundary functions, in cycle ordering.

    Row k (edge k, connecting cycle vertices k and k+1) holds 1/2 in
    columns k and k+1: the mean of a hat function over an incident straight
    edge is exactly 1/2.
    """
    n = mesh.n_boundary_edges
    return CyclicBidiagonal(np.full(n, 0.5), np.full(n, 0.5))


def boundary_length_weights(mesh):
    """Diagonal of the piecewise-constant boundary Gram matrix (edge lengths)."""
    return mesh.boundary_edge_lengths()


def assemble_cr_vertex_mass(mesh):
    """
    Cross mass matrix between the CR edge basis and the vertex hat basis,
    shape (ne, nv).  On a triangle, int phi_i lambda_j is |T|/6 for i != j
    and 0 for i = j, so only the two endpoint vertices of each edge couple.
    """
    rows, cols, vals = [], [], []
    for i in range(3):
        e = mesh.tri_edges[:, i]
        for j in range(3):
            if j == i:
                continue
            rows.append(e)
            cols.append(mesh.triangles[:, j])
            vals.append(mesh.areas / 6.0)
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    return SparseMatrix.from_coo(rows, cols, vals,
                                 (mesh.n_edges, mesh.n_vertices))


def vertex_to_cr_map(mesh):
    """
    Sparse map expanding vertex coefficients into CR edge means: a
    continuous piecewise linear has edge mean equal to the average of its
    endpoint values, so the matrix has 1/2 at both endpoints of each edge.
    """
    ne = mesh.n_edges
    rows = np.repeat(np.arange(ne), 2)
    cols = mesh.edges.ravel()
    vals = np.full(2 * ne, 0.5)
    return SparseMatrix.from_coo(rows, cols, vals, (ne, mesh.n_vertices))


class AssembledForms:
    """
    All matrices one discrete problem needs, assembled once per mesh.

    Attributes
    ----------
    stiffness : SparseMatrix, (ne, ne)
        Broken stiffness of the CR basis.
    stiffness_interior : SparseMatrix
        Restriction to interior-edge rows and columns.
    interior_edges : array
        Interior edge indices defining that restriction.
    mass_diag : array, (ne,)
        Diagonal CR mass matrix.
    boundary_mass : array, (N, N)
        Trace mass matrix on the boundary, cycle-vertex indexed.
    p0_matrix : CyclicBidiagonal
        Projection matrix onto piecewise-constant boundary functions.
    control_metric : array, (N,)
        Boundary edge lengths (diagonal Gram of the piecewise constants).
    cr_vertex_mass : SparseMatrix, (ne, nv)
        Cross mass between CR basis and vertex hats.
    vertex_to_cr : SparseMatrix, (ne, nv)
        Coefficient map from continuous piecewise linears into CR means.
    """

    def __init__(self, mesh):
        self.mesh = mesh
        self.stiffness = assemble_stiffness(mesh)
        self.interior_edges = mesh.interior_edges
        self.stiffness_interior = self.stiffness.submatrix(
            self.interior_edges, self.interior_edges)
        self.mass_diag = mass_diagonal(mesh)
        self.boundary_mass = assemble_boundary_mass(mesh)
        self.p0_matrix = assemble_p0_matrix(mesh)
        self.control_metric = boundary_length_weights(mesh)
        self.cr_vertex_mass = assemble_cr_vertex_mass(mesh)
        self.vertex_to_cr = vertex_to_cr_map(mesh)
