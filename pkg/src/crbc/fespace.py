"""
Finite element spaces on a triangulation and the operators between them.

Five kinds of discrete functions appear:

* ``CrFunction`` -- nonconforming piecewise linears with one degree of
  freedom per edge.  The coefficient attached to an edge is the *mean* of
  the function over that edge (for piecewise linears this equals the
  midpoint value); continuity holds only in these means.
* ``W1Function`` -- continuous piecewise linears with vertex values.
* ``BoundaryControl`` -- piecewise constants on the boundary, one value per
  boundary edge, ordered by the boundary cycle.
* ``BoundaryTrace`` -- continuous piecewise linears on the boundary, one
  value per boundary vertex, ordered by the boundary cycle.
* ``EnrichedFunction`` -- continuous piecewise quadratics determined by
  vertex values together with edge means.

The enrichment operator maps an interior-edge CR function into the
quadratic space by averaging its vertex limits and copying its edge means;
the resulting function is continuous, vanishes at boundary vertices, and
does not change any edge mean.  That mean preservation makes the broken
gradient form of any piecewise linear against ``v - enrich(v)`` vanish
identically, which the test-suite checks at scale.
"""

import numpy as np

from .mesh import Mesh


# ----------------------------------------------------------------------
# quadrature
# ----------------------------------------------------------------------

def _tri_rule_order2():
    # edge-midpoint rule, exact for quadratics
    bary = np.array([[0.5, 0.5, 0.0],
                     [0.0, 0.5, 0.5],
                     [0.5, 0.0, 0.5]])
    w = np.full(3, 1.0 / 3.0)
    return bary, w


def _tri_rule_order4():
    # 6-point symmetric rule, exact for quartics
    a1, w1 = 0.816847572980459, 0.109951743655322
    b1 = (1.0 - a1) / 2.0
    a2, w2 = 0.108103018168070, 0.223381589678011
    b2 = (1.0 - a2) / 2.0
    bary = np.array([
        [a1, b1, b1], [b1, a1, b1], [b1, b1, a1],
        [a2, b2, b2], [b2, a2, b2], [b2, b2, a2],
    ])
    w = np.array([w1, w1, w1, w2, w2, w2])
    return bary, w


def _tri_rule_order6():
    # 12-point symmetric rule, exact for sextics
    a1, w1 = 0.873821971016996, 0.050844906370207
    b1 = (1.0 - a1) / 2.0
    a2, w2 = 0.501426509658179, 0.116786275726379
    b2 = (1.0 - a2) / 2.0
    a3, b3, w3 = 0.636502499121399, 0.310352451033785, 0.082851075618374
    c3 = 1.0 - a3 - b3
    bary = np.array([
        [a1, b1, b1], [b1, a1, b1], [b1, b1, a1],
        [a2, b2, b2], [b2, a2, b2], [b2, b2, a2],
        [a3, b3, c3], [a3, c3, b3], [b3, a3, c3],
        [b3, c3, a3], [c3, a3, b3], [c3, b3, a3],
    ])
    w = np.array([w1] * 3 + [w2] * 3 + [w3] * 6)
    return bary, w


_TRI_RULES = {2: _tri_rule_order2(), 4: _tri_rule_order4(), 6: _tri_rule_order6()}


def _edge_rule(npts):
    x, w = np.polynomial.legendre.leggauss(npts)
    return (x + 1.0) / 2.0, w / 2.0


_EDGE_RULES = {2: _edge_rule(2), 4: _edge_rule(3), 6: _edge_rule(4)}


def quadrature_triangle(order):
    """
    Symmetric Gauss rule on the triangle, exact at least to the requested
    polynomial order.

    Parameters
    ----------
    order : {2, 4, 6}

    Returns
    -------
    bary : array, shape (nq, 3)
        Barycentric coordinates of the nodes.
    weights : array, shape (nq,)
        Weights summing to 1; multiply by the triangle area to integrate.
    """
    try:
        bary, w = _TRI_RULES[order]
    except KeyError:
        raise ValueError("unsupported triangle quadrature order %r "
                         "(choose 2, 4 or 6)" % (order,)) from None
    return bary.copy(), w.copy()


def quadrature_edge(order):
    """
    Gauss-Legendre rule on the unit interval, exact at least to the
    requested polynomial order.

    Returns
    -------
    t : array
        Nodes in [0, 1].
    weights : array
        Weights summing to 1; multiply by the edge length to integrate.
    """
    try:
        t, w = _EDGE_RULES[order]
    except KeyError:
        raise ValueError("unsupported edge quadrature order %r "
                         "(choose 2, 4 or 6)" % (order,)) from None
    return t.copy(), w.copy()


def triangle_points(mesh, bary):
    """Physical coordinates (nt, nq, 2) of barycentric nodes on every triangle."""
    corners = mesh.vertices[mesh.triangles]          # (nt, 3, 2)
    return np.einsum("qj,tjx->tqx", bary, corners)


def barycentric_gradients(mesh):
    """
    Gradients of the barycentric coordinate functions, shape (nt, 3, 2).

    grad lambda_i is the 90-degree counterclockwise rotation of the edge
    opposite vertex i, divided by twice the area.
    """
    p = mesh.vertices[mesh.triangles]
    grads = np.empty((mesh.n_triangles, 3, 2))
    for i in range(3):
        e = p[:, (i + 2) % 3] - p[:, (i + 1) % 3]
        grads[:, i, 0] = -e[:, 1]
        grads[:, i, 1] = e[:, 0]
    grads /= (2.0 * mesh.signed_areas)[:, None, None]
    return grads


# ----------------------------------------------------------------------
# discrete functions
# ----------------------------------------------------------------------

class CrFunction:
    """
    Nonconforming piecewise linear with one edge-mean coefficient per edge.
    """

    def __init__(self, mesh, coefficients):
        self.mesh = mesh
        self.coefficients = np.asarray(coefficients, dtype=float)
        if self.coefficients.shape != (mesh.n_edges,):
            raise ValueError("expected one coefficient per edge")

    @classmethod
    def zeros(cls, mesh):
        return cls(mesh, np.zeros(mesh.n_edges))

    def local_coefficients(self):
        """Coefficients per triangle in local edge order, shape (nt, 3)."""
        return self.coefficients[self.mesh.tri_edges]

    def tri_values_at(self, bary):
        """Values on every triangle at barycentric nodes, shape (nt, nq)."""
        basis = 1.0 - 2.0 * np.asarray(bary)          # (nq, 3)
        return self.local_coefficients() @ basis.T

    def tri_gradients(self):
        """Constant gradient per triangle, shape (nt, 2)."""
        grads = barycentric_gradients(self.mesh)
        return np.einsum("tj,tjx->tx", -2.0 * self.local_coefficients(), grads)

    def tri_gradients_at(self, bary):
        g = self.tri_gradients()
        return np.broadcast_to(g[:, None, :],
                               (self.mesh.n_triangles, len(bary), 2))

    def eval_in_triangle(self, t, bary):
        bary = np.atleast_2d(bary)
        c = self.coefficients[self.mesh.tri_edges[t]]
        return (1.0 - 2.0 * bary) @ c

    def boundary_coefficients(self):
        """Coefficients on the boundary edges in cycle order."""
        return self.coefficients[self.mesh.boundary_cycle_edges]

    def is_in_interior_space(self, tol=1e-12):
        b = self.boundary_coefficients()
        return np.abs(b).max(initial=0.0) <= tol

    def norm_l2(self):
        """Exact L2 norm (the edge basis is orthogonal per triangle)."""
        w = np.zeros(self.mesh.n_edges)
        np.add.at(w, self.mesh.tri_edges.ravel(),
                  np.repeat(self.mesh.areas / 3.0, 3))
        return float(np.sqrt(np.sum(w * self.coefficients ** 2)))

    def norm_broken_energy(self):
        g = self.tri_gradients()
        return float(np.sqrt(np.sum(self.mesh.areas * (g ** 2).sum(axis=1))))


def eval_cr(v, t, bary):
    """
    Value of a CR function on triangle ``t`` at barycentric coordinates.

    The local basis attached to the edge opposite vertex i is
    ``phi_i = 1 - 2 lambda_i``; its mean over edge j is the Kronecker delta.
    """
    return v.eval_in_triangle(t, bary)


class W1Function:
    """Continuous piecewise linear with one coefficient per vertex."""

    def __init__(self, mesh, coefficients):
        self.mesh = mesh
        self.coefficients = np.asarray(coefficients, dtype=float)
        if self.coefficients.shape != (mesh.n_vertices,):
            raise ValueError("expected one coefficient per vertex")

    def tri_values_at(self, bary):
        vals = self.coefficients[self.mesh.triangles]     # (nt, 3)
        return vals @ np.asarray(bary).T

    def tri_gradients(self):
        grads = barycentric_gradients(self.mesh)
        vals = self.coefficients[self.mesh.triangles]
        return np.einsum("tj,tjx->tx", vals, grads)

    def tri_gradients_at(self, bary):
        g = self.tri_gradients()
        return np.broadcast_to(g[:, None, :],
                               (self.mesh.n_triangles, len(bary), 2))

    def as_cr(self):
        """
        Exact re-expansion in the CR space (a continuous piecewise linear
        has edge means equal to the average of its endpoint values).
        """
        z = self.coefficients
        coeffs = 0.5 * (z[self.mesh.edges[:, 0]] + z[self.mesh.edges[:, 1]])
        return CrFunction(self.mesh, coeffs)


class PiecewiseLinear:
    """
    Triangle-wise linear field with independent vertex values per triangle,
    so in general discontinuous.  Mainly a verification device.
    """

    def __init__(self, mesh, tri_vertex_values):
        self.mesh = mesh
        self.values = np.asarray(tri_vertex_values, dtype=float)
        if self.values.shape != (mesh.n_triangles, 3):
            raise ValueError("expected values of shape (nt, 3)")

    def tri_values_at(self, bary):
        return self.values @ np.asarray(bary).T

    def tri_gradients(self):
        grads = barycentric_gradients(self.mesh)
        return np.einsum("tj,tjx->tx", self.values, grads)

    def tri_gradients_at(self, bary):
        g = self.tri_gradients()
        return np.broadcast_to(g[:, None, :],
                               (self.mesh.n_triangles, len(bary), 2))

    def norm_broken_energy(self):
        g = self.tri_gradients()
        return float(np.sqrt(np.sum(self.mesh.areas * (g ** 2).sum(axis=1))))


class BoundaryControl:
    """Piecewise constant on the boundary, coefficients in cycle-edge order."""

    def __init__(self, mesh, coefficients):
        self.mesh = mesh
        self.coefficients = np.asarray(coefficients, dtype=float)
        if self.coefficients.shape != (mesh.n_boundary_edges,):
            raise ValueError("expected one coefficient per boundary edge")

    @classmethod
    def zeros(cls, mesh):
        return cls(mesh, np.zeros(mesh.n_boundary_edges))

    @classmethod
    def constant(cls, mesh, value):
        return cls(mesh, np.full(mesh.n_boundary_edges, float(value)))

    def norm_l2(self):
        ln = self.mesh.boundary_edge_lengths()
        return float(np.sqrt(np.sum(ln * self.coefficients ** 2)))

    def arclength_segments(self):
        """(breaks, values): value k holds on [breaks[k], breaks[k+1]]."""
        return self.mesh.boundary_arclength_breaks(), self.coefficients.copy()


class BoundaryTrace:
    """
    Continuous piecewise linear on the boundary, coefficients in
    cycle-vertex order (vertex k starts cycle edge k).
    """

    def __init__(self, mesh, coefficients):
        self.mesh = mesh
        self.coefficients = np.asarray(coefficients, dtype=float)
        if self.coefficients.shape != (mesh.n_boundary_edges,):
            raise ValueError("expected one coefficient per boundary vertex")

    @classmethod
    def zeros(cls, mesh):
        return cls(mesh, np.zeros(mesh.n_boundary_edges))

    @classmethod
    def constant(cls, mesh, value):
        return cls(mesh, np.full(mesh.n_boundary_edges, float(value)))

    def edge_midpoint_values(self):
        z = self.coefficients
        return 0.5 * (z + np.roll(z, -1))

    def eval_at_arclength(self, s):
        s = np.atleast_1d(np.asarray(s, dtype=float))
        breaks = self.mesh.boundary_arclength_breaks()
        total = breaks[-1]
        s = np.mod(s, total)
        k = np.clip(np.searchsorted(breaks, s, side="right") - 1,
                    0, len(breaks) - 2)
        t = (s - breaks[k]) / (breaks[k + 1] - breaks[k])
        z = self.coefficients
        return (1.0 - t) * z[k] + t * z[(k + 1) % z.size]

    def norm_l2(self):
        z = self.coefficients
        zn = np.roll(z, -1)
        ln = self.mesh.boundary_edge_lengths()
        return float(np.sqrt(np.sum(ln * (z * z + z * zn + zn * zn) / 3.0)))


class EnrichedFunction:
    """
    Continuous piecewise quadratic with vertex-value and edge-mean degrees
    of freedom.  Internally each edge mean is converted to the edge
    midpoint value (Simpson's rule is exact for quadratics), after which
    the usual six-node quadratic shape functions apply.
    """

    def __init__(self, mesh, vertex_values, edge_means):
        self.mesh = mesh
        self.vertex_values = np.asarray(vertex_values, dtype=float)
        self.edge_means = np.asarray(edge_means, dtype=float)
        if self.vertex_values.shape != (mesh.n_vertices,):
            raise ValueError("expected one value per vertex")
        if self.edge_means.shape != (mesh.n_edges,):
            raise ValueError("expected one mean per edge")
        ends = self.vertex_values[mesh.edges]
        self.edge_midpoint_values = (
            6.0 * self.edge_means - ends[:, 0] - ends[:, 1]) / 4.0

    def _local_dofs(self):
        qv = self.vertex_values[self.mesh.triangles]            # (nt, 3)
        qm = self.edge_midpoint_values[self.mesh.tri_edges]     # (nt, 3)
        return qv, qm

    @staticmethod
    def _shapes(bary):
        bary = np.asarray(bary)
        lam = [bary[:, 0], bary[:, 1], bary[:, 2]]
        sv = np.stack([lam[i] * (2.0 * lam[i] - 1.0) for i in range(3)], axis=1)
        sm = np.stack([4.0 * lam[(i + 1) % 3] * lam[(i + 2) % 3]
                       for i in range(3)], axis=1)
        return sv, sm                                           # (nq, 3) each

    def tri_values_at(self, bary):
        sv, sm = self._shapes(bary)
        qv, qm = self._local_dofs()
        return qv @ sv.T + qm @ sm.T

    def tri_gradients_at(self, bary):
        bary = np.asarray(bary)
        grads = barycentric_gradients(self.mesh)                # (nt, 3, 2)
        qv, qm = self._local_dofs()
        nq = bary.shape[0]
        out = np.zeros((self.mesh.n_triangles, nq, 2))
        for i in range(3):
            # d/dx [lam_i (2 lam_i - 1)] = (4 lam_i - 1) grad lam_i
            f = 4.0 * bary[:, i] - 1.0                          # (nq,)
            out += qv[:, i, None, None] * f[None, :, None] * grads[:, i][:, None, :]
            j, k = (i + 1) % 3, (i + 2) % 3
            # d/dx [4 lam_j lam_k] = 4 (lam_k grad lam_j + lam_j grad lam_k)
            out += qm[:, i, None, None] * 4.0 * (
                bary[None, :, k, None] * grads[:, j][:, None, :]
                + bary[None, :, j, None] * grads[:, k][:, None, :])
        return out

    def eval_in_triangle(self, t, bary):
        sv, sm = self._shapes(np.atleast_2d(bary))
        qv = self.vertex_values[self.mesh.triangles[t]]
        qm = self.edge_midpoint_values[self.mesh.tri_edges[t]]
        return sv @ qv + sm @ qm

    def computed_edge_means(self):
        """Edge means recovered by Simpson's rule (exact for quadratics)."""
        ends = self.vertex_values[self.mesh.edges]
        return (ends[:, 0] + 4.0 * self.edge_midpoint_values + ends[:, 1]) / 6.0


# ----------------------------------------------------------------------
# operators
# ----------------------------------------------------------------------

def interpolate_cr(f, mesh):
    """
    Edge-mean interpolation into the CR space.

    The coefficient on each edge is the mean of ``f`` over that edge,
    computed with the 3-point Gauss rule (exact for quintics).

    Parameters
    ----------
    f : callable
        Vectorized map from points of shape (n, 2) to values of shape (n,).
    mesh : Mesh
    """
    t, w = quadrature_edge(4)
    a = mesh.vertices[mesh.edges[:, 0]]
    b = mesh.vertices[mesh.edges[:, 1]]
    pts = a[:, None, :] + t[None, :, None] * (b - a)[:, None, :]
    vals = np.asarray(f(pts.reshape(-1, 2)), dtype=float).reshape(len(a), len(t))
    return CrFunction(mesh, vals @ w)


def enrich(v):
    """
    Enrichment of an interior-edge CR function into the continuous
    quadratic space.

    Vertex values are the averages of the triangle-wise limits (zero at
    boundary vertices); all edge means are copied unchanged.

    Raises
    ------
    ValueError
        If ``v`` has a nonzero coefficient on a boundary edge.
    """
    mesh = v.mesh
    if not v.is_in_interior_space():
        raise ValueError("enrichment requires zero coefficients on all "
                         "boundary edges")
    c = v.local_coefficients()                                  # (nt, 3)
    # value of v|_T at local vertex i: sum of adjacent-edge coefficients
    # minus the opposite one (phi_j(p_i) = 1 - 2 delta_ij)
    corner_vals = c.sum(axis=1, keepdims=True) - 2.0 * c        # (nt, 3)
    sums = np.zeros(mesh.n_vertices)
    counts = np.zeros(mesh.n_vertices)
    np.add.at(sums, mesh.triangles.ravel(), corner_vals.ravel())
    np.add.at(counts, mesh.triangles.ravel(), 1.0)
    vertex_values = np.divide(sums, counts, out=np.zeros_like(sums),
                              where=counts > 0)
    vertex_values[mesh.vertex_on_boundary] = 0.0
    return EnrichedFunction(mesh, vertex_values, v.coefficients.copy())


def tilde_extension(z):
    """
    Extend a boundary trace into the continuous piecewise-linear space by
    zero: boundary vertices keep the trace values, interior vertices get 0.
    """
    mesh = z.mesh
    coeffs = np.zeros(mesh.n_vertices)
    coeffs[mesh.boundary_cycle_vertices] = z.coefficients
    return W1Function(mesh, coeffs)


def boundary_vertex_hat(mesh, cycle_position):
    """The zero-extended hat function of the given boundary-cycle vertex."""
    z = np.zeros(mesh.n_boundary_edges)
    z[cycle_position] = 1.0
    return tilde_extension(BoundaryTrace(mesh, z))


def a_pw(u, v, order=2):
    """
    Broken gradient form: the sum over triangles of the gradient inner
    product of two discrete functions living on the same mesh.
    """
    mesh = u.mesh
    bary, w = quadrature_triangle(order)
    gu = u.tri_gradients_at(bary)
    gv = v.tri_gradients_at(bary)
    per_tri = np.einsum("q,tqx,tqx->t", w, gu, gv)
    return float(np.sum(mesh.areas * per_tri))
