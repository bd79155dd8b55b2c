"""
Conforming triangulations of convex polygons.

The mesh is the single geometric data structure shared by every other
module: triangles are stored counterclockwise, edges carry their incident
triangles, and the boundary edges are kept as one closed, counterclockwise
cycle.  Functions on the boundary (piecewise-constant controls, continuous
piecewise-linear traces) index their coefficients by position in this cycle,
so the cycle ordering is part of the public contract.

Meshes are immutable after construction.  Refinement and the odd-boundary
adjustment return new meshes that remember their parent, which lets a
function on a coarse mesh be evaluated at points of any descendant mesh
without geometric searches.
"""

import numpy as np


class MeshError(Exception):
    """Raised when a triangulation cannot be built or is structurally broken."""


class Mesh:
    """
    Conforming triangulation of a convex polygon.

    Attributes
    ----------
    vertices : array, shape (nv, 2)
        Vertex coordinates.
    triangles : array, shape (nt, 3)
        Vertex indices per triangle, counterclockwise.
    edges : array, shape (ne, 2)
        Vertex index pairs (sorted) defining the edges.
    tri_edges : array, shape (nt, 3)
        Global edge index opposite each local vertex: ``tri_edges[t, i]``
        is the edge connecting vertices ``i+1`` and ``i+2`` (mod 3) of ``t``.
    edge_tris : array, shape (ne, 2)
        Incident triangles per edge, second entry -1 for boundary edges.
    areas, tri_diameters : array, shape (nt,)
        Triangle areas and diameters; ``h`` is the largest diameter.
    edge_lengths, edge_midpoints : arrays
        Edge geometry.
    is_boundary_edge, vertex_on_boundary : boolean arrays
        Boundary incidence flags.
    boundary_cycle_edges : array, shape (N,)
        Boundary edge ids in counterclockwise traversal order, starting at
        the lexicographically smallest boundary vertex.
    boundary_cycle_vertices : array, shape (N,)
        Start vertex of each cycle edge; cycle edge ``k`` connects cycle
        vertices ``k`` and ``k+1 (mod N)``.
    edge_cycle_index : array, shape (ne,)
        Position of each edge in the boundary cycle, -1 for interior edges.
    parent_mesh, parent_triangle
        Provenance of refined meshes (see :func:`refine_uniform`).
    """

    def __init__(self, vertices, triangles, parent_mesh=None, parent_triangle=None):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2:
            raise MeshError("vertices must have shape (nv, 2)")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise MeshError("triangles must have shape (nt, 3)")
        if not np.all(np.isfinite(self.vertices)):
            raise MeshError("vertex coordinates must be finite")
        self.parent_mesh = parent_mesh
        self.parent_triangle = (
            None if parent_triangle is None
            else np.asarray(parent_triangle, dtype=np.int64)
        )
        self.construction_issues = []
        self._build_topology()
        self._build_geometry()
        self._build_boundary_cycle()

    # ------------------------------------------------------------------
    # construction helpers
    # ------------------------------------------------------------------

    def _build_topology(self):
        nt = self.n_triangles
        # edge opposite local vertex i connects local vertices i+1, i+2
        pairs = self.triangles[:, [[1, 2], [2, 0], [0, 1]]].reshape(-1, 2)
        canon = np.sort(pairs, axis=1)
        self.edges, inverse = np.unique(canon, axis=0, return_inverse=True)
        self.tri_edges = inverse.reshape(nt, 3)
        ne = self.edges.shape[0]
        counts = np.bincount(inverse, minlength=ne)
        if counts.max(initial=0) > 2:
            self.construction_issues.append(
                "non-conforming: an edge is shared by more than two triangles")
        order = np.argsort(inverse, kind="stable")
        tri_of_slot = np.repeat(np.arange(nt), 3)[order]
        starts = np.searchsorted(inverse[order], np.arange(ne), side="left")
        self.edge_tris = np.full((ne, 2), -1, dtype=np.int64)
        self.edge_tris[:, 0] = tri_of_slot[starts]
        two = counts >= 2
        self.edge_tris[two, 1] = tri_of_slot[starts[two] + 1]
        self.is_boundary_edge = counts == 1
        self.vertex_on_boundary = np.zeros(self.n_vertices, dtype=bool)
        self.vertex_on_boundary[self.edges[self.is_boundary_edge].ravel()] = True

    def _build_geometry(self):
        p = self.vertices[self.triangles]                       # (nt, 3, 2)
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        self.signed_areas = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
        self.areas = np.abs(self.signed_areas)
        sides = np.stack([
            np.linalg.norm(p[:, 2] - p[:, 1], axis=1),
            np.linalg.norm(p[:, 0] - p[:, 2], axis=1),
            np.linalg.norm(p[:, 1] - p[:, 0], axis=1),
        ], axis=1)
        self.tri_diameters = sides.max(axis=1)
        self.h = float(self.tri_diameters.max(initial=0.0))
        ev = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        self.edge_lengths = np.linalg.norm(ev, axis=1)
        self.edge_midpoints = 0.5 * (
            self.vertices[self.edges[:, 0]] + self.vertices[self.edges[:, 1]])

    def _directed_boundary_edges(self):
        """Boundary edges as (start, end) pairs induced by triangle orientation."""
        b_ids = np.flatnonzero(self.is_boundary_edge)
        tris = self.edge_tris[b_ids, 0]
        local = np.argmax(self.tri_edges[tris] == b_ids[:, None], axis=1)
        start = self.triangles[tris, (local + 1) % 3]
        end = self.triangles[tris, (local + 2) % 3]
        return b_ids, start, end

    def _build_boundary_cycle(self):
        self.boundary_cycle_edges = None
        self.boundary_cycle_vertices = None
        self.edge_cycle_index = np.full(self.n_edges, -1, dtype=np.int64)
        b_ids, start, end = self._directed_boundary_edges()
        n = b_ids.size
        if n == 0:
            self.construction_issues.append("mesh has no boundary edges")
            return
        out_edge = {}
        for e, a, b in zip(b_ids, start, end):
            if a in out_edge:
                self.construction_issues.append(
                    "boundary orientation inconsistent at vertex %d" % a)
                return
            out_edge[int(a)] = (int(e), int(b))
        starts_set = set(int(v) for v in start)
        pos = self.vertices[sorted(starts_set)]
        first = sorted(starts_set)[int(np.lexsort((pos[:, 1], pos[:, 0]))[0])]
        cycle_e, cycle_v = [], []
        v = first
        for _ in range(n):
            if v not in out_edge:
                self.construction_issues.append("boundary cycle is not closed")
                return
            e, w = out_edge.pop(v)
            cycle_e.append(e)
            cycle_v.append(v)
            v = w
        if v != first or out_edge:
            self.construction_issues.append(
                "boundary edges do not form a single closed loop")
            return
        self.boundary_cycle_edges = np.array(cycle_e, dtype=np.int64)
        self.boundary_cycle_vertices = np.array(cycle_v, dtype=np.int64)
        self.edge_cycle_index[self.boundary_cycle_edges] = np.arange(n)

    # ------------------------------------------------------------------
    # basic queries
    # ------------------------------------------------------------------

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_triangles(self):
        return self.triangles.shape[0]

    @property
    def n_edges(self):
        return self.edges.shape[0]

    @property
    def n_boundary_edges(self):
        return int(self.is_boundary_edge.sum())

    @property
    def interior_edges(self):
        """Indices of interior edges (ascending)."""
        return np.flatnonzero(~self.is_boundary_edge)

    def __repr__(self):
        return "Mesh(nv=%d, nt=%d, ne=%d, boundary=%d, h=%.3g)" % (
            self.n_vertices, self.n_triangles, self.n_edges,
            self.n_boundary_edges, self.h)

    def boundary_edge_lengths(self):
        """Lengths of boundary edges in cycle order."""
        return self.edge_lengths[self.boundary_cycle_edges]

    def boundary_arclength_breaks(self):
        """
        Cumulative arclength at the cycle vertices.

        Returns an array ``s`` of length N+1 with ``s[0] = 0`` and
        ``s[N] = |boundary|``; cycle edge ``k`` occupies ``[s[k], s[k+1]]``.
        """
        lengths = self.boundary_edge_lengths()
        return np.concatenate([[0.0], np.cumsum(lengths)])

    def boundary_points_at(self, s):
        """
        Map arclength values to physical points on the boundary.

        Parameters
        ----------
        s : array
            Arclength coordinates in ``[0, |boundary|]`` measured
            counterclockwise from the cycle start vertex.
        """
        s = np.atleast_1d(np.asarray(s, dtype=float))
        breaks = self.boundary_arclength_breaks()
        total = breaks[-1]
        s = np.mod(s, total)
        k = np.clip(np.searchsorted(breaks, s, side="right") - 1, 0,
                    len(breaks) - 2)
        t = (s - breaks[k]) / (breaks[k + 1] - breaks[k])
        va = self.boundary_cycle_vertices[k]
        vb = self.boundary_cycle_vertices[(k + 1) % len(self.boundary_cycle_vertices)]
        a = self.vertices[va]
        b = self.vertices[vb]
        return a + t[:, None] * (b - a)

    def min_angle_degrees(self):
        """Smallest interior angle over all triangles, in degrees."""
        p = self.vertices[self.triangles]
        angles = np.empty((self.n_triangles, 3))
        for i in range(3):
            u = p[:, (i + 1) % 3] - p[:, i]
            v = p[:, (i + 2) % 3] - p[:, i]
            cross = u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0]
            dot = (u * v).sum(axis=1)
            angles[:, i] = np.abs(np.arctan2(cross, dot))
        return float(np.degrees(angles.min()))

    def ancestor_triangles(self, ancestor):
        """
        Map each triangle of this mesh to its containing triangle in an
        ancestor mesh (any mesh on the parent chain, or this mesh itself).
        """
        if ancestor is self:
            return np.arange(self.n_triangles)
        mapping = np.arange(self.n_triangles)
        node = self
        while node.parent_mesh is not None:
            mapping = node.parent_triangle[mapping]
            node = node.parent_mesh
            if node is ancestor:
                return mapping
        raise MeshError("mesh is not a descendant of the given ancestor")


# ----------------------------------------------------------------------
# generators
# ----------------------------------------------------------------------

def triangulate_unit_square(n):
    """
    Structured triangulation of the unit square.

    Each of the n x n cells is split along the same diagonal (lower-left to
    upper-right), giving 2 n^2 congruent right triangles and 4 n boundary
    edges.

    Parameters
    ----------
    n : int
        Number of cells per side, at least 1.
    """
    n = int(n)
    if n < 1:
        raise MeshError("n must be a positive integer")
    xs = np.linspace(0.0, 1.0, n + 1)
    xx, yy = np.meshgrid(xs, xs, indexing="ij")
    vertices = np.column_stack([xx.ravel(), yy.ravel()])

    def vid(i, j):
        return i * (n + 1) + j

    tris = []
    for i in range(n):
        for j in range(n):
            v00, v10 = vid(i, j), vid(i + 1, j)
            v11, v01 = vid(i + 1, j + 1), vid(i, j + 1)
            tris.append((v00, v10, v11))
            tris.append((v00, v11, v01))
    return Mesh(vertices, np.array(tris))


def triangulate_polygon_fan(corners):
    """
    Fan triangulation of a convex polygon from its centroid.

    Parameters
    ----------
    corners : array-like, shape (k, 2)
        Polygon corners in counterclockwise order, k >= 3, strictly convex.

    Raises
    ------
    MeshError
        If the corners are not strictly convex and counterclockwise.
    """
    corners = np.asarray(corners, dtype=float)
    if corners.ndim != 2 or corners.shape[1] != 2 or corners.shape[0] < 3:
        raise MeshError("need at least 3 corner points of shape (k, 2)")
    k = corners.shape[0]
    nxt = np.roll(corners, -1, axis=0)
    prv = np.roll(corners, 1, axis=0)
    u = corners - prv
    v = nxt - corners
    cross = u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0]
    if np.any(cross <= 0):
        bad = int(np.argmin(cross))
        raise MeshError(
            "corners must be strictly convex and counterclockwise; "
            "turn at corner %d has cross product %.3g" % (bad, cross[bad]))
    centroid = corners.mean(axis=0)
    vertices = np.vstack([corners, centroid[None, :]])
    tris = np.array([(j, (j + 1) % k, k) for j in range(k)])
    return Mesh(vertices, tris)


def regular_polygon_corners(k, radius=1.0, center=(0.0, 0.0)):
    """Corners of the regular k-gon, counterclockwise starting at angle 0."""
    ang = 2.0 * np.pi * np.arange(k) / k
    return np.column_stack([center[0] + radius * np.cos(ang),
                            center[1] + radius * np.sin(ang)])


# ----------------------------------------------------------------------
# refinement
# ----------------------------------------------------------------------

def refine_uniform(mesh):
    """
    Red refinement: split every triangle into four congruent children by
    connecting the edge midpoints.  Halves h, doubles the boundary edge
    count, and preserves all angles exactly.
    """
    nv = mesh.n_vertices
    vertices = np.vstack([mesh.vertices, mesh.edge_midpoints])
    t = mesh.triangles
    m = nv + mesh.tri_edges          # midpoint vertex of edge opposite vertex i
    children = np.empty((mesh.n_triangles, 4, 3), dtype=np.int64)
    children[:, 0] = np.stack([t[:, 0], m[:, 2], m[:, 1]], axis=1)
    children[:, 1] = np.stack([m[:, 2], t[:, 1], m[:, 0]], axis=1)
    children[:, 2] = np.stack([m[:, 1], m[:, 0], t[:, 2]], axis=1)
    children[:, 3] = np.stack([m[:, 2], m[:, 0], m[:, 1]], axis=1)
    parent = np.repeat(np.arange(mesh.n_triangles), 4)
    return Mesh(vertices, children.reshape(-1, 3),
                parent_mesh=mesh, parent_triangle=parent)


def ensure_odd_boundary(mesh):
    """
    Return a mesh whose boundary edge count is odd.

    If the count is already odd the input mesh is returned unchanged.
    Otherwise the first boundary-cycle edge is bisected at its midpoint and
    the adjacent triangle is bisected toward its opposite vertex, which adds
    exactly one boundary edge, one triangle, and one vertex.
    """
    if mesh.boundary_cycle_edges is None:
        raise MeshError("cannot adjust a mesh without a valid boundary cycle")
    if mesh.n_boundary_edges % 2 == 1:
        return mesh
    e = int(mesh.boundary_cycle_edges[0])
    t = int(mesh.edge_tris[e, 0])
    local = int(np.argmax(mesh.tri_edges[t] == e))
    vi = mesh.triangles[t, local]
    va = mesh.triangles[t, (local + 1) % 3]
    vb = mesh.triangles[t, (local + 2) % 3]
    mid = mesh.n_vertices
    vertices = np.vstack([mesh.vertices, mesh.edge_midpoints[e][None, :]])
    tris = np.delete(mesh.triangles, t, axis=0)
    tris = np.vstack([tris, [(va, mid, vi), (mid, vb, vi)]])
    parent = np.concatenate([
        np.delete(np.arange(mesh.n_triangles), t), [t, t]])
    return Mesh(vertices, tris, parent_mesh=mesh, parent_triangle=parent)


# ----------------------------------------------------------------------
# validation
# ----------------------------------------------------------------------

class MeshDiagnostics:
    """
    Validation report: ``violations`` is empty exactly when the mesh is valid.
    """

    def __init__(self, violations, min_angle_deg, euler_characteristic):
        self.violations = list(violations)
        self.min_angle_deg = min_angle_deg
        self.euler_characteristic = euler_characteristic

    @property
    def is_valid(self):
        return not self.violations

    def __repr__(self):
        status = "valid" if self.is_valid else "INVALID"
        txt = "MeshDiagnostics(%s, min_angle=%.2f deg, euler=%d)" % (
            status, self.min_angle_deg, self.euler_characteristic)
        for v in self.violations:
            txt += "\n  - " + v
        return txt


def validate(mesh, angle_floor=15.0):
    """
    Check conformity, orientation, shape regularity and boundary-cycle
    integrity.  Reports violations; never raises.

    Parameters
    ----------
    mesh : Mesh
    angle_floor : float
        Minimum admissible interior angle in degrees.
    """
    violations = list(mesh.construction_issues)
    if not np.all(np.isfinite(mesh.vertices)):
        violations.append("non-finite vertex coordinates")
    flipped = np.flatnonzero(mesh.signed_areas <= 0)
    for t in flipped:
        violations.append(
            "triangle %d is not counterclockwise (signed area %.3g)"
            % (t, mesh.signed_areas[t]))
    counts = np.where(mesh.edge_tris[:, 1] >= 0, 2, 1)
    if np.any(counts > 2):
        violations.append("an edge is incident to more than two triangles")
    min_angle = mesh.min_angle_degrees() if mesh.n_triangles else 0.0
    if min_angle < angle_floor:
        violations.append(
            "minimum interior angle %.3f deg below floor %.3f deg"
            % (min_angle, angle_floor))
    euler = mesh.n_vertices - mesh.n_edges + mesh.n_triangles
    if euler != 1:
        violations.append(
            "Euler relation V - E + T = %d (expected 1 for a triangulated "
            "polygon)" % euler)
    if mesh.boundary_cycle_edges is not None:
        cyc = mesh.boundary_cycle_edges
        if len(cyc) != mesh.n_boundary_edges or len(set(cyc.tolist())) != len(cyc):
            violations.append("boundary cycle does not cover each boundary "
                              "edge exactly once")
        ends = mesh.boundary_cycle_vertices
        for k in range(len(cyc)):
            e = mesh.edges[cyc[k]]
            a, b = ends[k], ends[(k + 1) % len(cyc)]
            if {int(e[0]), int(e[1])} != {int(a), int(b)}:
                violations.append("boundary cycle broken at position %d" % k)
                break
    elif mesh.n_boundary_edges:
        violations.append("boundary cycle could not be constructed")
    return MeshDiagnostics(violations, min_angle, euler)


# ----------------------------------------------------------------------
# export
# ----------------------------------------------------------------------

def export_text(mesh):
    """
    Plain-text mesh dump: one ``v x y`` line per vertex followed by one
    ``t i j k`` line per triangle, whitespace separated.
    """
    lines = []
    for x, y in mesh.vertices:
        lines.append("v %.17g %.17g" % (x, y))
    for i, j, k in mesh.triangles:
        lines.append("t %d %d %d" % (i, j, k))
    return "\n".join(lines) + "\n"
