"""
Verification-only utilities: jump and average of discrete fields across
mesh edges, evaluated by Gauss quadrature from both incident triangles.
"""

import numpy as np

from crbc import quadrature_edge


def _bary_of_points(mesh, t, pts):
    corners = mesh.vertices[mesh.triangles[t]]
    mat = np.column_stack([corners[1] - corners[0], corners[2] - corners[0]])
    lam12 = np.linalg.solve(mat, (pts - corners[0]).T).T
    return np.column_stack([1.0 - lam12.sum(axis=1), lam12])


def edge_side_values(mesh, field, e, order=4):
    """Field values along edge e from each incident triangle, plus weights."""
    t_nodes, w = quadrature_edge(order)
    a, b = mesh.vertices[mesh.edges[e]]
    pts = a[None, :] + t_nodes[:, None] * (b - a)[None, :]
    sides = []
    for t in mesh.edge_tris[e]:
        if t < 0:
            continue
        bary = _bary_of_points(mesh, int(t), pts)
        sides.append(field.eval_in_triangle(int(t), bary)
                     if hasattr(field, "eval_in_triangle")
                     else field.tri_values_at(bary)[int(t)])
    return sides, w, float(np.linalg.norm(b - a))


def edge_jump_mean(mesh, field, e, order=4):
    """Mean of the scalar jump across edge e (value itself on the boundary)."""
    sides, w, _ = edge_side_values(mesh, field, e, order=order)
    if len(sides) == 1:
        return float(np.sum(w * sides[0]))
    return float(np.sum(w * (sides[0] - sides[1])))


def edge_average_mean(mesh, field, e, order=4):
    """Mean of the two-sided average across edge e."""
    sides, w, _ = edge_side_values(mesh, field, e, order=order)
    if len(sides) == 1:
        return float(np.sum(w * sides[0]))
    return float(np.sum(w * 0.5 * (sides[0] + sides[1])))
