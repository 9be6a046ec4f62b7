"""Triangle meshes for the simulation domains (disk, rectangle, polygon).

Linear (P1) elements with a 3-point interior quadrature rule per triangle.
Meshes are immutable after construction; derived arrays are precomputed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# degree-2 interior rule on the reference triangle
_QP_REF = np.array([[1 / 6, 1 / 6], [2 / 3, 1 / 6], [1 / 6, 2 / 3]])
_QW_REF = np.array([1 / 3, 1 / 3, 1 / 3])


@dataclass(frozen=True)
class TriMesh:
    nodes: np.ndarray          # (N, 2)
    tris: np.ndarray           # (M, 3) int
    boundary_nodes: np.ndarray  # (N,) bool

    areas: np.ndarray = field(init=False, repr=False)
    grads: np.ndarray = field(init=False, repr=False)       # (M, 3, 2) hat gradients
    quad_points: np.ndarray = field(init=False, repr=False)  # (M, 3, 2)
    quad_weights: np.ndarray = field(init=False, repr=False)  # (M, 3)

    def __post_init__(self):
        p = self.nodes[self.tris]                 # (M, 3, 2)
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        if np.any(det <= 0):
            raise ValueError("mesh has non-positively-oriented triangles")
        areas = 0.5 * det
        # gradients of the three hat functions (constant per triangle)
        g = np.empty((len(self.tris), 3, 2))
        g[:, 1, 0] = e2[:, 1] / det
        g[:, 1, 1] = -e2[:, 0] / det
        g[:, 2, 0] = -e1[:, 1] / det
        g[:, 2, 1] = e1[:, 0] / det
        g[:, 0] = -g[:, 1] - g[:, 2]
        qp = np.einsum("qa,mac->mqc",
                       np.column_stack([1 - _QP_REF.sum(axis=1), _QP_REF]), p)
        qw = areas[:, None] * _QW_REF[None, :]
        object.__setattr__(self, "areas", areas)
        object.__setattr__(self, "grads", g)
        object.__setattr__(self, "quad_points", qp)
        object.__setattr__(self, "quad_weights", qw)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def interior_mask(self) -> np.ndarray:
        return ~self.boundary_nodes

    def min_edge(self) -> float:
        p = self.nodes[self.tris]
        e = np.linalg.norm(np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 1],
                                     p[:, 0] - p[:, 2]]), axis=-1)
        return float(e.min())

    def typical_h(self) -> float:
        return float(np.sqrt(2.0 * np.median(self.areas)))

    # --- point location (bucket grid) ------------------------------------
    def _locator(self):
        if not hasattr(self, "_loc_cache"):
            lo = self.nodes.min(axis=0)
            hi = self.nodes.max(axis=0)
            n_cells = max(8, int(np.sqrt(len(self.tris))))
            size = (hi - lo) / n_cells
            size[size == 0] = 1.0
            buckets: dict[tuple, list[int]] = {}
            p = self.nodes[self.tris]
            tmin = ((p.min(axis=1) - lo) / size).astype(int)
            tmax = ((p.max(axis=1) - lo) / size).astype(int)
            for t in range(len(self.tris)):
                for i in range(tmin[t, 0], min(tmax[t, 0], n_cells - 1) + 1):
                    for j in range(tmin[t, 1], min(tmax[t, 1], n_cells - 1) + 1):
                        buckets.setdefault((i, j), []).append(t)
            object.__setattr__(self, "_loc_cache", (lo, size, n_cells, buckets))
        return self._loc_cache

    def locate(self, points: np.ndarray, tol: float = 1e-10) -> np.ndarray:
        """Triangle index per point (-1 if outside)."""
        lo, size, n_cells, buckets = self._locator()
        pts = np.atleast_2d(points)
        out = np.full(len(pts), -1, dtype=int)
        p = self.nodes[self.tris]
        for idx, x in enumerate(pts):
            c = np.clip(((x - lo) / size).astype(int), 0, n_cells - 1)
            for t in buckets.get((c[0], c[1]), ()):
                v = p[t]
                d = (v[1, 0] - v[0, 0]) * (v[2, 1] - v[0, 1]) - (v[1, 1] - v[0, 1]) * (v[2, 0] - v[0, 0])
                l1 = ((v[2, 1] - v[0, 1]) * (x[0] - v[0, 0]) - (v[2, 0] - v[0, 0]) * (x[1] - v[0, 1])) / d
                l2 = (-(v[1, 1] - v[0, 1]) * (x[0] - v[0, 0]) + (v[1, 0] - v[0, 0]) * (x[1] - v[0, 1])) / d
                if l1 >= -tol and l2 >= -tol and l1 + l2 <= 1 + tol:
                    out[idx] = t
                    break
        return out

    def gradient_at(self, u: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Gradient rows of a nodal vector field u (N,2) at points: (..., 2, 2)."""
        pts = np.atleast_2d(points)
        tri = self.locate(pts)
        if np.any(tri < 0):
            raise ValueError("gradient requested outside the mesh")
        g = self.grads[tri]                       # (Q, 3, 2)
        vals = u[self.tris[tri]]                  # (Q, 3, 2)
        return np.einsum("qai,qaj->qij", vals, g)

    def value_at(self, u: np.ndarray, points: np.ndarray) -> np.ndarray:
        """P1 interpolation of nodal array u (N,...) at points."""
        pts = np.atleast_2d(points)
        tri = self.locate(pts)
        if np.any(tri < 0):
            raise ValueError("interpolation requested outside the mesh")
        v = self.nodes[self.tris[tri]]
        d = (v[:, 1, 0] - v[:, 0, 0]) * (v[:, 2, 1] - v[:, 0, 1]) - (v[:, 1, 1] - v[:, 0, 1]) * (v[:, 2, 0] - v[:, 0, 0])
        l1 = ((v[:, 2, 1] - v[:, 0, 1]) * (pts[:, 0] - v[:, 0, 0]) - (v[:, 2, 0] - v[:, 0, 0]) * (pts[:, 1] - v[:, 0, 1])) / d
        l2 = (-(v[:, 1, 1] - v[:, 0, 1]) * (pts[:, 0] - v[:, 0, 0]) + (v[:, 1, 0] - v[:, 0, 0]) * (pts[:, 1] - v[:, 0, 1])) / d
        lam = np.stack([1 - l1 - l2, l1, l2], axis=1)
        uv = u[self.tris[tri]]
        return np.einsum("qa,qa...->q...", lam, uv)


def _boundary_from_edges(tris: np.ndarray, n_nodes: int) -> np.ndarray:
    edges = {}
    for t in tris:
        for a, b in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
            key = (min(a, b), max(a, b))
            edges[key] = edges.get(key, 0) + 1
    mask = np.zeros(n_nodes, dtype=bool)
    for (a, b), cnt in edges.items():
        if cnt == 1:
            mask[a] = mask[b] = True
    return mask


def rect_mesh(x0: float, x1: float, y0: float, y1: float, nx: int, ny: int) -> TriMesh:
    """Structured rectangle mesh; diagonals alternate for symmetry."""
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    xx, yy = np.meshgrid(xs, ys, indexing="ij")
    nodes = np.column_stack([xx.ravel(), yy.ravel()])

    def nid(i, j):
        return i * (ny + 1) + j

    tris = []
    for i in range(nx):
        for j in range(ny):
            a, b, c, d = nid(i, j), nid(i + 1, j), nid(i + 1, j + 1), nid(i, j + 1)
            if (i + j) % 2 == 0:
                tris += [[a, b, c], [a, c, d]]
            else:
                tris += [[a, b, d], [b, c, d]]
    tris = np.array(tris, dtype=int)
    return TriMesh(nodes=nodes, tris=tris, boundary_nodes=_boundary_from_edges(tris, len(nodes)))


def disk_mesh(radius: float = 1.0, n_theta: int = 64, n_r: int = 16,
              r_inner: float = 0.0, center=(0.0, 0.0)) -> TriMesh:
    """Polar triangle mesh of a disk (r_inner=0) or annulus (r_inner>0).

    The disk variant fans the innermost ring onto a single merged center node.
    The annulus variant grades radii geometrically toward the inner circle.
    """
    center = np.asarray(center, dtype=float)
    thetas = np.linspace(0.0, 2.0 * np.pi, n_theta, endpoint=False)
    if r_inner > 0.0:
        radii = np.geomspace(r_inner, radius, n_r + 1)
        rings = [center + r * np.stack([np.cos(thetas), np.sin(thetas)], axis=-1) for r in radii]
        nodes = np.concatenate(rings)
        tris = []
        for i in range(n_r):
            for j in range(n_theta):
                jn = (j + 1) % n_theta
                a, b = i * n_theta + j, i * n_theta + jn
                c, d = (i + 1) * n_theta + j, (i + 1) * n_theta + jn
                tris += [[a, c, d], [a, d, b]]
        tris = np.array(tris, dtype=int)
        mask = np.zeros(len(nodes), dtype=bool)
        mask[:n_theta] = True
        mask[-n_theta:] = True
        return TriMesh(nodes=nodes, tris=tris, boundary_nodes=mask)
    radii = radius * np.arange(1, n_r + 1) / n_r
    rings = [center + r * np.stack([np.cos(thetas), np.sin(thetas)], axis=-1) for r in radii]
    nodes = np.concatenate([center[None, :]] + rings)
    tris = []
    for j in range(n_theta):
        jn = (j + 1) % n_theta
        tris.append([0, 1 + j, 1 + jn])
    for i in range(n_r - 1):
        base = 1 + i * n_theta
        nxt = base + n_theta
        for j in range(n_theta):
            jn = (j + 1) % n_theta
            tris += [[base + j, nxt + j, nxt + jn], [base + j, nxt + jn, base + jn]]
    tris = np.array(tris, dtype=int)
    mask = np.zeros(len(nodes), dtype=bool)
    mask[-n_theta:] = True
    return TriMesh(nodes=nodes, tris=tris, boundary_nodes=mask)


def _ear_clip(vertices: np.ndarray) -> np.ndarray:
    """Triangulate a simple polygon (counterclockwise) by ear clipping."""
    verts = list(range(len(vertices)))
    v = vertices

    def cross(o, a, b):
        return (v[a, 0] - v[o, 0]) * (v[b, 1] - v[o, 1]) - (v[a, 1] - v[o, 1]) * (v[b, 0] - v[o, 0])

    def inside(p, a, b, c):
        d1 = cross(a, b, p)
        d2 = cross(b, c, p)
        d3 = cross(c, a, p)
        return d1 >= -1e-14 and d2 >= -1e-14 and d3 >= -1e-14

    tris = []
    guard = 0
    while len(verts) > 3 and guard < 10000:
        guard += 1
        n = len(verts)
        for k in range(n):
            a, b, c = verts[(k - 1) % n], verts[k], verts[(k + 1) % n]
            if cross(a, b, c) <= 1e-14:
                continue
            if any(inside(p, a, b, c) for p in verts if p not in (a, b, c)):
                continue
            tris.append([a, b, c])
            verts.pop(k)
            break
        else:
            raise ValueError("polygon triangulation failed (is the polygon simple and CCW?)")
    tris.append(list(verts))
    return np.array(tris, dtype=int)


def polygon_mesh(vertices: np.ndarray, target_h: float) -> TriMesh:
    """Ear-clip a simple CCW polygon, then refine uniformly to the target size."""
    vertices = np.asarray(vertices, dtype=float)
    nodes = [tuple(p) for p in vertices]
    tris = _ear_clip(vertices).tolist()

    def refine(nodes, tris):
        index = {p: i for i, p in enumerate(nodes)}

        def mid(a, b):
            p = tuple(0.5 * (np.array(nodes[a]) + np.array(nodes[b])))
            if p not in index:
                index[p] = len(nodes)
                nodes.append(p)
            return index[p]

        out = []
        for a, b, c in tris:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            out += [[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]
        return nodes, out

    def max_edge(nodes, tris):
        p = np.array(nodes)
        t = np.array(tris)
        e = np.linalg.norm(np.stack([p[t[:, 1]] - p[t[:, 0]],
                                     p[t[:, 2]] - p[t[:, 1]],
                                     p[t[:, 0]] - p[t[:, 2]]]), axis=-1)
        return e.max()

    while max_edge(nodes, tris) > target_h:
        nodes, tris = refine(nodes, tris)
    tris = np.array(tris, dtype=int)
    nodes = np.array(nodes, dtype=float)
    return TriMesh(nodes=nodes, tris=tris, boundary_nodes=_boundary_from_edges(tris, len(nodes)))
