"""Vector-valued dislocation-density measures on the limit scale.

The two primary representations are piecewise-constant densities over regions
and finite Dirac sums.  Ring and smooth-density components exist for
diagnostics (they realize the curl of truncated singular fields exactly).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Region:
    """Axis-aligned rectangle, disk, or simple polygon."""

    kind: str
    params: tuple

    @staticmethod
    def rect(x0, x1, y0, y1) -> "Region":
        if not (x0 < x1 and y0 < y1):
            raise ValueError("empty rectangle")
        return Region("rect", (float(x0), float(x1), float(y0), float(y1)))

    @staticmethod
    def disk(cx, cy, r) -> "Region":
        if r <= 0:
            raise ValueError("disk needs r > 0")
        return Region("disk", (float(cx), float(cy), float(r)))

    @staticmethod
    def polygon(vertices) -> "Region":
        v = np.asarray(vertices, dtype=float)
        if len(v) < 3:
            raise ValueError("polygon needs at least 3 vertices")
        return Region("polygon", (tuple(map(tuple, v)),))

    def area(self) -> float:
        if self.kind == "rect":
            x0, x1, y0, y1 = self.params
            return (x1 - x0) * (y1 - y0)
        if self.kind == "disk":
            return np.pi * self.params[2] ** 2
        v = np.asarray(self.params[0])
        x, y = v[:, 0], v[:, 1]
        return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        if self.kind == "rect":
            x0, x1, y0, y1 = self.params
            return ((pts[:, 0] >= x0) & (pts[:, 0] <= x1)
                    & (pts[:, 1] >= y0) & (pts[:, 1] <= y1))
        if self.kind == "disk":
            cx, cy, r = self.params
            return np.hypot(pts[:, 0] - cx, pts[:, 1] - cy) <= r
        v = np.asarray(self.params[0])
        inside = np.zeros(len(pts), dtype=bool)
        n = len(v)
        for k in range(n):
            a, b = v[k], v[(k + 1) % n]
            cond = (a[1] > pts[:, 1]) != (b[1] > pts[:, 1])
            xint = (b[0] - a[0]) * (pts[:, 1] - a[1]) / (b[1] - a[1] + 1e-300) + a[0]
            inside ^= cond & (pts[:, 0] < xint)
        return inside

    def bounds(self):
        if self.kind == "rect":
            x0, x1, y0, y1 = self.params
            return x0, x1, y0, y1
        if self.kind == "disk":
            cx, cy, r = self.params
            return cx - r, cx + r, cy - r, cy + r
        v = np.asarray(self.params[0])
        return v[:, 0].min(), v[:, 0].max(), v[:, 1].min(), v[:, 1].max()


@dataclass(frozen=True)
class MeasureComponent:
    kind: str                       # 'density' | 'dirac' | 'ring' | 'smooth'
    charge: np.ndarray | None = None
    region: Region | None = None
    point: np.ndarray | None = None
    center: np.ndarray | None = None
    radius: float | None = None
    density_fn: object | None = None  # callable points -> (..., 2)


@dataclass(frozen=True)
class LimitMeasure:
    """Finite vector measure: sum of tagged components."""

    components: tuple

    @staticmethod
    def from_regions(pairs) -> "LimitMeasure":
        comps = [MeasureComponent(kind="density", region=r,
                                  charge=np.asarray(xi, dtype=float))
                 for r, xi in pairs]
        return LimitMeasure(components=tuple(comps))

    @staticmethod
    def from_diracs(points, charges) -> "LimitMeasure":
        points = np.atleast_2d(np.asarray(points, dtype=float))
        charges = np.atleast_2d(np.asarray(charges, dtype=float))
        comps = [MeasureComponent(kind="dirac", point=p, charge=c)
                 for p, c in zip(points, charges)]
        return LimitMeasure(components=tuple(comps))

    @staticmethod
    def zero() -> "LimitMeasure":
        return LimitMeasure(components=())

    def with_ring(self, center, radius, charge) -> "LimitMeasure":
        comp = MeasureComponent(kind="ring", center=np.asarray(center, dtype=float),
                                radius=float(radius), charge=np.asarray(charge, dtype=float))
        return LimitMeasure(components=self.components + (comp,))

    def with_smooth_density(self, fn) -> "LimitMeasure":
        comp = MeasureComponent(kind="smooth", density_fn=fn)
        return LimitMeasure(components=self.components + (comp,))

    def total_variation(self, mesh=None) -> float:
        tv = 0.0
        for comp in self.components:
            if comp.kind == "density":
                tv += np.linalg.norm(comp.charge) * comp.region.area()
            elif comp.kind in ("dirac", "ring"):
                tv += np.linalg.norm(comp.charge)
            elif comp.kind == "smooth":
                if mesh is None:
                    raise ValueError("smooth density needs a mesh for its total variation")
                pts = mesh.quad_points.reshape(-1, 2)
                w = mesh.quad_weights.reshape(-1)
                tv += float(w @ np.linalg.norm(comp.density_fn(pts), axis=-1))
        return float(tv)

    def plastic_energy(self, phi_fn) -> float:
        """Integral of phi(dmu/d|mu|) d|mu| using 1-homogeneity of phi."""
        out = 0.0
        for comp in self.components:
            if comp.kind == "density":
                out += phi_fn(comp.charge) * comp.region.area()
            elif comp.kind == "dirac":
                out += phi_fn(comp.charge)
            else:
                raise ValueError(f"plastic energy undefined for component kind {comp.kind!r}")
        return float(out)

    def pair_with_scalar(self, mesh, phi_nodal: np.ndarray) -> np.ndarray:
        """Row-wise pairing <mu, phi> for a P1 nodal test function: (2,) vector."""
        out = np.zeros(2)
        qp = mesh.quad_points.reshape(-1, 2)
        qw = mesh.quad_weights.reshape(-1)
        phi_q = None
        for comp in self.components:
            if comp.kind == "density":
                if phi_q is None:
                    phi_q = mesh.value_at(phi_nodal, qp)
                ind = comp.region.contains(qp)
                out += comp.charge * float(qw[ind] @ phi_q[ind])
            elif comp.kind == "dirac":
                out += comp.charge * float(mesh.value_at(phi_nodal, comp.point[None, :])[0])
            elif comp.kind == "ring":
                th = np.linspace(0, 2 * np.pi, 256, endpoint=False)
                pts = comp.center + comp.radius * np.stack([np.cos(th), np.sin(th)], axis=-1)
                out += comp.charge * float(np.mean(mesh.value_at(phi_nodal, pts)))
            elif comp.kind == "smooth":
                if phi_q is None:
                    phi_q = mesh.value_at(phi_nodal, qp)
                dens = comp.density_fn(qp)
                out += np.einsum("q,qi,q->i", qw, dens, phi_q)
        return out
