"""Closed-form singular strain fields with prescribed circulation.

Orientation convention used everywhere in this package: loops are oriented
counterclockwise, the in-plane rotation J is counterclockwise by 90 degrees,
and the pair is pinned so that ``circulation(k_hat(xi, x0)) == +xi`` on any
loop around x0.  Charges sit in the matrix rows: row i of a field carries the
i-th component of the Burgers vector, and the row-wise line integral of
beta . t recovers the charge.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .elastic import ISOTROPIC, ElasticTensor, energy_density

TWO_PI = 2.0 * np.pi


class FieldEvaluationError(ValueError):
    """Evaluation requested at (or too close to) a singular point."""


def rot_ccw(v: np.ndarray) -> np.ndarray:
    """Counterclockwise 90-degree rotation, batched on the last axis."""
    v = np.asarray(v, dtype=float)
    return np.stack([-v[..., 1], v[..., 0]], axis=-1)


def rot_cw(v: np.ndarray) -> np.ndarray:
    """Clockwise 90-degree rotation, batched on the last axis."""
    v = np.asarray(v, dtype=float)
    return np.stack([v[..., 1], -v[..., 0]], axis=-1)


def _edge_unit_x(rel: np.ndarray, nu: float) -> np.ndarray:
    """Plane-strain edge-dislocation distortion for Burgers vector e1.

    Gradient of the classical multivalued displacement; rel are positions
    relative to the core.  Rows carry displacement components, so the
    row-wise circulation on any loop around the core is (1, 0).
    """
    x = rel[..., 0]
    y = rel[..., 1]
    r2 = x * x + y * y
    r4 = r2 * r2
    k = 1.0 / TWO_PI
    a = 1.0 / (2.0 * (1.0 - nu))
    out = np.empty(rel.shape[:-1] + (2, 2))
    out[..., 0, 0] = k * y * (-r2 + a * (y * y - x * x)) / r4
    out[..., 0, 1] = k * x * (r2 + a * (x * x - y * y)) / r4
    out[..., 1, 0] = -k * a * x * ((1.0 - 2.0 * nu) * r2 + 2.0 * y * y) / r4
    out[..., 1, 1] = -k * a * y * ((1.0 - 2.0 * nu) * r2 - 2.0 * x * x) / r4
    return out


_ROT90 = np.array([[0.0, -1.0], [1.0, 0.0]])


@dataclass(frozen=True)
class SingularField:
    """A matrix-valued field x -> beta(x) carrying circulation `charge` at `center`.

    kinds: 'toy' and 'k_hat' (the 1/r circulation carrier), 'k_tilde' (bounded,
    supported on a ball of radius r_eps), 'edge_isotropic' (equilibrium
    plane-strain distortion for an isotropic tensor).
    """

    kind: str
    center: np.ndarray
    charge: np.ndarray
    r_eps: float | None = None
    nu: float | None = None

    def singular_points(self) -> list[np.ndarray]:
        return [] if self.kind == "k_tilde" else [self.center]

    def decays_like_one_over_r(self) -> bool:
        return self.kind in ("toy", "k_hat", "edge_isotropic")

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        rel = pts - self.center
        r2 = np.sum(rel * rel, axis=-1)
        if self.kind in ("toy", "k_hat"):
            if np.any(r2 < 1e-24):
                raise FieldEvaluationError(f"{self.kind} field evaluated at its center")
            # (1/2pi) charge (x) J(x-x0)/|x-x0|^2 ; rows carry the charge
            ang = rot_ccw(rel) / r2[..., None]
            return np.einsum("i,...j->...ij", self.charge, ang) / TWO_PI
        if self.kind == "k_tilde":
            ang = rot_ccw(rel) / (TWO_PI * self.r_eps ** 2)
            out = np.einsum("i,...j->...ij", self.charge, ang)
            inside = r2 <= self.r_eps ** 2
            return out * inside[..., None, None]
        if self.kind == "edge_isotropic":
            if np.any(r2 < 1e-24):
                raise FieldEvaluationError("edge field evaluated at its center")
            b1, b2 = self.charge
            out = b1 * _edge_unit_x(rel, self.nu)
            if b2 != 0.0:
                rot_back = rel @ _ROT90  # R^T x, batched
                out = out + b2 * (_ROT90 @ _edge_unit_x(rot_back, self.nu) @ _ROT90.T)
            return out
        raise ValueError(f"unknown field kind {self.kind!r}")

    __call__ = evaluate


@dataclass(frozen=True)
class FieldSum:
    """Pointwise sum of fields; evaluates like a single field."""

    parts: tuple

    def singular_points(self):
        out = []
        for p in self.parts:
            out.extend(p.singular_points())
        return out

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        out = np.zeros(pts.shape[:-1] + (2, 2))
        for p in self.parts:
            out = out + p.evaluate(pts)
        return out

    __call__ = evaluate


def toy_field(b: np.ndarray, x0: np.ndarray) -> SingularField:
    """The minimal toy strain (1/2pi r) carrying Burgers vector b at x0.

    Rows carry b and the columns follow the counterclockwise unit tangent, so
    the circulation on any circle around x0 equals b.
    """
    b = np.asarray(b, dtype=float)
    if np.linalg.norm(b) == 0:
        raise ValueError("toy field needs a nonzero Burgers vector")
    return SingularField(kind="toy", center=np.asarray(x0, dtype=float), charge=b)


def k_hat(xi: np.ndarray, x0: np.ndarray) -> SingularField:
    """(1/2pi) xi (x) J(x-x0)/|x-x0|^2 with circulation +xi."""
    xi = np.asarray(xi, dtype=float)
    if np.linalg.norm(xi) == 0:
        raise ValueError("k_hat needs a nonzero charge")
    return SingularField(kind="k_hat", center=np.asarray(x0, dtype=float), charge=xi)


def k_tilde(xi: np.ndarray, x0: np.ndarray, r_eps: float) -> SingularField:
    """(1/(2pi r_eps^2)) xi (x) J(x-x0) inside B_{r_eps}(x0), zero outside."""
    xi = np.asarray(xi, dtype=float)
    if np.linalg.norm(xi) == 0:
        raise ValueError("k_tilde needs a nonzero charge")
    if r_eps <= 0:
        raise ValueError("k_tilde needs r_eps > 0")
    return SingularField(kind="k_tilde", center=np.asarray(x0, dtype=float),
                         charge=xi, r_eps=float(r_eps))


def beta_r2_isotropic(c: ElasticTensor, xi: np.ndarray, x0=(0.0, 0.0)) -> SingularField:
    """Whole-plane equilibrium distortion of an edge dislocation (isotropic media).

    Satisfies Div C beta = 0 away from the core, has circulation xi on every
    loop around x0, and is homogeneous of degree -1.
    """
    if c.mode != ISOTROPIC:
        raise ValueError("closed-form equilibrium field implemented for isotropic tensors only")
    if c.mu <= 0 or c.lam + c.mu <= 0:
        raise ValueError("isotropic tensor must have mu > 0 and lam + mu > 0")
    xi = np.asarray(xi, dtype=float)
    nu = c.lam / (2.0 * (c.lam + c.mu))
    return SingularField(kind="edge_isotropic", center=np.asarray(x0, dtype=float),
                         charge=xi, nu=float(nu))


def equilibrium_field(c: ElasticTensor, xi: np.ndarray, x0) -> SingularField:
    """Equilibrium circulation carrier for the given tensor mode.

    Toy mode: k_hat is already equilibrated (harmonic rows).  Isotropic: the
    classical edge field.  General tensors fall back to k_hat, which carries
    the right circulation but leaves an equilibrium defect for the corrector.
    """
    if c.mode == ISOTROPIC:
        return beta_r2_isotropic(c, xi, x0)
    return k_hat(xi, x0)


def circulation(fld, center, radius: float, n_quad: int = 256) -> np.ndarray:
    """Row-wise loop integral of beta . t on a circle (trapezoidal rule).

    Spectrally accurate for smooth integrands.  Rejects circles passing
    through a known singular point of the field.
    """
    if n_quad < 16:
        raise ValueError("circulation needs n_quad >= 16")
    center = np.asarray(center, dtype=float)
    if hasattr(fld, "singular_points"):
        for p in fld.singular_points():
            if abs(np.linalg.norm(p - center) - radius) < 1e-8:
                raise FieldEvaluationError("quadrature circle passes through a singular point")
    theta = np.linspace(0.0, TWO_PI, n_quad, endpoint=False)
    tang = np.stack([-np.sin(theta), np.cos(theta)], axis=-1)
    pts = center + radius * np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    beta = fld.evaluate(pts) if hasattr(fld, "evaluate") else fld(pts)
    integrand = np.einsum("qij,qj->qi", beta, tang)
    return integrand.mean(axis=0) * TWO_PI * radius


@dataclass(frozen=True)
class AngularProfile:
    """Samples of Gamma(theta) = r * beta(r, theta) for a degree -1 field."""

    thetas: np.ndarray
    values: np.ndarray  # (n, 2, 2)

    @staticmethod
    def from_field(fld, n: int = 256, radius: float = 1.0) -> "AngularProfile":
        center = getattr(fld, "center", np.zeros(2))
        thetas = np.linspace(0.0, TWO_PI, n, endpoint=False)
        pts = center + radius * np.stack([np.cos(thetas), np.sin(thetas)], axis=-1)
        vals = radius * fld.evaluate(pts)
        return AngularProfile(thetas=thetas, values=vals)

    def to_csv_rows(self):
        for t, m in zip(self.thetas, self.values):
            yield [t, m[0, 0], m[0, 1], m[1, 0], m[1, 1]]


def psi_from_profile(c: ElasticTensor, profile: AngularProfile) -> float:
    """Self-energy density per unit |log eps|: integral of W(Gamma(theta)) dtheta."""
    if len(profile.thetas) < 64:
        raise ValueError("angular profile needs at least 64 equispaced samples")
    w = energy_density(c, profile.values)
    return float(np.mean(w) * TWO_PI)


def angular_energy(c: ElasticTensor, fld) -> float:
    """Per-log-radius energy density of a degree -1 field (256-sample rule)."""
    return psi_from_profile(c, AngularProfile.from_field(fld, n=256))
