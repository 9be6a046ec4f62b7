"""Minimum elastic energy of discrete dislocation configurations.

The minimizer over admissible strains is computed with the ansatz beta =
sum_i beta_sing(xi_i, x_i) + grad u, where beta_sing is the equilibrium
circulation carrier for the tensor mode (k_hat rows are harmonic in toy mode,
the classical plane-strain edge field for isotropic tensors).  Each carrier is
curl-free away from its own core and adds zero circulation around every other
core, so the ansatz is admissible, and it is complete: the difference to any
admissible strain kills every circulation, hence is a single-valued gradient.

Energy integration splits the per-core log-divergent part off analytically
(degree -1 fields integrate to angular-energy times log on annuli); quadrature
only sees the smooth remainder.  Cores much smaller than the mesh are excluded
by quadrature masking; a centered dislocation on the disk gets its core meshed
as an explicit hole.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .elastic import TOY, ElasticTensor, energy_density
from .fem import solve_corrector
from .fields import angular_energy, equilibrium_field
from .measures import LimitMeasure, Region
from .mesh import TriMesh, disk_mesh, polygon_mesh, rect_mesh

TWO_PI = 2.0 * math.pi


class ConfigurationError(ValueError):
    """Dislocation configuration violates the admissibility constraints."""


class ResolutionError(RuntimeError):
    """Mesh cannot resolve the core/hard-core scales of the configuration."""


@dataclass(frozen=True)
class Domain2D:
    """Unit disk, axis-aligned rectangle, or simple polygon."""

    kind: str
    params: tuple = ()

    @staticmethod
    def disk(radius: float = 1.0) -> "Domain2D":
        return Domain2D(kind="disk", params=(float(radius),))

    @staticmethod
    def rectangle(x0: float, x1: float, y0: float, y1: float) -> "Domain2D":
        if not (x0 < x1 and y0 < y1):
            raise ValueError("empty rectangle")
        return Domain2D(kind="rectangle", params=(float(x0), float(x1), float(y0), float(y1)))

    @staticmethod
    def unit_square() -> "Domain2D":
        return Domain2D.rectangle(0.0, 1.0, 0.0, 1.0)

    @staticmethod
    def polygon(vertices) -> "Domain2D":
        v = np.asarray(vertices, dtype=float)
        return Domain2D(kind="polygon", params=(tuple(map(tuple, v)),))

    def region(self) -> Region:
        if self.kind == "disk":
            return Region.disk(0.0, 0.0, self.params[0])
        if self.kind == "rectangle":
            return Region.rect(*self.params)
        return Region.polygon(self.params[0])

    def area(self) -> float:
        return self.region().area()

    def distance_to_boundary(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.kind == "disk":
            return self.params[0] - np.linalg.norm(pts, axis=-1)
        if self.kind == "rectangle":
            x0, x1, y0, y1 = self.params
            return np.minimum.reduce([pts[:, 0] - x0, x1 - pts[:, 0],
                                      pts[:, 1] - y0, y1 - pts[:, 1]])
        v = np.asarray(self.params[0])
        inside = self.region().contains(pts)
        d = np.full(len(pts), np.inf)
        n = len(v)
        for k in range(n):
            a, b = v[k], v[(k + 1) % n]
            ab = b - a
            t = np.clip(((pts - a) @ ab) / (ab @ ab), 0.0, 1.0)
            proj = a + t[:, None] * ab
            d = np.minimum(d, np.linalg.norm(pts - proj, axis=-1))
        return np.where(inside, d, -d)


@dataclass(frozen=True)
class DislocationConfig:
    """Admissible dislocation measure: points, multiplicities, and scales."""

    points: np.ndarray          # (M, 2)
    charges: np.ndarray         # (M, 2), elements of the Burgers span
    eps: float
    rho_eps: float

    def __post_init__(self):
        object.__setattr__(self, "points", np.atleast_2d(np.asarray(self.points, dtype=float)))
        object.__setattr__(self, "charges", np.atleast_2d(np.asarray(self.charges, dtype=float)))
        if self.count and self.points.shape != self.charges.shape:
            raise ValueError("points and charges must have matching shapes")

    @property
    def count(self) -> int:
        return 0 if self.points.size == 0 else len(self.points)

    @staticmethod
    def empty(eps: float, rho_eps: float) -> "DislocationConfig":
        return DislocationConfig(points=np.zeros((0, 2)), charges=np.zeros((0, 2)),
                                 eps=eps, rho_eps=rho_eps)

    def total_mass(self) -> float:
        return float(np.linalg.norm(self.charges, axis=-1).sum()) if self.count else 0.0


def rho_gamma_preset(eps: float, gamma: float = 0.5) -> float:
    """Hard-core radius eps**gamma (gamma in (0, 1))."""
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must be in (0, 1)")
    return eps ** gamma


def rho_recovery_preset(n_eps: float, lam_total: float = 1.0) -> float:
    """Hard-core radius 1/(2 sqrt(Lambda N_eps)) matching the recovery spacing."""
    return 1.0 / (2.0 * math.sqrt(lam_total * n_eps))


def validate_config(omega: Domain2D, mu: DislocationConfig) -> list[str]:
    """Containment and separation checks; returns human-readable violations."""
    issues: list[str] = []
    if mu.count == 0:
        return issues
    if not mu.eps < mu.rho_eps:
        issues.append(f"core radius eps={mu.eps} must be below rho_eps={mu.rho_eps}")
    dist = omega.distance_to_boundary(mu.points)
    for i, d in enumerate(dist):
        if d < mu.rho_eps * (1.0 - 1e-12):
            issues.append(f"dislocation {i} at {mu.points[i]} too close to the boundary "
                          f"(dist {d:.4g} < rho_eps {mu.rho_eps:.4g})")
    for i in range(mu.count):
        for j in range(i + 1, mu.count):
            d = float(np.linalg.norm(mu.points[i] - mu.points[j]))
            if d < 2.0 * mu.rho_eps * (1.0 - 1e-12):
                issues.append(f"pair ({i}, {j}) separated by {d:.4g} < 2 rho_eps")
    return issues


@dataclass(frozen=True)
class SimMeshParams:
    n_cells: int = 64           # rectangle/polygon resolution per axis
    n_theta: int = 128          # disk angular resolution
    n_r: int | None = None
    rtol: float = 1e-10


def _build_mesh(omega: Domain2D, mu: DislocationConfig, params: SimMeshParams) -> TriMesh:
    if omega.kind == "rectangle":
        x0, x1, y0, y1 = omega.params
        aspect = (y1 - y0) / (x1 - x0)
        ny = max(4, int(round(params.n_cells * aspect)))
        return rect_mesh(x0, x1, y0, y1, params.n_cells, ny)
    if omega.kind == "disk":
        radius = omega.params[0]
        centered = (mu.count == 1 and np.linalg.norm(mu.points[0]) < 1e-12)
        if centered:
            # explicit core hole, geometric grading down to eps
            n_r = params.n_r or max(8, int(round(params.n_theta * np.log(radius / mu.eps) / TWO_PI)))
            return disk_mesh(radius=radius, n_theta=params.n_theta, n_r=n_r, r_inner=mu.eps)
        n_r = params.n_r or max(8, params.n_theta // 4)
        return disk_mesh(radius=radius, n_theta=params.n_theta, n_r=n_r)
    verts = np.asarray(omega.params[0])
    span = max(verts[:, 0].ptp(), verts[:, 1].ptp())
    return polygon_mesh(verts, target_h=span / params.n_cells)


@dataclass
class StrainField:
    """Minimizing strain: singular carriers plus a P1 corrector gradient."""

    mesh: TriMesh
    singular: tuple
    u: np.ndarray               # (N, 2) corrector
    config: DislocationConfig
    tensor: ElasticTensor
    skew_shift: np.ndarray = field(default_factory=lambda: np.zeros((2, 2)))
    finalized: bool = False

    def core_mask(self, points: np.ndarray) -> np.ndarray:
        """True outside every dislocation core."""
        pts = np.atleast_2d(points)
        keep = np.ones(len(pts), dtype=bool)
        for x in self.config.points:
            keep &= np.linalg.norm(pts - x, axis=-1) >= self.config.eps
        return keep

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.zeros((len(pts), 2, 2))
        keep = self.core_mask(pts)
        if np.any(keep):
            sub = pts[keep]
            acc = self.mesh.gradient_at(self.u, sub)
            for f in self.singular:
                acc = acc + f.evaluate(sub)
            if self.finalized:
                acc = acc - self.skew_shift
            out[keep] = acc
        return out if points.ndim > 1 else out[0]

    def singular_points(self):
        return [f.center for f in self.singular]

    def node_values(self) -> np.ndarray:
        """Field samples at mesh nodes (cores zeroed); for external plotting."""
        return self.evaluate(self.mesh.nodes)


@dataclass(frozen=True)
class EnergyReport:
    total: float
    self_energy: float
    interaction: float
    per_dislocation_self: np.ndarray
    eps: float
    rho_eps: float
    count: int
    rescaled: dict

    def check_partition(self, tol: float = 1e-9) -> bool:
        return abs(self.total - self.self_energy - self.interaction) <= tol * max(1.0, abs(self.total))


def _rescalings(total: float, n_eps: float, eps: float) -> dict:
    log = abs(math.log(eps))
    return {
        "dilute": total / (n_eps * log) if n_eps > 0 else math.nan,
        "critical": total / log ** 2,
        "super": total / n_eps ** 2 if n_eps > 0 else math.nan,
    }


def _energy_pieces(mesh: TriMesh, c: ElasticTensor, mu: DislocationConfig,
                   singular, u: np.ndarray, omega: Domain2D):
    """Quadrature + analytic-annulus energy, attributed to hard-core balls.

    Returns (per_disloc_self, interaction).  The log-divergent part of each
    carrier is integrated exactly on the annulus eps < |x - x_i| < R_i
    (R_i <= rho_eps); quadrature handles the remainder, whose singularities
    are integrable.
    """
    qp = mesh.quad_points.reshape(-1, 2)
    qw = mesh.quad_weights.reshape(-1).copy()
    m = mu.count
    dists = (np.linalg.norm(qp[None, :, :] - mu.points[:, None, :], axis=-1)
             if m else np.zeros((0, len(qp))))
    keep = np.ones(len(qp), dtype=bool)
    for i in range(m):
        keep &= dists[i] >= mu.eps
    qw[~keep] = 0.0

    grad_u = np.einsum("mai,maj->mij", u[mesh.tris], mesh.grads)
    beta = np.repeat(grad_u, mesh.quad_points.shape[1], axis=0)
    parts = []
    for f in singular:
        vals = np.zeros_like(beta)
        vals[keep] = f.evaluate(qp[keep])
        parts.append(vals)
        beta = beta + vals
    w_total = energy_density(c, beta)

    bdist = omega.distance_to_boundary(mu.points) if m else np.zeros(0)
    radii = np.minimum(mu.rho_eps, bdist) if m else np.zeros(0)
    integrand = qw * w_total
    for i in range(m):
        inside = dists[i] < radii[i]
        integrand[inside] -= qw[inside] * energy_density(c, parts[i][inside])

    per_self = np.zeros(m)
    hard = np.zeros(len(qp), dtype=bool)
    for i in range(m):
        ball = dists[i] < mu.rho_eps
        per_self[i] = integrand[ball].sum()
        per_self[i] += angular_energy(c, singular[i]) * math.log(radii[i] / mu.eps)
        hard |= ball
    interaction = float(integrand[~hard].sum())
    return per_self, interaction


def minimize_energy(omega: Domain2D, mu: DislocationConfig, c: ElasticTensor,
                    params: SimMeshParams | None = None) -> tuple[StrainField, EnergyReport]:
    """Minimize the elastic energy over admissible strains for the configuration."""
    params = params or SimMeshParams()
    issues = validate_config(omega, mu)
    if issues:
        raise ConfigurationError("; ".join(issues))
    mesh = _build_mesh(omega, mu, params)
    if mu.count == 0:
        fld = StrainField(mesh=mesh, singular=(), u=np.zeros((mesh.n_nodes, 2)),
                          config=mu, tensor=c, finalized=True)
        report = EnergyReport(total=0.0, self_energy=0.0, interaction=0.0,
                              per_dislocation_self=np.zeros(0), eps=mu.eps,
                              rho_eps=mu.rho_eps, count=0,
                              rescaled=_rescalings(0.0, 0, mu.eps))
        return fld, report

    bdist = omega.distance_to_boundary(mu.points)
    radii = np.minimum(mu.rho_eps, bdist)
    h = mesh.typical_h()
    if np.any(radii < 2.0 * h) and omega.kind != "disk":
        raise ResolutionError(
            f"mesh size h={h:.3g} too coarse for hard-core radius {radii.min():.3g}; "
            "refine the mesh or enlarge rho_eps")

    singular = tuple(equilibrium_field(c, xi, x) for xi, x in zip(mu.charges, mu.points))

    qp = mesh.quad_points.reshape(-1, 2)
    keep = np.ones(len(qp), dtype=bool)
    for x in mu.points:
        keep &= np.linalg.norm(qp - x, axis=-1) >= mu.eps
    beta_quad = np.zeros((len(qp), 2, 2))
    for f in singular:
        beta_quad[keep] += f.evaluate(qp[keep])
    beta_quad = beta_quad.reshape(mesh.quad_points.shape[:2] + (2, 2))
    mask = keep.reshape(mesh.quad_weights.shape).astype(float)

    u, res, iters = solve_corrector(mesh, c, beta_quad, quad_mask=mask, rtol=params.rtol)

    per_self, interaction = _energy_pieces(mesh, c, mu, singular, u, omega)
    total = float(per_self.sum() + interaction)

    fld = StrainField(mesh=mesh, singular=singular, u=u, config=mu, tensor=c)
    if c.mode != TOY:
        # zero the average of the skew part over the cored domain (uniqueness
        # normalization; energy-neutral for coercive modes)
        qw = (mesh.quad_weights.reshape(-1) * keep)
        beta_full = beta_quad.reshape(-1, 2, 2) + np.repeat(
            np.einsum("mai,maj->mij", u[mesh.tris], mesh.grads),
            mesh.quad_points.shape[1], axis=0)
        avg = np.einsum("q,qij->ij", qw, beta_full) / qw.sum()
        fld.skew_shift = 0.5 * (avg - avg.T)
    fld.finalized = True

    report = EnergyReport(total=total, self_energy=float(per_self.sum()),
                          interaction=interaction, per_dislocation_self=per_self,
                          eps=mu.eps, rho_eps=mu.rho_eps, count=mu.count,
                          rescaled=_rescalings(total, mu.count, mu.eps))
    return fld, report


def split_energy(fld: StrainField, omega: Domain2D,
                 rho_eps: float | None = None) -> EnergyReport:
    """Self/interaction split of a finalized strain field's energy."""
    mu = fld.config if rho_eps is None else replace(fld.config, rho_eps=rho_eps)
    if mu.count == 0:
        return EnergyReport(total=0.0, self_energy=0.0, interaction=0.0,
                            per_dislocation_self=np.zeros(0), eps=mu.eps,
                            rho_eps=mu.rho_eps, count=0,
                            rescaled=_rescalings(0.0, 0, mu.eps))
    per_self, interaction = _energy_pieces(fld.mesh, fld.tensor, mu, fld.singular, fld.u, omega)
    total = float(per_self.sum() + interaction)
    return EnergyReport(total=total, self_energy=float(per_self.sum()),
                        interaction=interaction, per_dislocation_self=per_self,
                        eps=mu.eps, rho_eps=mu.rho_eps, count=mu.count,
                        rescaled=_rescalings(total, mu.count, mu.eps))


# --- recovery constructions -------------------------------------------------

def _assign_charges(n_squares: int, lambdas: np.ndarray) -> np.ndarray:
    """Deterministic proportional assignment of decomposition slots to squares."""
    weights = lambdas / lambdas.sum()
    counts = np.zeros(len(weights))
    out = np.empty(n_squares, dtype=int)
    for m in range(n_squares):
        deficit = weights * (m + 1) - counts
        k = int(np.argmax(deficit))
        out[m] = k
        counts[k] += 1.0
    return out


def recovery_sequence(target: LimitMeasure, n_eps: float, omega: Domain2D,
                      eps: float, decompositions=None) -> DislocationConfig:
    """Square-grid recovery configuration for a locally constant measure.

    Each density region A_l is covered by squares of side 2 r_l with
    r_l = 1/(2 sqrt(Lambda_l N_eps)); squares not contained in A_l are
    dropped, and each kept square receives one vector of the decomposition,
    with empirical frequencies matching lambda_k / Lambda_l.
    """
    pts, chs = [], []
    r_min = math.inf
    regions = [cmp for cmp in target.components if cmp.kind == "density"]
    if not regions:
        raise ValueError("recovery needs a locally constant (density) measure")
    if n_eps < 1:
        raise ValueError("recovery needs N_eps >= 1")
    for l, comp in enumerate(regions):
        if decompositions is not None:
            lambdas, vectors = decompositions[l]
            lambdas = np.asarray(lambdas, dtype=float)
            vectors = np.atleast_2d(np.asarray(vectors, dtype=float))
        else:
            lambdas = np.array([1.0])
            vectors = comp.charge[None, :]
        if not np.allclose(lambdas @ vectors, comp.charge, atol=1e-9):
            raise ValueError(f"decomposition for region {l} does not sum to its density")
        lam_total = float(lambdas.sum())
        r_l = 1.0 / (2.0 * math.sqrt(lam_total * n_eps))
        r_min = min(r_min, r_l)
        x0, x1, y0, y1 = comp.region.bounds()
        side = 2.0 * r_l
        nx = int(math.floor((x1 - x0) / side + 1e-9))
        ny = int(math.floor((y1 - y0) / side + 1e-9))
        centers = []
        for ix in range(nx):
            for iy in range(ny):
                cx = x0 + (ix + 0.5) * side
                cy = y0 + (iy + 0.5) * side
                corners = np.array([[cx - r_l, cy - r_l], [cx - r_l, cy + r_l],
                                    [cx + r_l, cy - r_l], [cx + r_l, cy + r_l],
                                    [cx, cy]])
                if comp.region.contains(corners).all():
                    centers.append((cx, cy))
        if not centers:
            raise ValueError(f"N_eps={n_eps} too small: no square of side {side:.3g} "
                             f"fits inside region {l}")
        slot = _assign_charges(len(centers), lambdas)
        for (cx, cy), k in zip(centers, slot):
            pts.append((cx, cy))
            chs.append(vectors[k])
    return DislocationConfig(points=np.array(pts), charges=np.array(chs),
                             eps=eps, rho_eps=r_min)


_REGIME_EXPONENT = {"dilute": 0.5, "critical": 1.0, "super": 2.0}


def regime_n_eps(regime: str, eps: float) -> int:
    """Desk-scale proxies: |log eps|^(1/2), |log eps|, |log eps|^2."""
    if regime not in _REGIME_EXPONENT:
        raise ValueError(f"unknown regime {regime!r}")
    return max(1, int(round(abs(math.log(eps)) ** _REGIME_EXPONENT[regime])))


@dataclass(frozen=True)
class SweepRow:
    eps: float
    n_eps: int
    count: int
    e_self: float
    e_inter: float
    e_total: float
    rescaled: float


@dataclass(frozen=True)
class SweepResult:
    regime: str
    rows: tuple
    inter_exponent_vs_n: float          # log-log slope of E_inter against N_eps
    self_per_dislocation_per_log: tuple  # E_self / (count * |log eps|) per row

    def as_csv_rows(self):
        for r in self.rows:
            yield [r.eps, r.n_eps, r.count, r.e_self, r.e_inter, r.e_total, r.rescaled]


def scaling_sweep(regime: str, c: ElasticTensor, omega: Domain2D, eps_list,
                  xi=(1.0, 0.0), params: SimMeshParams | None = None) -> SweepResult:
    """Recovery-configuration energy sweep across core radii for one regime."""
    params = params or SimMeshParams()
    target = LimitMeasure.from_regions([(omega.region(), np.asarray(xi, dtype=float))])
    rows = []
    for eps in eps_list:
        n_eps = regime_n_eps(regime, eps)
        cfg = recovery_sequence(target, n_eps, omega, eps)
        _, rep = minimize_energy(omega, cfg, c, params)
        rows.append(SweepRow(eps=eps, n_eps=n_eps, count=cfg.count,
                             e_self=rep.self_energy, e_inter=rep.interaction,
                             e_total=rep.total,
                             rescaled=_rescalings(rep.total, n_eps, eps)[regime]))
    n_vals = np.array([r.n_eps for r in rows], dtype=float)
    e_inter = np.array([max(r.e_inter, 1e-300) for r in rows])
    if len(rows) >= 2 and len(set(n_vals.tolist())) >= 2:
        slope = float(np.polyfit(np.log(n_vals), np.log(e_inter), 1)[0])
    else:
        slope = math.nan
    self_per = tuple(r.e_self / (r.count * abs(math.log(r.eps))) for r in rows)
    return SweepResult(regime=regime, rows=tuple(rows),
                       inter_exponent_vs_n=slope,
                       self_per_dislocation_per_log=self_per)
