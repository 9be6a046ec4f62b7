"""The relaxed plastic energy density phi.

phi(xi) is the value of the linear program

    min sum_k lambda_k psi(xi_k)   s.t.   sum_k lambda_k xi_k = xi,  lambda >= 0,

with columns xi_k running over lattice vectors of the Burgers span.  Since an
optimal basic solution in the plane uses at most two columns, the program is
solved exactly by enumerating all single columns and 2-column bases, which
also yields the optimal decomposition as a certificate.  psi is quadratic in
the charge, so far columns are inefficient and a finite enumeration radius
suffices; the sufficiency check below makes that quantitative.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .cellsolver import CellMeshParams, psi_limit
from .elastic import ElasticTensor, BurgersSystem, LatticePoint, lattice_ball
from .fields import angular_energy, beta_r2_isotropic, k_hat

TOY_ANALYTIC = "toy-analytic"
PROFILE = "profile-quadrature"
CELL = "cell-extrapolated"


class TableRadiusError(ValueError):
    """Enumeration radius too small: a boundary-shell vector is still efficient."""


def psi_quadratic_form(c: ElasticTensor, source: str,
                       cell_params: CellMeshParams | None = None) -> np.ndarray:
    """2x2 matrix Q with psi(xi) = xi . Q xi for the requested source.

    The cell value is a minimum of a quadratic functional under a constraint
    linear in xi, so psi is a quadratic form for every source; three probe
    directions determine it.
    """
    if source == TOY_ANALYTIC:
        return np.eye(2) / (2.0 * math.pi)
    if source == PROFILE:
        def ev(xi):
            return angular_energy(c, beta_r2_isotropic(c, xi))
    elif source == CELL:
        def ev(xi):
            return psi_limit(c, xi, cell_params)
    else:
        raise ValueError(f"unknown psi source {source!r}")
    q11 = ev([1.0, 0.0])
    q22 = ev([0.0, 1.0])
    q_mix = ev([1.0, 1.0])
    q12 = 0.5 * (q_mix - q11 - q22)
    return np.array([[q11, q12], [q12, q22]])


@dataclass(frozen=True)
class PsiTable:
    """Tabulated self-energy density on a ball of the Burgers lattice."""

    system: BurgersSystem
    radius: float
    source: str
    points: tuple               # LatticePoint entries
    values: np.ndarray          # psi at each point
    q_form: np.ndarray          # the underlying quadratic form

    @property
    def vectors(self) -> np.ndarray:
        return np.array([p.vec for p in self.points])

    def psi(self, xi) -> float:
        xi = np.asarray(xi, dtype=float)
        return float(xi @ self.q_form @ xi)

    def base_efficiency(self) -> float:
        """max over S of psi(b)/|b| (cost per unit length of a base vector)."""
        best = 0.0
        for b in self.system.vectors:
            best = max(best, self.psi(b) / np.linalg.norm(b))
        return best

    def lookup(self, xi, tol: float = 1e-9) -> int | None:
        d = np.linalg.norm(self.vectors - np.asarray(xi, dtype=float), axis=1)
        k = int(np.argmin(d))
        return k if d[k] < tol else None


def build_psi_table(c: ElasticTensor, b: BurgersSystem, radius: float,
                    source: str = PROFILE,
                    cell_params: CellMeshParams | None = None) -> PsiTable:
    """Tabulate psi on the lattice ball and verify enumeration sufficiency.

    Since psi grows quadratically, any vector whose cost per unit length
    exceeds the best base-vector cost can never enter an optimal
    decomposition.  The radius is accepted when every boundary-shell vector
    is inefficient by at least a factor 2; otherwise the efficient shell
    vector is named in the error.
    """
    pts = lattice_ball(b, radius)
    q = psi_quadratic_form(c, source, cell_params)
    vecs = np.array([p.vec for p in pts])
    vals = np.einsum("ki,ij,kj->k", vecs, q, vecs)
    table = PsiTable(system=b, radius=float(radius), source=source,
                     points=tuple(pts), values=vals, q_form=q)
    max_b = float(np.linalg.norm(b.vectors, axis=1).max())
    shell = np.linalg.norm(vecs, axis=1) > radius - max_b
    eff0 = table.base_efficiency()
    norms = np.linalg.norm(vecs, axis=1)
    bad = shell & (vals / norms < 2.0 * eff0)
    if np.any(bad):
        k = int(np.nonzero(bad)[0][0])
        raise TableRadiusError(
            f"enumeration radius {radius} insufficient: boundary vector "
            f"{vecs[k]} still efficient (psi/|xi| = {vals[k] / norms[k]:.4g} "
            f"< 2 * {eff0:.4g}); enlarge the radius")
    return table


@dataclass(frozen=True)
class PhiCertificate:
    """Optimal value of the relaxation with its decomposition."""

    query: np.ndarray
    value: float
    lambdas: np.ndarray
    vectors: np.ndarray
    feasibility_residual: float
    optimality_gap: float        # vs the single-column upper bound

    def check(self, tol: float = 1e-10) -> bool:
        recon = self.lambdas @ self.vectors if len(self.lambdas) else np.zeros(2)
        return bool(np.linalg.norm(recon - self.query) <= max(tol, 1e-10))


def _pair_inverses(vecs: np.ndarray):
    n = len(vecs)
    pairs = []
    invs = []
    for i, j in itertools.combinations(range(n), 2):
        m = np.array([vecs[i], vecs[j]]).T
        det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
        if abs(det) < 1e-12:
            continue
        pairs.append((i, j))
        invs.append(np.array([[m[1, 1], -m[0, 1]], [-m[1, 0], m[0, 0]]]) / det)
    return pairs, np.array(invs)


def _solve_lp(xi: np.ndarray, vecs: np.ndarray, costs: np.ndarray) -> tuple[float, list, np.ndarray]:
    """Exact plane LP by enumeration of single columns and 2-column bases.

    Ties are broken by the lexicographically smallest sorted tuple of basis
    coordinates, so certificates are reproducible.
    """
    nrm = np.linalg.norm(xi)
    if nrm < 1e-14:
        return 0.0, [], np.zeros(0)
    candidates: list[tuple[float, tuple, list, np.ndarray]] = []
    vnorms = np.linalg.norm(vecs, axis=1)
    dots = vecs @ xi
    parallel = np.abs(dots - vnorms * nrm) < 1e-12 * max(1.0, nrm) * np.maximum(vnorms, 1.0)
    for k in np.nonzero(parallel)[0]:
        lam = nrm / vnorms[k]
        candidates.append((lam * costs[k], (tuple(np.round(vecs[k], 12)),),
                           [int(k)], np.array([lam])))
    pairs, invs = _pair_inverses(vecs)
    if pairs:
        lams = np.einsum("pij,j->pi", invs, xi)
        feas = np.all(lams >= -1e-12, axis=1)
        for p in np.nonzero(feas)[0]:
            i, j = pairs[p]
            val = lams[p, 0] * costs[i] + lams[p, 1] * costs[j]
            key = tuple(sorted((tuple(np.round(vecs[i], 12)), tuple(np.round(vecs[j], 12)))))
            candidates.append((float(val), key, [i, j], np.clip(lams[p], 0.0, None)))
    if not candidates:
        raise ValueError("LP infeasible: columns do not span the plane")
    best_val = min(c[0] for c in candidates)
    tol = 1e-12 * max(1.0, abs(best_val))
    val, _, idx, lam = min((c for c in candidates if c[0] <= best_val + tol),
                           key=lambda c: c[1])
    return float(best_val), idx, lam


def phi(xi, table: PsiTable) -> PhiCertificate:
    """The relaxed density phi(xi) with an optimal decomposition certificate.

    The enumeration is exhaustive over basic solutions, so the optimality gap
    of the reported value is zero by construction.
    """
    xi = np.asarray(xi, dtype=float)
    vecs = table.vectors
    val, idx, lam = _solve_lp(xi, vecs, table.values)
    sel = vecs[idx] if idx else np.zeros((0, 2))
    recon = lam @ sel if len(lam) else np.zeros(2)
    return PhiCertificate(query=xi, value=val, lambdas=lam, vectors=sel,
                          feasibility_residual=float(np.linalg.norm(recon - xi)),
                          optimality_gap=0.0)


def _signed_representatives(vectors: np.ndarray) -> np.ndarray:
    """One vector per +- pair: signed integer coefficients cover both signs."""
    reps: list[np.ndarray] = []
    for v in vectors:
        if any(np.allclose(v, r) or np.allclose(v, -r) for r in reps):
            continue
        reps.append(v)
    return np.array(reps)


def check_burgers_condition(table: PsiTable, z_max: int = 3) -> tuple[bool, np.ndarray | None]:
    """Test psi(sum z_i b_i) >= sum z_i psi(b_i) over all |z_i| <= z_max.

    The sum runs over one representative per +- pair of base vectors (the
    signed coefficients already cover both signs; a vector and its negative
    together would let canceling pairs defeat the inequality vacuously).
    A bounded verification; returns the violating combination on failure.
    """
    reps = _signed_representatives(table.system.vectors)
    base_psi = np.array([table.psi(b) for b in reps])
    for z in itertools.product(range(-z_max, z_max + 1), repeat=len(reps)):
        z = np.array(z)
        combo = z @ reps
        if table.psi(combo) < float(z @ base_psi) - 1e-12:
            return False, z
    return True, None


def phi_reduced(xi, table: PsiTable) -> PhiCertificate:
    """Reduced formula: decompositions over S only, with signed coefficients.

    Valid when the Burgers condition holds; columns are +-b_i with cost
    psi(b_i), so the same exact plane-LP enumeration applies.
    """
    xi = np.asarray(xi, dtype=float)
    base = table.system.vectors
    vecs = np.concatenate([base, -base])
    costs = np.array([table.psi(b) for b in base] * 2)
    val, idx, lam = _solve_lp(xi, vecs, costs)
    sel = vecs[idx] if idx else np.zeros((0, 2))
    recon = lam @ sel if len(lam) else np.zeros(2)
    return PhiCertificate(query=xi, value=val, lambdas=lam, vectors=sel,
                          feasibility_residual=float(np.linalg.norm(recon - xi)),
                          optimality_gap=0.0)


def phi_polar_samples(table: PsiTable, n: int = 360) -> np.ndarray:
    """(angle, phi(unit direction)) rows for the anisotropy polar plot."""
    out = np.empty((n, 2))
    for k in range(n):
        ang = 2.0 * math.pi * k / n
        out[k, 0] = ang
        out[k, 1] = phi([math.cos(ang), math.sin(ang)], table).value
    return out


def burgers_diagnostic_set(table: PsiTable) -> np.ndarray:
    """Lattice vectors with psi(b) = phi(b): the intrinsically stable charges.

    Exposed read-only; the admissible set S itself is never mutated.
    """
    out = []
    for p in table.points:
        if abs(table.psi(p.vec) - phi(p.vec, table).value) < 1e-10:
            out.append(p.vec)
    return np.array(out) if out else np.zeros((0, 2))
