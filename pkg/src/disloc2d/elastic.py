"""Elastic tensors, quadratic energy density, and Burgers-lattice bookkeeping.

Three tensor modes are supported:

* ``isotropic``: Lame pair (lam, mu), W(xi) = mu*|sym(xi)|^2 + lam/2*tr(xi)^2.
* ``general``: full 2x2x2x2 tensor with minor symmetries enforced.
* ``toy-full-norm``: W(xi) = |xi|^2 on the full matrix.  This mode acts on the
  whole matrix (including the skew part), so it has no coercivity constants in
  the symmetric-part sense; it exists to reproduce closed-form log energies and
  is rejected by every code path that relies on symmetric coercivity.
"""

from __future__ import annotations

import heapq
import warnings
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

ISOTROPIC = "isotropic"
GENERAL = "general"
TOY = "toy-full-norm"


class LatticeError(ValueError):
    """Burgers set does not generate a usable lattice, or enumeration failed."""


def sym(m: np.ndarray) -> np.ndarray:
    """Symmetric part, batched over leading axes."""
    return 0.5 * (m + np.swapaxes(m, -1, -2))


def skew(m: np.ndarray) -> np.ndarray:
    """Antisymmetric part, batched over leading axes."""
    return 0.5 * (m - np.swapaxes(m, -1, -2))


def _isotropic_as_tensor(lam: float, mu: float) -> np.ndarray:
    c = np.zeros((2, 2, 2, 2))
    eye = np.eye(2)
    for i in range(2):
        for j in range(2):
            for k in range(2):
                for l in range(2):
                    c[i, j, k, l] = (
                        lam * eye[i, j] * eye[k, l]
                        + mu * (eye[i, k] * eye[j, l] + eye[i, l] * eye[j, k])
                    )
    return c


@dataclass(frozen=True)
class ElasticTensor:
    """Quadratic strain-energy density W(xi) = 1/2 C xi : xi (or |xi|^2 in toy mode)."""

    mode: str
    lam: float = 0.0
    mu: float = 0.0
    tensor: np.ndarray | None = None

    @staticmethod
    def isotropic(lam: float, mu: float) -> "ElasticTensor":
        if mu <= 0 or lam + mu <= 0:
            raise ValueError(f"isotropic tensor not coercive: lam={lam}, mu={mu}")
        return ElasticTensor(mode=ISOTROPIC, lam=float(lam), mu=float(mu))

    @staticmethod
    def general(entries: np.ndarray) -> "ElasticTensor":
        c = np.asarray(entries, dtype=float).reshape(2, 2, 2, 2)
        # enforce minor symmetries; W only sees the minor-symmetrized action
        c_min = 0.25 * (
            c
            + np.swapaxes(c, 0, 1)
            + np.swapaxes(c, 2, 3)
            + np.swapaxes(np.swapaxes(c, 0, 1), 2, 3)
        )
        major = np.transpose(c_min, (2, 3, 0, 1))
        if not np.allclose(c_min, major, atol=1e-12):
            warnings.warn("general elastic tensor lacks major symmetry; "
                          "only its symmetric quadratic form is used")
            c_min = 0.5 * (c_min + major)
        t = ElasticTensor(mode=GENERAL, tensor=c_min)
        c1, _ = coercivity_constants(t)
        if c1 <= 0:
            raise ValueError(f"general tensor not coercive on symmetric matrices (c1={c1})")
        return t

    @staticmethod
    def toy_full_norm() -> "ElasticTensor":
        return ElasticTensor(mode=TOY)


def apply_tensor(c: ElasticTensor, xi: np.ndarray) -> np.ndarray:
    """C xi (the stress), batched over leading axes of xi."""
    xi = np.asarray(xi, dtype=float)
    if c.mode == ISOTROPIC:
        s = sym(xi)
        tr = np.trace(xi, axis1=-2, axis2=-1)
        out = 2.0 * c.mu * s
        out = out + c.lam * tr[..., None, None] * np.eye(2)
        return out
    if c.mode == GENERAL:
        return np.einsum("ijkl,...kl->...ij", c.tensor, xi)
    if c.mode == TOY:
        return 2.0 * xi
    raise ValueError(f"unknown tensor mode {c.mode!r}")


def energy_density(c: ElasticTensor, xi: np.ndarray) -> np.ndarray | float:
    """W(xi); batched over leading axes of xi."""
    xi = np.asarray(xi, dtype=float)
    if c.mode == ISOTROPIC:
        s = sym(xi)
        tr = np.trace(xi, axis1=-2, axis2=-1)
        w = c.mu * np.sum(s * s, axis=(-2, -1)) + 0.5 * c.lam * tr * tr
    elif c.mode == TOY:
        w = np.sum(xi * xi, axis=(-2, -1))
    else:
        w = 0.5 * np.einsum("...ij,...ij->...", apply_tensor(c, xi), xi)
    return float(w) if w.ndim == 0 else w


def energy_bilinear(c: ElasticTensor, a: np.ndarray, b: np.ndarray) -> np.ndarray | float:
    """Symmetric bilinear form B with W(a+b) = W(a) + B(a,b) + W(b)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    out = 0.5 * (
        np.einsum("...ij,...ij->...", apply_tensor(c, a), b)
        + np.einsum("...ij,...ij->...", apply_tensor(c, b), a)
    )
    return float(out) if out.ndim == 0 else out


_SYM_BASIS = np.array([
    [[1.0, 0.0], [0.0, 0.0]],
    [[0.0, 0.0], [0.0, 1.0]],
    [[0.0, 1.0 / np.sqrt(2.0)], [1.0 / np.sqrt(2.0), 0.0]],
])


def coercivity_constants(c: ElasticTensor) -> tuple[float, float]:
    """Extreme eigenvalues (c1, c2) of xi -> C xi : xi on symmetric matrices.

    Rejects the toy mode: its quadratic form acts on the full matrix, so the
    constants are undefined in the symmetric-part normalization.
    """
    if c.mode == TOY:
        raise ValueError("coercivity constants are undefined for the toy-full-norm mode")
    gram = np.empty((3, 3))
    for a in range(3):
        for b in range(3):
            gram[a, b] = energy_bilinear(c, _SYM_BASIS[a], _SYM_BASIS[b])
    ev = np.linalg.eigvalsh(gram)
    return float(ev[0]), float(ev[-1])


def _rationalize(x: float, max_den: int = 10 ** 6, tol: float = 1e-9) -> Fraction:
    f = Fraction(x).limit_denominator(max_den)
    if abs(float(f) - x) > tol * max(1.0, abs(x)):
        raise LatticeError(f"coefficient {x} is not close to a rational number; "
                           "Burgers set does not span a discrete lattice")
    return f


def _hnf_basis(rows: np.ndarray) -> np.ndarray:
    """2-column integer Hermite reduction: basis of the row span of `rows`."""
    rows = [r.astype(np.int64) for r in np.asarray(rows) if np.any(r)]
    basis: list[np.ndarray] = []
    for r in rows:
        r = r.copy()
        for b in basis:
            piv = np.nonzero(b)[0][0]
            if r[piv] != 0:
                # euclidean reduction on the pivot column
                while r[piv] != 0:
                    if abs(r[piv]) >= abs(b[piv]):
                        q = r[piv] // b[piv]
                        r -= q * b
                    else:
                        b[:], r[:] = r.copy(), b.copy()
        if np.any(r):
            basis.append(r)
        basis.sort(key=lambda v: np.nonzero(v)[0][0])
    return np.array(basis, dtype=np.int64)


@dataclass(frozen=True)
class BurgersSystem:
    """Finite set S of admissible Burgers vectors and its integer span."""

    vectors: np.ndarray
    basis: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.vectors, dtype=float))
        if v.shape[1] != 2:
            raise ValueError("Burgers vectors must be 2D")
        norms = np.linalg.norm(v, axis=1)
        if np.any(norms < 1e-12):
            raise ValueError("0 is not an admissible Burgers vector")
        if np.linalg.matrix_rank(v, tol=1e-10) < 2:
            raise ValueError("Burgers vectors must span R^2")
        object.__setattr__(self, "vectors", v)
        object.__setattr__(self, "basis", self._lattice_basis(v))

    @staticmethod
    def _lattice_basis(vectors: np.ndarray) -> np.ndarray:
        # seed with a linearly independent pair
        b0 = vectors[0]
        i1 = next(i for i in range(1, len(vectors))
                  if abs(np.cross(b0, vectors[i])) > 1e-10)
        pair = np.array([b0, vectors[i1]])
        # express every vector in pair coordinates; rationalize; integer-reduce
        coeffs = np.linalg.solve(pair.T, vectors.T).T
        fracs = [[_rationalize(x) for x in row] for row in coeffs]
        den = 1
        for row in fracs:
            for f in row:
                den = den * f.denominator // np.gcd(den, f.denominator)
        int_rows = np.array(
            [[int(f * den) for f in row] for row in fracs], dtype=np.int64
        )
        red = _hnf_basis(int_rows)
        if red.shape[0] != 2:
            raise LatticeError("Burgers set does not generate a rank-2 lattice")
        basis = (red.astype(float) / den) @ pair
        # Gauss (Lagrange) reduction for short, well-conditioned generators
        a, b = basis[0], basis[1]
        while True:
            if np.dot(a, a) > np.dot(b, b):
                a, b = b, a
            t = round(np.dot(a, b) / np.dot(a, a))
            b2 = b - t * a
            if np.dot(b2, b2) >= np.dot(b, b) - 1e-15:
                break
            b = b2
        return np.array([a, b])

    def min_norm(self) -> float:
        return float(np.linalg.norm(self.basis, axis=1).min())


@dataclass(frozen=True)
class LatticePoint:
    """Element of the integer span, with one witness combination over S."""

    vec: np.ndarray
    coeffs: np.ndarray  # integers, one per vector of S

    def __iter__(self):
        return iter(self.vec)


def lattice_ball(b: BurgersSystem, radius: float, max_elements: int = 20000) -> list[LatticePoint]:
    """All nonzero lattice vectors with |xi| <= radius, lexicographically ordered.

    Each vector carries a witness integer combination over S with minimal l1
    coefficient sum (shortest-path search over single-vector moves).
    """
    max_b = float(np.linalg.norm(b.vectors, axis=1).max())
    if radius < max_b - 1e-12:
        raise ValueError(f"radius {radius} below max |b_i| = {max_b}")
    inv = np.linalg.inv(b.basis.T)
    bound = int(np.ceil(radius * np.linalg.norm(inv, 2))) + 1
    pts = []
    for m in range(-bound, bound + 1):
        for n in range(-bound, bound + 1):
            v = m * b.basis[0] + n * b.basis[1]
            r = np.linalg.norm(v)
            if 1e-12 < r <= radius + 1e-12:
                pts.append(v)
    if len(pts) > max_elements:
        raise LatticeError(f"lattice enumeration cap exceeded: {len(pts)} > {max_elements}")
    targets = {(round(p[0], 9), round(p[1], 9)) for p in pts}

    # Dijkstra over +-b_i moves: minimal l1 coefficient sum witnesses
    reach = radius + 2.0 * max_b
    start = (0.0, 0.0)
    best: dict[tuple, tuple[int, tuple]] = {start: (0, (0,) * len(b.vectors))}
    heap = [(0, start, (0,) * len(b.vectors))]
    settled = set()
    while heap and len(settled & targets) < len(targets):
        cost, key, combo = heapq.heappop(heap)
        if key in settled:
            continue
        settled.add(key)
        x = np.array(key)
        for i, bi in enumerate(b.vectors):
            for s in (1, -1):
                y = x + s * bi
                if np.linalg.norm(y) > reach:
                    continue
                ykey = (round(y[0], 9), round(y[1], 9))
                ycombo = list(combo)
                ycombo[i] += s
                ycombo = tuple(ycombo)
                prev = best.get(ykey)
                cand = (cost + 1, ycombo)
                if prev is None or cand < prev:
                    best[ykey] = cand
                    heapq.heappush(heap, (cost + 1, ykey, ycombo))
    out = []
    for p in sorted(pts, key=lambda v: (round(v[0], 9), round(v[1], 9))):
        key = (round(p[0], 9), round(p[1], 9))
        if key not in best:
            raise LatticeError(f"lattice point {p} unreachable by bounded combinations")
        out.append(LatticePoint(vec=p, coeffs=np.array(best[key][1], dtype=int)))
    return out
