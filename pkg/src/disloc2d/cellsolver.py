"""Annulus cell problems for the self-energy density.

The minimum of the elastic energy over strains with prescribed circulation xi
on an annulus eps < r < r_out is computed with the ansatz beta = K_hat(xi) +
grad u: on an annulus, any admissible strain minus K_hat is curl-free with
zero circulation, hence the gradient of a single-valued displacement.  The
corrector u is discretized with bilinear elements on a log-polar grid (uniform
in log r, so the 1/r fields are resolved with O(n_r) layers per decade), and
the resulting SPD system is solved by Jacobi-preconditioned CG to a relative
residual of 1e-10.  The leading singular energy is integrated analytically;
quadrature only touches the corrector terms.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .elastic import TOY, ElasticTensor, energy_bilinear, energy_density
from .fem import SolverError, pcg
from .fields import TWO_PI, angular_energy, k_hat

_GAUSS_1D = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])


class MeshResolutionError(RuntimeError):
    """Estimated discretization error exceeds the requested tolerance."""


class ExtrapolationError(RuntimeError):
    """Cell values do not extrapolate consistently in 1/|log eps|."""


@dataclass(frozen=True)
class CellMeshParams:
    n_theta: int = 128
    n_r: int | None = None          # default: isotropic cells in (log r, theta)
    rtol: float = 1e-10
    max_disc_error: float | None = None  # relative; triggers a half-resolution check


@dataclass(frozen=True)
class AnnulusMesh:
    """Tensor-product polar grid, geometric in r (uniform in log r)."""

    eps: float
    r_out: float
    n_r: int
    n_theta: int

    rho: np.ndarray = field(init=False, repr=False)
    theta: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not 0 < self.eps < self.r_out:
            raise ValueError("annulus needs 0 < eps < r_out")
        object.__setattr__(self, "rho",
                           np.linspace(np.log(self.eps), np.log(self.r_out), self.n_r + 1))
        object.__setattr__(self, "theta",
                           np.linspace(0.0, TWO_PI, self.n_theta, endpoint=False))

    @property
    def n_nodes(self) -> int:
        return (self.n_r + 1) * self.n_theta

    @property
    def d_rho(self) -> float:
        return float(self.rho[1] - self.rho[0])

    @property
    def d_theta(self) -> float:
        return TWO_PI / self.n_theta

    def node_id(self, i, j):
        return i * self.n_theta + np.mod(j, self.n_theta)

    def node_xy(self) -> np.ndarray:
        r = np.exp(self.rho)[:, None]
        x = r * np.cos(self.theta)[None, :]
        y = r * np.sin(self.theta)[None, :]
        return np.stack([x.ravel(), y.ravel()], axis=-1)

    @staticmethod
    def build(eps: float, r_out: float, params: CellMeshParams) -> "AnnulusMesh":
        n_theta = params.n_theta
        n_r = params.n_r
        if n_r is None:
            n_r = max(8, int(round(n_theta * np.log(r_out / eps) / TWO_PI)))
        return AnnulusMesh(eps=eps, r_out=r_out, n_r=n_r, n_theta=n_theta)


def _quad_data(mesh: AnnulusMesh):
    """Quadrature points and shape data shared by assembly and energy.

    Returns flattened arrays over (element, qpoint): positions, weights
    (including the r^2 jacobian of dx = r^2 drho dtheta), and the Cartesian
    gradients of the four bilinear shape functions.
    """
    n_r, n_t = mesh.n_r, mesh.n_theta
    drho, dth = mesh.d_rho, mesh.d_theta
    s = _GAUSS_1D
    # reference data per (qs, qt)
    shp_s = np.stack([1 - s, s])            # radial hat values, (2, 2q)
    dshp_s = np.array([-1.0, 1.0])
    rho_el = mesh.rho[:-1]                  # (n_r,)
    th_el = mesh.theta                      # (n_t,)

    # vectorized: element grid (i, j), quad grid (qs, qt)
    rho_q = rho_el[:, None, None, None] + s[None, None, :, None] * drho
    th_q = th_el[None, :, None, None] + s[None, None, None, :] * dth
    r_q = np.exp(rho_q)
    shape = np.broadcast_shapes(rho_q.shape, th_q.shape)
    r_q = np.broadcast_to(r_q, shape)
    th_q = np.broadcast_to(th_q, shape)
    cos_t, sin_t = np.cos(th_q), np.sin(th_q)
    er = np.stack([cos_t, sin_t], axis=-1)
    et = np.stack([-sin_t, cos_t], axis=-1)
    # bilinear shapes: local order (00, 01, 10, 11) = (i,j),(i,j+1),(i+1,j),(i+1,j+1)
    sv = s
    grads4 = np.empty(shape + (4, 2))
    vals4 = np.empty(shape + (4,))
    for a, (ar, at) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
        ns = sv if ar else 1 - sv        # radial factor at qs
        nt = sv if at else 1 - sv        # angular factor at qt
        dns = 1.0 if ar else -1.0
        dnt = 1.0 if at else -1.0
        val = ns[None, None, :, None] * nt[None, None, None, :]
        d_rho = dns * nt[None, None, None, :] / drho
        d_th = ns[None, None, :, None] * dnt / dth
        vals4[..., a] = np.broadcast_to(val, shape)
        grads4[..., a, :] = (np.broadcast_to(d_rho, shape)[..., None] * er
                             + np.broadcast_to(d_th, shape)[..., None] * et) / r_q[..., None]
    w = 0.25 * drho * dth * r_q ** 2
    pos = np.stack([r_q * cos_t, r_q * sin_t], axis=-1)

    # connectivity: (n_r, n_t, 4)
    ii = np.arange(n_r)[:, None]
    jj = np.arange(n_t)[None, :]
    conn = np.stack([
        mesh.node_id(ii, jj),
        mesh.node_id(ii, jj + 1),
        mesh.node_id(ii + 1, jj),
        mesh.node_id(ii + 1, jj + 1),
    ], axis=-1)

    q = n_r * n_t * 4
    return {
        "pos": pos.reshape(q, 2),
        "w": w.reshape(q),
        "grads": grads4.reshape(q, 4, 2),
        "vals": vals4.reshape(q, 4),
        "conn": np.broadcast_to(conn[:, :, None, None, :], shape + (4,)).reshape(q, 4),
    }


def _assemble(mesh: AnnulusMesh, c: ElasticTensor, charge: np.ndarray):
    qd = _quad_data(mesh)
    qn = len(qd["w"])
    n_dof = 2 * mesh.n_nodes
    grads = qd["grads"]                    # (Q, 4, 2)
    w = qd["w"]
    # basis strains e_comp (x) grad_a and their stresses
    from .elastic import apply_tensor
    rows, cols, vals = [], [], []
    sig = np.zeros((2, 4, qn, 2, 2))
    bas = np.zeros((2, 4, qn, 2, 2))
    for comp in range(2):
        for a in range(4):
            bas[comp, a, :, comp, :] = grads[:, a, :]
            sig[comp, a] = apply_tensor(c, bas[comp, a])
    for ca in range(2):
        for a in range(4):
            for cb in range(2):
                for b in range(4):
                    v = 0.5 * (np.einsum("qij,qij->q", sig[ca, a], bas[cb, b])
                               + np.einsum("qij,qij->q", sig[cb, b], bas[ca, a])) * w
                    rows.append(2 * qd["conn"][:, a] + ca)
                    cols.append(2 * qd["conn"][:, b] + cb)
                    vals.append(v)
    a_mat = sp.coo_matrix((np.concatenate(vals),
                           (np.concatenate(rows), np.concatenate(cols))),
                          shape=(n_dof, n_dof)).tocsr()
    # load from the singular part
    # C is a symmetric operator in all modes, so B(K, basis) = C K : basis
    khat_q = k_hat(charge, (0.0, 0.0)).evaluate(qd["pos"])
    sig_k = apply_tensor(c, khat_q)
    b_vec = np.zeros(n_dof)
    for comp in range(2):
        for a in range(4):
            contrib = np.einsum("qij,qij->q", sig_k, bas[comp, a]) * w
            np.add.at(b_vec, 2 * qd["conn"][:, a] + comp, contrib)
    return a_mat, b_vec, qd


def _deflation(mesh: AnnulusMesh, include_rotation: bool) -> np.ndarray:
    xy = mesh.node_xy()
    n = mesh.n_nodes
    vecs = []
    for comp in range(2):
        v = np.zeros((n, 2))
        v[:, comp] = 1.0
        vecs.append(v.ravel())
    if include_rotation:
        vecs.append(np.column_stack([-xy[:, 1], xy[:, 0]]).ravel())
    q, _ = np.linalg.qr(np.array(vecs).T)
    return q


@dataclass(frozen=True)
class CellSolution:
    """Discrete minimum of a cell problem, normalized by 1/|log eps|."""

    value: float                 # psi_eps(xi)
    raw_energy: float            # un-normalized discrete minimum
    charge: np.ndarray
    tensor: ElasticTensor
    mesh: AnnulusMesh
    u: np.ndarray                # (n_nodes, 2) corrector dofs
    residual: float
    iterations: int

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Strain K_hat + grad u at arbitrary points inside the annulus."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        beta = k_hat(self.charge, (0.0, 0.0)).evaluate(pts)
        return beta + self.corrector_gradient(pts)

    def corrector_gradient(self, points: np.ndarray) -> np.ndarray:
        m = self.mesh
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        r = np.linalg.norm(pts, axis=-1)
        if np.any(r < m.eps * (1 - 1e-9)) or np.any(r > m.r_out * (1 + 1e-9)):
            raise ValueError("evaluation outside the annulus")
        rho = np.log(np.clip(r, m.eps, m.r_out))
        th = np.mod(np.arctan2(pts[:, 1], pts[:, 0]), TWO_PI)
        i = np.clip(((rho - m.rho[0]) / m.d_rho).astype(int), 0, m.n_r - 1)
        j = np.clip((th / m.d_theta).astype(int), 0, m.n_theta - 1)
        s = (rho - m.rho[i]) / m.d_rho
        t = (th - m.theta[j]) / m.d_theta
        cos_t, sin_t = np.cos(th), np.sin(th)
        er = np.stack([cos_t, sin_t], axis=-1)
        et = np.stack([-sin_t, cos_t], axis=-1)
        out = np.zeros((len(pts), 2, 2))
        for a, (ar, at) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
            ns = s if ar else 1 - s
            nt = t if at else 1 - t
            dns = 1.0 if ar else -1.0
            dnt = 1.0 if at else -1.0
            node = self.mesh.node_id(i + ar, j + at)
            uval = self.u[node]                       # (Q, 2)
            gvec = (dns * nt)[:, None] * er / m.d_rho + (ns * dnt)[:, None] * et / m.d_theta
            gvec = gvec / r[:, None]
            out += np.einsum("qi,qj->qij", uval, gvec)
        return out if points.ndim > 1 else out[0]

    def circulation(self, radius: float, n_quad: int = 2048) -> np.ndarray:
        from .fields import circulation as circ
        return circ(self, (0.0, 0.0), radius, n_quad)

    def singular_points(self):
        return [np.zeros(2)]


def _solve(c: ElasticTensor, xi: np.ndarray, eps: float, r_out: float,
           params: CellMeshParams) -> CellSolution:
    xi = np.asarray(xi, dtype=float)
    mesh = AnnulusMesh.build(eps, r_out, params)
    a_mat, b_vec, qd = _assemble(mesh, c, xi)
    z = _deflation(mesh, include_rotation=(c.mode != TOY))
    u, res, it = pcg(a_mat, -b_vec, deflate=z, rtol=params.rtol)
    # energy: exact log-linear singular part + discrete corrector terms
    c_exact = np.log(r_out / eps) * angular_energy(c, k_hat(xi, (0.0, 0.0)))
    raw = c_exact + b_vec @ u + 0.5 * (u @ (a_mat @ u))
    value = raw / abs(np.log(eps))
    return CellSolution(value=float(value), raw_energy=float(raw), charge=xi,
                        tensor=c, mesh=mesh, u=u.reshape(-1, 2),
                        residual=float(res), iterations=int(it))


def solve_cell(c: ElasticTensor, xi: np.ndarray, eps: float,
               params: CellMeshParams | None = None) -> CellSolution:
    """Self-energy cell problem on B_1 minus B_eps, normalized by 1/|log eps|.

    A zero charge short-circuits to the zero strain (beta = 0 is optimal).
    """
    params = params or CellMeshParams()
    if not 0 < eps < 1:
        raise ValueError("solve_cell needs 0 < eps < 1")
    xi = np.asarray(xi, dtype=float)
    if np.linalg.norm(xi) == 0.0:
        mesh = AnnulusMesh.build(eps, 1.0, params)
        return CellSolution(value=0.0, raw_energy=0.0, charge=xi, tensor=c, mesh=mesh,
                            u=np.zeros((mesh.n_nodes, 2)), residual=0.0, iterations=0)
    sol = _solve(c, xi, eps, 1.0, params)
    if params.max_disc_error is not None:
        coarse = CellMeshParams(n_theta=max(16, params.n_theta // 2), rtol=params.rtol)
        sol_c = _solve(c, xi, eps, 1.0, coarse)
        est = abs(sol.value - sol_c.value) / 3.0   # O(h^2) Richardson error estimate
        if est > params.max_disc_error * max(abs(sol.value), 1e-30):
            raise MeshResolutionError(
                f"estimated discretization error {est:.2e} exceeds tolerance")
    return sol


def solve_cell_hardcore(c: ElasticTensor, xi: np.ndarray, eps: float, rho_eps: float,
                        params: CellMeshParams | None = None) -> CellSolution:
    """Hard-core cell problem on B_rho_eps minus B_eps, normalized by 1/|log eps|."""
    params = params or CellMeshParams()
    if not eps < rho_eps <= 1.0:
        raise ValueError("hard-core cell needs eps < rho_eps <= 1")
    ratio = np.log(rho_eps) / np.log(eps)
    if not -1.0 < ratio < 1.0:
        raise ValueError("log rho_eps / log eps must lie in (-1, 1)")
    xi = np.asarray(xi, dtype=float)
    if np.linalg.norm(xi) == 0.0:
        mesh = AnnulusMesh.build(eps, rho_eps, params)
        return CellSolution(value=0.0, raw_energy=0.0, charge=xi, tensor=c, mesh=mesh,
                            u=np.zeros((mesh.n_nodes, 2)), residual=0.0, iterations=0)
    return _solve(c, xi, eps, rho_eps, params)


def solve_cell_hardcore_matched(c: ElasticTensor, xi: np.ndarray, eps: float,
                                rho_eps: float,
                                params: CellMeshParams | None = None) -> CellSolution:
    """Hard-core minimizer whose tangential trace matches K_hat on both circles.

    The corrector is then constant along each boundary circle; the inner
    constant is pinned to zero and the outer one is a free two-vector.  This
    is the gluing variant used by the recovery-field assembly: together with
    the transition field it produces a tangentially continuous strain across
    the patch boundary.
    """
    params = params or CellMeshParams()
    if not eps < rho_eps <= 1.0:
        raise ValueError("hard-core cell needs eps < rho_eps <= 1")
    xi = np.asarray(xi, dtype=float)
    mesh = AnnulusMesh.build(eps, rho_eps, params)
    if np.linalg.norm(xi) == 0.0:
        return CellSolution(value=0.0, raw_energy=0.0, charge=xi, tensor=c, mesh=mesh,
                            u=np.zeros((mesh.n_nodes, 2)), residual=0.0, iterations=0)
    a_mat, b_vec, _ = _assemble(mesh, c, xi)
    n_nodes = mesh.n_nodes
    n_th = mesh.n_theta
    inner = np.arange(n_th)
    outer = np.arange(n_nodes - n_th, n_nodes)
    free_nodes = np.arange(n_th, n_nodes - n_th)
    # reduction: [interior dofs, shared outer constant]; inner ring pinned to 0
    n_red = 2 * len(free_nodes) + 2
    rows, cols, vals = [], [], []
    for k, node in enumerate(free_nodes):
        for comp in range(2):
            rows.append(2 * node + comp)
            cols.append(2 * k + comp)
            vals.append(1.0)
    for node in outer:
        for comp in range(2):
            rows.append(2 * node + comp)
            cols.append(n_red - 2 + comp)
            vals.append(1.0)
    p_mat = sp.coo_matrix((vals, (rows, cols)), shape=(2 * n_nodes, n_red)).tocsr()
    a_red = (p_mat.T @ a_mat @ p_mat).tocsr()
    b_red = p_mat.T @ b_vec
    z, res, it = pcg(a_red, -b_red, deflate=None, rtol=params.rtol)
    u = p_mat @ z
    c_exact = np.log(rho_eps / eps) * angular_energy(c, k_hat(xi, (0.0, 0.0)))
    raw = c_exact + b_vec @ u + 0.5 * (u @ (a_mat @ u))
    return CellSolution(value=float(raw / abs(np.log(eps))), raw_energy=float(raw),
                        charge=xi, tensor=c, mesh=mesh, u=u.reshape(-1, 2),
                        residual=float(res), iterations=int(it))


def psi_limit(c: ElasticTensor, xi: np.ndarray,
              params: CellMeshParams | None = None,
              exponents=(2, 3, 4, 5), tol: float = 5e-3) -> float:
    """Limit self-energy density by Richardson extrapolation in 1/|log eps|.

    Solves the cell problem along eps = 10^-k and removes the leading C/|log eps|
    error term from successive pairs.  Raises ExtrapolationError when the pair
    estimates drift non-monotonically by more than `tol` (relative).
    """
    xi = np.asarray(xi, dtype=float)
    if np.linalg.norm(xi) == 0.0:
        return 0.0
    params = params or CellMeshParams()
    eps_list = [10.0 ** -k for k in exponents]
    vals = [solve_cell(c, xi, e, params).value for e in eps_list]
    xs = [1.0 / abs(np.log(e)) for e in eps_list]
    pair_est = []
    for (x1, y1), (x2, y2) in zip(zip(xs, vals), zip(xs[1:], vals[1:])):
        pair_est.append((y2 * x1 - y1 * x2) / (x1 - x2))
    scale = max(abs(p) for p in pair_est)
    diffs = np.diff(pair_est)
    if len(diffs) >= 2:
        signs = np.sign(diffs[np.abs(diffs) > tol * scale])
        if len(set(signs.tolist())) > 1:
            raise ExtrapolationError(
                f"pair extrapolations non-monotone beyond tolerance: {pair_est}")
    return float(pair_est[-1])
