"""Shared P1 elasticity assembly and the deterministic projected PCG solver."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .elastic import TOY, ElasticTensor, apply_tensor
from .mesh import TriMesh


class SolverError(RuntimeError):
    """Iterative solver failed to reach the requested residual."""


def elastic_stiffness(mesh: TriMesh, c: ElasticTensor,
                      tri_weights: np.ndarray | None = None) -> sp.csr_matrix:
    """Stiffness of u -> int W(grad u), dofs ordered (node, component).

    tri_weights: effective area per triangle (defaults to full areas); used to
    exclude masked core regions from the energy.
    """
    w = mesh.areas if tri_weights is None else tri_weights
    g = mesh.grads                                  # (M, 3, 2)
    m = len(mesh.tris)
    # sigma[c, a] = C (e_c (x) g_a) per triangle
    basis = np.zeros((2, 3, m, 2, 2))
    for comp in range(2):
        for a in range(3):
            basis[comp, a, :, comp, :] = g[:, a, :]
    sigma = np.empty_like(basis)
    for comp in range(2):
        for a in range(3):
            sigma[comp, a] = apply_tensor(c, basis[comp, a])
    rows, cols, vals = [], [], []
    for ca in range(2):
        for a in range(3):
            for cb in range(2):
                for b in range(3):
                    # symmetrized bilinear form value per triangle
                    v = 0.5 * (np.einsum("mij,mij->m", sigma[ca, a], basis[cb, b])
                               + np.einsum("mij,mij->m", sigma[cb, b], basis[ca, a])) * w
                    rows.append(2 * mesh.tris[:, a] + ca)
                    cols.append(2 * mesh.tris[:, b] + cb)
                    vals.append(v)
    n = 2 * mesh.n_nodes
    a_mat = sp.coo_matrix((np.concatenate(vals),
                           (np.concatenate(rows), np.concatenate(cols))),
                          shape=(n, n)).tocsr()
    return a_mat


def elastic_load(mesh: TriMesh, c: ElasticTensor, beta_quad: np.ndarray,
                 quad_mask: np.ndarray | None = None) -> np.ndarray:
    """Load b[(node,comp)] = int B(beta, e_comp (x) grad hat) over unmasked points.

    beta_quad: (M, 3, 2, 2) values of the singular field at quadrature points.
    """
    qw = mesh.quad_weights if quad_mask is None else mesh.quad_weights * quad_mask
    sig = apply_tensor(c, beta_quad)                            # (M, 3, 2, 2)
    if c.mode == TOY:
        sig_sym = sig
    else:
        sig_sym = sig  # C beta is symmetric for isotropic/general W; toy is 2*beta
    # B(beta, e_c (x) g_a) = 1/2 (C beta : e_c g_a + C(e_c g_a) : beta); for all
    # modes here C is a symmetric operator, so this equals C beta : (e_c (x) g_a).
    contrib = np.einsum("mqcj,maj,mq->mac", sig_sym, mesh.grads, qw)
    b = np.zeros(2 * mesh.n_nodes)
    for a in range(3):
        for comp in range(2):
            np.add.at(b, 2 * mesh.tris[:, a] + comp, contrib[:, a, comp])
    return b


def rigid_modes(mesh: TriMesh, include_rotation: bool) -> np.ndarray:
    """Orthonormalized nodal translations (and infinitesimal rotation) vectors."""
    n = mesh.n_nodes
    vecs = []
    for comp in range(2):
        v = np.zeros((n, 2))
        v[:, comp] = 1.0
        vecs.append(v.ravel())
    if include_rotation:
        v = np.column_stack([-mesh.nodes[:, 1], mesh.nodes[:, 0]])
        vecs.append(v.ravel())
    z = np.array(vecs).T
    q, _ = np.linalg.qr(z)
    return q


def pcg(a_mat, b: np.ndarray, deflate: np.ndarray | None = None,
        rtol: float = 1e-10, max_iter: int | None = None) -> tuple[np.ndarray, float, int]:
    """Jacobi-preconditioned CG with optional null-space deflation.

    Solves A x = b on the orthogonal complement of the deflation vectors.
    Returns (x, relative_residual, iterations); raises SolverError when the
    residual target is not met.
    """
    n = len(b)
    diag = np.asarray(a_mat.diagonal())
    diag = np.where(np.abs(diag) > 1e-300, diag, 1.0)

    if deflate is not None:
        def project(v):
            return v - deflate @ (deflate.T @ v)
    else:
        def project(v):
            return v

    b = project(b)
    b_norm = np.linalg.norm(b)
    if b_norm == 0.0:
        return np.zeros(n), 0.0, 0
    x = np.zeros(n)
    r = b.copy()
    z = project(r / diag)
    p = z.copy()
    rz = r @ z
    max_iter = max_iter or max(200, 20 * n)
    for it in range(1, max_iter + 1):
        ap = project(a_mat @ p)
        alpha = rz / (p @ ap)
        x += alpha * p
        r -= alpha * ap
        res = np.linalg.norm(r) / b_norm
        if res <= rtol:
            return x, res, it
        z = project(r / diag)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError(f"PCG stalled at relative residual {res:.3e} after {max_iter} iterations")


def solve_corrector(mesh: TriMesh, c: ElasticTensor, beta_quad: np.ndarray,
                    quad_mask: np.ndarray | None = None,
                    rtol: float = 1e-10) -> tuple[np.ndarray, float, int]:
    """Minimize int W(beta + grad u) over nodal u; returns (u, residual, iters).

    Translations are always deflated; the infinitesimal rotation is deflated
    for coercive modes (it is energy-flat there).
    """
    tri_w = None
    if quad_mask is not None:
        tri_w = (mesh.quad_weights * quad_mask).sum(axis=1)
    a_mat = elastic_stiffness(mesh, c, tri_w)
    b = elastic_load(mesh, c, beta_quad, quad_mask)
    z = rigid_modes(mesh, include_rotation=(c.mode != TOY))
    u, res, it = pcg(a_mat, -b, deflate=z, rtol=rtol)
    return u.reshape(-1, 2), res, it
