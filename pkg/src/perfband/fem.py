"""P1 finite elements with quasi-periodic boundary coupling.

The discrete Floquet problem on a perforated cell is the generalized
Hermitian eigenproblem K(eta) u = Lambda M(eta) u, where K, M are the
real stiffness/mass matrices of the full mesh condensed onto reduced
degrees of freedom: every slave vertex on one periodic side is
eliminated as exp(i*eta) times its master on the opposite side. The
reduced matrices are Hermitian, M is positive definite, and the lowest
eigenvalues are computed by shift-invert Lanczos at shift -1, i.e. by
iterating (K + M)^{-1} M, which is exactly the bounded operator whose
discrete eigenvalues mu relate to Lambda via mu = 1/(1 + Lambda).

Products: h1_product is the graph inner product u^H (K + M) v that
plays the role of the H^1 norm; l2_product is u^H M v.
"""

from __future__ import annotations

import csv
import hashlib
import math
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, eigsh, splu

from .geometry import Mesh

#: assembled reduced matrices must be Hermitian to this absolute tolerance
HERMITICITY_TOL = 1e-13

#: deterministic Lanczos starting vector seed (fixed for reproducible runs)
_V0_SEED = 2026041


@dataclass(frozen=True)
class DofMap:
    """Full-to-reduced index map with the quasi-periodic phase.

    keep lists the retained full-mesh vertex indices (everything except
    slaves); slave/slave_master give the eliminated vertices and their
    partners as full-mesh indices. P is the (n_full, n_reduced) complex
    prolongation with u_full = P u_reduced.
    """

    n_full: int
    keep: np.ndarray
    slave: np.ndarray
    slave_master: np.ndarray
    phase: complex
    P: sp.csr_matrix

    @property
    def n_reduced(self) -> int:
        return len(self.keep)

    def expand(self, u: np.ndarray) -> np.ndarray:
        return self.P @ u

    def restrict(self, u_full: np.ndarray) -> np.ndarray:
        """Values of a full nodal field on the retained dofs."""
        return np.asarray(u_full)[self.keep]


def build_dof_map(mesh: Mesh, eta: float) -> DofMap:
    if mesh.pairing is None or len(mesh.pairing) == 0:
        raise ValueError("mesh carries no periodic pairing")
    n = mesh.n_vertices
    masters = mesh.pairing[:, 0]
    slaves = mesh.pairing[:, 1]
    phase = complex(np.exp(1j * eta))
    keep = np.setdiff1d(np.arange(n), slaves)
    pos = -np.ones(n, dtype=np.int64)
    pos[keep] = np.arange(len(keep))
    rows = np.concatenate([keep, slaves])
    cols = np.concatenate([pos[keep], pos[masters]])
    vals = np.concatenate([np.ones(len(keep), dtype=complex),
                           np.full(len(slaves), phase, dtype=complex)])
    P = sp.csr_matrix((vals, (rows, cols)), shape=(n, len(keep)))
    return DofMap(n_full=n, keep=keep, slave=slaves, slave_master=masters,
                  phase=phase, P=P)


def assemble_full(mesh: Mesh) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Real stiffness and consistent mass matrices on all mesh vertices."""
    pts = mesh.vertices
    tri = mesh.triangles
    p0, p1, p2 = pts[tri[:, 0]], pts[tri[:, 1]], pts[tri[:, 2]]
    d1 = p1 - p0
    d2 = p2 - p0
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    area = 0.5 * det
    if np.any(area <= 0):
        raise ValueError("mesh contains non-CCW or degenerate triangles")
    # grad phi_i are constant per triangle: rotate opposite edges
    g = np.empty((len(tri), 3, 2))
    g[:, 0, 0] = p1[:, 1] - p2[:, 1]
    g[:, 0, 1] = p2[:, 0] - p1[:, 0]
    g[:, 1, 0] = p2[:, 1] - p0[:, 1]
    g[:, 1, 1] = p0[:, 0] - p2[:, 0]
    g[:, 2, 0] = p0[:, 1] - p1[:, 1]
    g[:, 2, 1] = p1[:, 0] - p0[:, 0]
    g /= det[:, None, None]

    ke = np.einsum("tid,tjd,t->tij", g, g, area)
    me_ref = (np.ones((3, 3)) + np.eye(3)) / 12.0
    me = area[:, None, None] * me_ref[None, :, :]

    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    n = mesh.n_vertices
    K = sp.csr_matrix((ke.ravel(), (rows, cols)), shape=(n, n))
    M = sp.csr_matrix((me.ravel(), (rows, cols)), shape=(n, n))
    return K, M


@dataclass(frozen=True)
class HermitianPair:
    """Reduced (K, M) at one Floquet parameter, with the dof map."""

    K: sp.csc_matrix
    M: sp.csc_matrix
    dof: DofMap
    eta: float

    @property
    def n(self) -> int:
        return self.K.shape[0]


def hermiticity_defect(A: sp.spmatrix) -> float:
    d = (A - A.conj().T).tocoo()
    return float(np.abs(d.data).max()) if d.nnz else 0.0


def reduce_pair(K_full: sp.csr_matrix, M_full: sp.csr_matrix,
                mesh: Mesh, eta: float) -> HermitianPair:
    dof = build_dof_map(mesh, eta)
    P = dof.P
    K = (P.conj().T @ K_full @ P).tocsc()
    M = (P.conj().T @ M_full @ P).tocsc()
    for A in (K, M):
        if hermiticity_defect(A) > HERMITICITY_TOL:
            raise RuntimeError("reduced matrix lost hermiticity")
    return HermitianPair(K=K, M=M, dof=dof, eta=eta)


def assemble(mesh: Mesh, eta: float) -> HermitianPair:
    """Assemble and reduce in one go (reuse assemble_full for eta sweeps)."""
    K_full, M_full = assemble_full(mesh)
    return reduce_pair(K_full, M_full, mesh, eta)


def h1_product(pair: HermitianPair, u: np.ndarray, v: np.ndarray) -> complex:
    """<u, v> with respect to K + M (linear in u, conjugate-linear in v)."""
    return complex(np.vdot(v, (pair.K + pair.M) @ u))

def l2_product(pair: HermitianPair, u: np.ndarray, v: np.ndarray) -> complex:
    return complex(np.vdot(v, pair.M @ u))


def h1_norm(pair: HermitianPair, u: np.ndarray) -> float:
    return math.sqrt(max(h1_product(pair, u, u).real, 0.0))


@dataclass(frozen=True)
class EigResult:
    """Lowest eigenpairs: ascending values, M-orthonormal vectors (columns),
    and relative algebraic residuals ||K v - lambda M v|| / ||v||."""

    values: np.ndarray
    vectors: np.ndarray
    residuals: np.ndarray


def _start_vector(n: int) -> np.ndarray:
    return np.random.default_rng(_V0_SEED).standard_normal(n)


def solve_lowest(pair: HermitianPair, m: int, tol: float = 0.0,
                 opinv=None) -> EigResult:
    """m smallest eigenvalues by shift-invert Lanczos on (K + M)^{-1} M.

    opinv may carry a prefactorized solver for K + M (reused across
    calls at the same eta); otherwise one is built here. The starting
    vector is fixed, so repeated runs produce identical output.
    """
    if m >= pair.n:
        raise ValueError("asking for too many eigenvalues")
    if opinv is None:
        opinv = make_shift_invert(pair)
    _, vecs = eigsh(pair.K, k=m, M=pair.M, sigma=-1.0, which="LM",
                    v0=_start_vector(pair.n), tol=tol, OPinv=opinv)
    # Rayleigh-Ritz cleanup in the computed span: ARPACK vectors lose
    # M-orthogonality inside (near-)degenerate clusters, so orthonormalize
    # symmetrically and rediagonalize the projected stiffness block.
    G = vecs.conj().T @ (pair.M @ vecs)
    w, U = np.linalg.eigh(0.5 * (G + G.conj().T))
    vecs = vecs @ (U * w ** -0.5) @ U.conj().T
    A = vecs.conj().T @ (pair.K @ vecs)
    vals, Y = np.linalg.eigh(0.5 * (A + A.conj().T))
    vecs = vecs @ Y
    res = np.empty(m)
    for i in range(m):
        v = vecs[:, i]
        res[i] = np.linalg.norm(pair.K @ v - vals[i] * (pair.M @ v)) / np.linalg.norm(v)
    return EigResult(values=vals, vectors=vecs, residuals=res)


def make_shift_invert(pair: HermitianPair) -> LinearOperator:
    lu = splu((pair.K + pair.M).tocsc())
    return LinearOperator(pair.K.shape, matvec=lu.solve, dtype=complex)


def richardson(lam_h: np.ndarray, lam_h2: np.ndarray) -> np.ndarray:
    """Eliminate the O(h^2) error from values at mesh sizes h and h/2."""
    return (4.0 * np.asarray(lam_h2) - np.asarray(lam_h)) / 3.0


def write_solve_csv(path, rows) -> None:
    """rows: iterable of (eta, epsilon, p, lambda, residual)."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["eta", "epsilon", "p", "lambda", "residual"])
        for eta, eps, p, lam, res in rows:
            w.writerow([repr(float(eta)), repr(float(eps)), int(p),
                        repr(float(lam)), repr(float(res))])


def save_eigvecs(result: EigResult, directory) -> str:
    """Binary dump of an eigenpair set, file name keyed by content hash."""
    blob = result.values.tobytes() + result.vectors.tobytes()
    key = hashlib.sha256(blob).hexdigest()[:16]
    path = os.path.join(directory, f"eigvecs-{key}.npz")
    np.savez(path, values=result.values, vectors=result.vectors,
             residuals=result.residuals)
    return path
