"""Top-k Hessian eigenpair estimates from matrix-free products.

The sketch is built by orthogonal subspace iteration over a ``v -> H v``
closure followed by a Rayleigh-Ritz step on the projected k x k matrix
(``block_lanczos`` below). Exactly ``(iters + 1) * k`` closure calls are made
per build.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolationError, NumericOverflowError, OracleUnavailableError

log = logging.getLogger(__name__)

ORTHO_TOL = 1e-8
RANK_DEFICIENCY_TOL = 1e-12


@dataclass(frozen=True)
class Sketch:
    """Top-k eigenvalue estimates and an orthonormal basis of their directions.

    ``eigvals`` is sorted descending by signed value and may contain negative
    entries; ``refreshed_at`` is the optimizer step at which the sketch was
    built. k = 0 denotes the empty sketch.
    """

    eigvals: np.ndarray
    basis: np.ndarray
    refreshed_at: int = 0

    def __post_init__(self):
        vals = np.asarray(self.eigvals, dtype=np.float64)
        basis = np.asarray(self.basis, dtype=np.float64)
        object.__setattr__(self, "eigvals", vals)
        object.__setattr__(self, "basis", basis)
        if basis.ndim != 2 or basis.shape[1] != vals.size:
            raise ContractViolationError(
                f"basis shape {basis.shape} inconsistent with {vals.size} eigenvalues"
            )
        if vals.size:
            if np.any(np.diff(vals) > 0):
                raise ContractViolationError("eigvals must be sorted descending")
            gram = basis.T @ basis
            if np.max(np.abs(gram - np.eye(vals.size))) > ORTHO_TOL:
                raise ContractViolationError("basis columns are not orthonormal")

    @property
    def k(self) -> int:
        return int(self.eigvals.size)

    @property
    def has_negative(self) -> bool:
        return bool(self.eigvals.size and self.eigvals[-1] < 0)

    @staticmethod
    def empty(n: int, refreshed_at: int = 0) -> "Sketch":
        return Sketch(np.empty(0), np.empty((n, 0)), refreshed_at)


@dataclass(frozen=True)
class LanczosConfig:
    """Knobs for one sketch build: rank k, iteration count, start seed."""

    k: int
    iters: int = 10
    seed: int = 0
    reorth: bool = True

    def __post_init__(self):
        if self.k < 0:
            raise ContractViolationError(f"k must be >= 0, got {self.k}")
        if self.iters < 1:
            raise ContractViolationError(f"iters must be >= 1, got {self.iters}")


def qr_orthonormalize(m, rng=None) -> np.ndarray:
    """Orthonormalize the columns of an n x k matrix (modified Gram-Schmidt).

    Columns that become numerically zero after projection (norm below
    ``RANK_DEFICIENCY_TOL``) are repaired with a fresh random direction; each
    repair is logged. Signs are normalized so the first nonzero entry of
    every column is positive.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ContractViolationError("expected a 2-d matrix")
    n, k = m.shape
    if k > n:
        raise ContractViolationError(f"need k <= n, got shape {m.shape}")
    q = m.copy()
    for j in range(k):
        v = q[:, j].copy()
        for _ in range(2):  # second pass restores orthogonality lost to rounding
            v -= q[:, :j] @ (q[:, :j].T @ v)
        norm = np.linalg.norm(v)
        if norm < RANK_DEFICIENCY_TOL:
            if rng is None:
                rng = np.random.default_rng(0)
            log.warning("rank-deficient column %d repaired with a random direction", j)
            while norm < RANK_DEFICIENCY_TOL:
                v = rng.standard_normal(n)
                for _ in range(2):
                    v -= q[:, :j] @ (q[:, :j].T @ v)
                norm = np.linalg.norm(v)
        v /= norm
        nz = np.nonzero(v)[0]
        if nz.size and v[nz[0]] < 0:
            v = -v
        q[:, j] = v
    return q


def jacobi_eigh(a, tol: float = 1e-12, max_sweeps: int = 60):
    """Symmetric eigendecomposition by cyclic Jacobi rotations.

    Intended for the small projected matrices (k x k); returns eigenvalues
    ascending with matching eigenvector columns.
    """
    a = np.asarray(a, dtype=np.float64)
    k = a.shape[0]
    if a.shape != (k, k):
        raise ContractViolationError("jacobi_eigh expects a square matrix")
    mat = a.copy()
    vecs = np.eye(k)
    if k == 1:
        return mat.ravel().copy(), vecs
    scale = max(np.linalg.norm(mat), 1e-300)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.tril(mat, -1) ** 2) * 2.0)
        if off <= tol * scale:
            break
        for p in range(k - 1):
            for q in range(p + 1, k):
                apq = mat[p, q]
                if abs(apq) <= tol * scale / k:
                    continue
                tau = (mat[q, q] - mat[p, p]) / (2.0 * apq)
                t = np.sign(tau) / (abs(tau) + np.hypot(1.0, tau)) if tau != 0 else 1.0
                c = 1.0 / np.hypot(1.0, t)
                s = t * c
                rot_p = c * mat[:, p] - s * mat[:, q]
                rot_q = s * mat[:, p] + c * mat[:, q]
                mat[:, p], mat[:, q] = rot_p, rot_q
                rot_p = c * mat[p, :] - s * mat[q, :]
                rot_q = s * mat[p, :] + c * mat[q, :]
                mat[p, :], mat[q, :] = rot_p, rot_q
                rot_p = c * vecs[:, p] - s * vecs[:, q]
                rot_q = s * vecs[:, p] + c * vecs[:, q]
                vecs[:, p], vecs[:, q] = rot_p, rot_q
    vals = np.diag(mat).copy()
    order = np.argsort(vals)
    return vals[order], vecs[:, order]


def block_lanczos(hvp_closure, n: int, cfg: LanczosConfig, v0=None) -> Sketch:
    """Estimate the top-k eigenpairs of the symmetric operator behind ``hvp_closure``.

    Power-iterates an orthonormal n x k block through the operator ``iters``
    times, then solves the projected k x k eigenproblem and returns the Ritz
    pairs sorted by signed eigenvalue, descending. A non-finite product
    aborts the build with ``NumericOverflowError`` so the caller can keep a
    previous sketch.

    ``v0`` overrides the seeded random start block (used by invariance tests).
    """
    if cfg.k < 1:
        raise ContractViolationError("block_lanczos needs k >= 1; use Sketch.empty for k = 0")
    if cfg.k > n:
        raise ContractViolationError(f"k = {cfg.k} exceeds dimension n = {n}")
    rng = np.random.default_rng(cfg.seed)
    if v0 is None:
        v0 = rng.standard_normal((n, cfg.k))
    else:
        v0 = np.asarray(v0, dtype=np.float64)
        if v0.shape != (n, cfg.k):
            raise ContractViolationError(f"v0 shape {v0.shape} != ({n}, {cfg.k})")
    v = qr_orthonormalize(v0, rng)

    def apply_block(block):
        cols = []
        for i in range(cfg.k):
            hv = np.asarray(hvp_closure(block[:, i]), dtype=np.float64)
            if not np.all(np.isfinite(hv)):
                raise NumericOverflowError("non-finite Hessian-vector product during sketch build")
            cols.append(hv)
        return np.column_stack(cols)

    for _ in range(cfg.iters):
        w = apply_block(v)
        if cfg.reorth:
            v = qr_orthonormalize(w, rng)
        else:
            norms = np.linalg.norm(w, axis=0)
            norms[norms < RANK_DEFICIENCY_TOL] = 1.0
            v = w / norms
    if not cfg.reorth:
        v = qr_orthonormalize(v, rng)
    w = apply_block(v)
    projected = v.T @ w
    projected = (projected + projected.T) / 2.0  # kill rounding asymmetry
    vals, small_vecs = jacobi_eigh(projected)
    order = np.argsort(vals)[::-1]  # signed value, descending
    vals = vals[order]
    basis = v @ small_vecs[:, order]
    for j in range(cfg.k):  # deterministic output signs
        nz = np.nonzero(basis[:, j])[0]
        if nz.size and basis[nz[0], j] < 0:
            basis[:, j] = -basis[:, j]
    sk = Sketch(vals, basis)
    if sk.has_negative:
        log.info("sketch contains negative curvature estimates: %s", vals)
    return sk


def sketch_residual(sketch: Sketch, dense_h) -> float:
    """Spectral norm of the Hessian restricted to the sketch's orthogonal complement.

    Computed from the dense oracle: || (I - V V^T) H (I - V V^T) ||_2.
    """
    h = np.asarray(dense_h, dtype=np.float64)
    n = h.shape[0]
    if h.shape != (n, n):
        raise OracleUnavailableError("sketch_residual needs the square dense Hessian")
    if sketch.k == 0:
        m = (h + h.T) / 2.0
    else:
        proj = np.eye(n) - sketch.basis @ sketch.basis.T
        m = proj @ h @ proj
        m = (m + m.T) / 2.0
    vals = np.linalg.eigvalsh(m)
    return float(max(abs(vals[0]), abs(vals[-1])))
