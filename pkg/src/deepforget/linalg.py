"""Dense float64 kernels shared by the rest of the package."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import qr, solve_triangular


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    """Coerce to a finite, C-contiguous float64 2-D array."""
    m = np.ascontiguousarray(x, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise ValueError(f"{name}: expected 2-D array, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name}: non-finite entries")
    return m


@dataclass(frozen=True)
class RankReport:
    rank: int
    cols: int
    tol: float

    @property
    def deficient(self) -> bool:
        return self.rank < self.cols


def least_squares(A, B) -> tuple[np.ndarray, RankReport]:
    """Column-wise argmin ||A W - B||_F via Householder QR with column pivoting.

    Rank-deficient designs get the minimum-norm solution through a complete
    orthogonal decomposition; the report records the numerical rank.
    """
    A = as_matrix(A, "A")
    B = np.asarray(B, dtype=np.float64)
    vector_rhs = B.ndim == 1
    B = as_matrix(B.reshape(-1, 1) if vector_rhs else B, "B")
    n, p = A.shape
    if B.shape[0] != n:
        raise ValueError(f"row mismatch: A has {n} rows, B has {B.shape[0]}")

    Q, R, perm = qr(A, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = max(n, p) * np.finfo(np.float64).eps * (diag[0] if diag.size else 0.0)
    rank = int(np.sum(diag > tol))
    QtB = Q.T @ B

    Z = np.zeros((p, B.shape[1]))
    if rank == p:
        Z = solve_triangular(R, QtB[:p], lower=False)
    elif rank > 0:
        # [R11 R12] = T^T V^T with V orthonormal columns; minimum-norm x = V T^-T c
        V, T = np.linalg.qr(R[:rank, :].T, mode="reduced")
        y = solve_triangular(T, QtB[:rank], trans="T", lower=False)
        Z = V @ y
    W = np.empty_like(Z)
    W[perm] = Z
    if vector_rhs:
        W = W.ravel()
    return W, RankReport(rank=rank, cols=p, tol=float(tol))


def softmax(h) -> np.ndarray:
    """Row-wise softmax with max subtraction; accepts a vector or a batch."""
    h = np.asarray(h, dtype=np.float64)
    z = h - np.max(h, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def log_softmax(h) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    z = h - np.max(h, axis=-1, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


def entropy(p) -> np.ndarray | float:
    """Shannon entropy in nats along the last axis, with 0 log 0 = 0."""
    p = np.asarray(p, dtype=np.float64)
    safe = np.where(p > 0, p, 1.0)
    out = -np.sum(np.where(p > 0, p * np.log(safe), 0.0), axis=-1)
    out = np.maximum(out, 0.0)
    return float(out) if out.ndim == 0 else out


def softmax_entropy(h) -> np.ndarray | float:
    """Entropy of softmax(h) computed from log-probabilities (no underflow at 0)."""
    logp = log_softmax(h)
    out = np.maximum(-np.sum(np.exp(logp) * logp, axis=-1), 0.0)
    return float(out) if out.ndim == 0 else out


def frob_and_row_norms(M) -> tuple[float, np.ndarray]:
    M = np.asarray(M, dtype=np.float64)
    if M.ndim == 1:
        M = M.reshape(1, -1)
    rows = np.sqrt(np.sum(M * M, axis=1))
    return float(np.linalg.norm(M)), rows
