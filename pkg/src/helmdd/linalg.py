"""Complex linear-algebra kernels: factorizations, eigensolvers and GMRES."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

logger = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    """Base class for numerical failures (singular pivots, no convergence)."""


class SingularMatrixError(NumericalError):
    def __init__(self, message: str, row: int | None = None):
        super().__init__(message)
        self.row = row


class NotPositiveDefiniteError(NumericalError):
    def __init__(self, message: str, minor: int):
        super().__init__(message)
        self.minor = minor


class EigenConvergenceError(NumericalError):
    pass


class SparseLU:
    """Sparse LU factorization of a square complex matrix.

    Thin wrapper around SuperLU with a column ordering that reduces fill and
    threshold partial pivoting. A factor is rejected as singular when its
    smallest ``|U_ii|`` drops below ``pivot_rtol`` times the largest.
    """

    def __init__(self, A, pivot_rtol: float = 1e-12):
        A = sp.csc_matrix(A)
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"matrix must be square, got {A.shape}")
        self.shape = A.shape
        self.dtype = np.result_type(A.dtype, np.complex128)
        if A.shape[0] == 0:
            self._lu = None
            return
        try:
            self._lu = spla.splu(A.astype(self.dtype), permc_spec="COLAMD")
        except RuntimeError as exc:
            raise SingularMatrixError(f"sparse LU failed: {exc}", row=_singular_row(A)) from exc
        d = np.abs(self._lu.U.diagonal())
        scale = d.max() if d.size else 0.0
        bad = np.flatnonzero(d <= pivot_rtol * scale)
        if scale == 0.0 or bad.size:
            row = int(self._lu.perm_r.argsort()[bad[0]]) if bad.size else 0
            raise SingularMatrixError(
                f"numerically singular pivot (|u|/max = {d.min() / max(scale, 1e-300):.2e})",
                row=row,
            )

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b)
        if self._lu is None:
            return np.zeros_like(b, dtype=self.dtype)
        return self._lu.solve(np.ascontiguousarray(b, dtype=self.dtype))


def _singular_row(A: sp.csc_matrix, max_dense: int = 4000) -> int | None:
    """Row of the first vanishing pivot of a dense partial-pivoting LU (small matrices only)."""
    if A.shape[0] > max_dense:
        return None
    P, _, U = sla.lu(A.toarray())
    d = np.abs(np.diag(U))
    k = int(np.argmin(d > 1e-14 * max(d.max(), 1e-300)))
    return int(np.flatnonzero(P[:, k])[0])


def sparse_lu(A, pivot_rtol: float = 1e-12) -> SparseLU:
    return SparseLU(A, pivot_rtol=pivot_rtol)


@dataclass
class DenseLU:
    lu: np.ndarray
    piv: np.ndarray

    def solve(self, b: np.ndarray) -> np.ndarray:
        return sla.lu_solve((self.lu, self.piv), b)

    def factors(self):
        """Return ``(P, L, U)`` with ``P @ A = L @ U``."""
        n = self.lu.shape[0]
        L = np.tril(self.lu, -1) + np.eye(n)
        U = np.triu(self.lu)
        perm = np.arange(n)
        for i, p in enumerate(self.piv):
            perm[i], perm[p] = perm[p], perm[i]
        P = np.eye(n)[perm]
        return P, L, U

    def pivots(self) -> np.ndarray:
        return np.abs(np.diag(self.lu))


def dense_lu(A: np.ndarray) -> DenseLU:
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"matrix must be square, got {A.shape}")
    lu, piv = sla.lu_factor(A, check_finite=True)
    return DenseLU(lu, piv)


def cholesky(M: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of a real symmetric positive-definite matrix."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"matrix must be square, got {M.shape}")
    if M.size == 0:
        return M.copy()
    L, info = sla.lapack.dpotrf(M, lower=1, clean=1)
    if info > 0:
        raise NotPositiveDefiniteError(
            f"leading minor of order {info} is not positive definite", minor=int(info)
        )
    if info < 0:
        raise ValueError(f"illegal argument {-info} to dpotrf")
    return L


@dataclass
class EigenPairs:
    """Eigenvalues and unit 2-norm eigenvectors (columns of ``vectors``)."""

    values: np.ndarray
    vectors: np.ndarray

    def __len__(self) -> int:
        return len(self.values)

    def residuals(self, S: np.ndarray, M: np.ndarray | None = None) -> np.ndarray:
        """Relative pencil residuals ``|S v - lam M v| / ((|S|_F + |lam| |M|_F) |v|)``."""
        V = self.vectors
        MV = V if M is None else M @ V
        normM = np.sqrt(S.shape[0]) if M is None else np.linalg.norm(M)
        res = np.linalg.norm(S @ V - MV * self.values, axis=0)
        scale = (np.linalg.norm(S) + np.abs(self.values) * normM) * np.linalg.norm(V, axis=0)
        return res / scale


def dense_eig(B: np.ndarray) -> EigenPairs:
    """All eigenpairs of a general complex square matrix.

    Uses LAPACK's Hessenberg reduction followed by shifted QR iteration.
    """
    B = np.asarray(B, dtype=complex)
    if B.ndim != 2 or B.shape[0] != B.shape[1]:
        raise ValueError(f"matrix must be square, got {B.shape}")
    try:
        w, V = sla.eig(B)
    except np.linalg.LinAlgError as exc:
        raise EigenConvergenceError(f"QR iteration failed to converge: {exc}") from exc
    V = V / np.linalg.norm(V, axis=0)
    return EigenPairs(w, V)


def generalized_eig(S: np.ndarray, M: np.ndarray) -> EigenPairs:
    """Solve ``S v = lam M v`` with ``M`` real SPD by Cholesky reduction.

    With ``M = L L^T`` the pencil becomes the standard problem for
    ``L^{-1} S L^{-T}``; eigenvectors are mapped back by ``v = L^{-T} w`` and
    renormalised.
    """
    S = np.asarray(S, dtype=complex)
    if S.shape != np.shape(M):
        raise ValueError(f"shape mismatch {S.shape} vs {np.shape(M)}")
    L = cholesky(M)
    T = sla.solve_triangular(L, S, lower=True)
    B = sla.solve_triangular(L, T.T, lower=True).T
    pairs = dense_eig(B)
    V = sla.solve_triangular(L.T, pairs.vectors, lower=False)
    V = V / np.linalg.norm(V, axis=0)
    return EigenPairs(pairs.values, V)


@dataclass
class GMRESResult:
    x: np.ndarray
    iterations: int
    residuals: list[float] = field(default_factory=list)
    converged: bool = False
    breakdown: bool = False
    true_residual: float = np.nan

    def write_history(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            fh.write("iter,residual\n")
            for i, r in enumerate(self.residuals):
                fh.write(f"{i},{r!r}\n")


def _givens(a: complex, b: complex):
    r = np.hypot(abs(a), abs(b))
    if r == 0.0:
        return 1.0, 0.0, 0.0
    return a / r, b / r, r


def gmres(
    apply_A: Callable[[np.ndarray], np.ndarray],
    apply_M: Callable[[np.ndarray], np.ndarray] | None,
    b: np.ndarray,
    rtol: float = 1e-6,
    max_it: int = 500,
    side: str = "right",
) -> GMRESResult:
    """Full (unrestarted) preconditioned GMRES from a zero initial guess.

    Arnoldi uses modified Gram-Schmidt with one reorthogonalisation pass.
    With ``side="right"`` the Krylov space is built on ``A M`` and the
    monitored residual is the true residual ``|b - A x| / |b|``; with
    ``side="left"`` it is built on ``M A`` and the preconditioned residual is
    monitored. ``iterations`` is the Krylov dimension at exit and
    ``residuals[0]`` is the initial relative residual 1.
    """
    if not rtol > 0:
        raise ValueError("rtol must be positive")
    if side not in ("right", "left"):
        raise ValueError(f"side must be 'right' or 'left', got {side!r}")
    M = apply_M if apply_M is not None else (lambda v: v)
    b = np.asarray(b, dtype=complex)
    n = b.shape[0]

    if side == "right":
        op = lambda v: apply_A(M(v))  # noqa: E731
        r0 = b
    else:
        op = lambda v: M(apply_A(v))  # noqa: E731
        r0 = M(b)
    beta = np.linalg.norm(r0)
    if beta == 0.0:
        return GMRESResult(np.zeros(n, dtype=complex), 0, [0.0], True, False, 0.0)

    m = min(max_it, n)
    V = [r0 / beta]
    H = np.zeros((m + 1, m), dtype=complex)
    cs = np.zeros(m, dtype=complex)
    sn = np.zeros(m, dtype=complex)
    g = np.zeros(m + 1, dtype=complex)
    g[0] = beta
    history = [1.0]
    converged = breakdown = False
    k = 0
    for j in range(m):
        w = np.array(op(V[j]), dtype=complex)
        wnorm0 = np.linalg.norm(w)
        for _ in range(2):
            for i in range(j + 1):
                hij = np.vdot(V[i], w)
                H[i, j] += hij
                w -= hij * V[i]
        hnext = np.linalg.norm(w)
        H[j + 1, j] = hnext

        for i in range(j):
            hi, hi1 = H[i, j], H[i + 1, j]
            H[i, j] = np.conj(cs[i]) * hi + np.conj(sn[i]) * hi1
            H[i + 1, j] = -sn[i] * hi + cs[i] * hi1
        cs[j], sn[j], H[j, j] = _givens(H[j, j], H[j + 1, j])
        H[j + 1, j] = 0.0
        g[j + 1] = -sn[j] * g[j]
        g[j] = np.conj(cs[j]) * g[j]

        k = j + 1
        rel = abs(g[j + 1]) / beta
        history.append(float(rel))
        if rel <= rtol:
            converged = True
            break
        if hnext <= 1e-14 * max(wnorm0, 1.0):
            breakdown = True
            logger.warning("GMRES breakdown at iteration %d (relative residual %.3e)", k, rel)
            break
        V.append(w / hnext)

    y = sla.solve_triangular(H[:k, :k], g[:k], lower=False)
    u = np.zeros(n, dtype=complex)
    for i in range(k):
        u += y[i] * V[i]
    x = M(u) if side == "right" else u
    true_rel = float(np.linalg.norm(b - apply_A(x)) / np.linalg.norm(b))
    return GMRESResult(np.asarray(x), k, history, converged, breakdown, true_rel)
