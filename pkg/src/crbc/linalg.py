"""
Sparse and dense linear algebra used by assembly and the solvers.

Only what the discretization needs: symmetric sparse systems solved by
Jacobi-preconditioned conjugate gradients (with an optional cached direct
factorization for repeated solves), the cyclic two-band systems arising
from the boundary projection matrix, and small dense solves / extremal
eigenvalues for operator-norm monitoring and test oracles.
"""

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class SolverError(Exception):
    """Base class for solver failures."""


class CgNonConvergence(SolverError):
    """Conjugate gradients exhausted max_iter; carries the final state."""

    def __init__(self, residual, iterations, x):
        super().__init__(
            "CG did not converge in %d iterations (relative residual %.3e)"
            % (iterations, residual))
        self.residual = residual
        self.iterations = iterations
        self.x = x


class SingularMatrixError(SolverError):
    """The system matrix is singular to working precision."""


# ----------------------------------------------------------------------
# sparse storage
# ----------------------------------------------------------------------

class SparseMatrix:
    """
    Symmetric-friendly sparse matrix in compressed row storage.

    Thin wrapper over a scipy CSR matrix exposing the raw (indptr,
    indices, data) triplet; instances are immutable after construction.
    """

    def __init__(self, csr):
        csr = sp.csr_matrix(csr)
        csr.sum_duplicates()
        csr.sort_indices()
        self._csr = csr

    @classmethod
    def from_coo(cls, rows, cols, values, shape):
        m = sp.coo_matrix((values, (rows, cols)), shape=shape)
        return cls(m.tocsr())

    @property
    def shape(self):
        return self._csr.shape

    @property
    def indptr(self):
        return self._csr.indptr

    @property
    def indices(self):
        return self._csr.indices

    @property
    def data(self):
        return self._csr.data

    @property
    def nnz(self):
        return self._csr.nnz

    def matvec(self, x):
        return self._csr @ np.asarray(x, dtype=float)

    def matvec_transpose(self, x):
        return self._csr.T @ np.asarray(x, dtype=float)

    def __matmul__(self, x):
        return self.matvec(x)

    def diagonal(self):
        return self._csr.diagonal()

    def to_dense(self):
        return self._csr.toarray()

    def submatrix(self, rows, cols):
        """Return the (rows x cols) restriction as a new SparseMatrix."""
        return SparseMatrix(self._csr[np.ix_(rows, cols)].tocsr())

    def is_symmetric(self, tol=1e-12):
        d = self._csr - self._csr.T
        scale = max(np.abs(self.data).max(initial=0.0), 1.0)
        return np.abs(d.data).max(initial=0.0) <= tol * scale

    def __repr__(self):
        return "SparseMatrix(shape=%s, nnz=%d)" % (self.shape, self.nnz)


class SparseFactorization:
    """
    Cached sparse LU factorization for repeated solves with one matrix.
    """

    def __init__(self, matrix):
        csr = matrix._csr if isinstance(matrix, SparseMatrix) else sp.csr_matrix(matrix)
        try:
            self._lu = spla.splu(csr.tocsc())
        except RuntimeError as err:
            raise SingularMatrixError(str(err)) from None

    def solve(self, b):
        return self._lu.solve(np.asarray(b, dtype=float))


# ----------------------------------------------------------------------
# conjugate gradients
# ----------------------------------------------------------------------

class CgResult:
    """Solution plus the per-iteration residual history."""

    def __init__(self, x, residual_norms, iterations):
        self.x = x
        self.residual_norms = np.asarray(residual_norms)
        self.iterations = iterations


def cg_solve(A, b, tol=1e-12, max_iter=None, x0=None):
    """
    Jacobi-preconditioned conjugate gradients for symmetric positive
    definite systems.

    Parameters
    ----------
    A : SparseMatrix
        Symmetric positive definite on the solved subspace.
    b : array
    tol : float
        Convergence when ||A x - b|| <= tol * ||b||.
    max_iter : int, optional
        Defaults to 10 * n.
    x0 : array, optional
        Warm start.

    Returns
    -------
    CgResult

    Raises
    ------
    CgNonConvergence
        After max_iter iterations without reaching the tolerance; the
        exception carries the final iterate and relative residual.
    """
    b = np.asarray(b, dtype=float)
    n = b.size
    if max_iter is None:
        max_iter = max(10 * n, 50)
    diag = A.diagonal()
    if np.any(diag <= 0):
        raise SolverError("Jacobi preconditioner needs a positive diagonal")
    inv_diag = 1.0 / diag
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - (A @ x)
    b_norm = np.linalg.norm(b)
    if b_norm == 0.0:
        return CgResult(np.zeros(n), [0.0], 0)
    history = [np.linalg.norm(r)]
    if history[0] <= tol * b_norm:
        return CgResult(x, history, 0)
    z = inv_diag * r
    p = z.copy()
    rz = r @ z
    for k in range(1, max_iter + 1):
        Ap = A @ p
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        res = np.linalg.norm(r)
        history.append(res)
        if res <= tol * b_norm:
            return CgResult(x, history, k)
        z = inv_diag * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise CgNonConvergence(history[-1] / b_norm, max_iter, x)


# ----------------------------------------------------------------------
# cyclic two-band systems
# ----------------------------------------------------------------------

class CyclicBidiagonal:
    """
    N x N cyclic two-band matrix: row i holds ``diag[i]`` on the diagonal
    and ``offdiag[i]`` in column ``(i + 1) mod N`` (the wrap entry sits in
    the last row, first column).
    """

    def __init__(self, diag, offdiag):
        self.diag = np.asarray(diag, dtype=float)
        self.offdiag = np.asarray(offdiag, dtype=float)
        if self.diag.shape != self.offdiag.shape or self.diag.ndim != 1:
            raise ValueError("diag and offdiag must be 1-d arrays of equal size")

    @property
    def n(self):
        return self.diag.size

    def to_dense(self):
        n = self.n
        m = np.diag(self.diag)
        m[np.arange(n), (np.arange(n) + 1) % n] += self.offdiag
        return m

    def matvec(self, x):
        x = np.asarray(x, dtype=float)
        return self.diag * x + self.offdiag * np.roll(x, -1)

    def matvec_transpose(self, x):
        x = np.asarray(x, dtype=float)
        return self.diag * x + np.roll(self.offdiag * x, 1)

    def det_relative(self):
        """
        Determinant divided by scale^N, scale = max band magnitude.
        The closed form is prod(diag) + (-1)^(N-1) prod(offdiag).
        """
        scale = max(np.abs(self.diag).max(initial=0.0),
                    np.abs(self.offdiag).max(initial=0.0))
        if scale == 0.0:
            return 0.0
        c = self.diag / scale
        d = self.offdiag / scale
        sign_c = float(np.prod(np.sign(c)))
        sign_d = float(np.prod(np.sign(d)))
        with np.errstate(divide="ignore"):
            log_c = np.sum(np.log(np.abs(c))) if np.all(c != 0) else -np.inf
            log_d = np.sum(np.log(np.abs(d))) if np.all(d != 0) else -np.inf
        term_c = sign_c * np.exp(log_c) if np.isfinite(log_c) else 0.0
        term_d = sign_d * np.exp(log_d) if np.isfinite(log_d) else 0.0
        return term_c + (-1.0) ** (self.n - 1) * term_d


def cyclic_bidiagonal_solve(diag, offdiag, b, transpose=False):
    """
    Exact solve of the cyclic two-band system.

    The wrap entry is removed as a rank-one update, so the solve reduces to
    two bidiagonal triangular sweeps (Sherman-Morrison).  A dense fallback
    guards the rare case of a well-posed system with a (near-)singular
    bidiagonal part.

    Parameters
    ----------
    diag, offdiag : arrays, length N
        Bands as in :class:`CyclicBidiagonal`.
    b : array, length N
    transpose : bool
        Solve with the transposed matrix instead.

    Raises
    ------
    SingularMatrixError
        When the scaled determinant falls below 1e-14.
    """
    mat = CyclicBidiagonal(diag, offdiag)
    b = np.asarray(b, dtype=float)
    n = mat.n
    if b.shape != (n,):
        raise ValueError("right-hand side has wrong length")
    if abs(mat.det_relative()) <= 1e-14:
        raise SingularMatrixError(
            "cyclic two-band matrix of size %d is singular to working "
            "precision" % n)
    if n == 1:
        return b / (mat.diag[0] + mat.offdiag[0])

    c, d = mat.diag, mat.offdiag
    tiny = 1e-300
    if np.min(np.abs(c)) < tiny:
        return _dense_cyclic_solve(mat, b, transpose)

    if not transpose:
        # T x = y by backward substitution (T upper bidiagonal), wrap entry
        # d[n-1] e_{n-1} e_0^T restored by Sherman-Morrison.
        x1 = _solve_upper_bidiagonal(c, d, b)
        e = np.zeros(n)
        e[n - 1] = d[n - 1]
        x2 = _solve_upper_bidiagonal(c, d, e)
        denom = 1.0 + x2[0]
        x = x1 - x2 * (x1[0] / denom)
    else:
        # transposed system: lower bidiagonal sweeps, wrap in row 0.
        x1 = _solve_lower_bidiagonal(c, d, b)
        e = np.zeros(n)
        e[0] = d[n - 1]
        x2 = _solve_lower_bidiagonal(c, d, e)
        denom = 1.0 + x2[n - 1]
        x = x1 - x2 * (x1[n - 1] / denom)

    apply_ = mat.matvec_transpose if transpose else mat.matvec
    residual = np.linalg.norm(apply_(x) - b)
    if not np.isfinite(residual) or residual > 1e-10 * max(np.linalg.norm(b), 1.0):
        return _dense_cyclic_solve(mat, b, transpose)
    return x


def _solve_upper_bidiagonal(c, d, b):
    n = c.size
    x = np.empty(n)
    x[n - 1] = b[n - 1] / c[n - 1]
    for i in range(n - 2, -1, -1):
        x[i] = (b[i] - d[i] * x[i + 1]) / c[i]
    return x


def _solve_lower_bidiagonal(c, d, b):
    # rows of T^T: c[i] x[i] + d[i-1] x[i-1] = b[i]
    n = c.size
    x = np.empty(n)
    x[0] = b[0] / c[0]
    for i in range(1, n):
        x[i] = (b[i] - d[i - 1] * x[i - 1]) / c[i]
    return x


def _dense_cyclic_solve(mat, b, transpose):
    m = mat.to_dense()
    if transpose:
        m = m.T
    return dense_solve(m, b)


# ----------------------------------------------------------------------
# dense helpers
# ----------------------------------------------------------------------

def dense_solve(A, b):
    """Pivoted dense solve; raises SingularMatrixError on singular input."""
    A = np.asarray(A, dtype=float)
    try:
        return np.linalg.solve(A, np.asarray(b, dtype=float))
    except np.linalg.LinAlgError as err:
        raise SingularMatrixError(str(err)) from None


def dense_eig_max(A, tol=1e-10, max_iter=20000, seed=0):
    """
    Largest eigenvalue of a symmetric positive semidefinite matrix by power
    iteration, converged to relative tolerance on the Rayleigh quotient.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = A @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
        lam_new = v @ (A @ v)
        if abs(lam_new - lam) <= tol * max(abs(lam_new), 1e-30):
            return float(lam_new)
        lam = lam_new
    raise SolverError("power iteration did not converge")
