"""Dense complex linear algebra kernels.

Two families live here.  The finite-precision kernels (``matvec_fp``,
``dot_fp``, ``axpy_fp``) first round their inputs entrywise into the target
format and then execute every elementary real operation rounded into that
format, accumulating sums sequentially left to right; with the native format
they reduce to plain float64 arithmetic in the identical operation order.
The full-precision reference kernels (norms, Hermitian eigendecomposition,
PSD square root, Cholesky solve/inverse) back the contracts that need an
accurate answer: condition numbers, correlation square roots, and the direct
detector baseline.

All kernels accept leading batch dimensions and treat the trailing one (or
two) axes as the vector (or matrix) axes.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

from fpmimo.errors import ContractViolation
from fpmimo.formats import FloatFormat, _cadd, _cmul

__all__ = [
    "matvec_fp",
    "dot_fp",
    "axpy_fp",
    "norm2",
    "hermitian_eig",
    "condition_number",
    "matrix_sqrt_psd",
    "solve_direct",
    "invert_hermitian",
    "assert_hermitian",
]

_U64 = 2.0 ** -53


def _as_complex(a):
    return np.asarray(a, dtype=np.complex128)


def matvec_fp(A, v, fmt: FloatFormat) -> np.ndarray:
    """Matrix-vector product with all arithmetic rounded into ``fmt``.

    ``A`` has shape ``(..., m, n)`` and ``v`` shape ``(..., n)``.  Entries are
    rounded into the format first; each output entry is the left-to-right sum
    of rounded complex products.  Overflow produces infinities rather than
    raising.
    """
    A = _as_complex(A)
    v = _as_complex(v)
    if A.ndim < 2 or A.shape[-1] != v.shape[-1]:
        raise ContractViolation(
            f"incompatible shapes for matvec: {A.shape} x {v.shape}"
        )
    with np.errstate(over="ignore", invalid="ignore"):
        ar, ai = fmt.round(A.real), fmt.round(A.imag)
        vr, vi = fmt.round(v.real), fmt.round(v.imag)
        vr = vr[..., None, :]
        vi = vi[..., None, :]
        tr, ti = _cmul(ar, ai, vr, vi, fmt)
        sr = tr[..., 0]
        si = ti[..., 0]
        for k in range(1, A.shape[-1]):
            sr, si = _cadd(sr, si, tr[..., k], ti[..., k], fmt)
    return sr + 1j * si


def dot_fp(u, v, fmt: FloatFormat):
    """Conjugated inner product ``u^H v`` rounded into ``fmt``.

    Inputs are rounded entrywise, products are rounded complex multiplies,
    and the accumulation runs sequentially left to right.  Empty vectors give
    zero.  Shapes ``(..., n)``; returns shape ``(...,)``.
    """
    u = _as_complex(u)
    v = _as_complex(v)
    if u.shape[-1] != v.shape[-1]:
        raise ContractViolation(f"length mismatch: {u.shape} vs {v.shape}")
    n = u.shape[-1]
    if n == 0:
        out = np.zeros(np.broadcast_shapes(u.shape[:-1], v.shape[:-1]),
                       dtype=np.complex128)
        return out if out.ndim else complex(out)
    with np.errstate(over="ignore", invalid="ignore"):
        ur, ui = fmt.round(u.real), fmt.round(u.imag)
        vr, vi = fmt.round(v.real), fmt.round(v.imag)
        tr, ti = _cmul(ur, -ui, vr, vi, fmt)
        sr = tr[..., 0]
        si = ti[..., 0]
        for k in range(1, n):
            sr, si = _cadd(sr, si, tr[..., k], ti[..., k], fmt)
    out = sr + 1j * np.asarray(si)
    return out if np.ndim(out) else complex(out)


def axpy_fp(a, x, y, fmt: FloatFormat) -> np.ndarray:
    """Scaled vector update ``y + a*x`` with rounded complex arithmetic.

    ``a`` may be a scalar or carry batch shape ``(...,)`` against vectors of
    shape ``(..., n)``.
    """
    x = _as_complex(x)
    y = _as_complex(y)
    if x.shape[-1] != y.shape[-1]:
        raise ContractViolation(f"length mismatch: {x.shape} vs {y.shape}")
    a = _as_complex(a)
    if a.ndim:
        a = a[..., None]
    with np.errstate(over="ignore", invalid="ignore"):
        ar, ai = fmt.round(a.real), fmt.round(a.imag)
        xr, xi = fmt.round(x.real), fmt.round(x.imag)
        yr, yi = fmt.round(y.real), fmt.round(y.imag)
        tr, ti = _cmul(ar, ai, xr, xi, fmt)
        sr, si = _cadd(yr, yi, tr, ti, fmt)
    return sr + 1j * si


def norm2(v) -> float:
    """Euclidean norm with overflow-safe scaling, trailing axis."""
    v = _as_complex(v)
    with np.errstate(over="ignore", invalid="ignore"):
        mags = np.abs(v)
        scale = np.max(mags, axis=-1, initial=0.0)
        scale = np.where(np.isfinite(scale) & (scale > 0), scale, 1.0)
        scaled = mags / scale[..., None]
        out = scale * np.sqrt(np.sum(scaled * scaled, axis=-1))
        # Restore infinities that scaling hid.
        inf_rows = np.any(np.isinf(mags), axis=-1)
        out = np.where(inf_rows, np.inf, out)
    return out if out.ndim else float(out)


def assert_hermitian(A, what: str = "matrix") -> np.ndarray:
    """Validate a square, numerically Hermitian matrix and return it symmetrized.

    Tolerance is 10 * u * ||A||_F in Frobenius norm, wide enough for rounding
    accumulated while forming Gram matrices but tight enough to catch
    transposition bugs.
    """
    A = _as_complex(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ContractViolation(f"{what} must be square, got shape {A.shape}")
    defect = np.linalg.norm(A - A.conj().T)
    scale = np.linalg.norm(A)
    if defect > 10.0 * _U64 * max(scale, 1e-300):
        raise ContractViolation(
            f"{what} is not Hermitian: defect {defect:.3e} vs scale {scale:.3e}"
        )
    return 0.5 * (A + A.conj().T)


def hermitian_eig(A):
    """Full-precision eigendecomposition of a Hermitian matrix.

    Returns ``(eigenvalues, eigenvectors)`` with eigenvalues ascending and
    ``A @ V = V @ diag(w)`` up to roundoff.
    """
    H = assert_hermitian(A)
    w, V = np.linalg.eigh(H)
    return w, V


def condition_number(A) -> float:
    """Spectral condition number of a Hermitian positive definite matrix."""
    H = assert_hermitian(A)
    w = np.linalg.eigvalsh(H)
    if w[0] <= 0:
        raise ContractViolation(
            f"matrix is not positive definite (min eigenvalue {w[0]:.3e})"
        )
    return float(w[-1] / w[0])


def matrix_sqrt_psd(R) -> np.ndarray:
    """Unique Hermitian PSD square root via eigendecomposition.

    Eigenvalues slightly negative from roundoff are clipped to zero; anything
    below ``-10 n u ||R||_2`` is a contract violation.
    """
    H = assert_hermitian(R, "PSD matrix")
    w, V = np.linalg.eigh(H)
    n = H.shape[0]
    tol = 10.0 * n * _U64 * max(abs(w[0]), abs(w[-1]))
    if w[0] < -tol:
        raise ContractViolation(
            f"matrix is not PSD (min eigenvalue {w[0]:.3e}, tolerance {-tol:.3e})"
        )
    s = np.sqrt(np.clip(w, 0.0, None))
    S = (V * s) @ V.conj().T
    return 0.5 * (S + S.conj().T)


def solve_direct(A, b) -> np.ndarray:
    """Solve a Hermitian positive definite system by Cholesky factorization."""
    H = assert_hermitian(A)
    b = _as_complex(b)
    try:
        cf = scipy.linalg.cho_factor(H, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise ContractViolation(f"Cholesky breakdown, matrix not PD: {exc}") from exc
    return scipy.linalg.cho_solve(cf, b, check_finite=False)


def invert_hermitian(A) -> np.ndarray:
    """Inverse of a Hermitian positive definite matrix via Cholesky."""
    H = assert_hermitian(A)
    try:
        cf = scipy.linalg.cho_factor(H, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise ContractViolation(f"Cholesky breakdown, matrix not PD: {exc}") from exc
    inv = scipy.linalg.cho_solve(cf, np.eye(H.shape[0], dtype=np.complex128),
                                 check_finite=False)
    return 0.5 * (inv + inv.conj().T)


# Internal batched helpers. These keep the Monte-Carlo harness fast while the
# public single-system functions above stay the reference implementations.

def _solve_direct_batch(A, b) -> np.ndarray:
    """Cholesky solve for a batch of HPD systems, shapes (T,n,n) and (T,n)."""
    A = _as_complex(A)
    b = _as_complex(b)
    out = np.empty_like(b)
    for t in range(A.shape[0]):
        cf = scipy.linalg.cho_factor(A[t], lower=True, check_finite=False)
        out[t] = scipy.linalg.cho_solve(cf, b[t], check_finite=False)
    return out


def _norm2_batch(v) -> np.ndarray:
    """norm2 along the trailing axis, always returning an ndarray."""
    return np.asarray(norm2(v))


def _spectral_norm_batch(A) -> np.ndarray:
    """Largest-magnitude eigenvalue of Hermitian batches, shape (T,)."""
    w = np.linalg.eigvalsh(_as_complex(A))
    return np.maximum(np.abs(w[..., 0]), np.abs(w[..., -1]))
