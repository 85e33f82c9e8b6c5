"""Conjugate-gradient detectors with configurable arithmetic precision.

Three solvers share one iteration skeleton:

* ``cg_solve``        everything at working (native) precision,
* ``fp_cg_solve``     matrix-vector products at one format, inner products at
                      another, all remaining updates at the working format,
* ``fp_bj_cg_solve``  the same mixed-precision iteration left-preconditioned
                      by the inverse of the block-diagonal part of A.

``cg_solve`` is an independent straight-line implementation; the two
finite-precision solvers run on a batched engine whose elementary operations
reduce, format by format, to the identical native float64 operations in the
identical order.  With a uniform native precision the engine therefore
reproduces ``cg_solve`` bit for bit, which the test suite asserts exactly.

The preconditioned iteration recomputes the step-size numerator as
``r^H p`` each sweep, which matches the printed recurrence this toolkit
follows; ``rho_update="textbook"`` switches to reusing ``r^H z`` from the
previous sweep.  The two coincide in exact arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from fpmimo.channel import GramSystem
from fpmimo.errors import ContractViolation
from fpmimo.formats import FP64, FloatFormat
from fpmimo.linalg import (
    _norm2_batch,
    assert_hermitian,
    dot_fp,
    axpy_fp,
    invert_hermitian,
    matvec_fp,
    norm2,
)

__all__ = [
    "PrecisionConfig",
    "BlockJacobiPreconditioner",
    "SolverTrace",
    "cg_solve",
    "fp_cg_solve",
    "build_bj_preconditioner",
    "apply_preconditioner",
    "fp_bj_cg_solve",
    "run_batch",
    "BatchResult",
]


@dataclass(frozen=True)
class PrecisionConfig:
    """Format assignment for working, matrix-vector, and inner-product ops.

    The working format must be at least as fine as the other two (equality is
    allowed for ablations).
    """

    work: FloatFormat = FP64
    matvec: FloatFormat = FP64
    inner: FloatFormat = FP64

    def __post_init__(self):
        if (self.work.unit_roundoff > self.matvec.unit_roundoff
                or self.work.unit_roundoff > self.inner.unit_roundoff):
            raise ContractViolation(
                "working precision must be at least as fine as the "
                "matrix-vector and inner-product precisions"
            )

    @classmethod
    def uniform(cls, fmt: FloatFormat) -> "PrecisionConfig":
        return cls(work=fmt, matvec=fmt, inner=fmt)

    @property
    def is_native(self) -> bool:
        return self.work.is_native and self.matvec.is_native and self.inner.is_native

    def labels(self) -> tuple[str, str, str]:
        return (self.work.name, self.matvec.name, self.inner.name)


@dataclass
class BlockJacobiPreconditioner:
    """Inverse of the block-diagonal part of A, stored block by block.

    ``d`` contiguous diagonal blocks of size ``L`` (the last may be smaller
    when built with ``allow_ragged=True``); the full N x N inverse is never
    materialized.
    """

    block_inverses: list[np.ndarray]
    L: int
    d: int
    n: int

    @property
    def block_sizes(self) -> list[int]:
        return [blk.shape[0] for blk in self.block_inverses]

    def slices(self) -> list[slice]:
        out, start = [], 0
        for size in self.block_sizes:
            out.append(slice(start, start + size))
            start += size
        return out

    def dense(self) -> np.ndarray:
        """Assemble the dense inverse (for oracles and small-scale checks)."""
        out = np.zeros((self.n, self.n), dtype=np.complex128)
        for sl, blk in zip(self.slices(), self.block_inverses):
            out[sl, sl] = blk
        return out


def build_bj_preconditioner(A, L: int, *, allow_ragged: bool = False) -> BlockJacobiPreconditioner:
    """Invert the contiguous L x L diagonal blocks of a Hermitian PD matrix.

    ``L`` must divide the dimension unless ``allow_ragged=True``, in which
    case the final block is smaller (used by the block-size sweeps).
    """
    A = assert_hermitian(A)
    n = A.shape[0]
    if not 1 <= L <= n:
        raise ContractViolation(f"block size L={L} out of range for n={n}")
    if n % L and not allow_ragged:
        raise ContractViolation(f"L={L} must divide the system dimension {n}")
    inverses = []
    for start in range(0, n, L):
        stop = min(start + L, n)
        inverses.append(invert_hermitian(A[start:stop, start:stop]))
    return BlockJacobiPreconditioner(block_inverses=inverses, L=L,
                                     d=len(inverses), n=n)


def apply_preconditioner(pc: BlockJacobiPreconditioner, r, fmt: FloatFormat) -> np.ndarray:
    """Blockwise product ``M r`` with arithmetic rounded into ``fmt``."""
    r = np.asarray(r, dtype=np.complex128)
    if r.shape[-1] != pc.n:
        raise ContractViolation(f"vector length {r.shape[-1]} != {pc.n}")
    parts = [matvec_fp(blk, r[..., sl], fmt)
             for sl, blk in zip(pc.slices(), pc.block_inverses)]
    return np.concatenate(parts, axis=-1)


@dataclass
class SolverTrace:
    """Per-iteration record of one solver run.

    Index ``i`` of the history arrays corresponds to iterate ``x_i`` (so
    index 0 is the zero start).  ``residual_gaps`` holds the full-precision
    normalized distance between the true and recurrence residuals,
    ``||b - A x_i - r_i|| / (||A||_2 ||x_ref||)``, when a reference solution
    was supplied.
    """

    algorithm: str
    iterations_run: int
    residual_norms: np.ndarray
    iterate_norms: np.ndarray
    alphas: np.ndarray
    betas: np.ndarray
    x: np.ndarray
    b_norm: float
    converged_at: int | None = None
    breakdown_at: int | None = None
    diverged_at: int | None = None
    residual_gaps: np.ndarray | None = None
    iterates: np.ndarray | None = None
    residual_vectors: np.ndarray | None = None
    x_ref: np.ndarray | None = None
    a_norm: float | None = None

    @property
    def breakdown(self) -> bool:
        return self.breakdown_at is not None

    @property
    def diverged(self) -> bool:
        return self.diverged_at is not None


@dataclass
class BatchResult:
    """Lockstep histories for a batch of systems (leading axis = trial)."""

    x: np.ndarray                      # (T, N) final iterates
    residual_norms: np.ndarray         # (iters+1, T)
    iterate_norms: np.ndarray          # (iters+1, T)
    alphas: np.ndarray                 # (iters, T)
    betas: np.ndarray                  # (iters, T)
    b_norm: np.ndarray                 # (T,)
    converged_at: np.ndarray           # (T,) first iteration under rtol, -1 if none
    breakdown_at: np.ndarray           # (T,) -1 if none
    diverged_at: np.ndarray            # (T,) -1 if none
    iterations_run: int = 0
    residual_gaps: np.ndarray | None = None   # (iters+1, T)
    iterates: np.ndarray | None = None        # (iters+1, T, N)
    residual_vectors: np.ndarray | None = None


class _BatchBlocks:
    """Batched block-diagonal operator: per-block (T, Li, Li) matrices."""

    def __init__(self, mats: list[np.ndarray]):
        self.mats = mats
        self.sizes = [m.shape[-1] for m in mats]
        self.n = sum(self.sizes)

    def slices(self):
        out, start = [], 0
        for size in self.sizes:
            out.append(slice(start, start + size))
            start += size
        return out

    def apply(self, r: np.ndarray, fmt: FloatFormat) -> np.ndarray:
        parts = [matvec_fp(m, r[..., sl], fmt)
                 for sl, m in zip(self.slices(), self.mats)]
        return np.concatenate(parts, axis=-1)

    @classmethod
    def from_single(cls, pc: BlockJacobiPreconditioner) -> "_BatchBlocks":
        return cls([blk[None, :, :] for blk in pc.block_inverses])


def build_blocks_batch(A: np.ndarray, L: int, *, allow_ragged: bool = False) -> _BatchBlocks:
    """Batched block-Jacobi setup for (T, N, N) Hermitian PD systems.

    Positive definiteness of every block is checked with a batched Cholesky;
    the inversion itself solves against the identity.
    """
    A = np.asarray(A, dtype=np.complex128)
    n = A.shape[-1]
    if n % L and not allow_ragged:
        raise ContractViolation(f"L={L} must divide the system dimension {n}")
    mats = []
    for start in range(0, n, L):
        stop = min(start + L, n)
        blocks = A[:, start:stop, start:stop]
        try:
            np.linalg.cholesky(blocks)
        except np.linalg.LinAlgError as exc:
            raise ContractViolation(f"non-PD diagonal block at {start}: {exc}") from exc
        inv = np.linalg.solve(blocks, np.broadcast_to(
            np.eye(stop - start, dtype=np.complex128), blocks.shape).copy())
        mats.append(0.5 * (inv + np.swapaxes(inv.conj(), -1, -2)))
    return _BatchBlocks(mats)


def _wdiv(num, den, fmt: FloatFormat):
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.asarray(num) / np.asarray(den)
    return q if fmt.is_native else fmt.round_complex(q)


def run_batch(A, b, max_iters: int, prec: PrecisionConfig | None = None,
              blocks: _BatchBlocks | None = None, *,
              rho_update: str = "as_written", rtol: float = 1e-6,
              x_ref: np.ndarray | None = None, a_norm: np.ndarray | None = None,
              record_gaps: bool = False, record_iterates: bool = False,
              record_residual_vectors: bool = False) -> BatchResult:
    """Run the (optionally preconditioned) mixed-precision CG iteration.

    ``A`` has shape (T, N, N) and ``b`` shape (T, N).  All T systems advance
    in lockstep; per-trial values equal what a one-system run would produce
    because every elementary operation is elementwise across trials.

    Lanes that hit non-positive curvature are frozen and flagged as
    breakdowns; lanes that produce non-finite iterates are frozen at the last
    finite iterate and flagged as diverged.
    """
    if prec is None:
        prec = PrecisionConfig()
    if rho_update not in ("as_written", "textbook"):
        raise ContractViolation(f"unknown rho_update variant {rho_update!r}")
    if max_iters < 1:
        raise ContractViolation("max_iters must be at least 1")
    A = np.asarray(A, dtype=np.complex128)
    b = np.asarray(b, dtype=np.complex128)
    T, N = b.shape
    wf, mvf, ipf = prec.work, prec.matvec, prec.inner

    if record_gaps:
        if x_ref is None:
            raise ContractViolation("gap recording needs a reference solution")
        if a_norm is None:
            w = np.linalg.eigvalsh(A)
            a_norm = np.maximum(np.abs(w[:, 0]), np.abs(w[:, -1]))
        gap_scale = a_norm * _norm2_batch(x_ref)

    x = np.zeros_like(b)
    r = b.copy()
    p = blocks.apply(r, wf) if blocks is not None else r.copy()

    active = np.ones(T, dtype=bool)
    breakdown_at = np.full(T, -1, dtype=np.int64)
    diverged_at = np.full(T, -1, dtype=np.int64)

    res_hist = np.empty((max_iters + 1, T))
    xn_hist = np.empty((max_iters + 1, T))
    alphas = np.zeros((max_iters, T), dtype=np.complex128)
    betas = np.zeros((max_iters, T), dtype=np.complex128)
    gap_hist = np.zeros((max_iters + 1, T)) if record_gaps else None
    x_hist = np.empty((max_iters + 1, T, N), dtype=np.complex128) if record_iterates else None
    r_hist = np.empty((max_iters + 1, T, N), dtype=np.complex128) if record_residual_vectors else None

    res_hist[0] = _norm2_batch(r)
    xn_hist[0] = 0.0
    if x_hist is not None:
        x_hist[0] = x
    if r_hist is not None:
        r_hist[0] = r
    b_norm = res_hist[0].copy()

    # The unpreconditioned iteration reuses r^H r across sweeps (recomputing
    # it would return identical bits); the textbook preconditioned variant
    # reuses r^H z the same way.
    rho_carry = None
    if blocks is None:
        rho_carry = np.asarray(dot_fp(r, r, ipf))
    elif rho_update == "textbook":
        rho_carry = np.asarray(dot_fp(r, p, ipf))

    def _freeze(new, old, keep):
        return np.where(keep[:, None] if new.ndim == 2 else keep, new, old)

    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(1, max_iters + 1):
            varpi = matvec_fp(A, p, mvf)
            phi = np.asarray(dot_fp(p, varpi, ipf))
            if blocks is None or rho_update == "textbook":
                rho_prev = rho_carry
            else:
                rho_prev = np.asarray(dot_fp(r, p, ipf))

            stalled = rho_prev == 0
            broke = active & ~stalled & (phi.real <= 0)
            breakdown_at[broke] = i
            active = active & ~broke & ~stalled

            alpha = _wdiv(rho_prev, phi, wf)
            x_new = axpy_fp(alpha, p, x, wf)
            r_new = axpy_fp(-alpha, varpi, r, wf)

            finite = np.all(np.isfinite(x_new), axis=-1) & np.all(np.isfinite(r_new), axis=-1)
            newly_bad = active & ~finite
            diverged_at[newly_bad] = i
            active = active & finite

            x = _freeze(x_new, x, active)
            r = _freeze(r_new, r, active)

            if blocks is not None:
                z = blocks.apply(r, wf)
                rho_i = np.asarray(dot_fp(r, z, ipf))
                beta = _wdiv(rho_i, rho_prev, wf)
                p_new = axpy_fp(beta, p, z, wf)
            else:
                rho_i = np.asarray(dot_fp(r, r, ipf))
                beta = _wdiv(rho_i, rho_prev, wf)
                p_new = axpy_fp(beta, p, r, wf)
            p = _freeze(p_new, p, active)
            rho_carry = np.where(active, rho_i, rho_carry if rho_carry is not None else rho_i)

            alphas[i - 1] = np.where(active | newly_bad | broke, alpha, 0)
            betas[i - 1] = np.where(active, beta, 0)
            res_hist[i] = _norm2_batch(r)
            xn_hist[i] = _norm2_batch(x)
            if gap_hist is not None:
                true_res = b - np.einsum("tij,tj->ti", A, x) - r
                gap_hist[i] = _norm2_batch(true_res) / gap_scale
            if x_hist is not None:
                x_hist[i] = x
            if r_hist is not None:
                r_hist[i] = r

    rel = res_hist[1:] <= rtol * np.maximum(b_norm, 1e-300)
    hit = rel.any(axis=0)
    converged_at = np.where(hit, rel.argmax(axis=0) + 1, -1)

    return BatchResult(
        x=x, residual_norms=res_hist, iterate_norms=xn_hist, alphas=alphas,
        betas=betas, b_norm=b_norm, converged_at=converged_at,
        breakdown_at=breakdown_at, diverged_at=diverged_at,
        iterations_run=max_iters, residual_gaps=gap_hist, iterates=x_hist,
        residual_vectors=r_hist,
    )


def _trace_from_batch(result: BatchResult, algorithm: str, lane: int = 0,
                      x_ref=None, a_norm=None) -> SolverTrace:
    """Extract one lane of a batch run, truncating at a breakdown."""
    brk = int(result.breakdown_at[lane])
    div = int(result.diverged_at[lane])
    iters = result.iterations_run
    upto = iters if brk < 0 else brk - 1
    conv = int(result.converged_at[lane])
    return SolverTrace(
        algorithm=algorithm,
        iterations_run=upto,
        residual_norms=result.residual_norms[:upto + 1, lane].copy(),
        iterate_norms=result.iterate_norms[:upto + 1, lane].copy(),
        alphas=result.alphas[:upto, lane].copy(),
        betas=result.betas[:upto, lane].copy(),
        x=result.x[lane].copy(),
        b_norm=float(result.b_norm[lane]),
        converged_at=conv if 0 < conv <= upto else None,
        breakdown_at=None if brk < 0 else brk,
        diverged_at=None if div < 0 else div,
        residual_gaps=None if result.residual_gaps is None
        else result.residual_gaps[:upto + 1, lane].copy(),
        iterates=None if result.iterates is None
        else result.iterates[:upto + 1, lane].copy(),
        residual_vectors=None if result.residual_vectors is None
        else result.residual_vectors[:upto + 1, lane].copy(),
        x_ref=None if x_ref is None else np.asarray(x_ref),
        a_norm=None if a_norm is None else float(a_norm),
    )


def cg_solve(system: GramSystem, max_iters: int, x_ref=None, *,
             rtol: float = 1e-6, record_iterates: bool = True,
             record_residual_vectors: bool = False) -> SolverTrace:
    """Plain conjugate gradients at working precision from the zero start.

    Runs a fixed number of sweeps; ``converged_at`` reports the first sweep
    whose recurrence residual fell under ``rtol * ||b||`` and is advisory.
    Uses the working-precision kernels (for which the native format is the
    identity rounding), so the arithmetic is the plane-decomposed sequential
    form shared by the whole solver family.
    """
    A = np.asarray(system.A, dtype=np.complex128)
    b = np.asarray(system.b, dtype=np.complex128)
    if max_iters < 1:
        raise ContractViolation("max_iters must be at least 1")
    N = b.shape[0]
    wf = FP64
    x = np.zeros(N, dtype=np.complex128)
    r = b.copy()
    p = r.copy()
    rho = np.asarray(dot_fp(r, r, wf))

    res_hist = [norm2(r)]
    xn_hist = [0.0]
    alphas, betas = [], []
    gaps = None
    if x_ref is not None:
        a_norm = system.a_norm()
        gap_scale = a_norm * norm2(np.asarray(x_ref))
        gaps = [0.0]
    x_hist = [x.copy()] if record_iterates else None
    r_hist = [r.copy()] if record_residual_vectors else None
    breakdown_at = None

    for i in range(1, max_iters + 1):
        varpi = matvec_fp(A, p, wf)
        phi = np.asarray(dot_fp(p, varpi, wf))
        if rho == 0:
            break
        if phi.real <= 0:
            breakdown_at = i
            break
        alpha = np.divide(rho, phi)
        x = axpy_fp(alpha, p, x, wf)
        r = axpy_fp(-alpha, varpi, r, wf)
        rho_new = np.asarray(dot_fp(r, r, wf))
        beta = np.divide(rho_new, rho)
        p = axpy_fp(beta, p, r, wf)
        rho = rho_new

        alphas.append(complex(alpha))
        betas.append(complex(beta))
        res_hist.append(norm2(r))
        xn_hist.append(norm2(x))
        if gaps is not None:
            true_res = b - np.einsum("tij,tj->ti", A[None], x[None])[0] - r
            gaps.append(norm2(true_res) / gap_scale)
        if x_hist is not None:
            x_hist.append(x.copy())
        if r_hist is not None:
            r_hist.append(r.copy())

    res = np.asarray(res_hist)
    hit = np.nonzero(res[1:] <= rtol * max(res[0], 1e-300))[0]
    return SolverTrace(
        algorithm="cg",
        iterations_run=len(alphas),
        residual_norms=res,
        iterate_norms=np.asarray(xn_hist),
        alphas=np.asarray(alphas, dtype=np.complex128),
        betas=np.asarray(betas, dtype=np.complex128),
        x=x,
        b_norm=float(res_hist[0]),
        converged_at=int(hit[0]) + 1 if hit.size else None,
        breakdown_at=breakdown_at,
        residual_gaps=None if gaps is None else np.asarray(gaps),
        iterates=None if x_hist is None else np.asarray(x_hist),
        residual_vectors=None if r_hist is None else np.asarray(r_hist),
        x_ref=None if x_ref is None else np.asarray(x_ref),
        a_norm=system.a_norm() if x_ref is not None else None,
    )


def fp_cg_solve(system: GramSystem, max_iters: int, prec: PrecisionConfig,
                x_ref=None, *, rtol: float = 1e-6,
                record_iterates: bool = True,
                record_residual_vectors: bool = False) -> SolverTrace:
    """Mixed-precision CG: products at ``prec.matvec``, inner products at
    ``prec.inner``, everything else at ``prec.work``."""
    A = np.asarray(system.A, dtype=np.complex128)[None]
    b = np.asarray(system.b, dtype=np.complex128)[None]
    a_norm = np.asarray([system.a_norm()]) if x_ref is not None else None
    result = run_batch(
        A, b, max_iters, prec, rtol=rtol,
        x_ref=None if x_ref is None else np.asarray(x_ref)[None],
        a_norm=a_norm, record_gaps=x_ref is not None,
        record_iterates=record_iterates,
        record_residual_vectors=record_residual_vectors,
    )
    return _trace_from_batch(result, "fp_cg", x_ref=x_ref,
                             a_norm=None if a_norm is None else a_norm[0])


def fp_bj_cg_solve(system: GramSystem, pc: BlockJacobiPreconditioner,
                   max_iters: int, prec: PrecisionConfig, x_ref=None, *,
                   rho_update: str = "as_written", rtol: float = 1e-6,
                   record_iterates: bool = True,
                   record_residual_vectors: bool = False) -> SolverTrace:
    """Mixed-precision CG preconditioned by the block-diagonal inverse."""
    if pc.n != system.b.shape[0]:
        raise ContractViolation("preconditioner dimension does not match system")
    A = np.asarray(system.A, dtype=np.complex128)[None]
    b = np.asarray(system.b, dtype=np.complex128)[None]
    a_norm = np.asarray([system.a_norm()]) if x_ref is not None else None
    result = run_batch(
        A, b, max_iters, prec, blocks=_BatchBlocks.from_single(pc),
        rho_update=rho_update, rtol=rtol,
        x_ref=None if x_ref is None else np.asarray(x_ref)[None],
        a_norm=a_norm, record_gaps=x_ref is not None,
        record_iterates=record_iterates,
        record_residual_vectors=record_residual_vectors,
    )
    return _trace_from_batch(result, "fp_bj_cg", x_ref=x_ref,
                             a_norm=None if a_norm is None else a_norm[0])
