"""Computable accuracy bounds, precision selection, and cost accounting.

The attainable-accuracy side turns the worst-case residual-gap analysis into
numbers that can be compared against measured traces: the gap between true
and recurrence residuals after ``i`` sweeps is bounded by

    B_i = (1 + i) u_W + Y_i * Theta_i

with amplification ``Y_i = ((8 sqrt2 + 6) i + 1) u_W
+ (2i + 1) 2 sqrt2 N^1.5 u_MV`` and iterate growth
``Theta_i = max_{k<=i} ||x_k|| / ||x_ref||``.  When the iteration converges,
``Theta_i`` itself is bounded by ``1 + sqrt(kappa(A))``, which gives the
a-priori form used by the precision selection heuristic: pick the cheapest
matrix-vector format whose unit roundoff stays below
``1 / (N^1.5 sqrt(kappa))``.

Cost accounting counts complex multiplications, weighted 1 / 2 / 4 for
16- / 32- / 64-bit formats.  Only the dominant terms enter: ``N^2`` per CG
sweep for the product with A, ``N L^2`` for the block-inverse setup, ``N L``
per sweep for applying it, and ``N^3`` for the direct baseline (its constant
is configurable, see ``cost_model``).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from fpmimo.channel import ChannelConfig, block_diagonal_part, sample_channel
from fpmimo.errors import ContractViolation
from fpmimo.formats import FP64, FloatFormat
from fpmimo.linalg import matrix_sqrt_psd, norm2, solve_direct
from fpmimo.rng import substream
from fpmimo.solvers import BlockJacobiPreconditioner, PrecisionConfig, SolverTrace, build_bj_preconditioner

__all__ = [
    "gap_amplification",
    "gap_bound",
    "gap_bound_converged",
    "BoundReport",
    "bound_report",
    "transformed_gap_history",
    "HeuristicDecision",
    "heuristic_precision",
    "estimate_mean_condition_number",
    "preconditioned_condition_number",
    "condition_sandwich",
    "SandwichReport",
    "precision_weight",
    "CostReport",
    "cost_model",
    "BreakEvenReport",
    "break_even",
]

log = logging.getLogger(__name__)

_C_WORK = 8.0 * math.sqrt(2.0) + 6.0


def gap_amplification(i: int, N: int, prec: PrecisionConfig) -> float:
    """Amplification factor multiplying the iterate growth in the gap bound."""
    u_w = prec.work.unit_roundoff
    u_mv = prec.matvec.unit_roundoff
    return (_C_WORK * i + 1.0) * u_w + (2.0 * i + 1.0) * 2.0 * math.sqrt(2.0) * N ** 1.5 * u_mv


def gap_bound(i: int, N: int, prec: PrecisionConfig, theta: float) -> float:
    """Worst-case normalized residual gap after ``i`` sweeps."""
    return (1.0 + i) * prec.work.unit_roundoff + gap_amplification(i, N, prec) * theta


def gap_bound_converged(i: int, N: int, prec: PrecisionConfig, kappa: float) -> float:
    """A-priori gap bound using the convergent-run growth cap 1 + sqrt(kappa)."""
    theta = 1.0 + math.sqrt(kappa)
    return gap_bound(i, N, prec, theta)


@dataclass
class BoundReport:
    """Measured gaps next to their computed bounds, per iteration."""

    N: int
    u_work: float
    u_matvec: float
    gaps: np.ndarray            # measured, full precision
    bounds: np.ndarray          # B_i with the measured iterate growth
    amplification: np.ndarray   # Y_i
    growth: np.ndarray          # Theta_i
    kappa: float | None = None
    bounds_converged: np.ndarray | None = None

    def dominated(self) -> bool:
        """True when every measured gap sits under its bound."""
        return bool(np.all(self.gaps <= self.bounds))


def bound_report(trace: SolverTrace, prec: PrecisionConfig,
                 kappa: float | None = None) -> BoundReport:
    """Evaluate the gap bound along a recorded trace.

    The trace must carry measured gaps and the reference solution used to
    normalize them.
    """
    if trace.residual_gaps is None or trace.x_ref is None:
        raise ContractViolation("trace was recorded without gaps / reference")
    N = trace.x.shape[-1]
    ref_norm = norm2(np.asarray(trace.x_ref))
    growth = np.maximum.accumulate(trace.iterate_norms / ref_norm)
    iters = np.arange(len(growth))
    amp = np.array([gap_amplification(int(i), N, prec) for i in iters])
    bounds = (1.0 + iters) * prec.work.unit_roundoff + amp * growth
    conv = None
    if kappa is not None:
        conv = np.array([gap_bound_converged(int(i), N, prec, kappa) for i in iters])
    return BoundReport(
        N=N, u_work=prec.work.unit_roundoff, u_matvec=prec.matvec.unit_roundoff,
        gaps=np.asarray(trace.residual_gaps), bounds=bounds, amplification=amp,
        growth=growth, kappa=kappa, bounds_converged=conv,
    )


def transformed_gap_history(trace: SolverTrace, system, pc: BlockJacobiPreconditioner) -> np.ndarray:
    """Residual gaps of a preconditioned run in the symmetrized variables.

    Rescales the recorded true-residual defect by the split preconditioner:
    with ``S`` the PSD square root of the block inverse, the transformed gap
    at sweep ``i`` is ``||S (b - A x_i - r_i)|| / (||S A S||_2 ||S^-1 x_ref||)``.
    """
    if trace.iterates is None or trace.residual_vectors is None or trace.x_ref is None:
        raise ContractViolation("trace must record iterates, residuals, and x_ref")
    S = np.zeros((pc.n, pc.n), dtype=np.complex128)
    for sl, blk in zip(pc.slices(), pc.block_inverses):
        S[sl, sl] = matrix_sqrt_psd(blk)
    A_bar = S @ system.A @ S
    A_bar = 0.5 * (A_bar + A_bar.conj().T)
    w = np.linalg.eigvalsh(A_bar)
    x_bar_ref = solve_direct(S, np.asarray(trace.x_ref))
    scale = max(abs(w[0]), abs(w[-1])) * norm2(x_bar_ref)
    defects = (system.b[None, :]
               - np.einsum("ij,tj->ti", system.A, trace.iterates)
               - trace.residual_vectors)
    return np.asarray([norm2(S @ d) for d in defects]) / scale


@dataclass(frozen=True)
class HeuristicDecision:
    """Outcome of the matrix-vector precision selection rule."""

    chosen: FloatFormat
    threshold: float
    exhausted: bool
    N: int
    kappa: float


def heuristic_precision(N: int, kappa: float, candidates: list[FloatFormat],
                        working: FloatFormat = FP64) -> HeuristicDecision:
    """Pick the cheapest format whose unit roundoff clears the threshold.

    The threshold is ``1 / (N^1.5 sqrt(kappa))``; candidates are scanned from
    coarsest to finest (they are sorted if not already).  When no candidate
    qualifies the working format is returned with ``exhausted=True``.
    """
    if kappa < 1:
        raise ContractViolation(f"kappa must be >= 1, got {kappa}")
    if not candidates:
        raise ContractViolation("need at least one candidate format")
    ordered = sorted(candidates, key=lambda f: -f.unit_roundoff)
    threshold = 1.0 / (N ** 1.5 * math.sqrt(kappa))
    for fmt in ordered:
        if fmt.unit_roundoff < threshold:
            decision = HeuristicDecision(chosen=fmt, threshold=threshold,
                                         exhausted=False, N=N, kappa=kappa)
            break
    else:
        decision = HeuristicDecision(chosen=working, threshold=threshold,
                                     exhausted=True, N=N, kappa=kappa)
    log.info("precision selection: N=%d kappa=%.4g threshold=%.4g -> %s%s",
             N, kappa, threshold, decision.chosen.name,
             " (exhausted)" if decision.exhausted else "")
    return decision


def _gram_matrix(H, kind: str, sigma_n2: float) -> np.ndarray:
    A = H.conj().T @ H
    A = 0.5 * (A + A.conj().T)
    if kind == "lmmse":
        A = A + sigma_n2 * np.eye(A.shape[0])
    return A


def estimate_mean_condition_number(cfg: ChannelConfig, kind: str, sigma_n2: float,
                                   trials: int, L: int | None = None, *,
                                   spatial_orthogonality: bool = False,
                                   seed: int | None = None,
                                   context: int = 3) -> float:
    """Monte-Carlo mean condition number of the detection system.

    With ``L`` given, the preconditioned system's condition number is averaged
    instead.  ``spatial_orthogonality=True`` zeroes the off-diagonal user
    blocks of each sampled Gram matrix first (the idealized regime).
    Deterministic for a fixed seed.
    """
    if trials < 1:
        raise ContractViolation("trials must be positive")
    kind = kind.lower()
    if kind not in ("zf", "lmmse"):
        raise ContractViolation(f"kind must be 'zf' or 'lmmse', got {kind!r}")
    seed = cfg.seed if seed is None else seed
    total = 0.0
    for t in range(trials):
        rng = substream(seed, context=context, trial=t)
        H = sample_channel(cfg, rng).H
        A = _gram_matrix(H, kind, sigma_n2)
        if spatial_orthogonality:
            A = block_diagonal_part(A, cfg.N_UE)
        if L is None:
            w = np.linalg.eigvalsh(A)
            if w[0] <= 0:
                raise ContractViolation("sampled system is not positive definite")
            total += w[-1] / w[0]
        else:
            pc = build_bj_preconditioner(A, L)
            total += preconditioned_condition_number(A, pc)
    return total / trials


def preconditioned_condition_number(A, pc: BlockJacobiPreconditioner) -> float:
    """Condition number of the symmetrically preconditioned system.

    Assembles ``S A S`` with ``S`` the blockwise PSD square root of the block
    inverse; for HPD ``A`` this matches the left-preconditioned iteration's
    spectrum.
    """
    A = np.asarray(A, dtype=np.complex128)
    if A.shape[0] != pc.n:
        raise ContractViolation("preconditioner dimension does not match matrix")
    S = np.zeros_like(A)
    for sl, blk in zip(pc.slices(), pc.block_inverses):
        S[sl, sl] = matrix_sqrt_psd(blk)
    A_bar = S @ A @ S
    A_bar = 0.5 * (A_bar + A_bar.conj().T)
    w = np.linalg.eigvalsh(A_bar)
    if w[0] <= 0:
        raise ContractViolation(
            f"preconditioned matrix lost definiteness (min eigenvalue {w[0]:.3e})"
        )
    return float(w[-1] / w[0])


@dataclass(frozen=True)
class SandwichReport:
    """Condition numbers of a candidate partition against a reference one."""

    kappa_pc: float
    kappa_opt: float
    d: int

    @property
    def upper(self) -> float:
        return self.d * self.kappa_opt

    def holds(self) -> bool:
        return self.kappa_opt <= self.kappa_pc * (1 + 1e-9) and \
            self.kappa_pc <= self.upper * (1 + 1e-9)


def condition_sandwich(A, pc: BlockJacobiPreconditioner,
                       pc_opt: BlockJacobiPreconditioner) -> SandwichReport:
    """Compare a block partition against a better-informed one.

    Reports ``kappa`` for both partitions and the factor-``d`` upper limit,
    where ``d`` is the candidate's block count.
    """
    return SandwichReport(
        kappa_pc=preconditioned_condition_number(A, pc),
        kappa_opt=preconditioned_condition_number(A, pc_opt),
        d=pc.d,
    )


def precision_weight(fmt: FloatFormat) -> float:
    """Relative cost of one complex multiplication in this format."""
    return fmt.storage_bits / 16.0


@dataclass(frozen=True)
class CostReport:
    """Weighted complex-multiplication counts for one detector run."""

    algorithm: str
    setup_units: float
    per_iter_units: float
    iterations: int
    weights: dict = field(default_factory=dict)

    @property
    def total_units(self) -> float:
        return self.setup_units + self.iterations * self.per_iter_units


_ALGORITHMS = ("lmmse", "cg", "fp_cg", "fp_bj_cg")


def cost_model(algorithm: str, N: int, iters: int = 0, L: int | None = None,
               prec: PrecisionConfig | None = None, *,
               lmmse_constant: float = 1.0,
               block_sizes: list[int] | None = None) -> CostReport:
    """Count weighted complex multiplications for a detector.

    Conventions: the direct baseline costs ``lmmse_constant * N^3`` at the
    working format (the exact inversion constant is implementation defined,
    so it is a parameter); CG-family sweeps cost ``N^2`` at the
    matrix-vector format; the block-Jacobi variant adds ``sum(L_i^3)`` setup
    and ``sum(L_i^2)`` apply work per sweep, both at the working format.
    Additions are not counted.
    """
    algorithm = algorithm.lower()
    if algorithm not in _ALGORITHMS:
        raise ContractViolation(f"algorithm must be one of {_ALGORITHMS}")
    if prec is None:
        prec = PrecisionConfig()
    w_work = precision_weight(prec.work)
    w_mv = precision_weight(prec.matvec)
    weights = {prec.work.name: w_work, prec.matvec.name: w_mv}

    if algorithm == "lmmse":
        return CostReport(algorithm, lmmse_constant * N ** 3 * w_work, 0.0, 0,
                          weights)
    per_iter = N ** 2 * w_mv
    setup = 0.0
    if algorithm == "fp_bj_cg":
        if L is None and block_sizes is None:
            raise ContractViolation("block size required for the preconditioned solver")
        if block_sizes is None:
            if N % L:
                raise ContractViolation(f"L={L} must divide N={N} (or pass block_sizes)")
            block_sizes = [L] * (N // L)
        if sum(block_sizes) != N:
            raise ContractViolation("block sizes must partition the dimension")
        setup = float(sum(s ** 3 for s in block_sizes)) * w_work
        per_iter += float(sum(s ** 2 for s in block_sizes)) * w_work
    return CostReport(algorithm, setup, per_iter, iters, weights)


@dataclass(frozen=True)
class BreakEvenReport:
    """Iteration-savings threshold for the preconditioner to pay off."""

    advantageous: bool
    threshold_iters: float
    proxy_iters: float
    delta_k: int
    cost_cg: float
    cost_pcg: float


def break_even(N: int, L: int, k_cg: int, k_pcg: int,
               prec: PrecisionConfig | None = None) -> BreakEvenReport:
    """Decide whether block-Jacobi setup is amortized by iteration savings.

    The threshold is the setup cost divided by the per-sweep cost of the
    unpreconditioned iteration; preconditioning pays off when the measured
    iteration savings exceed it.  ``proxy_iters = L^2 / N`` is the asymptotic
    shorthand.  The exact totals (including the per-sweep apply cost) are
    reported alongside.
    """
    if prec is None:
        prec = PrecisionConfig()
    cg = cost_model("fp_cg", N, iters=k_cg, prec=prec)
    pcg = cost_model("fp_bj_cg", N, iters=k_pcg, L=L, prec=prec)
    threshold = pcg.setup_units / cg.per_iter_units
    delta = k_cg - k_pcg
    return BreakEvenReport(
        advantageous=delta > threshold,
        threshold_iters=threshold,
        proxy_iters=L ** 2 / N,
        delta_k=delta,
        cost_cg=cg.total_units,
        cost_pcg=pcg.total_units,
    )
