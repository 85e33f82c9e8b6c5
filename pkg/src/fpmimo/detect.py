"""Link-level Monte-Carlo harness: 16QAM over the correlated channel.

One trial is modulate -> transmit through H with AWGN -> build the Gram
system (optionally from a perturbed channel estimate) -> run each configured
detector on the identical inputs -> hard-decision demodulate -> count bit
errors.  Per-trial randomness is keyed by (experiment seed, SNR index,
trial index), so every detector sees bit-identical channels, payloads, and
noise, and results do not depend on chunking or worker count.

The SNR convention is receive-side total power: with unit-energy symbols and
the 1/M channel normalization, E||Hx||^2 = N, so
``sigma_n^2 = (N / M) 10^(-snr/10)``.  A transmit-referenced alternative
(``sigma_n^2 = 10^(-snr/10)``) can be selected per experiment; the active
convention is pinned in every output row.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from fpmimo.channel import ChannelConfig, perturb_csi, sample_channel
from fpmimo.errors import ContractViolation
from fpmimo.formats import get_format
from fpmimo.linalg import _solve_direct_batch
from fpmimo.rng import normal_pairs, substream
from fpmimo.solvers import PrecisionConfig, build_blocks_batch, run_batch

__all__ = [
    "modulate_16qam",
    "demodulate_16qam",
    "awgn_transmit",
    "noise_variance",
    "DetectorSpec",
    "BERPoint",
    "BERCurve",
    "BERConfig",
    "run_ber_sweep",
    "simulate_trials",
    "iterations_to_match",
]

_SCALE = 1.0 / math.sqrt(10.0)
# Gray labeling per axis: bit pair (b_hi, b_lo) -> level.
_LEVEL_OF_PAIR = np.array([-3.0, -1.0, 3.0, 1.0]) * _SCALE
# Decision order -3 < -1 < +1 < +3 and the inverse Gray labels.
_LEVELS_ASCENDING = np.array([-3.0, -1.0, 1.0, 3.0]) * _SCALE
_BITS_OF_LEVEL = np.array([[0, 0], [0, 1], [1, 1], [1, 0]], dtype=np.uint8)
_THRESHOLDS = np.array([-2.0, 0.0, 2.0]) * _SCALE


def modulate_16qam(bits) -> np.ndarray:
    """Map bits (last axis length 4N) to Gray-labeled 16QAM symbols.

    Four bits per symbol: the first pair selects the in-phase level, the
    second pair the quadrature level, and the constellation is scaled to
    unit average energy.
    """
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.shape[-1] % 4:
        raise ContractViolation("bit count must be a multiple of 4")
    quads = bits.reshape(*bits.shape[:-1], -1, 4)
    idx_i = 2 * quads[..., 0] + quads[..., 1]
    idx_q = 2 * quads[..., 2] + quads[..., 3]
    return _LEVEL_OF_PAIR[idx_i] + 1j * _LEVEL_OF_PAIR[idx_q]


def _axis_level_index(values: np.ndarray) -> np.ndarray:
    # Non-finite observations decide deterministically: NaN and -inf fall to
    # the lowest level, +inf to the highest; exact boundary ties go to the
    # smaller level index.
    v = np.where(np.isnan(values), -np.inf, values)
    return np.digitize(v, _THRESHOLDS, right=True)


def demodulate_16qam(x_hat) -> np.ndarray:
    """Per-entry minimum-distance decision followed by the inverse Gray map."""
    x_hat = np.asarray(x_hat, dtype=np.complex128)
    bits_i = _BITS_OF_LEVEL[_axis_level_index(x_hat.real)]
    bits_q = _BITS_OF_LEVEL[_axis_level_index(x_hat.imag)]
    quads = np.concatenate([bits_i, bits_q], axis=-1)  # (..., N, 4)
    return quads.reshape(*quads.shape[:-2], -1)


def noise_variance(M: int, N: int, snr_db: float, convention: str = "receive_total") -> float:
    """Per-antenna complex noise variance for a given SNR."""
    if convention == "receive_total":
        return (N / M) * 10.0 ** (-snr_db / 10.0)
    if convention == "transmit":
        return 10.0 ** (-snr_db / 10.0)
    raise ContractViolation(f"unknown SNR convention {convention!r}")


def awgn_transmit(H, x, snr_db: float, rng: np.random.Generator, *,
                  convention: str = "receive_total"):
    """Send unit-energy symbols through H and add white complex noise.

    Returns ``(y, sigma_n2)``.
    """
    H = np.asarray(H, dtype=np.complex128)
    x = np.asarray(x, dtype=np.complex128)
    M, N = H.shape
    sigma_n2 = noise_variance(M, N, snr_db, convention)
    g_re, g_im = normal_pairs(rng, M)
    noise = math.sqrt(sigma_n2 / 2.0) * (g_re + 1j * g_im)
    return H @ x + noise, sigma_n2


@dataclass(frozen=True)
class DetectorSpec:
    """One detector configuration inside a BER or convergence experiment."""

    algorithm: str                      # lmmse | cg | fp_cg | fp_bj_cg
    iters: int = 10
    L: int | None = None
    work: str = "fp64"
    matvec: str = "fp64"
    inner: str = "fp64"
    rtol: float = 1e-6
    rho_update: str = "as_written"
    label: str | None = None

    def __post_init__(self):
        if self.algorithm not in ("lmmse", "cg", "fp_cg", "fp_bj_cg"):
            raise ContractViolation(f"unknown algorithm {self.algorithm!r}")
        if self.algorithm == "fp_bj_cg" and self.L is None:
            raise ContractViolation("fp_bj_cg requires a block size L")

    def precision(self) -> PrecisionConfig:
        if self.algorithm in ("lmmse", "cg"):
            return PrecisionConfig()
        return PrecisionConfig(work=get_format(self.work),
                               matvec=get_format(self.matvec),
                               inner=get_format(self.inner))

    @property
    def name(self) -> str:
        if self.label:
            return self.label
        if self.algorithm in ("lmmse", "cg"):
            return self.algorithm
        return f"{self.algorithm}[{self.matvec}]"


@dataclass
class BERPoint:
    snr_db: float
    trials: int
    bit_errors: int
    ber: float
    ci_low: float
    ci_high: float
    divergence_rate: float


@dataclass
class BERCurve:
    detector: DetectorSpec
    zeta: float
    iters: int
    points: list[BERPoint] = field(default_factory=list)


@dataclass(frozen=True)
class BERConfig:
    channel: ChannelConfig
    detectors: tuple
    snr_grid: tuple
    trials: int
    seed: int = 0
    epsilon_db: float | None = None
    snr_convention: str = "receive_total"
    chunk: int = 1000
    context: int = 2


def _wilson_interval(errors: int, n: int, z: float = 1.96) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    phat = errors / n
    denom = 1.0 + z * z / n
    center = (phat + z * z / (2 * n)) / denom
    half = z * math.sqrt(phat * (1 - phat) / n + z * z / (4 * n * n)) / denom
    return max(center - half, 0.0), min(center + half, 1.0)


def simulate_trials(cfg: BERConfig, snr_idx: int, trial_ids) -> dict:
    """Draw matched (H, bits, symbols, y) for a block of trials.

    Every detector sees these exact arrays; imperfect CSI adds a perturbed
    estimate used only for building the Gram system.
    """
    ch = cfg.channel
    snr_db = cfg.snr_grid[snr_idx]
    M, N = ch.M, ch.N
    T = len(trial_ids)
    H = np.empty((T, M, N), dtype=np.complex128)
    H_est = H if cfg.epsilon_db is None else np.empty_like(H)
    bits = np.empty((T, 4 * N), dtype=np.uint8)
    y = np.empty((T, M), dtype=np.complex128)
    sigma_n2 = noise_variance(M, N, snr_db, cfg.snr_convention)
    for row, t in enumerate(trial_ids):
        rng = substream(cfg.seed, context=cfg.context, point=snr_idx, trial=t)
        real = sample_channel(ch, rng)
        H[row] = real.H
        bits[row] = rng.integers(0, 2, size=4 * N, dtype=np.uint8)
        s = modulate_16qam(bits[row])
        g_re, g_im = normal_pairs(rng, M)
        y[row] = real.H @ s + math.sqrt(sigma_n2 / 2.0) * (g_re + 1j * g_im)
        if cfg.epsilon_db is not None:
            H_est[row] = perturb_csi(real.H, cfg.epsilon_db, rng)
    s_all = modulate_16qam(bits)
    A = np.einsum("tmi,tmj->tij", H_est.conj(), H_est)
    A = 0.5 * (A + np.swapaxes(A.conj(), -1, -2))
    A = A + sigma_n2 * np.eye(N)[None]
    b = np.einsum("tmi,tm->ti", H_est.conj(), y)
    return {"H": H, "H_est": H_est, "bits": bits, "symbols": s_all, "y": y,
            "A": A, "b": b, "sigma_n2": sigma_n2}


def _detect_batch(det: DetectorSpec, batch: dict) -> tuple[np.ndarray, np.ndarray]:
    """Run one detector on a simulated batch.

    Returns (estimated symbol vectors, diverged mask).
    """
    A, b = batch["A"], batch["b"]
    T = b.shape[0]
    if det.algorithm == "lmmse":
        return _solve_direct_batch(A, b), np.zeros(T, dtype=bool)
    blocks = None
    if det.algorithm == "fp_bj_cg":
        blocks = build_blocks_batch(A, det.L)
    result = run_batch(A, b, det.iters, det.precision(), blocks=blocks,
                       rho_update=det.rho_update, rtol=det.rtol)
    return result.x, result.diverged_at >= 0


def run_ber_sweep(cfg: BERConfig) -> list[BERCurve]:
    """Monte-Carlo bit-error-rate sweep over the SNR grid.

    Returns one curve per detector; trials are chunked, and each chunk's
    randomness is independent of the chunking itself.
    """
    if cfg.trials < 1:
        raise ContractViolation("trials must be positive")
    curves = [BERCurve(detector=d, zeta=cfg.channel.zeta_t, iters=d.iters)
              for d in cfg.detectors]
    n_bits_per_trial = 4 * cfg.channel.N
    for snr_idx in range(len(cfg.snr_grid)):
        errors = np.zeros(len(cfg.detectors), dtype=np.int64)
        diverged = np.zeros(len(cfg.detectors), dtype=np.int64)
        done = 0
        while done < cfg.trials:
            ids = range(done, min(done + cfg.chunk, cfg.trials))
            batch = simulate_trials(cfg, snr_idx, ids)
            for di, det in enumerate(cfg.detectors):
                x_hat, bad = _detect_batch(det, batch)
                got = demodulate_16qam(x_hat)
                errors[di] += int(np.sum(got != batch["bits"]))
                diverged[di] += int(bad.sum())
            done += len(ids)
        total_bits = cfg.trials * n_bits_per_trial
        for di, curve in enumerate(curves):
            lo, hi = _wilson_interval(int(errors[di]), total_bits)
            curve.points.append(BERPoint(
                snr_db=float(cfg.snr_grid[snr_idx]), trials=cfg.trials,
                bit_errors=int(errors[di]), ber=errors[di] / total_bits,
                ci_low=lo, ci_high=hi,
                divergence_rate=diverged[di] / cfg.trials,
            ))
    return curves


def iterations_to_match(mean_curve: np.ndarray, reference_level: float,
                        margin: float = 1.1) -> int | None:
    """First sweep where a trial-averaged error curve reaches a reference.

    ``mean_curve[i]`` is the Monte-Carlo mean squared detection error after
    ``i`` sweeps and ``reference_level`` the same average for the direct
    solver; the crossing is declared at ``margin`` times the reference.
    """
    hits = np.nonzero(np.asarray(mean_curve) <= margin * reference_level)[0]
    return int(hits[0]) if hits.size else None
