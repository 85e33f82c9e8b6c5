"""Correlated MIMO channel generation and Gram-system construction.

The channel follows the Kronecker model ``H = sqrt(R_r) W sqrt(R_t)`` with
i.i.d. complex Gaussian ``W`` of per-entry variance ``1/M`` and exponential
correlation matrices on both sides.  The user-side correlation can be a
single exponential chain across all transmit indices or a block-diagonal
variant with independent users (inter-user blocks zeroed), which is the
regime where block-Jacobi preconditioning becomes exact.

The module also carries the statistical checks for the asymptotic behaviour
of the Gram matrix: as ``M`` grows, ``H^H H`` concentrates on ``R_t``, and
the variance of a column inner product has the closed form implemented in
``column_dot_variance``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from fpmimo.errors import ContractViolation
from fpmimo.linalg import matrix_sqrt_psd
from fpmimo.rng import normal_pairs, substream

__all__ = [
    "ChannelConfig",
    "ChannelRealization",
    "GramSystem",
    "exp_correlation_matrix",
    "user_correlation_matrix",
    "sample_channel",
    "gram_system",
    "block_diagonal_part",
    "perturb_csi",
    "column_dot_variance",
    "gram_convergence_stat",
]


@dataclass(frozen=True)
class ChannelConfig:
    """Dimensions and correlation of the uplink channel.

    ``M`` base-station antennas serve ``K`` users with ``N_UE`` antennas
    each, so the Gram system has dimension ``N = K * N_UE <= M``.
    ``block_diag_users=True`` switches the user-side correlation to the
    independent-users variant (zero inter-user correlation blocks).
    """

    M: int
    K: int
    N_UE: int = 1
    zeta_r: float = 0.0
    zeta_t: float = 0.0
    block_diag_users: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.M < 1 or self.K < 1 or self.N_UE < 1:
            raise ContractViolation("M, K, N_UE must be positive")
        if self.N > self.M:
            raise ContractViolation(f"need N <= M, got N={self.N}, M={self.M}")
        for name in ("zeta_r", "zeta_t"):
            z = getattr(self, name)
            if not 0.0 <= z < 1.0:
                raise ContractViolation(f"{name} must lie in [0, 1), got {z}")

    @property
    def N(self) -> int:
        return self.K * self.N_UE


@dataclass(frozen=True)
class ChannelRealization:
    H: np.ndarray
    R_r: np.ndarray
    R_t: np.ndarray
    config: ChannelConfig


@dataclass
class GramSystem:
    """Hermitian positive definite detection system ``A x = b``."""

    A: np.ndarray
    b: np.ndarray
    kind: str
    sigma_n2: float
    _a_norm: float | None = field(default=None, repr=False)

    def a_norm(self) -> float:
        """Spectral norm of A (cached)."""
        if self._a_norm is None:
            w = np.linalg.eigvalsh(self.A)
            self._a_norm = float(max(abs(w[0]), abs(w[-1])))
        return self._a_norm


def exp_correlation_matrix(n: int, zeta: float) -> np.ndarray:
    """Exponential correlation matrix with entries ``zeta**|i-j|``.

    Positive definite for ``0 <= zeta < 1``; real ``zeta`` gives a real
    symmetric Toeplitz matrix (returned as complex for uniformity).
    """
    if not 0.0 <= zeta < 1.0:
        raise ContractViolation(f"zeta must lie in [0, 1), got {zeta}")
    if n < 1:
        raise ContractViolation("n must be positive")
    col = zeta ** np.arange(n)
    return scipy.linalg.toeplitz(col).astype(np.complex128)


def user_correlation_matrix(config: ChannelConfig) -> np.ndarray:
    """User-side correlation: full exponential chain or independent users."""
    if not config.block_diag_users:
        return exp_correlation_matrix(config.N, config.zeta_t)
    block = exp_correlation_matrix(config.N_UE, config.zeta_t)
    R = np.zeros((config.N, config.N), dtype=np.complex128)
    for k in range(config.K):
        s = k * config.N_UE
        R[s:s + config.N_UE, s:s + config.N_UE] = block
    return R


_sqrt_cache: dict[tuple, np.ndarray] = {}


def _correlation_sqrt(key, builder) -> np.ndarray:
    found = _sqrt_cache.get(key)
    if found is None:
        found = matrix_sqrt_psd(builder())
        _sqrt_cache[key] = found
    return found


def sample_channel(config: ChannelConfig, rng: np.random.Generator | None = None) -> ChannelRealization:
    """Draw one correlated channel realization.

    The i.i.d. core has entries ``CN(0, 1/M)`` sampled by Box-Muller, so a
    fixed generator state reproduces the channel bit for bit.
    """
    if rng is None:
        rng = substream(config.seed)
    M, N = config.M, config.N
    g_re, g_im = normal_pairs(rng, (M, N))
    W = (g_re + 1j * g_im) / np.sqrt(2.0 * M)
    R_r = exp_correlation_matrix(M, config.zeta_r)
    R_t = user_correlation_matrix(config)
    H = W
    if config.zeta_r > 0:
        S_r = _correlation_sqrt(("r", M, config.zeta_r), lambda: R_r)
        H = S_r @ H
    if config.zeta_t > 0:
        S_t = _correlation_sqrt(
            ("t", N, config.zeta_t, config.N_UE if config.block_diag_users else 0),
            lambda: R_t,
        )
        H = H @ S_t
    return ChannelRealization(H=H, R_r=R_r, R_t=R_t, config=config)


def gram_system(H, y, kind: str, sigma_n2: float = 0.0) -> GramSystem:
    """Form the detection system for a channel and received vector.

    ``kind`` is ``"zf"`` (A = H^H H) or ``"lmmse"`` (A = H^H H + sigma_n2 I);
    ``b = H^H y``.  The Gram matrix is symmetrized to be exactly Hermitian.
    """
    kind = kind.lower()
    if kind not in ("zf", "lmmse"):
        raise ContractViolation(f"kind must be 'zf' or 'lmmse', got {kind!r}")
    if sigma_n2 < 0:
        raise ContractViolation(f"sigma_n2 must be nonnegative, got {sigma_n2}")
    H = np.asarray(H, dtype=np.complex128)
    y = np.asarray(y, dtype=np.complex128)
    if y.shape[-1] != H.shape[0]:
        raise ContractViolation(
            f"received vector length {y.shape[-1]} does not match {H.shape[0]} antennas"
        )
    A = H.conj().T @ H
    A = 0.5 * (A + A.conj().T)
    if kind == "lmmse":
        A = A + sigma_n2 * np.eye(H.shape[1])
    b = H.conj().T @ y
    return GramSystem(A=A, b=b, kind=kind, sigma_n2=float(sigma_n2))


def block_diagonal_part(A, L: int) -> np.ndarray:
    """Keep the L x L diagonal blocks of A and zero the rest.

    This is the idealized spatially-orthogonal system: with exact inter-user
    orthogonality the Gram matrix is block diagonal, and a block-Jacobi
    preconditioner of aligned size reduces it exactly to the identity.
    """
    A = np.asarray(A, dtype=np.complex128)
    n = A.shape[-1]
    if n % L:
        raise ContractViolation(f"L={L} must divide the dimension {n}")
    out = np.zeros_like(A)
    for s in range(0, n, L):
        out[..., s:s + L, s:s + L] = A[..., s:s + L, s:s + L]
    return out


def perturb_csi(H, epsilon_db: float, rng: np.random.Generator) -> np.ndarray:
    """Additive channel-estimate error at a given channel-to-error power ratio.

    The perturbation has i.i.d. ``CN(0, (1/M)/eps)`` entries with
    ``eps = 10**(epsilon_db/10)``, so each entry's channel-to-noise power
    ratio equals ``eps``.
    """
    H = np.asarray(H, dtype=np.complex128)
    if not np.isfinite(epsilon_db):
        raise ContractViolation("epsilon_db must be finite")
    M = H.shape[0]
    var = (1.0 / M) / 10.0 ** (epsilon_db / 10.0)
    g_re, g_im = normal_pairs(rng, H.shape)
    return H + np.sqrt(var / 2.0) * (g_re + 1j * g_im)


def column_dot_variance(M: int, zeta: float) -> float:
    """Closed-form variance of a column inner product of H.

    For any column pair (n, i), Var(h_n^H h_i) equals
    ``1/M + (2/M^2) (s (M-1) - s^2 (1 - zeta^(2(M-1))))`` with
    ``s = zeta^2 / (1 - zeta^2)``; at ``zeta = 0`` this is ``1/M``.
    """
    if not 0.0 <= zeta < 1.0:
        raise ContractViolation(f"zeta must lie in [0, 1), got {zeta}")
    if zeta == 0.0:
        return 1.0 / M
    s = zeta ** 2 / (1.0 - zeta ** 2)
    return 1.0 / M + (2.0 / M ** 2) * (s * (M - 1) - s ** 2 * (1.0 - zeta ** (2 * (M - 1))))


def gram_convergence_stat(Ms, zeta: float, trials: int, *, K: int | None = None,
                          N_UE: int = 4, pair: tuple[int, int] = (0, 1),
                          seed: int = 0, context: int = 7) -> list[dict]:
    """Monte-Carlo check of the Gram matrix concentration on R_t.

    For each antenna count in ``Ms`` this samples channels, reports the mean
    Frobenius deviation ``||H^H H - R_t||_F`` (decreasing in M like
    ``1/sqrt(M)``) and the sample variance of the column inner product
    ``h_n^H h_i`` against its closed form.  Returns one row per M with the
    keys (M, zeta, trials, frob_dev_mean, var_sample, var_closed_form,
    rel_err).
    """
    rows = []
    for mi, M in enumerate(Ms):
        k_users = K if K is not None else max(1, min(8, M // (4 * N_UE)))
        cfg = ChannelConfig(M=M, K=k_users, N_UE=N_UE, zeta_r=zeta, zeta_t=zeta,
                            seed=seed)
        n_col, i_col = pair
        if not (0 <= n_col < cfg.N and 0 <= i_col < cfg.N):
            raise ContractViolation(f"column pair {pair} out of range for N={cfg.N}")
        frob = np.empty(trials)
        dots = np.empty(trials, dtype=np.complex128)
        for t in range(trials):
            rng = substream(seed, context=context, point=mi, trial=t)
            real = sample_channel(cfg, rng)
            G = real.H.conj().T @ real.H
            frob[t] = np.linalg.norm(G - real.R_t)
            dots[t] = G[n_col, i_col]
        mean_dot = dots.mean()
        var_sample = float(np.sum(np.abs(dots - mean_dot) ** 2) / (trials - 1))
        var_closed = column_dot_variance(M, zeta)
        rows.append({
            "M": M,
            "zeta": zeta,
            "trials": trials,
            "frob_dev_mean": float(frob.mean()),
            "var_sample": var_sample,
            "var_closed_form": var_closed,
            "rel_err": abs(var_sample - var_closed) / var_closed,
        })
    return rows
