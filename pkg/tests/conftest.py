"""Shared fixtures and system builders for the test suite."""

import numpy as np

from fpmimo.channel import ChannelConfig, gram_system, sample_channel
from fpmimo.rng import normal_pairs, substream


def random_lmmse_system(seed, M=64, K=8, N_UE=4, zeta=0.5, snr_db=20.0,
                        kind="lmmse", block_diag_users=False):
    """One correlated-channel detection system with Gaussian payload.

    Returns (system, channel realization, transmitted vector).
    """
    cfg = ChannelConfig(M=M, K=K, N_UE=N_UE, zeta_r=zeta, zeta_t=zeta,
                        block_diag_users=block_diag_users, seed=seed)
    rng = substream(seed, context=1)
    real = sample_channel(cfg, rng)
    g_re, g_im = normal_pairs(rng, cfg.N)
    s = (g_re + 1j * g_im) / np.sqrt(2.0)
    sigma_n2 = (cfg.N / cfg.M) * 10.0 ** (-snr_db / 10.0)
    n_re, n_im = normal_pairs(rng, cfg.M)
    noise = np.sqrt(sigma_n2 / 2.0) * (n_re + 1j * n_im)
    y = real.H @ s + noise
    system = gram_system(real.H, y, kind, sigma_n2 if kind == "lmmse" else 0.0)
    return system, real, s
