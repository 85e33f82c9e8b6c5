"""Tests for modulation, transmission, and the BER harness."""

import itertools
import math

import numpy as np
import pytest

from fpmimo.channel import ChannelConfig
from fpmimo.detect import (
    BERConfig,
    DetectorSpec,
    awgn_transmit,
    demodulate_16qam,
    iterations_to_match,
    modulate_16qam,
    noise_variance,
    run_ber_sweep,
    simulate_trials,
)
from fpmimo.errors import ContractViolation
from fpmimo.rng import substream

SQ10 = math.sqrt(10.0)


class TestQam:
    def test_round_trip_all_sixteen_patterns(self):
        bits = np.array(list(itertools.product([0, 1], repeat=4)), dtype=np.uint8)
        flat = bits.reshape(-1)
        again = demodulate_16qam(modulate_16qam(flat))
        np.testing.assert_array_equal(again, flat)

    def test_all_zero_bits_map_to_corner(self):
        sym = modulate_16qam(np.zeros(4, dtype=np.uint8))
        assert sym[0] == pytest.approx((-3 - 3j) / SQ10)

    def test_unit_average_energy(self):
        bits = np.array(list(itertools.product([0, 1], repeat=4)), dtype=np.uint8)
        syms = modulate_16qam(bits.reshape(-1))
        assert np.mean(np.abs(syms) ** 2) == pytest.approx(1.0)

    def test_gray_adjacency_per_axis(self):
        # Walking the decision levels in order flips exactly one bit per step.
        levels = np.array([-3.0, -1.0, 1.0, 3.0]) / SQ10
        labels = [demodulate_16qam(np.array([lv + 1j * levels[0]]))[:2]
                  for lv in levels]
        for a, b in zip(labels, labels[1:]):
            assert int(np.sum(a != b)) == 1

    def test_bit_count_must_be_divisible_by_four(self):
        with pytest.raises(ContractViolation):
            modulate_16qam(np.zeros(6, dtype=np.uint8))

    def test_nonfinite_entries_decide_deterministically(self):
        vals = np.array([complex(np.nan, 1.0), complex(np.inf, np.inf),
                         complex(-np.inf, -np.inf)])
        bits = demodulate_16qam(vals)
        # NaN falls to the lowest level on its axis, +/-inf to the extremes;
        # the imaginary part 1.0 of the first entry sits above the top
        # threshold, so its quadrature label is the +3 level.
        np.testing.assert_array_equal(bits[:4], [0, 0, 1, 0])
        np.testing.assert_array_equal(bits[4:8], [1, 0, 1, 0])
        np.testing.assert_array_equal(bits[8:], [0, 0, 0, 0])

    def test_boundary_ties_go_to_smaller_level_index(self):
        ties = np.array([-2.0, 0.0, 2.0]) / SQ10 + 0j
        idxs = demodulate_16qam(ties).reshape(3, 4)[:, :2]
        np.testing.assert_array_equal(idxs, [[0, 0], [0, 1], [1, 1]])


class TestAwgn:
    def test_noise_variance_convention(self):
        assert noise_variance(256, 32, 20.0) == pytest.approx(1.25e-3)
        assert noise_variance(256, 32, 20.0, "transmit") == pytest.approx(1e-2)
        with pytest.raises(ContractViolation):
            noise_variance(256, 32, 20.0, "per_carrier")

    def test_high_snr_limit(self):
        H = np.eye(4, dtype=complex)
        x = modulate_16qam(np.zeros(16, dtype=np.uint8))
        y, s2 = awgn_transmit(H, x, 300.0, substream(0))
        assert s2 == pytest.approx(0.0, abs=1e-30)
        np.testing.assert_allclose(y, x, atol=1e-12)

    def test_measured_noise_power(self):
        M, N = 64, 8
        H = np.zeros((M, N), dtype=complex)
        x = np.zeros(N, dtype=complex)
        acc = 0.0
        trials = 400
        for t in range(trials):
            y, s2 = awgn_transmit(H, x, 10.0, substream(1, trial=t))
            acc += np.sum(np.abs(y) ** 2) / M
        assert acc / trials == pytest.approx(s2, rel=0.03)


def _sweep_config(**kw):
    defaults = dict(
        channel=ChannelConfig(M=32, K=4, N_UE=2, zeta_r=0.5, zeta_t=0.5),
        detectors=(DetectorSpec(algorithm="lmmse"),
                   DetectorSpec(algorithm="fp_bj_cg", iters=6, L=4,
                                matvec="fp16", inner="fp16")),
        snr_grid=(10.0, 20.0),
        trials=200,
        seed=77,
        chunk=64,
    )
    defaults.update(kw)
    return BERConfig(**defaults)


class TestBerSweep:
    def test_noiseless_sanity_all_detectors_are_errorless(self):
        cfg = _sweep_config(snr_grid=(300.0,), trials=50,
                            detectors=(DetectorSpec(algorithm="lmmse"),
                                       DetectorSpec(algorithm="cg", iters=16),
                                       DetectorSpec(algorithm="fp_bj_cg",
                                                    iters=8, L=4,
                                                    matvec="fp16", inner="fp16")))
        curves = run_ber_sweep(cfg)
        for curve in curves:
            assert curve.points[0].bit_errors == 0

    def test_matched_inputs_across_detectors(self):
        cfg = _sweep_config()
        a = simulate_trials(cfg, 0, range(10))
        b = simulate_trials(cfg, 0, range(10))
        np.testing.assert_array_equal(a["H"], b["H"])
        np.testing.assert_array_equal(a["bits"], b["bits"])
        np.testing.assert_array_equal(a["y"], b["y"])

    def test_chunking_does_not_change_results(self):
        cfg1 = _sweep_config(chunk=32)
        cfg2 = _sweep_config(chunk=200)
        c1 = run_ber_sweep(cfg1)
        c2 = run_ber_sweep(cfg2)
        for a, b in zip(c1, c2):
            for pa, pb in zip(a.points, b.points):
                assert pa.bit_errors == pb.bit_errors

    def test_ber_not_increasing_in_snr(self):
        cfg = _sweep_config(snr_grid=(0.0, 10.0, 20.0), trials=300)
        curves = run_ber_sweep(cfg)
        for curve in curves:
            bers = [p.ber for p in curve.points]
            assert bers[0] >= bers[-1]

    def test_cg_at_full_budget_matches_lmmse(self):
        cfg = _sweep_config(
            snr_grid=(12.0,), trials=300,
            detectors=(DetectorSpec(algorithm="lmmse"),
                       DetectorSpec(algorithm="cg", iters=8)))
        lmmse, cg = run_ber_sweep(cfg)
        p, q = lmmse.points[0], cg.points[0]
        assert abs(p.ber - q.ber) <= (p.ci_high - p.ci_low)

    def test_imperfect_csi_degrades_lmmse(self):
        base = _sweep_config(snr_grid=(16.0,), trials=400,
                             detectors=(DetectorSpec(algorithm="lmmse"),))
        perf = run_ber_sweep(base)[0].points[0]
        rough = run_ber_sweep(_sweep_config(
            snr_grid=(16.0,), trials=400, epsilon_db=5.0,
            detectors=(DetectorSpec(algorithm="lmmse"),)))[0].points[0]
        assert rough.ber > perf.ber

    def test_wilson_interval_brackets_the_estimate(self):
        cfg = _sweep_config(snr_grid=(8.0,), trials=200)
        for curve in run_ber_sweep(cfg):
            p = curve.points[0]
            assert p.ci_low <= p.ber <= p.ci_high


class TestDetectorSpec:
    def test_bj_requires_block_size(self):
        with pytest.raises(ContractViolation):
            DetectorSpec(algorithm="fp_bj_cg")

    def test_unknown_algorithm(self):
        with pytest.raises(ContractViolation):
            DetectorSpec(algorithm="zf_direct")

    def test_name_carries_matvec_format(self):
        det = DetectorSpec(algorithm="fp_cg", matvec="fp16", inner="fp16")
        assert det.name == "fp_cg[fp16]"


def test_iterations_to_match_reads_mean_curves():
    curve = np.array([100.0, 10.0, 2.0, 1.05, 1.0, 1.0])
    assert iterations_to_match(curve, 1.0, margin=1.1) == 3
    assert iterations_to_match(curve, 0.5, margin=1.1) is None
