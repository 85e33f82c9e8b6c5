"""Tests for the dense complex linear algebra kernels."""

from fractions import Fraction

import numpy as np
import pytest

from fpmimo.errors import ContractViolation
from fpmimo.formats import BFLOAT16, FP16, FP32, FP64, gamma_factor
from fpmimo.linalg import (
    _solve_direct_batch,
    _spectral_norm_batch,
    axpy_fp,
    condition_number,
    dot_fp,
    hermitian_eig,
    invert_hermitian,
    matrix_sqrt_psd,
    matvec_fp,
    norm2,
    solve_direct,
)

U64 = 2.0 ** -53


def _random_cvec(rng, n, scale=1.0):
    return scale * (rng.standard_normal(n) + 1j * rng.standard_normal(n))


def _random_hermitian(rng, n):
    B = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return 0.5 * (B + B.conj().T)


def _random_hpd(rng, n, shift=0.5):
    B = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    A = B.conj().T @ B / n + shift * np.eye(n)
    return 0.5 * (A + A.conj().T)


class TestMatvecFp:
    def test_identity_returns_vector(self):
        rng = np.random.default_rng(0)
        v = FP16.round_complex(_random_cvec(rng, 8))
        out = matvec_fp(np.eye(8), v, FP16)
        np.testing.assert_array_equal(out, v)

    def test_small_exact_instance(self):
        A = np.array([[2.0, 0.0], [0.0, 1.0]])
        out = matvec_fp(A, [1.0, 1.0], FP16)
        np.testing.assert_array_equal(out, [2.0 + 0j, 1.0 + 0j])

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ContractViolation):
            matvec_fp(np.eye(3), np.ones(4), FP16)

    @pytest.mark.parametrize("fmt", [BFLOAT16, FP16], ids=lambda f: f.name)
    def test_error_envelope_random_hermitian(self, fmt):
        rng = np.random.default_rng(21)
        n = 32
        bound_const = np.sqrt(2 * n) * gamma_factor(2 * n, fmt)
        for _ in range(200):
            A = fmt.round_complex(_random_hermitian(rng, n))
            v = fmt.round_complex(_random_cvec(rng, n))
            got = matvec_fp(A, v, fmt)
            exact = A @ v
            err = np.linalg.norm(got - exact)
            lim = bound_const * np.linalg.norm(A, 2) * np.linalg.norm(v)
            assert err <= lim

    def test_native_format_matches_reference_product(self):
        rng = np.random.default_rng(22)
        A = _random_hermitian(rng, 24)
        v = _random_cvec(rng, 24)
        got = matvec_fp(A, v, FP64)
        ref = A @ v
        assert np.linalg.norm(got - ref) <= 10 * 24 * U64 * np.linalg.norm(ref)

    def test_batched_matches_loop(self):
        rng = np.random.default_rng(23)
        A = rng.standard_normal((5, 6, 6)) + 1j * rng.standard_normal((5, 6, 6))
        v = rng.standard_normal((5, 6)) + 1j * rng.standard_normal((5, 6))
        batched = matvec_fp(A, v, FP16)
        for t in range(5):
            np.testing.assert_array_equal(batched[t], matvec_fp(A[t], v[t], FP16))


class TestDotFp:
    def test_orthonormal_basis_vectors(self):
        e = np.eye(4)
        for fmt in (BFLOAT16, FP16, FP32, FP64):
            assert dot_fp(e[1], e[1], fmt) == 1.0 + 0j
            assert dot_fp(e[1], e[2], fmt) == 0.0 + 0j

    def test_all_ones(self):
        v = np.ones(4)
        assert dot_fp(v, v, FP16) == 4.0 + 0j

    def test_empty_vectors_give_zero(self):
        assert dot_fp(np.zeros(0), np.zeros(0), FP16) == 0j

    def test_conjugation_side(self):
        u = np.array([1j])
        v = np.array([1.0 + 0j])
        assert dot_fp(u, v, FP64) == -1j

    @pytest.mark.parametrize("fmt", [BFLOAT16, FP16], ids=lambda f: f.name)
    def test_error_envelope_random_pairs(self, fmt):
        rng = np.random.default_rng(31)
        n = 64
        bound_const = np.sqrt(2) * gamma_factor(2 * n, fmt)
        for _ in range(300):
            u = fmt.round_complex(_random_cvec(rng, n))
            v = fmt.round_complex(_random_cvec(rng, n))
            got = dot_fp(u, v, fmt)
            exact = np.vdot(u, v)
            assert abs(got - exact) <= bound_const * np.linalg.norm(u) * np.linalg.norm(v)

    def test_self_inner_product_is_real_nonnegative(self):
        rng = np.random.default_rng(32)
        v = _random_cvec(rng, 50)
        got = dot_fp(v, v, FP16)
        assert got.imag == 0.0
        assert got.real >= 0.0


class TestAxpyFp:
    def test_zero_coefficient_keeps_y(self):
        rng = np.random.default_rng(41)
        y = FP16.round_complex(_random_cvec(rng, 10))
        out = axpy_fp(0.0, np.ones(10), y, FP16)
        np.testing.assert_array_equal(out, y)

    def test_exact_cancellation(self):
        rng = np.random.default_rng(42)
        y = FP16.round_complex(_random_cvec(rng, 10))
        out = axpy_fp(1.0, -y, y, FP16)
        np.testing.assert_array_equal(out, np.zeros(10, dtype=complex))

    def test_against_rational_oracle(self):
        # Exact dyadic-rational evaluation of y + a*x, compared at fp64.
        rng = np.random.default_rng(43)
        n = 8
        a = complex(rng.standard_normal(), rng.standard_normal())
        x = _random_cvec(rng, n)
        y = _random_cvec(rng, n)
        got = axpy_fp(a, x, y, FP64)

        def fr(z):
            return Fraction(z)

        err2 = Fraction(0)
        ref2 = Fraction(0)
        for k in range(n):
            ar, ai = fr(a.real), fr(a.imag)
            xr, xi = fr(x[k].real), fr(x[k].imag)
            yr, yi = fr(y[k].real), fr(y[k].imag)
            er = yr + ar * xr - ai * xi
            ei = yi + ar * xi + ai * xr
            dr = fr(got[k].real) - er
            di = fr(got[k].imag) - ei
            err2 += dr * dr + di * di
            ref2 += er * er + ei * ei
        rel = float(err2 / ref2) ** 0.5
        assert rel <= 4 * U64


class TestNorm2:
    def test_zero_vector(self):
        assert norm2(np.zeros(5)) == 0.0

    def test_pythagorean_instance(self):
        assert norm2(np.array([3.0, 4.0j])) == pytest.approx(5.0, abs=0)

    def test_matches_direct_summation(self):
        rng = np.random.default_rng(51)
        v = _random_cvec(rng, 200)
        direct = np.sum(np.abs(v) ** 2)
        assert abs(norm2(v) ** 2 - direct) <= 10 * 200 * U64 * direct

    def test_overflow_safe(self):
        v = np.array([1e200 + 0j, 1e200 + 0j])
        assert norm2(v) == pytest.approx(np.sqrt(2) * 1e200, rel=1e-12)

    def test_infinite_entries_give_inf(self):
        assert norm2(np.array([1.0, np.inf])) == np.inf


class TestHermitianEig:
    def test_identity(self):
        w, V = hermitian_eig(np.eye(5))
        np.testing.assert_allclose(w, np.ones(5))

    def test_two_by_two_closed_form(self):
        w, _ = hermitian_eig(np.array([[1.0, 0.5], [0.5, 1.0]]))
        np.testing.assert_allclose(w, [0.5, 1.5], atol=1e-14)

    def test_random_reconstruction(self):
        rng = np.random.default_rng(61)
        A = _random_hermitian(rng, 16)
        w, V = hermitian_eig(A)
        assert np.all(np.diff(w) >= 0)
        tol = 100 * 16 * U64 * np.linalg.norm(A)
        assert np.linalg.norm(A @ V - V * w) <= tol
        assert np.linalg.norm(V.conj().T @ V - np.eye(16)) <= tol

    def test_non_hermitian_rejected(self):
        with pytest.raises(ContractViolation):
            hermitian_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))


class TestConditionNumber:
    def test_identity_is_one(self):
        assert condition_number(np.eye(7)) == pytest.approx(1.0)

    def test_two_by_two_closed_form(self):
        assert condition_number(np.array([[1.0, 0.5], [0.5, 1.0]])) == pytest.approx(3.0)

    def test_diagonal_ratio(self):
        assert condition_number(np.diag([10.0, 1.0, 0.1])) == pytest.approx(100.0)

    def test_scale_invariance(self):
        rng = np.random.default_rng(71)
        A = _random_hpd(rng, 12)
        k1 = condition_number(A)
        k2 = condition_number(37.5 * A)
        assert k2 == pytest.approx(k1, rel=1e-10)

    def test_indefinite_rejected(self):
        with pytest.raises(ContractViolation):
            condition_number(np.diag([1.0, -2.0]))


class TestMatrixSqrtPsd:
    def test_identity(self):
        np.testing.assert_allclose(matrix_sqrt_psd(np.eye(4)), np.eye(4))

    def test_diagonal(self):
        np.testing.assert_allclose(
            matrix_sqrt_psd(np.diag([4.0, 9.0])), np.diag([2.0, 3.0])
        )

    def test_exponential_correlation_reconstruction(self):
        from fpmimo.channel import exp_correlation_matrix

        R = exp_correlation_matrix(4, 0.5)
        S = matrix_sqrt_psd(R)
        tol = 100 * 4 * U64 * np.linalg.norm(R)
        assert np.linalg.norm(S @ S - R) <= tol
        assert np.linalg.norm(S - S.conj().T) <= tol
        assert np.linalg.eigvalsh(S)[0] >= -tol

    def test_negative_definite_rejected(self):
        with pytest.raises(ContractViolation):
            matrix_sqrt_psd(np.diag([1.0, -0.5]))


class TestSolveDirect:
    def test_identity_system(self):
        b = np.array([1.0 + 2j, -3.0])
        np.testing.assert_array_equal(solve_direct(np.eye(2), b), b)

    def test_diagonal_system(self):
        A = np.diag([2.0, 1.0])
        np.testing.assert_allclose(solve_direct(A, [2.0, 1.0]), [1.0, 1.0])

    def test_agrees_with_eigendecomposition_solve(self):
        rng = np.random.default_rng(81)
        A = _random_hpd(rng, 32)
        b = _random_cvec(rng, 32)
        x = solve_direct(A, b)
        w, V = np.linalg.eigh(A)
        x_eig = V @ ((V.conj().T @ b) / w)
        assert np.linalg.norm(x - x_eig) <= 1e-10 * np.linalg.norm(x_eig)

    def test_residual_tolerance(self):
        rng = np.random.default_rng(82)
        n = 32
        A = _random_hpd(rng, n)
        b = _random_cvec(rng, n)
        x = solve_direct(A, b)
        kappa = condition_number(A)
        rel = np.linalg.norm(b - A @ x) / (np.linalg.norm(A, 2) * np.linalg.norm(x))
        assert rel <= 100 * n * U64 * kappa

    def test_non_pd_rejected(self):
        with pytest.raises(ContractViolation):
            solve_direct(np.diag([1.0, -1.0]), np.ones(2))

    def test_batch_helper_matches_single(self):
        rng = np.random.default_rng(83)
        A = np.stack([_random_hpd(rng, 6) for _ in range(4)])
        b = np.stack([_random_cvec(rng, 6) for _ in range(4)])
        batched = _solve_direct_batch(A, b)
        for t in range(4):
            np.testing.assert_array_equal(batched[t], solve_direct(A[t], b[t]))


class TestInvertHermitian:
    def test_identity(self):
        np.testing.assert_allclose(invert_hermitian(np.eye(3)), np.eye(3))

    def test_diagonal(self):
        np.testing.assert_allclose(
            invert_hermitian(np.diag([2.0, 4.0])), np.diag([0.5, 0.25])
        )

    def test_random_reconstruction(self):
        rng = np.random.default_rng(91)
        L = 8
        A = _random_hpd(rng, L)
        inv = invert_hermitian(A)
        kappa = condition_number(A)
        assert np.linalg.norm(A @ inv - np.eye(L)) <= 100 * L * U64 * kappa
        np.testing.assert_allclose(inv, inv.conj().T)

    def test_non_pd_rejected(self):
        with pytest.raises(ContractViolation):
            invert_hermitian(np.zeros((2, 2)))


def test_spectral_norm_batch_matches_numpy():
    rng = np.random.default_rng(95)
    A = np.stack([_random_hermitian(rng, 9) for _ in range(5)])
    got = _spectral_norm_batch(A)
    for t in range(5):
        assert got[t] == pytest.approx(np.linalg.norm(A[t], 2), rel=1e-12)
