"""Symmetric-function kernels against enumeration, algebra, and LAPACK."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from negcone import symfun
from negcone.errors import DomainError
from negcone.symfun import Spectrum, SymMatrix


def spectra(n_min=2, n_max=6):
    return st.lists(
        st.floats(min_value=-10.0, max_value=10.0, allow_nan=False),
        min_size=n_min, max_size=n_max)


class TestSigma:
    def test_hand_values(self):
        s = Spectrum([1.0, 2.0, 3.0])
        assert symfun.sigma_k(s, 1) == 6.0
        assert symfun.sigma_k(s, 2) == 11.0
        assert symfun.sigma_k(s, 3) == 6.0

    def test_matches_subset_enumeration(self):
        rng = np.random.default_rng(101)
        vals = rng.standard_normal((40, 6)) * 3.0
        for k in range(1, 7):
            got = symfun.sigma_batch(vals, k)
            want = np.array([symfun.sigma_k_bruteforce(v, k) for v in vals])
            assert np.allclose(got, want, rtol=0, atol=1e-10 * np.abs(want).max())

    def test_sigma_all_consistency(self):
        rng = np.random.default_rng(7)
        vals = rng.standard_normal((10, 5))
        allsig = symfun.sigma_all_batch(vals)
        assert np.allclose(allsig[:, 0], 1.0)
        for k in range(1, 6):
            assert np.allclose(allsig[:, k], symfun.sigma_batch(vals, k))

    def test_newton_identity(self):
        # p_k - s_1 p_{k-1} + ... + (-1)^k k s_k = 0
        rng = np.random.default_rng(13)
        for n in (3, 5, 6):
            lam = rng.standard_normal(n) * 2.0
            p = [np.sum(lam ** m) for m in range(n + 1)]
            s = [float(symfun.sigma_batch(lam, m)) if m else 1.0 for m in range(n + 1)]
            for k in range(1, n + 1):
                acc = 0.0
                for j in range(1, k):
                    acc += (-1) ** (j - 1) * s[j] * p[k - j]
                acc += (-1) ** (k - 1) * k * s[k]
                assert abs(p[k] - acc) <= 1e-10 * max(1.0, abs(p[k]))

    @settings(max_examples=60, deadline=None)
    @given(spectra(), st.integers(min_value=1, max_value=6), st.floats(0.1, 3.0))
    def test_homogeneity(self, vals, k, t):
        if k > len(vals):
            return
        lam = np.array(vals)
        a = symfun.sigma_batch(t * lam, k)
        b = (t ** k) * symfun.sigma_batch(lam, k)
        assert abs(a - b) <= 1e-9 * max(1.0, abs(b))

    @settings(max_examples=60, deadline=None)
    @given(spectra(), st.integers(min_value=1, max_value=6))
    def test_permutation_invariance(self, vals, k):
        if k > len(vals):
            return
        lam = np.array(vals)
        a = symfun.sigma_batch(lam, k)
        b = symfun.sigma_batch(lam[::-1].copy(), k)
        assert abs(a - b) <= 1e-10 * max(1.0, abs(a))

    def test_k_out_of_range(self):
        with pytest.raises(DomainError):
            symfun.sigma_batch(np.ones(3), 4)


class TestGradients:
    def test_against_central_difference(self):
        rng = np.random.default_rng(23)
        h = 1e-6
        for n, k in ((3, 2), (5, 3), (6, 4), (6, 6)):
            lam = rng.standard_normal(n) * 2.0
            g = symfun.grad_sigma_batch(lam, k)
            for i in range(n):
                e = np.zeros(n)
                e[i] = h
                fd = (symfun.sigma_batch(lam + e, k) - symfun.sigma_batch(lam - e, k)) / (2 * h)
                assert abs(g[i] - fd) <= 1e-6 * max(1.0, abs(fd))

    def test_grad_is_leave_one_out(self):
        lam = np.array([1.0, 2.0, 3.0, 4.0])
        g = symfun.grad_sigma_batch(lam, 2)
        for i in range(4):
            rest = np.delete(lam, i)
            assert abs(g[i] - symfun.sigma_k_bruteforce(rest, 1)) < 1e-12

    def test_hessian_against_fd(self):
        rng = np.random.default_rng(29)
        lam = rng.standard_normal(5)
        h = 1e-5
        for k in (2, 3, 5):
            H = symfun.hess_sigma_batch(lam, k)
            assert np.allclose(H, H.T, atol=1e-12)
            assert np.allclose(np.diagonal(H), 0.0)
            for i in range(5):
                e = np.zeros(5)
                e[i] = h
                fd = (symfun.grad_sigma_batch(lam + e, k)
                      - symfun.grad_sigma_batch(lam - e, k)) / (2 * h)
                assert np.abs(H[i] - fd).max() < 1e-7


class TestRho:
    def test_normalized_at_ones(self):
        for n in (3, 4, 5):
            for k in range(1, n + 1):
                assert abs(symfun.rho_k(Spectrum(np.ones(n)), k) - 1.0) < 1e-14

    def test_rejects_negative_sigma(self):
        with pytest.raises(DomainError):
            symfun.rho_k(Spectrum([-1.0, 1.0, 1.0]), 3)

    def test_batch_nan_outside(self):
        vals = np.array([[1.0, 1.0, 1.0], [-1.0, 1.0, 1.0]])
        out = symfun.rho_k_batch(vals, 3)
        assert abs(out[0] - 1.0) < 1e-14
        assert np.isnan(out[1])


class TestJacobi:
    def test_reconstruction_and_orthogonality(self):
        rng = np.random.default_rng(3)
        for n in (2, 3, 5, 8):
            m = rng.standard_normal((n, n))
            m = 0.5 * (m + m.T)
            q, lam = symfun.jacobi_eigh_batch(m)
            assert np.abs(q @ np.diag(lam) @ q.T - m).max() < 1e-10
            assert np.abs(q.T @ q - np.eye(n)).max() < 1e-10
            assert np.all(np.diff(lam) >= 0)

    def test_matches_lapack(self):
        rng = np.random.default_rng(17)
        mats = rng.standard_normal((30, 6, 6))
        mats = 0.5 * (mats + np.swapaxes(mats, -1, -2))
        _, lam = symfun.jacobi_eigh_batch(mats)
        ref = np.linalg.eigvalsh(mats)
        assert np.abs(lam - ref).max() < 1e-9

    def test_near_degenerate(self):
        m = np.diag([1.0, 1.0 + 1e-13, 2.0])
        m[0, 1] = m[1, 0] = 1e-14
        _, lam = symfun.jacobi_eigh_batch(m)
        assert np.abs(lam - np.linalg.eigvalsh(m)).max() < 1e-12

    def test_spectrum_wrapper(self):
        s = symfun.eigenvalues(np.diag([3.0, 1.0, 2.0]))
        assert isinstance(s, Spectrum)
        assert np.allclose(s.asarray(), [1.0, 2.0, 3.0])


class TestSqrtInv:
    def test_sqrt_squares_back(self):
        rng = np.random.default_rng(31)
        a = rng.standard_normal((4, 4))
        spd = a @ a.T + 4.0 * np.eye(4)
        r = symfun.sqrt_spd(spd).entries
        assert np.abs(r @ r - spd).max() < 1e-10
        assert np.abs(r - r.T).max() < 1e-12

    def test_inv_spd(self):
        rng = np.random.default_rng(37)
        a = rng.standard_normal((5, 5))
        spd = a @ a.T + 5.0 * np.eye(5)
        inv = symfun.inv_spd_batch(spd)
        assert np.abs(inv @ spd - np.eye(5)).max() < 1e-10

    def test_sqrt_rejects_indefinite(self):
        with pytest.raises(DomainError):
            symfun.sqrt_spd(np.diag([1.0, -1.0]))


class TestContainers:
    def test_spectrum_sorts(self):
        s = Spectrum([3.0, 1.0, 2.0])
        assert s.values == (1.0, 2.0, 3.0)
        assert s.n == 3

    def test_spectrum_rejects_nonfinite(self):
        with pytest.raises(DomainError):
            Spectrum([1.0, np.nan])

    def test_symmatrix_rejects_asymmetric(self):
        with pytest.raises(DomainError):
            SymMatrix(np.array([[1.0, 2.0], [0.0, 1.0]]))

    def test_symmatrix_symmetrizes_roundoff(self):
        m = np.array([[1.0, 0.5 + 1e-15], [0.5, 2.0]])
        sm = SymMatrix(m)
        assert np.abs(sm.entries - sm.entries.T).max() == 0.0
