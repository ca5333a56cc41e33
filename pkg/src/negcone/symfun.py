"""Elementary symmetric functions, their derivatives, and symmetric-matrix spectra.

Everything downstream (cone tests, linearizations, curvature fields) reduces to
sigma_k of some eigenvalue vector, so the routines here come in two layers: a
scalar API on Spectrum/SymMatrix values, and batched ndarray kernels (trailing
axes (n,) or (n, n)) that the field-level modules call directly.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError

JACOBI_THRESHOLD = 1e-14
JACOBI_MAX_SWEEPS = 100


@dataclass(frozen=True)
class Spectrum:
    """Sorted eigenvalue tuple lambda = (lambda_1 <= ... <= lambda_n)."""

    values: tuple

    def __init__(self, values):
        vals = tuple(sorted(float(v) for v in values))
        if len(vals) < 2:
            raise DomainError("a spectrum needs n >= 2 entries")
        if not all(math.isfinite(v) for v in vals):
            raise DomainError("spectrum entries must be finite")
        object.__setattr__(self, "values", vals)

    @property
    def n(self):
        return len(self.values)

    def asarray(self):
        return np.array(self.values, dtype=float)


@dataclass(frozen=True)
class SymMatrix:
    """Real symmetric n x n matrix, symmetrized on construction."""

    entries: np.ndarray = field(repr=False)

    def __init__(self, entries):
        m = np.asarray(entries, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DomainError("SymMatrix needs a square matrix")
        scale = np.abs(m).max()
        if scale > 0 and np.abs(m - m.T).max() > 1e-12 * max(scale, 1.0):
            raise DomainError("matrix is not symmetric within 1e-12 relative")
        object.__setattr__(self, "entries", 0.5 * (m + m.T))

    @property
    def n(self):
        return self.entries.shape[0]


def _as_lambda_array(lam):
    if isinstance(lam, Spectrum):
        return lam.asarray()
    return np.asarray(lam, dtype=float)


def sigma_batch(vals, k):
    """sigma_k along the last axis of ``vals``, shape (..., n) -> (...).

    Uses the coefficient recurrence for prod_i (t + lambda_i): after absorbing
    each lambda_i the slot e_j picks up e_{j-1} * lambda_i.  O(n k) per point
    and free of the cancellation that subset enumeration accumulates.
    """
    vals = np.asarray(vals, dtype=float)
    n = vals.shape[-1]
    if not 0 <= k <= n:
        raise DomainError(f"sigma_{k} undefined for n={n}")
    e = np.zeros(vals.shape[:-1] + (k + 1,), dtype=float)
    e[..., 0] = 1.0
    for i in range(n):
        top = min(i + 1, k)
        e[..., 1:top + 1] += e[..., 0:top] * vals[..., i:i + 1]
    return e[..., k]


def sigma_all_batch(vals):
    """All of sigma_0 .. sigma_n at once; shape (..., n) -> (..., n+1)."""
    vals = np.asarray(vals, dtype=float)
    n = vals.shape[-1]
    e = np.zeros(vals.shape[:-1] + (n + 1,), dtype=float)
    e[..., 0] = 1.0
    for i in range(n):
        e[..., 1:i + 2] = e[..., 1:i + 2] + e[..., 0:i + 1] * vals[..., i:i + 1]
    return e


def grad_sigma_batch(vals, k):
    """d sigma_k / d lambda_i = sigma_{k-1}(lambda with entry i removed).

    Division-free: entry i is the degree-(k-1) coefficient of the product of
    the prefix polynomial (factors before i) and the suffix polynomial
    (factors after i).
    """
    vals = np.asarray(vals, dtype=float)
    n = vals.shape[-1]
    if not 1 <= k <= n:
        raise DomainError(f"grad sigma_{k} undefined for n={n}")
    shape = vals.shape[:-1]
    deg = k  # coefficients 0..k-1 suffice
    pre = np.zeros(shape + (n, deg), dtype=float)
    suf = np.zeros(shape + (n, deg), dtype=float)
    pre[..., 0, 0] = 1.0
    for i in range(1, n):
        pre[..., i, :] = pre[..., i - 1, :]
        pre[..., i, 1:] += pre[..., i - 1, :-1] * vals[..., i - 1:i]
    suf[..., n - 1, 0] = 1.0
    for i in range(n - 2, -1, -1):
        suf[..., i, :] = suf[..., i + 1, :]
        suf[..., i, 1:] += suf[..., i + 1, :-1] * vals[..., i + 1:i + 2]
    out = np.zeros(shape + (n,), dtype=float)
    for j in range(k):
        out += pre[..., j] * suf[..., k - 1 - j]
    return out


def hess_sigma_batch(vals, k):
    """Second derivatives of sigma_k: entry (i, j) is sigma_{k-2} with both
    entries removed (zero on the diagonal and for k < 2).

    Built by deleting index i and taking the gradient of sigma_{k-1} on the
    reduced vector, which is exactly the double-exclusion value.
    """
    vals = np.asarray(vals, dtype=float)
    n = vals.shape[-1]
    shape = vals.shape[:-1]
    out = np.zeros(shape + (n, n), dtype=float)
    if k < 2:
        return out
    keep = np.arange(n)
    for i in range(n):
        idx = np.concatenate([keep[:i], keep[i + 1:]])
        g = grad_sigma_batch(vals[..., idx], k - 1)
        out[..., i, idx] = g
    return out


def sigma_k(lam, k):
    """k-th elementary symmetric function of a Spectrum (sigma_0 = 1)."""
    return float(sigma_batch(_as_lambda_array(lam), int(k)))


def sigma_k_bruteforce(lam, k):
    """Subset-enumeration oracle for sigma_k; exponential, tests only."""
    vals = _as_lambda_array(lam)
    n = vals.shape[0]
    if not 0 <= k <= n:
        raise DomainError(f"sigma_{k} undefined for n={n}")
    if k == 0:
        return 1.0
    return float(sum(math.prod(c) for c in itertools.combinations(vals, k)))


def grad_sigma_k(lam, k):
    """Gradient of sigma_k, entry i being sigma_{k-1} of lambda without i."""
    return tuple(float(v) for v in grad_sigma_batch(_as_lambda_array(lam), int(k)))


def rho_k(lam, k):
    """Normalized sigma_k, (sigma_k / binom(n,k))^(1/k); degree-1 homogeneous."""
    vals = _as_lambda_array(lam)
    n = vals.shape[0]
    s = sigma_k(vals, k)
    if s < 0:
        raise DomainError(f"rho_{k} needs sigma_{k} >= 0, got {s}")
    return (s / math.comb(n, int(k))) ** (1.0 / int(k))


def rho_k_batch(vals, k):
    """Batched rho_k; negative sigma_k entries produce NaN, callers mask."""
    vals = np.asarray(vals, dtype=float)
    n = vals.shape[-1]
    s = sigma_batch(vals, k) / math.comb(n, int(k))
    with np.errstate(invalid="ignore"):
        return np.where(s >= 0, np.abs(s) ** (1.0 / int(k)), np.nan)


def jacobi_eigh_batch(mats):
    """Cyclic Jacobi diagonalization of a batch of symmetric matrices.

    Returns (Q, lam) with mats = Q diag(lam) Q^T, eigenvalues sorted
    ascending per matrix.  Rotations sweep the strict upper triangle in a
    fixed (p, q) order; per-pair angles are computed for the whole batch at
    once, so the cost is O(sweeps * n^2) vectorized passes over the batch.
    """
    a = np.array(mats, dtype=float)
    squeeze = a.ndim == 2
    if squeeze:
        a = a[None]
    lead = a.shape[:-2]
    n = a.shape[-1]
    a = a.reshape(-1, n, n)
    b = a.shape[0]
    if n == 1:
        lam = a[:, 0, 0].reshape(lead + (1,))
        ones = np.ones(lead + (1, 1))
        return (ones[0], lam[0]) if squeeze else (ones, lam)
    q = np.broadcast_to(np.eye(n), (b, n, n)).copy()
    scale = np.maximum(np.abs(a).reshape(b, -1).max(axis=1), 1.0)
    iu = np.triu_indices(n, 1)
    for _ in range(JACOBI_MAX_SWEEPS):
        off = np.abs(a[:, iu[0], iu[1]]).max(axis=1)
        if np.all(off <= JACOBI_THRESHOLD * scale):
            break
        for p in range(n - 1):
            for r in range(p + 1, n):
                apq = a[:, p, r]
                live = np.abs(apq) > JACOBI_THRESHOLD * scale
                if not live.any():
                    continue
                app = a[:, p, p]
                aqq = a[:, r, r]
                # stable rotation from Golub & Van Loan: t = tan(theta)
                theta = np.where(live, (aqq - app) / np.where(live, 2.0 * apq, 1.0), 0.0)
                t = np.sign(theta) / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
                t = np.where(np.sign(theta) == 0, 1.0 / (np.abs(theta) + np.sqrt(theta * theta + 1.0)), t)
                t = np.where(live, t, 0.0)
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                col_p = a[:, :, p].copy()
                col_q = a[:, :, r].copy()
                a[:, :, p] = c[:, None] * col_p - s[:, None] * col_q
                a[:, :, r] = s[:, None] * col_p + c[:, None] * col_q
                row_p = a[:, p, :].copy()
                row_q = a[:, r, :].copy()
                a[:, p, :] = c[:, None] * row_p - s[:, None] * row_q
                a[:, r, :] = s[:, None] * row_p + c[:, None] * row_q
                a[:, p, r] = 0.0
                a[:, r, p] = 0.0
                qp = q[:, :, p].copy()
                qq = q[:, :, r].copy()
                q[:, :, p] = c[:, None] * qp - s[:, None] * qq
                q[:, :, r] = s[:, None] * qp + c[:, None] * qq
    lam = np.einsum("bii->bi", a).copy()
    order = np.argsort(lam, axis=1, kind="stable")
    lam = np.take_along_axis(lam, order, axis=1)
    q = np.take_along_axis(q, order[:, None, :], axis=2)
    lam = lam.reshape(lead + (n,))
    q = q.reshape(lead + (n, n))
    if squeeze:
        return q[0], lam[0]
    return q, lam


def eigenvalues_batch(mats):
    """Eigenvalues only, sorted ascending along the last axis."""
    _, lam = jacobi_eigh_batch(mats)
    return lam


def eigenvalues(M):
    """Full sorted spectrum of a SymMatrix, by cyclic Jacobi rotations."""
    if isinstance(M, SymMatrix):
        m = M.entries
    else:
        m = SymMatrix(np.asarray(M, dtype=float)).entries
    _, lam = jacobi_eigh_batch(m)
    return Spectrum(lam)


def sqrt_spd_batch(mats, floor_ratio=1e-12):
    """Principal square roots of a batch of SPD matrices via Jacobi."""
    q, lam = jacobi_eigh_batch(mats)
    mx = lam[..., -1]
    if np.any(lam[..., 0] <= floor_ratio * np.maximum(mx, 0.0)) or np.any(mx <= 0):
        raise DomainError("matrix batch is not safely positive definite")
    root = np.sqrt(lam)
    return np.einsum("...ik,...k,...jk->...ij", q, root, q)


def sqrt_spd(G):
    """Principal square root W of an SPD matrix, W o W = G."""
    g = G.entries if isinstance(G, SymMatrix) else SymMatrix(np.asarray(G, dtype=float)).entries
    return SymMatrix(sqrt_spd_batch(g))


def inv_spd_batch(mats, floor_ratio=1e-12):
    """Inverses of a batch of SPD matrices via the same eigendecomposition."""
    q, lam = jacobi_eigh_batch(mats)
    mx = lam[..., -1]
    if np.any(lam[..., 0] <= floor_ratio * np.maximum(mx, 0.0)) or np.any(mx <= 0):
        raise DomainError("matrix batch is not safely positive definite")
    return np.einsum("...ik,...k,...jk->...ij", q, 1.0 / lam, q)
