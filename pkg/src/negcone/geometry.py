"""Metric charts on uniform grids and the curvature fields built from them.

Tensor fields live as plain ndarrays of shape dims + (n, ...) alongside a
MetricChart that knows the grid geometry.  All derivative operators are
second order: central differences inside, one-sided at the grid edges, so
curvature fields are O(h^2) away from the boundary layer of the chart.

Matrix orientation convention used throughout the package: for a conformal
factor w on a background chart g, the "positive" field C(w) has the spectrum
of g_w^{-1} A_{g_w} (A the Schouten-type tensor of g_w = e^{2w} g), while
the "augmented" field M(w) = W (D^2 w + L(x, Dw)) W has spectrum
e^{2w} lambda(-g_w^{-1} A_{g_w}).  They satisfy e^{2w} (-C) = M exactly at
the discrete level, which the tests pin down.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DomainError
from . import symfun

MIN_METRIC_EIG = 1e-10
MIN_AXIS_POINTS = 5


def _axis_slices(ndim, axis, sl):
    out = [slice(None)] * ndim
    out[axis] = sl
    return tuple(out)


def grad_axis(u, h, axis):
    """Second-order first derivative along one axis (one-sided at edges)."""
    return np.gradient(u, h, axis=axis, edge_order=2)


def grad_field(u, spacing):
    """Gradient of a scalar grid field; shape dims -> dims + (n,)."""
    u = np.asarray(u, dtype=float)
    n = u.ndim
    return np.stack([grad_axis(u, spacing[a], a) for a in range(n)], axis=-1)


def _second_axis(u, h, axis):
    """Pure second derivative along one axis: compact three-point stencil
    inside, second-order one-sided at the two edge layers."""
    u = np.asarray(u, dtype=float)
    out = np.empty_like(u)
    nd = u.ndim
    mid = _axis_slices(nd, axis, slice(1, -1))
    lo = _axis_slices(nd, axis, slice(0, -2))
    hi = _axis_slices(nd, axis, slice(2, None))
    out[mid] = (u[lo] - 2.0 * u[_axis_slices(nd, axis, slice(1, -1))] + u[hi]) / (h * h)

    def take(i):
        stop = i + 1 if i != -1 else None
        return u[_axis_slices(nd, axis, slice(i, stop))]
    first = _axis_slices(nd, axis, slice(0, 1))
    last = _axis_slices(nd, axis, slice(-1, None))
    out[first] = (2.0 * take(0) - 5.0 * take(1) + 4.0 * take(2) - take(3)) / (h * h)
    out[last] = (2.0 * take(-1) - 5.0 * take(-2) + 4.0 * take(-3) - take(-4)) / (h * h)
    return out


def hess_field(u, spacing):
    """Hessian of a scalar grid field; dims -> dims + (n, n).

    Mixed entries are centered first differences applied twice (the
    symmetric four-point cross); pure entries use the compact stencil.
    """
    u = np.asarray(u, dtype=float)
    n = u.ndim
    h = np.empty(u.shape + (n, n), dtype=float)
    firsts = [grad_axis(u, spacing[a], a) for a in range(n)]
    for i in range(n):
        h[..., i, i] = _second_axis(u, spacing[i], i)
        for j in range(i + 1, n):
            mixed = grad_axis(firsts[i], spacing[j], j)
            h[..., i, j] = mixed
            h[..., j, i] = mixed
    return h


@dataclass
class MetricChart:
    """A uniform grid carrying a Riemannian metric field.

    metric has shape dims + (n, n); mask (optional) marks the nodes that
    belong to the computational region when the region is not the whole box.
    """

    spacing: tuple
    origin: tuple
    metric: np.ndarray
    mask: Optional[np.ndarray] = None
    _ginv: Optional[np.ndarray] = field(default=None, repr=False, compare=False)
    _w: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.metric = np.asarray(self.metric, dtype=float)
        n = self.metric.shape[-1]
        if self.metric.shape[-2] != n or self.metric.ndim != n + 2:
            raise DomainError("metric must have shape dims + (n, n) with len(dims) = n")
        if len(self.spacing) != n or len(self.origin) != n:
            raise DomainError("spacing/origin length must match the dimension")
        if any(d < MIN_AXIS_POINTS for d in self.dims):
            raise DomainError(f"need at least {MIN_AXIS_POINTS} points per axis")
        if np.abs(self.metric - np.swapaxes(self.metric, -1, -2)).max() > 1e-12:
            raise DomainError("metric field is not symmetric")
        lam_min = self._min_eig()
        if lam_min <= MIN_METRIC_EIG:
            raise DomainError(f"metric not positive definite: min eigenvalue {lam_min:.3e}")
        if self.mask is not None:
            self.mask = np.asarray(self.mask, dtype=bool)
            if self.mask.shape != self.dims:
                raise DomainError("mask shape must match grid dims")

    def _min_eig(self):
        flat = self.metric.reshape(-1, self.n, self.n)
        lo = np.inf
        for start in range(0, flat.shape[0], 65536):
            lam = symfun.eigenvalues_batch(flat[start:start + 65536])
            lo = min(lo, float(lam[..., 0].min()))
        return lo

    @property
    def n(self):
        return self.metric.shape[-1]

    @property
    def dims(self):
        return self.metric.shape[:-2]

    def axes(self):
        return [self.origin[a] + self.spacing[a] * np.arange(self.dims[a])
                for a in range(self.n)]

    def coords(self):
        """Node positions, shape dims + (n,)."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack(mesh, axis=-1)

    def ginv(self):
        if self._ginv is None:
            flat = self.metric.reshape(-1, self.n, self.n)
            self._ginv = symfun.inv_spd_batch(flat).reshape(self.metric.shape)
        return self._ginv

    def sqrt_ginv(self):
        """W = g^{-1/2} as a field, cached."""
        if self._w is None:
            flat = self.ginv().reshape(-1, self.n, self.n)
            self._w = symfun.sqrt_spd_batch(flat).reshape(self.metric.shape)
        return self._w

    def is_flat(self):
        eye = np.eye(self.n)
        return bool(np.abs(self.metric - eye).max() == 0.0)


def flat_chart(n, dims, spacing, origin, mask=None):
    g = np.broadcast_to(np.eye(n), tuple(dims) + (n, n)).copy()
    return MetricChart(tuple(spacing), tuple(origin), g, mask)


def box_chart(n, lo, hi, h, metric_fn: Callable = None, mask_fn: Callable = None):
    """Uniform box [lo, hi]^n with spacing h; metric_fn maps points
    (..., n) -> (..., n, n), identity when omitted."""
    lo = np.broadcast_to(np.asarray(lo, float), (n,))
    hi = np.broadcast_to(np.asarray(hi, float), (n,))
    dims = tuple(int(round((hi[a] - lo[a]) / h)) + 1 for a in range(n))
    spacing = tuple((hi[a] - lo[a]) / (dims[a] - 1) for a in range(n))
    chart = flat_chart(n, dims, spacing, tuple(lo))
    if metric_fn is not None:
        chart = MetricChart(spacing, tuple(lo), np.asarray(metric_fn(chart.coords()), float))
    if mask_fn is not None:
        chart.mask = np.asarray(mask_fn(chart.coords()), bool)
    return chart


def annulus_chart(n, a, b, h):
    """Flat box covering the annulus a < |x| < b, with the annulus mask."""
    if not 0.0 < a < b:
        raise DomainError("annulus needs 0 < a < b")
    pad = 2.0 * h
    chart = box_chart(n, -b - pad, b + pad, h)
    r = np.linalg.norm(chart.coords(), axis=-1)
    chart.mask = (r > a) & (r < b)
    return chart


def half_space_slab(n, z_lo, z_hi, h, width=1.0):
    """Flat slab with the last coordinate in [z_lo, z_hi], z_lo > 0."""
    if z_lo <= 0:
        raise DomainError("slab must stay inside the upper half space")
    lo = [-width / 2.0] * (n - 1) + [z_lo]
    hi = [width / 2.0] * (n - 1) + [z_hi]
    return box_chart(n, lo, hi, h)


def round_sphere_chart(n, lo, hi, h):
    """Stereographic chart of the unit round sphere: g = 4 delta / (1+|x|^2)^2."""
    def metric(x):
        f = 2.0 / (1.0 + np.sum(x * x, axis=-1))
        return f[..., None, None] ** 2 * np.eye(n)
    return box_chart(n, lo, hi, h, metric_fn=metric)


def metric_derivative(chart: MetricChart):
    """dg[..., l, i, j] = partial_l g_ij."""
    g = chart.metric
    n = chart.n
    return np.stack([grad_axis(g, chart.spacing[a], a) for a in range(n)], axis=-3)


def christoffel(chart: MetricChart):
    """Levi-Civita symbols, shape dims + (n, n, n) indexed [k, i, j]."""
    dg = metric_derivative(chart)
    # build T[..., i, j, l] = d_i g_jl + d_j g_il - d_l g_ij
    d_i_g_jl = dg  # dg already carries indices [i, j, l]
    d_j_g_il = np.swapaxes(dg, -3, -2)
    d_l_g_ij = np.moveaxis(dg, -3, -1)
    t = d_i_g_jl + d_j_g_il - d_l_g_ij
    gamma = 0.5 * np.einsum("...kl,...ijl->...kij", chart.ginv(), t)
    return gamma


def ricci(chart: MetricChart):
    """Ricci tensor from the Christoffel field, shape dims + (n, n)."""
    n = chart.n
    gamma = christoffel(chart)
    term1 = np.zeros(chart.dims + (n, n))
    for k in range(n):
        term1 += grad_axis(gamma[..., k, :, :], chart.spacing[k], k)
    trace = np.einsum("...kkj->...j", gamma)  # Gamma^k_{kj}
    term2 = np.stack([grad_axis(trace, chart.spacing[i], i) for i in range(n)], axis=-2)
    # term2[..., i, j] = d_i Gamma^k_{kj}
    term3 = np.einsum("...l,...lij->...ij", trace, gamma)
    term4 = np.einsum("...kil,...lkj->...ij", gamma, gamma)
    ric = term1 - term2 + term3 - term4
    return 0.5 * (ric + np.swapaxes(ric, -1, -2))


def scalar_curvature(chart: MetricChart, ric=None):
    if ric is None:
        ric = ricci(chart)
    return np.einsum("...ij,...ij->...", chart.ginv(), ric)


def schouten(chart: MetricChart, tau: float = 1.0):
    """Schouten-type tensor (Ric - tau Sc g / (2(n-1))) / (n-2)."""
    n = chart.n
    if n < 3:
        raise DomainError("Schouten tensor needs n >= 3")
    ric = ricci(chart)
    sc = scalar_curvature(chart, ric)
    return (ric - (tau * sc / (2.0 * (n - 1.0)))[..., None, None] * chart.metric) / (n - 2.0)


def tau_trace_shift(m_field, tau, n):
    """Augment a matrix field by the trace term of the tau-modified tensor:
    M -> M + (1-tau)/(n-2) tr(M) Id.  Exact at every tau because the shift
    is a scalar multiple of the identity."""
    if n < 3:
        raise DomainError("trace shift needs n >= 3")
    tr = np.einsum("...ii->...", m_field)
    return m_field + ((1.0 - tau) / (n - 2.0)) * tr[..., None, None] * np.eye(n)


@dataclass
class LowerOrderTerms:
    """First-order data of the augmented operator at fixed background.

    L(x, p) = L0 - Gamma^k p_k - p x p + (|p|_g^2 / 2) g with L0 = -A_g,
    all indices down; the matrix square roots applied outside handle the
    raising.  dp gives d L_ij / d p_s for Jacobian assembly.
    """

    l0: np.ndarray           # dims + (n, n)
    gamma: np.ndarray        # dims + (n, n, n), [k, i, j]
    g: np.ndarray            # dims + (n, n)
    ginv: np.ndarray         # dims + (n, n)

    @property
    def n(self):
        return self.g.shape[-1]

    def full(self, p):
        """L evaluated at a gradient field p of shape dims + (n,)."""
        p = np.asarray(p, dtype=float)
        l1 = -np.einsum("...kij,...k->...ij", self.gamma, p)
        praise = np.einsum("...kl,...l->...k", self.ginv, p)
        norm2 = np.einsum("...k,...k->...", praise, p)
        l2 = -p[..., :, None] * p[..., None, :] + 0.5 * norm2[..., None, None] * self.g
        return self.l0 + l1 + l2

    def dp(self, p):
        """d L_ij / d p_s, shape dims + (n, n, n) indexed [i, j, s]."""
        p = np.asarray(p, dtype=float)
        n = self.n
        eye = np.eye(n)
        out = -np.moveaxis(self.gamma, -3, -1)  # -Gamma^s_ij at [i, j, s]
        delta_is_pj = np.einsum("is,...j->...ijs", eye, p)
        delta_js_pi = np.einsum("js,...i->...ijs", eye, p)
        praise = np.einsum("...sl,...l->...s", self.ginv, p)
        g_term = np.einsum("...s,...ij->...ijs", praise, self.g)
        return out - delta_is_pj - delta_js_pi + g_term


def assemble_L(chart: MetricChart) -> LowerOrderTerms:
    """Lower-order terms of the augmented operator on this chart.

    Flat charts short-circuit the curvature calls: L0 and Gamma vanish.
    """
    n = chart.n
    if chart.is_flat():
        zeros = np.zeros(chart.dims + (n, n))
        gamma = np.zeros(chart.dims + (n, n, n))
        eye = np.broadcast_to(np.eye(n), chart.dims + (n, n))
        return LowerOrderTerms(zeros, gamma, eye, eye)
    return LowerOrderTerms(-schouten(chart), christoffel(chart),
                           chart.metric, chart.ginv())


def conformal_schouten(chart: MetricChart, w, tau: float = 1.0):
    """Spectrum-carrying field C with lambda(C) = lambda(g_w^{-1} A_{g_w})
    for g_w = e^{2w} g (tau-modified tensor when tau != 1).

    C = e^{-2w} W (A_g + S(w, g)) W with
    S = -Hess_g w + dw x dw - |dw|_g^2 g / 2.
    """
    n = chart.n
    if n < 3:
        raise DomainError("conformal tensor needs n >= 3")
    w = np.asarray(w, dtype=float)
    dw = grad_field(w, chart.spacing)
    d2w = hess_field(w, chart.spacing)
    if chart.is_flat():
        a_bg = 0.0
        hess_cov = d2w
        norm2 = np.einsum("...k,...k->...", dw, dw)
        s = -hess_cov + dw[..., :, None] * dw[..., None, :] \
            - 0.5 * norm2[..., None, None] * np.eye(n)
        c = np.exp(-2.0 * w)[..., None, None] * (a_bg + s)
    else:
        gamma = christoffel(chart)
        hess_cov = d2w - np.einsum("...kij,...k->...ij", gamma, dw)
        praise = np.einsum("...kl,...l->...k", chart.ginv(), dw)
        norm2 = np.einsum("...k,...k->...", praise, dw)
        s = -hess_cov + dw[..., :, None] * dw[..., None, :] \
            - 0.5 * norm2[..., None, None] * chart.metric
        wmat = chart.sqrt_ginv()
        inner = schouten(chart) + s
        c = np.exp(-2.0 * w)[..., None, None] * np.einsum(
            "...ab,...bc,...cd->...ad", wmat, inner, wmat)
    if tau != 1.0:
        c = tau_trace_shift(c, tau, n)
    return 0.5 * (c + np.swapaxes(c, -1, -2))


def augmented_matrix_field(chart: MetricChart, w, tau: float = 1.0,
                           lot: Optional[LowerOrderTerms] = None):
    """M = W (D^2 w + L(x, Dw)) W, spectrum e^{2w} lambda(-g_w^{-1} A_{g_w});
    the tau != 1 version adds the exact trace shift."""
    n = chart.n
    if lot is None:
        lot = assemble_L(chart)
    w = np.asarray(w, dtype=float)
    dw = grad_field(w, chart.spacing)
    d2w = hess_field(w, chart.spacing)
    inner = d2w + lot.full(dw)
    if chart.is_flat():
        m = inner
    else:
        wmat = chart.sqrt_ginv()
        m = np.einsum("...ab,...bc,...cd->...ad", wmat, inner, wmat)
    if tau != 1.0:
        m = tau_trace_shift(m, tau, n)
    return 0.5 * (m + np.swapaxes(m, -1, -2))


def interior_slice(dims, margin):
    """Index tuple selecting nodes at least margin cells from every face."""
    return tuple(slice(margin, d - margin) for d in dims)


def save_metric_grid(path, chart: MetricChart):
    """Text format: header lines (n, dims, spacing, origin), then one row
    per node in row-major order holding the upper triangle of g at 17
    significant digits."""
    n = chart.n
    iu = np.triu_indices(n)
    flat = chart.metric.reshape(-1, n, n)[:, iu[0], iu[1]]
    with open(path, "w") as fh:
        fh.write(f"# n={n}\n")
        fh.write("# dims=" + ",".join(str(d) for d in chart.dims) + "\n")
        fh.write("# spacing=" + ",".join("%.17g" % s for s in chart.spacing) + "\n")
        fh.write("# origin=" + ",".join("%.17g" % o for o in chart.origin) + "\n")
        for row in flat:
            fh.write(",".join("%.17g" % v for v in row) + "\n")


def load_metric_grid(path) -> MetricChart:
    header = {}
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition("=")
                header[key.strip()] = val.strip()
            else:
                rows.append([float(v) for v in line.split(",")])
    try:
        n = int(header["n"])
        dims = tuple(int(v) for v in header["dims"].split(","))
        spacing = tuple(float(v) for v in header["spacing"].split(","))
        origin = tuple(float(v) for v in header["origin"].split(","))
    except KeyError as missing:
        raise DomainError(f"grid file missing header field {missing}")
    data = np.asarray(rows, dtype=float)
    count = int(np.prod(dims))
    if data.shape != (count, n * (n + 1) // 2):
        raise DomainError("grid file row count or width does not match header")
    g = np.empty((count, n, n))
    iu = np.triu_indices(n)
    g[:, iu[0], iu[1]] = data
    g[:, iu[1], iu[0]] = data
    return MetricChart(spacing, origin, g.reshape(dims + (n, n)))


def save_scalar_grid(path, chart: MetricChart, u):
    u = np.asarray(u, dtype=float)
    if u.shape != chart.dims:
        raise DomainError("field shape does not match chart")
    with open(path, "w") as fh:
        fh.write(f"# n={chart.n}\n")
        fh.write("# dims=" + ",".join(str(d) for d in chart.dims) + "\n")
        for v in u.reshape(-1):
            fh.write("%.17g\n" % v)


def load_scalar_grid(path, chart: MetricChart):
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            rows.append(float(line))
    u = np.asarray(rows, dtype=float)
    if u.size != int(np.prod(chart.dims)):
        raise DomainError("scalar file length does not match chart dims")
    return u.reshape(chart.dims)
