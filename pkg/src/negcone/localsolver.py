"""Window rescaling and the frozen-linearization local solver.

Given a quadratic seed jet P at a grid point, `blowup` samples the problem
data on the unit box window x = base + r y.  Sampling is by node index,
never interpolation, so the discrete degree grading of the lower-order
terms (r^2 on the constant part, r on the Christoffel contraction, none on
the gradient quadratic) and the residual scaling law hold to roundoff.

`contract_solve` then runs the chord iteration: the linearization is
assembled once at the seed, factorized once, and every step solves the
frozen system against the current nonlinear residual.  The correction is
pinned to zero on the window boundary, so the returned field matches the
rescaled seed there bit-exactly.  `savin_check` audits the converged
solution's induced operator on jet perturbations (monotonicity, two-sided
ellipticity, vanishing at the base jet, derivative bounds), which is the
structural input the small-perturbation regularity scheme needs.

Symmetric-function values and derivatives are evaluated through the
characteristic-polynomial invariants (traces of matrix powers), not through
eigendecompositions; the spectral route in `symfun` serves as the
cross-check in the tests, not as the implementation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
import scipy.sparse.linalg as spla

from . import linsolve, oracle
from .cones import ConeSpec
from .errors import ConeExitError, DomainError, NonContractionError, SolverError
from .geometry import (LowerOrderTerms, MetricChart, assemble_L,
                       augmented_matrix_field, box_chart, grad_field,
                       hess_field, interior_slice)
from .symfun import jacobi_eigh_batch
from .viscosity import Paraboloid, weighted_holder

DEFAULT_SCALES = (0.4, 0.2, 0.1, 0.05)
HOLDER_ALPHA = 0.5
SCALE_FLOOR = 1e-3
SEED_RESIDUAL_TOL = 1e-8
DIVERGENCE_PATIENCE = 5


def _operator_k(f, cone: ConeSpec) -> int:
    if f != "sigma_k":
        raise DomainError(f"unknown operator id {f!r}")
    return cone.k


def _char_data(mf, k):
    """Elementary symmetric invariants e_1..e_k of a symmetric matrix field,
    via Newton's identities on traces of powers.  Returns (e, pows) with
    e[j] the sigma_j field and pows[j] = M^j for j = 1..k."""
    n = mf.shape[-1]
    if not 1 <= k <= n:
        raise DomainError(f"cone index k={k} out of range for n={n}")
    pows = [None, mf]
    for _ in range(2, k + 1):
        pows.append(pows[-1] @ mf)
    p = [None] + [np.trace(pows[j], axis1=-2, axis2=-1) for j in range(1, k + 1)]
    e = [np.ones(mf.shape[:-2])]
    for j in range(1, k + 1):
        acc = np.zeros(mf.shape[:-2])
        for i in range(1, j + 1):
            term = e[j - i] * p[i]
            acc = acc + term if i % 2 == 1 else acc - term
        e.append(acc / j)
    return e, pows


def _cone_ok(e, k):
    ok = e[1] > 0.0
    for j in range(2, k + 1):
        ok = ok & (e[j] > 0.0)
    return ok


def _f_value(e, k):
    """sigma_k^{1/k}, NaN outside the cone's positivity set."""
    with np.errstate(invalid="ignore"):
        return np.where(_cone_ok(e, k), np.abs(e[k]) ** (1.0 / k), np.nan)


def _f_grad_matrix(mf, e, pows, k):
    """d(sigma_k^{1/k})/dM as a matrix field: the char-poly derivative
    sum_j (-1)^j e_{k-1-j} M^j scaled by e_k^{(1-k)/k} / k."""
    n = mf.shape[-1]
    eye = np.broadcast_to(np.eye(n), mf.shape)
    pk = e[k - 1][..., None, None] * eye
    for j in range(1, k):
        term = e[k - 1 - j][..., None, None] * pows[j]
        pk = pk + term if j % 2 == 0 else pk - term
    with np.errstate(invalid="ignore"):
        scale = np.abs(e[k]) ** ((1.0 - k) / k) / k
    return scale[..., None, None] * pk


def _conjugate(chart: MetricChart, field):
    if chart.is_flat():
        return 0.5 * (field + np.swapaxes(field, -1, -2))
    w = chart.sqrt_ginv()
    out = np.einsum("...ab,...bc,...cd->...ad", w, field, w)
    return 0.5 * (out + np.swapaxes(out, -1, -2))


def _lot_view(lot: LowerOrderTerms, sl) -> LowerOrderTerms:
    return LowerOrderTerms(lot.l0[sl], lot.gamma[sl], lot.g[sl], lot.ginv[sl])


def _node_index(chart: MetricChart, point):
    point = np.asarray(point, dtype=float)
    if point.shape != (chart.n,):
        raise DomainError("point dimension does not match the chart")
    h = np.asarray(chart.spacing)
    off = (point - np.asarray(chart.origin)) / h
    idx = np.rint(off).astype(int)
    if np.abs(off - idx).max() > 1e-9:
        raise DomainError("basepoint must sit on a grid node")
    if any(i < 0 or i >= d for i, d in zip(idx, chart.dims)):
        raise DomainError("basepoint lies outside the chart")
    return tuple(int(i) for i in idx)


@dataclass(frozen=True)
class BlowupProblem:
    """Problem data sampled on the unit window around a basepoint.

    chart is the unit box in y with x = base + r y; p_r holds the rescaled
    seed values P(base + r y) + ln r; r_field the curvature samples (the
    sigma_k-scale right-hand side); lot the lower-order data re-differenced
    in y, which carries exactly the r-grading of each degree.
    """

    r: float
    base: np.ndarray
    chart: MetricChart
    p_r: np.ndarray
    r_field: np.ndarray
    lot: LowerOrderTerms

    @property
    def w_r(self):
        """Metric square-root factor on the window."""
        return self.chart.sqrt_ginv()


def blowup(P: Paraboloid, chart: MetricChart, R, r: float) -> BlowupProblem:
    """Sample seed, curvature, and lower-order data at scale r around P.base.

    The basepoint must sit on a grid node and r must span a whole number of
    cells along every axis, so that window nodes are parent nodes and the
    stencil algebra commutes with the rescaling exactly.
    """
    if not 0.0 < float(r) <= 1.0:
        raise DomainError("scale r must lie in (0, 1]")
    if chart.mask is not None:
        raise DomainError("masked charts are not supported by the window solver")
    r = float(r)
    n = chart.n
    ib = _node_index(chart, P.base)
    h = np.asarray(chart.spacing)
    m_f = r / h
    m = np.rint(m_f).astype(int)
    if np.abs(m_f - m).max() > 1e-9 * max(1.0, float(m_f.max())):
        raise DomainError("r must be a whole number of cells along every axis")
    if m.min() < 2:
        raise DomainError("window needs at least two cells per half-side")
    for a in range(n):
        if ib[a] - m[a] < 0 or ib[a] + m[a] >= chart.dims[a]:
            raise DomainError("rescaled window leaves the chart")
    window = tuple(slice(ib[a] - m[a], ib[a] + m[a] + 1) for a in range(n))
    ychart = MetricChart(tuple(1.0 / m[a] for a in range(n)), (-1.0,) * n,
                         chart.metric[window].copy())
    ycoords = ychart.coords()
    pvals = P(np.asarray(P.base) + r * ycoords) + math.log(r)
    if np.isscalar(R) or np.ndim(R) == 0:
        r_field = np.full(ychart.dims, float(R))
    else:
        R = np.asarray(R, dtype=float)
        if R.shape != chart.dims:
            raise DomainError("curvature field shape does not match the chart")
        r_field = R[window].copy()
    if r_field.min() <= 0.0:
        raise DomainError("curvature must be positive on the window")
    return BlowupProblem(r=r, base=np.asarray(P.base, float).copy(),
                         chart=ychart, p_r=pvals, r_field=r_field,
                         lot=assemble_L(ychart))


def operator_residual(bp: BlowupProblem, v=0.0, *, cone: ConeSpec,
                      f: str = "sigma_k"):
    """Residual field of the rescaled equation at correction v.

    Returns sigma_k^{1/k}(lambda(M(p_r + v))) - R^{1/k} e^{2(p_r + v)} over
    the whole window.  Boundary rows come from one-sided stencils; consumers
    read the interior.  Raises a cone-exit error when an interior spectrum
    leaves the positivity set.
    """
    k = _operator_k(f, cone)
    w = bp.p_r + v
    mf = augmented_matrix_field(bp.chart, w, lot=bp.lot)
    e, _ = _char_data(mf, k)
    inter = interior_slice(bp.chart.dims, 1)
    ok = _cone_ok([ej[inter] for ej in e], k)
    if not ok.all():
        where = np.argwhere(~ok)[0] + 1
        node = tuple(int(i) for i in where)
        y = np.asarray(bp.chart.origin) + where * np.asarray(bp.chart.spacing)
        raise ConeExitError(
            f"spectrum leaves the cone at window node {node}, y={y}", node=node)
    fval = _f_value(e, k)
    rho = bp.r_field ** (1.0 / k)
    return fval - rho * np.exp(2.0 * w)


def linearize(bp: BlowupProblem, u, f: str = "sigma_k", *,
              cone: ConeSpec) -> linsolve.LinearProblem:
    """Coefficients of the linearization of the rescaled operator at u.

    a is the symmetric-function derivative conjugated by the metric factor,
    b contracts a against the p-derivative of the lower-order terms, and
    c = -2 R^{1/k} e^{2(u + p_r)} is the zeroth-order response.  The
    right-hand-side slot is left zero; the chord driver swaps residuals in.
    """
    k = _operator_k(f, cone)
    if cone.n != bp.chart.n:
        raise DomainError("cone dimension does not match the window")
    w = bp.p_r + u
    dw = grad_field(w, bp.chart.spacing)
    inner = hess_field(w, bp.chart.spacing) + bp.lot.full(dw)
    mf = _conjugate(bp.chart, inner)
    e, pows = _char_data(mf, k)
    inter = interior_slice(bp.chart.dims, 1)
    ok = _cone_ok([ej[inter] for ej in e], k)
    if not ok.all():
        node = tuple(int(i) for i in np.argwhere(~ok)[0] + 1)
        raise ConeExitError(
            f"linearization point leaves the cone at window node {node}",
            node=node)
    gmat = _f_grad_matrix(mf, e, pows, k)
    if bp.chart.is_flat():
        a = gmat
    else:
        wfac = bp.chart.sqrt_ginv()
        a = np.einsum("...ab,...bc,...cd->...ad", wfac, gmat, wfac)
    a = 0.5 * (a + np.swapaxes(a, -1, -2))
    b = np.einsum("...ij,...ijs->...s", a, bp.lot.dp(dw))
    c = -2.0 * bp.r_field ** (1.0 / k) * np.exp(2.0 * w)
    return linsolve.LinearProblem(
        spacing=bp.chart.spacing, origin=bp.chart.origin, a=a,
        f=np.zeros(bp.chart.dims), b=b, c=c, bc=0.0)


class _FrozenLinear:
    """One assembly and one factorization of the frozen linearization,
    reused for every chord step.  Mirrors the direct/iterative split of
    `linsolve.solve`."""

    def __init__(self, lin: linsolve.LinearProblem):
        mat, _, idx = linsolve.assemble(lin)
        self.dims = lin.dims
        self.unknown = idx >= 0
        self.idx = idx
        self._m = mat.shape[0]
        if self._m <= linsolve.DIRECT_LIMIT:
            self._lu = spla.splu(mat.tocsc())
            self._mat = mat.tocsr()
            self._pre = None
        else:
            import pyamg

            self._mat = mat.tocsr()
            ml = pyamg.smoothed_aggregation_solver(
                (-self._mat).tocsr(), B=np.ones((self._m, 1)), max_coarse=500)
            self._pre = ml.aspreconditioner(cycle="V")
            self._lu = None

    def solve(self, rhs_field):
        rhs = np.asarray(rhs_field)[self.unknown]
        scale = max(float(np.abs(rhs).max()), 1e-300)
        if self._lu is not None:
            x = self._lu.solve(rhs)
        else:
            x, info = spla.lgmres(-self._mat, -rhs, M=self._pre, rtol=1e-12,
                                  atol=1e-12 * scale, maxiter=300)
            if info != 0:
                x, info = spla.bicgstab(-self._mat, -rhs, M=self._pre,
                                        rtol=1e-12, atol=1e-12 * scale,
                                        maxiter=2000)
                if info != 0:
                    raise SolverError(f"frozen solve stalled (info={info})")
        res = float(np.abs(self._mat @ x - rhs).max())
        if not np.isfinite(x).all() or res > 1e-8 * max(scale, float(np.abs(x).max())):
            raise SolverError(f"frozen solve residual {res:.3e} above tolerance")
        out = np.zeros(self.dims)
        out[self.unknown] = x
        return out


@dataclass(frozen=True)
class ContractionTrace:
    """Per-iterate norms of the chord run.  iterates[0] describes the seed;
    each entry is (sup|v|, sup interior residual).  rate is the largest
    late-stage update ratio, zero when a single step sufficed."""

    iterates: tuple
    converged: bool
    rate: float

    def to_json(self):
        return {"iterates": [[float(a), float(b)] for a, b in self.iterates],
                "converged": bool(self.converged), "rate": float(self.rate)}


def project_seed(P: Paraboloid, chart: MetricChart, R, *, cone: ConeSpec,
                 f: str = "sigma_k", tol: float = SEED_RESIDUAL_TOL) -> Paraboloid:
    """Adjust the seed's value so the equation balances at the basepoint.

    The second-order data is untouched: only the value slot enters the
    right-hand side, so the balance equation is monotone in it and has the
    closed-form root v = log(f0 / R0^{1/k}) / 2.
    """
    k = _operator_k(f, cone)
    ib = _node_index(chart, P.base)
    lot = _lot_view(assemble_L(chart), ib)
    grad = np.asarray(P.gradient, dtype=float)
    s = np.asarray(P.hessian, dtype=float) + lot.full(grad[None])[0]
    if chart.is_flat():
        mf = 0.5 * (s + s.T)
    else:
        wfac = chart.sqrt_ginv()[ib]
        mf = wfac @ (0.5 * (s + s.T)) @ wfac
    e, _ = _char_data(mf[None], k)
    if not bool(_cone_ok(e, k)[0]):
        raise ConeExitError("seed spectrum leaves the cone at the basepoint",
                            node=ib)
    f0 = float(e[k][0]) ** (1.0 / k)
    r0 = float(R) if (np.isscalar(R) or np.ndim(R) == 0) else float(np.asarray(R)[ib])
    if r0 <= 0.0:
        raise DomainError("curvature must be positive at the basepoint")
    rho0 = r0 ** (1.0 / k)
    resid = f0 - rho0 * math.exp(2.0 * float(P.value))
    if abs(resid) <= tol * max(1.0, f0):
        return P
    value = 0.5 * math.log(f0 / rho0)
    return Paraboloid(np.asarray(P.base, float), value, grad,
                      np.asarray(P.hessian, float))


def contract_solve(P: Paraboloid, chart: MetricChart, R, r: float,
                   tol: float = 1e-9, max_iter: int = 30, *, cone: ConeSpec,
                   f: str = "sigma_k"):
    """Chord iteration for the rescaled problem at scale r.

    Solves the frozen linearization against the current residual until the
    interior sup-residual drops below tol.  Returns (w, trace) with w the
    full window field; w equals the rescaled seed on the boundary nodes
    bit-exactly because corrections never touch them.  Five consecutive
    non-contracting update ratios, or running out of iterations, raise a
    non-contraction error (the caller should reduce r).
    """
    if max_iter < 1:
        raise DomainError("max_iter must be at least 1")
    P = project_seed(P, chart, R, cone=cone, f=f)
    bp = blowup(P, chart, R, r)
    frozen = _FrozenLinear(linearize(bp, 0.0, f, cone=cone))
    inter = interior_slice(bp.chart.dims, 1)
    v = np.zeros(bp.chart.dims)
    iterates = []
    ratios = []
    prev_norm = None
    prev_sup = None
    stall = 0
    converged = False
    for _ in range(max_iter):
        resid = operator_residual(bp, v, cone=cone, f=f)
        sup = float(np.abs(resid[inter]).max())
        if not math.isfinite(sup):
            raise NonContractionError(
                f"residual blew up at scale r={bp.r:g}", r=bp.r, rate=math.inf)
        iterates.append((float(np.abs(v).max()), sup))
        if sup <= tol:
            converged = True
            break
        delta = frozen.solve(np.where(np.isfinite(resid), -resid, 0.0))
        norm = float(np.abs(delta).max())
        if prev_norm is not None and prev_norm > 0.0:
            ratio = norm / prev_norm
            # ratios near roundoff level say nothing about contraction
            if prev_sup > 10.0 * tol:
                ratios.append(ratio)
                stall = stall + 1 if ratio >= 1.0 else 0
                if stall >= DIVERGENCE_PATIENCE:
                    raise NonContractionError(
                        f"chord map failed to contract at scale r={bp.r:g} "
                        f"(update ratio {ratio:.3f})", r=bp.r, rate=ratio)
        v = v + delta
        prev_norm = norm
        prev_sup = sup
    if not converged:
        rate = max(ratios[-3:]) if ratios else math.inf
        raise NonContractionError(
            f"no convergence in {max_iter} iterations at scale r={bp.r:g} "
            f"(last residual {sup:.3e})", r=bp.r, rate=rate)
    rate = max(ratios[-3:]) if ratios else 0.0
    trace = ContractionTrace(tuple(iterates), True, rate)
    return bp.p_r + v, trace


def solve_with_backoff(P: Paraboloid, chart, R, *, cone: ConeSpec,
                       f: str = "sigma_k", r0: float = 0.4,
                       floor: float = SCALE_FLOOR, tol: float = 1e-9,
                       max_iter: int = 30):
    """Halve the scale until the chord map contracts.

    chart may be a fixed MetricChart or a callable r -> chart when the grid
    is meant to refine with the window.  Returns (r, w, trace) at the first
    accepted scale; gives up below the floor.
    """
    r = float(r0)
    failures = []
    while r >= floor:
        cur = chart(r) if callable(chart) else chart
        try:
            w, trace = contract_solve(P, cur, R, r, tol, max_iter,
                                      cone=cone, f=f)
            return r, w, trace
        except (NonContractionError, ConeExitError) as exc:
            failures.append((r, type(exc).__name__))
            r *= 0.5
    raise SolverError(
        f"no contracting scale above {floor:g}; failures: {failures}")


class _JetOperator:
    """The induced operator on jet perturbations around a fixed field.

    F(M, p, z, y) = e^{-2w} f(lambda(W (r^2 M + D^2 w + L(y, r^2 p + Dw)) W))
                    - R^{1/k} e^{2 r^2 z},
    with the slot weights chosen so the window operator at (M, p, z) equals
    the parent operator at (M, r p, r^2 z).  Out-of-cone evaluations give
    NaN; callers mask and count them.
    """

    def __init__(self, bp: BlowupProblem, w, *, cone: ConeSpec,
                 f: str = "sigma_k"):
        self.bp = bp
        self.k = _operator_k(f, cone)
        self.w = np.asarray(w, dtype=float)
        if self.w.shape != bp.chart.dims:
            raise DomainError("field shape does not match the window")
        self.dw = grad_field(self.w, bp.chart.spacing)
        self.d2w = hess_field(self.w, bp.chart.spacing)
        self.ew = np.exp(-2.0 * self.w)
        self.rho = bp.r_field ** (1.0 / self.k)
        self.r2 = bp.r ** 2
        self._flat = bp.chart.is_flat()
        self._wfac = None if self._flat else bp.chart.sqrt_ginv()

    def _matrix(self, mslot, pslot, sl):
        lot = _lot_view(self.bp.lot, sl)
        q = self.dw[sl] + self.r2 * np.asarray(pslot, dtype=float)
        inner = self.d2w[sl] + self.r2 * np.asarray(mslot, dtype=float) \
            + lot.full(q)
        if self._flat:
            return 0.5 * (inner + np.swapaxes(inner, -1, -2))
        wf = self._wfac[sl]
        out = np.einsum("...ab,...bc,...cd->...ad", wf, inner, wf)
        return 0.5 * (out + np.swapaxes(out, -1, -2))

    def value(self, mslot, pslot, zslot, sl=()):
        """F at one jet perturbation, over the node selection sl."""
        sl = sl if sl != () else tuple(slice(None) for _ in self.bp.chart.dims)
        mf = self._matrix(mslot, pslot, sl)
        e, _ = _char_data(mf, self.k)
        fval = _f_value(e, self.k)
        return self.ew[sl] * fval \
            - self.rho[sl] * math.exp(2.0 * self.r2 * float(zslot))

    def m_derivative_bounds(self, mslot, pslot, sl):
        """Eigenvalue range of dF/dM at one perturbation; NaN rows excluded.
        Returns (min, max, exits)."""
        mf = self._matrix(mslot, pslot, sl)
        e, pows = _char_data(mf, self.k)
        ok = _cone_ok(e, self.k)
        exits = int((~ok).sum())
        if not ok.any():
            return math.nan, math.nan, exits
        gmat = _f_grad_matrix(mf, e, pows, self.k)
        if not self._flat:
            wf = self._wfac[sl]
            gmat = np.einsum("...ab,...bc,...cd->...ad", wf, gmat, wf)
            gmat = 0.5 * (gmat + np.swapaxes(gmat, -1, -2))
        deriv = self.r2 * self.ew[sl][..., None, None] * gmat
        _, lam = jacobi_eigh_batch(deriv[ok])
        return float(lam[..., 0].min()), float(lam[..., -1].max()), exits


def savin_operator(bp: BlowupProblem, w, mslot, pslot, zslot, *,
                   cone: ConeSpec, f: str = "sigma_k"):
    """Field of the jet-perturbation operator F(M, p, z, .) around w."""
    return _JetOperator(bp, w, cone=cone, f=f).value(mslot, pslot, zslot)


@dataclass(frozen=True)
class SavinReport:
    """Audit of the induced operator on a deterministic jet-probe mesh.

    lambda_min/Lambda_max bound dF/dM two-sidedly over the probes, K bounds
    the first and second slot derivatives, zero_check is the sup of
    |F(0,0,0,.)| (the converged residual in disguise), monotone_min the
    worst monotonicity gap over random PSD increments.
    """

    lambda_min: float
    Lambda_max: float
    K: float
    zero_check: float
    monotone_min: float
    cone_exits: int
    passed: bool

    def to_json(self):
        return {"lambda": float(self.lambda_min),
                "Lambda": float(self.Lambda_max),
                "K": float(self.K),
                "zero_check": float(self.zero_check),
                "pass": bool(self.passed)}


def _probe_mesh(n, delta):
    """Deterministic slot probes: matrix directions along the diagonal and
    the symmetrized pairs, gradient directions along each axis, both value
    signs, plus a handful of mixed combinations."""
    mdirs = []
    eye = np.eye(n)
    for i in range(n):
        mdirs.append(np.outer(eye[i], eye[i]))
    for i in range(n):
        for j in range(i + 1, n):
            v = eye[i] + eye[j]
            mdirs.append(0.5 * np.outer(v, v))
    zero_m = np.zeros((n, n))
    zero_p = np.zeros(n)
    singles = []
    for em in mdirs:
        singles.append((delta * em, zero_p, 0.0, -delta * em, zero_p, 0.0))
    for s in range(n):
        singles.append((zero_m, delta * eye[s], 0.0, zero_m, -delta * eye[s], 0.0))
    singles.append((zero_m, zero_p, delta, zero_m, zero_p, -delta))
    mixed = [(0.5 * delta * mdirs[0], 0.5 * delta * eye[0], 0.5 * delta),
             (-0.5 * delta * mdirs[0], -0.5 * delta * eye[0], -0.5 * delta)]
    return mdirs, singles, mixed


def savin_check(w_r, bp: BlowupProblem, delta: float, *, cone: ConeSpec,
                f: str = "sigma_k", seed: int = 11,
                psd_probes: int = 100) -> SavinReport:
    """Probe the induced operator in the delta-box of jet perturbations.

    Ellipticity bounds come from the analytic slot derivative at every probe
    point; the K bound and the monotonicity gaps come from finite
    differences and random PSD increments on a strided interior subsample.
    A probe whose spectrum leaves the cone is excluded from the constants
    and counted; any such exit fails the report, as does a nonpositive
    lower ellipticity bound, a zero check above 1e-8, or a monotonicity gap
    below -1e-10.
    """
    if delta <= 0.0:
        raise DomainError("delta must be positive")
    op = _JetOperator(bp, w_r, cone=cone, f=f)
    dims = bp.chart.dims
    n = bp.chart.n
    inter = interior_slice(dims, 1)
    # strided interior subsample keeps the probe sweep affordable
    core = tuple(slice(1, d - 1, max(1, (d - 2) // 8)) for d in dims)

    zero_m = np.zeros((n, n))
    zero_p = np.zeros(n)
    zero_field = op.value(zero_m, zero_p, 0.0)
    zero_check = float(np.abs(zero_field[inter]).max())

    exits = 0
    lam_lo = math.inf
    lam_hi = -math.inf
    mdirs, singles, mixed = _probe_mesh(n, delta)
    probe_points = [(zero_m, zero_p)]
    probe_points += [(mp, pp) for mp, pp, _, _, _, _ in singles]
    probe_points += [(mm, pm) for _, _, _, mm, pm, _ in singles]
    probe_points += [(mp, pp) for mp, pp, _ in mixed]
    for mp, pp in probe_points:
        lo, hi, ex = op.m_derivative_bounds(mp, pp, core)
        exits += ex
        if math.isfinite(lo):
            lam_lo = min(lam_lo, lo)
            lam_hi = max(lam_hi, hi)

    # first and second slot derivatives by central differences through the
    # paired probes
    f0 = op.value(zero_m, zero_p, 0.0, core)
    kbound = 0.0
    for mp, pp, zp, mm, pm, zm in singles:
        fp = op.value(mp, pp, zp, core)
        fm = op.value(mm, pm, zm, core)
        exits += int(np.isnan(fp).sum()) + int(np.isnan(fm).sum())
        d1 = (fp - fm) / (2.0 * delta)
        d2 = (fp - 2.0 * f0 + fm) / (delta * delta)
        for d in (d1, d2):
            good = np.isfinite(d)
            if good.any():
                kbound = max(kbound, float(np.abs(d[good]).max()))

    rng = np.random.default_rng(seed)
    monotone_min = math.inf
    for _ in range(psd_probes):
        bmat = rng.normal(size=(n, n))
        base_m = bmat @ bmat.T
        base_m *= 0.5 * delta / max(float(np.abs(np.linalg.eigvalsh(base_m)).max()), 1e-300)
        bmat = rng.normal(size=(n, n))
        inc = bmat @ bmat.T
        inc *= 0.5 * delta / max(float(np.abs(np.linalg.eigvalsh(inc)).max()), 1e-300)
        fa = op.value(base_m, zero_p, 0.0, core)
        fb = op.value(base_m + inc, zero_p, 0.0, core)
        gap = fb - fa
        bad = ~np.isfinite(gap)
        exits += int(bad.sum())
        if (~bad).any():
            monotone_min = min(monotone_min, float(gap[~bad].min()))

    passed = (math.isfinite(lam_lo) and lam_lo > 0.0
              and zero_check <= 1e-8
              and monotone_min >= -1e-10
              and exits == 0)
    return SavinReport(lambda_min=float(lam_lo), Lambda_max=float(lam_hi),
                       K=float(kbound), zero_check=zero_check,
                       monotone_min=float(monotone_min), cone_exits=int(exits),
                       passed=passed)


def _pairwise_slopes(scales, values):
    out = []
    for i in range(len(scales) - 1):
        out.append(math.log(values[i] / values[i + 1])
                   / math.log(scales[i] / scales[i + 1]))
    return out


def hyperbolic_scaling_study(n: int, k: int, scales=DEFAULT_SCALES,
                             nodes: int = 32, *, alpha: float = HOLDER_ALPHA,
                             delta: float = 0.05, tol: float = 1e-9,
                             max_iter: int = 80, seed_height: float = 1.5,
                             with_savin: bool = True) -> dict:
    """Scaling ladder for the model seed: the 2-jet of the half-space
    conformal factor, curvature one, flat background.

    For each scale the window grid has `nodes` cells per half-side (parent
    spacing r / nodes), so the rescaled grid is identical across the ladder
    and the measured slopes isolate the r-dependence.  Reports the Hölder
    norm of the seed residual, the sup distance from the solution to the
    seed, their pairwise log-log slopes, the last contraction trace, and
    the jet-probe audit at the two finest scales.

    The solve tolerance at scale r is tol * r**2: the audit's zero check
    weights the residual by exp(-2 w) ~ 1/r**2, so a level per-rung target
    needs the unweighted residual to shrink with the window.
    """
    sol = oracle.hyperbolic_halfspace(n, k)
    z0 = float(seed_height)
    if z0 <= float(max(scales)) * 1.1:
        raise DomainError("seed height leaves no room for the largest window")
    x0 = np.zeros(n)
    x0[-1] = z0
    grad = np.zeros(n)
    grad[-1] = -1.0 / z0
    hess = np.zeros((n, n))
    hess[-1, -1] = 1.0 / (z0 * z0)
    P = Paraboloid(x0, sol.normalization_shift - math.log(z0), grad, hess)
    cone = ConeSpec(n, k)

    resid_norms = []
    distances = []
    rates = []
    traces = []
    savin_reports = {}
    for i, r in enumerate(scales):
        hx = r / nodes
        chart = box_chart(n, x0 - (r + hx), x0 + (r + hx), hx)
        bp = blowup(P, chart, 1.0, r)
        resid0 = operator_residual(bp, 0.0, cone=cone, f="sigma_k")
        region = np.zeros(bp.chart.dims, dtype=bool)
        region[interior_slice(bp.chart.dims, 1)] = True
        semi, sup = weighted_holder(np.where(region, resid0, 0.0), bp.chart,
                                    region, alpha, 0)
        resid_norms.append(semi + sup)
        w, trace = contract_solve(P, chart, 1.0, r, tol * r * r, max_iter,
                                  cone=cone)
        distances.append(float(np.abs(w - bp.p_r).max()))
        rates.append(trace.rate)
        traces.append(trace)
        if with_savin and i >= len(scales) - 2:
            savin_reports[r] = savin_check(w, bp, delta, cone=cone)

    report = {
        "n": n, "k": k, "nodes": nodes, "alpha": alpha,
        "r_ladder": [float(r) for r in scales],
        "residual_norms": [float(x) for x in resid_norms],
        "residual_slopes": _pairwise_slopes(scales, resid_norms),
        "distance_sup": [float(x) for x in distances],
        "distance_slopes": _pairwise_slopes(scales, distances),
        "rates": [float(x) for x in rates],
        "trace": traces[-1].to_json(),
    }
    if savin_reports:
        finest = min(savin_reports)
        report["savin"] = savin_reports[finest].to_json()
        if len(savin_reports) > 1:
            coarser = max(savin_reports)
            report["savin_coarser"] = savin_reports[coarser].to_json()
    return report
