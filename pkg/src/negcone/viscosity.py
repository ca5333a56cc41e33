"""Pointwise verification of sub/supersolution status on grids.

The continuous definition quantifies over all C^2 test functions touching
the candidate from above or below.  On a grid that is replaced by a
least-squares 2-jet at the node plus a ladder of paraboloid perturbations
P +- eps |x - x0|^2.  A side is only scored when the perturbed paraboloid
actually touches the sampled values in the right direction; otherwise it
is vacuous and cannot be claimed.  `inconclusive` is an honest outcome.

Also here: jet-based detection of points that fail second-order
differentiability (the singular-set proxy), the shift constant that makes
grid Hessians k-convex after adding C|x|^2, weighted Hölder seminorms,
and a discrete comparison check.
"""

import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import ndimage

from . import cones, symfun
from .errors import DomainError
from .geometry import LowerOrderTerms, MetricChart, assemble_L

BETA_SMOOTH = 1.9          # log-log exponent below which a node is flagged
NOISE_FLOOR = 1e-12        # relative remainder treated as exact fit
PAIR_LIMIT = 10_000        # brute-force pair budget for seminorms
VERDICTS = ("subsolution_ok", "supersolution_ok", "both", "neither",
            "inconclusive")


@dataclass(frozen=True)
class Paraboloid:
    """Quadratic probe q(x) = value + g.(x-base) + (x-base).H(x-base)/2."""

    base: np.ndarray
    value: float
    gradient: np.ndarray
    hessian: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.hessian, dtype=float)
        if h.ndim != 2 or h.shape[0] != h.shape[1]:
            raise DomainError("hessian must be square")
        if np.abs(h - h.T).max() > 1e-12 * max(1.0, np.abs(h).max()):
            raise DomainError("hessian must be symmetric")

    def __call__(self, pts):
        dx = np.asarray(pts, dtype=float) - self.base
        quad = 0.5 * np.einsum("...i,ij,...j->...", dx, self.hessian, dx)
        return self.value + dx @ self.gradient + quad


@dataclass(frozen=True)
class JetReport:
    paraboloid: Paraboloid
    remainders: tuple      # ((radius, sup|w - P| over that ball), ...) descending
    ratio_trend: float     # fitted exponent beta; nan when exact
    exact: bool = False

    def __post_init__(self):
        rad = [r for r, _ in self.remainders]
        if any(b >= a for a, b in zip(rad, rad[1:])):
            raise DomainError("radii must be strictly decreasing")
        if any(s < 0 for _, s in self.remainders):
            raise DomainError("remainders must be nonnegative")


@dataclass(frozen=True)
class SingularMask:
    flags: np.ndarray      # bool, full grid shape, False where not evaluated
    threshold: float
    radii_used: tuple
    beta: Optional[np.ndarray] = None      # nan where not evaluated
    evaluated: Optional[np.ndarray] = None


@dataclass(frozen=True)
class PointVerdict:
    status: str
    cone_spectrum: Optional[symfun.Spectrum]   # None when inconclusive
    residual: float
    point: Optional[tuple] = None
    trace: tuple = ()      # per-eps dicts, diagnostic only

    def __post_init__(self):
        if self.status not in VERDICTS:
            raise DomainError(f"unknown verdict {self.status!r}")
        if self.status != "inconclusive" and not math.isfinite(self.residual):
            raise DomainError("residual must be finite for a decided verdict")


# ---------------------------------------------------------------- jets

class _BallPattern:
    """Offset stencil shared by every node of a uniform grid.

    Holds the integer offsets within the largest radius, the physical
    displacements, the per-radius sub-balls, and the pseudoinverse of the
    quadratic design matrix restricted to the smallest ball.
    """

    def __init__(self, spacing, radii):
        radii = tuple(float(r) for r in radii)
        if len(radii) < 3:
            raise DomainError("need at least three radii")
        if any(r <= 0 for r in radii):
            raise DomainError("radii must be positive")
        if any(b >= a for a, b in zip(radii, radii[1:])):
            raise DomainError("radii must be strictly decreasing")
        self.radii = radii
        n = len(spacing)
        rmax = radii[0]
        reach = tuple(int(math.floor(rmax / h + 1e-9)) for h in spacing)
        axes = [np.arange(-g, g + 1) for g in reach]
        mesh = np.meshgrid(*axes, indexing="ij")
        offs = np.stack([m.ravel() for m in mesh], axis=-1)
        dx = offs * np.asarray(spacing, dtype=float)
        r2 = (dx ** 2).sum(-1)
        keep = r2 <= rmax ** 2 + 1e-12
        self.offsets = offs[keep]
        self.dx = dx[keep]
        self.r2 = r2[keep]
        self.reach = reach
        self.n = n
        self.subsets = [self.r2 <= r ** 2 + 1e-12 for r in radii]
        self.design = self._design(self.dx)
        self.dof = self.design.shape[1]
        small = self.subsets[-1]
        if small.sum() < self.dof + 1:
            raise DomainError("smallest ball holds too few nodes for a 2-jet")
        self.fit_sel = small
        # one least-squares operator per ball: the remainder at radius r is
        # measured against the best fit at that scale, not the smallest one,
        # so a kink's linear mismatch is not masked by a large fitted |x|^2
        self.pinvs = [np.linalg.pinv(self.design[s]) for s in self.subsets]
        self.pinv = self.pinvs[-1]

    def _design(self, dx):
        n = self.n
        cols = [np.ones(len(dx))]
        cols.extend(dx[:, i] for i in range(n))
        cols.extend(0.5 * dx[:, i] ** 2 for i in range(n))
        for i in range(n):
            for j in range(i + 1, n):
                cols.append(dx[:, i] * dx[:, j])
        return np.stack(cols, axis=-1)

    def unpack(self, coef):
        n = self.n
        value = float(coef[0])
        grad = np.array(coef[1:1 + n], dtype=float)
        hess = np.diag(coef[1 + n:1 + 2 * n])
        pos = 1 + 2 * n
        for i in range(n):
            for j in range(i + 1, n):
                hess[i, j] = hess[j, i] = coef[pos]
                pos += 1
        return value, grad, hess


def _snap(chart: MetricChart, x0):
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (chart.n,):
        raise DomainError("point dimension does not match chart")
    idx = np.rint((x0 - np.asarray(chart.origin)) / np.asarray(chart.spacing))
    idx = idx.astype(int)
    if np.any(idx < 0) or np.any(idx >= np.asarray(chart.dims)):
        raise DomainError("point lies outside the chart")
    return tuple(int(i) for i in idx)


def _ball_values(w, chart, idx, pat: _BallPattern):
    nodes = np.asarray(idx) + pat.offsets
    dims = np.asarray(chart.dims)
    if np.any(nodes < 0) or np.any(nodes >= dims):
        raise DomainError("fitting ball leaves the grid")
    sel = tuple(nodes[:, i] for i in range(pat.n))
    if chart.mask is not None and not chart.mask[sel].all():
        raise DomainError("fitting ball leaves the masked region")
    return np.asarray(w, dtype=float)[sel]


def _fit_beta(radii, rems, floor):
    live = [(r, s) for r, s in zip(radii, rems) if s > floor]
    if len(live) < 2:
        return float("nan")
    lr = np.log([r for r, _ in live])
    ls = np.log([s for _, s in live])
    lr = lr - lr.mean()
    return float((lr * (ls - ls.mean())).sum() / (lr * lr).sum())


def _fit_ladder(pat: _BallPattern, vals):
    """Per-radius fits: remainder ladder, noise floor, exact flag, beta."""
    rems = []
    for s, piv in zip(pat.subsets, pat.pinvs):
        coef = piv @ vals[s]
        rems.append(float(np.abs(vals[s] - pat.design[s] @ coef).max()))
    floor = NOISE_FLOOR * max(1.0, float(np.abs(vals).max()))
    exact = all(s <= floor for s in rems)
    beta = float("nan") if exact else _fit_beta(pat.radii, rems, floor)
    return rems, floor, exact, beta


def jet_fit(w, chart: MetricChart, x0, radii) -> JetReport:
    """Least-squares 2-jet at the node nearest x0, remainder profile over
    a descending ladder of ball radii, and the fitted decay exponent.

    The jet is fit on the smallest ball only; larger balls just measure
    how far the quadratic model drifts, which is what the exponent reads.
    """
    pat = _BallPattern(chart.spacing, radii)
    idx = _snap(chart, x0)
    vals = _ball_values(w, chart, idx, pat)
    coef = pat.pinv @ vals[pat.fit_sel]
    value, grad, hess = pat.unpack(coef)
    rems, _, exact, beta = _fit_ladder(pat, vals)
    base = np.asarray(chart.origin) + np.asarray(idx) * np.asarray(chart.spacing)
    par = Paraboloid(base, value, grad, hess)
    return JetReport(par, tuple(zip(pat.radii, rems)), beta, exact)


# ------------------------------------------------------- point verdicts

def _cone_margin(nu, k):
    """min_j sigma_j / binom scale; <= 0 means outside the open cone."""
    n = len(nu)
    sig = symfun.sigma_all_batch(np.asarray(nu)[None, :])[0]
    scale = max(1.0, float(np.abs(nu).max()))
    worst = math.inf
    for j in range(1, k + 1):
        worst = min(worst, sig[j] / (math.comb(n, j) * scale ** j))
    return worst


def _sigma_root(nu, k):
    sig = symfun.sigma_batch(np.asarray(nu)[None, :], k)[0]
    if sig <= 0:
        return float("nan")
    return float(sig ** (1.0 / k))


def _lot_at(lot: LowerOrderTerms, idx):
    return LowerOrderTerms(lot.l0[idx], lot.gamma[idx], lot.g[idx],
                           lot.ginv[idx])


def default_eps_ladder(chart: MetricChart, w0):
    h = max(chart.spacing)
    scale = max(1.0, abs(float(w0)))
    return (4 * h * scale, 2 * h * scale, h * scale)


def check_point(w, chart: MetricChart, R, cone: cones.ConeSpec, f="sigma_k",
                x0=None, eps_ladder=None, radii=None,
                lot: Optional[LowerOrderTerms] = None,
                slack_coef: float = 10.0) -> PointVerdict:
    """Sub/supersolution verdict at one interior point.

    Builds the 2-jet P, then for each eps tests the perturbed paraboloids:
    the sub side uses P + eps|x-x0|^2 and needs spectrum in the open cone
    together with f >= rhs - slack; the super side uses P - eps|x-x0|^2 and
    passes when either f <= rhs + slack inside the cone or the spectrum
    leaves the open cone entirely.  A side that never touches the sampled
    values in its direction stays vacuous and is not claimed.  rhs is
    R^{1/k} e^{2 w(x0)} and slack scales like h^2 + eps.

    f: "sigma_k" for sigma_k^{1/k}, or a callable on spectra (must be
    monotone in the cone and 1-homogeneous for the slack model to apply).
    """
    if x0 is None:
        raise DomainError("x0 is required")
    idx = _snap(chart, x0)
    h = max(chart.spacing)
    if radii is None:
        radii = (4 * h, 3 * h, 2 * h)
    try:
        pat = _BallPattern(chart.spacing, radii)
        vals = _ball_values(w, chart, idx, pat)
    except DomainError:
        return PointVerdict("inconclusive", None, float("nan"),
                            tuple(np.asarray(x0, dtype=float)))
    coef = pat.pinv @ vals[pat.fit_sel]
    _, grad, hess = pat.unpack(coef)
    w0 = float(np.asarray(w)[idx])

    rems, _, exact, beta = _fit_ladder(pat, vals)

    Rval = np.asarray(R, dtype=float)
    R0 = float(Rval[idx]) if Rval.ndim else float(Rval)
    if R0 <= 0:
        raise DomainError("curvature data must be positive")
    rhs = R0 ** (1.0 / cone.k) * math.exp(2.0 * w0)
    fval = (lambda nu: _sigma_root(nu, cone.k)) if f == "sigma_k" else f

    if lot is None:
        lot = assemble_L(chart)
    Lmat = _lot_at(lot, idx).full(grad)
    W = chart.sqrt_ginv()[idx]

    if eps_ladder is None:
        eps_ladder = default_eps_ladder(chart, w0)
    eps_ladder = tuple(float(e) for e in eps_ladder)
    if any(e <= 0 for e in eps_ladder) or \
            any(b >= a for a, b in zip(eps_ladder, eps_ladder[1:])):
        raise DomainError("eps ladder must be positive decreasing")

    small = pat.fit_sel
    dx2 = pat.r2[small]
    # jet recentered so the probe makes contact at the node itself
    base_vals = w0 + pat.design[small][:, 1:] @ coef[1:]
    w_ball = vals[small]
    # least extra curvature making P +- s|x-x0|^2 dominate w from the
    # right side on the fitting ball; s blows up like 1/h at a kink,
    # which is how "no touching from above" shows itself at grid scale
    off = dx2 > 0
    gap = (w_ball - base_vals)[off] / dx2[off]
    need_up = max(0.0, float(gap.max()))
    need_dn = max(0.0, float(-gap.min()))

    eye = np.eye(chart.n)

    def spectrum(shift):
        m = W @ (hess + shift * eye + Lmat) @ W
        return symfun.eigenvalues_batch(0.5 * (m + m.T)[None])[0]

    trace = []
    sub_state = super_state = "vacuous"
    for eps in eps_ladder:
        slack = slack_coef * (h ** 2 + eps) * max(1.0, rhs)
        entry = {"eps": eps, "slack": slack}
        d_up = max(0.0, need_up - eps)
        if d_up <= eps:
            nu = spectrum(2.0 * (eps + d_up))
            ok = _cone_margin(nu, cone.k) > 0 and fval(nu) >= rhs - slack
            sub_state = "pass" if ok else "fail"
            entry["sub"] = sub_state
        d_dn = max(0.0, need_dn - eps)
        nu = spectrum(-2.0 * (eps + d_dn))
        margin = _cone_margin(nu, cone.k)
        ok = margin <= 1e-10 or fval(nu) <= rhs + slack
        super_state = "pass" if ok else "fail"
        entry["super"] = super_state
        trace.append(entry)

    nu0 = spectrum(0.0)
    margin0 = _cone_margin(nu0, cone.k)
    if margin0 > 0:
        residual = abs(fval(nu0) - rhs)
    else:
        residual = -margin0
    sub_ok = sub_state == "pass"
    super_ok = super_state == "pass"
    status = {(True, True): "both", (True, False): "subsolution_ok",
              (False, True): "supersolution_ok",
              (False, False): "neither"}[(sub_ok, super_ok)]
    return PointVerdict(status, symfun.Spectrum(nu0), float(residual),
                        tuple(np.asarray(x0, dtype=float)), tuple(trace))


def verdict_record(v: PointVerdict) -> dict:
    spec = None if v.cone_spectrum is None else list(v.cone_spectrum.values)
    return {"point": list(v.point) if v.point is not None else None,
            "status": v.status, "spectrum": spec, "residual": v.residual}


def verdicts_to_json(verdicts, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([verdict_record(v) for v in verdicts], fh, indent=1)
        fh.write("\n")


# ------------------------------------------------- singular-set detection

def _shifted_core(arr, offsets, reach):
    """Views of arr shifted by each offset, restricted to the core window."""
    dims = arr.shape
    outs = []
    for off in offsets:
        sl = tuple(slice(r + o, d - r + o) for r, o, d in zip(reach, off, dims))
        outs.append(arr[sl])
    return np.stack(outs, axis=0)


def jet_beta_field(w, chart: MetricChart, radii):
    """Vectorized remainder/beta over every node with full interior margin.

    Returns (beta, remainders, evaluated): beta is nan outside the
    evaluated window, remainders has one leading axis per ladder radius.
    """
    pat = _BallPattern(chart.spacing, radii)
    dims = chart.dims
    if any(d <= 2 * r for d, r in zip(dims, pat.reach)):
        raise DomainError("ladder radii exceed the chart interior")
    vals = _shifted_core(np.asarray(w, dtype=float), pat.offsets, pat.reach)
    core = vals.shape[1:]
    evaluated = np.ones(core, dtype=bool)
    if chart.mask is not None:
        inside = _shifted_core(chart.mask, pat.offsets, pat.reach)
        evaluated = inside.all(axis=0)

    layers = []
    for s, piv in zip(pat.subsets, pat.pinvs):
        coef = np.tensordot(piv, vals[s], axes=(1, 0))
        pred = np.tensordot(pat.design[s], coef, axes=(1, 0))
        layers.append(np.abs(vals[s] - pred).max(axis=0))
    rems = np.stack(layers, axis=0)

    floor = NOISE_FLOOR * np.maximum(1.0, np.abs(vals).max(axis=0))
    live = rems > floor
    logs = np.where(live, np.log(np.maximum(rems, 1e-300)), 0.0)
    lr = np.log(pat.radii).reshape((-1,) + (1,) * len(core))
    cnt = live.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        lr_mean = (live * lr).sum(axis=0) / cnt
        ls_mean = logs.sum(axis=0) / cnt
        lrv = live * (lr - lr_mean)
        beta = (lrv * (logs - live * ls_mean)).sum(0) / (lrv ** 2).sum(0)
    beta = np.where(cnt >= 2, beta, np.nan)

    full_beta = np.full(dims, np.nan)
    full_rems = np.full((len(pat.radii),) + dims, np.nan)
    full_eval = np.zeros(dims, dtype=bool)
    corewin = tuple(slice(r, d - r) for r, d in zip(pat.reach, dims))
    full_beta[corewin] = np.where(evaluated, beta, np.nan)
    for i in range(len(pat.radii)):
        full_rems[(i,) + corewin] = np.where(evaluated, rems[i], np.nan)
    full_eval[corewin] = evaluated
    return full_beta, full_rems, full_eval


def detect_singular_set(w, chart: MetricChart, radii,
                        beta_threshold: float = BETA_SMOOTH) -> SingularMask:
    """Flag nodes whose 2-jet decays too slowly to be twice differentiable.

    A node is flagged when its fitted exponent falls below the threshold or
    when sup|w - P| / r^2 does not decrease from the largest ladder radius
    to the smallest.  Nodes fitted to machine noise are never flagged.
    """
    beta, rems, evaluated = jet_beta_field(w, chart, radii)
    radii = tuple(float(r) for r in radii)
    with np.errstate(invalid="ignore"):
        slow = beta < beta_threshold
        ratio_first = rems[0] / radii[0] ** 2
        ratio_last = rems[-1] / radii[-1] ** 2
        stuck = ratio_last >= ratio_first * 0.999
    wmax = np.abs(np.asarray(w, dtype=float)).max()
    noise = rems[-1] <= NOISE_FLOOR * max(1.0, float(wmax))
    flags = evaluated & ~noise & (slow | stuck)
    flags = np.where(np.isnan(beta), evaluated & ~noise & stuck, flags)
    return SingularMask(flags, beta_threshold, radii, beta, evaluated)


def singular_mask_to_csv(mask: SingularMask, chart: MetricChart, path):
    """Rows: flat node index, coordinates, flag, beta (evaluated nodes)."""
    coords = chart.coords()
    beta = mask.beta if mask.beta is not None else np.full(chart.dims, np.nan)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# index, " + ", ".join(f"x{i}" for i in range(chart.n))
                 + ", flag, beta\n")
        it = np.ndindex(*chart.dims)
        for flat, idx in enumerate(it):
            if mask.evaluated is not None and not mask.evaluated[idx]:
                continue
            pt = ",".join("%.17g" % c for c in coords[idx])
            fh.write(f"{flat},{pt},{int(mask.flags[idx])},"
                     f"{'%.17g' % beta[idx]}\n")


# ---------------------------------------------------- k-convexity shift

def kconvex_shift_constant(lot: LowerOrderTerms, lip_bound: float,
                           chart: MetricChart, dirs: int = 16,
                           node_budget: int = 2000) -> float:
    """Smallest sampled C with max eig L(x, p) <= 2C over |p| <= lip_bound,
    padded by 5 percent.  Sampling: every node (or a deterministic stride
    subsample), gradient shells {0, K/2, K} times a direction mesh.
    """
    if lip_bound < 0:
        raise DomainError("lip_bound must be nonnegative")
    n = chart.n
    flat = lot.l0.reshape(-1, n, n)
    gamma = lot.gamma.reshape(-1, n, n, n)
    gmat = lot.g.reshape(-1, n, n)
    ginv = lot.ginv.reshape(-1, n, n)
    m = flat.shape[0]
    stride = max(1, m // node_budget)
    sel = np.arange(0, m, stride)
    sub = LowerOrderTerms(flat[sel], gamma[sel], gmat[sel], ginv[sel])

    if n == 1:
        mesh = np.array([[1.0], [-1.0]])
    else:
        mesh = cones.sphere_mesh(n, max(dirs, 2 * n))
    shells = [0.0]
    if lip_bound > 0:
        shells += [lip_bound / 2, lip_bound]
    worst = -math.inf
    for s in shells:
        pvecs = mesh * s if s > 0 else mesh[:1] * 0.0
        for p in pvecs:
            L = sub.full(np.broadcast_to(p, (len(sel), n)))
            lam = symfun.eigenvalues_batch(0.5 * (L + np.swapaxes(L, -1, -2)))
            worst = max(worst, float(lam[..., -1].max()))
    return 1.05 * max(0.0, worst) / 2.0


# ------------------------------------------------------ weighted norms

def _region_boundary_distance(region, spacing):
    # distance to the nearest node outside the region
    return ndimage.distance_transform_edt(region, sampling=spacing)


def weighted_holder(w, chart: MetricChart, region, alpha: float, sigma: int):
    """Weighted Hölder data on a node region.

    Returns (seminorm, sup_norm) with weights d_x^(sigma+alpha) on the
    difference quotients and d_x^sigma on the values, d_x the distance to
    the nearest node outside the region.  Exact for regions up to 10^4
    nodes, deterministic stride subsample beyond.
    """
    if not (0 < alpha <= 1):
        raise DomainError("alpha must lie in (0, 1]")
    region = np.asarray(region, dtype=bool)
    if not region.any():
        raise DomainError("region is empty")
    dist = _region_boundary_distance(region, chart.spacing)
    coords = chart.coords()[region]
    vals = np.asarray(w, dtype=float)[region]
    d = dist[region]
    m = len(vals)
    if m > PAIR_LIMIT:
        stride = int(np.ceil(m / PAIR_LIMIT))
        coords, vals, d = coords[::stride], vals[::stride], d[::stride]
        m = len(vals)
    sup_norm = float((d ** sigma * np.abs(vals)).max())
    best = 0.0
    block = 512
    for i in range(0, m, block):
        ci, vi, di = coords[i:i + block], vals[i:i + block], d[i:i + block]
        sep = np.linalg.norm(ci[:, None, :] - coords[None, :, :], axis=-1)
        dv = np.abs(vi[:, None] - vals[None, :])
        dmin = np.minimum(di[:, None], d[None, :])
        with np.errstate(divide="ignore", invalid="ignore"):
            q = dmin ** (sigma + alpha) * dv / sep ** alpha
        q[sep == 0] = 0.0
        best = max(best, float(np.nanmax(q)))
    return best, sup_norm


def interpolation_constant(w, chart: MetricChart, region, alpha: float,
                           eps_mesh=None):
    """Smallest C with |u|_0^(n) <= eps^a [u]^(n) + C eps^(-n) int|u| over
    the eps mesh.  Diagnostic only, nothing is asserted against it.
    """
    n = chart.n
    semi, sup = weighted_holder(w, chart, region, alpha, n)
    hvol = float(np.prod(chart.spacing))
    mass = hvol * float(np.abs(np.asarray(w, dtype=float)[region]).sum())
    if mass == 0:
        return 0.0
    if eps_mesh is None:
        eps_mesh = np.geomspace(0.05, 1.0, 12)
    cs = [(sup - e ** alpha * semi) * e ** n / mass for e in eps_mesh]
    return float(max(0.0, max(cs)))


# ----------------------------------------------------- comparison check

def _region_and_rim(chart: MetricChart):
    region = chart.mask if chart.mask is not None else np.ones(chart.dims,
                                                              dtype=bool)
    interior = region.copy()
    for ax in range(region.ndim):
        sl = [slice(None)] * region.ndim
        sl[ax] = 0
        interior[tuple(sl)] = False
        sl[ax] = -1
        interior[tuple(sl)] = False
    shrunk = ndimage.binary_erosion(region, border_value=0)
    interior &= shrunk
    rim = region & ~interior
    return region, interior, rim


def ordering_violations(w_sub, v_super, chart: MetricChart, slack=1e-10):
    """Interior nodes where the candidate overshoots the barrier."""
    _, interior, _ = _region_and_rim(chart)
    diff = np.asarray(w_sub, dtype=float) - np.asarray(v_super, dtype=float)
    scale = max(1.0, float(np.abs(v_super).max()))
    bad = interior & (diff > slack * scale)
    return [tuple(int(i) for i in idx) for idx in np.argwhere(bad)]


def comparison_check(w_sub, v_super, chart: MetricChart,
                     cone: cones.ConeSpec, slack=1e-10,
                     smoothness_samples: int = 8) -> bool:
    """True when boundary ordering w <= v propagates to the interior.

    The barrier must look classically smooth at grid scale; a handful of
    interior nodes are jet-sampled and a slow exponent rejects the call.
    """
    _, interior, rim = _region_and_rim(chart)
    if not rim.any() or not interior.any():
        raise DomainError("chart region is too thin to compare on")
    h = max(chart.spacing)
    radii = (4 * h, 3 * h, 2 * h)
    pts = np.argwhere(interior)
    picks = pts[:: max(1, len(pts) // smoothness_samples)]
    checked = 0
    for idx in picks:
        x0 = np.asarray(chart.origin) + idx * np.asarray(chart.spacing)
        try:
            rep = jet_fit(v_super, chart, x0, radii)
        except DomainError:
            continue
        checked += 1
        if not rep.exact and math.isfinite(rep.ratio_trend) \
                and rep.ratio_trend < BETA_SMOOTH:
            raise DomainError("barrier fails the grid-scale smoothness check")
    if checked == 0:
        raise DomainError("no interior node admits a smoothness sample")
    diff = np.asarray(w_sub, dtype=float) - np.asarray(v_super, dtype=float)
    scale = max(1.0, float(np.abs(np.asarray(v_super)).max()))
    if float(diff[rim].max()) > slack * scale:
        raise DomainError("ordering must hold on the boundary nodes")
    return not ordering_violations(w_sub, v_super, chart, slack)
