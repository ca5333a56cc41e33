"""Closed-form conformal references and a radial ODE ground truth.

Two kinds of reference object live here.  Exact solutions are conformal
factors known in closed form: after a k-dependent additive shift the
hyperbolic models satisfy the fully nonlinear equation with unit right
hand side, so every discretized quantity built from them can be compared
against an error budget that is pure truncation.  The annulus profile is
a brute-force object instead: the radial reduction of the equation is
integrated as an ODE by shooting on the outer boundary value, stopped at
the midpoint of the logarithmic radius, and reflected across it, which
is exactly where the gradient jump of the singular limit sits.

The integrator here shares no discretization code with the grid solvers;
agreement between the two paths is the point of the module.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import geometry, symfun
from .errors import DomainError, OracleError

KINDS = ("hyperbolic_halfspace", "hyperbolic_ball", "sphere_factor")

RK_STEP = 1e-4
_WP_FLOOR = 1e-6          # tangential degeneracy cutoff on the slope
_EXP_CAP = 600.0          # 2k(w+t) beyond this overflows the forcing term
_SUB_INCREMENT = 2e-3     # target state change per RK substep
_SUB_CAP = 100_000


def normalization_shift(n, k):
    """Additive constant making the model spectrum solve with R = 1."""
    if not 1 <= k <= n:
        raise DomainError(f"k={k} out of range for n={n}")
    return math.log(math.comb(n, k) * 2.0 ** (-k)) / (2.0 * k)


@dataclass(frozen=True)
class ExactSolution:
    """A conformal factor solving the equation exactly, up to orientation.

    orientation is the sign s with sigma_k(lambda(s * g_w^{-1} A_{g_w}))
    equal to one: -1 for the hyperbolic models (the equation this package
    solves), +1 for the round sphere factor, which is kept as a sign
    cross-check and is not a solution of the -1 orientation.
    """

    kind: str
    n: int
    k: int
    normalization_shift: float
    orientation: int = -1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"unknown exact solution kind {self.kind!r}")
        if self.n < 3:
            raise DomainError("exact solutions need n >= 3")
        if not 1 <= self.k <= self.n:
            raise DomainError(f"k={self.k} out of range for n={self.n}")
        if self.orientation not in (-1, 1):
            raise DomainError("orientation must be -1 or +1")

    # The equation's right hand side after the normalization shift.
    curvature = 1.0

    def w(self, points):
        pts = np.asarray(points, dtype=float)
        if pts.shape[-1] != self.n:
            raise DomainError(f"points must have {self.n} components")
        c = self.normalization_shift
        if self.kind == "hyperbolic_halfspace":
            z = pts[..., -1]
            if np.any(z <= 0.0):
                raise DomainError("half-space model needs x_n > 0")
            return -np.log(z) + c
        r2 = np.sum(pts * pts, axis=-1)
        if self.kind == "hyperbolic_ball":
            if np.any(r2 >= 1.0):
                raise DomainError("ball model needs |x| < 1")
            return np.log(2.0 / (1.0 - r2)) + c
        return np.log(2.0 / (1.0 + r2)) + c

    def chart(self, h=0.05):
        """A default flat window well inside the solution's domain."""
        if self.kind == "hyperbolic_halfspace":
            return geometry.half_space_slab(self.n, 1.0, 2.0, h, width=1.0)
        if self.kind == "hyperbolic_ball":
            # corners must stay well off the unit sphere or the quartic
            # derivative terms inflate the truncation constant past 5
            return geometry.box_chart(self.n, -0.3, 0.3, h)
        return geometry.box_chart(self.n, -0.6, 0.6, h)


def hyperbolic_halfspace(n, k):
    """w = -ln(x_n) + c_k on the upper half space."""
    return ExactSolution("hyperbolic_halfspace", n, k, normalization_shift(n, k))


def hyperbolic_ball(n, k):
    """w = ln(2/(1-|x|^2)) + c_k on the unit ball; same spectrum as the slab."""
    return ExactSolution("hyperbolic_ball", n, k, normalization_shift(n, k))


def sphere_factor(n, k):
    """Round-sphere factor w = ln(2/(1+|x|^2)) + c_k; +1 orientation only."""
    return ExactSolution("sphere_factor", n, k, normalization_shift(n, k),
                         orientation=+1)


def equation_residual(sol: ExactSolution, chart=None, h=0.05):
    """Max interior defect of sigma_k(lambda(orientation * C)) - 1.

    Two-cell margin: the mixed second differences need a full central
    stencil before the truncation error is second order.
    """
    if chart is None:
        chart = sol.chart(h)
    wvals = sol.w(chart.coords())
    c = geometry.conformal_schouten(chart, wvals)
    sl = geometry.interior_slice(chart.dims, 2)
    inner = (sol.orientation * c[sl]).reshape(-1, sol.n, sol.n)
    lam = symfun.eigenvalues_batch(inner)
    return float(np.abs(symfun.sigma_batch(lam, sol.k) - 1.0).max())


# ---------------------------------------------------------------------------
# Radial annulus profile.
#
# In t = ln rho the equation for w(t) closes on the pair of eigenvalues
#   m_rad = w'' - w' - w'^2/2      (multiplicity 1)
#   m_tan = w'  + w'^2/2           (multiplicity n-1)
# and reads sigma_k(m) = R e^{2k(w+t)}.  Solving sigma_k for m_rad is
# linear because the radial eigenvalue is simple:
#   m_rad = (R e^{2k(w+t)} - C(n-1,k) m_tan^k) / (C(n-1,k-1) m_tan^{k-1}).
# The admissible outer branch has w' > 0; it degenerates (m_tan -> 0,
# w'' -> +infinity) exactly where the singular limit puts its gradient
# jump, and trajectories that reach m_tan = 0 early are repelled upward.
# Shooting therefore bisects the initial slope between "repelled" and
# "reaches the midpoint with w' > 0".


@dataclass(frozen=True)
class RadialProfile:
    """Glued radial solution on a log-radius mesh.

    slopes holds the one-sided derivatives at kink_t (left, right);
    asymmetry is the sup deviation from the reflection identity
    w(t) = w(2 t0 - t) - 2 (t - t0); glue_gap is the value mismatch of
    the two shot branches at the midpoint (zero when symmetrized).
    """

    t_mesh: np.ndarray
    w: np.ndarray
    wp: np.ndarray
    wpp: np.ndarray
    kink_t: float
    n: int
    k: int
    a: float
    b: float
    curvature: float
    boundary_value: float
    shoot_slope: float
    slopes: tuple
    asymmetry: float
    glue_gap: float
    symmetrized: bool

    def __post_init__(self):
        for name in ("t_mesh", "w", "wp", "wpp"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), float))
        if not (self.t_mesh.ndim == 1 and len(self.t_mesh) >= 5):
            raise DomainError("profile mesh must be a 1D grid")
        if any(arr.shape != self.t_mesh.shape for arr in (self.w, self.wp, self.wpp)):
            raise DomainError("profile arrays must share the mesh shape")
        dt = np.diff(self.t_mesh)
        # tolerance on the node scale, not the spacing: arange rounding
        # wobbles each node by an ulp of t, which can exceed 1e-12 dt
        span = max(1.0, abs(float(self.t_mesh[0])), abs(float(self.t_mesh[-1])))
        if dt.min() <= 0 or dt.max() - dt.min() > 1e-12 * span:
            raise DomainError("profile mesh must be uniform and increasing")

    @property
    def kink_radius(self):
        return math.exp(self.kink_t)

    @property
    def spacing(self):
        return float(self.t_mesh[1] - self.t_mesh[0])

    def interpolate(self, t):
        t = np.asarray(t, float)
        if np.any(t < self.t_mesh[0] - 1e-12) or np.any(t > self.t_mesh[-1] + 1e-12):
            raise DomainError("interpolation outside the profile mesh")
        return np.interp(t, self.t_mesh, self.w)

    def chart1d(self):
        return geometry.flat_chart(1, (len(self.t_mesh),), (self.spacing,),
                                   (float(self.t_mesh[0]),))

    def to_csv(self, path):
        geometry.save_scalar_grid(path, self.chart1d(), self.w)

    def lift(self, h):
        """Interpolate onto the n-dimensional annulus chart at spacing h."""
        chart = geometry.annulus_chart(self.n, self.a, self.b, h)
        r = np.linalg.norm(chart.coords(), axis=-1)
        t = np.log(np.clip(r, math.exp(self.t_mesh[0]), math.exp(self.t_mesh[-1])))
        return chart, np.interp(t, self.t_mesh, self.w)


def _radial_wpp(n, k, curv, ck, ck1, t, w, wp):
    """w'' from the closed sigma_k form; None when m_tan degenerates."""
    mt = wp + 0.5 * wp * wp
    if mt <= 0.0:
        return None
    e = 2.0 * k * (w + t)
    if e > _EXP_CAP:
        return None
    mr = (curv * math.exp(e) - ck * mt ** k) / (ck1 * mt ** (k - 1))
    if k > 1:
        # interior cone faces; the k-th is positive by construction
        for j in range(1, k):
            if math.comb(n - 1, j) * mt ** j \
                    + math.comb(n - 1, j - 1) * mr * mt ** (j - 1) <= 0.0:
                return None
    return mr + wp + 0.5 * wp * wp


def _march(n, k, curv, t_hi, t_lo, m_hi, sigma, step, record=False):
    """Integrate from (t_hi, m_hi, sigma) down to t_lo with classical RK4.

    Returns ("ok", w, wp, wpp) with arrays on the descending node mesh
    when record is set, ("ok", w_end, wp_end, None) otherwise, or
    ("low", t_fail) when the trajectory is repelled or degenerates.
    The output mesh is fixed; steep stretches are refined by substeps
    whose count is set from the state scale on entry to each step.
    """
    ck = float(math.comb(n - 1, k))
    ck1 = float(math.comb(n - 1, k - 1))
    nsteps = max(1, int(math.ceil((t_hi - t_lo) / step)))
    h = (t_hi - t_lo) / nsteps
    t, w, wp = t_hi, float(m_hi), float(sigma)
    if record:
        ws, wps, wpps = [w], [wp], [None]
    for i in range(nsteps):
        wpp0 = _radial_wpp(n, k, curv, ck, ck1, t, w, wp)
        if wpp0 is None or wp <= _WP_FLOOR:
            return ("low", t)
        if record and wpps[-1] is None:
            wpps[-1] = wpp0
        scale = max(abs(wp), math.sqrt(abs(wpp0)), 1.0)
        nsub = 1 + int(h * scale / _SUB_INCREMENT)
        if nsub > _SUB_CAP:
            if wp < 1e-3:
                return ("low", t)
            raise OracleError(
                f"radial integration too stiff at t={t:.6f} "
                f"(n={n}, k={k}, slope={sigma:.6g}, boundary={m_hi:.6g})")
        s = -h / nsub
        for _ in range(nsub):
            k1 = _radial_wpp(n, k, curv, ck, ck1, t, w, wp)
            if k1 is None:
                return ("low", t)
            w2, p2 = w + 0.5 * s * wp, wp + 0.5 * s * k1
            k2 = _radial_wpp(n, k, curv, ck, ck1, t + 0.5 * s, w2, p2)
            if k2 is None:
                return ("low", t)
            w3, p3 = w + 0.5 * s * p2, wp + 0.5 * s * k2
            k3 = _radial_wpp(n, k, curv, ck, ck1, t + 0.5 * s, w3, p3)
            if k3 is None:
                return ("low", t)
            w4, p4 = w + s * p3, wp + s * k3
            k4 = _radial_wpp(n, k, curv, ck, ck1, t + s, w4, p4)
            if k4 is None:
                return ("low", t)
            w += s * (wp + 2.0 * (p2 + p3) + p4) / 6.0
            wp += s * (k1 + 2.0 * (k2 + k3) + k4) / 6.0
            t += s
            if wp <= _WP_FLOOR:
                return ("low", t)
        t = t_hi - (i + 1) * h  # kill drift so the mesh stays exact
        if record:
            ws.append(w)
            wps.append(wp)
            wpps.append(None)
    if record:
        wpp_end = _radial_wpp(n, k, curv, ck, ck1, t, w, wp)
        wpps[-1] = wpp_end if wpp_end is not None else math.inf
        return ("ok", np.array(ws), np.array(wps), np.array(wpps, float))
    return ("ok", w, wp, None)


def _shoot_outer(n, k, curv, t_hi, t_lo, m_hi, step):
    """Bisect the initial slope on the repelled/overshoot dichotomy."""
    sigma0 = math.sqrt(2.0) * curv ** (1.0 / (2 * k)) * math.exp(m_hi + t_hi)
    lo, hi = 0.25 * sigma0, 4.0 * sigma0
    for _ in range(4):
        if _march(n, k, curv, t_hi, t_lo, m_hi, lo, step)[0] == "low":
            break
        lo *= 0.25
    else:
        raise OracleError(
            f"no repelled shot found (n={n}, k={k}, boundary={m_hi:.6g}, "
            f"window=[{t_lo:.4f},{t_hi:.4f}])")
    for _ in range(4):
        if _march(n, k, curv, t_hi, t_lo, m_hi, hi, step)[0] == "ok":
            break
        hi *= 4.0
    else:
        raise OracleError(
            f"no surviving shot found (n={n}, k={k}, boundary={m_hi:.6g}, "
            f"window=[{t_lo:.4f},{t_hi:.4f}])")
    for _ in range(90):
        if hi - lo <= 1e-15 * hi:
            break
        mid = 0.5 * (lo + hi)
        if _march(n, k, curv, t_hi, t_lo, m_hi, mid, step)[0] == "ok":
            hi = mid
        else:
            lo = mid
    status, w_arr, wp_arr, wpp_arr = _march(
        n, k, curv, t_hi, t_lo, m_hi, hi, step, record=True)
    if status != "ok":
        raise OracleError(
            f"converged slope failed to integrate (n={n}, k={k}, "
            f"boundary={m_hi:.6g}, slope={hi:.9g})")
    # arrays come out on descending t; flip to ascending [t_lo, t_hi]
    return hi, w_arr[::-1].copy(), wp_arr[::-1].copy(), wpp_arr[::-1].copy()


def _kink_location(t_mesh, w, h):
    """Node of maximal second-difference, compared across two mesh scales.

    A slope jump gives a doubled-step second difference exactly twice the
    single-step one, while a smooth stretch, resolved or not, gives at
    least four times (4 sinh^2 scaling).  The raw argmax would land on a
    steep boundary layer whenever its curvature times h^2 beats the jump
    times h, so the ratio is what identifies the kink.
    """
    d1 = np.abs(w[2:] - 2.0 * w[1:-1] + w[:-2])        # at nodes 1..m-2
    d2 = np.abs(w[4:] - 2.0 * w[2:-2] + w[:-4])        # at nodes 2..m-3
    inner1 = d1[1:-1]
    eligible = inner1 >= 0.05 * h
    if not eligible.any():
        return float(t_mesh[1 + int(np.argmax(d1))])
    ratio = np.where(eligible, d2 / np.maximum(inner1, 1e-300), np.inf)
    return float(t_mesh[2 + int(np.argmin(ratio))])


def _reflect_left(w_r, wp_r, wpp_r, h):
    """Left branch by w(t0 - s) = w(t0 + s) + 2 s, exact on the mesh."""
    nright = len(w_r) - 1
    idx = np.arange(nright, 0, -1)
    w_l = w_r[idx] + 2.0 * idx * h
    wp_l = -wp_r[idx] - 2.0
    wpp_l = wpp_r[idx]
    return w_l, wp_l, wpp_l


def annulus_radial(n, k, a, b, R=1.0, M_bc=4.0, symmetrize=True,
                   step=RK_STEP) -> RadialProfile:
    """Radial profile on ln a < t < ln b singular at the geometric mean.

    Shoots the outer branch down to the midpoint t0 = ln sqrt(ab); the
    inner half is its reflection when symmetrize is set, otherwise the
    conjugate branch (outer data M_bc - (ln b - ln a)) is shot
    independently and the midpoint value mismatch is reported as
    glue_gap.  R must be a positive constant: the reflection identity
    needs a curvature invariant under the inversion through sqrt(ab).
    """
    if n < 3:
        raise DomainError("radial oracle needs n >= 3")
    if not 1 <= k <= n:
        raise DomainError(f"k={k} out of range for n={n}")
    if 2 * k <= n:
        raise DomainError("radial singular profiles need k > n/2")
    if not 0.0 < a < b:
        raise DomainError("annulus needs 0 < a < b")
    curv = float(R)
    if curv <= 0.0:
        raise DomainError("curvature must be positive")
    if not step > 0.0:
        raise DomainError("step must be positive")
    m_bc = float(M_bc)
    t_a, t_b = math.log(a), math.log(b)
    t0 = 0.5 * (t_a + t_b)
    if 2.0 * k * (m_bc + t_b) > _EXP_CAP:
        raise DomainError("boundary value too large for the forcing term")

    slope, w_r, wp_r, wpp_r = _shoot_outer(n, k, curv, t_b, t0, m_bc, step)
    nright = len(w_r) - 1
    h = (t_b - t0) / nright
    t_mesh = t_a + h * np.arange(2 * nright + 1)
    t_mesh[2 * nright] = t_b

    gap = 0.0
    if symmetrize:
        w_l, wp_l, wpp_l = _reflect_left(w_r, wp_r, wpp_r, h)
        left_slope = float(-wp_r[0] - 2.0)
    else:
        m_conj = m_bc - (t_b - t_a)
        _, v_r, vp_r, vpp_r = _shoot_outer(n, k, curv, t_b, t0, m_conj, step)
        w_l, wp_l, wpp_l = _reflect_left(v_r, vp_r, vpp_r, h)
        left_slope = float(-vp_r[0] - 2.0)
        gap = float(w_r[0] - v_r[0])
    w = np.concatenate([w_l, w_r])
    wp = np.concatenate([wp_l, wp_r])
    wpp = np.concatenate([wpp_l, wpp_r])

    kink_t = _kink_location(t_mesh, w, h)
    slopes = (left_slope, float(wp_r[0]))
    mirror = w[::-1] - 2.0 * (t_mesh - t0)
    asym = float(np.abs(mirror - w).max())
    return RadialProfile(t_mesh, w, wp, wpp, kink_t, n, k, float(a), float(b),
                         curv, m_bc, slope, slopes, asym, gap, bool(symmetrize))
