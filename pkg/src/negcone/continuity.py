"""March the trace-modified equation along a tau ladder to a Lipschitz limit.

The modification replaces the curvature contraction by a tau-weighted one;
at tau = 0 the operator carries a full Laplacian shift and Newton converges
from a crude barrier, while at tau -> 1 the shift vanishes and the solutions
develop the kink the limit keeps.  Two problem shapes share the driver: an
annulus reduced to one dimension in t = ln r, and a full chart with Dirichlet
data.  The same ladder runs the quotient-type operator built from
sigma_k / sigma_{k-1} (cone index dropping to k-1) via ``krylov_f``.

Solutions are carried rung to rung by damped Newton with warm starts.  Each
accepted iterate stays strictly inside the relevant cone; sup-norm and
Lipschitz monitors abort the path with a diagnostic when the family stops
looking uniformly bounded.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
import scipy.interpolate as sinterp
import scipy.linalg as sla
import scipy.sparse as sp

from . import cones, geometry, linsolve, symfun, viscosity
from .errors import ConeExitError, DomainError, PathError
from .geometry import (MetricChart, grad_field, hess_field, interior_slice,
                       tau_trace_shift)
from .localsolver import _char_data, _cone_ok, _conjugate, _f_grad_matrix, \
    _f_value

DEFAULT_TAUS = (0.0, 0.5, 0.9, 0.99, 0.999)
NEWTON_MAX = 60
DAMP_MAX = 20          # halvings before a step counts as stagnation
BLOWUP_FACTOR = 50.0   # monitor growth over the first rung that aborts
MESH_RATIO = 1.15
MESH_CAP = 2e-3


def _as_field(value, x):
    """Evaluate a constant-or-callable data field at x."""
    if callable(value):
        out = np.asarray(value(x), float)
    else:
        out = np.asarray(value, float)
    return out


# ------------------------------------------------------------- data types

@dataclass(frozen=True)
class KrylovData:
    """Coefficients of the quotient-type operator.

    alpha is the forcing weight on e^{2w}; alphas lists the k-1 weights
    alpha_0 .. alpha_{k-2} of the lower quotients, each strictly positive
    wherever it is evaluated.  Entries may be constants or callables of
    position (the radial route passes the radius).
    """

    alpha: Union[float, Callable]
    alphas: tuple
    k: int

    def __post_init__(self):
        if self.k < 2:
            raise DomainError("the quotient operator needs k >= 2")
        object.__setattr__(self, "alphas", tuple(self.alphas))
        if len(self.alphas) != self.k - 1:
            raise DomainError(
                f"need k-1={self.k - 1} lower weights, got {len(self.alphas)}")
        for l, al in enumerate(self.alphas):
            if not callable(al) and not np.all(np.asarray(al, float) > 0.0):
                raise DomainError(f"weight {l} must be positive")

    def alpha_at(self, x):
        return _as_field(self.alpha, x)

    def lower_weights_at(self, x):
        """The alpha_l stack evaluated at x, positivity checked."""
        lows = []
        for l, al in enumerate(self.alphas):
            v = _as_field(al, x)
            if not np.all(v > 0.0):
                raise DomainError(f"weight {l} must be positive at every node")
            lows.append(v)
        return lows


@dataclass(frozen=True)
class RadialProblem:
    """Two-point problem on ln a < t < ln b with equal Dirichlet walls.

    boundary_value is the large finite wall height standing in for boundary
    blow-up.  mesh is the 1D grid in t = ln r; omit it to get the default
    grading, geometric from each wall (the walls carry layers of slope about
    e^{boundary_value}, so the spacing there must resolve 1/slope).
    """

    n: int
    k: int
    a: float
    b: float
    boundary_value: float
    mesh: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.n < 3:
            raise DomainError("radial reduction needs n >= 3")
        if not 1 <= self.k <= self.n:
            raise DomainError(f"k={self.k} out of range for n={self.n}")
        if not 0.0 < self.a < self.b:
            raise DomainError("annulus needs 0 < a < b")
        mesh = self.mesh
        if mesh is None:
            mesh = graded_mesh(self.a, self.b, self.boundary_value)
        mesh = np.asarray(mesh, float)
        if mesh.ndim != 1 or len(mesh) < 5:
            raise DomainError("mesh must be a 1D grid with at least 5 nodes")
        if np.any(np.diff(mesh) <= 0):
            raise DomainError("mesh must be strictly increasing")
        ends = (math.log(self.a), math.log(self.b))
        if abs(mesh[0] - ends[0]) > 1e-9 or abs(mesh[-1] - ends[1]) > 1e-9:
            raise DomainError("mesh must span exactly [ln a, ln b]")
        object.__setattr__(self, "mesh", mesh)

    @property
    def singular_ready(self):
        """Whether the cone index admits a singular-limit experiment."""
        return 2 * self.k > self.n


@dataclass(frozen=True)
class TauPath:
    """Record of one completed ladder.

    solutions[i] solves the rung taus[i] to the driver tolerance; the
    c0/c1 monitors are per-rung sup-norm and Lipschitz estimates.  kind is
    "radial" or "grid"; exactly one of mesh and chart is set.
    """

    taus: tuple
    solutions: tuple
    c0_bounds: tuple
    c1_bounds: tuple
    kind: str
    operator: str
    residual_sups: tuple
    newton_iters: tuple
    problem: Optional[RadialProblem] = None
    chart: Optional[MetricChart] = None
    mesh: Optional[np.ndarray] = None
    curvature: object = field(default=None, repr=False)
    krylov: Optional[KrylovData] = None
    cone_index: Optional[int] = None

    def __post_init__(self):
        taus = tuple(float(t) for t in self.taus)
        if any(b <= a for a, b in zip(taus, taus[1:])):
            raise DomainError("taus must be strictly increasing")
        if not all(0.0 <= t < 1.0 for t in taus):
            raise DomainError("taus must lie in [0, 1)")
        lengths = {len(self.solutions), len(self.c0_bounds),
                   len(self.c1_bounds), len(taus)}
        if lengths != {len(taus)}:
            raise DomainError("per-rung records must align with taus")
        object.__setattr__(self, "taus", taus)
        object.__setattr__(self, "solutions",
                           tuple(np.asarray(s, float) for s in self.solutions))
        object.__setattr__(self, "c0_bounds",
                           tuple(float(v) for v in self.c0_bounds))
        object.__setattr__(self, "c1_bounds",
                           tuple(float(v) for v in self.c1_bounds))

    def tail_deltas(self):
        """sup |w_{i+1} - w_i| for consecutive rungs."""
        return tuple(float(np.abs(b - a).max())
                     for a, b in zip(self.solutions, self.solutions[1:]))

    @property
    def singular_ready(self):
        """Whether a jet-decay mask may be read as a genuine singular set.

        The license is a cone index strictly above n/2; the quotient
        operator runs on the (k-1)-cone, so its index is k-1.
        """
        if self.cone_index is None:
            return None
        n = self.problem.n if self.problem is not None else self.chart.n
        return 2 * self.cone_index > n

    def to_json(self):
        out = {
            "kind": self.kind,
            "operator": self.operator,
            "taus": list(self.taus),
            "c0_bounds": list(self.c0_bounds),
            "c1_bounds": list(self.c1_bounds),
            "residual_sups": [float(v) for v in self.residual_sups],
            "newton_iters": [int(v) for v in self.newton_iters],
            "tail_deltas": list(self.tail_deltas()),
            "singular_ready": self.singular_ready,
        }
        if self.kind == "radial":
            out["kink_radius"] = kink_radius(self)
            out["kink_slopes"] = list(kink_slopes(self))
        return out


# ---------------------------------------------------------------- meshes

def graded_mesh(a, b, boundary_value, cap=MESH_CAP, ratio=MESH_RATIO):
    """Symmetric t-grid on [ln a, ln b], geometrically refined at both walls.

    The first spacing resolves the wall layer (width about
    e^{-boundary_value} / b in t) and grows by ``ratio`` until ``cap``; the
    middle is uniform.  Spacings are rescaled by a common factor so the
    half meshes meet the midpoint exactly.
    """
    if not 0.0 < a < b:
        raise DomainError("annulus needs 0 < a < b")
    if not (0 < cap and 1 < ratio):
        raise DomainError("need cap > 0 and ratio > 1")
    t_a, t_b = math.log(a), math.log(b)
    half = 0.5 * (t_b - t_a)
    h0 = min(cap, max(math.exp(-boundary_value) / (8.0 * max(b, 1.0)), 1e-9))
    steps = []
    acc, h = 0.0, h0
    while acc < half:
        steps.append(h)
        acc += h
        h = min(h * ratio, cap)
    steps = np.array(steps) * (half / acc)
    t_half = t_a + np.concatenate([[0.0], np.cumsum(steps)])
    t_half[-1] = t_a + half
    left = t_half
    right = (t_a + t_b) - t_half[-2::-1]
    mesh = np.concatenate([left, right])
    mesh[-1] = t_b
    return mesh


def _stencil_weights(t):
    """Nonuniform 3-point first/second derivative weights at interior nodes.

    Returns (d1, d2), each (N-2, 3) with columns for w_{i-1}, w_i, w_{i+1}.
    """
    hl = np.diff(t)[:-1]
    hr = np.diff(t)[1:]
    d1 = np.stack([-hr / (hl * (hl + hr)),
                   (hr - hl) / (hl * hr),
                   hl / (hr * (hl + hr))], axis=1)
    d2 = np.stack([2.0 / (hl * (hl + hr)),
                   -2.0 / (hl * hr),
                   2.0 / (hr * (hl + hr))], axis=1)
    return d1, d2


def _apply_stencil(weights, w):
    return (weights[:, 0] * w[:-2] + weights[:, 1] * w[1:-1]
            + weights[:, 2] * w[2:])


# --------------------------------------------------- quotient-type operator

def krylov_f(lam, z, x, data: KrylovData):
    """Quotient operator sigma_k/sigma_{k-1} minus the weighted lower quotients.

    lam holds spectra along the last axis, z the conformal exponent, x the
    position handed to callable weights.  Not homogeneous in lam: the
    subtrahends carry explicit e^{2(k-l)z} factors, so rescaling lam does not
    rescale the value.  Raises a domain error when sigma_{k-1} is not
    positive, which is where the quotients lose meaning.
    """
    lam = symfun._as_lambda_array(lam)
    k = data.k
    if lam.shape[-1] < k:
        raise DomainError(f"spectrum has fewer than k={k} entries")
    sig = symfun.sigma_all_batch(lam)
    sk1 = sig[..., k - 1]
    if np.any(sk1 <= 0.0):
        raise DomainError("sigma_{k-1} must be positive for the quotient")
    z = np.asarray(z, float)
    lows = data.lower_weights_at(x)
    val = sig[..., k] / sk1
    for l, al in enumerate(lows):
        val = val - al * np.exp(2.0 * (k - l) * z) * sig[..., l] / sk1
    if val.ndim == 0:
        return float(val)
    return val


def krylov_grad(lam, z, x, data: KrylovData):
    """Derivatives of ``krylov_f``: (d/dlam with shape (..., n), d/dz)."""
    lam = symfun._as_lambda_array(lam)
    k = data.k
    n = lam.shape[-1]
    sig = symfun.sigma_all_batch(lam)
    sk1 = sig[..., k - 1]
    if np.any(sk1 <= 0.0):
        raise DomainError("sigma_{k-1} must be positive for the quotient")
    z = np.asarray(z, float)
    lows = data.lower_weights_at(x)
    gk1 = symfun.grad_sigma_batch(lam, k - 1)
    inv = 1.0 / sk1
    # quotient rule against the shared denominator sigma_{k-1}
    gk = symfun.grad_sigma_batch(lam, k)
    dlam = (gk - (sig[..., k] * inv)[..., None] * gk1) * inv[..., None]
    dz = np.zeros(np.broadcast_shapes(lam.shape[:-1], z.shape))
    for l, al in enumerate(lows):
        fac = al * np.exp(2.0 * (k - l) * z)
        if l == 0:
            gl = np.zeros_like(lam)
        else:
            gl = symfun.grad_sigma_batch(lam, l)
        quot = (gl - (sig[..., l] * inv)[..., None] * gk1) * inv[..., None]
        dlam = dlam - fac[..., None] * quot
        dz = dz - 2.0 * (k - l) * fac * sig[..., l] * inv
    return dlam, dz


# ------------------------------------------------------- radial reduction

class RadialOperator:
    """Discretized radial operator at one tau on a fixed t-mesh.

    The conformal spectrum splits into one radial eigenvalue and n-1 equal
    tangential ones; both are polynomial in dw/dt and d2w/dt2 with
    tau-dependent coefficients, divided by r^2.  ``spectra`` returns the
    r^2-scaled numerators (the cone is invariant under the positive factor).
    Residual and Jacobian cover interior nodes; the walls are Dirichlet.
    """

    def __init__(self, problem: RadialProblem, tau, curvature=1.0,
                 operator="sigma_k", krylov: Optional[KrylovData] = None):
        if not 0.0 <= tau <= 1.0:
            raise DomainError("tau must lie in [0, 1]")
        if operator not in ("sigma_k", "krylov"):
            raise DomainError(f"unknown operator id {operator!r}")
        if operator == "krylov":
            if krylov is None:
                raise DomainError("krylov operator needs KrylovData")
            if krylov.k != problem.k:
                raise DomainError("KrylovData k must match the problem")
        self.problem = problem
        self.tau = float(tau)
        self.operator = operator
        self.krylov = krylov
        self.mesh = problem.mesh
        self.n = problem.n
        self.k = problem.k
        self.t = self.mesh[1:-1]
        self.radii = np.exp(self.t)
        self.d1, self.d2 = _stencil_weights(self.mesh)
        rfull = np.exp(self.mesh)
        self.curvature = _as_field(curvature, rfull) * np.ones(len(rfull))
        if np.any(self.curvature <= 0.0):
            raise DomainError("curvature must be positive")
        nm2 = self.n - 2
        self.c_rad2 = 1.0 + (1.0 - self.tau) / nm2
        self.c_tan2 = (1.0 - self.tau) / nm2
        # cone index the line search protects: k for sigma_k, k-1 for the
        # quotient operator
        self.cone_k = self.k if operator == "sigma_k" else self.k - 1

    def derivatives(self, w):
        w = np.asarray(w, float)
        if w.shape != self.mesh.shape:
            raise DomainError("profile shape must match the mesh")
        return _apply_stencil(self.d1, w), _apply_stencil(self.d2, w)

    def spectra(self, w):
        """r^2-scaled eigenvalue numerators, shape (N-2, n)."""
        wd, wdd = self.derivatives(w)
        tau = self.tau
        m_rad = self.c_rad2 * wdd - tau * wd - 0.5 * tau * wd * wd
        m_tan = (self.c_tan2 * wdd + (2.0 - tau) * wd
                 + 0.5 * (2.0 - tau) * wd * wd)
        lam = np.empty((len(wd), self.n))
        lam[:, 0] = m_rad
        lam[:, 1:] = m_tan[:, None]
        return lam

    def cone_ok(self, w):
        return cones.in_gamma_k_batch(self.spectra(w), self.cone_k)

    def residual(self, w):
        """Interior residual of the k-th-root form of the equation.

        For sigma_k the value is sgn(sigma_k)|sigma_k|^{1/k}(lam) - R^{1/k}
        e^{2w} with lam the true spectrum; the sign-preserving root keeps
        cone-boundary profiles (a constant, say) finite.  For the quotient
        operator the value is f + alpha e^{2w}.
        """
        w = np.asarray(w, float)
        lam = self.spectra(w)
        wi = w[1:-1]
        if self.operator == "sigma_k":
            sk = symfun.sigma_batch(lam, self.k)
            root = np.sign(sk) * np.abs(sk) ** (1.0 / self.k)
            rpow = self.curvature[1:-1] ** (1.0 / self.k)
            return root * np.exp(-2.0 * self.t) - rpow * np.exp(2.0 * wi)
        lam_true = lam * np.exp(-2.0 * self.t)[:, None]
        alpha = self.krylov.alpha_at(self.radii)
        fval = krylov_f(lam_true, wi, self.radii, self.krylov)
        return fval + alpha * np.exp(2.0 * wi)

    def jacobian(self, w):
        """Sparse tridiagonal derivative of ``residual`` in the interior
        unknowns (walls pinned)."""
        rows = self._rows(w, scaled=False)
        return _tridiag_sparse(rows)

    # driver internals: the scaled system divides out the forcing so the
    # convergence test is meaningful at wall heights where e^{2w} overflows
    # the absolute tolerance

    def scaled_residual(self, w):
        w = np.asarray(w, float)
        lam = self.spectra(w)
        wi = w[1:-1]
        if self.operator == "sigma_k":
            sk = symfun.sigma_batch(lam, self.k)
            if np.any(sk <= 0.0):
                raise ConeExitError("sigma_k not positive at a mesh node")
            # log form: (1/k) log sigma_k - log forcing; equals the relative
            # residual of the root form to first order
            return ((np.log(sk) - np.log(self.curvature[1:-1])) / self.k
                    - 2.0 * (wi + self.t))
        res = self.residual(w)
        alpha = self.krylov.alpha_at(self.radii)
        return res / (1.0 + alpha * np.exp(2.0 * wi))

    def _rows(self, w, scaled=True):
        """Tridiagonal rows (sub, diag, super) of the (scaled) residual."""
        w = np.asarray(w, float)
        wd, _ = self.derivatives(w)
        lam = self.spectra(w)
        wi = w[1:-1]
        tau = self.tau
        dm_rad_dd = self.c_rad2
        dm_rad_d = -tau * (1.0 + wd)
        dm_tan_dd = self.c_tan2
        dm_tan_d = (2.0 - tau) * (1.0 + wd)
        if self.operator == "sigma_k":
            sk = symfun.sigma_batch(lam, self.k)
            g = symfun.grad_sigma_batch(lam, self.k)
            g_rad = g[:, 0]
            g_tan = g[:, 1:].sum(axis=1)
            if scaled:
                pref = 1.0 / (self.k * sk)
                extra = -2.0
            else:
                rt = np.abs(sk) ** (1.0 / self.k - 1.0) / self.k
                pref = rt * np.exp(-2.0 * self.t)
                rpow = self.curvature[1:-1] ** (1.0 / self.k)
                extra = -2.0 * rpow * np.exp(2.0 * wi)
        else:
            lam_true = lam * np.exp(-2.0 * self.t)[:, None]
            dlam, dz = krylov_grad(lam_true, wi, self.radii, self.krylov)
            alpha = self.krylov.alpha_at(self.radii)
            dlam = dlam * np.exp(-2.0 * self.t)[:, None]
            g_rad = dlam[:, 0]
            g_tan = dlam[:, 1:].sum(axis=1)
            pref = 1.0
            extra = dz + 2.0 * alpha * np.exp(2.0 * wi)
            if scaled:
                scale = 1.0 / (1.0 + alpha * np.exp(2.0 * wi))
                pref = scale
                extra = extra * scale
        coef_dd = pref * (g_rad * dm_rad_dd + g_tan * dm_tan_dd)
        coef_d = pref * (g_rad * dm_rad_d + g_tan * dm_tan_d)
        sub = coef_dd * self.d2[:, 0] + coef_d * self.d1[:, 0]
        diag = coef_dd * self.d2[:, 1] + coef_d * self.d1[:, 1] + extra
        sup = coef_dd * self.d2[:, 2] + coef_d * self.d1[:, 2]
        return sub, diag, sup


def _tridiag_sparse(rows):
    sub, diag, sup = rows
    m = len(diag)
    return sp.diags([sub[1:], diag, sup[:-1]], offsets=(-1, 0, 1),
                    format="csr")


def radial_reduce(problem: RadialProblem, tau, *, curvature=1.0,
                  operator="sigma_k",
                  krylov: Optional[KrylovData] = None) -> RadialOperator:
    """Reduce the annulus problem to its one-dimensional operator at tau."""
    return RadialOperator(problem, tau, curvature=curvature,
                          operator=operator, krylov=krylov)


def barrier_profile(problem: RadialProblem, wall=None):
    """Concave-down parabola meeting the walls, strictly cone-admissible at
    small tau.  Steep enough that the gradient terms dominate at the walls."""
    t = problem.mesh
    t_a, t_b = t[0], t[-1]
    m = problem.boundary_value if wall is None else float(wall)
    s = 4.0 * max(m, 1.0) / (t_b - t_a) ** 2
    return m - s * (t - t_a) * (t_b - t)


def _radial_newton(op: RadialOperator, w0, tol, tau_label):
    """Damped Newton on the scaled residual with a cone line search."""
    w = np.asarray(w0, float).copy()
    if not op.cone_ok(w).all():
        raise PathError(f"seed leaves the cone at tau={tau_label:g}",
                        last_tau=None)
    res = op.scaled_residual(w)
    sup = float(np.abs(res).max())
    for it in range(1, NEWTON_MAX + 1):
        if sup <= tol:
            return w, it - 1, sup
        rows = op._rows(w, scaled=True)
        ab = np.zeros((3, len(res)))
        ab[0, 1:] = rows[2][:-1]
        ab[1, :] = rows[1]
        ab[2, :-1] = rows[0][1:]
        try:
            step = sla.solve_banded((1, 1), ab, -res)
        except np.linalg.LinAlgError as exc:
            raise PathError(f"singular Newton system at tau={tau_label:g}: "
                            f"{exc}", last_tau=None)
        alpha = 1.0
        for _ in range(DAMP_MAX):
            cand = w.copy()
            cand[1:-1] += alpha * step
            if op.cone_ok(cand).all():
                cres = op.scaled_residual(cand)
                csup = float(np.abs(cres).max())
                if csup < sup:
                    w, res, sup = cand, cres, csup
                    break
            alpha *= 0.5
        else:
            raise PathError(
                f"Newton stagnated at tau={tau_label:g} "
                f"(scaled residual {sup:.3e})", last_tau=None)
    raise PathError(f"Newton exceeded {NEWTON_MAX} iterations at "
                    f"tau={tau_label:g} (scaled residual {sup:.3e})",
                    last_tau=None)


# --------------------------------------------------------------- the path

def solve_tau_path(problem, taus=DEFAULT_TAUS, newton_tol=1e-9, *,
                   curvature=None, operator="sigma_k",
                   krylov: Optional[KrylovData] = None, bc=None,
                   seed=None, k=None) -> TauPath:
    """Solve the modified equation on an increasing tau ladder.

    problem is a RadialProblem or a (chart, curvature) pair; the pair needs
    Dirichlet data in ``bc`` (full-grid array or callable of points) and
    takes its cone index from ``k`` (default: the dimension, the slab
    benchmark being k = n).  The first rung starts from a barrier profile
    (or ``seed``); later rungs warm start from the previous solution.
    Newton convergence is measured on the residual scaled by the local
    forcing, which agrees with the absolute residual whenever the data is
    moderate; wall heights near e^{2w} overflow make an absolute test
    meaningless in double precision.

    Raises PathError carrying the last completed tau when a rung stagnates
    or the C0/C1 monitors grow past BLOWUP_FACTOR times their first-rung
    values.
    """
    taus = tuple(float(t) for t in taus)
    if len(taus) == 0:
        raise DomainError("need at least one tau")
    if any(b <= a for a, b in zip(taus, taus[1:])):
        raise DomainError("taus must be strictly increasing")
    if not all(0.0 <= t < 1.0 for t in taus):
        raise DomainError("taus must lie in [0, 1)")
    if operator == "krylov" and krylov is None:
        raise DomainError("krylov operator needs KrylovData")
    if isinstance(problem, RadialProblem):
        if curvature is None:
            curvature = 1.0
        return _solve_radial_path(problem, taus, newton_tol, curvature,
                                  operator, krylov, seed)
    try:
        chart, curv = problem
    except (TypeError, ValueError):
        raise DomainError("problem must be a RadialProblem or (chart, R)")
    if not isinstance(chart, MetricChart):
        raise DomainError("grid problems start from a MetricChart")
    if operator != "sigma_k":
        raise DomainError("the grid route runs sigma_k only; the quotient "
                          "operator is wired to the radial route")
    if bc is None:
        raise DomainError("grid problems need Dirichlet data in bc")
    kk = chart.n if k is None else int(k)
    if not 1 <= kk <= chart.n:
        raise DomainError(f"k={kk} out of range for n={chart.n}")
    return _solve_grid_path(chart, curv, taus, newton_tol, bc, seed, kk)


def _monitor_guard(c0s, c1s, tau):
    if len(c0s) < 2:
        return
    if (c0s[-1] > BLOWUP_FACTOR * (1.0 + c0s[0])
            or c1s[-1] > BLOWUP_FACTOR * (1.0 + c1s[0])):
        raise PathError(
            f"uniform-bound monitor blew up at tau={tau:g}: "
            f"c0={c0s[-1]:.3e} c1={c1s[-1]:.3e} versus first rung "
            f"c0={c0s[0]:.3e} c1={c1s[0]:.3e}", last_tau=tau)


def _solve_radial_path(problem, taus, tol, curvature, operator, krylov, seed):
    mesh = problem.mesh
    m_bc = float(problem.boundary_value)

    def newton_at(tau, w0, label, solve_tol=tol):
        op = RadialOperator(problem, tau, curvature=curvature,
                            operator=operator, krylov=krylov)
        return op, _radial_newton(op, w0, solve_tol, label)

    if seed is not None:
        w = np.asarray(seed, float).copy()
        if w.shape != mesh.shape:
            raise DomainError("seed shape must match the mesh")
        w[0] = w[-1] = m_bc
    else:
        # walk the wall height up geometrically: the barrier converges
        # readily at modest walls, and each solved profile seeds the next.
        # Every rung is meshed for its own boundary layer; on the final
        # mesh a low wall is so over-resolved that second-difference
        # roundoff swamps a smooth seed's curvature.  Rungs also run at a
        # relaxed tolerance, the tau loop polishes at full tolerance.
        heights = [m_bc]
        while heights[0] > 3.0:
            heights.insert(0, heights[0] / 1.75)
        w = prev_mesh = None
        for height in heights:
            if height == m_bc:
                prob_h, mesh_h = problem, mesh
            else:
                prob_h = RadialProblem(problem.n, problem.k, problem.a,
                                       problem.b, height)
                mesh_h = prob_h.mesh
            if w is None:
                w = barrier_profile(prob_h)
            else:
                w = sinterp.CubicSpline(prev_mesh, w)(mesh_h)
            w[0] = w[-1] = height
            op_h = RadialOperator(prob_h, taus[0], curvature=curvature,
                                  operator=operator, krylov=krylov)
            try:
                w, _, _ = _radial_newton(op_h, w, max(tol, 1e-7), taus[0])
            except PathError as exc:
                raise PathError(
                    f"first-rung seeding failed at wall height {height:g}: "
                    f"{exc}", last_tau=None)
            prev_mesh = mesh_h

    def advance(w0, tau_from, tau_to, depth=6):
        # Large tau steps can push the warm start out of the cone near the
        # forming kink.  Insert geometric midpoints in 1 - tau, bounded in
        # depth; only the requested rungs are recorded.
        try:
            return newton_at(tau_to, w0, tau_to)
        except PathError:
            mid = 1.0 - math.sqrt((1.0 - tau_from) * (1.0 - tau_to))
            if depth == 0 or not tau_from < mid < tau_to:
                raise
            _, (w_mid, _, _) = advance(w0, tau_from, mid, depth - 1)
            return advance(w_mid, mid, tau_to, depth - 1)

    sols, c0s, c1s, sups, iters = [], [], [], [], []
    done = None
    prev = taus[0]
    for tau in taus:
        try:
            op, (w, it, sup) = advance(w, prev, tau)
        except PathError as exc:
            raise PathError(f"{exc}", last_tau=done)
        sols.append(w.copy())
        c0s.append(float(np.abs(w).max()))
        c1s.append(float(np.abs(np.gradient(w, mesh)).max()))
        sups.append(sup)
        iters.append(it)
        _monitor_guard(c0s, c1s, tau)
        done = tau
        prev = tau
    cone_index = problem.k if operator == "sigma_k" else krylov.k - 1
    return TauPath(taus=taus, solutions=tuple(sols), c0_bounds=tuple(c0s),
                   c1_bounds=tuple(c1s), kind="radial", operator=operator,
                   residual_sups=tuple(sups), newton_iters=tuple(iters),
                   problem=problem, mesh=mesh, curvature=curvature,
                   krylov=krylov, cone_index=cone_index)


# ----------------------------------------------------------- grid route

def _grid_bc_field(chart, bc):
    if callable(bc):
        vals = np.asarray(bc(chart.coords()), float)
    else:
        vals = np.asarray(bc, float)
    if vals.shape != chart.dims:
        raise DomainError("bc must give a value at every grid node")
    return vals


class _GridOperator:
    """Assembly of the trace-modified operator on a chart at one tau."""

    def __init__(self, chart, curvature, tau, k):
        self.chart = chart
        self.tau = float(tau)
        self.k = k
        self.lot = geometry.assemble_L(chart)
        r_field = _as_field(curvature, chart.coords()) * np.ones(chart.dims)
        if np.any(r_field <= 0.0):
            raise DomainError("curvature must be positive")
        self.rpow = r_field ** (1.0 / k)
        self.inter = interior_slice(chart.dims, 1)

    def matrix_field(self, w):
        dw = grad_field(w, self.chart.spacing)
        inner = hess_field(w, self.chart.spacing) + self.lot.full(dw)
        mf = _conjugate(self.chart, inner)
        if self.tau != 1.0:
            mf = tau_trace_shift(mf, self.tau, self.chart.n)
        return mf, dw

    def residual(self, w):
        """(ok, residual field, scaled sup); rim entries are zero."""
        mf, _ = self.matrix_field(w)
        e, _ = _char_data(mf, self.k)
        ok = _cone_ok([ej[self.inter] for ej in e], self.k)
        if not ok.all():
            return False, None, math.inf
        res = np.zeros(self.chart.dims)
        fval = _f_value(e, self.k)[self.inter]
        res[self.inter] = (fval - self.rpow[self.inter]
                           * np.exp(2.0 * w[self.inter]))
        sup = float(np.abs(res[self.inter]).max())
        return True, res, sup

    def linear_problem(self, w, res):
        mf, dw = self.matrix_field(w)
        e, pows = _char_data(mf, self.k)
        g = _f_grad_matrix(mf, e, pows, self.k)
        if self.tau != 1.0:
            shift = ((1.0 - self.tau) / (self.chart.n - 2)
                     * np.trace(g, axis1=-2, axis2=-1))
            g = g + shift[..., None, None] * np.broadcast_to(
                np.eye(self.chart.n), g.shape)
        a = _conjugate(self.chart, g)
        b = np.einsum("...ij,...ijs->...s", a, self.lot.dp(dw))
        c = -2.0 * self.rpow * np.exp(2.0 * w)
        return linsolve.LinearProblem(
            spacing=self.chart.spacing, origin=self.chart.origin, a=a,
            f=-res, b=b, c=c, bc=0.0)


def _grid_seed(op: _GridOperator, bc_field):
    """The data itself when admissible, else pushed into the cone by a
    growing interior quadratic bump (walls untouched)."""
    w = bc_field.copy()
    ok, _, _ = op.residual(w)
    if ok:
        return w
    chart = op.chart
    coords = chart.coords()
    center = coords.reshape(-1, chart.n).mean(axis=0)
    quad = ((coords - center) ** 2).sum(axis=-1)
    quad = quad.max() - quad          # concave bump vanishing near corners
    mu = 1.0
    for _ in range(40):
        cand = bc_field.copy()
        cand[op.inter] = (bc_field + mu * quad)[op.inter]
        ok, _, _ = op.residual(cand)
        if ok:
            return cand
        mu *= 2.0
    raise PathError("could not build an admissible grid seed", last_tau=None)


def _grid_newton(op: _GridOperator, w0, tol, tau_label):
    w = w0.copy()
    ok, res, sup = op.residual(w)
    if not ok:
        raise PathError(f"seed leaves the cone at tau={tau_label:g}",
                        last_tau=None)
    for it in range(1, NEWTON_MAX + 1):
        if sup <= tol:
            return w, it - 1, sup
        step = linsolve.solve(op.linear_problem(w, res))
        alpha = 1.0
        for _ in range(DAMP_MAX):
            cand = w + alpha * step
            cok, cres, csup = op.residual(cand)
            if cok and csup < sup:
                w, res, sup = cand, cres, csup
                break
            alpha *= 0.5
        else:
            raise PathError(f"Newton stagnated at tau={tau_label:g} "
                            f"(residual {sup:.3e})", last_tau=None)
    raise PathError(f"Newton exceeded {NEWTON_MAX} iterations at "
                    f"tau={tau_label:g} (residual {sup:.3e})", last_tau=None)


def _solve_grid_path(chart, curvature, taus, tol, bc, seed, k):
    if chart.mask is not None:
        raise DomainError("the grid route needs an unmasked box chart")
    bc_field = _grid_bc_field(chart, bc)
    sols, c0s, c1s, sups, iters = [], [], [], [], []
    if seed is not None:
        w = np.asarray(seed, float).copy()
        if w.shape != chart.dims:
            raise DomainError("seed shape must match the chart")
    else:
        w = None
    def advance(w0, tau_from, tau_to, depth=6):
        # same sub-stepping as the radial route: a long tau step can push
        # the warm start out of the cone, so bisect geometrically in 1 - tau.
        op = _GridOperator(chart, curvature, tau_to, k)
        try:
            return _grid_newton(op, w0, tol, tau_to)
        except PathError:
            mid = 1.0 - math.sqrt((1.0 - tau_from) * (1.0 - tau_to))
            if depth == 0 or not tau_from < mid < tau_to:
                raise
            w_mid, _, _ = advance(w0, tau_from, mid, depth - 1)
            return advance(w_mid, mid, tau_to, depth - 1)

    done = None
    prev = taus[0]
    for tau in taus:
        if w is None:
            w = _grid_seed(_GridOperator(chart, curvature, tau, k), bc_field)
        try:
            w, it, sup = advance(w, prev, tau)
        except PathError as exc:
            raise PathError(f"{exc}", last_tau=done)
        sols.append(w.copy())
        c0s.append(float(np.abs(w).max()))
        c1s.append(_grid_lipschitz(w, chart))
        sups.append(sup)
        iters.append(it)
        _monitor_guard(c0s, c1s, tau)
        done = tau
        prev = tau
    return TauPath(taus=taus, solutions=tuple(sols), c0_bounds=tuple(c0s),
                   c1_bounds=tuple(c1s), kind="grid", operator="sigma_k",
                   residual_sups=tuple(sups), newton_iters=tuple(iters),
                   chart=chart, curvature=curvature, cone_index=k)


def _grid_lipschitz(w, chart):
    dw = grad_field(w, chart.spacing)
    inter = interior_slice(chart.dims, 1)
    return float(np.sqrt((dw[inter] ** 2).sum(axis=-1)).max())


# ------------------------------------------------------------ extraction

def kink_radius(path: TauPath):
    """Radius of the largest interior curvature spike of the final profile.

    Second-derivative magnitudes are compared over the middle half of the
    log-radius span only: the wall layers are steep but smooth, and their
    curvature would otherwise win the argmax.
    """
    if path.kind != "radial":
        raise DomainError("kink extraction needs a radial path")
    t = path.mesh
    w = path.solutions[-1]
    d1, d2 = _stencil_weights(t)
    curv = np.abs(_apply_stencil(d2, w))
    ti = t[1:-1]
    span = t[-1] - t[0]
    window = (ti > t[0] + 0.25 * span) & (ti < t[-1] - 0.25 * span)
    if not window.any():
        raise DomainError("mesh too coarse to window the kink search")
    idx = np.flatnonzero(window)[np.argmax(curv[window])]
    return float(math.exp(ti[idx]))


def kink_slopes(path: TauPath, offset=0.05):
    """One-sided secant slopes of the final profile across the kink,
    measured ``offset`` away in t to step over the smoothing width."""
    if path.kind != "radial":
        raise DomainError("kink extraction needs a radial path")
    t = path.mesh
    w = path.solutions[-1]
    tk = math.log(kink_radius(path))
    wk = float(np.interp(tk, t, w))
    left = float(np.interp(tk - offset, t, w))
    right = float(np.interp(tk + offset, t, w))
    return ((wk - left) / offset, (right - wk) / offset)


def extract_limit(path: TauPath, radii_ladder, *, lift_spacing=None,
                  lift_dim=2):
    """Final solution plus the singular mask of the jet-decay detector.

    Grid paths are scanned in place.  Radial paths are lifted onto a flat
    annulus chart (spacing ``lift_spacing``, default half the smallest ladder
    radius) first.  The lift is a plane section through the origin by default
    (``lift_dim=2``): the profile depends on the radius alone, so the section
    meets the singular sphere in a full circle while the detector's gather
    buffers stay linear in the node count, not (b/h)^n.  Returns (w, mask)
    with w the final rung's solution in its native shape.
    """
    radii_ladder = tuple(float(r) for r in radii_ladder)
    if len(radii_ladder) < 3:
        raise DomainError("detector ladder needs at least three radii")
    if path.taus[-1] < 0.999:
        raise DomainError("path must reach tau >= 0.999 before extraction")
    w = path.solutions[-1]
    if path.kind == "grid":
        mask = viscosity.detect_singular_set(w, path.chart, radii_ladder)
        return w, mask
    p = path.problem
    h = lift_spacing if lift_spacing is not None else min(radii_ladder) / 2.0
    dim = int(lift_dim)
    if not 2 <= dim <= p.n:
        raise DomainError(f"lift_dim must lie in [2, {p.n}]")
    chart = geometry.annulus_chart(dim, p.a, p.b, h)
    r = np.linalg.norm(chart.coords(), axis=-1)
    t = np.log(np.clip(r, math.exp(path.mesh[0]), math.exp(path.mesh[-1])))
    # C2 interpolation: a piecewise-linear lift plants a kink at every mesh
    # node and the jet detector flags the interpolation, not the solution.
    lifted = sinterp.CubicSpline(path.mesh, w)(t)
    mask = viscosity.detect_singular_set(lifted, chart, radii_ladder)
    return w, mask


# ----------------------------------------------- dual-cone positivity

def dualcone_positivity_functional(path: TauPath, B, phi):
    """Pairing of the final solution against a dual-cone direction.

    Discretizes the distributional pairing int w * B^{ij} (W d2phi W)_{ij}
    plus the (1-tau)/(n-2) Laplacian carry-over of the modification, and adds
    C * int phi with C bounding the metric-root derivative terms dropped when
    both derivatives land on phi.  Flat charts contribute C = 0 exactly, and
    there the value is the honest pass/fail quantity; for curved charts the
    value is reported with the sampled C.
    """
    if path.kind != "grid":
        raise DomainError("the positivity functional needs a grid path")
    chart = path.chart
    n = chart.n
    if isinstance(B, symfun.SymMatrix):
        bmat = B.entries
    else:
        bmat = np.asarray(B, float)
        if bmat.shape != (n, n):
            raise DomainError(f"B must be {n}x{n}")
        if np.abs(bmat - bmat.T).max() > 1e-12 * max(1.0, np.abs(bmat).max()):
            raise DomainError("B must be symmetric")
        bmat = 0.5 * (bmat + bmat.T)
    cert = cones.in_dual_gamma2(np.linalg.eigvalsh(bmat))
    if not cert.member:
        raise DomainError(
            f"B is outside the dual cone (margin {cert.margin:.3e})")
    if callable(phi):
        phi = np.asarray(phi(chart.coords()), float)
    else:
        phi = np.asarray(phi, float)
    if phi.shape != chart.dims:
        raise DomainError("phi must give a value at every grid node")
    scale = float(np.abs(phi).max())
    if np.any(phi < -1e-12 * max(scale, 1.0)):
        raise DomainError("phi must be nonnegative")
    rim = np.ones(chart.dims, bool)
    rim[interior_slice(chart.dims, 2)] = False
    if np.any(np.abs(phi[rim]) > 0.0):
        raise DomainError("phi must vanish on the two outermost node layers")

    w = path.solutions[-1]
    tau = path.taus[-1]
    c_tau = (1.0 - tau) / (n - 2)
    cell = float(np.prod(chart.spacing))
    hp = hess_field(phi, chart.spacing)
    lap = np.trace(hp, axis1=-2, axis2=-1)
    if chart.is_flat():
        core = np.einsum("ij,...ij->...", bmat, hp)
        corr = 0.0
    else:
        wf = chart.sqrt_ginv()
        core = np.einsum("ij,...is,...sl,...lj->...", bmat, wf, hp, wf)
        corr = _metric_root_bound(chart, bmat, w) * float(phi.sum()) * cell
    # the outermost layer carries one-sided stencil rows; they reach two
    # cells in, where phi no longer vanishes, and are not part of the
    # pairing over the open domain.  Dropping them makes the discrete
    # summation by parts exact for admissible phi.
    inner = interior_slice(chart.dims, 1)
    integrand = core + c_tau * np.trace(bmat) * lap
    value = float((w[inner] * integrand[inner]).sum() * cell)
    return value + corr


def _metric_root_bound(chart, bmat, w):
    """Sampled sup of the first and second order metric-root derivative
    terms the integration by parts drops, padded by 5 percent."""
    wf = chart.sqrt_ginv()
    if wf.ndim == 2:
        wf = np.broadcast_to(wf, chart.dims + wf.shape)
    n = chart.n
    dwf = np.stack([grad_field(wf[..., i, j], chart.spacing)
                    for i in range(n) for j in range(n)], axis=-1)
    dwf = dwf.reshape(chart.dims + (n, n, n))   # last index: derivative axis
    d2wf = np.stack([hess_field(wf[..., i, j], chart.spacing)
                     .reshape(chart.dims + (n * n,))
                     for i in range(n) for j in range(n)], axis=-2)
    d2wf = d2wf.reshape(chart.dims + (n, n, n, n))
    dw = grad_field(w, chart.spacing)
    # d_s(W_is W_lj) dl w + d_l(W_is W_lj) ds w + d_sl(W_is W_lj) w,
    # contracted against B_ij
    t1 = (np.einsum("ij,...iss,...lj,...l->...", bmat, dwf, wf, dw)
          + np.einsum("ij,...is,...ljs,...l->...", bmat, wf, dwf, dw))
    t2 = (np.einsum("ij,...isl,...lj,...s->...", bmat, dwf, wf, dw)
          + np.einsum("ij,...is,...ljl,...s->...", bmat, wf, dwf, dw))
    t3 = (np.einsum("ij,...issl,...lj->...", bmat, d2wf, wf)
          + np.einsum("ij,...iss,...ljl->...", bmat, dwf, dwf)
          + np.einsum("ij,...isl,...ljs->...", bmat, dwf, dwf)
          + np.einsum("ij,...is,...ljsl->...", bmat, wf, d2wf)) * w
    inter = interior_slice(chart.dims, 2)
    total = np.abs(t1 + t2 + t3)[inter]
    return 1.05 * float(total.max())


# ------------------------------------------------------- configuration

_CONFIG_DEFAULTS = {
    "n": 3, "k": 3, "domain": "annulus", "a": 1.0, "b": 4.0, "M_bc": 8.0,
    "tau_ladder": list(DEFAULT_TAUS), "mesh_cap": MESH_CAP,
    "mesh_ratio": MESH_RATIO, "grid_h": 0.05, "slab_lo": 0.75,
    "slab_hi": 1.25, "slab_width": 0.5, "operator": "sigma_k", "R": 1.0,
    "newton_tol": 1e-9, "alpha": 1.0, "alphas": None, "lift_spacing": 0.1,
    "radii": [0.2, 0.3, 0.4],
}
_CONFIG_WORDS = {"domain", "operator"}
_CONFIG_LISTS = {"tau_ladder", "alphas", "radii"}
_CONFIG_INTS = {"n", "k"}


def parse_config(text):
    """key = value lines into a validated experiment dict.

    Blank lines and # comments are skipped; lists are comma separated.
    Unknown keys and malformed numbers raise domain errors so config typos
    fail loudly instead of running the default.
    """
    cfg = {key: (list(val) if isinstance(val, list) else val)
           for key, val in _CONFIG_DEFAULTS.items()}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DomainError(f"config line {lineno}: expected key = value")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in _CONFIG_DEFAULTS:
            raise DomainError(f"config line {lineno}: unknown key {key!r}")
        try:
            if key in _CONFIG_WORDS:
                cfg[key] = val
            elif key in _CONFIG_LISTS:
                cfg[key] = [float(part) for part in val.split(",") if part.strip()]
            elif key in _CONFIG_INTS:
                cfg[key] = int(val)
            else:
                cfg[key] = float(val)
        except ValueError:
            raise DomainError(f"config line {lineno}: bad value {val!r}")
    if cfg["domain"] not in ("annulus", "slab"):
        raise DomainError(f"unknown domain {cfg['domain']!r}")
    if cfg["operator"] not in ("sigma_k", "krylov"):
        raise DomainError(f"unknown operator {cfg['operator']!r}")
    if cfg["domain"] == "slab" and cfg["operator"] == "krylov":
        raise DomainError("the quotient operator runs on the annulus")
    return cfg


def load_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def run_config(cfg):
    """Execute one experiment config; returns (path, summary dict)."""
    taus = tuple(cfg["tau_ladder"])
    if cfg["domain"] == "annulus":
        mesh = graded_mesh(cfg["a"], cfg["b"], cfg["M_bc"],
                           cap=cfg["mesh_cap"], ratio=cfg["mesh_ratio"])
        problem = RadialProblem(cfg["n"], cfg["k"], cfg["a"], cfg["b"],
                                cfg["M_bc"], mesh=mesh)
        krylov = None
        if cfg["operator"] == "krylov":
            alphas = cfg["alphas"]
            if alphas is None:
                alphas = [1.0] * (cfg["k"] - 1)
            krylov = KrylovData(cfg["alpha"], tuple(alphas), cfg["k"])
        path = solve_tau_path(problem, taus, cfg["newton_tol"],
                              curvature=cfg["R"], operator=cfg["operator"],
                              krylov=krylov)
        summary = path_summary(path)
        return path, summary
    from . import oracle
    chart = geometry.half_space_slab(cfg["n"], cfg["slab_lo"], cfg["slab_hi"],
                                     cfg["grid_h"], width=cfg["slab_width"])
    sol = oracle.hyperbolic_halfspace(cfg["n"], cfg["n"])
    bc = sol.w(chart.coords())
    path = solve_tau_path((chart, cfg["R"]), taus, cfg["newton_tol"], bc=bc)
    summary = path_summary(path)
    summary["oracle_sup_error"] = float(np.abs(path.solutions[-1] - bc).max())
    return path, summary


def path_summary(path: TauPath):
    """The JSON-ready summary: kink location, slopes, and the bounds."""
    out = {
        "taus": list(path.taus),
        "bounds": {"c0": list(path.c0_bounds), "c1": list(path.c1_bounds)},
        "tail_deltas": list(path.tail_deltas()),
        "residual_sups": [float(v) for v in path.residual_sups],
        "operator": path.operator,
        "singular_ready": path.singular_ready,
        "kink_radius": None,
        "slopes": None,
    }
    if path.kind == "radial":
        out["kink_radius"] = kink_radius(path)
        out["slopes"] = list(kink_slopes(path))
    return out


def save_profile_csv(path: TauPath, out):
    """Radial profiles as CSV: t, r, one w column per tau, final dw/dt."""
    if path.kind != "radial":
        raise DomainError("profile CSV needs a radial path")
    t = path.mesh
    cols = [t, np.exp(t)] + [w for w in path.solutions]
    cols.append(np.gradient(path.solutions[-1], t))
    header = ["t", "r"] + [f"w_tau{tau:g}" for tau in path.taus] + ["dw_dt"]
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("# " + ", ".join(header) + "\n")
        for row in zip(*cols):
            fh.write(",".join("%.17g" % v for v in row) + "\n")
