"""Window rescaling, frozen-linearization solves, and the jet-probe audit."""

import math

import numpy as np
import pytest

from negcone import localsolver as ls
from negcone import oracle
from negcone.cones import ConeSpec
from negcone.errors import (ConeExitError, DomainError, NonContractionError,
                            SolverError)
from negcone.geometry import box_chart, interior_slice
from negcone.viscosity import Paraboloid

CONE33 = ConeSpec(3, 3)
CONE32 = ConeSpec(3, 2)


def wavy_metric(pts):
    x, y, z = pts[..., 0], pts[..., 1], pts[..., 2]
    g = np.zeros(pts.shape[:-1] + (3, 3))
    bump = 1.0 + 0.05 * np.sin(x) * np.cos(y)
    for i in range(3):
        g[..., i, i] = bump
    g[..., 0, 2] = g[..., 2, 0] = 0.02 * np.sin(z)
    return g


def curved_parent(h=0.1):
    chart = box_chart(3, -1.0 - h, 1.0 + h, h, metric_fn=wavy_metric)
    pts = chart.coords()
    R = 1.0 + 0.1 * np.cos(pts[..., 0] + 0.5 * pts[..., 2])
    return chart, R


def zero_seed():
    return Paraboloid(np.zeros(3), 0.0, np.zeros(3), np.zeros((3, 3)))


def random_smooth(rng, waves=3, bump=0.01):
    """Strongly convex base plus a few low-frequency waves; admissible for
    k=2 on the unit box over the wavy metric."""
    kvecs = rng.normal(size=(waves, 3))
    phases = rng.uniform(0.0, 2.0 * math.pi, size=waves)

    def u(x):
        out = 0.2 * (x ** 2).sum(-1)
        for kv, ph in zip(kvecs, phases):
            out = out + bump * np.sin(x @ kv + ph)
        return out
    return u


def window_pair(chart, R, r=0.5):
    """Blowups of the same zero seed at scale r and at scale 1, plus the
    index slices where their windows sample identical parent nodes."""
    P0 = zero_seed()
    bp_r = ls.blowup(P0, chart, R, r)
    bp_1 = ls.blowup(P0, chart, R, 1.0)
    m_r = round(r / chart.spacing[0])
    m_1 = round(1.0 / chart.spacing[0])
    core_r = tuple(slice(2, 2 * m_r - 1) for _ in range(3))
    core_1 = tuple(slice(m_1 - m_r + 2, m_1 + m_r - 1) for _ in range(3))
    return bp_r, bp_1, core_r, core_1


def hyperbolic_seed(n=3, k=3, z0=1.5):
    sol = oracle.hyperbolic_halfspace(n, k)
    x0 = np.zeros(n)
    x0[-1] = z0
    grad = np.zeros(n)
    grad[-1] = -1.0 / z0
    hess = np.zeros((n, n))
    hess[-1, -1] = 1.0 / (z0 * z0)
    P = Paraboloid(x0, sol.normalization_shift - math.log(z0), grad, hess)
    return sol, x0, P


def window_chart(x0, r, nodes):
    h = r / nodes
    return box_chart(3, x0 - (r + h), x0 + (r + h), h)


def solve_window(r, nodes, tol=1e-9, max_iter=30):
    sol, x0, P = hyperbolic_seed()
    chart = window_chart(x0, r, nodes)
    bp = ls.blowup(P, chart, 1.0, r)
    w, trace = ls.contract_solve(P, chart, 1.0, r, tol, max_iter, cone=CONE33)
    y = bp.chart.coords()
    exact = (sol.normalization_shift - np.log(x0[-1] + r * y[..., -1])
             + math.log(r))
    return bp, w, trace, exact


@pytest.fixture(scope="module")
def hyper_default():
    # spec'd example resolution: r = 0.1, twelve cells per half-side
    return solve_window(0.1, 12)


@pytest.fixture(scope="module")
def hyper_tight():
    # residual pushed low enough that the e^{-2w}-weighted zero probe
    # clears 1e-8 despite the 1/r^2 amplification
    bp, w, trace, exact = solve_window(0.1, 12, tol=1e-11, max_iter=80)
    rep = ls.savin_check(w, bp, 0.05, cone=CONE33)
    return bp, w, rep


@pytest.fixture(scope="module")
def study_report():
    return ls.hyperbolic_scaling_study(3, 3, nodes=12)


class TestBlowup:
    def test_identity_scale_returns_originals(self):
        chart, R = curved_parent()
        P = Paraboloid(np.zeros(3), 0.2, np.array([0.1, -0.05, 0.3]),
                       0.1 * np.eye(3))
        bp = ls.blowup(P, chart, R, 1.0)
        m = round(1.0 / chart.spacing[0])
        ib = tuple(d // 2 for d in chart.dims)
        win = tuple(slice(i - m, i + m + 1) for i in ib)

        assert bp.chart.spacing == chart.spacing
        assert np.array_equal(bp.chart.metric, chart.metric[win])
        assert np.array_equal(bp.r_field, R[win])

        pts = chart.coords()[win]
        dx = pts - P.base
        direct = (P.value + dx @ P.gradient
                  + 0.5 * np.einsum("...i,ij,...j->...", dx, P.hessian, dx))
        assert np.abs(bp.p_r - direct).max() <= 1e-15

        from negcone.geometry import assemble_L
        parent_lot = assemble_L(chart)
        # mixed second derivatives see the window rim one node deeper than
        # first derivatives do
        deep = interior_slice(bp.chart.dims, 2)
        inner = interior_slice(bp.chart.dims, 1)
        assert np.abs(bp.lot.l0[deep] - parent_lot.l0[win][deep]).max() \
            <= 1e-15
        assert np.abs(bp.lot.gamma[inner]
                      - parent_lot.gamma[win][inner]).max() <= 1e-15

    def test_rejects_out_of_range_scale(self):
        chart, R = curved_parent()
        for bad in (0.0, -0.25, 1.5):
            with pytest.raises(DomainError):
                ls.blowup(zero_seed(), chart, R, bad)

    def test_rejects_scale_not_on_grid(self):
        chart, R = curved_parent()
        with pytest.raises(DomainError):
            ls.blowup(zero_seed(), chart, R, 0.55)

    def test_rejects_off_node_base(self):
        chart, R = curved_parent()
        P = Paraboloid(np.array([0.03, 0.0, 0.0]), 0.0, np.zeros(3),
                       np.zeros((3, 3)))
        with pytest.raises(DomainError):
            ls.blowup(P, chart, R, 0.5)

    def test_rejects_window_leaving_chart(self):
        chart, R = curved_parent()
        P = Paraboloid(np.array([0.8, 0.0, 0.0]), 0.0, np.zeros(3),
                       np.zeros((3, 3)))
        with pytest.raises(DomainError):
            ls.blowup(P, chart, R, 0.5)

    def test_rejects_masked_chart(self):
        chart = box_chart(3, -1.1, 1.1, 0.1,
                          mask_fn=lambda p: (p ** 2).sum(-1) <= 1.0)
        with pytest.raises(DomainError):
            ls.blowup(zero_seed(), chart, 1.0, 0.5)

    def test_curvature_field_forms(self):
        chart, R = curved_parent()
        bp = ls.blowup(zero_seed(), chart, 2.0, 0.5)
        assert np.all(bp.r_field == 2.0)
        bp = ls.blowup(zero_seed(), chart, R, 0.5)
        assert bp.r_field.shape == bp.chart.dims
        with pytest.raises(DomainError):
            ls.blowup(zero_seed(), chart, R[2:], 0.5)
        with pytest.raises(DomainError):
            ls.blowup(zero_seed(), chart, -1.0, 0.5)

    def test_lower_order_grading(self):
        # L at the window scale, fed r*p, reproduces r^2 times the parent L
        chart, R = curved_parent()
        bp_r, bp_1, core_r, core_1 = window_pair(chart, R)
        rng = np.random.default_rng(3)
        for _ in range(5):
            p = rng.normal(size=3)
            p_r = np.broadcast_to(0.5 * p, bp_r.chart.dims + (3,))
            p_1 = np.broadcast_to(p, bp_1.chart.dims + (3,))
            lhs = bp_r.lot.full(p_r)[core_r]
            rhs = 0.25 * bp_1.lot.full(p_1)[core_1]
            assert np.abs(lhs - rhs).max() <= 1e-10

    def test_operator_scaling_random_fields(self):
        # window operator at scale r equals r^2 times the parent operator
        chart, R = curved_parent()
        bp_r, bp_1, core_r, core_1 = window_pair(chart, R)
        x_r = 0.5 * bp_r.chart.coords()
        x_1 = bp_1.chart.coords()
        rng = np.random.default_rng(11)
        worst = 0.0
        for _ in range(20):
            u = random_smooth(rng)
            res_r = ls.operator_residual(bp_r, u(x_r), cone=CONE32)
            res_1 = ls.operator_residual(bp_1, u(x_1), cone=CONE32)
            diff = np.abs(res_r[core_r] - 0.25 * res_1[core_1]).max()
            scale = max(1.0, np.abs(res_1[core_1]).max())
            worst = max(worst, diff / scale)
        assert worst <= 1e-9

    def test_coefficient_scaling(self):
        # a carries degree 0, b degree 1, c degree 2; c stays negative
        chart, R = curved_parent()
        bp_r, bp_1, core_r, core_1 = window_pair(chart, R)
        u = random_smooth(np.random.default_rng(19))
        lp_r = ls.linearize(bp_r, u(0.5 * bp_r.chart.coords()), cone=CONE32)
        lp_1 = ls.linearize(bp_1, u(bp_1.chart.coords()), cone=CONE32)
        assert np.abs(lp_r.a[core_r] - lp_1.a[core_1]).max() <= 1e-9
        assert np.abs(lp_r.b[core_r] - 0.5 * lp_1.b[core_1]).max() <= 1e-9
        assert np.abs(lp_r.c[core_r] - 0.25 * lp_1.c[core_1]).max() <= 1e-9
        assert np.all(lp_r.c < 0.0)
        assert np.all(lp_1.c < 0.0)


class TestLinearize:
    def test_matches_directional_differences(self):
        chart, R = curved_parent()
        bp, _, _, _ = window_pair(chart, R)
        y = bp.chart.coords()
        u0 = random_smooth(np.random.default_rng(23))(0.5 * y)
        lp = ls.linearize(bp, u0, cone=CONE32)
        inner = interior_slice(bp.chart.dims, 1)
        rng = np.random.default_rng(29)
        t = 1e-4
        worst = 0.0
        for _ in range(50):
            q2 = rng.normal(size=(3, 3), scale=0.1)
            q2 = 0.5 * (q2 + q2.T)
            q1 = rng.normal(size=3, scale=0.1)
            q0 = rng.normal(scale=0.1)
            q = (0.5 * np.einsum("...i,ij,...j->...", y, q2, y)
                 + y @ q1 + q0)
            dq = y @ q2 + q1
            plus = ls.operator_residual(bp, u0 + t * q, cone=CONE32)
            minus = ls.operator_residual(bp, u0 - t * q, cone=CONE32)
            fd = (plus - minus) / (2.0 * t)
            pred = (np.einsum("...ij,ij->...", lp.a, q2)
                    + (lp.b * dq).sum(-1) + lp.c * q)
            diff = np.abs(fd[inner] - pred[inner]).max()
            scale = max(1.0, np.abs(fd[inner]).max())
            worst = max(worst, diff / scale)
        assert worst <= 1e-6

    def test_principal_part_symmetric(self):
        chart, R = curved_parent()
        bp, _, _, _ = window_pair(chart, R)
        u = random_smooth(np.random.default_rng(41))(0.5 * bp.chart.coords())
        lp = ls.linearize(bp, u, cone=CONE32)
        assert np.array_equal(lp.a, np.swapaxes(lp.a, -1, -2))

    def test_equal_eigenvalue_point(self):
        # flat metric, k = n = 3, unit-hessian seed: the matrix at the
        # center is a multiple of I, so the derivative is f/(k lam) I = I/3
        chart = box_chart(3, -1.1, 1.1, 0.1)
        P = Paraboloid(np.zeros(3), 0.0, np.zeros(3), np.eye(3))
        bp = ls.blowup(P, chart, 1.0, 0.5)
        lp = ls.linearize(bp, 0.0, cone=CONE33)
        mid = tuple(d // 2 for d in bp.chart.dims)
        assert np.abs(lp.a[mid] - np.eye(3) / 3.0).max() <= 1e-12

    def test_cone_exit_names_the_node(self):
        # gradient large enough that the quadratic lower-order terms push
        # the spectrum out near the window edge
        chart = box_chart(3, -0.44, 0.44, 0.04)
        g = np.array([1.3, 0.0, 0.0])
        P = Paraboloid(np.zeros(3), 0.0, g, np.eye(3))
        bp = ls.blowup(P, chart, 1.0, 0.4)
        with pytest.raises(ConeExitError) as exc:
            ls.linearize(bp, 0.0, cone=CONE33)
        node = exc.value.node
        assert node is not None
        assert len(node) == 3
        assert all(0 <= i < d for i, d in zip(node, bp.chart.dims))


class TestContractSolve:
    def test_hyperbolic_window_converges(self, hyper_default):
        bp, w, trace, exact = hyper_default
        assert trace.converged
        assert len(trace.iterates) - 1 <= 8
        assert trace.rate < 1.0
        h = 1.0 / 12.0
        assert np.abs(w - exact).max() <= 5.0 * h * h + 5.0 * 0.1 ** 2.5

    def test_boundary_values_untouched(self, hyper_default):
        bp, w, trace, _ = hyper_default
        d = w - bp.p_r
        rim = np.ones(bp.chart.dims, dtype=bool)
        rim[interior_slice(bp.chart.dims, 1)] = False
        assert np.all(d[rim] == 0.0)

    def test_trace_serializes(self, hyper_default):
        _, _, trace, _ = hyper_default
        js = trace.to_json()
        assert js["converged"] is True
        assert isinstance(js["rate"], float)
        assert all(len(pair) == 2 for pair in js["iterates"])
        # residual column decreases to the tolerance
        resids = [pair[1] for pair in js["iterates"]]
        assert resids[-1] <= 1e-9

    def test_exhaustion_raises_noncontraction(self):
        sol, x0, P = hyperbolic_seed()
        chart = window_chart(x0, 0.1, 8)
        with pytest.raises(NonContractionError) as exc:
            ls.contract_solve(P, chart, 1.0, 0.1, 1e-16, 3, cone=CONE33)
        assert exc.value.r == 0.1

    def test_offset_seed_is_projected(self):
        chart = box_chart(3, -0.6, 0.6, 0.1)
        P_off = Paraboloid(np.zeros(3), 0.3, np.zeros(3), np.eye(3))
        P2 = ls.project_seed(P_off, chart, 1.0, cone=CONE33)
        assert abs(P2.value) <= 1e-12
        assert np.array_equal(P2.hessian, P_off.hessian)

    def test_balanced_seed_passes_through(self):
        chart = box_chart(3, -0.6, 0.6, 0.1)
        P_ok = Paraboloid(np.zeros(3), 0.0, np.zeros(3), np.eye(3))
        assert ls.project_seed(P_ok, chart, 1.0, cone=CONE33) is P_ok

    def test_projection_happens_inside_solve(self):
        chart = box_chart(3, -0.15, 0.15, 0.0125)
        P_off = Paraboloid(np.zeros(3), 0.3, np.zeros(3), np.eye(3))
        P_ok = Paraboloid(np.zeros(3), 0.0, np.zeros(3), np.eye(3))
        w_off, _ = ls.contract_solve(P_off, chart, 1.0, 0.1, cone=CONE33)
        w_ok, _ = ls.contract_solve(P_ok, chart, 1.0, 0.1, cone=CONE33)
        assert np.array_equal(w_off, w_ok)

    def test_inadmissible_seed_rejected(self):
        chart = box_chart(3, -0.6, 0.6, 0.1)
        P_bad = Paraboloid(np.zeros(3), 0.0, np.zeros(3), -np.eye(3))
        with pytest.raises(ConeExitError):
            ls.project_seed(P_bad, chart, 1.0, cone=CONE33)


class TestBackoff:
    def chart_fn(self, r, nodes=10):
        h = r / nodes
        return box_chart(3, -(r + h), r + h, h)

    def test_marginal_seed_accepted_after_halving(self):
        # admissibility margin ~ r^2 (1 - (1.3 + r)^2 / 2): fails at the
        # starting scale, holds once r is small
        g = np.array([1.3, 0.0, 0.0])
        P = Paraboloid(np.zeros(3), 0.0, g, np.eye(3))
        r_acc, w, trace = ls.solve_with_backoff(
            P, self.chart_fn, 1.0, cone=CONE33, r0=0.4, max_iter=60)
        assert r_acc <= 0.1
        assert r_acc >= ls.SCALE_FLOOR
        assert trace.converged
        assert trace.rate < 1.0

    def test_gives_up_below_floor(self):
        g = np.array([1.3, 0.0, 0.0])
        P = Paraboloid(np.zeros(3), 0.0, g, np.eye(3))
        with pytest.raises(SolverError):
            ls.solve_with_backoff(P, self.chart_fn, 1.0, cone=CONE33,
                                  r0=0.4, floor=0.3)


class TestSavinReport:
    def test_audit_passes(self, hyper_tight):
        _, _, rep = hyper_tight
        assert rep.passed
        assert rep.lambda_min > 0.0
        assert rep.zero_check <= 1e-8
        assert rep.cone_exits == 0

    def test_monotone_in_matrix_slot(self, hyper_tight):
        _, _, rep = hyper_tight
        assert rep.monotone_min >= -1e-10

    def test_zero_probe_is_weighted_residual(self, hyper_tight):
        bp, w, rep = hyper_tight
        resid = ls.operator_residual(bp, w - bp.p_r, cone=CONE33)
        inner = interior_slice(bp.chart.dims, 1)
        want = float(np.abs(np.exp(-2.0 * w) * resid)[inner].max())
        assert abs(rep.zero_check - want) <= 1e-10 * max(1.0, want)

    def test_json_shape(self, hyper_tight):
        _, _, rep = hyper_tight
        js = rep.to_json()
        assert set(js) == {"lambda", "Lambda", "K", "zero_check", "pass"}
        assert js["pass"] is True

    def test_constants_stable_under_refinement(self, hyper_tight):
        _, _, rep_fine = hyper_tight
        bp, w, _, _ = solve_window(0.05, 12, tol=2.5e-12, max_iter=80)
        rep_finer = ls.savin_check(w, bp, 0.05, cone=CONE33)
        for a, b in ((rep_fine.lambda_min, rep_finer.lambda_min),
                     (rep_fine.Lambda_max, rep_finer.Lambda_max)):
            assert abs(a - b) / max(abs(a), abs(b)) <= 0.2

    def test_slot_identity_on_random_tuples(self):
        # window jet operator at (M, p, z) equals the parent operator at
        # (M, r p, r^2 z) on shared nodes
        chart, R = curved_parent()
        bp_r, bp_1, core_r, core_1 = window_pair(chart, R)
        u = random_smooth(np.random.default_rng(31))
        w_r = u(0.5 * bp_r.chart.coords()) + math.log(0.5)
        w_1 = u(bp_1.chart.coords())
        rng = np.random.default_rng(37)
        worst = 0.0
        for _ in range(100):
            M = rng.normal(size=(3, 3), scale=0.05)
            M = 0.5 * (M + M.T)
            p = rng.normal(size=3, scale=0.15)
            z = rng.normal(scale=0.4)
            lhs = ls.savin_operator(bp_r, w_r, M, p, z, cone=CONE32)
            rhs = ls.savin_operator(bp_1, w_1, M, 0.5 * p, 0.25 * z,
                                    cone=CONE32)
            a = lhs[core_r]
            b = rhs[core_1]
            assert np.all(np.isfinite(a)) and np.all(np.isfinite(b))
            worst = max(worst, np.abs(a - b).max())
        assert worst <= 1e-10


class TestScalingStudy:
    def test_residual_slopes(self, study_report):
        assert all(s >= 2.7 for s in study_report["residual_slopes"])

    def test_distance_slopes(self, study_report):
        assert all(s >= 2.3 for s in study_report["distance_slopes"])

    def test_contraction_rates(self, study_report):
        assert all(r <= 0.6 for r in study_report["rates"])

    def test_audit_sections(self, study_report):
        fine = study_report["savin"]
        coarse = study_report["savin_coarser"]
        assert fine["pass"] and coarse["pass"]
        for key in ("lambda", "Lambda"):
            a, b = fine[key], coarse[key]
            assert abs(a - b) / max(abs(a), abs(b)) <= 0.2

    def test_report_shape(self, study_report):
        for key in ("r_ladder", "residual_norms", "residual_slopes",
                    "distance_sup", "distance_slopes", "rates", "trace",
                    "savin"):
            assert key in study_report
        assert len(study_report["r_ladder"]) == 4
        assert len(study_report["residual_slopes"]) == 3
        assert study_report["trace"]["converged"] is True
