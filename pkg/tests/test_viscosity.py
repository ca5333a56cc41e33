"""Jet fits, pointwise verdicts, singular detection, norms, comparison."""

import json
import math

import numpy as np
import pytest

from negcone import cones, geometry, viscosity
from negcone.errors import DomainError


def flat2d(h=0.05, half=1.0):
    m = int(round(2 * half / h)) + 1
    return geometry.flat_chart(2, (m, m), (h, h), (-half, -half))


def hyperbolic_slab(n=3, k=2, h=0.05):
    ck = math.log(math.comb(n, k) * 2.0 ** (-k)) / (2 * k)
    ch = geometry.half_space_slab(n, 0.5, 1.5, h, width=1.0)
    z = ch.coords()[..., -1]
    return ch, -np.log(z) + ck


class TestParaboloid:
    def test_evaluates_quadratic(self):
        p = viscosity.Paraboloid(np.array([1.0, -1.0]), 2.0,
                                 np.array([1.0, 0.5]),
                                 np.array([[2.0, 1.0], [1.0, 0.0]]))
        x = np.array([1.5, -0.5])
        dx = x - p.base
        want = 2.0 + dx @ p.gradient + 0.5 * dx @ p.hessian @ dx
        assert abs(p(x) - want) < 1e-14

    def test_rejects_asymmetric_hessian(self):
        with pytest.raises(DomainError):
            viscosity.Paraboloid(np.zeros(2), 0.0, np.zeros(2),
                                 np.array([[0.0, 1.0], [0.0, 0.0]]))


class TestJetFit:
    def test_exact_on_quadratic(self):
        ch = flat2d()
        pts = ch.coords()
        w = 1 + pts[..., 0] - 2 * pts[..., 1] + pts[..., 0] ** 2 \
            + 0.5 * pts[..., 0] * pts[..., 1]
        rep = viscosity.jet_fit(w, ch, (0.0, 0.0), (0.2, 0.15, 0.1))
        assert rep.exact
        assert all(s <= 1e-12 for _, s in rep.remainders)
        assert abs(rep.paraboloid.hessian[0, 1] - 0.5) < 1e-10

    def test_quartic_exponent(self):
        ch = flat2d(h=0.025)
        pts = ch.coords()
        w = ((pts ** 2).sum(-1)) ** 2
        rep = viscosity.jet_fit(w, ch, (0.0, 0.0), (0.4, 0.3, 0.2, 0.15, 0.1))
        assert 3.3 < rep.ratio_trend < 4.6
        assert np.abs(rep.paraboloid.hessian).max() < 0.05

    def test_kink_exponent_flags_nondifferentiability(self):
        ch = flat2d(h=0.025)
        pts = ch.coords()
        rep = viscosity.jet_fit(np.abs(pts[..., 0]), ch, (0.0, 0.0),
                                (0.4, 0.3, 0.2, 0.15, 0.1))
        assert rep.ratio_trend < 1.5

    def test_smooth_function_passes_threshold(self):
        ch = flat2d(h=0.025)
        pts = ch.coords()
        w = np.sin(2 * pts[..., 0]) * np.cos(pts[..., 1])
        rep = viscosity.jet_fit(w, ch, (0.05, -0.1), (0.4, 0.3, 0.2, 0.15, 0.1))
        assert rep.ratio_trend > 2.5

    def test_margin_and_ladder_validation(self):
        ch = flat2d()
        w = np.zeros(ch.dims)
        with pytest.raises(DomainError):
            viscosity.jet_fit(w, ch, (0.95, 0.0), (0.2, 0.15, 0.1))
        with pytest.raises(DomainError):
            viscosity.jet_fit(w, ch, (0.0, 0.0), (0.2, 0.15))
        with pytest.raises(DomainError):
            viscosity.jet_fit(w, ch, (0.0, 0.0), (0.1, 0.15, 0.2))


class TestCheckPoint:
    def test_hyperbolic_oracle_is_both(self):
        ch, w = hyperbolic_slab()
        cone = cones.ConeSpec(3, 2)
        lot = geometry.assemble_L(ch)
        rng = np.random.default_rng(5)
        for _ in range(25):
            x0 = np.array([rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2),
                           rng.uniform(0.75, 1.25)])
            v = viscosity.check_point(w, ch, 1.0, cone, x0=x0, lot=lot)
            assert v.status == "both"
            assert v.residual < 0.05

    def test_zero_candidate_on_flat_chart(self):
        ch = flat2d()
        v = viscosity.check_point(np.zeros(ch.dims), ch, 1.0,
                                  cones.ConeSpec(2, 1), x0=(0.0, 0.0))
        assert v.status == "supersolution_ok"
        assert v.cone_spectrum.values == (0.0, 0.0)

    def test_kink_supersolution_via_cone_exit(self):
        # |x1| admits no touching from above; from below the probes leave
        # the k=2 cone, so only the supersolution half survives
        ch = flat2d()
        pts = ch.coords()
        v = viscosity.check_point(np.abs(pts[..., 0]), ch, 1.0,
                                  cones.ConeSpec(2, 2), x0=(0.0, 0.0))
        assert v.status == "supersolution_ok"

    def test_kink_fails_trace_equation(self):
        # |x1| is subharmonic, so the k=1 super side genuinely fails
        ch = flat2d()
        pts = ch.coords()
        v = viscosity.check_point(np.abs(pts[..., 0]), ch, 1.0,
                                  cones.ConeSpec(2, 1), x0=(0.0, 0.0))
        assert v.status == "neither"

    def test_constant_shift_invariance(self):
        ch, w = hyperbolic_slab()
        cone = cones.ConeSpec(3, 2)
        lot = geometry.assemble_L(ch)
        for c in (-0.8, 0.37, 1.9):
            v1 = viscosity.check_point(w, ch, 1.0, cone,
                                       x0=(0.1, -0.05, 1.0), lot=lot)
            v2 = viscosity.check_point(w + c, ch, math.exp(-4 * c), cone,
                                       x0=(0.1, -0.05, 1.0), lot=lot)
            assert v1.status == v2.status
            assert abs(v1.residual - v2.residual) < 1e-9

    def test_near_boundary_is_inconclusive(self):
        ch, w = hyperbolic_slab()
        v = viscosity.check_point(w, ch, 1.0, cones.ConeSpec(3, 2),
                                  x0=(0.0, 0.0, 0.52))
        assert v.status == "inconclusive"
        assert v.cone_spectrum is None

    def test_rejects_nonpositive_curvature_data(self):
        ch = flat2d()
        with pytest.raises(DomainError):
            viscosity.check_point(np.zeros(ch.dims), ch, -1.0,
                                  cones.ConeSpec(2, 1), x0=(0.0, 0.0))

    def test_verdict_json_roundtrip(self, tmp_path):
        ch, w = hyperbolic_slab()
        v = viscosity.check_point(w, ch, 1.0, cones.ConeSpec(3, 2),
                                  x0=(0.0, 0.0, 1.0))
        path = tmp_path / "verdicts.json"
        viscosity.verdicts_to_json([v], path)
        back = json.loads(path.read_text())
        assert back[0]["status"] == "both"
        assert len(back[0]["spectrum"]) == 3
        assert math.isfinite(back[0]["residual"])


class TestSingularSet:
    def test_smooth_field_empty_mask(self):
        ch = flat2d(h=0.025)
        pts = ch.coords()
        w = np.sin(2 * pts[..., 0]) * np.cos(pts[..., 1])
        mask = viscosity.detect_singular_set(w, ch, (0.2, 0.15, 0.1, 0.05))
        assert mask.flags.sum() == 0

    def test_globally_quadratic_never_flagged(self):
        ch = flat2d(h=0.025)
        pts = ch.coords()
        w = pts[..., 0] ** 2 - 3 * pts[..., 1] ** 2
        mask = viscosity.detect_singular_set(w, ch, (0.2, 0.15, 0.1, 0.05))
        assert mask.flags.sum() == 0

    def test_kink_plane_localized(self):
        h = 0.025
        ch = flat2d(h=h)
        pts = ch.coords()
        mask = viscosity.detect_singular_set(np.abs(pts[..., 0]), ch,
                                             (0.2, 0.15, 0.1, 0.05))
        assert mask.flags.sum() > 0
        dist = np.abs(pts[..., 0])[mask.flags]
        assert dist.max() <= 2 * h + 1e-12

    def test_flag_fraction_shrinks_with_h(self):
        fracs = []
        for h in (0.05, 0.025):
            ch = flat2d(h=h)
            pts = ch.coords()
            mask = viscosity.detect_singular_set(np.abs(pts[..., 0]), ch,
                                                 (8 * h, 6 * h, 4 * h, 2 * h))
            fracs.append(mask.flags.sum() / mask.evaluated.sum())
        assert fracs[1] < fracs[0]

    def test_masked_chart_respected(self):
        ch = geometry.annulus_chart(2, 0.5, 1.5, 0.05)
        r = np.linalg.norm(ch.coords(), axis=-1)
        w = np.where(ch.mask, np.abs(r - 1.0), 0.0)
        mask = viscosity.detect_singular_set(w, ch, (0.2, 0.15, 0.1))
        assert mask.flags.sum() > 0
        assert not (mask.flags & ~ch.mask).any()
        dist = np.abs(r - 1.0)[mask.flags]
        assert dist.max() <= 2 * 0.05 + 1e-12

    def test_csv_export(self, tmp_path):
        ch = flat2d(h=0.1, half=0.5)
        pts = ch.coords()
        mask = viscosity.detect_singular_set(np.abs(pts[..., 0]), ch,
                                             (0.4, 0.3, 0.2))
        out = tmp_path / "mask.csv"
        viscosity.singular_mask_to_csv(mask, ch, out)
        lines = out.read_text().strip().splitlines()
        assert lines[0].startswith("#")
        assert len(lines) - 1 == int(mask.evaluated.sum())
        cells = lines[1].split(",")
        assert len(cells) == 1 + 2 + 1 + 1

    def test_one_dimensional_profile(self):
        ch = geometry.flat_chart(1, (201,), (0.01,), (0.0,))
        t = ch.coords()[..., 0]
        w = np.abs(t - 1.0)
        mask = viscosity.detect_singular_set(w, ch, (0.08, 0.06, 0.04, 0.02))
        assert mask.flags.sum() > 0
        assert np.abs(t - 1.0)[mask.flags].max() <= 0.02 + 1e-12


class TestShiftConstant:
    def test_flat_values(self):
        ch = flat2d(h=0.1, half=0.5)
        lot = geometry.assemble_L(ch)
        assert viscosity.kconvex_shift_constant(lot, 0.0, ch) == 0.0
        got = viscosity.kconvex_shift_constant(lot, 2.0, ch)
        assert abs(got - 1.05 * 2.0 ** 2 / 4) < 1e-10

    def test_zeroth_order_isotropic_shift(self):
        ch = flat2d(h=0.1, half=0.5)
        lot = geometry.assemble_L(ch)
        b = 0.6
        bumped = geometry.LowerOrderTerms(lot.l0 + b * np.eye(2), lot.gamma,
                                          lot.g, lot.ginv)
        base = viscosity.kconvex_shift_constant(lot, 1.0, ch)
        got = viscosity.kconvex_shift_constant(bumped, 1.0, ch)
        assert abs(got - (base + 1.05 * b / 2)) < 1e-10

    def test_rejects_negative_bound(self):
        ch = flat2d(h=0.1, half=0.5)
        lot = geometry.assemble_L(ch)
        with pytest.raises(DomainError):
            viscosity.kconvex_shift_constant(lot, -1.0, ch)


class TestWeightedHolder:
    def test_constant_has_zero_seminorm(self):
        ch = flat2d(h=0.1, half=0.5)
        region = np.ones(ch.dims, bool)
        semi, sup = viscosity.weighted_holder(np.full(ch.dims, 3.0), ch,
                                              region, 0.5, 2)
        assert semi == 0.0
        assert sup > 0.0

    def test_matches_bruteforce_on_small_grid(self):
        ch = geometry.flat_chart(2, (9, 9), (0.125, 0.125), (0.0, 0.0))
        region = np.ones(ch.dims, bool)
        pts = ch.coords()
        w = pts[..., 0]
        alpha, sigma = 1.0, 2
        semi, sup = viscosity.weighted_holder(w, ch, region, alpha, sigma)
        from scipy import ndimage
        d = ndimage.distance_transform_edt(region, sampling=ch.spacing)
        coords = pts.reshape(-1, 2)
        vals = w.ravel()
        dd = d.ravel()
        best_semi, best_sup = 0.0, 0.0
        for i in range(len(vals)):
            best_sup = max(best_sup, dd[i] ** sigma * abs(vals[i]))
            for j in range(len(vals)):
                if i == j:
                    continue
                sep = np.linalg.norm(coords[i] - coords[j])
                q = min(dd[i], dd[j]) ** (sigma + alpha) \
                    * abs(vals[i] - vals[j]) / sep ** alpha
                best_semi = max(best_semi, q)
        assert abs(semi - best_semi) < 1e-12
        assert abs(sup - best_sup) < 1e-12

    def test_large_region_deterministic(self):
        ch = flat2d(h=0.0125, half=1.0)
        region = np.ones(ch.dims, bool)
        pts = ch.coords()
        w = np.sin(3 * pts[..., 0]) + pts[..., 1] ** 2
        a = viscosity.weighted_holder(w, ch, region, 0.5, 2)
        b = viscosity.weighted_holder(w, ch, region, 0.5, 2)
        assert a == b
        assert all(math.isfinite(x) for x in a)

    def test_interpolation_constant_reported(self):
        ch = flat2d(h=0.05, half=0.5)
        region = np.ones(ch.dims, bool)
        pts = ch.coords()
        w = pts[..., 0] ** 2
        c = viscosity.interpolation_constant(w, ch, region, 0.5)
        assert c >= 0.0
        assert math.isfinite(c)

    def test_rejects_bad_alpha_and_empty_region(self):
        ch = flat2d(h=0.1, half=0.5)
        w = np.zeros(ch.dims)
        with pytest.raises(DomainError):
            viscosity.weighted_holder(w, ch, np.ones(ch.dims, bool), 1.5, 2)
        with pytest.raises(DomainError):
            viscosity.weighted_holder(w, ch, np.zeros(ch.dims, bool), 0.5, 2)


class TestComparison:
    def test_equal_and_translated_barriers(self):
        ch, w = hyperbolic_slab()
        cone = cones.ConeSpec(3, 2)
        assert viscosity.comparison_check(w, w, ch, cone)
        assert viscosity.comparison_check(w, w + 0.1, ch, cone)

    def test_manufactured_violation_found(self):
        ch, w = hyperbolic_slab()
        cone = cones.ConeSpec(3, 2)
        xy = ch.coords()
        bump = 0.2 * np.exp(-((xy[..., 0]) ** 2 + (xy[..., 1]) ** 2
                              + (xy[..., 2] - 1.0) ** 2) / 0.02)
        v = w + 0.05 - bump
        assert not viscosity.comparison_check(w, v, ch, cone)
        assert len(viscosity.ordering_violations(w, v, ch)) > 0

    def test_boundary_disorder_rejected(self):
        ch, w = hyperbolic_slab()
        with pytest.raises(DomainError):
            viscosity.comparison_check(w, w - 0.1, ch, cones.ConeSpec(3, 2))

    def test_rough_barrier_rejected(self):
        ch = flat2d(h=0.025)
        pts = ch.coords()
        w = np.full(ch.dims, -1.0)
        tent = np.abs(pts[..., 0])
        with pytest.raises(DomainError):
            viscosity.comparison_check(w, tent, ch, cones.ConeSpec(2, 2),
                                       smoothness_samples=600)
