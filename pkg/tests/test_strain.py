from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dicflow.errors import InsufficientDataError
from dicflow.imaging import Affine, warp_image
from dicflow.opticalflow import ROI, DisplacementField, FlowConfig, solve_dense
from dicflow.strain import (
    StrainField,
    displacement_gradients,
    green_strain,
    strain_stats,
)

from .oracles import green_strain_of_tensor, stretch_eyy


def make_field(roi: ROI, u, v, valid=None) -> DisplacementField:
    valid = np.ones(roi.shape, dtype=bool) if valid is None else valid
    return DisplacementField(
        roi=roi,
        u=np.where(valid, u, 0.0).astype(np.float32),
        v=np.where(valid, v, 0.0).astype(np.float32),
        valid=valid,
        iterations_used=np.zeros(roi.shape, dtype=np.int32),
    )


def make_strain(roi: ROI, eyy, valid=None) -> StrainField:
    valid = np.ones(roi.shape, dtype=bool) if valid is None else valid
    z = np.zeros(roi.shape, dtype=np.float32)
    return StrainField(roi=roi, exx=z, eyy=np.asarray(eyy, dtype=np.float32), exy=z, valid=valid)


class TestDisplacementGradients:
    def test_linear_u_gradient_is_exact(self):
        roi = ROI(0, 0, 32, 32)
        xx, yy = roi.grid()
        g = displacement_gradients(make_field(roi, 0.01 * xx, np.zeros(roi.shape)))
        assert g.valid.all()
        np.testing.assert_allclose(g.du_dx, 0.01, atol=1e-6)
        np.testing.assert_allclose(g.du_dy, 0.0, atol=1e-6)
        np.testing.assert_allclose(g.dv_dx, 0.0, atol=1e-6)
        np.testing.assert_allclose(g.dv_dy, 0.0, atol=1e-6)

    def test_uniform_translation_gives_zero(self):
        roi = ROI(0, 0, 16, 16)
        g = displacement_gradients(make_field(roi, np.full(roi.shape, 1.5), np.full(roi.shape, -0.5)))
        for arr in (g.du_dx, g.du_dy, g.dv_dx, g.dv_dy):
            np.testing.assert_allclose(arr, 0.0, atol=1e-6)

    def test_mixed_affine_exact(self):
        a, b = 0.02, -0.01
        roi = ROI(0, 0, 24, 24)
        xx, yy = roi.grid()
        g = displacement_gradients(make_field(roi, a * xx + b * yy, np.zeros(roi.shape)))
        np.testing.assert_allclose(g.du_dx, a, atol=1e-5)
        np.testing.assert_allclose(g.du_dy, b, atol=1e-5)

    def test_one_sided_at_raster_edges(self):
        roi = ROI(0, 0, 16, 16)
        xx, _ = roi.grid()
        g = displacement_gradients(make_field(roi, 0.05 * xx, np.zeros(roi.shape)))
        # edges are still valid via one-sided stencils, exact for affine u
        assert g.valid.all()
        np.testing.assert_allclose(g.du_dx[:, 0], 0.05, atol=1e-5)
        np.testing.assert_allclose(g.du_dx[:, -1], 0.05, atol=1e-5)

    def test_validity_erosion_around_hole(self):
        roi = ROI(0, 0, 16, 16)
        valid = np.ones(roi.shape, dtype=bool)
        valid[8, 8] = False
        g = displacement_gradients(make_field(roi, np.zeros(roi.shape), np.zeros(roi.shape), valid))
        assert not g.valid[8, 8]  # the hole itself
        # neighbors keep one-sided stencils away from the hole
        assert g.valid[8, 7] and g.valid[8, 9] and g.valid[7, 8] and g.valid[9, 8]

    def test_isolated_pixel_has_no_stencil(self):
        roi = ROI(0, 0, 16, 16)
        valid = np.zeros(roi.shape, dtype=bool)
        valid[8, 8] = True
        g = displacement_gradients(make_field(roi, np.ones(roi.shape), np.ones(roi.shape), valid))
        assert not g.valid.any()


class TestGreenStrain:
    def test_small_stretch_x(self):
        roi = ROI(0, 0, 8, 8)
        xx, _ = roi.grid()
        field = make_field(roi, 0.01 * xx, np.zeros(roi.shape))
        s = green_strain(displacement_gradients(field), roi)
        assert s.exx[s.valid].mean() == pytest.approx(0.01 + 0.5 * 0.01**2, abs=1e-6)
        assert abs(s.eyy[s.valid]).max() < 1e-6
        assert abs(s.exy[s.valid]).max() < 1e-6

    def test_stretch_y_arithmetic(self):
        _, eyy, _ = green_strain_of_tensor(0.0, 0.0, 0.0, 0.02)
        assert eyy == pytest.approx(0.0202)

    def test_rigid_rotation_tensor_gives_zero_strain(self):
        th = math.radians(5.0)
        exx, eyy, exy = green_strain_of_tensor(
            math.cos(th) - 1.0, -math.sin(th), math.sin(th), math.cos(th) - 1.0
        )
        assert abs(exx) < 1e-12 and abs(eyy) < 1e-12 and abs(exy) < 1e-12

    @given(theta=st.floats(-30.0, 30.0))
    @settings(max_examples=50, deadline=None)
    def test_rotation_invariance_property(self, theta):
        th = math.radians(theta)
        exx, eyy, exy = green_strain_of_tensor(
            math.cos(th) - 1.0, -math.sin(th), math.sin(th), math.cos(th) - 1.0
        )
        assert max(abs(exx), abs(eyy), abs(exy)) < 1e-12

    def test_field_rotation_zero_within_fp(self):
        th = math.radians(5.0)
        roi = ROI(0, 0, 16, 16)
        xx, yy = roi.grid()
        cx, cy = 8.0, 8.0
        u = (math.cos(th) - 1) * (xx - cx) - math.sin(th) * (yy - cy)
        v = math.sin(th) * (xx - cx) + (math.cos(th) - 1) * (yy - cy)
        s = green_strain(displacement_gradients(make_field(roi, u, v)), roi)
        # float32 displacement storage bounds the achievable zero
        assert abs(s.exx[s.valid]).max() < 1e-6
        assert abs(s.eyy[s.valid]).max() < 1e-6
        assert abs(s.exy[s.valid]).max() < 1e-6


class TestStrainStats:
    def test_uniform_field(self):
        roi = ROI(0, 0, 10, 10)
        s = strain_stats(make_strain(roi, np.full(roi.shape, 0.01)))
        assert s.max_eyy == pytest.approx(0.01)
        assert s.mean_eyy == pytest.approx(0.01)
        assert s.topk_mean_eyy[0.05] == pytest.approx(0.01)
        assert s.topk_mean_eyy[0.10] == pytest.approx(0.01)
        assert s.del_max_eyy == 0.0
        assert s.valid_pixel_count == 100

    def test_single_spike_topk_counting(self):
        roi = ROI(0, 0, 10, 10)
        eyy = np.zeros(roi.shape)
        eyy[0, 0] = 0.10
        s = strain_stats(make_strain(roi, eyy))
        assert s.max_eyy == pytest.approx(0.10)
        assert s.topk_mean_eyy[0.05] == pytest.approx(0.02)  # 5 values
        assert s.topk_mean_eyy[0.10] == pytest.approx(0.01)  # 10 values
        assert s.mean_eyy == pytest.approx(0.001)

    def test_del_max_against_previous(self):
        roi = ROI(0, 0, 10, 10)
        prev = strain_stats(make_strain(roi, np.full(roi.shape, 0.010)))
        cur = strain_stats(make_strain(roi, np.full(roi.shape, 0.013)), previous=prev)
        assert cur.del_max_eyy == pytest.approx(0.003)

    def test_too_few_valid_pixels(self):
        roi = ROI(0, 0, 10, 10)
        valid = np.zeros(roi.shape, dtype=bool)
        valid[0, :5] = True
        with pytest.raises(InsufficientDataError):
            strain_stats(make_strain(roi, np.zeros(roi.shape), valid))

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=40, deadline=None)
    def test_monotone_nesting_property(self, seed):
        rng = np.random.default_rng(seed)
        roi = ROI(0, 0, 12, 12)
        eyy = rng.normal(0.0, 0.02, roi.shape)
        s = strain_stats(make_strain(roi, eyy))
        assert s.max_eyy >= s.topk_mean_eyy[0.05] - 1e-12
        assert s.topk_mean_eyy[0.05] >= s.topk_mean_eyy[0.10] - 1e-12
        assert s.topk_mean_eyy[0.10] >= s.mean_eyy - 1e-12

    def test_invalid_pixels_never_contribute(self):
        roi = ROI(0, 0, 10, 10)
        eyy = np.zeros(roi.shape)
        eyy[0, 0] = 99.0  # invalid spike must be ignored
        valid = np.ones(roi.shape, dtype=bool)
        valid[0, 0] = False
        s = strain_stats(make_strain(roi, eyy, valid))
        assert s.max_eyy == pytest.approx(0.0)
        assert s.valid_pixel_count == 99


class TestPipelineQuick:
    def test_stretch_end_to_end(self, speckle_256):
        lam = 0.005
        roi = ROI(48, 48, 160, 160)
        deformed = warp_image(speckle_256, Affine(dvdy=lam), background=0.85)
        field = solve_dense(speckle_256, deformed, roi, FlowConfig(window_half=4))
        s = green_strain(displacement_gradients(field, smooth_sigma=3.0), roi)
        expected = stretch_eyy(lam)
        assert s.eyy[s.valid].mean() == pytest.approx(expected, abs=max(0.05 * expected, 2e-4))
