"""Green strain fields from displacement gradients, and scalar summaries.

Strain components follow the finite-strain definition built from the
displacement gradient tensor, so rigid translations and rotations produce
exactly zero strain. The scalar summaries (max, mean, top-k% means and
their per-batch deltas) are what the rate controller consumes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import DimensionError, InsufficientDataError
from .opticalflow import ROI, DisplacementField

MIN_VALID_PIXELS = 20

DEFAULT_K_FRACTIONS = (0.05, 0.10)


@dataclass(frozen=True)
class DisplacementGradients:
    """Finite-difference gradients of a displacement field, with validity."""

    du_dx: np.ndarray
    du_dy: np.ndarray
    dv_dx: np.ndarray
    dv_dy: np.ndarray
    valid: np.ndarray


@dataclass(frozen=True)
class StrainField:
    """Per-pixel Green strains over an ROI at one batch boundary."""

    roi: ROI
    exx: np.ndarray
    eyy: np.ndarray
    exy: np.ndarray
    valid: np.ndarray
    epoch: tuple[int, float] = (0, 0.0)

    def __post_init__(self) -> None:
        for name in ("exx", "eyy", "exy", "valid"):
            arr = getattr(self, name)
            if arr.shape != self.roi.shape:
                raise DimensionError(f"{name} raster shape {arr.shape} != ROI shape {self.roi.shape}")


@dataclass(frozen=True)
class StrainStats:
    """Scalar strain summaries driving the rate controller.

    Delta values are taken against the previous batch boundary and are zero
    for the first batch. `component` records which strain raster the
    summaries were computed from (longitudinal eyy by default).
    """

    max_eyy: float
    mean_eyy: float
    del_max_eyy: float
    topk_mean_eyy: dict[float, float]
    del_topk_eyy: dict[float, float]
    valid_pixel_count: int
    component: str = "eyy"


def _axis_gradient(values: np.ndarray, valid: np.ndarray, axis: int):
    """Masked finite difference along one axis.

    Central differences where both neighbors are valid, one-sided at
    valid-region (and raster) boundaries, invalid when no stencil of valid
    pixels exists. The pixel itself must be valid in every case.
    """
    fwd_val = np.roll(values, -1, axis=axis)
    bwd_val = np.roll(values, 1, axis=axis)
    fwd_ok = np.roll(valid, -1, axis=axis)
    bwd_ok = np.roll(valid, 1, axis=axis)
    # Rolled wrap-around neighbors do not exist.
    edge_lo = [slice(None)] * values.ndim
    edge_hi = [slice(None)] * values.ndim
    edge_lo[axis] = 0
    edge_hi[axis] = -1
    bwd_ok[tuple(edge_lo)] = False
    fwd_ok[tuple(edge_hi)] = False

    central = (fwd_val - bwd_val) / 2.0
    forward = fwd_val - values
    backward = values - bwd_val

    use_central = valid & fwd_ok & bwd_ok
    use_forward = valid & fwd_ok & ~bwd_ok
    use_backward = valid & bwd_ok & ~fwd_ok
    grad = np.select([use_central, use_forward, use_backward], [central, forward, backward], 0.0)
    return grad, use_central | use_forward | use_backward


def displacement_gradients(d: DisplacementField, smooth_sigma: float = 0.0) -> DisplacementGradients:
    """Differentiate a displacement field with validity-aware stencils.

    Optional Gaussian pre-smoothing of u and v (normalized so invalid
    pixels do not bleed zeros into the field); off by default to keep the
    pipeline auditable.
    """
    u = d.u.astype(np.float64)
    v = d.v.astype(np.float64)
    valid = d.valid
    if smooth_sigma > 0.0:
        mask = valid.astype(np.float64)
        norm = gaussian_filter(mask, smooth_sigma, mode="nearest")
        with np.errstate(invalid="ignore"):
            u = np.where(valid, gaussian_filter(u * mask, smooth_sigma, mode="nearest") / norm, 0.0)
            v = np.where(valid, gaussian_filter(v * mask, smooth_sigma, mode="nearest") / norm, 0.0)

    du_dx, ok_x_u = _axis_gradient(u, valid, axis=1)
    dv_dx, ok_x_v = _axis_gradient(v, valid, axis=1)
    du_dy, ok_y_u = _axis_gradient(u, valid, axis=0)
    dv_dy, ok_y_v = _axis_gradient(v, valid, axis=0)
    ok = ok_x_u & ok_x_v & ok_y_u & ok_y_v
    du_dx, du_dy, dv_dx, dv_dy = (np.where(ok, g, 0.0) for g in (du_dx, du_dy, dv_dx, dv_dy))
    return DisplacementGradients(du_dx, du_dy, dv_dx, dv_dy, ok)


def green_strain(
    grads: DisplacementGradients,
    roi: ROI,
    epoch: tuple[int, float] = (0, 0.0),
) -> StrainField:
    """Pointwise Green strain from displacement gradients."""
    gux, guy = grads.du_dx, grads.du_dy
    gvx, gvy = grads.dv_dx, grads.dv_dy
    exx = gux + 0.5 * (gux**2 + gvx**2)
    eyy = gvy + 0.5 * (guy**2 + gvy**2)
    exy = 0.5 * (guy + gvx + gux * guy + gvx * gvy)
    ok = grads.valid
    return StrainField(
        roi=roi,
        exx=np.where(ok, exx, 0.0).astype(np.float32),
        eyy=np.where(ok, eyy, 0.0).astype(np.float32),
        exy=np.where(ok, exy, 0.0).astype(np.float32),
        valid=ok,
        epoch=epoch,
    )


def strain_stats(
    s: StrainField,
    previous: StrainStats | None = None,
    k_fractions: tuple[float, ...] = DEFAULT_K_FRACTIONS,
    component: str = "eyy",
) -> StrainStats:
    """Scalar summaries of a strain field's driving component.

    Top-k means average the ceil(k * N) largest valid values. Deltas are
    against `previous` (zero when absent). Raises InsufficientDataError
    below 20 valid pixels; the controller holds its previous rate then.
    """
    raster = getattr(s, component)
    values = raster[s.valid].astype(np.float64)
    n = values.size
    if n < MIN_VALID_PIXELS:
        raise InsufficientDataError(f"only {n} valid pixels, need at least {MIN_VALID_PIXELS}")
    ordered = np.sort(values)[::-1]
    vmax = float(ordered[0])
    topk = {k: float(ordered[: math.ceil(k * n)].mean()) for k in k_fractions}
    del_topk = {
        k: (topk[k] - previous.topk_mean_eyy.get(k, topk[k])) if previous else 0.0
        for k in k_fractions
    }
    return StrainStats(
        max_eyy=vmax,
        mean_eyy=float(values.mean()),
        del_max_eyy=vmax - (previous.max_eyy if previous else vmax),
        topk_mean_eyy=topk,
        del_topk_eyy=del_topk,
        valid_pixel_count=int(n),
        component=component,
    )
