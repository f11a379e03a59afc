"""Dense window-based optical flow over a region of interest.

Each ROI pixel gets its own least-squares displacement from the classic
brightness-constancy constraint ix*u + iy*v + it = 0, summed over a small
window assumed to move rigidly. The normal equations are solved in closed
form per pixel; textureless windows (small minimum eigenvalue of the
structure matrix) are marked invalid rather than regularized, so
correlation loss stays visible downstream.

A single linearized solve is only valid for subpixel motion, so the dense
solver iterates: warp the deformed image by the current estimate, re-measure
the temporal difference, update. Larger motions are handled by an optional
coarse-to-fine pyramid. Everything here is pure and deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import map_coordinates, uniform_filter

from .errors import DimensionError
from .imaging.image import GrayImage


@dataclass(frozen=True)
class ROI:
    """Rectangle in reference-frame pixel coordinates."""

    x0: int
    y0: int
    width: int
    height: int

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise DimensionError(f"ROI must have positive size, got {self.width}x{self.height}")
        if self.width * self.height < 9:
            raise DimensionError("ROI area must be at least 9 px")
        if self.x0 < 0 or self.y0 < 0:
            raise DimensionError("ROI origin must be non-negative")

    def validate_margin(self, image_shape: tuple[int, int], margin: int) -> None:
        """Require the ROI to sit at least `margin` px inside the image."""
        h, w = image_shape
        if (
            self.x0 < margin
            or self.y0 < margin
            or self.x0 + self.width > w - margin
            or self.y0 + self.height > h - margin
        ):
            raise DimensionError(
                f"ROI {self} must keep a margin of {margin} px inside a {w}x{h} image"
            )

    def grid(self) -> tuple[np.ndarray, np.ndarray]:
        """Absolute (x, y) coordinates of every ROI pixel."""
        yy, xx = np.mgrid[self.y0 : self.y0 + self.height, self.x0 : self.x0 + self.width]
        return xx.astype(np.float64), yy.astype(np.float64)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)


@dataclass(frozen=True)
class FlowConfig:
    """Solver knobs. The defaults match a 3x3 window single-level solve."""

    window_half: int = 1
    min_eigen_tol: float = 1e-4
    max_iterations: int = 20
    convergence_eps: float = 1e-3
    pyramid_levels: int = 1

    def __post_init__(self) -> None:
        if self.window_half < 1:
            raise DimensionError("window_half must be >= 1")
        if self.pyramid_levels < 1:
            raise DimensionError("pyramid_levels must be >= 1")
        if self.min_eigen_tol <= 0 or self.convergence_eps <= 0:
            raise DimensionError("tolerances must be positive")
        if self.max_iterations < 1:
            raise DimensionError("max_iterations must be >= 1")

    @property
    def displacement_bound(self) -> float:
        """Largest displacement the solver will trust, in px."""
        return float(2 ** (self.pyramid_levels + 1))


@dataclass(frozen=True)
class DisplacementField:
    """Per-pixel reference-frame displacement over an ROI.

    Invalid pixels carry u = v = 0 and never feed downstream statistics.
    Rasters are float32: they round-trip losslessly through archives.
    """

    roi: ROI
    u: np.ndarray
    v: np.ndarray
    valid: np.ndarray
    iterations_used: np.ndarray

    def __post_init__(self) -> None:
        for name in ("u", "v", "valid", "iterations_used"):
            arr = getattr(self, name)
            if arr.shape != self.roi.shape:
                raise DimensionError(f"{name} raster shape {arr.shape} != ROI shape {self.roi.shape}")
        if ((self.u[~self.valid] != 0).any()) or ((self.v[~self.valid] != 0).any()):
            raise ValueError("invalid pixels must carry zero displacement")

    @classmethod
    def zero(cls, roi: ROI) -> "DisplacementField":
        z = np.zeros(roi.shape, dtype=np.float32)
        return cls(
            roi=roi,
            u=z.copy(),
            v=z.copy(),
            valid=np.ones(roi.shape, dtype=bool),
            iterations_used=np.zeros(roi.shape, dtype=np.int32),
        )


@dataclass(frozen=True)
class GradientField:
    """Spatial derivatives and the temporal difference over one region."""

    ix: np.ndarray
    iy: np.ndarray
    it: np.ndarray

    def __post_init__(self) -> None:
        if not (self.ix.shape == self.iy.shape == self.it.shape):
            raise DimensionError("gradient rasters must share one shape")


@dataclass(frozen=True)
class WindowSolution:
    """Result of one windowed least-squares solve."""

    u: float
    v: float
    min_eigenvalue: float  # smaller eigenvalue of A^T A / window pixel count
    degenerate: bool


def _pixels(img) -> np.ndarray:
    return img.pixels if isinstance(img, GrayImage) else np.asarray(img, dtype=np.float64)


def spatial_gradients(img, region: ROI) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference intensity gradients over a region.

    The region must sit at least 1 px inside the image so the stencil
    never leaves it. Central differences are exact for quadratic images.
    """
    px = _pixels(img)
    region.validate_margin(px.shape, 1)
    x0, y0, w, h = region.x0, region.y0, region.width, region.height
    ix = (px[y0 : y0 + h, x0 + 1 : x0 + w + 1] - px[y0 : y0 + h, x0 - 1 : x0 + w - 1]) / 2.0
    iy = (px[y0 + 1 : y0 + h + 1, x0 : x0 + w] - px[y0 - 1 : y0 + h - 1, x0 : x0 + w]) / 2.0
    return ix, iy


def temporal_gradient(ref, deformed, region: ROI) -> np.ndarray:
    """Forward temporal difference (deformed - ref) over a region."""
    ref_px, def_px = _pixels(ref), _pixels(deformed)
    if ref_px.shape != def_px.shape:
        raise DimensionError(f"image shapes differ: {ref_px.shape} vs {def_px.shape}")
    region.validate_margin(ref_px.shape, 0)
    sl = np.s_[region.y0 : region.y0 + region.height, region.x0 : region.x0 + region.width]
    return def_px[sl] - ref_px[sl]


def _min_eigenvalue(sxx, sxy, syy):
    tr = sxx + syy
    disc = np.sqrt((sxx - syy) ** 2 + 4.0 * sxy**2)
    return (tr - disc) / 2.0


def solve_lk_window(
    grad: GradientField,
    center: tuple[int, int],
    window_half: int = 1,
    min_eigen_tol: float = 1e-4,
) -> WindowSolution:
    """One linearized solve of the normal equations over a single window.

    `center` is the (x, y) index into the gradient rasters. The structure
    matrix A^T A is built from the window's spatial gradients and the
    right-hand side from the negated temporal differences; its smaller
    eigenvalue, normalized by window pixel count, gates degeneracy
    (aperture-limited or textureless windows).
    """
    cx, cy = center
    wh = window_half
    h, w = grad.ix.shape
    if not (wh <= cx < w - wh and wh <= cy < h - wh):
        raise DimensionError(f"window at {center} leaves the {w}x{h} gradient raster")
    sl = np.s_[cy - wh : cy + wh + 1, cx - wh : cx + wh + 1]
    ix, iy, it = grad.ix[sl], grad.iy[sl], grad.it[sl]
    sxx = float(np.sum(ix * ix))
    sxy = float(np.sum(ix * iy))
    syy = float(np.sum(iy * iy))
    n = (2 * wh + 1) ** 2
    min_eig = float(_min_eigenvalue(sxx, sxy, syy)) / n
    if min_eig < min_eigen_tol:
        return WindowSolution(0.0, 0.0, min_eig, degenerate=True)
    bu = -float(np.sum(ix * it))
    bv = -float(np.sum(iy * it))
    det = sxx * syy - sxy * sxy
    return WindowSolution(
        u=(syy * bu - sxy * bv) / det,
        v=(sxx * bv - sxy * bu) / det,
        min_eigenvalue=min_eig,
        degenerate=False,
    )


def _box_sum(field: np.ndarray, window_half: int) -> np.ndarray:
    size = 2 * window_half + 1
    return uniform_filter(field, size=size, mode="constant") * (size * size)


def _bilinear(img: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    return map_coordinates(img, [ys, xs], order=1, mode="constant", cval=np.nan)


def _solve_level(
    ref: np.ndarray,
    deformed: np.ndarray,
    rect: ROI,
    cfg: FlowConfig,
    init_u: np.ndarray,
    init_v: np.ndarray,
):
    """Iterative per-window solve at one resolution. Returns f64 rasters."""
    wh = cfg.window_half
    x0, y0, w, h = rect.x0, rect.y0, rect.width, rect.height

    # Gradients over the rect expanded by the window, from the reference.
    expanded = ROI(x0 - wh, y0 - wh, w + 2 * wh, h + 2 * wh)
    ix, iy = spatial_gradients(ref, expanded)
    ref_exp = ref[y0 - wh : y0 + h + wh, x0 - wh : x0 + w + wh]

    crop = np.s_[wh : wh + h, wh : wh + w]
    sxx = _box_sum(ix * ix, wh)[crop]
    sxy = _box_sum(ix * iy, wh)[crop]
    syy = _box_sum(iy * iy, wh)[crop]

    # Reference-side window sums, accumulated offset by offset in exactly
    # the order the iteration accumulates the warped-side sums: the residual
    # then cancels bit-exactly when the deformed image equals the reference.
    offsets = [(dy, dx) for dy in range(-wh, wh + 1) for dx in range(-wh, wh + 1)]
    ix_views = [ix[wh + dy : wh + dy + h, wh + dx : wh + dx + w] for dy, dx in offsets]
    iy_views = [iy[wh + dy : wh + dy + h, wh + dx : wh + dx + w] for dy, dx in offsets]
    cu = np.zeros((h, w), dtype=np.float64)
    cv = np.zeros((h, w), dtype=np.float64)
    for (dy, dx), ixs, iys in zip(offsets, ix_views, iy_views):
        refs = ref_exp[wh + dy : wh + dy + h, wh + dx : wh + dx + w]
        cu += ixs * refs
        cv += iys * refs

    n_win = (2 * wh + 1) ** 2
    valid = _min_eigenvalue(sxx, sxy, syy) / n_win >= cfg.min_eigen_tol
    det = sxx * syy - sxy * sxy

    u = np.where(valid, init_u, 0.0).astype(np.float64)
    v = np.where(valid, init_v, 0.0).astype(np.float64)
    iterations = np.zeros((h, w), dtype=np.int32)
    xx, yy = rect.grid()

    active = valid.copy()
    for it_count in range(cfg.max_iterations):
        if not active.any():
            break
        ay, ax = np.nonzero(active)
        du_acc = np.zeros(ay.shape, dtype=np.float64)
        dv_acc = np.zeros(ay.shape, dtype=np.float64)
        base_x = xx[ay, ax] + u[ay, ax]
        base_y = yy[ay, ax] + v[ay, ax]
        for (dy, dx), ixs, iys in zip(offsets, ix_views, iy_views):
            sample = _bilinear(deformed, base_y + dy, base_x + dx)
            du_acc += ixs[ay, ax] * sample
            dv_acc += iys[ay, ax] * sample
        bu = cu[ay, ax] - du_acc
        bv = cv[ay, ax] - dv_acc
        det_a = det[ay, ax]
        step_u = (syy[ay, ax] * bu - sxy[ay, ax] * bv) / det_a
        step_v = (sxx[ay, ax] * bv - sxy[ay, ax] * bu) / det_a

        lost = ~np.isfinite(step_u) | ~np.isfinite(step_v)
        step_u[lost] = 0.0
        step_v[lost] = 0.0
        u[ay, ax] += step_u
        v[ay, ax] += step_v
        iterations[ay, ax] = it_count + 1

        converged = (np.abs(step_u) < cfg.convergence_eps) & (np.abs(step_v) < cfg.convergence_eps)
        valid[ay[lost], ax[lost]] = False
        active[ay[lost | converged], ax[lost | converged]] = False

    u[~valid] = 0.0
    v[~valid] = 0.0
    return u, v, valid, iterations


def _downsample(img: np.ndarray) -> np.ndarray:
    h, w = img.shape
    h2, w2 = h - h % 2, w - w % 2
    return img[:h2, :w2].reshape(h2 // 2, 2, w2 // 2, 2).mean(axis=(1, 3))


def _resize_bilinear(field: np.ndarray, src_rect: ROI, dst_rect: ROI, scale: float) -> np.ndarray:
    """Sample a rect-local raster onto another rect's grid, `scale` = dst->src."""
    xx, yy = dst_rect.grid()
    sx = np.clip(xx * scale - src_rect.x0, 0, src_rect.width - 1)
    sy = np.clip(yy * scale - src_rect.y0, 0, src_rect.height - 1)
    return map_coordinates(field, [sy, sx], order=1, mode="nearest")


def _level_rect(roi: ROI, level: int, image_shape: tuple[int, int], margin: int) -> ROI | None:
    scale = 2**level
    h, w = image_shape
    x0 = max(margin, roi.x0 // scale)
    y0 = max(margin, roi.y0 // scale)
    x1 = min(w - margin, (roi.x0 + roi.width) // scale)
    y1 = min(h - margin, (roi.y0 + roi.height) // scale)
    if x1 - x0 < 3 or y1 - y0 < 3:
        return None
    return ROI(x0, y0, x1 - x0, y1 - y0)


def solve_dense(
    ref,
    deformed,
    roi: ROI,
    cfg: FlowConfig = FlowConfig(),
    init: DisplacementField | None = None,
) -> DisplacementField:
    """Dense displacement field between a reference/deformed image pair.

    Iterates warp-and-solve per ROI pixel until the update falls below
    convergence_eps or max_iterations is hit. With pyramid_levels > 1 the
    solve runs coarse to fine on 2x box-downsampled copies, doubling and
    propagating estimates between levels. `init` seeds the estimate (at
    the coarsest level when a pyramid is active); pixels invalid in the
    seed start from zero.

    Pure function: identical inputs give bit-identical fields.
    """
    ref_px, def_px = _pixels(ref), _pixels(deformed)
    if ref_px.shape != def_px.shape:
        raise DimensionError(f"image shapes differ: {ref_px.shape} vs {def_px.shape}")
    margin = cfg.window_half + 1
    roi.validate_margin(ref_px.shape, margin)
    if init is not None and init.roi != roi:
        raise DimensionError(f"init ROI {init.roi} != solve ROI {roi}")

    pyr_ref, pyr_def = [ref_px], [def_px]
    for _ in range(cfg.pyramid_levels - 1):
        pyr_ref.append(_downsample(pyr_ref[-1]))
        pyr_def.append(_downsample(pyr_def[-1]))

    # Coarsest-first level rects; levels too small to host the window drop out.
    rects: list[ROI | None] = [
        _level_rect(roi, k, pyr_ref[k].shape, margin) if k > 0 else roi
        for k in range(cfg.pyramid_levels)
    ]

    u = v = None
    prev_rect: ROI | None = None
    for k in range(cfg.pyramid_levels - 1, -1, -1):
        rect = rects[k]
        if rect is None:
            continue
        if u is not None:
            # Coming up one level: halve coordinates into the coarse rect,
            # double the displacement values.
            init_u = _resize_bilinear(u, prev_rect, rect, 0.5) * 2.0
            init_v = _resize_bilinear(v, prev_rect, rect, 0.5) * 2.0
        elif init is not None:
            scale = float(2**k)
            iu = np.where(init.valid, init.u, 0.0).astype(np.float64)
            iv = np.where(init.valid, init.v, 0.0).astype(np.float64)
            init_u = _resize_bilinear(iu, roi, rect, scale) / scale
            init_v = _resize_bilinear(iv, roi, rect, scale) / scale
        else:
            init_u = np.zeros(rect.shape)
            init_v = np.zeros(rect.shape)
        u, v, valid, iterations = _solve_level(pyr_ref[k], pyr_def[k], rect, cfg, init_u, init_v)
        prev_rect = rect

    bound = cfg.displacement_bound
    in_bound = (np.abs(u) <= bound) & (np.abs(v) <= bound)
    valid &= in_bound
    u = np.where(valid, u, 0.0)
    v = np.where(valid, v, 0.0)
    return DisplacementField(
        roi=roi,
        u=u.astype(np.float32),
        v=v.astype(np.float32),
        valid=valid,
        iterations_used=iterations,
    )


def accumulate(total: DisplacementField, increment: DisplacementField) -> DisplacementField:
    """Compose displacement maps: total'(x) = increment(x + total(x)) + total(x).

    The increment is sampled bilinearly at each pixel's displaced position;
    touching any invalid or out-of-ROI sample invalidates the result pixel
    (validity is AND-ed through the composition).
    """
    if total.roi != increment.roi:
        raise DimensionError(f"ROI mismatch: {total.roi} vs {increment.roi}")
    roi = total.roi
    xx, yy = roi.grid()
    lx = xx + total.u.astype(np.float64) - roi.x0
    ly = yy + total.v.astype(np.float64) - roi.y0

    inc_u = _bilinear(increment.u.astype(np.float64), ly, lx)
    inc_v = _bilinear(increment.v.astype(np.float64), ly, lx)
    inc_ok = map_coordinates(
        increment.valid.astype(np.float64), [ly, lx], order=1, mode="constant", cval=0.0
    )
    ok = (
        total.valid
        & np.isfinite(inc_u)
        & np.isfinite(inc_v)
        & (inc_ok >= 1.0 - 1e-9)
    )
    u = np.where(ok, total.u.astype(np.float64) + inc_u, 0.0)
    v = np.where(ok, total.v.astype(np.float64) + inc_v, 0.0)
    return DisplacementField(
        roi=roi,
        u=u.astype(np.float32),
        v=v.astype(np.float32),
        valid=ok,
        iterations_used=total.iterations_used.copy(),
    )
