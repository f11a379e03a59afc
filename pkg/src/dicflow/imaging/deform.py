"""Analytic deformation maps, keyframe schedules, and image warping.

Maps are forward material displacements: a point at reference position X
appears at X + d(X) in the deformed image. Warping evaluates the exact
inverse of that map per pixel, so images rendered here carry no forward/
inverse approximation error and can serve as ground truth for the solver.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import map_coordinates
from scipy.special import erf

from ..errors import ConfigError, ParseError
from .image import GrayImage


def _center(shape: tuple[int, int]) -> tuple[float, float]:
    h, w = shape
    return (w - 1) / 2.0, (h - 1) / 2.0


@dataclass(frozen=True)
class Translate:
    """Uniform translation by (u, v) pixels."""

    u: float = 0.0
    v: float = 0.0
    kind = "translate"

    def params(self) -> tuple[float, ...]:
        return (self.u, self.v)

    def displacement(self, xx, yy, shape):
        return np.full_like(xx, self.u, dtype=np.float64), np.full_like(yy, self.v, dtype=np.float64)

    def source_coords(self, xx, yy, shape):
        return xx - self.u, yy - self.v


@dataclass(frozen=True)
class Affine:
    """Homogeneous displacement-gradient field about the image center."""

    dudx: float = 0.0
    dudy: float = 0.0
    dvdx: float = 0.0
    dvdy: float = 0.0
    kind = "affine"

    def params(self) -> tuple[float, ...]:
        return (self.dudx, self.dudy, self.dvdx, self.dvdy)

    def displacement(self, xx, yy, shape):
        cx, cy = _center(shape)
        rx, ry = xx - cx, yy - cy
        return self.dudx * rx + self.dudy * ry, self.dvdx * rx + self.dvdy * ry

    def source_coords(self, xx, yy, shape):
        # Forward positions are x = c + (I + G)(X - c); invert the 2x2 exactly.
        cx, cy = _center(shape)
        a, b = 1.0 + self.dudx, self.dudy
        c, d = self.dvdx, 1.0 + self.dvdy
        det = a * d - b * c
        if abs(det) < 1e-12:
            raise ConfigError("affine map is non-invertible (det(I+G) ~ 0)")
        rx, ry = xx - cx, yy - cy
        sx = cx + (d * rx - b * ry) / det
        sy = cy + (-c * rx + a * ry) / det
        return sx, sy


@dataclass(frozen=True)
class Rotate:
    """Rigid rotation by theta degrees about the image center."""

    theta_deg: float = 0.0
    kind = "rotate"

    def params(self) -> tuple[float, ...]:
        return (self.theta_deg,)

    def displacement(self, xx, yy, shape):
        cx, cy = _center(shape)
        th = math.radians(self.theta_deg)
        ct, st = math.cos(th), math.sin(th)
        rx, ry = xx - cx, yy - cy
        return (ct - 1.0) * rx - st * ry, st * rx + (ct - 1.0) * ry

    def source_coords(self, xx, yy, shape):
        cx, cy = _center(shape)
        th = math.radians(self.theta_deg)
        ct, st = math.cos(th), math.sin(th)
        rx, ry = xx - cx, yy - cy
        return cx + ct * rx + st * ry, cy - st * rx + ct * ry


def _smooth_step(z):
    # Unit step smoothed by a Gaussian: 0.5 (1 + erf(z / sqrt(2))).
    return 0.5 * (1.0 + erf(z / math.sqrt(2.0)))


def _gauss_pdf(z):
    return np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class Band:
    """Localized opening bands across horizontal center lines.

    Each band displaces material above its center line upward along y by
    `amplitude`, with a Gaussian strain profile of the given width, so the
    longitudinal strain peaks at amplitude / (width * sqrt(2*pi)) on the
    line. Multiple bands sum.
    """

    bands: tuple[tuple[float, float, float], ...]  # (amplitude, center_y, width)
    kind = "band"

    def __post_init__(self) -> None:
        for a, c, w in self.bands:
            if w <= 0.0:
                raise ConfigError(f"band width must be positive, got {w}")
            if a < 0.0:
                raise ConfigError(f"band amplitude must be non-negative, got {a}")

    def params(self) -> tuple[float, ...]:
        return tuple(p for band in self.bands for p in band)

    def _v_of(self, yy):
        v = np.zeros_like(np.asarray(yy, dtype=np.float64))
        for a, c, w in self.bands:
            v += a * _smooth_step((yy - c) / w)
        return v

    def strain_profile(self, yy):
        """Exact dv/dy along y (the imposed longitudinal stretch)."""
        g = np.zeros_like(np.asarray(yy, dtype=np.float64))
        for a, c, w in self.bands:
            g += (a / w) * _gauss_pdf((yy - c) / w)
        return g

    def displacement(self, xx, yy, shape):
        return np.zeros_like(np.asarray(xx, dtype=np.float64)), self._v_of(yy)

    def source_coords(self, xx, yy, shape):
        # Forward map y = Y + v(Y) is monotone for non-negative amplitudes;
        # invert per row with Newton (v depends on y only).
        rows = np.asarray(yy, dtype=np.float64)
        y_unique, inverse = np.unique(rows, return_inverse=True)
        src = y_unique.copy()
        for _ in range(64):
            resid = src + self._v_of(src) - y_unique
            if np.max(np.abs(resid)) < 1e-12:
                break
            src -= resid / (1.0 + self.strain_profile(src))
        return np.asarray(xx, dtype=np.float64).copy(), src[inverse].reshape(rows.shape)


DisplacementMap = Translate | Affine | Rotate | Band

IDENTITY = Translate(0.0, 0.0)


def is_identity(dmap: DisplacementMap) -> bool:
    if isinstance(dmap, Band):
        return all(a == 0.0 for a, _, _ in dmap.bands)
    return all(p == 0.0 for p in dmap.params())


def _zero_like(dmap: DisplacementMap) -> DisplacementMap:
    if isinstance(dmap, Band):
        return Band(tuple((0.0, c, w) for _, c, w in dmap.bands))
    return type(dmap)(*(0.0 for _ in dmap.params()))


def _lerp_maps(m0: DisplacementMap, m1: DisplacementMap, alpha: float) -> DisplacementMap:
    if type(m0) is not type(m1):
        if is_identity(m0):
            m0 = _zero_like(m1)
        elif is_identity(m1):
            m1 = _zero_like(m0)
        else:
            raise ConfigError(
                f"cannot interpolate between map kinds {m0.kind!r} and {m1.kind!r}"
            )
    p0, p1 = m0.params(), m1.params()
    if len(p0) != len(p1):
        raise ConfigError("cannot interpolate between bands of different counts")
    params = tuple(a + alpha * (b - a) for a, b in zip(p0, p1))
    if isinstance(m0, Band):
        return Band(tuple(params[i : i + 3] for i in range(0, len(params), 3)))
    return type(m0)(*params)


@dataclass(frozen=True)
class DeformationSchedule:
    """Keyframed deformation: (time, map) pairs, linearly interpolated.

    Times must be strictly increasing and start at 0 with the identity map.
    """

    keyframes: tuple[tuple[float, DisplacementMap], ...]

    def __post_init__(self) -> None:
        if not self.keyframes:
            raise ConfigError("schedule needs at least one keyframe")
        times = [t for t, _ in self.keyframes]
        if times[0] != 0.0:
            raise ConfigError("schedule must start at t=0")
        if any(t1 <= t0 for t0, t1 in zip(times, times[1:])):
            raise ConfigError("schedule times must be strictly increasing")
        if not is_identity(self.keyframes[0][1]):
            raise ConfigError("schedule must start with the identity map")

    @property
    def duration(self) -> float:
        return self.keyframes[-1][0]

    def at(self, t: float) -> DisplacementMap:
        if t < 0.0:
            raise ValueError(f"negative schedule time {t}")
        if t >= self.duration:
            return self.keyframes[-1][1]
        times = [kt for kt, _ in self.keyframes]
        hi = next(i for i, kt in enumerate(times) if kt > t)
        t0, m0 = self.keyframes[hi - 1]
        t1, m1 = self.keyframes[hi]
        return _lerp_maps(m0, m1, (t - t0) / (t1 - t0))


_MAP_KEYS = {
    "translate": ("u", "v"),
    "affine": ("dudx", "dudy", "dvdx", "dvdy"),
    "rotate": ("theta_deg",),
}


def map_from_json(obj: dict) -> DisplacementMap:
    kind = obj.get("kind")
    if kind == "band":
        if "bands" in obj:
            raw = obj["bands"]
        else:
            raw = [obj]
        return Band(tuple((float(b["a"]), float(b["center"]), float(b["width"])) for b in raw))
    if kind not in _MAP_KEYS:
        raise ParseError(f"unknown map kind {kind!r}")
    cls = {"translate": Translate, "affine": Affine, "rotate": Rotate}[kind]
    return cls(*(float(obj.get(k, 0.0)) for k in _MAP_KEYS[kind]))


def map_to_json(dmap: DisplacementMap) -> dict:
    if isinstance(dmap, Band):
        return {
            "kind": "band",
            "bands": [{"a": a, "center": c, "width": w} for a, c, w in dmap.bands],
        }
    return {"kind": dmap.kind, **dict(zip(_MAP_KEYS[dmap.kind], dmap.params()))}


def schedule_from_json(entries: list) -> DeformationSchedule:
    """Build a schedule from [{"t": seconds, "map": {...}}, ...]."""
    try:
        frames = tuple((float(e["t"]), map_from_json(e["map"])) for e in entries)
    except (KeyError, TypeError) as exc:
        raise ParseError(f"malformed schedule entry: {exc}") from exc
    return DeformationSchedule(frames)


def schedule_to_json(schedule: DeformationSchedule) -> list:
    return [{"t": t, "map": map_to_json(m)} for t, m in schedule.keyframes]


def warp_pixels(pixels: np.ndarray, dmap: DisplacementMap, background: float = 0.0) -> np.ndarray:
    """Warp a raster by a displacement map (deformed = ref pulled back).

    Bicubic sampling; out-of-domain source samples take `background`.
    Integer-valued source grids (identity, integer translations) bypass
    interpolation and are exact.
    """
    h, w = pixels.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    sx, sy = dmap.source_coords(xx, yy, (h, w))

    du, dv = xx - sx, yy - sy
    max_mag = float(np.max(np.hypot(du, dv)))
    if max_mag >= min(w, h) / 4.0:
        raise ConfigError(
            f"displacement magnitude {max_mag:.2f} px exceeds min(w,h)/4 = {min(w, h) / 4.0:.2f}"
        )

    inside = (sx >= 0.0) & (sx <= w - 1.0) & (sy >= 0.0) & (sy <= h - 1.0)
    if np.array_equal(sx, np.rint(sx)) and np.array_equal(sy, np.rint(sy)):
        ix = np.clip(sx.astype(np.int64), 0, w - 1)
        iy = np.clip(sy.astype(np.int64), 0, h - 1)
        out = pixels[iy, ix]
        return np.where(inside, out, background)

    out = map_coordinates(pixels, [sy, sx], order=3, mode="grid-constant", cval=background)
    out = np.where(inside, out, background)
    return np.clip(out, 0.0, 1.0)


def warp_image(reference: GrayImage, dmap: DisplacementMap, background: float = 0.0) -> GrayImage:
    """Render the deformed counterpart of a reference frame."""
    return GrayImage(
        warp_pixels(reference.pixels, dmap, background),
        timestamp=reference.timestamp,
        frame_index=reference.frame_index,
    )
