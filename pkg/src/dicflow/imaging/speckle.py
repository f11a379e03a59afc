"""Synthetic speckle pattern generation.

Stands in for a spray-painted speckle coat: random dark dots on a light
background (or the inverse), anti-aliased and optionally blurred. Patterns
are deterministic for a fixed seed so simulated runs are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from ..errors import ConfigError, DimensionError
from .image import MIN_SIDE, GrayImage


@dataclass(frozen=True)
class SpeckleSpec:
    """Parameters of a synthetic speckle pattern.

    dot_density is expressed in dots per 1000 px² so the same number reads
    naturally across image sizes.
    """

    width: int
    height: int
    dot_density: float = 5.0
    dot_radius_range: tuple[float, float] = (1.0, 3.0)
    background_level: float = 0.85
    dot_level: float = 0.15
    blur_sigma: float = 0.8
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.width < MIN_SIDE or self.height < MIN_SIDE:
            raise DimensionError(
                f"speckle image must be at least {MIN_SIDE}x{MIN_SIDE}, "
                f"got {self.width}x{self.height}"
            )
        rmin, rmax = self.dot_radius_range
        if rmin > rmax:
            raise ConfigError(f"min radius {rmin} exceeds max radius {rmax}")
        if rmin < 0.5:
            raise ConfigError("dot radii must be at least 0.5 px")
        if self.dot_density < 0.0:
            raise ConfigError("dot_density must be non-negative")
        if self.blur_sigma < 0.0:
            raise ConfigError("blur_sigma must be non-negative")
        for name in ("background_level", "dot_level"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")


def spec_to_json(spec: SpeckleSpec) -> dict:
    return {
        "width": spec.width,
        "height": spec.height,
        "dot_density": spec.dot_density,
        "dot_radius_range": list(spec.dot_radius_range),
        "background_level": spec.background_level,
        "dot_level": spec.dot_level,
        "blur_sigma": spec.blur_sigma,
        "rng_seed": spec.rng_seed,
    }


def spec_from_json(obj: dict) -> SpeckleSpec:
    try:
        return SpeckleSpec(
            width=int(obj["width"]),
            height=int(obj["height"]),
            dot_density=float(obj.get("dot_density", 5.0)),
            dot_radius_range=tuple(float(r) for r in obj.get("dot_radius_range", (1.0, 3.0))),
            background_level=float(obj.get("background_level", 0.85)),
            dot_level=float(obj.get("dot_level", 0.15)),
            blur_sigma=float(obj.get("blur_sigma", 0.8)),
            rng_seed=int(obj.get("rng_seed", 0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid speckle spec: {exc}") from exc


def generate_speckle(spec: SpeckleSpec) -> GrayImage:
    """Render a speckle pattern from its spec.

    Dot count is Poisson in the image area, positions uniform (overlap
    allowed, mimicking real spray), edges anti-aliased by pixel coverage.
    """
    rng = np.random.default_rng(spec.rng_seed)
    w, h = spec.width, spec.height
    n_dots = int(rng.poisson(spec.dot_density * w * h / 1000.0))
    xs = rng.uniform(0.0, w, size=n_dots)
    ys = rng.uniform(0.0, h, size=n_dots)
    rmin, rmax = spec.dot_radius_range
    radii = rng.uniform(rmin, rmax, size=n_dots)

    # Union of anti-aliased disks: per-pixel coverage alpha, max over dots.
    alpha = np.zeros((h, w), dtype=np.float64)
    for cx, cy, r in zip(xs, ys, radii):
        x0 = max(0, int(np.floor(cx - r - 1)))
        x1 = min(w, int(np.ceil(cx + r + 2)))
        y0 = max(0, int(np.floor(cy - r - 1)))
        y1 = min(h, int(np.ceil(cy + r + 2)))
        if x0 >= x1 or y0 >= y1:
            continue
        yy, xx = np.mgrid[y0:y1, x0:x1]
        dist = np.hypot(xx - cx, yy - cy)
        patch = np.clip(r + 0.5 - dist, 0.0, 1.0)
        np.maximum(alpha[y0:y1, x0:x1], patch, out=alpha[y0:y1, x0:x1])

    pixels = spec.background_level + alpha * (spec.dot_level - spec.background_level)
    if spec.blur_sigma > 0.0:
        pixels = gaussian_filter(pixels, sigma=spec.blur_sigma, mode="nearest")
    return GrayImage(np.clip(pixels, 0.0, 1.0))
