"""Grayscale frame container and color conversion."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionError

MIN_SIDE = 8

# ITU-R BT.601 luma weights.
LUMA_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class GrayImage:
    """A timestamped single-channel intensity raster.

    Intensities are stored row-major as a float array in [0, 1]; 8-bit
    sources are normalized as v/255 at the boundary so all downstream math
    is independent of bit depth.
    """

    pixels: np.ndarray
    timestamp: float = 0.0
    frame_index: int = 0

    def __post_init__(self) -> None:
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2:
            raise DimensionError(f"expected a 2-D raster, got shape {px.shape}")
        h, w = px.shape
        if h < MIN_SIDE or w < MIN_SIDE:
            raise DimensionError(f"image must be at least {MIN_SIDE}x{MIN_SIDE}, got {w}x{h}")
        if not np.isfinite(px).all():
            raise ValueError("intensities must be finite")
        if px.min() < 0.0 or px.max() > 1.0:
            raise ValueError("intensities must lie in [0, 1]")
        if self.timestamp < 0.0:
            raise ValueError("timestamp must be non-negative")
        if px.flags.writeable:
            # own a frozen copy rather than locking the caller's array
            px = px.copy()
            px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def with_meta(self, timestamp: float, frame_index: int) -> "GrayImage":
        """Copy of this frame carrying new acquisition metadata."""
        return GrayImage(self.pixels, timestamp=timestamp, frame_index=frame_index)


def quantize_to_u8(pixels: np.ndarray) -> np.ndarray:
    """Round a [0, 1] raster to 8-bit gray levels."""
    return np.round(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)


def u8_to_unit(levels: np.ndarray) -> np.ndarray:
    """Normalize an 8-bit raster to [0, 1] floats (v/255)."""
    return np.asarray(levels, dtype=np.float64) / 255.0


def to_grayscale(color, timestamp: float = 0.0, frame_index: int = 0) -> GrayImage:
    """Convert a 3-channel raster in [0, 1] to a luminance GrayImage.

    Parameters
    ----------
    color : array of shape (H, W, 3), or a sequence of three (H, W) rasters.

    Raises
    ------
    DimensionError if the channels do not share one shape.
    """
    if isinstance(color, np.ndarray) and color.ndim == 3:
        if color.shape[2] != 3:
            raise DimensionError(f"expected 3 channels, got {color.shape[2]}")
        channels = [color[..., i] for i in range(3)]
    else:
        channels = [np.asarray(c, dtype=np.float64) for c in color]
        if len(channels) != 3:
            raise DimensionError(f"expected 3 channels, got {len(channels)}")
        if not (channels[0].shape == channels[1].shape == channels[2].shape):
            raise DimensionError(
                "channel shapes differ: "
                + ", ".join(str(c.shape) for c in channels)
            )
    r, g, b = (np.asarray(c, dtype=np.float64) for c in channels)
    # Anchored at the blue channel so r = g = b stays exactly identity.
    luma = b + LUMA_WEIGHTS[0] * (r - b) + LUMA_WEIGHTS[1] * (g - b)
    return GrayImage(np.clip(luma, 0.0, 1.0), timestamp=timestamp, frame_index=frame_index)
