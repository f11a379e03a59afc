"""Frame sources: the camera abstraction plus simulated and replay backends.

A FrameSource produces timestamped grayscale frames at a commanded rate.
Rate commands take effect at batch boundaries; real machine-vision cameras
go dormant for a moment when reconfigured, which the simulated source
models as a fixed activation delay added to simulated time.
"""

from __future__ import annotations

import json
from abc import ABC, abstractmethod
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from ..errors import ConfigError, LoadError, ParseError
from .deform import DeformationSchedule, warp_pixels
from .image import GrayImage, quantize_to_u8, u8_to_unit
from .speckle import SpeckleSpec, generate_speckle

DEFAULT_ACTIVATION_DELAY = 1.0


class FrameSource(ABC):
    """Single-consumer stream of frames with a settable frame rate."""

    activation_delay: float = 0.0

    @abstractmethod
    def set_rate(self, fps: float) -> None:
        """Command a new frame rate, effective from the next frame."""

    @abstractmethod
    def next_frame(self) -> GrayImage | None:
        """Produce the next frame, or None at end of stream."""


class SimulatedSource(FrameSource):
    """Synthetic camera: a speckle pattern deformed per a schedule.

    Frames are warped from the pristine pattern at the current simulated
    time, noise-corrupted, and quantized to 8-bit levels like a real
    sensor, so archived PNGs replay bit-identically. Every set_rate call
    after streaming has begun advances simulated time by the activation
    delay, modeling camera re-activation between batches.
    """

    def __init__(
        self,
        spec: SpeckleSpec,
        schedule: DeformationSchedule,
        noise_sigma: float = 0.0,
        fps: float = 1.0,
        activation_delay: float = DEFAULT_ACTIVATION_DELAY,
    ):
        if noise_sigma < 0.0:
            raise ConfigError("noise_sigma must be non-negative")
        if fps <= 0.0:
            raise ConfigError("fps must be positive")
        self.spec = spec
        self.schedule = schedule
        self.noise_sigma = noise_sigma
        self.fps = fps
        self.activation_delay = activation_delay
        self._reference = generate_speckle(spec).pixels
        self._time = 0.0
        self._index = 0

    def set_rate(self, fps: float) -> None:
        if fps <= 0.0:
            raise ConfigError("fps must be positive")
        if self._index > 0:
            self._time += self.activation_delay
        self.fps = fps

    def next_frame(self) -> GrayImage | None:
        if self._time > self.schedule.duration + 1e-9:
            return None
        dmap = self.schedule.at(min(self._time, self.schedule.duration))
        pixels = warp_pixels(self._reference, dmap, background=self.spec.background_level)
        if self.noise_sigma > 0.0:
            rng = np.random.default_rng([self.spec.rng_seed, self._index])
            pixels = pixels + rng.normal(0.0, self.noise_sigma, size=pixels.shape)
        pixels = u8_to_unit(quantize_to_u8(pixels))
        frame = GrayImage(pixels, timestamp=self._time, frame_index=self._index)
        self._time += 1.0 / self.fps
        self._index += 1
        return frame


def load_frame_png(path: Path, timestamp: float = 0.0, frame_index: int = 0) -> GrayImage:
    """Load an 8-bit grayscale PNG as a normalized frame."""
    try:
        with Image.open(path) as im:
            levels = np.asarray(im.convert("L"))
    except FileNotFoundError as exc:
        raise LoadError(f"frame file not found: {path}") from exc
    except (UnidentifiedImageError, OSError) as exc:
        raise LoadError(f"unreadable image {path}: {exc}") from exc
    return GrayImage(u8_to_unit(levels), timestamp=timestamp, frame_index=frame_index)


def read_replay_manifest(manifest_path: str | Path) -> list[tuple[Path, float]]:
    """Parse a replay manifest into (path, timestamp) pairs.

    The manifest is JSON: {"frames": [{"path": ..., "timestamp": ...}]},
    paths relative to the manifest file. Missing files and non-monotone
    timestamps are rejected up front, naming the offender.
    """
    manifest_path = Path(manifest_path)
    try:
        payload = json.loads(manifest_path.read_text())
    except FileNotFoundError as exc:
        raise LoadError(f"manifest not found: {manifest_path}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON in {manifest_path}: {exc}") from exc
    try:
        entries = [(str(f["path"]), float(f["timestamp"])) for f in payload["frames"]]
    except (KeyError, TypeError) as exc:
        raise ParseError(f"malformed manifest {manifest_path}: {exc}") from exc

    frames: list[tuple[Path, float]] = []
    prev_ts = -np.inf
    for rel, ts in entries:
        path = manifest_path.parent / rel
        if not path.is_file():
            raise LoadError(f"frame file missing: {path}")
        if ts <= prev_ts:
            raise LoadError(f"non-monotone timestamp {ts} at {path}")
        prev_ts = ts
        frames.append((path, ts))
    return frames


class ReplaySource(FrameSource):
    """Serves recorded frames in timestamp order.

    Until set_rate is called the recording plays back frame for frame.
    A rate command switches to nearest-timestamp subsampling on a 1/fps
    grid anchored at the next unserved frame; the stream ends when the
    grid runs past the recording.
    """

    def __init__(self, manifest_path: str | Path):
        self._frames = read_replay_manifest(manifest_path)
        self._pos = 0
        self._index = 0
        self._period: float | None = None
        self._cursor = 0.0

    def set_rate(self, fps: float) -> None:
        if fps <= 0.0:
            raise ConfigError("fps must be positive")
        self._period = 1.0 / fps
        if self._pos < len(self._frames):
            self._cursor = self._frames[self._pos][1]

    def next_frame(self) -> GrayImage | None:
        if self._pos >= len(self._frames):
            return None
        if self._period is None:
            path, ts = self._frames[self._pos]
            self._pos += 1
        else:
            if self._cursor > self._frames[-1][1] + 1e-9:
                self._pos = len(self._frames)
                return None
            remaining = self._frames[self._pos :]
            offsets = [abs(ts - self._cursor) for _, ts in remaining]
            best = int(np.argmin(offsets))
            path, ts = remaining[best]
            self._pos += best + 1
            self._cursor += self._period
        frame = load_frame_png(path, timestamp=ts, frame_index=self._index)
        self._index += 1
        return frame
