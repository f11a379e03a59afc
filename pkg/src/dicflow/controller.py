"""The closed-loop run: batch capture, between-batch analysis, rate control.

A run alternates fixed-duration capture batches with an analysis step:
flow is solved between the first and last frames of the batch, converted
to Green strain, summarized, and the summary drives the frame rate of the
next batch through a threshold table. Rate changes apply at batch
boundaries only; within a batch the rate is constant.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

from .errors import ConfigError, DicflowError, InsufficientDataError, LoadError
from .imaging.image import GrayImage
from .imaging.sources import FrameSource
from .opticalflow import ROI, DisplacementField, FlowConfig, accumulate, solve_dense
from .strain import (
    DEFAULT_K_FRACTIONS,
    StrainField,
    StrainStats,
    displacement_gradients,
    green_strain,
    strain_stats,
)

METRIC_MAX = "max_strain"
METRIC_DEL_MAX = "del_max_strain"
METRIC_CONSTANT = "constant"
METRICS = (METRIC_MAX, METRIC_DEL_MAX, METRIC_CONSTANT)

STRATEGY_CUMULATIVE = "cumulative"
STRATEGY_BATCH_PAIR = "batch_pair"
STRATEGIES = (STRATEGY_CUMULATIVE, STRATEGY_BATCH_PAIR)

# Threshold tables: (strain lower bound -> fps), order-of-magnitude steps
# spanning the 1..133 fps hardware envelope. Fully overridable in config.
DEFAULT_MAX_TABLE = ((0.01, 4.0), (0.03, 16.0), (0.06, 64.0))
DEFAULT_DEL_MAX_TABLE = ((0.002, 4.0), (0.01, 16.0), (0.03, 64.0))

HARDWARE_FPS_MAX = 133.0


@dataclass(frozen=True)
class RatePolicy:
    """Threshold table mapping a strain metric to a frame rate."""

    metric: str = METRIC_MAX
    thresholds: tuple[tuple[float, float], ...] = DEFAULT_MAX_TABLE
    base_fps: float = 1.0
    fps_min: float = 1.0
    fps_max: float = HARDWARE_FPS_MAX
    topk_fraction: float | None = None

    def __post_init__(self) -> None:
        if self.metric not in METRICS:
            raise ConfigError(f"unknown metric {self.metric!r}, expected one of {METRICS}")
        if not 0 < self.fps_min <= self.fps_max:
            raise ConfigError(f"need 0 < fps_min <= fps_max, got [{self.fps_min}, {self.fps_max}]")
        if not self.fps_min <= self.base_fps <= self.fps_max:
            raise ConfigError(f"base_fps {self.base_fps} outside [{self.fps_min}, {self.fps_max}]")
        bounds = [b for b, _ in self.thresholds]
        if any(b1 <= b0 for b0, b1 in zip(bounds, bounds[1:])):
            raise ConfigError("threshold lower bounds must be strictly increasing")
        rates = [f for _, f in self.thresholds]
        if any(f1 < f0 for f0, f1 in zip(rates, rates[1:])):
            raise ConfigError("threshold fps must be non-decreasing (more strain never lowers the rate)")
        for f in rates:
            if not self.fps_min <= f <= self.fps_max:
                raise ConfigError(f"table fps {f} outside [{self.fps_min}, {self.fps_max}]")
        if self.topk_fraction is not None and not 0 < self.topk_fraction < 1:
            raise ConfigError(f"topk_fraction must be in (0, 1), got {self.topk_fraction}")


def default_policy(metric: str) -> RatePolicy:
    if metric == METRIC_DEL_MAX:
        return RatePolicy(metric=metric, thresholds=DEFAULT_DEL_MAX_TABLE)
    if metric == METRIC_CONSTANT:
        return RatePolicy(metric=metric, thresholds=())
    return RatePolicy(metric=METRIC_MAX, thresholds=DEFAULT_MAX_TABLE)


def decide_rate(policy: RatePolicy, stats: StrainStats | None) -> tuple[float, int | None]:
    """Next-batch fps and the 1-based threshold row that fired (None = base).

    Pure function of (policy, stats): the fps of the highest table row whose
    lower bound the metric value reaches, else base_fps, clamped to the
    policy's rate bounds.
    """

    def clamp(fps: float) -> float:
        return min(max(fps, policy.fps_min), policy.fps_max)

    if policy.metric == METRIC_CONSTANT or stats is None:
        return clamp(policy.base_fps), None
    if policy.metric == METRIC_MAX:
        if policy.topk_fraction is not None:
            value = stats.topk_mean_eyy[policy.topk_fraction]
        else:
            value = stats.max_eyy
    else:
        if policy.topk_fraction is not None:
            value = stats.del_topk_eyy[policy.topk_fraction]
        else:
            value = stats.del_max_eyy
    fired: int | None = None
    fps = policy.base_fps
    for row, (bound, table_fps) in enumerate(policy.thresholds, start=1):
        if value >= bound:
            fps, fired = table_fps, row
    return clamp(fps), fired


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs beyond the frame source itself."""

    policy: RatePolicy = field(default_factory=RatePolicy)
    batch_duration: float = 2.0
    roi: ROI | None = None  # None = interactive: await ROI from the operator
    flow: FlowConfig = field(default_factory=FlowConfig)
    reference_strategy: str = STRATEGY_CUMULATIVE
    max_batches: int | None = None
    strain_smooth_sigma: float = 0.0
    metric_component: str = "eyy"
    k_fractions: tuple[float, ...] = DEFAULT_K_FRACTIONS
    phase_split: float | None = None

    def __post_init__(self) -> None:
        if self.batch_duration <= 0:
            raise ConfigError("batch_duration must be positive")
        if self.reference_strategy not in STRATEGIES:
            raise ConfigError(f"unknown reference_strategy {self.reference_strategy!r}")
        if self.max_batches is not None and self.max_batches < 1:
            raise ConfigError("max_batches must be >= 1")
        if self.policy.topk_fraction is not None and self.policy.topk_fraction not in self.k_fractions:
            object.__setattr__(
                self, "k_fractions", tuple(sorted({*self.k_fractions, self.policy.topk_fraction}))
            )


@dataclass(frozen=True)
class BatchRecord:
    """Ledger entry for one capture batch."""

    batch_index: int
    fps_used: float
    frame_indices: tuple[int, int]
    frame_count: int
    capture_window: tuple[float, float]
    compute_duration: float
    stats: StrainStats | None
    next_fps: float
    fired_row: int | None
    flagged: bool = False
    flag_reason: str = ""


def run_batch(source: FrameSource, fps: float, duration: float) -> list[GrayImage]:
    """Capture one batch: round(duration * fps) frames at constant rate.

    A shorter list signals end of stream mid-batch (partial batch).
    """
    expected = max(2, round(duration * fps))
    frames: list[GrayImage] = []
    for _ in range(expected):
        frame = source.next_frame()
        if frame is None:
            break
        frames.append(frame)
    return frames


@dataclass
class AnalysisState:
    """Mutable flow/strain state carried across batches."""

    config: RunConfig
    roi: ROI
    batch_index: int = 0
    total: DisplacementField | None = None
    prev_increment: DisplacementField | None = None
    prev_stats: StrainStats | None = None


def analyze_batch(
    first: GrayImage, last: GrayImage, state: AnalysisState
) -> tuple[StrainStats, StrainField, DisplacementField]:
    """Flow + strain + summaries for one batch pair.

    Cumulative strategy: the batch increment is composed onto the running
    total (seeded by the previous increment, which predicts this batch's
    motion at constant rate) so strain is relative to the run's first
    frame. Batch-pair strategy: strain of the batch pair alone.
    """
    cfg = state.config
    increment = solve_dense(
        first,
        last,
        state.roi,
        cfg.flow,
        init=state.prev_increment if cfg.reference_strategy == STRATEGY_CUMULATIVE else None,
    )
    if cfg.reference_strategy == STRATEGY_CUMULATIVE:
        total = accumulate(state.total, increment) if state.total is not None else increment
    else:
        total = increment
    grads = displacement_gradients(total, smooth_sigma=cfg.strain_smooth_sigma)
    sfield = green_strain(grads, state.roi, epoch=(state.batch_index, last.timestamp))
    stats = strain_stats(
        sfield,
        previous=state.prev_stats,
        k_fractions=cfg.k_fractions,
        component=cfg.metric_component,
    )
    # Commit state only after stats succeeded; a failed batch holds the chain.
    state.total = total
    state.prev_increment = increment
    state.prev_stats = stats
    return stats, sfield, total


class NullSink:
    """Do-nothing archive/publisher used when a sink is not wired."""

    def write_roi(self, roi: ROI) -> None:  # pragma: no cover - trivial
        pass

    def write_frame(self, frame: GrayImage, batch_index: int, fps: float) -> None:
        pass

    def write_batch(self, record, strain_field, displacement_field) -> None:
        pass

    def finalize(self, status: str) -> None:
        pass

    def publish_first_frame(self, frame: GrayImage) -> None:
        pass

    def publish_snapshot(self, record, strain_field) -> None:
        pass

    def publish_run_ended(self, status: str) -> None:
        pass


def run_experiment(
    source: FrameSource,
    config: RunConfig,
    archive=None,
    publisher=None,
    mailbox=None,
) -> list[BatchRecord]:
    """Drive the full closed loop until a stop condition fires.

    Loop: capture batch -> analyze boundary pair -> decide next rate ->
    command the source. Analysis failures flag the batch and hold the
    previous rate; end of stream, the batch budget, and an operator stop
    (checked at batch boundaries) end the run.
    """
    archive = archive if archive is not None else NullSink()
    publisher = publisher if publisher is not None else NullSink()

    policy = config.policy
    fps = min(max(policy.base_fps, policy.fps_min), policy.fps_max)
    source.set_rate(fps)
    roi = config.roi
    state: AnalysisState | None = None
    records: list[BatchRecord] = []
    status = "completed"
    batch_index = 0
    try:
        while True:
            if config.max_batches is not None and batch_index >= config.max_batches:
                break
            frames = run_batch(source, fps, config.batch_duration)
            if not frames:
                break
            expected = max(2, round(config.batch_duration * fps))
            partial = len(frames) < expected
            for frame in frames:
                archive.write_frame(frame, batch_index, fps)
            if batch_index == 0:
                publisher.publish_first_frame(frames[0])
                if roi is None and mailbox is not None:
                    roi = mailbox.await_roi()
                if roi is None:
                    raise ConfigError("no ROI configured and no operator to supply one")
                roi.validate_margin(frames[0].pixels.shape, config.flow.window_half + 1)
                archive.write_roi(roi)
                state = AnalysisState(config=config, roi=roi)

            stats = sfield = dfield = None
            flagged, reason = False, ""
            compute_duration = 0.0
            state.batch_index = batch_index
            if len(frames) >= 2:
                t0 = time.perf_counter()
                try:
                    stats, sfield, dfield = analyze_batch(frames[0], frames[-1], state)
                except InsufficientDataError as exc:
                    flagged, reason = True, str(exc)
                compute_duration = time.perf_counter() - t0
            else:
                flagged, reason = True, "partial batch: fewer than 2 frames"

            # Operator commands land at batch boundaries: a policy received
            # during this batch governs the decision for the next one.
            if mailbox is not None:
                new_policy = mailbox.take_policy()
                if new_policy is not None:
                    policy = new_policy

            if stats is not None:
                next_fps, fired_row = decide_rate(policy, stats)
            else:
                next_fps, fired_row = fps, None  # rate hold on analysis failure

            record = BatchRecord(
                batch_index=batch_index,
                fps_used=fps,
                frame_indices=(frames[0].frame_index, frames[-1].frame_index),
                frame_count=len(frames),
                capture_window=(frames[0].timestamp, frames[-1].timestamp),
                compute_duration=compute_duration,
                stats=stats,
                next_fps=next_fps,
                fired_row=fired_row,
                flagged=flagged,
                flag_reason=reason,
            )
            records.append(record)
            archive.write_batch(record, sfield, dfield)
            publisher.publish_snapshot(record, sfield)

            batch_index += 1
            if partial:
                break
            if mailbox is not None and mailbox.stop_requested():
                status = "stopped_by_operator"
                break
            fps = next_fps
            source.set_rate(fps)
    except DicflowError as exc:
        failed = "source_error" if isinstance(exc, LoadError) else "error"
        archive.finalize(failed)
        publisher.publish_run_ended(failed)
        raise
    archive.finalize(status)
    publisher.publish_run_ended(status)
    return records


# --- config (de)serialization -------------------------------------------

def policy_to_json(policy: RatePolicy) -> dict:
    return {
        "metric": policy.metric,
        "thresholds": [[b, f] for b, f in policy.thresholds],
        "base_fps": policy.base_fps,
        "fps_min": policy.fps_min,
        "fps_max": policy.fps_max,
        "topk_fraction": policy.topk_fraction,
    }


def policy_from_json(obj: dict) -> RatePolicy:
    try:
        return RatePolicy(
            metric=obj.get("metric", METRIC_MAX),
            thresholds=tuple((float(b), float(f)) for b, f in obj.get("thresholds", DEFAULT_MAX_TABLE)),
            base_fps=float(obj.get("base_fps", 1.0)),
            fps_min=float(obj.get("fps_min", 1.0)),
            fps_max=float(obj.get("fps_max", HARDWARE_FPS_MAX)),
            topk_fraction=(None if obj.get("topk_fraction") is None else float(obj["topk_fraction"])),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid policy: {exc}") from exc


def config_to_json(config: RunConfig) -> dict:
    roi = config.roi
    return {
        "batch_duration": config.batch_duration,
        "policy": policy_to_json(config.policy),
        "roi": "interactive" if roi is None else [roi.x0, roi.y0, roi.width, roi.height],
        "flow": {
            "window_half": config.flow.window_half,
            "min_eigen_tol": config.flow.min_eigen_tol,
            "max_iterations": config.flow.max_iterations,
            "convergence_eps": config.flow.convergence_eps,
            "pyramid_levels": config.flow.pyramid_levels,
        },
        "reference_strategy": config.reference_strategy,
        "max_batches": config.max_batches,
        "strain_smooth_sigma": config.strain_smooth_sigma,
        "metric_component": config.metric_component,
        "k_fractions": list(config.k_fractions),
        "phase_split": config.phase_split,
    }


def config_from_json(obj: dict) -> RunConfig:
    roi_spec = obj.get("roi", "interactive")
    if roi_spec == "interactive" or roi_spec is None:
        roi = None
    else:
        try:
            roi = ROI(*(int(v) for v in roi_spec))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid roi {roi_spec!r}: {exc}") from exc
    flow_obj = obj.get("flow", {})
    try:
        flow = FlowConfig(
            window_half=int(flow_obj.get("window_half", 1)),
            min_eigen_tol=float(flow_obj.get("min_eigen_tol", 1e-4)),
            max_iterations=int(flow_obj.get("max_iterations", 20)),
            convergence_eps=float(flow_obj.get("convergence_eps", 1e-3)),
            pyramid_levels=int(flow_obj.get("pyramid_levels", 1)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid flow config: {exc}") from exc
    return RunConfig(
        policy=policy_from_json(obj.get("policy", {})),
        batch_duration=float(obj.get("batch_duration", 2.0)),
        roi=roi,
        flow=flow,
        reference_strategy=obj.get("reference_strategy", STRATEGY_CUMULATIVE),
        max_batches=obj.get("max_batches"),
        strain_smooth_sigma=float(obj.get("strain_smooth_sigma", 0.0)),
        metric_component=obj.get("metric_component", "eyy"),
        k_fractions=tuple(float(k) for k in obj.get("k_fractions", DEFAULT_K_FRACTIONS)),
        phase_split=(None if obj.get("phase_split") is None else float(obj["phase_split"])),
    )
