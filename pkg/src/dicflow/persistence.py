"""Durable run archives: frames, strain rasters, statistics, reports.

An archive is a plain directory tree readable without this package:
8-bit grayscale PNGs for frames, zip containers of raw little-endian
float32 rasters for strain/displacement fields, CSV for statistics, JSON
manifests. Files for a batch are closed at its boundary, so a crash
mid-run leaves every completed batch readable.

Wall-clock quantities (analysis timings, start time) live in timings.csv
and the manifest, never in stats.csv, so seeded runs produce byte-identical
data files.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
import zipfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .controller import BatchRecord, RunConfig, config_to_json
from .errors import LoadError, ParseError
from .imaging.image import GrayImage, quantize_to_u8, u8_to_unit
from .opticalflow import ROI, DisplacementField
from .strain import StrainField, StrainStats

FRAME_NAME = "frame_{:06d}.png"
BATCH_NAME = "batch_{:06d}.zip"

# Fixed zip entry timestamp: archives must not depend on when they were written.
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)

_FLOAT_FIELDS = ("exx", "eyy", "exy", "u", "v")


# --- ROI text file ---------------------------------------------------------

def write_roi(roi: ROI, path: str | Path) -> None:
    """Write 'rect x0 y0 width height'; later '#' lines are comments."""
    Path(path).write_text(f"rect {roi.x0} {roi.y0} {roi.width} {roi.height}\n")


def read_roi(path: str | Path) -> ROI:
    lines = Path(path).read_text().splitlines()
    for lineno, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        parts = stripped.split()
        if parts[0] != "rect" or len(parts) != 5:
            raise ParseError(f"{path}: line {lineno}: expected 'rect x0 y0 width height'")
        try:
            return ROI(*(int(p) for p in parts[1:]))
        except ValueError as exc:
            raise ParseError(f"{path}: line {lineno}: {exc}") from exc
    raise ParseError(f"{path}: no 'rect' line found")


# --- strain containers ------------------------------------------------------

def save_batch(path: str | Path, strain: StrainField, displacement: DisplacementField) -> None:
    """One zip per batch: manifest + raw f32le rasters + u8 validity.

    The container carries a single validity raster (the strain field's,
    which is the eroded displacement validity); every float raster is
    masked by it, so load(save(...)) is bit-exact from the first save on.
    """
    roi = strain.roi
    manifest = {
        "roi": {"x0": roi.x0, "y0": roi.y0, "width": roi.width, "height": roi.height},
        "epoch": {"batch_index": strain.epoch[0], "timestamp": strain.epoch[1]},
        "dtype": "f32le",
        "order": "row-major",
        "fields": list(_FLOAT_FIELDS) + ["valid"],
    }
    ok = strain.valid
    zero = np.float32(0.0)
    rasters = {
        "exx": strain.exx,
        "eyy": strain.eyy,
        "exy": strain.exy,
        "u": np.where(ok, displacement.u, zero),
        "v": np.where(ok, displacement.v, zero),
    }
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        def put(name: str, data: bytes) -> None:
            info = zipfile.ZipInfo(name, date_time=_ZIP_EPOCH)
            info.compress_type = zipfile.ZIP_DEFLATED
            zf.writestr(info, data)

        put("manifest.json", json.dumps(manifest, sort_keys=True).encode())
        for name, raster in rasters.items():
            put(f"{name}.bin", np.ascontiguousarray(raster, dtype="<f4").tobytes())
        put("valid.bin", np.ascontiguousarray(strain.valid, dtype=np.uint8).tobytes())


def load_batch(path: str | Path) -> tuple[StrainField, DisplacementField]:
    try:
        zf = zipfile.ZipFile(path)
    except (FileNotFoundError, zipfile.BadZipFile) as exc:
        raise LoadError(f"cannot open strain container {path}: {exc}") from exc
    with zf:
        try:
            manifest = json.loads(zf.read("manifest.json"))
            roi = ROI(**manifest["roi"])
            epoch = (int(manifest["epoch"]["batch_index"]), float(manifest["epoch"]["timestamp"]))
        except (KeyError, ValueError, TypeError) as exc:
            raise LoadError(f"bad manifest in {path}: {exc}") from exc
        n = roi.width * roi.height

        def pull(name: str, dtype, itemsize: int) -> np.ndarray:
            try:
                raw = zf.read(f"{name}.bin")
            except KeyError as exc:
                raise LoadError(f"{path}: missing field {name!r}") from exc
            if len(raw) != n * itemsize:
                raise LoadError(
                    f"{path}: length mismatch for {name!r}: {len(raw)} bytes, expected {n * itemsize}"
                )
            return np.frombuffer(raw, dtype=dtype).reshape(roi.height, roi.width)

        data = {name: pull(name, "<f4", 4) for name in _FLOAT_FIELDS}
        valid = pull("valid", np.uint8, 1).astype(bool)

    strain = StrainField(
        roi=roi, exx=data["exx"], eyy=data["eyy"], exy=data["exy"], valid=valid, epoch=epoch
    )
    displacement = DisplacementField(
        roi=roi,
        u=np.where(valid, data["u"], np.float32(0.0)),
        v=np.where(valid, data["v"], np.float32(0.0)),
        valid=valid,
        iterations_used=np.zeros(roi.shape, dtype=np.int32),
    )
    return strain, displacement


# --- frame PNG I/O ----------------------------------------------------------

def save_frame_png(path: str | Path, frame: GrayImage) -> None:
    Image.fromarray(quantize_to_u8(frame.pixels), mode="L").save(path, format="PNG")


def load_archive_frame(path: str | Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return u8_to_unit(np.asarray(im.convert("L")))
    except (FileNotFoundError, OSError) as exc:
        raise LoadError(f"cannot decode frame {path}: {exc}") from exc


# --- the run archive --------------------------------------------------------

def _stats_columns(k_fractions: tuple[float, ...]) -> list[str]:
    cols = [
        "batch_index",
        "t_start",
        "t_end",
        "fps_used",
        "frame_count",
        "max_eyy",
        "mean_eyy",
        "del_max_eyy",
    ]
    cols += [f"topk_mean_eyy_{k:g}" for k in k_fractions]
    cols += [f"del_topk_eyy_{k:g}" for k in k_fractions]
    cols += ["valid_pixel_count", "next_fps", "fired_row", "flagged"]
    return cols


class ArchiveWriter:
    """Single-writer archive sink for one run. Append-only during the run."""

    def __init__(
        self,
        root: str | Path,
        config: RunConfig,
        source_info: dict | None = None,
        run_id: str | None = None,
    ):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        (self.root / "frames").mkdir(exist_ok=True)
        (self.root / "strain").mkdir(exist_ok=True)
        self.config = config
        self._config_json = config_to_json(config)
        self._source_info = source_info or {}
        blob = json.dumps([self._config_json, self._source_info], sort_keys=True)
        self.run_id = run_id or hashlib.sha256(blob.encode()).hexdigest()[:12]
        self._start_time = time.time()
        self._write_manifest("running")

        self._frames_csv = open(self.root / "frames.csv", "w", newline="")
        self._frames_writer = csv.writer(self._frames_csv)
        self._frames_writer.writerow(["frame_index", "batch_index", "timestamp", "fps"])
        self._frames_csv.flush()
        self._stats_csv = open(self.root / "stats.csv", "w", newline="")
        self._stats_writer = csv.writer(self._stats_csv)
        self._stats_cols = _stats_columns(config.k_fractions)
        self._stats_writer.writerow(self._stats_cols)
        self._stats_csv.flush()
        self._timings_csv = open(self.root / "timings.csv", "w", newline="")
        self._timings_writer = csv.writer(self._timings_csv)
        self._timings_writer.writerow(["batch_index", "compute_duration"])
        self._timings_csv.flush()

    def _write_manifest(self, status: str) -> None:
        manifest = {
            "format_version": 1,
            "run_id": self.run_id,
            "status": status,
            "start_time": self._start_time,
            "strategy": self.config.reference_strategy,
            "config": self._config_json,
            "source": self._source_info,
        }
        (self.root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))

    def write_roi(self, roi: ROI) -> None:
        write_roi(roi, self.root / "roi.txt")

    def write_frame(self, frame: GrayImage, batch_index: int, fps: float) -> None:
        save_frame_png(self.root / "frames" / FRAME_NAME.format(frame.frame_index), frame)
        self._frames_writer.writerow([frame.frame_index, batch_index, repr(frame.timestamp), repr(fps)])
        self._frames_csv.flush()

    def write_batch(self, record: BatchRecord, strain, displacement) -> None:
        if strain is not None and displacement is not None:
            save_batch(self.root / "strain" / BATCH_NAME.format(record.batch_index), strain, displacement)
        s = record.stats
        row: list = [
            record.batch_index,
            repr(record.capture_window[0]),
            repr(record.capture_window[1]),
            repr(record.fps_used),
            record.frame_count,
        ]
        if s is not None:
            ks = self.config.k_fractions
            row += [repr(s.max_eyy), repr(s.mean_eyy), repr(s.del_max_eyy)]
            row += [repr(s.topk_mean_eyy[k]) for k in ks]
            row += [repr(s.del_topk_eyy[k]) for k in ks]
            row += [s.valid_pixel_count]
        else:
            row += [""] * (3 + 2 * len(self.config.k_fractions) + 1)
        row += [repr(record.next_fps), "" if record.fired_row is None else record.fired_row, int(record.flagged)]
        self._stats_writer.writerow(row)
        self._stats_csv.flush()
        self._timings_writer.writerow([record.batch_index, repr(record.compute_duration)])
        self._timings_csv.flush()

    def finalize(self, status: str) -> None:
        self._write_manifest(status)
        for handle in (self._frames_csv, self._stats_csv, self._timings_csv):
            handle.close()


# --- reading back -----------------------------------------------------------

@dataclass
class LoadedArchive:
    root: Path
    manifest: dict
    frames: list[dict]  # frame_index, batch_index, timestamp, fps
    stats: list[dict]  # parsed stats.csv rows (strings -> float/int, '' -> None)
    roi: ROI | None

    def strain_path(self, batch_index: int) -> Path:
        return self.root / "strain" / BATCH_NAME.format(batch_index)

    def load_strain(self, batch_index: int) -> tuple[StrainField, DisplacementField]:
        return load_batch(self.strain_path(batch_index))

    def frame_path(self, frame_index: int) -> Path:
        return self.root / "frames" / FRAME_NAME.format(frame_index)

    def topk_columns(self) -> list[str]:
        return [c for c in self.stats[0] if c.startswith("topk_mean_eyy_")] if self.stats else []


def _parse_cell(value: str):
    if value == "":
        return None
    try:
        f = float(value)
    except ValueError:
        return value
    return int(f) if f.is_integer() and "." not in value and "e" not in value.lower() else f


def load_archive(root: str | Path) -> LoadedArchive:
    root = Path(root)
    try:
        manifest = json.loads((root / "manifest.json").read_text())
    except FileNotFoundError as exc:
        raise LoadError(f"not an archive (no manifest.json): {root}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"corrupt manifest in {root}: {exc}") from exc

    def read_rows(name: str) -> list[dict]:
        path = root / name
        if not path.exists():
            return []
        with open(path, newline="") as fh:
            return [
                {k: _parse_cell(v) for k, v in row.items()} for row in csv.DictReader(fh)
            ]

    frames = read_rows("frames.csv")
    stats = read_rows("stats.csv")
    roi_path = root / "roi.txt"
    roi = read_roi(roi_path) if roi_path.exists() else None
    return LoadedArchive(root=root, manifest=manifest, frames=frames, stats=stats, roi=roi)


def archive_digest(root: str | Path) -> str:
    """Digest of the deterministic archive content.

    Wall-clock files (manifest.json start time, timings.csv) are excluded:
    two runs of the same seeded experiment agree on everything else, byte
    for byte.
    """
    root = Path(root)
    digest = hashlib.sha256()
    skip = {"manifest.json", "timings.csv"}
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        rel = path.relative_to(root).as_posix()
        if rel in skip:
            continue
        digest.update(rel.encode())
        digest.update(b"\0")
        digest.update(path.read_bytes())
        digest.update(b"\0")
    return digest.hexdigest()


# --- reports ----------------------------------------------------------------

def export_report(
    archive_root: str | Path,
    out_dir: str | Path | None = None,
    phase_split: float | None = None,
) -> Path:
    """Emit CSV summaries of an archive: strain histories, rate trace,
    delta-metric variants, and (given a split time) a per-phase image count
    comparison. Problems found along the way become warnings in the report
    manifest rather than failures.
    """
    archive = load_archive(archive_root)
    out = Path(out_dir) if out_dir is not None else Path(archive_root) / "report"
    out.mkdir(parents=True, exist_ok=True)
    warnings: list[str] = []
    files: list[str] = []

    if phase_split is None:
        phase_split = archive.manifest.get("config", {}).get("phase_split")

    analyzed = [r for r in archive.stats if r.get("max_eyy") is not None]
    for row in archive.stats:
        if row.get("flagged"):
            warnings.append(f"batch {row['batch_index']} flagged (no statistics)")
    for row in analyzed:
        if not archive.strain_path(int(row["batch_index"])).exists():
            warnings.append(f"missing strain container for batch {row['batch_index']}")

    def emit(name: str, header: list[str], rows: list[list]) -> None:
        with open(out / name, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(rows)
        files.append(name)

    emit(
        "max_strain_history.csv",
        ["batch_index", "t_end", "max_eyy", "mean_eyy"],
        [[r["batch_index"], r["t_end"], r["max_eyy"], r["mean_eyy"]] for r in analyzed],
    )
    emit(
        "rate_trace.csv",
        ["batch_index", "fps"],
        [[r["batch_index"], r["fps_used"]] for r in archive.stats],
    )
    topk_cols = archive.topk_columns()
    del_cols = [c.replace("topk_mean_eyy_", "del_topk_eyy_") for c in topk_cols]
    emit(
        "delmax_variants.csv",
        ["batch_index", "del_max_all"] + del_cols,
        [[r["batch_index"], r["del_max_eyy"]] + [r[c] for c in del_cols] for r in analyzed],
    )

    report = {"files": files, "warnings": warnings}
    if phase_split is not None:
        if not archive.frames:
            warnings.append("no frames.csv; phase summary skipped")
        else:
            times = [float(f["timestamp"]) for f in archive.frames]
            t_end = max(times)
            a = [t for t in times if t < phase_split]
            b = [t for t in times if t >= phase_split]
            rows = [
                ["A", 0.0, phase_split, phase_split, len(a), len(a) / phase_split if phase_split else ""],
                ["B", phase_split, t_end, t_end - phase_split, len(b),
                 len(b) / (t_end - phase_split) if t_end > phase_split else ""],
            ]
            emit("phase_summary.csv", ["phase", "t_start", "t_end", "duration", "frames", "frames_per_s"], rows)
            report["phase_frame_ratio"] = (len(b) / len(a)) if a else None
            report["phase_duration_ratio"] = (t_end - phase_split) / phase_split if phase_split else None
    (out / "report_manifest.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    return out
