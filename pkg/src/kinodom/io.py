"""Dataset files: binary scans, odometry CSV, TUM trajectories, run configs and reports."""

from __future__ import annotations

import dataclasses
import math
import re
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import Pose
from .metrics import SegmentErrors, Trajectory
from .pipeline import OdometryConfig, ScanDiagnostics
from .preprocessing import TimedPointCloud

SCAN_MAGIC = b"KICPSCAN"
SCAN_VERSION = 1
SCAN_SUFFIX = ".kscan"
_HEADER = struct.Struct("<8sHQH")
_FLAG_TIMESTAMPS = 1

MANIFEST_NAME = "manifest.txt"


class DataError(Exception):
    """Malformed or inconsistent input data."""


# --- scans ------------------------------------------------------------------


def write_scan_file(path, cloud: TimedPointCloud) -> None:
    points = np.ascontiguousarray(cloud.points, dtype="<f8")
    flags = _FLAG_TIMESTAMPS if cloud.timestamps is not None else 0
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(SCAN_MAGIC, SCAN_VERSION, len(points), flags))
        fh.write(points.tobytes())
        if cloud.timestamps is not None:
            fh.write(np.ascontiguousarray(cloud.timestamps, dtype="<f8").tobytes())


def normalize_timestamps(stamps: np.ndarray) -> np.ndarray:
    """Map stamps to [0, 1]; stamps already inside [0, 1] are kept as they are."""
    if len(stamps) == 0 or (stamps.min() >= 0.0 and stamps.max() <= 1.0):
        return stamps
    lo, hi = stamps.min(), stamps.max()
    if hi == lo:
        return np.zeros_like(stamps)
    return (stamps - lo) / (hi - lo)


def read_scan_file(path) -> TimedPointCloud:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise DataError(f"{path}: truncated header at byte offset {len(data)}")
    magic, version, count, flags = _HEADER.unpack_from(data, 0)
    if magic != SCAN_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r} at byte offset 0")
    if version != SCAN_VERSION:
        raise DataError(f"{path}: unsupported version {version} at byte offset 8")
    has_stamps = bool(flags & _FLAG_TIMESTAMPS)
    expected = _HEADER.size + count * 24 + (count * 8 if has_stamps else 0)
    if len(data) != expected:
        raise DataError(
            f"{path}: header announces {count} points ({expected} bytes) "
            f"but the file has {len(data)} bytes; records end at byte offset {len(data)}"
        )
    offset = _HEADER.size
    points = np.frombuffer(data, dtype="<f8", count=count * 3, offset=offset).reshape(count, 3)
    stamps = None
    if has_stamps:
        stamps = np.frombuffer(data, dtype="<f8", count=count, offset=offset + count * 24)
        stamps = normalize_timestamps(stamps.astype(float))
    return TimedPointCloud(points.astype(float), stamps)


# --- odometry CSV -----------------------------------------------------------


def write_odometry_csv(path, odometry) -> None:
    lines = ["# timestamp,x,y,yaw"]
    for t, pose in odometry:
        x, y = pose.translation[:2]
        lines.append(f"{t!r},{float(x)!r},{float(y)!r},{pose.yaw!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_odometry_csv(path) -> list[tuple[float, Pose]]:
    """Rows ``timestamp,x,y,yaw`` as planar poses; ``#`` lines are comments."""
    out: list[tuple[float, Pose]] = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = [f.strip() for f in line.split(",")]
        if len(fields) != 4:
            if not out and not _is_number(fields[0]):
                continue  # header row
            raise DataError(f"{path}: row {lineno} has {len(fields)} fields, expected 4")
        try:
            t, x, y, yaw = map(float, fields)
        except ValueError:
            if not out:
                continue
            raise DataError(f"{path}: row {lineno} is not numeric") from None
        if out and t <= out[-1][0]:
            raise DataError(f"{path}: row {lineno} timestamp {t} does not increase")
        out.append((t, Pose.from_planar(x, y, yaw)))
    return out


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


# --- TUM trajectories -------------------------------------------------------


def _fmt(value: float) -> str:
    text = f"{value:.9g}"
    return "0" if text in ("-0", "0") else text


def format_tum_line(timestamp: float, pose: Pose) -> str:
    q = pose.quaternion()
    values = [*pose.translation, *q]
    return f"{timestamp:.9f} " + " ".join(_fmt(v) for v in values)


def write_trajectory_tum(path, trajectory) -> None:
    text = "".join(format_tum_line(t, p) + "\n" for t, p in trajectory)
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write trajectory to {path}: {exc}") from exc


def read_trajectory_tum(path) -> Trajectory:
    traj = Trajectory()
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) != 8:
            raise DataError(f"{path}: line {lineno} has {len(fields)} fields, expected 8")
        try:
            t, x, y, z, qx, qy, qz, qw = map(float, fields)
        except ValueError:
            raise DataError(f"{path}: line {lineno} is not numeric") from None
        try:
            traj.append(t, Pose.from_quaternion((qx, qy, qz, qw), (x, y, z)))
        except ValueError as exc:
            raise DataError(f"{path}: line {lineno}: {exc}") from None
    return traj


# --- key=value files --------------------------------------------------------


def parse_key_values(text: str, source: str = "<config>") -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{source}: line {lineno} is not key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key] = value
    return values


def format_pose_fields(pose: Pose) -> str:
    return " ".join(repr(float(v)) for v in (*pose.translation, *pose.quaternion()))


def parse_pose_fields(text: str) -> Pose:
    """``x y yaw`` (planar) or ``x y z qx qy qz qw``."""
    values = [float(v) for v in text.replace(",", " ").split()]
    if len(values) == 3:
        return Pose.from_planar(*values)
    if len(values) == 7:
        return Pose.from_quaternion(values[3:], values[:3])
    raise DataError(f"cannot parse pose from {text!r}")


@dataclass(frozen=True)
class RunConfig:
    odometry: OdometryConfig = OdometryConfig()
    initial_pose: Pose = dataclasses.field(default_factory=Pose.identity)


_MODE = re.compile(r"^fixed\(\s*([^)]+)\s*\)$")


def parse_run_config(text: str, source: str = "<config>") -> RunConfig:
    values = parse_key_values(text, source)
    fields = {f.name: f for f in dataclasses.fields(OdometryConfig)}
    kwargs: dict = {}
    initial_pose = Pose.identity()
    try:
        for key, value in values.items():
            if key == "initial_pose":
                initial_pose = parse_pose_fields(value)
            elif key in ("regularization", "regularization_mode"):
                match = _MODE.match(value)
                if match:
                    kwargs["regularization"] = "fixed"
                    kwargs["beta"] = float(match.group(1))
                else:
                    kwargs["regularization"] = value
            elif key in ("threshold", "threshold_mode"):
                match = _MODE.match(value)
                if value == "adaptive":
                    kwargs["fixed_threshold"] = None
                else:
                    kwargs["fixed_threshold"] = float(match.group(1) if match else value)
            elif key in fields:
                kwargs[key] = _coerce(value, fields[key].type)
            else:
                raise DataError(f"{source}: unknown key {key!r}")
        return RunConfig(OdometryConfig(**kwargs), initial_pose)
    except ValueError as exc:
        raise DataError(f"{source}: {exc}") from None


def _coerce(value: str, annotation: str):
    if annotation == "bool":
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if annotation == "int":
        return int(value)
    if annotation == "str":
        return value
    if value.lower() in ("none", ""):
        return None
    return float(value)


def format_run_config(config: RunConfig) -> str:
    lines = []
    for f in dataclasses.fields(OdometryConfig):
        value = getattr(config.odometry, f.name)
        if f.name == "fixed_threshold":
            lines.append(f"threshold = {'adaptive' if value is None else repr(value)}")
        else:
            lines.append(f"{f.name} = {value}")
    lines.append(f"initial_pose = {format_pose_fields(config.initial_pose)}")
    return "\n".join(lines) + "\n"


# --- datasets ---------------------------------------------------------------


@dataclass(frozen=True)
class DatasetManifest:
    root: Path
    scan_directory: Path
    odometry_file: Path
    extrinsic: Pose
    has_timestamps: bool
    ground_truth_file: Path | None = None

    def scan_files(self) -> list[Path]:
        return sorted(self.scan_directory.glob(f"*{SCAN_SUFFIX}"))


def read_manifest(directory) -> DatasetManifest:
    root = Path(directory)
    path = root / MANIFEST_NAME
    if not path.is_file():
        raise DataError(f"{root}: missing {MANIFEST_NAME}")
    values = parse_key_values(path.read_text(), str(path))
    try:
        scans = root / values.get("scan_directory", "scans")
        odom = root / values.get("odometry_file", "odometry.csv")
        extrinsic = parse_pose_fields(values.get("extrinsic", "0 0 0"))
        stamps = values.get("has_timestamps", "true").lower() in ("1", "true", "yes")
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    gt = values.get("ground_truth_file")
    manifest = DatasetManifest(root, scans, odom, extrinsic, stamps, root / gt if gt else None)
    if not scans.is_dir():
        raise DataError(f"{path}: scan directory {scans} does not exist")
    if not odom.is_file():
        raise DataError(f"{path}: odometry file {odom} does not exist")
    return manifest


def write_dataset(directory, dataset) -> DatasetManifest:
    """Write a :class:`~kinodom.simulator.SimulatedDataset` as a dataset directory."""
    root = Path(directory)
    scans = root / "scans"
    scans.mkdir(parents=True, exist_ok=True)
    for k, cloud in enumerate(dataset.scans):
        write_scan_file(scans / f"{k:06d}{SCAN_SUFFIX}", cloud)
    write_odometry_csv(root / "odometry.csv", dataset.odometry)
    write_trajectory_tum(root / "ground_truth.tum", dataset.ground_truth)
    (root / MANIFEST_NAME).write_text(
        "scan_directory = scans\n"
        "odometry_file = odometry.csv\n"
        "ground_truth_file = ground_truth.tum\n"
        f"extrinsic = {format_pose_fields(dataset.extrinsic)}\n"
        "has_timestamps = true\n"
    )
    return read_manifest(root)


# --- reports ----------------------------------------------------------------

REPORT_HEADER = "index,timestamp,beta,iterations,correspondences,cost,threshold"


def _num(value: float) -> str:
    if math.isnan(value):
        return "nan"
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return f"{value:.9g}"


def write_report_csv(path, diagnostics: list[ScanDiagnostics]) -> None:
    lines = [REPORT_HEADER]
    for d in diagnostics:
        lines.append(
            f"{d.index},{d.timestamp:.9f},{_num(d.beta)},{d.iterations},"
            f"{d.correspondences},{_num(d.cost)},{_num(d.threshold)}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def write_segments_csv(path, errors: SegmentErrors) -> None:
    lines = ["start,end,length,translation_percent,rotation_rad_per_m"]
    for s, e, length, t, r in zip(
        errors.start, errors.end, errors.length, errors.translation_percent, errors.rotation_per_meter
    ):
        lines.append(f"{s},{e},{_num(length)},{_num(t)},{_num(r)}")
    Path(path).write_text("\n".join(lines) + "\n")


def dump_map(path, voxel_map) -> None:
    """Write all local-map points as a scan file without timestamps."""
    write_scan_file(path, TimedPointCloud(voxel_map.all_points()))
