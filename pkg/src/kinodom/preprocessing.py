"""De-skewing, range cropping and voxel downsampling of incoming scans."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .geometry import Pose
from .local_map import first_index_per_group, pack_keys, voxel_keys


@dataclass
class TimedPointCloud:
    """Sensor-frame points with optional per-point sweep fractions in [0, 1]."""

    points: np.ndarray
    timestamps: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if self.timestamps is not None:
            self.timestamps = np.asarray(self.timestamps, dtype=float).reshape(-1)
            if len(self.timestamps) != len(self.points):
                raise ValueError(
                    f"{len(self.timestamps)} timestamps for {len(self.points)} points"
                )
            if len(self.timestamps) and (
                self.timestamps.min() < 0.0 or self.timestamps.max() > 1.0
            ):
                raise ValueError("timestamps must be normalized to [0, 1]")

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class PreprocessConfig:
    voxel_size: float = 1.0
    min_range: float = 0.5
    max_range: float = 100.0
    deskew: bool = True


def deskew(cloud: TimedPointCloud, relative_motion: Pose) -> TimedPointCloud:
    """Express every point in the sensor frame at the end of the sweep.

    ``relative_motion`` is the sensor motion from sweep start to sweep end.
    A point captured at fraction ``tau`` is moved by
    ``interpolate(I, M, tau) · M⁻¹``, so points at ``tau = 1`` stay put.
    """
    if cloud.timestamps is None or len(cloud) == 0:
        return cloud
    tau = cloud.timestamps
    rotvec = Rotation.from_matrix(relative_motion.rotation).as_rotvec()
    # M⁻¹ p first, then the partial motion at tau.
    p = (cloud.points - relative_motion.translation) @ relative_motion.rotation
    partial = Rotation.from_rotvec(tau[:, None] * rotvec)
    out = partial.apply(p) + tau[:, None] * relative_motion.translation
    return TimedPointCloud(out, np.array(tau))


def voxel_downsample(points: np.ndarray, voxel_size: float) -> np.ndarray:
    """Keep the first point falling in each voxel, preserving input order."""
    if voxel_size <= 0:
        raise ValueError("voxel_size must be positive")
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(points) == 0:
        return points.copy()
    keys = voxel_keys(points, voxel_size)
    try:
        labels = pack_keys(keys)
    except ValueError:
        _, first = np.unique(keys, axis=0, return_index=True)
        return points[np.sort(first)]
    return points[first_index_per_group(labels)]


def range_filter(points: np.ndarray, min_range: float, max_range: float) -> np.ndarray:
    """Boolean mask of finite points with norm inside ``[min_range, max_range]``."""
    norms = np.linalg.norm(points, axis=1)
    return np.isfinite(points).all(axis=1) & (norms >= min_range) & (norms <= max_range)


def to_body_frame(cloud, extrinsic: Pose) -> np.ndarray:
    """Map sensor-frame points into the body frame through the extrinsic."""
    points = cloud.points if isinstance(cloud, TimedPointCloud) else cloud
    return extrinsic.transform(np.asarray(points, dtype=float).reshape(-1, 3))


def preprocess(
    cloud: TimedPointCloud,
    relative_motion: Pose,
    extrinsic: Pose,
    config: PreprocessConfig = PreprocessConfig(),
) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(source, map_update)`` body-frame clouds for one scan.

    ``map_update`` is downsampled at half the voxel size; ``source`` is
    ``map_update`` downsampled again at 1.5 voxels.
    """
    if len(cloud) == 0:
        empty = np.empty((0, 3))
        return empty, empty.copy()
    if config.deskew:
        cloud = deskew(cloud, relative_motion)
    points = cloud.points[range_filter(cloud.points, config.min_range, config.max_range)]
    body = to_body_frame(points, extrinsic)
    map_update = voxel_downsample(body, 0.5 * config.voxel_size)
    source = voxel_downsample(map_update, 1.5 * config.voxel_size)
    return source, map_update
