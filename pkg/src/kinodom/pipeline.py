"""Scan-by-scan odometry: odometry guess, preprocessing, ICP, map update."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .geometry import Pose, is_planar, project_to_planar
from .local_map import VoxelLocalMap
from .metrics import Trajectory
from .preprocessing import PreprocessConfig, TimedPointCloud, preprocess
from .registration import AdaptiveThreshold, RegistrationConfig, RegistrationResult, register

__all__ = [
    "OdometryConfig",
    "OdometryPipeline",
    "OdometryState",
    "ScanDiagnostics",
    "ScanInput",
    "odometry_increments",
    "process_scan",
    "project_to_planar",
]


@dataclass(frozen=True)
class OdometryConfig:
    voxel_size: float = 1.0
    max_points_per_voxel: int = 20
    min_range: float = 0.5
    max_range: float = 100.0
    deskew: bool = True
    max_iterations: int = 500
    convergence_epsilon: float = 1e-4
    regularization: str = "adaptive"
    beta: float | None = None
    # None selects the adaptive correspondence gate.
    fixed_threshold: float | None = None
    min_threshold: float = 0.3
    initial_threshold: float = 2.0
    min_motion: float = 0.1

    def __post_init__(self) -> None:
        if min(self.voxel_size, self.max_range) <= 0 or self.min_range < 0:
            raise ValueError("voxel_size and max_range must be positive, min_range non-negative")
        if self.min_range >= self.max_range:
            raise ValueError("min_range must be below max_range")
        if self.fixed_threshold is not None and self.fixed_threshold <= 0:
            raise ValueError("fixed_threshold must be positive")
        # Validates the regularization fields.
        self.registration()

    def registration(self) -> RegistrationConfig:
        return RegistrationConfig(
            max_iterations=self.max_iterations,
            convergence_epsilon=self.convergence_epsilon,
            regularization=self.regularization,
            beta=self.beta,
        )

    def preprocessing(self) -> PreprocessConfig:
        return PreprocessConfig(self.voxel_size, self.min_range, self.max_range, self.deskew)


@dataclass
class ScanInput:
    """A scan with the wheel-odometry increment since the previous scan."""

    cloud: TimedPointCloud
    odometry_increment: Pose
    timestamp: float


@dataclass(frozen=True)
class ScanDiagnostics:
    index: int
    timestamp: float
    beta: float
    iterations: int
    correspondences: int
    cost: float
    threshold: float


@dataclass
class OdometryState:
    current_pose: Pose
    map: VoxelLocalMap
    threshold_state: AdaptiveThreshold
    trajectory: Trajectory = field(default_factory=Trajectory)
    diagnostics: list[ScanDiagnostics] = field(default_factory=list)
    last_registration: RegistrationResult | None = None


def odometry_increments(absolute: list[tuple[float, Pose]]) -> list[Pose]:
    """Relative motions ``W[k-1]⁻¹ W[k]``; the first increment is the identity."""
    increments = [Pose.identity()] if absolute else []
    for (_, prev), (_, curr) in zip(absolute[:-1], absolute[1:]):
        increments.append(prev.inverse() @ curr)
    return increments


class OdometryPipeline:
    """Stateful LiDAR odometry over a stream of :class:`ScanInput`."""

    def __init__(
        self,
        config: OdometryConfig = OdometryConfig(),
        extrinsic: Pose | None = None,
        initial_pose: Pose | None = None,
    ) -> None:
        self.config = config
        self.extrinsic = extrinsic if extrinsic is not None else Pose.identity()
        self._extrinsic_inv = self.extrinsic.inverse()
        self._registration = config.registration()
        self._preprocessing = config.preprocessing()
        self.state = OdometryState(
            current_pose=initial_pose if initial_pose is not None else Pose.identity(),
            map=VoxelLocalMap(config.voxel_size, config.max_points_per_voxel, config.max_range),
            threshold_state=AdaptiveThreshold(
                initial_threshold=config.initial_threshold,
                min_motion=config.min_motion,
                max_range=config.max_range,
                min_threshold=config.min_threshold,
                max_threshold=config.voxel_size,
            ),
        )

    @property
    def poses(self) -> list[Pose]:
        return [p for _, p in self.state.trajectory]

    def threshold(self) -> float:
        if self.config.fixed_threshold is not None:
            return self.config.fixed_threshold
        return self.state.threshold_state.threshold

    def process_scan(self, scan: ScanInput) -> Pose:
        state = self.state
        increment = scan.odometry_increment
        if not is_planar(increment, 1e-6):
            increment = project_to_planar(increment)
        guess = state.current_pose @ increment
        threshold = self.threshold()
        beta, iterations, count, final_cost = math.nan, 0, 0, 0.0
        pose = guess
        state.last_registration = None
        if len(scan.cloud):
            motion = self._extrinsic_inv @ increment @ self.extrinsic
            source, map_update = preprocess(
                scan.cloud, motion, self.extrinsic, self._preprocessing
            )
            if not state.map.is_empty() and len(source):
                result = register(source, guess, state.map, threshold, self._registration)
                pose = result.pose
                state.last_registration = result
                beta, iterations = result.beta, result.iterations
                count, final_cost = result.correspondence_count, result.final_cost
                state.threshold_state.update(guess.inverse() @ pose)
            if len(map_update):
                state.map.add_points(pose.transform(map_update), pose.translation)
        state.current_pose = pose
        state.trajectory.append(scan.timestamp, pose)
        state.diagnostics.append(
            ScanDiagnostics(
                index=len(state.diagnostics),
                timestamp=scan.timestamp,
                beta=beta,
                iterations=iterations,
                correspondences=count,
                cost=final_cost,
                threshold=threshold,
            )
        )
        return pose

    def run(self, scans) -> Trajectory:
        for scan in scans:
            self.process_scan(scan)
        return self.state.trajectory


def process_scan(
    pipeline: OdometryPipeline, scan: ScanInput
) -> tuple[OdometryState, Pose]:
    """Functional form of :meth:`OdometryPipeline.process_scan`."""
    pose = pipeline.process_scan(scan)
    return pipeline.state, pose
