"""Point-to-point ICP restricted to unicycle corrections.

Each Gauss-Newton step solves for an arc correction ``du = (dx, dtheta)``
applied on the right of the current pose. The translational part of the
step is damped by ``dx**2 / beta``, where ``beta`` is the mean squared
residual measured at the wheel-odometry guess: a guess that already agrees
with the map yields a small ``beta`` and keeps the odometry translation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose, UnicycleCorrection, apply_correction, icp_jacobians
from .local_map import VoxelLocalMap

BETA_FLOOR = 1e-6
_REGULARIZER = np.array([[1.0, 0.0], [0.0, 0.0]])


@dataclass
class Correspondences:
    """Matched pairs: body-frame ``source`` points and map-frame ``target`` points."""

    source: np.ndarray
    target: np.ndarray

    def __len__(self) -> int:
        return len(self.source)

    @classmethod
    def empty(cls) -> Correspondences:
        return cls(np.empty((0, 3)), np.empty((0, 3)))


@dataclass
class LinearSystem2:
    hessian: np.ndarray
    gradient: np.ndarray


@dataclass(frozen=True)
class RegistrationConfig:
    """ICP settings.

    ``regularization`` is ``"adaptive"`` (beta from the guess residual),
    ``"fixed"`` (use ``beta``) or ``"off"``.
    """

    max_iterations: int = 500
    convergence_epsilon: float = 1e-4
    regularization: str = "adaptive"
    beta: float | None = None

    def __post_init__(self) -> None:
        if self.regularization not in ("adaptive", "fixed", "off"):
            raise ValueError(f"unknown regularization mode {self.regularization!r}")
        if self.regularization == "fixed" and (self.beta is None or self.beta <= 0):
            raise ValueError("fixed regularization needs a positive beta")
        if self.max_iterations < 0 or self.convergence_epsilon <= 0:
            raise ValueError("max_iterations must be >= 0 and convergence_epsilon > 0")


@dataclass
class RegistrationResult:
    pose: Pose
    iterations: int
    final_cost: float
    beta: float
    correspondence_count: int
    degenerate: bool = False
    corrections: list[UnicycleCorrection] = field(default_factory=list)
    cost_trace: list[float] = field(default_factory=list)


def find_correspondences(
    source: np.ndarray, pose: Pose, voxel_map: VoxelLocalMap, threshold: float
) -> Correspondences:
    """Pair each transformed source point with its nearest map point within ``threshold``."""
    source = np.asarray(source, dtype=float).reshape(-1, 3)
    if len(source) == 0 or voxel_map.is_empty():
        return Correspondences.empty()
    found, targets, _ = voxel_map.nearest_neighbors(pose.transform(source), threshold)
    return Correspondences(source[found], targets[found])


def residuals(correspondences: Correspondences, pose: Pose) -> np.ndarray:
    return pose.transform(correspondences.source) - correspondences.target


def cost(correspondences: Correspondences, pose: Pose) -> float:
    """Mean squared point-to-point residual; 0 when there are no pairs."""
    if len(correspondences) == 0:
        return 0.0
    r = residuals(correspondences, pose)
    return float(np.einsum("ij,ij->", r, r) / len(r))


def compute_beta(
    source: np.ndarray,
    initial_guess: Pose,
    voxel_map: VoxelLocalMap,
    threshold: float,
    beta_floor: float = BETA_FLOOR,
) -> float:
    """Registration cost at the odometry guess, floored at ``beta_floor``."""
    pairs = find_correspondences(source, initial_guess, voxel_map, threshold)
    if len(pairs) == 0:
        return beta_floor
    return max(cost(pairs, initial_guess), beta_floor)


def build_linear_system(
    correspondences: Correspondences, pose: Pose, beta: float = math.inf
) -> LinearSystem2:
    """Gauss-Newton normal equations of the damped cost around ``pose``."""
    n = len(correspondences)
    if n == 0:
        raise ValueError("cannot build a linear system without correspondences")
    jac = icp_jacobians(pose, correspondences.source)
    r = residuals(correspondences, pose)
    hessian = np.einsum("nki,nkj->ij", jac, jac) / n
    gradient = np.einsum("nki,nk->i", jac, r) / n
    if math.isfinite(beta):
        hessian = hessian + _REGULARIZER / beta
    hessian = 0.5 * (hessian + hessian.T)
    return LinearSystem2(hessian, gradient)


def solve_step(system: LinearSystem2) -> tuple[UnicycleCorrection, bool]:
    """Solve ``H du = -g`` in closed form.

    Returns the correction and a flag that is True when ``H`` is too
    ill-conditioned to invert; the correction is then zero.
    """
    (a, b), (c, d) = system.hessian
    det = a * d - b * c
    scale = a * a + b * b + c * c + d * d
    if not math.isfinite(det) or abs(det) < 1e-12 * scale or scale == 0.0:
        return UnicycleCorrection(0.0, 0.0), True
    g0, g1 = system.gradient
    dx = -(d * g0 - b * g1) / det
    dtheta = -(a * g1 - c * g0) / det
    return UnicycleCorrection(float(dx), float(dtheta)), False


def _beta_for(config: RegistrationConfig, source, initial_guess, voxel_map, threshold) -> float:
    if config.regularization == "off":
        return math.inf
    if config.regularization == "fixed":
        return float(config.beta)
    return compute_beta(source, initial_guess, voxel_map, threshold)


def register(
    source: np.ndarray,
    initial_guess: Pose,
    voxel_map: VoxelLocalMap,
    threshold: float,
    config: RegistrationConfig = RegistrationConfig(),
) -> RegistrationResult:
    """Refine ``initial_guess`` by kinematically constrained ICP against ``voxel_map``.

    If any iteration finds no correspondences the guess is returned as is
    with ``correspondence_count == 0``.
    """
    beta = _beta_for(config, source, initial_guess, voxel_map, threshold)
    pose = initial_guess
    corrections: list[UnicycleCorrection] = []
    trace: list[float] = []
    degenerate = False
    pairs = Correspondences.empty()
    iterations = 0
    while iterations < config.max_iterations:
        pairs = find_correspondences(source, pose, voxel_map, threshold)
        if len(pairs) == 0:
            return RegistrationResult(initial_guess, iterations, 0.0, beta, 0)
        system = build_linear_system(pairs, pose, beta)
        du, degenerate = solve_step(system)
        iterations += 1
        if degenerate:
            break
        pose = apply_correction(pose, du)
        corrections.append(du)
        trace.append(cost(pairs, pose))
        if math.hypot(du.linear, du.angular) < config.convergence_epsilon:
            break
    if iterations == 0:
        pairs = find_correspondences(source, pose, voxel_map, threshold)
        if len(pairs) == 0:
            return RegistrationResult(initial_guess, 0, 0.0, beta, 0)
    return RegistrationResult(
        pose=pose,
        iterations=iterations,
        final_cost=cost(pairs, pose),
        beta=beta,
        correspondence_count=len(pairs),
        degenerate=degenerate,
        corrections=corrections,
        cost_trace=trace,
    )


class AdaptiveThreshold:
    """Correspondence gate that tracks how far ICP moves the odometry guess.

    Every deviation ``guess⁻¹ · result`` is scored as its translation norm
    plus the arc its rotation would sweep at ``max_range``; scores above
    ``min_motion`` feed a running RMS ``sigma``. The gate is ``3 sigma``
    clamped to ``[min_threshold, max_threshold]``.
    """

    def __init__(
        self,
        initial_threshold: float = 2.0,
        min_motion: float = 0.1,
        max_range: float = 100.0,
        min_threshold: float = 0.3,
        max_threshold: float = 1.0,
    ) -> None:
        self.initial_threshold = initial_threshold
        self.min_motion = min_motion
        self.max_range = max_range
        self.min_threshold = min_threshold
        self.max_threshold = max_threshold
        self.sum_squared = 0.0
        self.num_samples = 0

    @property
    def sigma(self) -> float:
        if self.num_samples == 0:
            return self.initial_threshold
        return math.sqrt(self.sum_squared / self.num_samples)

    @property
    def threshold(self) -> float:
        return min(max(3.0 * self.sigma, self.min_threshold), self.max_threshold)

    def update(self, deviation: Pose) -> None:
        cos_angle = 0.5 * (np.trace(deviation.rotation) - 1.0)
        angle = math.acos(min(1.0, max(-1.0, cos_angle)))
        model_error = float(np.linalg.norm(deviation.translation)) + 2.0 * self.max_range * math.sin(
            0.5 * angle
        )
        if model_error > self.min_motion:
            self.sum_squared += model_error * model_error
            self.num_samples += 1
