"""Deterministic synthetic data: box scenes, unicycle paths, noisy odometry, raycast scans."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numba
import numpy as np
from scipy.spatial.transform import Rotation

from .geometry import Pose, UnicycleCorrection, apply_correction, correction_pose
from .metrics import Trajectory
from .preprocessing import TimedPointCloud


@dataclass(frozen=True)
class Box:
    """Axis-aligned box given by its min and max corners (meters)."""

    lo: tuple[float, float, float]
    hi: tuple[float, float, float]

    def __post_init__(self) -> None:
        if any(h <= l for l, h in zip(self.lo, self.hi)):
            raise ValueError(f"degenerate box {self.lo} -> {self.hi}")


@dataclass(frozen=True)
class Scene:
    walls: tuple[Box, ...] = ()

    @property
    def bounds(self) -> Box | None:
        if not self.walls:
            return None
        lo = np.min([b.lo for b in self.walls], axis=0)
        hi = np.max([b.hi for b in self.walls], axis=0)
        return Box(tuple(lo), tuple(hi))

    def surface_distance(self, points: np.ndarray) -> np.ndarray:
        """Unsigned distance from each world point to the nearest box surface."""
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        best = np.full(len(points), np.inf)
        for box in self.walls:
            lo, hi = np.asarray(box.lo), np.asarray(box.hi)
            outside = np.linalg.norm(np.maximum(np.maximum(lo - points, points - hi), 0.0), axis=1)
            inside = np.min(np.minimum(points - lo, hi - points), axis=1)
            best = np.minimum(best, np.where(outside > 0, outside, np.abs(inside)))
        return best


@dataclass(frozen=True)
class SensorModel:
    """Spinning multi-beam LiDAR.

    ``pattern_jitter`` shifts the whole beam pattern of every sweep by a
    random fraction of one beam spacing (elevation) and one azimuth step.
    With 0 each sweep samples the exact same directions, which turns a
    uniform corridor into a sequence of identical scans.
    """

    beam_count_vertical: int = 32
    vertical_fov: float = 30.0
    horizontal_resolution: float = 0.5625
    max_range: float = 30.0
    sweep_duration: float = 0.1
    pattern_jitter: float = 1.0

    def __post_init__(self) -> None:
        if self.beam_count_vertical < 1 or self.horizontal_resolution <= 0 or self.max_range <= 0:
            raise ValueError("sensor counts, resolution and range must be positive")
        if not 0 <= self.vertical_fov <= 180:
            raise ValueError("vertical_fov must lie in [0, 180] degrees")
        if not 0 <= self.pattern_jitter <= 1:
            raise ValueError("pattern_jitter must lie in [0, 1]")

    def directions(self, rng: np.random.Generator | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Unit ray directions ordered azimuth-major, and their sweep fractions.

        Without ``rng`` the nominal, unjittered pattern is returned.
        """
        half = math.radians(self.vertical_fov) / 2
        if self.beam_count_vertical == 1:
            elevation = np.zeros(1)
        else:
            elevation = np.linspace(-half, half, self.beam_count_vertical)
        azimuth_deg = np.arange(0.0, 360.0, self.horizontal_resolution)
        if rng is not None and self.pattern_jitter > 0:
            spacing = 2 * half / max(self.beam_count_vertical - 1, 1)
            elevation = elevation + (rng.uniform() - 0.5) * self.pattern_jitter * spacing
            azimuth_deg = azimuth_deg + rng.uniform() * self.pattern_jitter * self.horizontal_resolution
            azimuth_deg = azimuth_deg[azimuth_deg < 360.0]
        az, el = np.meshgrid(np.radians(azimuth_deg), elevation, indexing="ij")
        dirs = np.stack(
            [np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], axis=-1
        ).reshape(-1, 3)
        tau = np.repeat(azimuth_deg / 360.0, len(elevation))
        return dirs, tau


@dataclass(frozen=True)
class NoiseModel:
    linear_noise_std: float = 0.0
    angular_noise_std: float = 0.0
    range_noise_std: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if min(self.linear_noise_std, self.angular_noise_std, self.range_noise_std) < 0:
            raise ValueError("noise standard deviations must be non-negative")


@numba.njit(cache=True)
def _slab_ranges(origins, directions, lo, hi, max_range):  # pragma: no cover - compiled
    n = origins.shape[0]
    out = np.full(n, np.inf)
    for i in range(n):
        best = max_range
        found = False
        for b in range(lo.shape[0]):
            t_near = -np.inf
            t_far = np.inf
            for a in range(3):
                d = directions[i, a]
                if abs(d) < 1e-300:
                    if origins[i, a] < lo[b, a] or origins[i, a] > hi[b, a]:
                        t_near = np.inf
                        break
                    continue
                t1 = (lo[b, a] - origins[i, a]) / d
                t2 = (hi[b, a] - origins[i, a]) / d
                if t1 > t2:
                    t1, t2 = t2, t1
                if t1 > t_near:
                    t_near = t1
                if t2 < t_far:
                    t_far = t2
            if t_near > 0.0 and t_near <= t_far and t_near <= best:
                best = t_near
                found = True
        if found:
            out[i] = best
    return out


def intersect_boxes(origins: np.ndarray, directions: np.ndarray, boxes, max_range: float) -> np.ndarray:
    """Distance along each ray to the first box it enters, ``inf`` on a miss.

    Slab test; rays starting inside a box do not report that box.
    """
    n = len(directions)
    if not boxes or n == 0:
        return np.full(n, np.inf)
    lo = np.array([b.lo for b in boxes], dtype=float)
    hi = np.array([b.hi for b in boxes], dtype=float)
    return _slab_ranges(
        np.ascontiguousarray(origins, dtype=float),
        np.ascontiguousarray(directions, dtype=float),
        lo,
        hi,
        float(max_range),
    )


def _sweep_poses(sensor_pose: Pose, sweep_motion: Pose | None, tau: np.ndarray):
    """Sensor rotation and origin at each sweep fraction ``tau``.

    The pose at ``tau`` is ``sensor_pose · interpolate(I, M, tau) · M⁻¹`` so
    that ``tau = 1`` is the end-of-sweep pose.
    """
    n = len(tau)
    if sweep_motion is None:
        return np.broadcast_to(sensor_pose.rotation, (n, 3, 3)), np.broadcast_to(
            sensor_pose.translation, (n, 3)
        )
    rotvec = Rotation.from_matrix(sweep_motion.rotation).as_rotvec()
    partial_rot = Rotation.from_rotvec(tau[:, None] * rotvec).as_matrix()
    m_inv = sweep_motion.inverse()
    # local(tau) = partial(tau) @ M⁻¹
    local_rot = partial_rot @ m_inv.rotation
    local_trans = np.einsum("nij,j->ni", partial_rot, m_inv.translation) + tau[:, None] * (
        sweep_motion.translation
    )
    rot = sensor_pose.rotation @ local_rot
    trans = local_trans @ sensor_pose.rotation.T + sensor_pose.translation
    return rot, trans


def _cast_sweep(scene: Scene, sensor_pose: Pose, model: SensorModel, sweep_motion: Pose | None, rng=None):
    dirs, tau = model.directions(rng)
    azimuth_tau, first = np.unique(tau, return_index=True)
    rot_az, trans_az = _sweep_poses(sensor_pose, sweep_motion, azimuth_tau)
    column = np.searchsorted(azimuth_tau, tau)
    world_dirs = np.einsum("nij,nj->ni", rot_az[column], dirs)
    ranges = intersect_boxes(trans_az[column], world_dirs, scene.walls, model.max_range)
    hit = np.isfinite(ranges)
    return dirs[hit], ranges[hit], tau[hit]


def raycast_scan(
    scene: Scene,
    sensor_pose: Pose,
    model: SensorModel = SensorModel(),
    noise: NoiseModel = NoiseModel(),
    sweep_motion: Pose | None = None,
    rng: np.random.Generator | None = None,
) -> TimedPointCloud:
    """Simulate one spinning sweep; points are in the sensor frame at capture time.

    ``sensor_pose`` is the world pose at the end of the sweep and
    ``sweep_motion`` the sensor motion over the sweep (None for a static
    sensor). Timestamps are azimuth / 360 degrees.
    """
    if rng is None:
        rng = np.random.default_rng(noise.seed)
    dirs, ranges, tau = _cast_sweep(scene, sensor_pose, model, sweep_motion, rng)
    return _noisy_cloud(dirs, ranges, tau, noise.range_noise_std, rng)


def _noisy_cloud(dirs, ranges, tau, range_std, rng) -> TimedPointCloud:
    if range_std > 0 and len(ranges):
        ranges = ranges + rng.normal(0.0, range_std, len(ranges))
    return TimedPointCloud(dirs * ranges[:, None], tau.copy())


# --- trajectories -----------------------------------------------------------


@dataclass(frozen=True)
class Line:
    length: float


@dataclass(frozen=True)
class Arc:
    """Constant-curvature turn; positive ``angle`` turns left."""

    radius: float
    angle: float


@dataclass(frozen=True)
class Turn:
    """Rotation in place."""

    angle: float


def _primitive_steps(prim, step_length: float, turn_step: float) -> list[UnicycleCorrection]:
    if isinstance(prim, Line):
        n = max(1, math.ceil(abs(prim.length) / step_length - 1e-9))
        return [UnicycleCorrection(prim.length / n, 0.0)] * n
    if isinstance(prim, Arc):
        length = abs(prim.radius * prim.angle)
        n = max(1, math.ceil(length / step_length - 1e-9))
        return [UnicycleCorrection(length / n, prim.angle / n)] * n
    if isinstance(prim, Turn):
        n = max(1, math.ceil(abs(prim.angle) / turn_step - 1e-9))
        return [UnicycleCorrection(0.0, prim.angle / n)] * n
    raise TypeError(f"unknown path primitive {prim!r}")


def waypoints_to_primitives(waypoints) -> tuple[Pose, list]:
    """Straight legs joined by in-place turns; the start faces the first leg."""
    pts = np.asarray(waypoints, dtype=float)
    if pts.ndim != 2 or len(pts) < 2:
        raise ValueError("at least two waypoints are required")
    legs = np.diff(pts[:, :2], axis=0)
    headings = np.arctan2(legs[:, 1], legs[:, 0])
    start = Pose.from_planar(pts[0, 0], pts[0, 1], headings[0])
    prims: list = []
    for k, leg in enumerate(legs):
        if k > 0:
            turn = math.remainder(headings[k] - headings[k - 1], 2 * math.pi)
            if turn != 0.0:
                prims.append(Turn(turn))
        prims.append(Line(float(np.hypot(*leg))))
    return start, prims


def generate_trajectory(
    spec,
    step_length: float = 0.5,
    speed: float = 1.0,
    angular_speed: float = 0.5,
    turn_step: float = 0.1,
    start: Pose | None = None,
) -> list[tuple[float, Pose]]:
    """Sample a planar unicycle path given as a preset name, primitives or waypoints."""
    if step_length <= 0 or speed <= 0 or angular_speed <= 0:
        raise ValueError("step_length and speeds must be positive")
    if isinstance(spec, str):
        prims = list(get_preset(spec).path)
        origin = Pose.identity()
    elif len(spec) and all(isinstance(p, (Line, Arc, Turn)) for p in spec):
        prims = list(spec)
        origin = Pose.identity()
    else:
        origin, prims = waypoints_to_primitives(spec)
    pose = start if start is not None else origin
    t = 0.0
    out = [(t, pose)]
    for prim in prims:
        for du in _primitive_steps(prim, step_length, turn_step):
            pose = apply_correction(pose, du)
            t += max(abs(du.linear) / speed, abs(du.angular) / angular_speed)
            out.append((t, pose))
    return out


def arc_parameters(increment: Pose) -> UnicycleCorrection:
    """Arc length and heading change of a planar increment (lateral slip ignored)."""
    dtheta = increment.yaw
    tx, ty = increment.translation[:2]
    chord = math.hypot(tx, ty)
    half = 0.5 * dtheta
    ratio = 1.0 if abs(half) < 1e-8 else half / math.sin(half)
    sign = 1.0 if tx * math.cos(half) + ty * math.sin(half) >= 0 else -1.0
    return UnicycleCorrection(sign * chord * ratio, dtheta)


def corrupt_odometry(
    ground_truth: list[tuple[float, Pose]],
    noise: NoiseModel,
    rng: np.random.Generator | None = None,
) -> list[tuple[float, Pose]]:
    """Re-integrate ground-truth increments with multiplicative encoder noise."""
    if rng is None:
        rng = np.random.default_rng(noise.seed)
    if not ground_truth:
        return []
    n = len(ground_truth) - 1
    lin = rng.normal(0.0, 1.0, n) * noise.linear_noise_std
    ang = rng.normal(0.0, 1.0, n) * noise.angular_noise_std
    t0, pose = ground_truth[0]
    out = [(t0, pose)]
    for k in range(n):
        prev, curr = ground_truth[k][1], ground_truth[k + 1][1]
        dx, dtheta = arc_parameters(prev.inverse() @ curr)
        pose = apply_correction(
            pose, UnicycleCorrection(dx * (1.0 + lin[k]), dtheta + dx * ang[k])
        )
        out.append((ground_truth[k + 1][0], pose))
    return out


# --- presets ----------------------------------------------------------------


def _wall_x(x0, x1, y, thickness=0.2, height=3.0) -> Box:
    return Box((x0, y - thickness / 2, 0.0), (x1, y + thickness / 2, height))


def _wall_y(y0, y1, x, thickness=0.2, height=3.0) -> Box:
    return Box((x - thickness / 2, y0, 0.0), (x + thickness / 2, y1, height))


def _rack_row(x0, x1, y, depth=1.0, bay=2.7, gap=0.3, height=4.0) -> list[Box]:
    boxes = []
    x = x0
    while x + bay <= x1 + 1e-9:
        boxes.append(Box((x, y - depth / 2, 0.0), (x + bay, y + depth / 2, height)))
        x += bay + gap
    return boxes


def _pillars(xs, ys, size=0.4, height=3.0) -> list[Box]:
    return [
        Box((x - size / 2, y - size / 2, 0.0), (x + size / 2, y + size / 2, height))
        for x in xs
        for y in ys
    ]


def _hall(x0, x1, y0, y1) -> list[Box]:
    return [_wall_x(x0, x1, y0), _wall_x(x0, x1, y1), _wall_y(y0, y1, x0), _wall_y(y0, y1, x1)]


def _slabs(x0, x1, y0, y1, ceiling=None, thickness=0.1) -> list[Box]:
    """Floor just below z = 0 and an optional ceiling slab from ``ceiling`` up."""
    boxes = [Box((x0, y0, -thickness), (x1, y1, 0.0))]
    if ceiling is not None:
        boxes.append(Box((x0, y0, ceiling), (x1, y1, ceiling + thickness)))
    return boxes


def corridor_scene(length: float = 400.0, half_width: float = 1.5, height: float = 3.0) -> Scene:
    """Two parallel walls along x under a flat ceiling: the axis is unobservable."""
    x0, x1 = -length / 2, length / 2
    walls = [_wall_x(x0, x1, -half_width, height=height), _wall_x(x0, x1, half_width, height=height)]
    return Scene(tuple(walls + _slabs(x0, x1, -half_width, half_width, ceiling=height)))


def racks_scene() -> Scene:
    walls = _hall(-35.0, 35.0, -22.0, 22.0)
    for y in (-14.0, -4.0, 0.0, 4.0, 14.0):
        walls += _rack_row(-25.0, 25.0, y)
    walls += _pillars((-30.0, 30.0), (-18.0, -9.0, 9.0, 18.0))
    return Scene(tuple(walls))


def room_scene() -> Scene:
    walls = _hall(-20.0, 30.0, -20.0, 25.0)
    walls += _pillars((-12.0, -4.0, 4.0, 12.0, 20.0), (-12.0, -4.0, 4.0, 12.0, 20.0))
    return Scene(tuple(walls))


def _rounded_rectangle(width, height, radius, laps) -> list:
    lap = []
    for side in (width, height, width, height):
        lap += [Line(side - 2 * radius), Arc(radius, math.pi / 2)]
    return lap * laps


@dataclass(frozen=True)
class Preset:
    name: str
    scene: Scene
    path: tuple
    start: Pose = field(default_factory=Pose.identity)
    step_length: float = 0.5


def _racks_start() -> Pose:
    # Loop around the central rack block, between the rows at y = +/-4 and +/-14.
    return Pose.from_planar(-24.0, -9.0, 0.0)


PRESET_NAMES = ("corridor", "rectangle_racks", "figure_eight", "square", "arc")


@lru_cache(maxsize=None)
def get_preset(name: str) -> Preset:
    if name == "corridor":
        return Preset(name, corridor_scene(), (Line(120.0),), Pose.from_planar(-60.0, 0.0, 0.0))
    if name == "rectangle_racks":
        path = tuple(_rounded_rectangle(56.0, 18.0, 2.0, 2))
        return Preset(name, racks_scene(), path, _racks_start())
    if name == "figure_eight":
        path = (Arc(6.0, 2 * math.pi), Arc(6.0, -2 * math.pi))
        return Preset(name, room_scene(), path, Pose.from_planar(0.0, 0.0, 0.0))
    if name == "square":
        path = tuple([Line(10.0), Turn(math.pi / 2)] * 4)
        return Preset(name, room_scene(), path, Pose.from_planar(-2.0, -2.0, 0.0))
    if name == "arc":
        return Preset(name, room_scene(), (Arc(5.0, math.pi / 2),), Pose.from_planar(0.0, 0.0, 0.0))
    raise KeyError(f"unknown preset {name!r}; choose from {', '.join(PRESET_NAMES)}")


# --- datasets ---------------------------------------------------------------

DEFAULT_EXTRINSIC = Pose(Rotation.from_euler("z", 0.05).as_matrix(), (0.3, 0.0, 0.6))


@dataclass
class SimulatedDataset:
    preset: str
    extrinsic: Pose
    ground_truth: Trajectory
    odometry: Trajectory
    scans: list[TimedPointCloud]
    noise: NoiseModel
    sensor: SensorModel


@lru_cache(maxsize=8)
def _render_sweeps(preset_name: str, step_length: float, sensor: SensorModel, extrinsic_key, seed: int):
    preset = get_preset(preset_name)
    # Own stream for the scan pattern, so noise draws do not depend on hit counts.
    pattern_rng = np.random.default_rng([seed, 1])
    extrinsic = Pose.from_matrix(np.array(extrinsic_key))
    gt = generate_trajectory(preset.path, step_length, start=preset.start)
    ext_inv = extrinsic.inverse()
    sweeps = []
    prev = None
    for _, pose in gt:
        sensor_pose = pose @ extrinsic
        motion = None if prev is None else ext_inv @ (prev.inverse() @ pose) @ extrinsic
        sweeps.append(_cast_sweep(preset.scene, sensor_pose, sensor, motion, pattern_rng))
        prev = pose
    return tuple(gt), tuple(sweeps)


def simulate(
    preset: str,
    seed: int = 0,
    noise: NoiseModel | None = None,
    sensor: SensorModel = SensorModel(),
    step_length: float | None = None,
    extrinsic: Pose = DEFAULT_EXTRINSIC,
    max_scans: int | None = None,
) -> SimulatedDataset:
    """Ground truth, corrupted odometry and de-skew-requiring scans for a preset.

    Noise-free sweeps are cached per (preset, step, sensor, extrinsic, seed).
    """
    if noise is None:
        noise = NoiseModel(0.01, 0.005, 0.01, seed)
    else:
        noise = NoiseModel(noise.linear_noise_std, noise.angular_noise_std, noise.range_noise_std, seed)
    step = step_length if step_length is not None else get_preset(preset).step_length
    key = tuple(map(tuple, extrinsic.as_matrix().tolist()))
    gt, sweeps = _render_sweeps(preset, float(step), sensor, key, int(seed))
    if max_scans is not None:
        gt, sweeps = gt[:max_scans], sweeps[:max_scans]
    rng = np.random.default_rng(seed)
    odom = corrupt_odometry(list(gt), noise, rng)
    scans = [_noisy_cloud(d, r, t, noise.range_noise_std, rng) for d, r, t in sweeps]
    return SimulatedDataset(
        preset=preset,
        extrinsic=extrinsic,
        ground_truth=Trajectory(gt),
        odometry=Trajectory(odom),
        scans=scans,
        noise=noise,
        sensor=sensor,
    )
