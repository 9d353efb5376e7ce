"""End-to-end acceptance criteria with their tolerances and runtime budgets.

Each test records one PASS/FAIL line, printed in the pytest terminal summary.
All runs use a 0.5 m voxel map cropped at 30 m. Scans come from a 16-beam,
1 degree sensor, except in the throughput check, which uses the default
32-beam sensor.
"""

import math
import time
from pathlib import Path

import numpy as np

from kinodom import cli
from kinodom.geometry import Pose, apply_correction, icp_jacobian
from kinodom.local_map import VoxelLocalMap
from kinodom.metrics import ate_rmse, rpe_translation_percent
from kinodom.pipeline import OdometryConfig, OdometryPipeline, ScanInput, odometry_increments
from kinodom.preprocessing import PreprocessConfig, preprocess
from kinodom.registration import RegistrationConfig, register
from kinodom.simulator import NoiseModel, SensorModel, get_preset, raycast_scan, simulate

from .conftest import ACCEPTANCE_LINES, random_pose
from .oracles import brute_force_rpe, horn_ate
from .test_geometry import residual
from .test_metrics import perturbed, random_walk, straight_line

SENSOR = SensorModel(beam_count_vertical=16, horizontal_resolution=1.0)
CONFIG = OdometryConfig(voxel_size=0.5, max_range=30.0)
# Larger odometry noise, so the initial guesses are far from the truth.
ROUGH_NOISE = NoiseModel(0.05, 0.05, 0.01)
ABLATION = [("adaptive", {"regularization": "adaptive"}), ("off", {"regularization": "off"})] + [
    (f"beta={b:g}", {"regularization": "fixed", "beta": b}) for b in (0.01, 0.1, 1.0, 10.0, 100.0)
]


def record(number, ok, elapsed, budget, detail):
    ok = ok and elapsed < budget
    status = "PASS" if ok else "FAIL"
    line = f"criterion {number:2d} {status}  {detail}  ({elapsed:.1f} s of {budget:g} s)"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def run_dataset(ds, config=CONFIG):
    pipe = OdometryPipeline(config, ds.extrinsic, ds.ground_truth[0][1])
    odo = list(ds.odometry)
    for (t, _), inc, cloud in zip(odo, odometry_increments(odo), ds.scans):
        pipe.process_scan(ScanInput(cloud, inc, t))
    return pipe


def config_with(**changes):
    fields = {k: getattr(CONFIG, k) for k in CONFIG.__dataclass_fields__}
    fields.update(changes)
    return OdometryConfig(**fields)


def test_criterion_01_jacobian():
    start = time.perf_counter()
    rng = np.random.default_rng(1)
    h = 1e-6
    worst = 0.0
    for _ in range(100):
        pose = random_pose(rng)
        s = rng.normal(scale=10.0, size=3)
        q = rng.normal(size=3)
        fd = np.column_stack(
            [(residual(pose, h * e, s, q) - residual(pose, -h * e, s, q)) / (2 * h) for e in np.eye(2)]
        )
        analytic = icp_jacobian(pose, s)
        worst = max(worst, np.max(np.abs(fd - analytic)) / max(1.0, np.max(np.abs(analytic))))
    record(1, worst <= 1e-6, time.perf_counter() - start, 1.0, f"max relative FD error {worst:.2e}")


def test_criterion_02_kinematic_constraint():
    start = time.perf_counter()
    worst_planar = worst_arc = 0.0
    for preset in ("corridor", "rectangle_racks", "figure_eight"):
        for seed in range(3):
            ds = simulate(preset, seed=seed, sensor=SENSOR)
            pipe = OdometryPipeline(CONFIG, ds.extrinsic, ds.ground_truth[0][1])
            odo = list(ds.odometry)
            prev = ds.ground_truth[0][1]
            for (t, _), inc, cloud in zip(odo, odometry_increments(odo), ds.scans):
                pose = pipe.process_scan(ScanInput(cloud, inc, t))
                roll, pitch, _ = pose.roll_pitch_yaw()
                worst_planar = max(worst_planar, abs(pose.translation[2]), abs(roll), abs(pitch))
                # Relative motion = odometry increment followed by the unicycle arcs.
                replay = prev @ inc
                result = pipe.state.last_registration
                for du in result.corrections if result is not None else ():
                    replay = apply_correction(replay, du)
                gap = np.max(np.abs((prev.inverse() @ pose).as_matrix() - (prev.inverse() @ replay).as_matrix()))
                worst_arc = max(worst_arc, gap)
                prev = pose
    ok = worst_planar <= 1e-9 and worst_arc <= 1e-9
    detail = f"max |z|,|roll|,|pitch| {worst_planar:.1e}, max arc decomposition gap {worst_arc:.1e}"
    record(2, ok, time.perf_counter() - start, 120.0, detail)


def test_criterion_03_wheel_odometry_correction():
    start = time.perf_counter()
    rows = []
    for seed in range(5):
        ds = simulate("rectangle_racks", seed=seed, sensor=SENSOR)
        est = run_dataset(ds).state.trajectory
        gt = ds.ground_truth
        rows.append(
            (ate_rmse(est, gt), ate_rmse(ds.odometry, gt), rpe_translation_percent(est, gt), rpe_translation_percent(ds.odometry, gt))
        )
    ate, ate_wo, rpe, rpe_wo = np.median(rows, axis=0)
    path = float(np.sum(np.linalg.norm(np.diff(gt.positions(), axis=0), axis=1)))
    ok = path >= 200.0 and ate <= 0.5 * ate_wo and rpe <= 0.5 * rpe_wo
    detail = f"path {path:.0f} m, ATE {ate:.3f} vs {ate_wo:.3f} m, RPE {rpe:.3f} vs {rpe_wo:.3f}%"
    record(3, ok, time.perf_counter() - start, 180.0, detail)


def _axial_drift(est, gt):
    return abs(est[-1][1].translation[0] - gt[-1][1].translation[0])


def test_criterion_04_corridor():
    start = time.perf_counter()
    rows = {"adaptive": [], "off": []}
    for seed in range(5):
        ds = simulate("corridor", seed=seed, sensor=SENSOR)
        for mode in rows:
            est = run_dataset(ds, config_with(regularization=mode)).state.trajectory
            rows[mode].append((rpe_translation_percent(est, ds.ground_truth), _axial_drift(est, ds.ground_truth)))
    rpe_a, drift_a = np.median(rows["adaptive"], axis=0)
    rpe_o, drift_o = np.median(rows["off"], axis=0)
    ok = rpe_a <= rpe_o and drift_o > drift_a
    detail = f"RPE adaptive {rpe_a:.2f}% vs off {rpe_o:.2f}%, axial drift {drift_a:.2f} vs {drift_o:.2f} m"
    record(4, ok, time.perf_counter() - start, 180.0, detail)


def _ablation_ranks(preset, noise, seeds):
    medians = {}
    datasets = [simulate(preset, seed=s, sensor=SENSOR, noise=noise) for s in seeds]
    for name, changes in ABLATION:
        rpes = [
            rpe_translation_percent(run_dataset(ds, config_with(**changes)).state.trajectory, ds.ground_truth)
            for ds in datasets
        ]
        medians[name] = float(np.median(rpes))
    order = sorted(medians, key=medians.get)
    return order.index("adaptive") + 1, medians


def test_criterion_05_ablation():
    start = time.perf_counter()
    rank_c, med_c = _ablation_ranks("corridor", None, range(3))
    rank_r, med_r = _ablation_ranks("figure_eight", ROUGH_NOISE, range(3))
    ok = rank_c <= 3 and rank_r <= 3
    detail = (
        f"adaptive rank {rank_c}/7 on corridor ({med_c['adaptive']:.2f}%), "
        f"{rank_r}/7 on rough-guess figure_eight ({med_r['adaptive']:.2f}%)"
    )
    record(5, ok, time.perf_counter() - start, 600.0, detail)


def test_criterion_06_static_fixed_point():
    start = time.perf_counter()
    scene = get_preset("square").scene
    body = Pose.from_planar(3.0, 1.0, 0.2)
    extrinsic = Pose.from_translation((0.0, 0.0, 0.6))
    cloud = raycast_scan(scene, body @ extrinsic, SENSOR)
    source, map_update = preprocess(cloud, Pose.identity(), extrinsic, PreprocessConfig(0.5, 0.5, 30.0))
    voxel_map = VoxelLocalMap(0.5, 20, 30.0)
    voxel_map.add_points(body.transform(map_update), body.translation)
    eps = RegistrationConfig().convergence_epsilon
    result = register(source, body, voxel_map, 0.5)
    step = body.inverse() @ result.pose
    moved = math.hypot(np.linalg.norm(step.translation), step.yaw)
    ok = moved < eps and result.final_cost < 1e-10
    detail = f"pose moved {moved:.1e} (< {eps:g}), final cost {result.final_cost:.1e} m^2"
    record(6, ok, time.perf_counter() - start, 5.0, detail)


def test_criterion_07_metric_oracles():
    start = time.perf_counter()
    rng = np.random.default_rng(7)
    worst_rpe = worst_ate = 0.0
    for _ in range(20):
        ref = random_walk(rng)
        est = perturbed(ref, rng).transformed(random_pose(rng, 3.0))
        lengths = (1, 2, 5, 10, 20)
        expected = brute_force_rpe(est.poses, ref.poses, lengths)
        worst_rpe = max(worst_rpe, abs(rpe_translation_percent(est, ref, lengths) / expected - 1.0))
        expected = horn_ate(est.positions(), ref.positions())
        worst_ate = max(worst_ate, abs(ate_rmse(est, ref) / expected - 1.0))
    line = rpe_translation_percent(straight_line(101, scale=1.01), straight_line(101))
    ok = worst_rpe <= 1e-9 and worst_ate <= 1e-9 and abs(line - 1.0) <= 1e-9
    detail = f"RPE rel {worst_rpe:.1e}, ATE rel {worst_ate:.1e}, 1.01-scale line {line:.12f}%"
    record(7, ok, time.perf_counter() - start, 10.0, detail)


def test_criterion_08_nearest_neighbor():
    start = time.perf_counter()
    rng = np.random.default_rng(8)
    voxel = 0.5
    voxel_map = VoxelLocalMap(voxel, 20, 1e3)
    voxel_map.add_points(rng.uniform(-10, 10, size=(20000, 3)), np.zeros(3))
    stored = voxel_map.all_points()
    queries = rng.uniform(-10.5, 10.5, size=(1000, 3))
    mismatches = 0
    for radius in (0.1, 0.3, voxel):
        found, points, dists = voxel_map.nearest_neighbors(queries, radius)
        for q, f, p, d in zip(queries, found, points, dists):
            brute = np.linalg.norm(stored - q, axis=1)
            j = int(np.argmin(brute))
            if (brute[j] <= radius) != f or (f and (abs(brute[j] - d) > 1e-12 or not np.array_equal(stored[j], p))):
                mismatches += 1
    record(8, mismatches == 0, time.perf_counter() - start, 5.0, f"{mismatches} mismatches in 3 x 1000 queries")


def test_criterion_09_throughput():
    ds = simulate("corridor", seed=0)
    pipe = OdometryPipeline(CONFIG, ds.extrinsic, ds.ground_truth[0][1])
    odo = list(ds.odometry)
    inputs = [ScanInput(c, inc, t) for (t, _), inc, c in zip(odo, odometry_increments(odo), ds.scans)]
    pipe.process_scan(inputs[0])
    start = time.perf_counter()
    for scan in inputs[1:]:
        pipe.process_scan(scan)
    elapsed = time.perf_counter() - start
    mean_ms = 1e3 * elapsed / (len(inputs) - 1)
    points = np.mean([len(c) for c in ds.scans])
    detail = f"{mean_ms:.1f} ms per scan, {points:.0f} points per scan, 32-beam corridor"
    record(9, mean_ms < 50.0, elapsed, 120.0, detail)


def test_criterion_10_determinism(tmp_path: Path):
    start = time.perf_counter()
    data = tmp_path / "data"
    assert cli.main(["sim", "--preset", "figure_eight", "--out", str(data), "--seed", "3", "--max-scans", "40"]) == 0
    outputs = []
    for k in range(2):
        traj, report = tmp_path / f"traj{k}.tum", tmp_path / f"report{k}.csv"
        args = ["run", "--dataset", str(data), "--output", str(traj), "--report", str(report)]
        assert cli.main(args) == 0
        outputs.append((traj.read_bytes(), report.read_bytes()))
    ok = outputs[0] == outputs[1] and len(outputs[0][0]) > 0
    record(10, ok, time.perf_counter() - start, 60.0, "trajectory and report byte-identical across two runs")
