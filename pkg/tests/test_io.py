import math
import struct

import numpy as np
import pytest

from kinodom import io
from kinodom.geometry import Pose
from kinodom.metrics import Trajectory
from kinodom.pipeline import OdometryConfig, odometry_increments
from kinodom.preprocessing import TimedPointCloud

from .conftest import random_pose


class TestScanFile:
    def test_empty(self, tmp_path):
        io.write_scan_file(tmp_path / "a.kscan", TimedPointCloud(np.empty((0, 3))))
        assert len(io.read_scan_file(tmp_path / "a.kscan")) == 0

    def test_round_trip_bit_exact(self, tmp_path, rng):
        cloud = TimedPointCloud(rng.normal(scale=30, size=(500, 3)), rng.uniform(size=500))
        io.write_scan_file(tmp_path / "a.kscan", cloud)
        back = io.read_scan_file(tmp_path / "a.kscan")
        assert back.points.tobytes() == cloud.points.tobytes()
        assert back.timestamps.tobytes() == cloud.timestamps.tobytes()

    def test_without_timestamps(self, tmp_path):
        io.write_scan_file(tmp_path / "a.kscan", TimedPointCloud(np.ones((2, 3))))
        assert io.read_scan_file(tmp_path / "a.kscan").timestamps is None

    def test_absolute_stamps_normalized(self, tmp_path):
        path = tmp_path / "a.kscan"
        with open(path, "wb") as fh:
            fh.write(struct.pack("<8sHQH", b"KICPSCAN", 1, 3, 1))
            fh.write(np.zeros((3, 3)).tobytes())
            fh.write(np.array([10.0, 10.025, 10.1]).tobytes())
        # Linear map (t - 10.0) / 0.1.
        np.testing.assert_allclose(io.read_scan_file(path).timestamps, [0.0, 0.25, 1.0], atol=1e-12)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "a.kscan"
        path.write_bytes(struct.pack("<8sHQH", b"NOTASCAN", 1, 0, 0))
        with pytest.raises(io.DataError, match="byte offset 0"):
            io.read_scan_file(path)

    def test_count_mismatch(self, tmp_path):
        path = tmp_path / "a.kscan"
        path.write_bytes(struct.pack("<8sHQH", b"KICPSCAN", 1, 5, 0) + np.zeros(6).tobytes())
        with pytest.raises(io.DataError, match="byte offset"):
            io.read_scan_file(path)

    def test_truncated_header(self, tmp_path):
        path = tmp_path / "a.kscan"
        path.write_bytes(b"KICP")
        with pytest.raises(io.DataError, match="byte offset 4"):
            io.read_scan_file(path)


class TestOdometryCsv:
    def test_rows(self, tmp_path):
        path = tmp_path / "odom.csv"
        path.write_text("t,x,y,yaw\n0.0,0,0,0\n1.0,1.0,0,1.5708\n")
        rows = io.read_odometry_csv(path)
        assert rows[0][0] == 0.0 and np.allclose(rows[0][1].as_matrix(), np.eye(4))
        np.testing.assert_allclose(rows[1][1].translation, [1, 0, 0])
        assert rows[1][1].yaw == pytest.approx(1.5708)

    def test_increment_by_hand(self, tmp_path):
        path = tmp_path / "odom.csv"
        path.write_text("0.0,1.0,2.0,0.5\n0.1,1.5,2.5,0.7\n")
        inc = odometry_increments(io.read_odometry_csv(path))[1]
        # W0^-1 W1 composed by hand: rotate the world delta by -0.5.
        c, s = math.cos(-0.5), math.sin(-0.5)
        np.testing.assert_allclose(inc.translation[:2], [c * 0.5 - s * 0.5, s * 0.5 + c * 0.5], atol=1e-12)
        assert inc.yaw == pytest.approx(0.2)

    def test_non_monotone(self, tmp_path):
        path = tmp_path / "odom.csv"
        path.write_text("# comment\n0.0,0,0,0\n0.0,1,0,0\n")
        with pytest.raises(io.DataError, match="row 3"):
            io.read_odometry_csv(path)

    def test_round_trip(self, tmp_path):
        rows = [(0.1 * k, Pose.from_planar(k * 0.3, -k * 0.1, 0.05 * k)) for k in range(10)]
        io.write_odometry_csv(tmp_path / "o.csv", rows)
        for (t, p), (u, q) in zip(rows, io.read_odometry_csv(tmp_path / "o.csv")):
            assert t == u
            np.testing.assert_allclose(p.as_matrix(), q.as_matrix(), atol=1e-15)


class TestTum:
    def test_identity_line(self):
        assert io.format_tum_line(0.0, Pose.identity()) == "0.000000000 0 0 0 0 0 0 1"

    def test_yaw_pi(self):
        fields = io.format_tum_line(1.0, Pose.from_planar(0, 0, math.pi)).split()
        np.testing.assert_allclose([float(v) for v in fields[4:]], [0, 0, 1, 0], atol=1e-9)

    def test_round_trip(self, tmp_path, rng):
        traj = Trajectory((0.1 * k, random_pose(rng)) for k in range(50))
        io.write_trajectory_tum(tmp_path / "t.tum", traj)
        back = io.read_trajectory_tum(tmp_path / "t.tum")
        assert len(back) == 50
        for (t, p), (u, q) in zip(traj, back):
            assert u == pytest.approx(t, abs=1e-9)
            np.testing.assert_allclose(p.as_matrix(), q.as_matrix(), atol=1e-8)

    def test_bad_line(self, tmp_path):
        (tmp_path / "t.tum").write_text("0 1 2 3\n")
        with pytest.raises(io.DataError, match="line 1"):
            io.read_trajectory_tum(tmp_path / "t.tum")


class TestRunConfig:
    def test_defaults(self):
        cfg = io.parse_run_config("")
        assert cfg.odometry == OdometryConfig()

    def test_modes(self):
        text = "voxel_size = 0.5  # meters\nregularization = fixed(0.1)\nthreshold = fixed(0.4)\ninitial_pose = 1 2 0.3\n"
        cfg = io.parse_run_config(text)
        assert cfg.odometry.voxel_size == 0.5
        assert cfg.odometry.regularization == "fixed" and cfg.odometry.beta == 0.1
        assert cfg.odometry.fixed_threshold == 0.4
        assert cfg.initial_pose.yaw == pytest.approx(0.3)

    def test_round_trip(self):
        cfg = io.parse_run_config("regularization = off\nmax_iterations = 20\ndeskew = false\n")
        again = io.parse_run_config(io.format_run_config(cfg))
        assert again.odometry == cfg.odometry

    @pytest.mark.parametrize(
        "text", ["voxel_size = -1", "regularization = fixed(0)", "unknown = 3", "voxel_size"]
    )
    def test_invalid(self, text):
        with pytest.raises(io.DataError):
            io.parse_run_config(text)


def test_report_format(tmp_path):
    from kinodom.pipeline import ScanDiagnostics

    diags = [ScanDiagnostics(0, 0.0, math.nan, 0, 0, 0.0, 1.0), ScanDiagnostics(1, 0.5, 0.0123, 7, 300, 1e-3, 0.5)]
    io.write_report_csv(tmp_path / "r.csv", diags)
    assert (tmp_path / "r.csv").read_text().splitlines() == [
        io.REPORT_HEADER,
        "0,0.000000000,nan,0,0,0,1",
        "1,0.500000000,0.0123,7,300,0.001,0.5",
    ]
