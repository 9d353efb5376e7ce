"""Trajectory containers and evaluation metrics (segment RPE, aligned ATE)."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .geometry import Pose

DEFAULT_SEGMENTS = (1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0)
# Slack when deciding whether a segment has reached its nominal length.
_LENGTH_TOL = 1e-9
# Time gaps closer than this count as ties, resolved toward the earlier stamp.
_TIME_TOL = 1e-9


class Trajectory:
    """Time-ordered ``(timestamp, Pose)`` entries with strictly increasing stamps."""

    def __init__(self, entries=None) -> None:
        self._stamps: list[float] = []
        self._poses: list[Pose] = []
        for t, pose in entries or ():
            self.append(t, pose)

    def append(self, timestamp: float, pose: Pose) -> None:
        timestamp = float(timestamp)
        if self._stamps and timestamp <= self._stamps[-1]:
            raise ValueError(
                f"timestamp {timestamp!r} does not increase past {self._stamps[-1]!r}"
            )
        self._stamps.append(timestamp)
        self._poses.append(pose)

    def __len__(self) -> int:
        return len(self._stamps)

    def __iter__(self):
        return iter(zip(self._stamps, self._poses))

    def __getitem__(self, index):
        return self._stamps[index], self._poses[index]

    @property
    def timestamps(self) -> np.ndarray:
        return np.array(self._stamps)

    @property
    def poses(self) -> list[Pose]:
        return list(self._poses)

    def positions(self) -> np.ndarray:
        return np.array([p.translation for p in self._poses]).reshape(-1, 3)

    def transformed(self, transform: Pose) -> Trajectory:
        """Copy with every pose left-multiplied by ``transform``."""
        return Trajectory((t, transform @ p) for t, p in self)


def associate(
    estimate: Trajectory, reference: Trajectory, max_time_diff: float = 0.01
) -> list[tuple[int, int]]:
    """Greedily pair each estimate stamp with the nearest unused later reference stamp.

    Near-ties go to the earlier reference so that a constant half-period
    offset still pairs every entry.
    """
    if len(estimate) == 0 or len(reference) == 0:
        raise ValueError("cannot associate an empty trajectory")
    ref_t = reference.timestamps
    pairs: list[tuple[int, int]] = []
    last = -1
    for i, t in enumerate(estimate.timestamps):
        k = int(np.searchsorted(ref_t, t))
        best = None
        for j in (k - 1, k):
            if last < j < len(ref_t) and (
                best is None or abs(ref_t[j] - t) < abs(ref_t[best] - t) - _TIME_TOL
            ):
                best = j
        if best is not None and abs(ref_t[best] - t) <= max_time_diff:
            pairs.append((i, best))
            last = best
    if not pairs:
        raise ValueError("no temporal overlap between the trajectories")
    return pairs


def _paired_matrices(estimate, reference, max_time_diff):
    pairs = associate(estimate, reference, max_time_diff)
    est = np.array([estimate[i][1].as_matrix() for i, _ in pairs])
    ref = np.array([reference[j][1].as_matrix() for _, j in pairs])
    return est, ref


def _relative(mats: np.ndarray, start: np.ndarray, end: np.ndarray):
    r_s = mats[start, :3, :3]
    rot = np.einsum("nji,njk->nik", r_s, mats[end, :3, :3])
    trans = np.einsum("nji,nj->ni", r_s, mats[end, :3, 3] - mats[start, :3, 3])
    return rot, trans


@dataclass(frozen=True)
class SegmentErrors:
    """Per-segment relative errors; translation in percent, rotation in rad/m."""

    start: np.ndarray
    end: np.ndarray
    length: np.ndarray
    translation_percent: np.ndarray
    rotation_per_meter: np.ndarray


def segment_errors(
    estimate: Trajectory,
    reference: Trajectory,
    segment_lengths=DEFAULT_SEGMENTS,
    max_time_diff: float = 0.01,
) -> SegmentErrors:
    """Relative errors for every start index and every segment length.

    A segment ends at the first reference pose whose travelled distance
    from the start reaches the nominal length.
    """
    est, ref = _paired_matrices(estimate, reference, max_time_diff)
    steps = np.linalg.norm(np.diff(ref[:, :3, 3], axis=0), axis=1)
    dist = np.concatenate([[0.0], np.cumsum(steps)])
    starts, ends, lengths = [], [], []
    idx = np.arange(len(dist))
    for length in segment_lengths:
        length = float(length)
        if length <= 0:
            raise ValueError("segment lengths must be positive")
        end = np.searchsorted(dist, dist + length - _LENGTH_TOL, side="left")
        valid = end < len(dist)
        starts.append(idx[valid])
        ends.append(end[valid])
        lengths.append(np.full(int(valid.sum()), length))
    start = np.concatenate(starts).astype(int)
    end = np.concatenate(ends).astype(int)
    length = np.concatenate(lengths)
    if len(start) == 0:
        raise ValueError("trajectory too short for the requested segment lengths")
    rot_ref, t_ref = _relative(ref, start, end)
    rot_est, t_est = _relative(est, start, end)
    err_t = np.einsum("nji,nj->ni", rot_ref, t_est - t_ref)
    err_r = np.einsum("nji,njk->nik", rot_ref, rot_est)
    cos_angle = np.clip(0.5 * (np.trace(err_r, axis1=1, axis2=2) - 1.0), -1.0, 1.0)
    return SegmentErrors(
        start=start,
        end=end,
        length=length,
        translation_percent=np.linalg.norm(err_t, axis=1) / length * 100.0,
        rotation_per_meter=np.arccos(cos_angle) / length,
    )


def rpe_translation_percent(
    estimate: Trajectory,
    reference: Trajectory,
    segment_lengths=DEFAULT_SEGMENTS,
    max_time_diff: float = 0.01,
) -> float:
    """Mean relative translation error in percent over all (start, length) segments."""
    errors = segment_errors(estimate, reference, segment_lengths, max_time_diff)
    return float(np.mean(errors.translation_percent))


def align_rigid(source: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rotation and translation minimizing ``sum |R p + t - q|^2`` (no scale)."""
    mu_s = source.mean(axis=0)
    mu_t = target.mean(axis=0)
    cov = (target - mu_t).T @ (source - mu_s)
    u, _, vt = np.linalg.svd(cov)
    d = np.eye(3)
    d[2, 2] = np.sign(np.linalg.det(u @ vt)) or 1.0
    rot = u @ d @ vt
    return rot, mu_t - rot @ mu_s


def ate_rmse(
    estimate: Trajectory, reference: Trajectory, max_time_diff: float = 0.01
) -> float:
    """RMSE of positions after the best rigid alignment of estimate onto reference."""
    pairs = associate(estimate, reference, max_time_diff)
    if len(pairs) < 3:
        raise ValueError("at least three associated poses are needed for alignment")
    est = np.array([estimate[i][1].translation for i, _ in pairs])
    ref = np.array([reference[j][1].translation for _, j in pairs])
    spread = np.linalg.svd(est - est.mean(axis=0), compute_uv=False)
    if spread[1] <= 1e-9 * max(spread[0], 1.0):
        warnings.warn(
            "estimate positions are collinear; rotation about their line is arbitrary",
            RuntimeWarning,
            stacklevel=2,
        )
    rot, trans = align_rigid(est, ref)
    residual = est @ rot.T + trans - ref
    return float(np.sqrt(np.mean(np.sum(residual**2, axis=1))))
