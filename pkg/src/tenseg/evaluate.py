"""Trajectory evaluation: alignment, drift, and relative pose error.

The estimator's world frame is anchored at its starting pose with
unobservable yaw, so estimated trajectories are first rigidly aligned
(rotation + translation, no scale) to ground truth over an initial
window before any error is computed.  Drift is the final position error
as a percentage of ground-truth path length; RPE is the RMS translation
error over consecutive one-meter segments of ground-truth arc length.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np


class EvaluationError(Exception):
    pass


@dataclass(frozen=True)
class Trajectory:
    timestamps: np.ndarray        # (N,)
    positions: np.ndarray         # (N, 3)
    rotations: np.ndarray = None  # (N, 3, 3), optional

    def __post_init__(self):
        t = np.array(self.timestamps, dtype=float)
        p = np.array(self.positions, dtype=float)
        if t.ndim != 1 or p.shape != (t.size, 3):
            raise ValueError("need (N,) timestamps and (N, 3) positions")
        if t.size < 2:
            raise ValueError("trajectory needs at least two samples")
        if np.any(np.diff(t) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        t.flags.writeable = False
        p.flags.writeable = False
        object.__setattr__(self, "timestamps", t)
        object.__setattr__(self, "positions", p)
        if self.rotations is not None:
            R = np.array(self.rotations, dtype=float)
            if R.shape != (t.size, 3, 3):
                raise ValueError("rotations must be (N, 3, 3)")
            R.flags.writeable = False
            object.__setattr__(self, "rotations", R)

    def length(self):
        """Polyline arc length of the position track."""
        return float(np.sum(np.linalg.norm(np.diff(self.positions, axis=0),
                                           axis=1)))

    def arc_lengths(self):
        d = np.linalg.norm(np.diff(self.positions, axis=0), axis=1)
        return np.concatenate([[0.0], np.cumsum(d)])


@dataclass(frozen=True)
class MetricsReport:
    path_length: float
    final_error: float
    drift_pct: float
    rpe_rmse: float
    n_segments: int

    def as_dict(self):
        return {
            "path_length_m": self.path_length,
            "final_error_m": self.final_error,
            "drift_pct": self.drift_pct,
            "rpe_rmse_m_per_m": self.rpe_rmse,
            "rpe_segments": self.n_segments,
        }


def drift_percent(final_error, path_length):
    """Final position error as a percentage of distance travelled."""
    if path_length <= 0:
        raise EvaluationError("path length must be positive")
    return 100.0 * final_error / path_length


def _associate(est: Trajectory, ref: Trajectory, tolerance):
    """Indices pairing each reference sample with its nearest estimate."""
    idx = np.searchsorted(est.timestamps, ref.timestamps)
    idx = np.clip(idx, 1, est.timestamps.size - 1)
    left = est.timestamps[idx - 1]
    right = est.timestamps[idx]
    use_left = np.abs(ref.timestamps - left) <= np.abs(right - ref.timestamps)
    idx = np.where(use_left, idx - 1, idx)
    ok = np.abs(est.timestamps[idx] - ref.timestamps) <= tolerance
    if not np.any(ok):
        raise EvaluationError("no overlapping samples within tolerance")
    return idx, ok


def _umeyama(src, dst):
    """Rigid rotation + translation (no scale) minimizing |dst - (R src + t)|."""
    cs = src.mean(axis=0)
    cd = dst.mean(axis=0)
    H = (dst - cd).T @ (src - cs)
    U, _, Vt = np.linalg.svd(H)
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(U @ Vt))
    R = U @ D @ Vt
    return R, cd - R @ cs


def align_initial(est: Trajectory, ref: Trajectory, window=3.0,
                  tolerance=0.005):
    """Rigidly align the estimate to the reference over an initial window.

    When both trajectories carry orientations the rotation is the
    chordal mean of the per-sample orientation offsets over the window
    (robust even when the window is stationary or the path is nearly
    straight).  Otherwise a closed-form point-cloud fit is used, which
    needs motion in the window; a stationary position-only window gets
    identity rotation.  Returns (aligned_estimate, rotation,
    translation).
    """
    idx, ok = _associate(est, ref, tolerance)
    t0 = ref.timestamps[ok][0]
    sel = ok & (ref.timestamps <= t0 + window)
    dst = ref.positions[sel]
    src = est.positions[idx[sel]]
    if est.rotations is not None and ref.rotations is not None:
        M = np.einsum("nij,nkj->ik", ref.rotations[sel],
                      est.rotations[idx[sel]])
        U, _, Vt = np.linalg.svd(M)
        D = np.eye(3)
        D[2, 2] = np.sign(np.linalg.det(U @ Vt))
        R = U @ D @ Vt
        t = dst.mean(axis=0) - R @ src.mean(axis=0)
    elif np.max(np.linalg.norm(dst - dst.mean(axis=0), axis=1)) > 1e-3:
        R, t = _umeyama(src, dst)
    else:
        R = np.eye(3)
        t = dst.mean(axis=0) - R @ src.mean(axis=0)
    aligned = Trajectory(
        est.timestamps, (R @ est.positions.T).T + t,
        None if est.rotations is None else np.einsum("ij,njk->nik", R,
                                                     est.rotations))
    return aligned, R, t


def drift_metrics(est: Trajectory, ref: Trajectory, segment_length=1.0,
                  tolerance=0.005) -> MetricsReport:
    """Drift and per-meter RPE of an aligned estimate against ground truth."""
    idx, ok = _associate(est, ref, tolerance)
    ref_pos = ref.positions[ok]
    est_pos = est.positions[idx[ok]]
    d = np.linalg.norm(np.diff(ref_pos, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(d)])
    path_length = float(arc[-1])
    final_error = float(np.linalg.norm(est_pos[-1] - ref_pos[-1]))

    errors = []
    start = 0
    for k in range(1, arc.size):
        if arc[k] - arc[start] >= segment_length:
            d_ref = ref_pos[k] - ref_pos[start]
            d_est = est_pos[k] - est_pos[start]
            errors.append(np.linalg.norm(d_est - d_ref))
            start = k
    rpe = float(np.sqrt(np.mean(np.square(errors)))) if errors else 0.0
    return MetricsReport(
        path_length=path_length,
        final_error=final_error,
        drift_pct=drift_percent(final_error, path_length),
        rpe_rmse=rpe,
        n_segments=len(errors),
    )


def evaluate_run(est: Trajectory, ref: Trajectory, window=3.0,
                 segment_length=1.0, tolerance=0.005) -> MetricsReport:
    """Convenience wrapper: align on the initial window, then score."""
    aligned, _, _ = align_initial(est, ref, window=window, tolerance=tolerance)
    return drift_metrics(aligned, ref, segment_length=segment_length,
                         tolerance=tolerance)
