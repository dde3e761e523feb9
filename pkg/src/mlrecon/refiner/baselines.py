"""Classical per-channel smoothing baselines for the ablation comparison:
constant-velocity Kalman, sliding mean, and sliding median.

All filters operate channel-wise in the normalized 9-dim space on the valid
subsequence; rotations are re-projected afterwards and invalid poses pass
through untouched. Mean and median use symmetric windows truncated at the
sequence boundaries.
"""

from __future__ import annotations

import numpy as np

from ..errors import InvalidInputError
from ..se3 import NormalizationParams, PoseSequence, S_P_DEFAULT, denormalize_array, normalize_array
from .infer import _rebuild, _valid_channel_matrix

BASELINE_KINDS = ("kalman", "mean", "median")


def _clamp_window(window: int, length: int) -> int:
    # window larger than the sequence clamps to the largest odd size <= L
    if window > length:
        window = length if length % 2 == 1 else length - 1
    return max(window, 1)


def _sliding_mean(x: np.ndarray, window: int) -> np.ndarray:
    half = window // 2
    length = x.shape[1]
    csum = np.concatenate([np.zeros((9, 1)), np.cumsum(x, axis=1)], axis=1)
    out = np.empty_like(x)
    for i in range(length):
        lo = max(0, i - half)
        hi = min(length, i + half + 1)
        out[:, i] = (csum[:, hi] - csum[:, lo]) / (hi - lo)
    return out


def _sliding_median(x: np.ndarray, window: int) -> np.ndarray:
    half = window // 2
    length = x.shape[1]
    out = np.empty_like(x)
    for i in range(length):
        lo = max(0, i - half)
        hi = min(length, i + half + 1)
        out[:, i] = np.median(x[:, lo:hi], axis=1)
    return out


def _kalman_cv(x: np.ndarray, timestamps: np.ndarray, q: float, r: float) -> np.ndarray:
    """Causal constant-velocity Kalman filter per channel."""
    length = x.shape[1]
    out = np.empty_like(x)
    state = np.zeros((9, 2))
    state[:, 0] = x[:, 0]
    cov = np.tile(np.diag([r, 1.0]), (9, 1, 1))
    out[:, 0] = x[:, 0]
    for i in range(1, length):
        dt = float(timestamps[i] - timestamps[i - 1])
        f = np.array([[1.0, dt], [0.0, 1.0]])
        qm = q * np.array(
            [[dt**3 / 3.0, dt**2 / 2.0], [dt**2 / 2.0, dt]]
        )
        state = state @ f.T
        cov = f @ cov @ f.T + qm
        innov = x[:, i] - state[:, 0]
        s = cov[:, 0, 0] + r
        gain = cov[:, :, 0] / s[:, None]
        state = state + gain * innov[:, None]
        cov = cov - gain[:, :, None] * cov[:, 0, :][:, None, :]
        out[:, i] = state[:, 0]
    return out


def baseline_filters(
    seq: PoseSequence,
    kind: str,
    window: int = 5,
    process_noise: float = 1e-4,
    measurement_noise: float = 1e-4,
    s_p: float = S_P_DEFAULT,
) -> PoseSequence:
    """Apply one of the classical baselines to a pose sequence.

    ``window`` must be odd for the mean and median filters; a window longer
    than the valid subsequence is clamped to the largest odd length that
    fits. Kalman noise parameters are expressed in normalized channel units.
    """
    if kind not in BASELINE_KINDS:
        raise InvalidInputError(f"kind must be one of {BASELINE_KINDS}, got {kind!r}")
    x, idx = _valid_channel_matrix(seq)
    params = NormalizationParams(s_p, x[6:9, 0])
    xn = normalize_array(x, params)
    if kind in ("mean", "median"):
        if window % 2 != 1:
            raise InvalidInputError("window must be odd for mean/median filters")
        window = _clamp_window(window, xn.shape[1])
        filtered = _sliding_mean(xn, window) if kind == "mean" else _sliding_median(xn, window)
    else:
        ts = seq.timestamps[idx]
        filtered = _kalman_cv(xn, ts, process_noise, measurement_noise)
    return _rebuild(seq, idx, denormalize_array(filtered, params))
