"""Temporal and spatial calibration.

Temporal: the lag between the image and pose streams is the argmax of the
normalized cross-correlation of two motion signals (detrended, resampled to
a common rate), refined to sub-sample precision by parabolic interpolation
of the correlation peak.

Spatial: the image->probe transform comes from an N-wire phantom protocol.
Each scan plane cuts one N into three collinear image points; the middle
point divides the outer segment with the same ratio that the plane divides
the diagonal wire (similar triangles), which localizes a 3D phantom-frame
point per observation. The rigid transform is then the closed-form
absolute-orientation solution (centroid subtraction, cross-covariance SVD
with determinant correction).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import (
    DataError,
    DegenerateConfigurationError,
    DegenerateObservationError,
    InvalidInputError,
    UndefinedLagError,
)
from .se3 import Pose, quat_from_rotvec, quat_multiply
from .validation import as_matrix, as_vector, check_positive


# ---------------------------------------------------------------------------
# temporal calibration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TemporalSignalPair:
    """Two scalar motion signals with their own timestamps; both are
    resampled to `sample_rate` over the overlapping span before
    correlation."""

    t_a: np.ndarray
    a: np.ndarray
    t_b: np.ndarray
    b: np.ndarray
    sample_rate: float = 30.0

    def __post_init__(self):
        check_positive(self.sample_rate, "sample_rate")
        for name in ("t_a", "a", "t_b", "b"):
            v = np.asarray(getattr(self, name), dtype=np.float64)
            object.__setattr__(self, name, v)
        if self.t_a.shape != self.a.shape or self.t_b.shape != self.b.shape:
            raise InvalidInputError("signal and timestamp lengths must match")


@dataclass(frozen=True)
class LagEstimate:
    lag_s: float
    peak_correlation: float

    def to_dict(self) -> dict:
        return {"lag_s": self.lag_s, "peak_correlation": self.peak_correlation}


def _detrend(x: np.ndarray) -> np.ndarray:
    n = x.size
    t = np.arange(n, dtype=np.float64)
    coef = np.polyfit(t, x, 1)
    return x - np.polyval(coef, t)


def estimate_lag(pair: TemporalSignalPair, max_lag: float) -> LagEstimate:
    """Lag of signal b relative to a in seconds (b(t) = a(t - lag)).

    Integer-lag normalized cross-correlation over +-max_lag followed by
    parabolic refinement of the peak. Raises UndefinedLagError for flat
    signals or an empty overlap.
    """
    fs = pair.sample_rate
    t0 = max(pair.t_a.min(), pair.t_b.min())
    t1 = min(pair.t_a.max(), pair.t_b.max())
    if t1 <= t0:
        raise UndefinedLagError("signals do not overlap in time")
    n = int(math.floor((t1 - t0) * fs)) + 1
    grid = t0 + np.arange(n) / fs
    a = np.interp(grid, pair.t_a, pair.a)
    b = np.interp(grid, pair.t_b, pair.b)
    a = _detrend(a)
    b = _detrend(b)
    if float(np.dot(a, a)) < 1e-20 or float(np.dot(b, b)) < 1e-20:
        raise UndefinedLagError("flat signal: lag is undefined")

    max_shift = int(round(max_lag * fs))
    max_shift = min(max_shift, n - 2)
    if max_shift < 0:
        raise UndefinedLagError("max_lag too small for the sample rate")
    lags = np.arange(-max_shift, max_shift + 1)
    corr = np.empty(lags.size)
    for i, lag in enumerate(lags):
        if lag >= 0:
            x, y = a[: n - lag], b[lag:]
        else:
            x, y = a[-lag:], b[: n + lag]
        denom = math.sqrt(float(np.dot(x, x)) * float(np.dot(y, y)))
        corr[i] = float(np.dot(x, y)) / denom if denom > 1e-20 else 0.0

    best = int(np.argmax(corr))
    shift = float(lags[best])
    peak = float(corr[best])
    # a correlation of 1 means exact alignment (Cauchy-Schwarz equality);
    # parabolic refinement would only perturb the integer lag then
    if peak < 1.0 - 1e-7 and 0 < best < corr.size - 1:
        c_m, c_0, c_p = corr[best - 1], corr[best], corr[best + 1]
        denom = c_m - 2.0 * c_0 + c_p
        if abs(denom) > 1e-15:
            shift += 0.5 * (c_m - c_p) / denom
    return LagEstimate(lag_s=shift / fs, peak_correlation=peak)


def write_lag_result(result: LagEstimate, path) -> None:
    Path(path).write_text(json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# N-wire geometry
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NWire:
    """One N-shaped wire triple in phantom coordinates: two parallel outer
    wires bridged by a diagonal running from the start of wire a to the end
    of wire b."""

    wire_a: tuple  # ((x,y,z) start, (x,y,z) end)
    diagonal: tuple
    wire_b: tuple

    def segments(self):
        return (
            np.asarray(self.wire_a, dtype=np.float64),
            np.asarray(self.diagonal, dtype=np.float64),
            np.asarray(self.wire_b, dtype=np.float64),
        )


@dataclass(frozen=True)
class NWireObservation:
    """Three collinear image points (px, ordered wire a, diagonal, wire b)
    with the poses needed to express the localized point in the probe
    frame."""

    image_points: np.ndarray  # (3, 2)
    wire: NWire
    probe_pose: Pose  # camera frame
    phantom_pose: np.ndarray  # (4, 4) camera frame

    def __post_init__(self):
        pts = as_matrix(self.image_points, (3, 2), "image_points")
        object.__setattr__(self, "image_points", pts)
        object.__setattr__(
            self, "phantom_pose", as_matrix(self.phantom_pose, (4, 4), "phantom_pose")
        )
        # collinearity: within 1 px of the total-least-squares fitted line
        centered = pts - pts.mean(axis=0)
        sv = np.linalg.svd(centered, compute_uv=False)
        if sv[-1] > 1.0:
            raise InvalidInputError(
                f"N-wire image points deviate {sv[-1]:.2f} px from a fitted line"
            )


@dataclass(frozen=True)
class SpatialCalibration:
    transform: np.ndarray  # (4, 4) image -> probe, mm
    pixel_spacing: tuple  # (mm/px, mm/px)
    rms_residual: float
    n_observations: int

    def __post_init__(self):
        object.__setattr__(self, "transform", as_matrix(self.transform, (4, 4), "transform"))
        su, sv = self.pixel_spacing
        if su <= 0 or sv <= 0:
            raise InvalidInputError("pixel_spacing must be positive")

    def to_dict(self) -> dict:
        return {
            "transform": self.transform.tolist(),
            "pixel_spacing": list(self.pixel_spacing),
            "rms_residual": self.rms_residual,
            "n_observations": self.n_observations,
        }

    @staticmethod
    def from_dict(d: dict) -> "SpatialCalibration":
        return SpatialCalibration(
            transform=np.asarray(d["transform"], dtype=np.float64),
            pixel_spacing=tuple(d["pixel_spacing"]),
            rms_residual=float(d["rms_residual"]),
            n_observations=int(d["n_observations"]),
        )


def write_calibration(result: SpatialCalibration, path) -> None:
    Path(path).write_text(json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n")


def read_calibration(path) -> SpatialCalibration:
    try:
        d = json.loads(Path(path).read_text())
        return SpatialCalibration.from_dict(d)
    except OSError as e:
        raise DataError(f"cannot read calibration {path}: {e}") from e
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise DataError(f"{path}: bad calibration file ({e})") from e


def locate_middle_wire(
    image_points: np.ndarray, wire: NWire, pixel_spacing=(1.0, 1.0)
) -> np.ndarray:
    """Phantom-frame 3D point of the diagonal intersection.

    The ratio alpha = |AB| / |AC| measured along the image line equals the
    fraction along the diagonal segment (similar triangles of the N shape).
    Raises DegenerateObservationError when the outer points (nearly)
    coincide.
    """
    pts = as_matrix(np.asarray(image_points, dtype=np.float64), (3, 2), "image_points")
    scale = np.asarray(pixel_spacing, dtype=np.float64)
    mm = pts * scale[np.newaxis, :]
    ac = float(np.linalg.norm(mm[2] - mm[0]))
    if np.linalg.norm(pts[2] - pts[0]) < 2.0:
        raise DegenerateObservationError("outer wire points nearly coincide")
    alpha = float(np.linalg.norm(mm[1] - mm[0])) / ac
    d = np.asarray(wire.diagonal, dtype=np.float64)
    return d[0] + alpha * (d[1] - d[0])


def rigid_transform_fit(source: np.ndarray, target: np.ndarray):
    """Closed-form least-squares rigid alignment source -> target (Arun/
    Kabsch: centroids, cross-covariance, SVD with determinant correction).

    Returns (R, t, rms). Raises DegenerateConfigurationError for collinear
    configurations.
    """
    source = np.asarray(source, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if source.shape != target.shape or source.ndim != 2 or source.shape[1] != 3:
        raise InvalidInputError("source and target must be matching (N, 3) arrays")
    if source.shape[0] < 3:
        raise DegenerateConfigurationError("need at least 3 correspondences")
    c_s = source.mean(axis=0)
    c_t = target.mean(axis=0)
    src = source - c_s
    tgt = target - c_t
    # a rigid transform needs spread in at least two directions on each side
    for pts, name in ((src, "source"), (tgt, "target")):
        sv = np.linalg.svd(pts, compute_uv=False)
        if sv[1] < 1e-9 * max(1.0, sv[0]):
            raise DegenerateConfigurationError(f"{name} points are (near) collinear")
    h = src.T @ tgt
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    t = c_t - r @ c_s
    resid = target - (source @ r.T + t)
    rms = float(np.sqrt(np.mean(np.sum(resid**2, axis=1))))
    return r, t, rms


def solve_spatial_calibration(
    observations: Sequence[NWireObservation],
    pixel_spacing,
    residual_warn_mm: float = 5.0,
) -> SpatialCalibration:
    """Image->probe transform from N-wire observations.

    Pairs are (image point of the middle wire, scaled to mm in the z=0 image
    plane) against (phantom wire point expressed in the probe frame via
    probe_pose^-1 * phantom_pose). Raises DegenerateConfigurationError when
    the correspondences cannot constrain a rigid transform.
    """
    if len(observations) < 3:
        raise DegenerateConfigurationError("need at least 3 N-wire observations")
    su, sv = pixel_spacing
    source = np.empty((len(observations), 3))
    target = np.empty((len(observations), 3))
    for i, obs in enumerate(observations):
        middle_phantom = locate_middle_wire(obs.image_points, obs.wire, pixel_spacing)
        u, v = obs.image_points[1]
        source[i] = (su * u, sv * v, 0.0)
        probe_inv = obs.probe_pose.inverse().matrix()
        target[i] = (probe_inv @ obs.phantom_pose @ np.append(middle_phantom, 1.0))[:3]
    r, t, rms = rigid_transform_fit(source, target)
    transform = np.eye(4)
    transform[:3, :3] = r
    transform[:3, 3] = t
    if rms > residual_warn_mm:
        import warnings

        warnings.warn(
            f"spatial calibration residual {rms:.2f} mm exceeds {residual_warn_mm} mm",
            stacklevel=2,
        )
    return SpatialCalibration(transform, tuple(pixel_spacing), rms, len(observations))


# ---------------------------------------------------------------------------
# simulated N-wire protocol
# ---------------------------------------------------------------------------

def default_nwires() -> tuple:
    """Two N layers spanning x in [10, 70] mm, wires along y, at different
    depths."""
    def layer(z):
        return NWire(
            wire_a=((10.0, 0.0, z), (10.0, 100.0, z)),
            diagonal=((10.0, 0.0, z), (70.0, 100.0, z)),
            wire_b=((70.0, 0.0, z), (70.0, 100.0, z)),
        )

    return (layer(20.0), layer(45.0))


@dataclass(frozen=True)
class NWireProtocolConfig:
    n_observations: int = 30
    pixel_noise_px: float = 0.0
    pixel_spacing: tuple = (0.1, 0.1)
    seed: int = 0
    gt_transform: Optional[np.ndarray] = None  # image -> probe
    wires: tuple = field(default_factory=default_nwires)


def default_gt_image_to_probe() -> np.ndarray:
    rot = quat_multiply(quat_from_rotvec([0.0, 0.0, 0.03]), quat_from_rotvec([0.02, 0.0, 0.0]))
    return Pose(0.0, rot, [-15.0, 4.0, 8.0]).matrix()


def simulate_nwire_protocol(cfg: NWireProtocolConfig):
    """Generate synthetic N-wire observations with known ground truth.

    The scan plane is posed so it crosses every wire of each N; wire
    intersections are computed analytically and projected to exact
    (sub-pixel) image coordinates, with optional Gaussian pixel noise.
    Returns (observations, gt_transform).
    """
    rng = np.random.default_rng(cfg.seed)
    gt = cfg.gt_transform if cfg.gt_transform is not None else default_gt_image_to_probe()
    gt = as_matrix(np.asarray(gt, dtype=np.float64), (4, 4), "gt_transform")
    gt_inv = np.linalg.inv(gt)
    su, sv = cfg.pixel_spacing

    # phantom placed in front of the camera; the nominal image plane slices
    # through the middle of the wires
    phantom_pose = Pose(
        0.0, quat_from_rotvec([0.0, 0.01, 0.0]), [-40.0, -30.0, 420.0]
    ).matrix()

    observations = []
    attempts = 0
    while len(observations) < cfg.n_observations and attempts < cfg.n_observations * 50:
        attempts += 1
        # nominal image pose in phantom frame: u along +x, v along +z (depth),
        # plane normal u x v = -y, sliced at a random y
        y_slice = rng.uniform(25.0, 75.0)
        rock = rng.normal(scale=0.03, size=3)
        base = np.stack(
            [np.array([1.0, 0.0, 0.0]), np.array([0.0, 0.0, 1.0]), np.array([0.0, -1.0, 0.0])],
            axis=1,
        )
        r_img = _rotvec_matrix(rock) @ base
        t_img = np.array(
            [rng.uniform(-5.0, 5.0), y_slice, rng.uniform(-6.0, 2.0)]
        )
        img_in_phantom = np.eye(4)
        img_in_phantom[:3, :3] = r_img
        img_in_phantom[:3, 3] = t_img

        plane_origin = img_in_phantom[:3, 3]
        plane_normal = img_in_phantom[:3, 2]
        img_inv = np.linalg.inv(img_in_phantom)
        wire = cfg.wires[len(observations) % len(cfg.wires)]
        pts_img = []
        ok = True
        for seg in wire.segments():
            p0, p1 = seg
            denom = float(plane_normal @ (p1 - p0))
            if abs(denom) < 1e-9:
                ok = False
                break
            s = float(plane_normal @ (plane_origin - p0)) / denom
            if not 0.02 <= s <= 0.98:
                ok = False
                break
            q = p0 + s * (p1 - p0)
            q_img = img_inv @ np.append(q, 1.0)
            pts_img.append([q_img[0] / su, q_img[1] / sv])
        if not ok:
            continue
        pts_img = np.asarray(pts_img)
        if cfg.pixel_noise_px > 0:
            half = cfg.pixel_noise_px / 2.0
            pts_img += rng.uniform(-half, half, size=pts_img.shape)

        # probe pose in camera frame consistent with the scan plane:
        # T_probe = T_phantom * T_img_in_phantom * inv(T_image_to_probe)
        probe_mat = phantom_pose @ img_in_phantom @ gt_inv
        try:
            observations.append(
                NWireObservation(
                    image_points=pts_img,
                    wire=wire,
                    probe_pose=Pose.from_matrix(probe_mat),
                    phantom_pose=phantom_pose,
                )
            )
        except InvalidInputError:
            continue  # noise pushed the points off a line; redraw
    if len(observations) < cfg.n_observations:
        raise DegenerateConfigurationError("could not realize the requested protocol")
    return observations, gt


def _rotvec_matrix(rv) -> np.ndarray:
    from .se3 import quat_to_matrix

    return quat_to_matrix(quat_from_rotvec(rv))
