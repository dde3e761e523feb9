"""Synthetic scan generation: trajectories, tracker noise, B-mode frames.

The simulated world uses the depth-camera frame as the global frame: camera
at the origin, +z forward, +x right, +y down. The phantom sits in front of
the camera (z around 500 mm) and the probe sweeps above it, imaging in the
+y direction. All training and evaluation data comes from this module.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.signal import lfilter

from .errors import DataError, InvalidInputError, NoObservationError
from .se3 import (
    NormalizationParams,
    Pose,
    PoseSequence,
    S_P_DEFAULT,
    array_to_sequence,
    denormalize_array,
    matrix_to_quat,
    normalize_array,
    quat_from_rotvec,
    quat_multiply,
    read_pose_csv,
    sequence_to_array,
    write_pose_csv,
)
from .validation import check_positive

TRAJECTORY_MODES = ("linear", "back_and_forth", "spiral", "free")


# ---------------------------------------------------------------------------
# configuration types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole depth-camera model (pixels)."""

    fx: float = 600.0
    fy: float = 600.0
    cx: float = 320.0
    cy: float = 240.0
    width: int = 640
    height: int = 480

    def __post_init__(self):
        check_positive(self.fx, "fx")
        check_positive(self.fy, "fy")


@dataclass(frozen=True)
class TrajectoryConfig:
    """Ground-truth scan path parameters.

    `center` places the path centroid in the camera frame; `axis` picks the
    sweep direction for the linear and back-and-forth modes. `free` draws a
    seeded random concatenation of the other three modes.
    """

    mode: str
    total_distance: float  # mm
    duration: float  # s
    frame_rate: float = 30.0
    rotation_amplitude: float = 0.05  # rad
    seed: int = 0
    center: tuple = (0.0, -8.0, 500.0)
    axis: str = "x"
    cycles: int = 2  # full out-and-back cycles for back_and_forth

    def __post_init__(self):
        if self.mode not in TRAJECTORY_MODES:
            raise InvalidInputError(f"unknown trajectory mode {self.mode!r}")
        check_positive(self.total_distance, "total_distance")
        check_positive(self.duration, "duration")
        check_positive(self.frame_rate, "frame_rate")
        if self.axis not in ("x", "y", "z"):
            raise InvalidInputError(f"axis must be x, y or z, got {self.axis!r}")


@dataclass(frozen=True)
class NoiseConfig:
    """Simulated tracker error model, applied in the normalized 9-dim space.

    Three ingredients: i.i.d. per-frame Gaussian jitter, a first-order
    autoregressive bias walk (n_k = a * n_{k-1} + eps_k, started from its
    stationary distribution), and occasional smooth transient glitches that
    reproduce the large spikes of a raw visual tracker. With every field at
    zero the injector returns its input bit-exactly.
    """

    jitter_sigma_pos: float = 0.85  # mm
    jitter_sigma_rot: float = 0.004  # rad
    bias_step_sigma_pos: float = 0.03  # mm
    bias_step_sigma_rot: float = 1.5e-4  # rad
    bias_ar_coefficient: float = 0.99
    glitch_rate: float = 3.0  # expected glitches per 1000 frames
    glitch_magnitude_pos: float = 25.0  # mm, peak amplitude bound
    glitch_magnitude_rot: float = 0.03  # rad, peak amplitude bound
    glitch_duration: int = 8  # mean duration, frames
    seed: int = 0

    def __post_init__(self):
        for name in (
            "jitter_sigma_pos",
            "jitter_sigma_rot",
            "bias_step_sigma_pos",
            "bias_step_sigma_rot",
            "glitch_rate",
            "glitch_magnitude_pos",
            "glitch_magnitude_rot",
        ):
            if getattr(self, name) < 0:
                raise InvalidInputError(f"{name} must be >= 0")
        if not 0.0 < self.bias_ar_coefficient < 1.0:
            raise InvalidInputError("bias_ar_coefficient must be in (0, 1)")
        if self.glitch_duration < 2:
            raise InvalidInputError("glitch_duration must be >= 2 frames")

    @staticmethod
    def zero(seed: int = 0) -> "NoiseConfig":
        return NoiseConfig(0.0, 0.0, 0.0, 0.0, 0.99, 0.0, 0.0, 0.0, 2, seed)


@dataclass(frozen=True)
class Lesion:
    center: tuple  # mm, world frame
    radius: float
    intensity: int


@dataclass(frozen=True)
class Vessel:
    start: tuple  # mm, world frame
    end: tuple
    radius: float
    intensity: int


@dataclass(frozen=True)
class Phantom:
    """Analytic tissue block: a box of background with spherical lesions and
    cylindrical (capsule) vessels, all in world coordinates."""

    extent: tuple = (240.0, 80.0, 140.0)
    background_intensity: int = 60
    lesions: tuple = ()
    vessels: tuple = ()
    center: tuple = (0.0, 40.0, 500.0)

    def __post_init__(self):
        object.__setattr__(self, "lesions", tuple(self.lesions))
        object.__setattr__(self, "vessels", tuple(self.vessels))
        half = np.asarray(self.extent) / 2.0
        c = np.asarray(self.center)
        for les in self.lesions:
            d = np.abs(np.asarray(les.center) - c) + les.radius
            if np.any(d > half + 1e-9):
                raise InvalidInputError("lesion extends outside phantom extent")
        for ves in self.vessels:
            for endpoint in (ves.start, ves.end):
                d = np.abs(np.asarray(endpoint) - c) + ves.radius
                if np.any(d > half + 1e-9):
                    raise InvalidInputError("vessel extends outside phantom extent")

    def to_dict(self) -> dict:
        return {
            "extent": list(self.extent),
            "background_intensity": self.background_intensity,
            "center": list(self.center),
            "lesions": [
                {"center": list(l.center), "radius": l.radius, "intensity": l.intensity}
                for l in self.lesions
            ],
            "vessels": [
                {
                    "start": list(v.start),
                    "end": list(v.end),
                    "radius": v.radius,
                    "intensity": v.intensity,
                }
                for v in self.vessels
            ],
        }

    @staticmethod
    def from_dict(d: dict) -> "Phantom":
        return Phantom(
            extent=tuple(d["extent"]),
            background_intensity=int(d["background_intensity"]),
            lesions=tuple(
                Lesion(tuple(l["center"]), float(l["radius"]), int(l["intensity"]))
                for l in d.get("lesions", [])
            ),
            vessels=tuple(
                Vessel(
                    tuple(v["start"]),
                    tuple(v["end"]),
                    float(v["radius"]),
                    int(v["intensity"]),
                )
                for v in d.get("vessels", [])
            ),
            center=tuple(d.get("center", (0.0, 0.0, 0.0))),
        )


@dataclass(frozen=True)
class Frame:
    """One 8-bit B-mode raster with acquisition timestamp."""

    t: float
    width: int
    height: int
    pixel_spacing: tuple  # (mm/px along u, mm/px along v)
    data: np.ndarray  # (height, width) uint8, row-major

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.uint8)
        if data.shape != (self.height, self.width):
            raise InvalidInputError(
                f"frame data shape {data.shape} != (height, width) "
                f"({self.height}, {self.width})"
            )
        data = data.copy()
        data.setflags(write=False)
        object.__setattr__(self, "data", data)


@dataclass(frozen=True)
class FrameGeometry:
    width: int = 256
    height: int = 192
    pixel_spacing: tuple = (0.3, 0.3)


# the probe base orientation: image/probe u axis along world +z, v axis along
# world +y (into the tissue), plane normal along world -x
_R_PROBE_BASE = np.array(
    [
        [0.0, 0.0, -1.0],
        [0.0, 1.0, 0.0],
        [1.0, 0.0, 0.0],
    ]
)

_AXES = {"x": np.array([1.0, 0, 0]), "y": np.array([0, 1.0, 0]), "z": np.array([0, 0, 1.0])}


def default_calibration_matrix() -> np.ndarray:
    """Ground-truth image->probe transform used by the simulator."""
    rot = quat_multiply(
        quat_from_rotvec([0.0, 0.0, 0.02]), quat_from_rotvec([0.015, 0.0, 0.0])
    )
    m = Pose(0.0, rot, [-12.0, 3.0, 6.0]).matrix()
    return m


def default_phantom() -> Phantom:
    return Phantom(
        extent=(240.0, 80.0, 140.0),
        background_intensity=60,
        lesions=(
            Lesion((-45.0, 35.0, 495.0), 14.0, 190),
            Lesion((20.0, 30.0, 510.0), 10.0, 220),
            Lesion((60.0, 45.0, 480.0), 8.0, 160),
        ),
        vessels=(Vessel((-90.0, 50.0, 470.0), (90.0, 50.0, 530.0), 4.0, 20),),
        center=(0.0, 40.0, 500.0),
    )


# ---------------------------------------------------------------------------
# trajectory generation
# ---------------------------------------------------------------------------

def _smoothstep(u: np.ndarray) -> np.ndarray:
    return u * u * (3.0 - 2.0 * u)


def _horizontal_unit(rng) -> np.ndarray:
    ang = rng.uniform(0.0, 2.0 * math.pi)
    return np.array([math.cos(ang), 0.0, math.sin(ang)])


def _segment_linear(rng, dist: float, eased: bool):
    d = _horizontal_unit(rng)

    def offsets(tau):
        s = dist * (_smoothstep(tau) if eased else tau)
        return s[:, None] * d[None, :]

    return offsets


def _segment_back_and_forth(rng, dist: float, cycles: int):
    d = _horizontal_unit(rng)
    amp = dist / (2.0 * cycles)

    def offsets(tau):
        s = 0.5 * amp * (1.0 - np.cos(2.0 * math.pi * cycles * tau))
        return s[:, None] * d[None, :]

    return offsets


def _segment_spiral(rng, dist: float, eased: bool):
    d = _horizontal_unit(rng)
    w1 = np.cross(np.array([0.0, 1.0, 0.0]), d)
    w2 = np.array([0.0, 1.0, 0.0])
    turns = 2.0
    r1, r2 = 22.0, 4.0
    axial = dist * 0.75

    def raw(tau):
        u = _smoothstep(tau) if eased else tau
        th = 2.0 * math.pi * turns * u
        return (
            (axial * u)[:, None] * d[None, :]
            + (r1 * (np.cos(th) - 1.0))[:, None] * w1[None, :]
            + (r2 * np.sin(th))[:, None] * w2[None, :]
        )

    # rescale about the segment start so the dense polyline length equals dist
    dense = raw(np.linspace(0.0, 1.0, 4096))
    length = float(np.sum(np.linalg.norm(np.diff(dense, axis=0), axis=1)))
    scale = dist / length

    def offsets(tau):
        return raw(tau) * scale

    return offsets


def _free_segments(rng, total_distance: float, n_frames: int):
    """Seeded random concatenation of the three base modes."""
    k = int(rng.integers(3, 6))
    weights = rng.uniform(0.6, 1.4, size=k)
    weights = weights / weights.sum()
    modes = rng.integers(0, 3, size=k)
    bounds = np.concatenate([[0], np.round(np.cumsum(weights) * n_frames).astype(int)])
    bounds[-1] = n_frames
    segs = []
    for i in range(k):
        dist_i = total_distance * weights[i]
        if modes[i] == 0:
            fn = _segment_linear(rng, dist_i, eased=True)
        elif modes[i] == 1:
            fn = _segment_back_and_forth(rng, dist_i, cycles=1)
        else:
            fn = _segment_spiral(rng, dist_i, eased=True)
        segs.append((bounds[i], bounds[i + 1], fn))
    return segs


def generate_trajectory(cfg: TrajectoryConfig) -> PoseSequence:
    """Seeded ground-truth probe trajectory, C1 in position.

    The path length of the sampled sequence lies within 2% of
    ``cfg.total_distance``. Rotation is the fixed probe base orientation
    rocked by slow seeded sinusoids of amplitude ``rotation_amplitude``;
    with amplitude 0 all rotations are identical.
    """
    rng = np.random.default_rng(cfg.seed)
    n = int(round(cfg.duration * cfg.frame_rate))
    if n < 1:
        raise InvalidInputError("duration * frame_rate must round to >= 1 frame")
    ts = np.arange(n) / cfg.frame_rate

    # rocking profile (drawn first: keeps seed alignment across amplitudes)
    f1 = rng.uniform(0.2, 0.45)
    f2 = rng.uniform(0.5, 0.9)
    ph1 = rng.uniform(0.0, 2.0 * math.pi)
    ph2 = rng.uniform(0.0, 2.0 * math.pi)
    rock = cfg.rotation_amplitude * (
        np.sin(2.0 * math.pi * f1 * ts + ph1)[:, None] * _AXES["x"][None, :]
        + 0.5 * np.sin(2.0 * math.pi * f2 * ts + ph2)[:, None] * _AXES["z"][None, :]
    )

    axis = _AXES[cfg.axis]
    center = np.asarray(cfg.center, dtype=np.float64)
    d = cfg.total_distance
    dur = cfg.duration

    if cfg.mode == "linear":
        s = d * ts / dur
        pos = (s - d / 2.0)[:, None] * axis[None, :] + center[None, :]
    elif cfg.mode == "back_and_forth":
        amp = d / (2.0 * cfg.cycles)
        s = 0.5 * amp * (1.0 - np.cos(2.0 * math.pi * cfg.cycles * ts / dur))
        pos = (s - amp / 2.0)[:, None] * axis[None, :] + center[None, :]
    elif cfg.mode == "spiral":
        fn = _segment_spiral(rng, d, eased=False)
        pos = fn(ts / dur)
        pos = pos - pos.mean(axis=0) + center
    else:  # free
        segs = _free_segments(rng, d, n)
        pos = np.zeros((n, 3))
        start = np.zeros(3)
        for lo, hi, fn in segs:
            end_offset = fn(np.array([1.0]))[0]
            if hi > lo:
                t0, t1 = ts[lo], ts[hi - 1]
                span = max(t1 - t0, 1.0 / cfg.frame_rate)
                tau = np.clip((ts[lo:hi] - t0) / span, 0.0, 1.0)
                pos[lo:hi] = start + fn(tau)
            start = start + end_offset
        pos = pos - pos.mean(axis=0) + center

    base_quat = matrix_to_quat(_R_PROBE_BASE)
    poses = []
    for i in range(n):
        q = quat_multiply(quat_from_rotvec(rock[i]), base_quat)
        poses.append(Pose(ts[i], q, pos[i], True))
    return PoseSequence(tuple(poses))


# ---------------------------------------------------------------------------
# noise injection
# ---------------------------------------------------------------------------

def sample_noise_split(
    length: int, cfg: NoiseConfig, rng, s_p: float = S_P_DEFAULT
) -> tuple:
    """Draw (high_frequency, low_frequency) noise, each (9, length), in the
    normalized parameter space.

    High frequency = per-frame jitter + transient glitches; low frequency =
    the AR(1) bias walk. Draw order is fixed for seed stability.
    """
    jitter = np.zeros((9, length))
    jitter[0:6] = rng.normal(size=(6, length)) * cfg.jitter_sigma_rot
    jitter[6:9] = rng.normal(size=(3, length)) * (cfg.jitter_sigma_pos / s_p)

    a = cfg.bias_ar_coefficient
    steps = np.zeros((9, length))
    steps[0:6] = rng.normal(size=(6, length)) * cfg.bias_step_sigma_rot
    steps[6:9] = rng.normal(size=(3, length)) * (cfg.bias_step_sigma_pos / s_p)
    stationary = 1.0 / math.sqrt(1.0 - a * a)
    steps[:, 0] *= stationary  # start the walk at its stationary distribution
    bias = lfilter([1.0], [1.0, -a], steps, axis=1)

    glitch = np.zeros((9, length))
    n_glitch = rng.poisson(cfg.glitch_rate * length / 1000.0)
    for _ in range(n_glitch):
        start = int(rng.integers(0, length))
        dur = int(rng.integers(2, 2 * cfg.glitch_duration))
        amp_pos = cfg.glitch_magnitude_pos * rng.uniform(0.3, 1.0)
        amp_rot = cfg.glitch_magnitude_rot * rng.uniform(0.3, 1.0)
        dir_pos = rng.normal(size=3)
        dir_pos /= np.linalg.norm(dir_pos)
        dir_rot = rng.normal(size=6)
        dir_rot /= np.linalg.norm(dir_rot)
        stop = min(length, start + dur)
        j = np.arange(stop - start)
        profile = np.sin(math.pi * (j + 1) / (dur + 1)) ** 2
        glitch[0:6, start:stop] += amp_rot * profile[None, :] * dir_rot[:, None]
        glitch[6:9, start:stop] += (amp_pos / s_p) * profile[None, :] * dir_pos[:, None]

    return jitter + glitch, bias


def inject_noise(gt: PoseSequence, cfg: NoiseConfig) -> PoseSequence:
    """Simulated raw tracker output: ground truth plus the two error regimes.

    Noise is added in the normalized 9-dim space and mapped back through
    Gram-Schmidt; timestamps and length are preserved. With all noise fields
    zero the input poses are returned unchanged (bit-exact).
    """
    if not np.all(gt.valid_mask):
        raise InvalidInputError("inject_noise expects an all-valid sequence")
    length = len(gt)
    rng = np.random.default_rng(cfg.seed)
    hf, lf = sample_noise_split(length, cfg, rng)
    noise = hf + lf
    if not noise.any():
        return PoseSequence(tuple(gt.poses))
    params = NormalizationParams.from_sequence(gt)
    x = normalize_array(sequence_to_array(gt), params)
    noisy = denormalize_array(x + noise, params)
    return array_to_sequence(noisy, gt.timestamps, np.ones(length, dtype=bool))


# ---------------------------------------------------------------------------
# B-mode rendering
# ---------------------------------------------------------------------------

def sample_phantom(phantom: Phantom, points: np.ndarray) -> np.ndarray:
    """Phantom intensity at each 3D point (N, 3); 0 outside the extent.

    Inclusions are painted in declaration order (lesions, then vessels),
    later entries overriding earlier ones.
    """
    points = np.asarray(points, dtype=np.float64)
    center = np.asarray(phantom.center)
    half = np.asarray(phantom.extent) / 2.0
    inside = np.all(np.abs(points - center) <= half, axis=1)
    out = np.where(inside, float(phantom.background_intensity), 0.0)
    for les in phantom.lesions:
        d2 = np.sum((points - np.asarray(les.center)) ** 2, axis=1)
        out[inside & (d2 <= les.radius**2)] = float(les.intensity)
    for ves in phantom.vessels:
        a = np.asarray(ves.start)
        b = np.asarray(ves.end)
        ab = b - a
        denom = float(np.dot(ab, ab))
        tproj = np.clip((points - a) @ ab / denom, 0.0, 1.0)
        d2 = np.sum((points - (a + tproj[:, None] * ab)) ** 2, axis=1)
        out[inside & (d2 <= ves.radius**2)] = float(ves.intensity)
    return out


def render_frame(
    phantom: Phantom,
    pose_of_image,
    width: int,
    height: int,
    pixel_spacing,
    t: float = 0.0,
    speckle_amplitude: float = 0.0,
    seed: int = 0,
) -> Frame:
    """Analytic B-mode slice: pixel (u, v) samples the phantom at the mapped
    3D point of its center, with optional seeded multiplicative speckle."""
    m = pose_of_image.matrix() if isinstance(pose_of_image, Pose) else np.asarray(pose_of_image, dtype=np.float64)
    su, sv = pixel_spacing
    u = np.arange(width) * su
    v = np.arange(height) * sv
    uu, vv = np.meshgrid(u, v)  # (H, W)
    pts = np.stack([uu.ravel(), vv.ravel(), np.zeros(uu.size)], axis=1)
    world = pts @ m[:3, :3].T + m[:3, 3]
    vals = sample_phantom(phantom, world)
    if speckle_amplitude > 0.0:
        rng = np.random.default_rng(seed)
        vals = vals * (1.0 + rng.uniform(-speckle_amplitude, speckle_amplitude, vals.shape))
    data = np.clip(np.rint(vals), 0, 255).astype(np.uint8).reshape(height, width)
    return Frame(t, width, height, tuple(pixel_spacing), data)


# ---------------------------------------------------------------------------
# simulated depth observation of the probe
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DepthObservation:
    """Synthetic segmenter output: mask pixels with aligned depths whose
    back-projection averages exactly to `centroid`."""

    centroid: np.ndarray  # (3,) camera-frame mm
    pixels: np.ndarray  # (n, 2) integer (u, v)
    depths: np.ndarray  # (n,) mm


def observe_depth_centroid(
    gt_pose: Pose,
    probe_model,
    intrinsics: CameraIntrinsics,
    noise_sigma: float,
    rng=None,
    patch_radius: int = 2,
) -> DepthObservation:
    """Noisy 3D probe-centroid observation plus a consistent mask/depth patch.

    The synthetic mask is a square patch of sub-pixel-localized pixels
    centered on the exact projection of the (noisy) centroid, with constant
    depth; the mean back-projection of the patch reproduces the returned
    centroid exactly. With ``noise_sigma=0`` the centroid equals the
    ground-truth probe centroid. Raises NoObservationError when the probe
    (with its patch margin) is outside the camera frustum.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    offset = np.asarray(probe_model.centroid_offset, dtype=np.float64)
    c_true = gt_pose.apply(offset)
    c = c_true + noise_sigma * rng.normal(size=3)
    if c[2] <= 1.0:
        raise NoObservationError("probe behind the camera")
    u = intrinsics.fx * c[0] / c[2] + intrinsics.cx
    v = intrinsics.fy * c[1] / c[2] + intrinsics.cy
    r = patch_radius
    if not (r <= u < intrinsics.width - r and r <= v < intrinsics.height - r):
        raise NoObservationError("probe outside the camera frustum")

    du = np.arange(-r, r + 1, dtype=np.float64)
    uu, vv = np.meshgrid(u + du, v + du)
    pixels = np.stack([uu.ravel(), vv.ravel()], axis=1)
    depths = np.full(len(pixels), c[2])
    return DepthObservation(centroid=c, pixels=pixels, depths=depths)


# ---------------------------------------------------------------------------
# scan bundles on disk
# ---------------------------------------------------------------------------

SCAN_SCHEMA = "mlrecon-scan/1"


def write_pgm(path, data: np.ndarray) -> None:
    data = np.asarray(data, dtype=np.uint8)
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    try:
        parts = raw.split(b"\n", 3)
        if parts[0] != b"P5":
            raise DataError(f"{path}: not a binary PGM")
        w, h = (int(x) for x in parts[1].split())
        maxval = int(parts[2])
        if maxval != 255:
            raise DataError(f"{path}: expected maxval 255")
        data = np.frombuffer(parts[3][: w * h], dtype=np.uint8)
        if data.size != w * h:
            raise DataError(f"{path}: truncated raster")
        return data.reshape(h, w)
    except (IndexError, ValueError) as e:
        raise DataError(f"{path}: malformed PGM ({e})") from e


@dataclass
class ScanBundle:
    """Handle to a scan directory: manifest + pose CSVs + PGM frames."""

    path: Path
    manifest: dict

    @property
    def n_frames(self) -> int:
        return int(self.manifest["n_frames"])

    @property
    def frame_time_offset(self) -> float:
        return float(self.manifest.get("frame_time_offset", 0.0))

    def gt(self) -> PoseSequence:
        return read_pose_csv(self.path / "gt.csv")

    def raw(self) -> PoseSequence:
        return read_pose_csv(self.path / "raw.csv")

    def has_frames(self) -> bool:
        return bool(self.manifest.get("has_frames", False))

    def frame_path(self, i: int) -> Path:
        return self.path / "frames" / f"{i:06d}.pgm"

    def frame(self, i: int) -> Frame:
        geom = self.manifest["frame"]
        data = read_pgm(self.frame_path(i))
        t = float(self.manifest["frame_timestamps"][i])
        return Frame(t, geom["width"], geom["height"], tuple(geom["pixel_spacing"]), data)

    def frames(self):
        for i in range(self.n_frames):
            yield self.frame(i)

    def noise_config(self) -> NoiseConfig:
        return NoiseConfig(**self.manifest["noise"])

    def trajectory_config(self) -> TrajectoryConfig:
        d = dict(self.manifest["trajectory"])
        d["center"] = tuple(d["center"])
        return TrajectoryConfig(**d)

    def phantom(self) -> Phantom:
        return Phantom.from_dict(self.manifest["phantom"])

    def camera(self) -> CameraIntrinsics:
        return CameraIntrinsics(**self.manifest["camera"])

    def probe_dict(self) -> dict:
        return self.manifest["probe"]

    def calibration_matrix(self) -> np.ndarray:
        return np.asarray(self.manifest["calibration_gt"]["matrix"], dtype=np.float64)


def _json_dump(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def simulate_scan(
    out_dir,
    trajectory: TrajectoryConfig,
    noise: NoiseConfig,
    phantom: Optional[Phantom] = None,
    frame_geometry: FrameGeometry = FrameGeometry(),
    camera: CameraIntrinsics = CameraIntrinsics(),
    probe_bbox_dims=(40.0, 90.0, 150.0),
    probe_centroid_offset=(0.0, -60.0, 0.0),
    calibration_matrix: Optional[np.ndarray] = None,
    frame_time_offset: float = 0.0,
    write_frames: bool = True,
) -> ScanBundle:
    """Generate and persist a complete scan bundle.

    Layout: ``manifest.json``, ``gt.csv``, ``raw.csv`` and (optionally)
    ``frames/NNNNNN.pgm``, one binary 8-bit PGM per frame. Frames are
    rendered at the ground-truth image pose; their timestamps are the pose
    timestamps shifted by ``frame_time_offset`` (temporal-lag injection).
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DataError(f"cannot create scan directory {out}: {e}") from e
    if phantom is None:
        phantom = default_phantom()
    if calibration_matrix is None:
        calibration_matrix = default_calibration_matrix()
    calibration_matrix = np.asarray(calibration_matrix, dtype=np.float64)

    gt = generate_trajectory(trajectory)
    raw = inject_noise(gt, noise)
    write_pose_csv(gt, out / "gt.csv")
    write_pose_csv(raw, out / "raw.csv")

    frame_timestamps = [round(p.t + frame_time_offset, 9) for p in gt]
    if write_frames:
        frames_dir = out / "frames"
        frames_dir.mkdir(exist_ok=True)
        for i, pose in enumerate(gt):
            img_pose = pose.matrix() @ calibration_matrix
            frame = render_frame(
                phantom,
                img_pose,
                frame_geometry.width,
                frame_geometry.height,
                frame_geometry.pixel_spacing,
                t=frame_timestamps[i],
            )
            write_pgm(out / "frames" / f"{i:06d}.pgm", frame.data)

    manifest = {
        "schema": SCAN_SCHEMA,
        "trajectory": asdict(trajectory),
        "noise": asdict(noise),
        "phantom": phantom.to_dict(),
        "frame": {
            "width": frame_geometry.width,
            "height": frame_geometry.height,
            "pixel_spacing": list(frame_geometry.pixel_spacing),
        },
        "camera": asdict(camera),
        "probe": {
            "bbox_dims": list(probe_bbox_dims),
            "centroid_offset": list(probe_centroid_offset),
        },
        "calibration_gt": {
            "matrix": calibration_matrix.tolist(),
            "pixel_spacing": list(frame_geometry.pixel_spacing),
        },
        "frame_time_offset": frame_time_offset,
        "frame_timestamps": frame_timestamps,
        "n_frames": len(gt),
        "has_frames": bool(write_frames),
    }
    _json_dump(manifest, out / "manifest.json")
    return ScanBundle(out, manifest)


def load_scan_bundle(path) -> ScanBundle:
    path = Path(path)
    mpath = path / "manifest.json"
    try:
        manifest = json.loads(mpath.read_text())
    except OSError as e:
        raise DataError(f"cannot read {mpath}: {e}") from e
    except json.JSONDecodeError as e:
        raise DataError(f"{mpath}: invalid JSON ({e})") from e
    if manifest.get("schema") != SCAN_SCHEMA:
        raise DataError(f"{mpath}: unexpected schema {manifest.get('schema')!r}")
    return ScanBundle(path, manifest)
