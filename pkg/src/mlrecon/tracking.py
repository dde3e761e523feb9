"""Online tracking loop: simulated tracker, segmenter checks at reduced
cadence, the object-aware divergence detector, and automatic recovery.

Per-frame tracked poses come from the scan bundle's raw stream (ground truth
plus tracker noise) or, after a scripted failure is injected, from the raw
stream corrupted by the failure offset. Every ``check_period`` frames the
visual centroid (masked depth back-projection) is compared against the
tracked centroid; when their distance exceeds the adaptive threshold the
tracker halts, re-initializes from the simulated global-registration oracle,
and marks the poses in the half-open gap ``(t_prev_check, t_detect]``
invalid.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import (
    DataError,
    InvalidInputError,
    NoObservationError,
    TrackingLostError,
)
from .se3 import Pose, PoseSequence, quat_from_axis_angle
from .simulate import CameraIntrinsics, ScanBundle, observe_depth_centroid
from .validation import as_vector, check_positive


@dataclass(frozen=True)
class ProbeModel:
    """Bounding-box stand-in for the probe CAD model."""

    bbox_dims: tuple = (40.0, 90.0, 150.0)  # mm
    centroid_offset: tuple = (0.0, -60.0, 0.0)  # probe frame, mm

    def __post_init__(self):
        dims = as_vector(self.bbox_dims, 3, "bbox_dims")
        if np.any(dims <= 0):
            raise InvalidInputError("probe bbox dims must all be > 0")
        object.__setattr__(self, "bbox_dims", tuple(float(v) for v in dims))
        off = as_vector(self.centroid_offset, 3, "centroid_offset")
        object.__setattr__(self, "centroid_offset", tuple(float(v) for v in off))

    @staticmethod
    def from_dict(d: dict) -> "ProbeModel":
        return ProbeModel(tuple(d["bbox_dims"]), tuple(d["centroid_offset"]))


@dataclass(frozen=True)
class DetectorConfig:
    """Divergence detector parameters (defaults: eta=0.8, delta0=30 mm,
    checks every 10 frames, i.e. ~3 Hz at a 30 Hz stream)."""

    eta: float = 0.8
    delta0: float = 30.0
    depth_min: float = 200.0
    depth_max: float = 1500.0
    check_period: int = 10
    max_missed_checks: int = 5

    def __post_init__(self):
        check_positive(self.eta, "eta")
        if self.delta0 < 0:
            raise InvalidInputError("delta0 must be >= 0")
        if not self.depth_min < self.depth_max:
            raise InvalidInputError("depth_min must be < depth_max")
        if self.check_period < 1:
            raise InvalidInputError("check_period must be >= 1")
        if self.max_missed_checks < 1:
            raise InvalidInputError("max_missed_checks must be >= 1")


@dataclass(frozen=True)
class DivergenceEvent:
    """One detected tracking failure and its recovery."""

    t_detect: float
    discrepancy: float  # mm
    threshold: float  # mm
    gap: tuple  # (t_prev_check, t_detect)
    recovered_pose: Pose

    def __post_init__(self):
        if not self.discrepancy > self.threshold:
            raise InvalidInputError("event discrepancy must exceed its threshold")

    def to_dict(self) -> dict:
        return {
            "t_detect": self.t_detect,
            "discrepancy": self.discrepancy,
            "threshold": self.threshold,
            "gap": list(self.gap),
            "recovered_pose": {
                "t": self.recovered_pose.t,
                "quat": self.recovered_pose.quat.tolist(),
                "trans": self.recovered_pose.trans.tolist(),
            },
        }

    @staticmethod
    def from_dict(d: dict) -> "DivergenceEvent":
        rp = d["recovered_pose"]
        return DivergenceEvent(
            t_detect=float(d["t_detect"]),
            discrepancy=float(d["discrepancy"]),
            threshold=float(d["threshold"]),
            gap=tuple(d["gap"]),
            recovered_pose=Pose(rp["t"], rp["quat"], rp["trans"], True),
        )


@dataclass(frozen=True)
class InjectedFailure:
    """Scripted tracking failure for simulation."""

    frame_index: int
    type: str  # "jump" | "ramp"
    magnitude_mm: float = 0.0
    magnitude_deg: float = 0.0
    duration_frames: int = 1  # ramp-up length; jumps apply at once

    def __post_init__(self):
        if self.type not in ("jump", "ramp"):
            raise InvalidInputError(f"failure type must be jump or ramp, got {self.type!r}")
        if self.frame_index < 0 or self.duration_frames < 1:
            raise InvalidInputError("bad failure timing")


@dataclass
class TrackingResult:
    sequence: PoseSequence
    events: list


# ---------------------------------------------------------------------------
# detector primitives
# ---------------------------------------------------------------------------

def visual_centroid(
    mask_pixels: np.ndarray,
    depths: np.ndarray,
    intrinsics: CameraIntrinsics,
    cfg: DetectorConfig,
) -> np.ndarray:
    """Mean back-projection of the masked depth pixels within the validity
    band, in camera-frame mm. Raises NoObservationError on an empty set."""
    pixels = np.asarray(mask_pixels, dtype=np.float64).reshape(-1, 2)
    depths = np.asarray(depths, dtype=np.float64).reshape(-1)
    if pixels.shape[0] != depths.shape[0]:
        raise InvalidInputError("mask pixels and depths must align")
    keep = (depths >= cfg.depth_min) & (depths <= cfg.depth_max)
    if not np.any(keep):
        raise NoObservationError("no masked pixels inside the depth-validity band")
    px = pixels[keep]
    d = depths[keep]
    rays = np.stack(
        [
            (px[:, 0] - intrinsics.cx) / intrinsics.fx,
            (px[:, 1] - intrinsics.cy) / intrinsics.fy,
            np.ones(len(px)),
        ],
        axis=1,
    )
    return (d[:, None] * rays).mean(axis=0)


def tracked_centroid(pose: Pose, probe: ProbeModel) -> np.ndarray:
    """The probe-model centroid transformed by the tracked pose."""
    if not pose.valid:
        raise InvalidInputError("tracked_centroid requires a valid pose")
    return pose.apply(probe.centroid_offset)


def divergence_threshold(probe, cfg: DetectorConfig) -> float:
    """Adaptive threshold ||d_M||/2 * eta + delta0 (mm).

    Accepts a ProbeModel or a raw 3-vector of bounding-box dimensions.
    """
    dims = np.asarray(getattr(probe, "bbox_dims", probe), dtype=np.float64)
    return float(np.linalg.norm(dims) / 2.0 * cfg.eta + cfg.delta0)


# ---------------------------------------------------------------------------
# failure scripts and event logs
# ---------------------------------------------------------------------------

def load_failure_script(path) -> list:
    path = Path(path)
    try:
        entries = json.loads(path.read_text())
    except OSError as e:
        raise DataError(f"cannot read failure script {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: invalid JSON ({e})") from e
    if not isinstance(entries, list):
        raise DataError(f"{path}: failure script must be a JSON list")
    out = []
    for i, e in enumerate(entries):
        try:
            out.append(
                InjectedFailure(
                    frame_index=int(e["frame_index"]),
                    type=str(e["type"]),
                    magnitude_mm=float(e.get("magnitude_mm", 0.0)),
                    magnitude_deg=float(e.get("magnitude_deg", 0.0)),
                    duration_frames=int(e.get("duration_frames", 1)),
                )
            )
        except (KeyError, TypeError, ValueError, InvalidInputError) as err:
            raise DataError(f"{path}: bad failure entry {i}: {err}") from err
    return out


def save_failure_script(failures: Sequence[InjectedFailure], path) -> None:
    entries = [
        {
            "frame_index": f.frame_index,
            "type": f.type,
            "magnitude_mm": f.magnitude_mm,
            "magnitude_deg": f.magnitude_deg,
            "duration_frames": f.duration_frames,
        }
        for f in failures
    ]
    Path(path).write_text(json.dumps(entries, indent=2) + "\n")


def write_event_log(events: Sequence[DivergenceEvent], path) -> None:
    """One DivergenceEvent per line (JSON lines)."""
    with Path(path).open("w") as f:
        for e in events:
            f.write(json.dumps(e.to_dict(), sort_keys=True) + "\n")


def read_event_log(path) -> list:
    events = []
    try:
        for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
            if not line.strip():
                continue
            try:
                events.append(DivergenceEvent.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise DataError(f"{path}:{lineno}: bad event line ({e})") from e
    except OSError as e:
        raise DataError(f"cannot read event log {path}: {e}") from e
    return events


# ---------------------------------------------------------------------------
# the tracking loop
# ---------------------------------------------------------------------------

def _failure_offset(spec: InjectedFailure, direction, axis, frame: int) -> Pose:
    if spec.type == "jump":
        scale = 1.0
    else:
        scale = min(1.0, (frame - spec.frame_index + 1) / spec.duration_frames)
    q = quat_from_axis_angle(axis, math.radians(spec.magnitude_deg) * scale)
    return Pose(0.0, q, direction * spec.magnitude_mm * scale)


def run_tracking(
    scan: ScanBundle,
    probe: ProbeModel,
    cfg: DetectorConfig,
    failure_script: Sequence[InjectedFailure] = (),
    observation_sigma: float = 2.0,
    reinit_sigma_pos: float = 2.0,
    reinit_sigma_rot: float = math.radians(1.0),
    seed: int = 0,
) -> TrackingResult:
    """Run the tracking state machine over a scan bundle.

    Returns the per-frame tracked sequence (poses in the recovery gaps are
    marked invalid) and one DivergenceEvent per detector trigger. The loop is
    deterministic under fixed seed and failure script. Raises
    TrackingLostError after ``cfg.max_missed_checks`` consecutive checks
    without a usable observation.
    """
    gt = scan.gt()
    raw = scan.raw()
    if len(gt) != len(raw):
        raise DataError("scan bundle gt/raw length mismatch")
    n = len(gt)
    intrinsics = scan.camera()
    rng = np.random.default_rng(seed)
    threshold = divergence_threshold(probe, cfg)

    failures = sorted(failure_script, key=lambda f: f.frame_index)
    next_failure = 0
    active: Optional[tuple] = None  # (spec, direction, axis)

    tracked: list = [None] * n
    events: list = []
    prev_check_idx = 0
    missed = 0

    for i in range(n):
        if next_failure < len(failures) and failures[next_failure].frame_index == i:
            spec = failures[next_failure]
            next_failure += 1
            direction = rng.normal(size=3)
            direction /= np.linalg.norm(direction)
            axis = rng.normal(size=3)
            axis /= np.linalg.norm(axis)
            active = (spec, direction, axis)

        pose = raw[i]
        if active is not None:
            spec, direction, axis = active
            pose = pose.compose(_failure_offset(spec, direction, axis, i))
        tracked[i] = pose

        if i > 0 and i % cfg.check_period == 0:
            try:
                obs = observe_depth_centroid(gt[i], probe, intrinsics, observation_sigma, rng)
                c_vis = visual_centroid(obs.pixels, obs.depths, intrinsics, cfg)
            except NoObservationError:
                missed += 1
                if missed >= cfg.max_missed_checks:
                    raise TrackingLostError(
                        f"{missed} consecutive checks without observation at frame {i}"
                    )
                continue
            missed = 0
            c_trk = tracked_centroid(tracked[i], probe)
            discrepancy = float(np.linalg.norm(c_vis - c_trk))
            if discrepancy > threshold:
                for j in range(prev_check_idx + 1, i + 1):
                    p = tracked[j]
                    tracked[j] = Pose(p.t, p.quat, p.trans, valid=False)
                noise_q = quat_from_axis_angle(
                    _random_unit(rng), reinit_sigma_rot * rng.normal()
                )
                noise_t = reinit_sigma_pos * rng.normal(size=3)
                recovered = gt[i].compose(Pose(0.0, noise_q, noise_t))
                events.append(
                    DivergenceEvent(
                        t_detect=gt[i].t,
                        discrepancy=discrepancy,
                        threshold=threshold,
                        gap=(gt[prev_check_idx].t, gt[i].t),
                        recovered_pose=recovered,
                    )
                )
                active = None  # the failure is cleared by re-initialization
            prev_check_idx = i

    return TrackingResult(PoseSequence(tuple(tracked)), events)


def _random_unit(rng) -> np.ndarray:
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)
