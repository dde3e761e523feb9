"""SE(3) poses, the 6D rotation parameterization, and sequence normalization.

Conventions used everywhere in this package:

- rotations are stored as unit quaternions ``(w, x, y, z)``; rotation matrices
  and the 6D representation are views computed at module boundaries
- translations in millimeters, timestamps in seconds, angles in radians
  (degrees only at reporting boundaries)
- the 6D rotation vector is the first two columns of the rotation matrix,
  column-major: ``(R00, R10, R20, R01, R11, R21)``
- a pose 9-vector is ``[r6; p]`` with ``p`` in mm
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import DataError, DegenerateInputError, InvalidInputError
from .validation import as_vector, check_positive

S_P_DEFAULT = 100.0  # spatial scale of the affine normalization map

POSE_CSV_HEADER = ["t", "qw", "qx", "qy", "qz", "tx", "ty", "tz", "valid"]

_UNIT_TOL = 1e-6


# ---------------------------------------------------------------------------
# quaternion helpers
# ---------------------------------------------------------------------------

def quat_normalize(q) -> np.ndarray:
    """Return the unit quaternion parallel to ``q`` (w,x,y,z)."""
    q = as_vector(q, 4, "quaternion")
    n = float(np.linalg.norm(q))
    if n < 1e-12:
        raise DegenerateInputError("quaternion norm is (near) zero")
    return q / n


def quat_multiply(q1, q2) -> np.ndarray:
    """Hamilton product q1 * q2, both (w,x,y,z)."""
    w1, x1, y1, z1 = q1
    w2, x2, y2, z2 = q2
    return np.array(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ]
    )


def quat_conjugate(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    """Unit quaternion rotating by ``angle`` radians about ``axis``."""
    axis = as_vector(axis, 3, "axis")
    n = float(np.linalg.norm(axis))
    if n < 1e-12:
        raise DegenerateInputError("rotation axis is (near) zero")
    half = 0.5 * angle
    return np.concatenate(([math.cos(half)], math.sin(half) * axis / n))


def quat_from_rotvec(rv) -> np.ndarray:
    """Unit quaternion for a rotation vector (axis * angle)."""
    rv = as_vector(rv, 3, "rotation vector")
    angle = float(np.linalg.norm(rv))
    if angle < 1e-12:
        # first-order expansion keeps this smooth through zero
        q = np.concatenate(([1.0], 0.5 * rv))
        return q / np.linalg.norm(q)
    return quat_from_axis_angle(rv, angle)


def quat_to_matrix(q) -> np.ndarray:
    """3x3 rotation matrix of a unit quaternion (w,x,y,z)."""
    w, x, y, z = quat_normalize(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quats_to_matrices(q: np.ndarray) -> np.ndarray:
    """Vectorized quat -> matrix for an (N, 4) array of unit quaternions."""
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    m = np.empty(q.shape[:-1] + (3, 3))
    m[..., 0, 0] = 1 - 2 * (y * y + z * z)
    m[..., 0, 1] = 2 * (x * y - w * z)
    m[..., 0, 2] = 2 * (x * z + w * y)
    m[..., 1, 0] = 2 * (x * y + w * z)
    m[..., 1, 1] = 1 - 2 * (x * x + z * z)
    m[..., 1, 2] = 2 * (y * z - w * x)
    m[..., 2, 0] = 2 * (x * z - w * y)
    m[..., 2, 1] = 2 * (y * z + w * x)
    m[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def matrix_to_quat(m) -> np.ndarray:
    """Unit quaternion (w,x,y,z) of a rotation matrix, w >= 0."""
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (3, 3):
        raise InvalidInputError(f"rotation matrix must be 3x3, got {m.shape}")
    q = matrices_to_quats(m[np.newaxis])[0]
    return q


def matrices_to_quats(m: np.ndarray) -> np.ndarray:
    """Vectorized matrix -> quat for an (N, 3, 3) stack, w >= 0.

    Shepperd's method: pick the numerically largest of the four candidate
    pivots per element.
    """
    m = np.asarray(m, dtype=np.float64)
    t = np.einsum("...ii->...", m)
    cand = np.stack([t, m[..., 0, 0], m[..., 1, 1], m[..., 2, 2]], axis=-1)
    choice = np.argmax(cand, axis=-1)

    q = np.empty(m.shape[:-2] + (4,))
    # trace pivot
    s = np.sqrt(np.maximum(t + 1.0, 1e-30)) * 2.0
    q0 = np.stack(
        [
            0.25 * s,
            (m[..., 2, 1] - m[..., 1, 2]) / s,
            (m[..., 0, 2] - m[..., 2, 0]) / s,
            (m[..., 1, 0] - m[..., 0, 1]) / s,
        ],
        axis=-1,
    )
    # diagonal pivots
    s = np.sqrt(np.maximum(1.0 + m[..., 0, 0] - m[..., 1, 1] - m[..., 2, 2], 1e-30)) * 2.0
    q1 = np.stack(
        [
            (m[..., 2, 1] - m[..., 1, 2]) / s,
            0.25 * s,
            (m[..., 0, 1] + m[..., 1, 0]) / s,
            (m[..., 0, 2] + m[..., 2, 0]) / s,
        ],
        axis=-1,
    )
    s = np.sqrt(np.maximum(1.0 - m[..., 0, 0] + m[..., 1, 1] - m[..., 2, 2], 1e-30)) * 2.0
    q2 = np.stack(
        [
            (m[..., 0, 2] - m[..., 2, 0]) / s,
            (m[..., 0, 1] + m[..., 1, 0]) / s,
            0.25 * s,
            (m[..., 1, 2] + m[..., 2, 1]) / s,
        ],
        axis=-1,
    )
    s = np.sqrt(np.maximum(1.0 - m[..., 0, 0] - m[..., 1, 1] + m[..., 2, 2], 1e-30)) * 2.0
    q3 = np.stack(
        [
            (m[..., 1, 0] - m[..., 0, 1]) / s,
            (m[..., 0, 2] + m[..., 2, 0]) / s,
            (m[..., 1, 2] + m[..., 2, 1]) / s,
            0.25 * s,
        ],
        axis=-1,
    )
    stacked = np.stack([q0, q1, q2, q3], axis=-2)
    q = np.take_along_axis(stacked, choice[..., np.newaxis, np.newaxis], axis=-2)[..., 0, :]
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    sign = np.where(q[..., 0:1] < 0, -1.0, 1.0)
    return q * sign


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Pose:
    """A timestamped rigid transform with a validity flag.

    `quat` is renormalized on construction; poses are immutable values and
    safe to share between threads. A pose with ``valid=False`` carries no
    semantic rotation/translation and must be ignored by consumers.
    """

    t: float
    quat: np.ndarray  # (w, x, y, z), unit
    trans: np.ndarray  # mm
    valid: bool = True

    def __post_init__(self):
        q = as_vector(self.quat, 4, "quat")
        n = float(np.linalg.norm(q))
        if n < 1e-8:
            raise DegenerateInputError("pose quaternion norm is (near) zero")
        object.__setattr__(self, "quat", _freeze(q / n))
        object.__setattr__(self, "trans", _freeze(as_vector(self.trans, 3, "trans")))
        object.__setattr__(self, "t", float(self.t))
        object.__setattr__(self, "valid", bool(self.valid))

    @staticmethod
    def identity(t: float = 0.0, valid: bool = True) -> "Pose":
        return Pose(t, np.array([1.0, 0, 0, 0]), np.zeros(3), valid)

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.quat)

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous transform."""
        m = np.eye(4)
        m[:3, :3] = self.rotation_matrix()
        m[:3, 3] = self.trans
        return m

    def apply(self, point) -> np.ndarray:
        """Map a point (mm) through this pose."""
        return self.rotation_matrix() @ as_vector(point, 3, "point") + self.trans

    def compose(self, other: "Pose") -> "Pose":
        """self * other, keeping self's timestamp."""
        return Pose(
            self.t,
            quat_multiply(self.quat, other.quat),
            self.apply(other.trans),
            self.valid and other.valid,
        )

    def inverse(self) -> "Pose":
        qc = quat_conjugate(self.quat)
        return Pose(self.t, qc, -(quat_to_matrix(qc) @ self.trans), self.valid)

    @staticmethod
    def from_matrix(m, t: float = 0.0, valid: bool = True) -> "Pose":
        m = np.asarray(m, dtype=np.float64)
        return Pose(t, matrix_to_quat(m[:3, :3]), m[:3, 3], valid)


@dataclass(frozen=True)
class PoseSequence:
    """An ordered pose trajectory with strictly increasing timestamps."""

    poses: tuple

    def __post_init__(self):
        poses = tuple(self.poses)
        if len(poses) < 1:
            raise InvalidInputError("PoseSequence needs at least one pose")
        ts = np.array([p.t for p in poses])
        if len(ts) > 1 and not np.all(np.diff(ts) > 0):
            raise InvalidInputError("PoseSequence timestamps must be strictly increasing")
        object.__setattr__(self, "poses", poses)

    def __len__(self) -> int:
        return len(self.poses)

    def __iter__(self) -> Iterator[Pose]:
        return iter(self.poses)

    def __getitem__(self, i) -> Pose:
        return self.poses[i]

    @property
    def timestamps(self) -> np.ndarray:
        return np.array([p.t for p in self.poses])

    @property
    def translations(self) -> np.ndarray:
        return np.array([p.trans for p in self.poses])

    @property
    def quaternions(self) -> np.ndarray:
        return np.array([p.quat for p in self.poses])

    @property
    def valid_mask(self) -> np.ndarray:
        return np.array([p.valid for p in self.poses], dtype=bool)

    def valid_poses(self) -> list:
        return [p for p in self.poses if p.valid]

    def path_length(self) -> float:
        """Sum of inter-frame distances over valid poses (mm)."""
        pts = np.array([p.trans for p in self.poses if p.valid])
        if len(pts) < 2:
            return 0.0
        return float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))


@dataclass(frozen=True)
class PoseVector9:
    """The 9-dim [6D rotation; translation] pose parameterization."""

    r: np.ndarray  # (6,), first two rotation-matrix columns, column-major
    p: np.ndarray  # (3,), mm

    def __post_init__(self):
        object.__setattr__(self, "r", _freeze(as_vector(self.r, 6, "r")))
        object.__setattr__(self, "p", _freeze(as_vector(self.p, 3, "p")))

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.r, self.p])

    def projected(self) -> "PoseVector9":
        """Re-project rotation channels onto SO(3) via Gram-Schmidt."""
        return PoseVector9(rot_to_6d(sixd_to_rot(self.r)), self.p)


@dataclass(frozen=True)
class NormalizationParams:
    """Affine map parameters: translations become (p - p_ref) / s_p."""

    s_p: float = S_P_DEFAULT
    p_ref: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        check_positive(self.s_p, "s_p")
        object.__setattr__(self, "s_p", float(self.s_p))
        object.__setattr__(self, "p_ref", _freeze(as_vector(self.p_ref, 3, "p_ref")))

    @staticmethod
    def from_sequence(seq: PoseSequence, s_p: float = S_P_DEFAULT) -> "NormalizationParams":
        """p_ref from the first valid pose of the sequence."""
        for p in seq:
            if p.valid:
                return NormalizationParams(s_p, p.trans)
        raise InvalidInputError("sequence has no valid pose to anchor p_ref")


# ---------------------------------------------------------------------------
# 6D rotation representation
# ---------------------------------------------------------------------------

def rot_to_6d(q) -> np.ndarray:
    """First two columns of the rotation matrix of a unit quaternion.

    Raises InvalidInputError if the quaternion deviates from unit norm by
    more than 1e-6.
    """
    q = as_vector(q, 4, "quaternion")
    if abs(float(np.linalg.norm(q)) - 1.0) > _UNIT_TOL:
        raise InvalidInputError("quaternion is not unit-norm")
    m = quat_to_matrix(q)
    return np.concatenate([m[:, 0], m[:, 1]])


def sixd_to_matrix(r6) -> np.ndarray:
    """Gram-Schmidt recovery of a rotation matrix from a 6D vector."""
    r6 = as_vector(r6, 6, "6D rotation")
    a1, a2 = r6[:3], r6[3:]
    n1 = float(np.linalg.norm(a1))
    if n1 <= 1e-12:
        raise DegenerateInputError("first 6D column has (near) zero norm")
    b1 = a1 / n1
    u2 = a2 - np.dot(b1, a2) * b1
    n2 = float(np.linalg.norm(u2))
    if n2 <= 1e-12:
        raise DegenerateInputError("6D columns are (near) parallel")
    b2 = u2 / n2
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=1)


def sixd_to_rot(r6) -> np.ndarray:
    """Unit quaternion from a 6D rotation vector (Gram-Schmidt)."""
    return matrix_to_quat(sixd_to_matrix(r6))


def sixd_to_matrices(r6: np.ndarray) -> np.ndarray:
    """Vectorized Gram-Schmidt for an (N, 6) array; returns (N, 3, 3)."""
    r6 = np.asarray(r6, dtype=np.float64)
    a1, a2 = r6[..., :3], r6[..., 3:]
    n1 = np.linalg.norm(a1, axis=-1, keepdims=True)
    if np.any(n1 <= 1e-12):
        raise DegenerateInputError("first 6D column has (near) zero norm")
    b1 = a1 / n1
    u2 = a2 - np.sum(b1 * a2, axis=-1, keepdims=True) * b1
    n2 = np.linalg.norm(u2, axis=-1, keepdims=True)
    if np.any(n2 <= 1e-12):
        raise DegenerateInputError("6D columns are (near) parallel")
    b2 = u2 / n2
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=-1)


def matrices_to_sixd(m: np.ndarray) -> np.ndarray:
    """(N, 3, 3) rotation stack -> (N, 6) column-major 6D vectors."""
    m = np.asarray(m, dtype=np.float64)
    return np.concatenate([m[..., :, 0], m[..., :, 1]], axis=-1)


def geodesic_distance(r1, r2) -> float:
    """Rotation angle of R1^T R2 in radians (SO(3) geodesic metric)."""
    r1 = np.asarray(r1, dtype=np.float64)
    r2 = np.asarray(r2, dtype=np.float64)
    c = (np.trace(r1.T @ r2) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def geodesic_angles(r1: np.ndarray, r2: np.ndarray) -> np.ndarray:
    """Vectorized geodesic distance for (N, 3, 3) rotation stacks."""
    c = (np.einsum("...ij,...ij->...", r1, r2) - 1.0) / 2.0
    return np.arccos(np.clip(c, -1.0, 1.0))


# ---------------------------------------------------------------------------
# sequence <-> 9-channel arrays and the affine normalization map
# ---------------------------------------------------------------------------

def pose_to_vector9(pose: Pose) -> PoseVector9:
    return PoseVector9(rot_to_6d(pose.quat), pose.trans)


def sequence_to_vectors(seq: PoseSequence) -> list:
    """PoseVector9 per pose (including invalid ones; filter upstream)."""
    return [pose_to_vector9(p) for p in seq]


def vectors_to_array(vectors: Sequence[PoseVector9]) -> np.ndarray:
    """Stack PoseVector9 values into a (9, L) array."""
    if len(vectors) < 1:
        raise InvalidInputError("need at least one vector")
    return np.stack([v.as_array() for v in vectors], axis=1)


def array_to_vectors(x: np.ndarray) -> list:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != 9:
        raise InvalidInputError(f"expected a (9, L) array, got {x.shape}")
    return [PoseVector9(x[:6, i], x[6:, i]) for i in range(x.shape[1])]


def sequence_to_array(seq: PoseSequence) -> np.ndarray:
    """(9, L) channel matrix of a pose sequence (raw, un-normalized)."""
    q = seq.quaternions
    m = quats_to_matrices(q)
    r6 = matrices_to_sixd(m)
    return np.concatenate([r6, seq.translations], axis=1).T


def array_to_sequence(x: np.ndarray, timestamps, valid=None) -> PoseSequence:
    """Build a PoseSequence from a (9, L) array; rotations re-projected.

    Raises DegenerateInputError when rotation channels cannot be projected.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != 9:
        raise InvalidInputError(f"expected a (9, L) array, got {x.shape}")
    timestamps = np.asarray(timestamps, dtype=np.float64)
    if valid is None:
        valid = np.ones(x.shape[1], dtype=bool)
    mats = sixd_to_matrices(x[:6].T)
    quats = matrices_to_quats(mats)
    poses = [
        Pose(timestamps[i], quats[i], x[6:, i], bool(valid[i]))
        for i in range(x.shape[1])
    ]
    return PoseSequence(tuple(poses))


def normalize_array(x: np.ndarray, params: NormalizationParams) -> np.ndarray:
    """Apply the affine map to a (9, L) array: rotations pass through
    unscaled, translations become (p - p_ref) / s_p."""
    x = np.asarray(x, dtype=np.float64)
    out = x.copy()
    out[6:] = (x[6:] - params.p_ref[:, np.newaxis]) / params.s_p
    return out


def denormalize_array(x: np.ndarray, params: NormalizationParams) -> np.ndarray:
    """Exact inverse of :func:`normalize_array`."""
    x = np.asarray(x, dtype=np.float64)
    out = x.copy()
    out[6:] = x[6:] * params.s_p + params.p_ref[:, np.newaxis]
    return out


def normalize_sequence(vectors: Sequence[PoseVector9], params: NormalizationParams) -> np.ndarray:
    """Normalize a list of PoseVector9 into a (9, L) array."""
    return normalize_array(vectors_to_array(vectors), params)


def denormalize_sequence(x: np.ndarray, params: NormalizationParams) -> list:
    """Invert :func:`normalize_sequence`; rotation channels returned raw
    (projection onto SO(3) happens when converting back to poses)."""
    return array_to_vectors(denormalize_array(x, params))


# ---------------------------------------------------------------------------
# pose CSV files
# ---------------------------------------------------------------------------

def write_pose_csv(seq: PoseSequence, path) -> None:
    """Write `t,qw,qx,qy,qz,tx,ty,tz,valid` rows, one pose per line."""
    path = Path(path)
    with path.open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(POSE_CSV_HEADER)
        for p in seq:
            w.writerow(
                [f"{p.t:.9f}"]
                + [f"{v:.17g}" for v in p.quat]
                + [f"{v:.17g}" for v in p.trans]
                + [int(p.valid)]
            )


def read_pose_csv(path) -> PoseSequence:
    path = Path(path)
    try:
        with path.open("r", newline="") as f:
            r = csv.reader(f)
            header = next(r, None)
            if header != POSE_CSV_HEADER:
                raise DataError(f"{path}: bad pose CSV header {header}")
            poses = []
            for lineno, row in enumerate(r, start=2):
                if not row:
                    continue
                if len(row) != 9:
                    raise DataError(f"{path}:{lineno}: expected 9 fields, got {len(row)}")
                try:
                    vals = [float(v) for v in row[:8]]
                    valid = int(row[8])
                except ValueError as e:
                    raise DataError(f"{path}:{lineno}: {e}") from e
                if valid not in (0, 1):
                    raise DataError(f"{path}:{lineno}: valid must be 0 or 1")
                poses.append(Pose(vals[0], vals[1:5], vals[5:8], bool(valid)))
    except OSError as e:
        raise DataError(f"cannot read pose CSV {path}: {e}") from e
    if not poses:
        raise DataError(f"{path}: no poses")
    return PoseSequence(tuple(poses))
