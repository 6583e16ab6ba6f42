"""Quaternion / rotation-matrix / rotation-vector helpers.

Quaternions are stored w-first, ``(..., 4)``.  Every function broadcasts over
leading dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_EPS = 1e-12


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_conj(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    q = quat_normalize(q)
    w, x, y, z = np.moveaxis(q, -1, 0)
    m = np.stack(
        [
            1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
            2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
        ],
        axis=-1,
    )
    return m.reshape(q.shape[:-1] + (3, 3))


def matrix_to_quat(m: np.ndarray) -> np.ndarray:
    """Shepperd's method; picks the numerically largest component as pivot.

    The result has a non-negative ``w`` component.
    """
    m = np.asarray(m, dtype=float)
    batch = m.shape[:-2]
    r = m.reshape(-1, 3, 3)
    m00, m11, m22 = r[:, 0, 0], r[:, 1, 1], r[:, 2, 2]
    tr = m00 + m11 + m22
    choice = np.argmax(np.stack([tr, m00, m11, m22], axis=-1), axis=-1)
    d21 = r[:, 2, 1] - r[:, 1, 2]
    d02 = r[:, 0, 2] - r[:, 2, 0]
    d10 = r[:, 1, 0] - r[:, 0, 1]
    s01 = r[:, 0, 1] + r[:, 1, 0]
    s02 = r[:, 0, 2] + r[:, 2, 0]
    s12 = r[:, 1, 2] + r[:, 2, 1]
    with np.errstate(invalid="ignore", divide="ignore"):
        s0 = np.sqrt(np.maximum(1.0 + tr, 0.0)) * 2
        s1 = np.sqrt(np.maximum(1.0 + m00 - m11 - m22, 0.0)) * 2
        s2 = np.sqrt(np.maximum(1.0 + m11 - m00 - m22, 0.0)) * 2
        s3 = np.sqrt(np.maximum(1.0 + m22 - m00 - m11, 0.0)) * 2
        cands = np.stack(
            [
                np.stack([0.25 * s0, d21 / s0, d02 / s0, d10 / s0], axis=-1),
                np.stack([d21 / s1, 0.25 * s1, s01 / s1, s02 / s1], axis=-1),
                np.stack([d02 / s2, s01 / s2, 0.25 * s2, s12 / s2], axis=-1),
                np.stack([d10 / s3, s02 / s3, s12 / s3, 0.25 * s3], axis=-1),
            ],
            axis=1,
        )
    q = cands[np.arange(r.shape[0]), choice]
    q = np.where(q[:, :1] < 0, -q, q)
    return quat_normalize(q).reshape(batch + (4,))


def rotvec_to_quat(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    angle = np.linalg.norm(v, axis=-1, keepdims=True)
    half = 0.5 * angle
    # sin(x/2)/x, with a Taylor fallback near zero
    small = angle < 1e-8
    safe = np.where(small, 1.0, angle)
    k = np.where(small, 0.5 - angle**2 / 48.0, np.sin(half) / safe)
    return np.concatenate([np.cos(half), v * k], axis=-1)


def quat_to_rotvec(q: np.ndarray) -> np.ndarray:
    """Rotation vector with angle in ``[0, pi]``."""
    q = quat_normalize(q)
    q = np.where(q[..., :1] < 0, -q, q)
    vec = q[..., 1:]
    s = np.linalg.norm(vec, axis=-1, keepdims=True)
    angle = 2.0 * np.arctan2(s, q[..., :1])
    small = s < 1e-8
    k = np.where(small, 2.0 + angle**2 / 12.0, angle / np.where(small, 1.0, s))
    return vec * k


def axis_angle_to_quat(axis: np.ndarray, angle) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis, axis=-1, keepdims=True)
    angle = np.asarray(angle, dtype=float)[..., None]
    return np.concatenate([np.cos(0.5 * angle), axis * np.sin(0.5 * angle)], axis=-1)


def axis_angle_to_matrix(axis: np.ndarray, angle) -> np.ndarray:
    """Rodrigues' formula; ``axis`` must be unit length."""
    axis = np.asarray(axis, dtype=float)
    angle = np.asarray(angle, dtype=float)
    x, y, z = axis[..., 0], axis[..., 1], axis[..., 2]
    c = np.cos(angle)
    s = np.sin(angle)
    C = 1.0 - c
    m = np.stack(
        [
            c + x * x * C, x * y * C - z * s, x * z * C + y * s,
            y * x * C + z * s, c + y * y * C, y * z * C - x * s,
            z * x * C - y * s, z * y * C + x * s, c + z * z * C,
        ],
        axis=-1,
    )
    return m.reshape(np.broadcast(x, angle).shape + (3, 3))


def rotvec_to_matrix(v: np.ndarray) -> np.ndarray:
    return quat_to_matrix(rotvec_to_quat(v))


def matrix_to_rotvec(m: np.ndarray) -> np.ndarray:
    return quat_to_rotvec(matrix_to_quat(m))


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    return np.einsum("...ij,...j->...i", quat_to_matrix(q), v)


def geodesic_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Angle of ``a^T b`` for rotation matrices ``a`` and ``b``, in ``[0, pi]``.

    Equal to ``arccos(clip((tr(a^T b) - 1) / 2, -1, 1))``, evaluated as
    ``atan2(sin, cos)`` so small angles keep full precision.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    m = np.swapaxes(a, -1, -2) @ b
    cos = np.clip((m[..., 0, 0] + m[..., 1, 1] + m[..., 2, 2] - 1.0) * 0.5, -1.0, 1.0)
    sin = 0.5 * np.sqrt(
        (m[..., 2, 1] - m[..., 1, 2]) ** 2 + (m[..., 0, 2] - m[..., 2, 0]) ** 2 + (m[..., 1, 0] - m[..., 0, 1]) ** 2
    )
    # identical inputs are exactly zero apart, whatever the rounding in a^T a
    return np.where(np.all(a == b, axis=(-2, -1)), 0.0, np.arctan2(sin, cos))


def quat_geodesic_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return geodesic_distance(quat_to_matrix(a), quat_to_matrix(b))


def hat(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    z = np.zeros(v.shape[:-1])
    return np.stack(
        [z, -v[..., 2], v[..., 1], v[..., 2], z, -v[..., 0], -v[..., 1], v[..., 0], z],
        axis=-1,
    ).reshape(v.shape[:-1] + (3, 3))


@dataclass(frozen=True)
class Rotation:
    """Immutable 3D rotation backed by a unit quaternion (w, x, y, z)."""

    quat: tuple[float, float, float, float] = (1.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        q = np.asarray(self.quat, dtype=float)
        if q.shape != (4,) or not np.all(np.isfinite(q)):
            raise ValueError(f"invalid quaternion {self.quat!r}")
        n = np.linalg.norm(q)
        if n < _EPS:
            raise ValueError("zero quaternion")
        if q[0] < 0:
            q = -q
        object.__setattr__(self, "quat", tuple(float(x) for x in q / n))

    @classmethod
    def identity(cls) -> Rotation:
        return cls()

    @classmethod
    def from_matrix(cls, m) -> Rotation:
        return cls(tuple(matrix_to_quat(np.asarray(m))))

    @classmethod
    def from_rotvec(cls, v) -> Rotation:
        return cls(tuple(rotvec_to_quat(np.asarray(v, dtype=float))))

    @classmethod
    def from_axis_angle(cls, axis, angle: float) -> Rotation:
        return cls(tuple(axis_angle_to_quat(np.asarray(axis, dtype=float), angle)))

    def as_quat(self) -> np.ndarray:
        return np.array(self.quat)

    def as_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.as_quat())

    def as_rotvec(self) -> np.ndarray:
        return quat_to_rotvec(self.as_quat())

    def inv(self) -> Rotation:
        return Rotation(tuple(quat_conj(self.as_quat())))

    def apply(self, v) -> np.ndarray:
        return np.asarray(v, dtype=float) @ self.as_matrix().T

    def __mul__(self, other: Rotation) -> Rotation:
        return Rotation(tuple(quat_mul(self.as_quat(), other.as_quat())))

    def angle_to(self, other: Rotation) -> float:
        return float(geodesic_distance(self.as_matrix(), other.as_matrix()))


def rotation_geodesic(a: Rotation, b: Rotation) -> float:
    """Geodesic distance between two :class:`Rotation` values, in radians."""
    return a.angle_to(b)
