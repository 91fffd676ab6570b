"""Spatial math and the three kinematic models of a continuum joint.

A continuum joint of arc length ``L`` is described either by the
constant-curvature (CC) pair ``q = (q0, q1)`` or by a chain of universal
joints (UJ), each UJ contributing two angles.  One chain segment of
half-length ``l`` carries the transform ``G(phi1, phi2)``:

    G = Trans(0, 0, l) * Rx(phi1) * Ry(phi2) * Trans(0, 0, l)

so a straight segment has total height ``2*l``.  ``n`` segments stacked
give the base-to-tip transform ``T(phi) = prod_i G(phi_2i, phi_2i+1)``.

All rotations are plain 3x3 numpy arrays, poses are (rotation, position)
pairs.  Everything here is pure and thread-safe.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ROT_TOL = 1e-9


class GeometryError(ValueError):
    """Raised on invalid rotations or out-of-domain configurations."""


def is_rotation(matrix: np.ndarray, tol: float = ROT_TOL) -> bool:
    """True if ``matrix`` is orthonormal with determinant +1 within ``tol``."""
    m = np.asarray(matrix, dtype=float)
    if m.shape != (3, 3):
        return False
    if not np.all(np.isfinite(m)):
        return False
    if np.max(np.abs(m.T @ m - np.eye(3))) > tol:
        return False
    return abs(np.linalg.det(m) - 1.0) <= tol


def check_rotation(matrix: np.ndarray, tol: float = ROT_TOL) -> np.ndarray:
    m = np.asarray(matrix, dtype=float)
    if not is_rotation(m, tol):
        raise GeometryError("matrix is not a rotation (orthonormality/det check failed)")
    return m


@dataclass(frozen=True)
class Pose:
    """Rigid transform: ``rotation`` (3x3) and ``position`` (3,) in meters."""

    rotation: np.ndarray
    position: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float))
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        if self.rotation.shape != (3, 3) or self.position.shape != (3,):
            raise GeometryError("pose needs a 3x3 rotation and a 3-vector position")
        if not np.all(np.isfinite(self.position)):
            raise GeometryError("pose position must be finite")

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    def compose(self, other: "Pose") -> "Pose":
        """self * other (apply ``other`` in this pose's frame)."""
        return Pose(self.rotation @ other.rotation,
                    self.position + self.rotation @ other.position)

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.position
        return m


@dataclass(frozen=True)
class UJConfig:
    """Universal-joint chain configuration.

    ``angles`` holds 2n values (x-bend, y-bend per segment), ``half_length``
    is the segment half-length l in meters.
    """

    angles: np.ndarray
    half_length: float

    def __post_init__(self):
        object.__setattr__(self, "angles", np.asarray(self.angles, dtype=float))
        if self.angles.ndim != 1 or self.angles.size < 2 or self.angles.size % 2:
            raise GeometryError("UJ angle vector must be 1-D with an even length >= 2")
        if not self.half_length > 0:
            raise GeometryError("segment half-length must be positive")
        if np.any(np.abs(self.angles) >= np.pi):
            raise GeometryError("UJ angles must satisfy |phi| < pi")

    @property
    def segments(self) -> int:
        return self.angles.size // 2


@dataclass(frozen=True)
class CCConfig:
    """Constant-curvature configuration: bend pair ``q`` and arc length ``L``."""

    q: np.ndarray
    arc_length: float

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float))
        if self.q.shape != (2,):
            raise GeometryError("CC configuration must be a 2-vector")
        if not self.arc_length > 0:
            raise GeometryError("arc length must be positive")
        if np.linalg.norm(self.q) >= np.pi:
            raise GeometryError("CC bend magnitude must be < pi for a valid estimate")


def skew(v: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]],
                     [v[2], 0.0, -v[0]],
                     [-v[1], v[0], 0.0]])


def so3_exp(omega: np.ndarray) -> np.ndarray:
    """Rodrigues rotation for an axis-angle vector with ||omega|| < pi."""
    w = np.asarray(omega, dtype=float)
    theta = float(np.linalg.norm(w))
    if theta >= np.pi:
        raise GeometryError("so3_exp requires ||omega|| < pi")
    k = skew(w)
    if theta < 1e-8:
        # second-order series keeps the round trip tight near zero
        return np.eye(3) + k + 0.5 * (k @ k)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / (theta * theta)
    return np.eye(3) + a * k + b * (k @ k)


def so3_log(rotation: np.ndarray) -> np.ndarray:
    """Axis-angle vector of a rotation; ||result|| in [0, pi].

    Uses the trace branch away from pi and largest-diagonal axis extraction
    beyond 3.0 rad, where the sine-based formula degrades.
    """
    r = check_rotation(rotation)
    tr = np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0)
    theta = float(np.arccos(tr))
    if theta < 1e-10:
        return 0.5 * np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    if theta <= 3.0:
        return theta / (2.0 * np.sin(theta)) * np.array(
            [r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    # near pi: axis from the dominant diagonal of R + I
    s = r + np.eye(3)
    i = int(np.argmax(np.diag(s)))
    axis = s[:, i] / np.sqrt(2.0 * s[i, i])
    # sign fixed by the sine part, which may be tiny but keeps orientation
    sin_part = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    if np.dot(axis, sin_part) < 0.0:
        axis = -axis
    return theta * axis


def rot_x(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def uj_fk_single(phi1: float, phi2: float, half_length: float) -> Pose:
    """Forward kinematics of one universal joint segment.

    Rotation block Rx(phi1)*Ry(phi2); translation
    (l*sin(phi2), -l*sin(phi1)*cos(phi2), l*cos(phi1)*cos(phi2) + l).
    """
    if not half_length > 0:
        raise GeometryError("segment half-length must be positive")
    r = rot_x(phi1) @ rot_y(phi2)
    stub = np.array([0.0, 0.0, half_length])
    return Pose(r, stub + r @ stub)


def uj_fk_chain(cfg: UJConfig) -> tuple[Pose, list[Pose]]:
    """Base-to-tip pose of a UJ chain plus every intermediate disk pose.

    Returns ``(tip, disks)`` where ``disks[i]`` is the pose after segment i
    (``disks[-1] == tip``).
    """
    pose = Pose.identity()
    disks: list[Pose] = []
    for s in range(cfg.segments):
        pose = pose.compose(uj_fk_single(cfg.angles[2 * s], cfg.angles[2 * s + 1],
                                         cfg.half_length))
        disks.append(pose)
    return pose, disks


def cc_fk(cfg: CCConfig) -> Pose:
    """Tip pose of a constant-curvature arc.

    R = exp((q0, q1, 0)); the position is the integral of the arc tangent,
    which reduces to p = (L/th^2) * (q1*(1-cos th), -q0*(1-cos th), th*sin th)
    with th = ||q||, and p = (0, 0, L) in the straight limit.
    """
    q0, q1 = cfg.q
    L = cfg.arc_length
    theta = float(np.hypot(q0, q1))
    r = so3_exp(np.array([q0, q1, 0.0]))
    if theta < 1e-8:
        # series: (1-cos)/th^2 -> 1/2, sin(th)/th -> 1
        p = np.array([L * q1 / 2.0, -L * q0 / 2.0, L * (1.0 - theta * theta / 6.0)])
    else:
        c = (1.0 - np.cos(theta)) / (theta * theta)
        p = L * np.array([q1 * c, -q0 * c, np.sin(theta) / theta])
    return Pose(r, p)


def cc_arc_points(cfg: CCConfig, count: int) -> np.ndarray:
    """``count`` points along the CC arc from base to tip (inclusive)."""
    fracs = np.linspace(0.0, 1.0, count)
    pts = np.empty((count, 3))
    for i, f in enumerate(fracs):
        if f == 0.0:
            pts[i] = 0.0
            continue
        sub = CCConfig(cfg.q * f, cfg.arc_length * f)
        pts[i] = cc_fk(sub).position
    return pts


# --- quaternion helpers (w, x, y, z) ----------------------------------------

def quat_to_rot(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_from_rotvec(v: np.ndarray) -> np.ndarray:
    angle = float(np.linalg.norm(v))
    if angle < 1e-12:
        return np.array([1.0, 0.5 * v[0], 0.5 * v[1], 0.5 * v[2]])
    axis = v / angle
    half = 0.5 * angle
    s = np.sin(half)
    return np.array([np.cos(half), axis[0] * s, axis[1] * s, axis[2] * s])


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax_, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax_ * bx - ay * by - az * bz,
        aw * bx + ax_ * bw + ay * bz - az * by,
        aw * by - ax_ * bz + ay * bw + az * bx,
        aw * bz + ax_ * by - ay * bx + az * bw,
    ])


def quat_normalize(q: np.ndarray) -> np.ndarray:
    return q / np.linalg.norm(q)


def quat_from_rot(r: np.ndarray) -> np.ndarray:
    """Quaternion (w,x,y,z) of a rotation matrix, w >= 0."""
    w = so3_log(r)
    angle = float(np.linalg.norm(w))
    if angle < 1e-12:
        return np.array([1.0, 0.0, 0.0, 0.0])
    return quat_from_rotvec(w)


@dataclass(frozen=True)
class CCEstimate:
    """Result of estimating a CC configuration from a relative orientation."""

    config: CCConfig
    twist: float
    degraded: bool = field(default=False)


TWIST_DEGRADED = 0.05  # rad; torsion beyond this violates the stiff-twist assumption


def cc_estimate(rel_rotation: np.ndarray, arc_length: float) -> CCEstimate:
    """CC configuration from the base-to-tip relative orientation.

    ``q`` is the first two components of log(R); the third component is
    reported as residual twist and flags the estimate as degraded beyond
    ``TWIST_DEGRADED`` (the joints are assumed torsionally stiff).
    """
    w = so3_log(rel_rotation)
    cfg = CCConfig(w[:2].copy(), arc_length)
    twist = float(w[2])
    return CCEstimate(cfg, twist, abs(twist) > TWIST_DEGRADED)
