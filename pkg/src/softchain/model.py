"""Declarative robot/scene description, parameter lumping, and model files.

The model file is YAML (nested key/value sections) with a versioned header.
Every physical constant the dynamics uses lives here so that experiments can
override them; the shipped default is calibrated so the waypoint motion
primitive lifts the nominal box.
"""
from __future__ import annotations

import hashlib
import io
import math
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path

import numpy as np
import yaml

MODEL_FORMAT_VERSION = 1
PRESSURE_MIN_KPA = 0.0
PRESSURE_MAX_KPA = 300.0


class ModelError(ValueError):
    """Schema or invariant violation in a robot model, naming the field."""


def _require(cond: bool, message: str):
    if not cond:
        raise ModelError(message)


@dataclass(frozen=True)
class ContinuumJointSpec:
    """One soft continuum joint lumped into ``disk_count`` rigid disks."""

    disk_count: int = 5
    length: float = 0.32          # m
    mass: float = 1.2             # kg, split evenly over the disks
    stiffness: float = 44.0       # N*m/rad per bending axis, whole joint
    damping: float = 3.0          # N*m*s/rad, whole joint
    disk_radius: float = 0.06     # m
    tendon_radius: float = 0.042  # m, chamber attachment offset from centerline
    max_bend: float = 2.1         # rad, whole joint
    disk_thickness: float = 0.0   # m, rim-contact clearance; 0 -> auto from max_bend

    def __post_init__(self):
        _require(self.disk_count >= 2, f"disk_count must be >= 2, got {self.disk_count}")
        for name in ("length", "mass", "stiffness", "damping", "disk_radius",
                     "tendon_radius"):
            _require(getattr(self, name) > 0, f"{name} must be positive")
        _require(0 < self.max_bend < math.pi,
                 f"max_bend must lie in (0, pi), got {self.max_bend}")
        if self.disk_thickness == 0.0:
            # rims meet exactly at the per-UJ share of max_bend
            t = 2.0 * self.disk_radius * math.tan(self.per_uj_limit() / 2.0)
            object.__setattr__(self, "disk_thickness", t)
        _require(self.disk_thickness > 0, "disk_thickness must be positive")

    @property
    def segment_half_length(self) -> float:
        """Half-length l of one UJ segment: joints span length = 2*l*(N-1)."""
        return self.length / (2.0 * (self.disk_count - 1))

    def per_uj_limit(self) -> float:
        return per_uj_limit(self.max_bend, self.disk_count)

    def disk_stiffness(self) -> tuple[float, float]:
        return distribute_stiffness(self.stiffness, self.damping, self.disk_count)

    def rim_contact_angle(self) -> float:
        """Per-UJ bend at which adjacent disk rims touch (limit method 3)."""
        return 2.0 * math.atan(self.disk_thickness / (2.0 * self.disk_radius))


@dataclass(frozen=True)
class LinkSpec:
    """Rigid interconnecting link, modeled as a solid cylinder."""

    length: float = 0.22  # m
    mass: float = 1.6     # kg
    radius: float = 0.05  # m

    def __post_init__(self):
        for name in ("length", "mass", "radius"):
            _require(getattr(self, name) > 0, f"link {name} must be positive")


@dataclass(frozen=True)
class ArmSpec:
    """Alternating joint/link/joint/link/joint chain plus its mount.

    ``mount_position`` is the shoulder point relative to the elevator
    carriage; ``pin_angle`` rotates the arm forward (about +y for the
    left arm, mirrored handling is geometric, not configured).
    """

    joints: tuple[ContinuumJointSpec, ...] = field(
        default_factory=lambda: tuple(ContinuumJointSpec() for _ in range(3)))
    links: tuple[LinkSpec, ...] = field(
        default_factory=lambda: tuple(LinkSpec() for _ in range(2)))
    mount_position: tuple[float, float, float] = (0.10, 0.45, -0.05)
    pin_angle: float = math.radians(30.0)

    def __post_init__(self):
        _require(len(self.joints) == 3, "an arm has exactly 3 continuum joints")
        _require(len(self.links) == 2, "an arm has exactly 2 rigid links")
        object.__setattr__(self, "joints", tuple(self.joints))
        object.__setattr__(self, "links", tuple(self.links))
        object.__setattr__(self, "mount_position", tuple(float(v) for v in self.mount_position))

    @property
    def dof(self) -> int:
        return sum(2 * (j.disk_count - 1) for j in self.joints)


@dataclass(frozen=True)
class ElevatorSpec:
    h_min: float = -1.5   # m
    h_max: float = 0.0    # m
    v_max: float = 0.4    # m/s
    a_max: float = 0.8    # m/s^2
    j_max: float = 4.0    # m/s^3

    def __post_init__(self):
        _require(self.h_min < self.h_max, "elevator range must satisfy h_min < h_max")
        for name in ("v_max", "a_max", "j_max"):
            _require(getattr(self, name) > 0, f"elevator {name} must be positive")


@dataclass(frozen=True)
class ActuatorSpec:
    """Pneumatic chamber model: first-order pressure lag + effective area."""

    p_min: float = PRESSURE_MIN_KPA
    p_max: float = PRESSURE_MAX_KPA
    effective_area: float = 1.0e-2  # m^2; force = area * pressure
    time_constant: float = 0.1      # s

    def __post_init__(self):
        _require(self.p_min == PRESSURE_MIN_KPA and self.p_max == PRESSURE_MAX_KPA,
                 "pressure bounds are fixed at [0, 300] kPa")
        _require(self.effective_area > 0, "effective_area must be positive")
        _require(self.time_constant > 0, "time_constant must be positive")

    @property
    def mid_pressure(self) -> float:
        return 0.5 * (self.p_min + self.p_max)


@dataclass(frozen=True)
class ContactSpec:
    k_n: float = 2.0e4        # N/m penalty stiffness
    c_n: float = 200.0        # N*s/m penalty damping
    mu_box_arm: float = 0.8
    mu_box_ground: float = 0.5
    v_eps: float = 0.003      # m/s friction regularization velocity

    def __post_init__(self):
        for name in ("k_n", "c_n", "v_eps"):
            _require(getattr(self, name) > 0, f"contact {name} must be positive")
        for name in ("mu_box_arm", "mu_box_ground"):
            _require(getattr(self, name) >= 0, f"contact {name} must be >= 0")


@dataclass(frozen=True)
class TorsoSpec:
    """Carriage-mounted geometry. Offsets are relative to the carriage frame."""

    carriage_height: float = 2.05                 # m, carriage z at h = 0
    chest_center: tuple[float, float, float] = (0.16, 0.0, -0.42)
    chest_half_extents: tuple[float, float, float] = (0.10, 0.28, 0.34)

    def __post_init__(self):
        _require(self.carriage_height > 0, "carriage_height must be positive")
        _require(all(v > 0 for v in self.chest_half_extents),
                 "chest_half_extents must be positive")
        object.__setattr__(self, "chest_center", tuple(float(v) for v in self.chest_center))
        object.__setattr__(self, "chest_half_extents",
                           tuple(float(v) for v in self.chest_half_extents))


@dataclass(frozen=True)
class BoxSpec:
    """Manipuland: a uniform-density box."""

    size: tuple[float, float, float] = (0.4, 0.4, 0.8)  # w, d, h in m
    mass: float = 5.0
    friction: float = 0.8

    def __post_init__(self):
        _require(all(v > 0 for v in self.size), "box size must be positive")
        _require(self.mass > 0, "box mass must be positive")
        _require(self.friction >= 0, "box friction must be >= 0")
        object.__setattr__(self, "size", tuple(float(v) for v in self.size))

    def inertia(self) -> np.ndarray:
        """Principal inertia of the uniform box about its centroid."""
        w, d, h = self.size
        m = self.mass
        return np.array([m * (d * d + h * h) / 12.0,
                         m * (w * w + h * h) / 12.0,
                         m * (w * w + d * d) / 12.0])


@dataclass(frozen=True)
class PrimitiveSpec:
    """Waypoint differential pressures (kPa) for the grasping primitive."""

    dp_approach_left: tuple[float, ...] = (0.0,) * 6
    dp_approach_right: tuple[float, ...] = (0.0,) * 6
    dp_grasp_left: tuple[float, ...] = (0.0,) * 6
    dp_grasp_right: tuple[float, ...] = (0.0,) * 6
    approach_height: float = -0.9  # m, elevator setpoint while approaching

    def __post_init__(self):
        for name in ("dp_approach_left", "dp_approach_right",
                     "dp_grasp_left", "dp_grasp_right"):
            v = tuple(float(x) for x in getattr(self, name))
            _require(len(v) == 6, f"{name} must have 6 entries")
            _require(all(abs(x) <= 150.0 for x in v),
                     f"{name} entries must lie in [-150, 150] kPa")
            object.__setattr__(self, name, v)


@dataclass(frozen=True)
class RobotModel:
    """Full scene description: two arms, torso/elevator, actuation, contact."""

    left: ArmSpec = field(default_factory=ArmSpec)
    right: ArmSpec = field(default_factory=lambda: ArmSpec(
        mount_position=(0.10, -0.45, -0.05)))
    torso: TorsoSpec = field(default_factory=TorsoSpec)
    elevator: ElevatorSpec = field(default_factory=ElevatorSpec)
    actuator: ActuatorSpec = field(default_factory=ActuatorSpec)
    contact: ContactSpec = field(default_factory=ContactSpec)
    primitive: PrimitiveSpec = field(default_factory=PrimitiveSpec)
    action_filter_alpha: float = 0.3
    gravity: float = 9.81
    timestep: float = 0.005
    limit_methods: tuple[int, ...] = (1, 3)
    box_start_x: float = 0.62    # m, nominal box center before randomization

    def __post_init__(self):
        _require(0 < self.action_filter_alpha <= 1,
                 "action_filter_alpha must lie in (0, 1]")
        _require(self.timestep > 0, "timestep must be positive")
        _require(self.gravity > 0, "gravity must be positive")
        methods = tuple(sorted(set(int(m) for m in self.limit_methods)))
        _require(all(m in (1, 2, 3) for m in methods),
                 "limit_methods entries must be in {1, 2, 3}")
        object.__setattr__(self, "limit_methods", methods)


def distribute_stiffness(stiffness: float, damping: float, disk_count: int) -> tuple[float, float]:
    """Per-UJ spring/damper constants for N disks in series.

    N-1 equal springs in series must compose to the whole-joint value:
    1/K = (N-1)/k_disk, so k_disk = K*(N-1), and likewise for damping.
    """
    _require(disk_count >= 2, f"disk_count must be >= 2, got {disk_count}")
    n = disk_count - 1
    return stiffness * n, damping * n


def per_uj_limit(max_bend: float, disk_count: int) -> float:
    """Limit method 1: the joint's max bend split evenly over the N-1 UJs."""
    _require(disk_count >= 2, f"disk_count must be >= 2, got {disk_count}")
    return max_bend / (disk_count - 1)


def with_disk_count(model: RobotModel, disk_count: int) -> RobotModel:
    """Rebuild the model with every joint re-lumped into ``disk_count`` disks.

    Whole-joint stiffness/damping/max-bend are preserved; the rim-contact
    clearance is re-derived so method 3 still engages at the joint limit.
    """
    def redo(arm: ArmSpec) -> ArmSpec:
        joints = tuple(replace(j, disk_count=disk_count, disk_thickness=0.0)
                       for j in arm.joints)
        return replace(arm, joints=joints)

    return replace(model, left=redo(model.left), right=redo(model.right))


# --- soft-limit (method 2) tuning check -------------------------------------

def steady_state_bend(joint: ContinuumJointSpec, actuator: ActuatorSpec) -> float:
    """Planar steady-state bend of one joint at full differential pressure.

    Balances the tendon moment against the lumped spring along a uniform
    planar bend (one UJ suffices by symmetry); solved by bisection on the
    net generalized moment about the UJ bending axis.
    """
    from . import geometry

    n = joint.disk_count - 1
    k_disk, _ = joint.disk_stiffness()
    area = actuator.effective_area
    r_t = joint.tendon_radius
    half = joint.segment_half_length

    def chamber_moment(y_side: float, pressure_pa: float, rot: np.ndarray) -> float:
        # attachment points sit on the disks at +-r_t; the UJ is the origin,
        # the lower disk centroid at (0,0,-half), the upper at rot @ (0,0,half)
        attach_lo = np.array([0.0, y_side * r_t, -half])
        attach_up = rot @ np.array([0.0, y_side * r_t, half])
        d = attach_up - attach_lo
        dist = float(np.linalg.norm(d))
        if dist < 1e-12:
            return 0.0
        force = area * pressure_pa * d / dist
        return float(np.cross(attach_up, force)[0])

    def net_moment(theta: float) -> float:
        phi = theta / n
        rot = geometry.rot_x(phi)
        # +y chamber fully pressurized drives a positive bend about +x;
        # the -y antagonist is at its minimum pressure
        m = chamber_moment(+1.0, actuator.p_max * 1e3, rot)
        m += chamber_moment(-1.0, actuator.p_min * 1e3, rot)
        return m - k_disk * phi

    lo_t, hi_t = 0.0, min(joint.max_bend * 3.0, n * math.pi * 0.95)
    if net_moment(1e-9) <= 0:
        return 0.0
    if net_moment(hi_t) > 0:
        return hi_t
    for _ in range(80):
        mid = 0.5 * (lo_t + hi_t)
        if net_moment(mid) > 0:
            lo_t = mid
        else:
            hi_t = mid
    return 0.5 * (lo_t + hi_t)


def check_soft_limit_tuning(model: RobotModel, tolerance: float = 0.10) -> list[str]:
    """Limit method 2: stiffness and actuation must cancel near max_bend.

    Returns a list of violation messages (empty when tuned within
    ``tolerance`` relative); enforced at load when method 2 is enabled.
    """
    problems = []
    for arm_name, arm in (("left", model.left), ("right", model.right)):
        for i, joint in enumerate(arm.joints):
            theta = steady_state_bend(joint, model.actuator)
            rel = abs(theta - joint.max_bend) / joint.max_bend
            if rel > tolerance:
                problems.append(
                    f"{arm_name} joint {i}: steady-state bend {theta:.3f} rad is "
                    f"{100 * rel:.0f}% away from max_bend {joint.max_bend:.3f} rad")
    return problems


# --- serialization -----------------------------------------------------------

_HEADER = f"# softchain model file, format version {MODEL_FORMAT_VERSION}\n"


def _joint_dict(j: ContinuumJointSpec) -> dict:
    return {
        "disk_count": j.disk_count, "length": j.length, "mass": j.mass,
        "stiffness": j.stiffness, "damping": j.damping,
        "disk_radius": j.disk_radius, "tendon_radius": j.tendon_radius,
        "max_bend": j.max_bend, "disk_thickness": j.disk_thickness,
    }


def _arm_dict(a: ArmSpec) -> dict:
    return {
        "joints": [_joint_dict(j) for j in a.joints],
        "links": [{"length": l.length, "mass": l.mass, "radius": l.radius}
                  for l in a.links],
        "mount_position": list(a.mount_position),
        "pin_angle": a.pin_angle,
    }


def model_to_dict(model: RobotModel) -> dict:
    return {
        "version": MODEL_FORMAT_VERSION,
        "gravity": model.gravity,
        "timestep": model.timestep,
        "action_filter_alpha": model.action_filter_alpha,
        "limit_methods": list(model.limit_methods),
        "box_start_x": model.box_start_x,
        "arms": {"left": _arm_dict(model.left), "right": _arm_dict(model.right)},
        "torso": {
            "carriage_height": model.torso.carriage_height,
            "chest_center": list(model.torso.chest_center),
            "chest_half_extents": list(model.torso.chest_half_extents),
        },
        "elevator": asdict(model.elevator),
        "actuator": asdict(model.actuator),
        "contact": asdict(model.contact),
        "primitive": {
            "dp_approach_left": list(model.primitive.dp_approach_left),
            "dp_approach_right": list(model.primitive.dp_approach_right),
            "dp_grasp_left": list(model.primitive.dp_grasp_left),
            "dp_grasp_right": list(model.primitive.dp_grasp_right),
            "approach_height": model.primitive.approach_height,
        },
    }


def _build_joint(d: dict, where: str) -> ContinuumJointSpec:
    try:
        return ContinuumJointSpec(**d)
    except TypeError as e:
        raise ModelError(f"{where}: {e}") from e


def model_from_dict(data: dict) -> RobotModel:
    if not isinstance(data, dict):
        raise ModelError("model file must contain a mapping at top level")
    version = data.get("version")
    if version != MODEL_FORMAT_VERSION:
        raise ModelError(f"version: expected {MODEL_FORMAT_VERSION}, got {version!r}")
    arms = data.get("arms", {})

    def build_arm(name: str) -> ArmSpec:
        a = arms.get(name)
        if a is None:
            raise ModelError(f"arms.{name}: section missing")
        joints = tuple(_build_joint(j, f"arms.{name}.joints[{i}]")
                       for i, j in enumerate(a.get("joints", [])))
        links = tuple(LinkSpec(**l) for l in a.get("links", []))
        return ArmSpec(joints=joints, links=links,
                       mount_position=tuple(a["mount_position"]),
                       pin_angle=float(a["pin_angle"]))

    torso_d = data.get("torso", {})
    model = RobotModel(
        left=build_arm("left"),
        right=build_arm("right"),
        torso=TorsoSpec(carriage_height=torso_d["carriage_height"],
                        chest_center=tuple(torso_d["chest_center"]),
                        chest_half_extents=tuple(torso_d["chest_half_extents"])),
        elevator=ElevatorSpec(**data.get("elevator", {})),
        actuator=ActuatorSpec(**data.get("actuator", {})),
        contact=ContactSpec(**data.get("contact", {})),
        primitive=PrimitiveSpec(**data.get("primitive", {})),
        action_filter_alpha=float(data.get("action_filter_alpha", 0.3)),
        gravity=float(data.get("gravity", 9.81)),
        timestep=float(data.get("timestep", 0.005)),
        limit_methods=tuple(data.get("limit_methods", (1, 3))),
        box_start_x=float(data.get("box_start_x", 0.62)),
    )
    if 2 in model.limit_methods:
        problems = check_soft_limit_tuning(model)
        if problems:
            raise ModelError("soft-limit tuning check failed: " + "; ".join(problems))
    return model


def save_model(model: RobotModel, path: str | Path) -> None:
    text = _HEADER + yaml.safe_dump(model_to_dict(model), sort_keys=True,
                                    default_flow_style=None)
    Path(path).write_text(text)


def load_model(path: str | Path) -> RobotModel:
    p = Path(path)
    if not p.exists():
        raise ModelError(f"model file not found: {p}")
    try:
        data = yaml.safe_load(p.read_text())
    except yaml.YAMLError as e:
        raise ModelError(f"model file is not valid YAML: {e}") from e
    return model_from_dict(data)


def model_hash(path: str | Path) -> str:
    """Content hash of a model file, for run manifests."""
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def default_model() -> RobotModel:
    """The shipped, calibrated scene (see data/default_model.yaml)."""
    return RobotModel()
