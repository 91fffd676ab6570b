"""Forward dynamics of the full scene.

Two universal-joint chain arms hang from an elevating carriage; a free
rigid box couples to the arms, chest, and floor through penalty contacts.
One call to :meth:`Engine.step` advances the scene by one semi-implicit
Euler step: joint springs/dampers, joint limits, and contact damping are
folded into the velocity solve (which keeps stiff settings stable at
large timesteps), while tendon, gravity, and Coriolis terms are explicit.

A ``(model, state)`` pair must stay on one thread while stepping, but any
number of independent engines may run in parallel: nothing is shared.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from . import _kernels as K
from . import elevator, geometry
from .model import (ArmSpec, BoxSpec, PRESSURE_MAX_KPA, PRESSURE_MIN_KPA,
                    RobotModel)

# unilateral joint-limit penalty (methods 1 and 3); stiff values are safe
# because both are handled implicitly in the velocity update
LIMIT_STIFFNESS = 2000.0   # N*m/rad
LIMIT_DAMPING = 50.0       # N*m*s/rad
MAX_CONTACTS = 256
ELEVATOR_REPLAN_BAND = 0.005  # m


class IntegrationError(RuntimeError):
    """Raised when a step produces a non-finite state."""

    def __init__(self, message: str, last_state: "SimState"):
        super().__init__(message)
        self.last_state = last_state


@dataclass(frozen=True)
class CommandVector:
    """Physical command: elevator setpoint plus 24 chamber pressures (kPa)."""

    h_des: float
    p_l_des: np.ndarray
    p_r_des: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p_l_des", np.asarray(self.p_l_des, dtype=float))
        object.__setattr__(self, "p_r_des", np.asarray(self.p_r_des, dtype=float))
        if self.p_l_des.shape != (12,) or self.p_r_des.shape != (12,):
            raise ValueError("pressure commands must be 12-vectors per arm")

    def clamped(self, h_min: float, h_max: float) -> "CommandVector":
        return CommandVector(
            h_des=min(max(self.h_des, h_min), h_max),
            p_l_des=np.clip(self.p_l_des, PRESSURE_MIN_KPA, PRESSURE_MAX_KPA),
            p_r_des=np.clip(self.p_r_des, PRESSURE_MIN_KPA, PRESSURE_MAX_KPA))

    def as_array(self) -> np.ndarray:
        return np.concatenate(([self.h_des], self.p_l_des, self.p_r_des))


@dataclass
class SimState:
    """Full generalized state of the scene."""

    q_l: np.ndarray
    qd_l: np.ndarray
    q_r: np.ndarray
    qd_r: np.ndarray
    p_l: np.ndarray          # chamber pressures, kPa
    p_r: np.ndarray
    h: float
    hd: float
    plan: elevator.Trajectory
    box_x: np.ndarray
    box_quat: np.ndarray     # (w, x, y, z)
    box_v: np.ndarray
    box_w: np.ndarray
    t: float = 0.0

    def copy(self) -> "SimState":
        return SimState(self.q_l.copy(), self.qd_l.copy(), self.q_r.copy(),
                        self.qd_r.copy(), self.p_l.copy(), self.p_r.copy(),
                        self.h, self.hd, self.plan, self.box_x.copy(),
                        self.box_quat.copy(), self.box_v.copy(),
                        self.box_w.copy(), self.t)

    def finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in
                   (self.q_l, self.qd_l, self.q_r, self.qd_r, self.p_l,
                    self.p_r, self.box_x, self.box_quat, self.box_v,
                    self.box_w)) and math.isfinite(self.h)


@dataclass(frozen=True)
class ContactPoint:
    position: np.ndarray
    normal: np.ndarray       # from body A toward body B
    depth: float
    bodies: tuple[str, str]
    force: np.ndarray        # force applied to body B at the point

    def __post_init__(self):
        if self.depth < 0:
            raise ValueError("contact depth must be >= 0")


@dataclass
class StepInfo:
    """Per-step byproducts: FK caches and resolved contacts."""

    fk_l: "ArmFK"
    fk_r: "ArmFK"
    contacts: list
    hdd: float = 0.0


def pressure_step(p: np.ndarray | float, p_cmd: np.ndarray | float,
                  dt: float, tau: float):
    """First-order chamber pressure lag, clamped to the [0, 300] kPa range."""
    if dt <= 0 or tau <= 0:
        raise ValueError("pressure_step needs dt > 0 and tau > 0")
    alpha = 1.0 - math.exp(-dt / tau)
    out = p + (p_cmd - p) * alpha
    return np.clip(out, PRESSURE_MIN_KPA, PRESSURE_MAX_KPA)


class ArmStructure:
    """Flattened chain description of one arm, shared by the kernels."""

    def __init__(self, spec: ArmSpec):
        self.spec = spec
        pre_z, half, seg_joint = [], [], []
        lo_body, lo_z, att_r = [], [], []
        mass, com_z, i_t, i_a = [], [], [], []
        k_q, c_q, lim1 = [], [], []
        rim_ang = []
        spheres = []  # (body, local_z, radius)
        seg_ranges = []
        link_len = [l.length for l in spec.links] + [0.0]
        s = 0
        for j, joint in enumerate(spec.joints):
            n = joint.disk_count - 1
            hl = joint.segment_half_length
            k_disk, c_disk = joint.disk_stiffness()
            m_disk = joint.mass / joint.disk_count
            it_d = m_disk * (3 * joint.disk_radius ** 2 + joint.disk_thickness ** 2) / 12.0
            ia_d = 0.5 * m_disk * joint.disk_radius ** 2
            seg_start = s
            for i in range(n):
                first = i == 0
                prev_link = link_len[j - 1] if (first and j > 0) else 0.0
                pre_z.append(hl + prev_link)
                half.append(hl)
                seg_joint.append(j)
                att_r.append(joint.tendon_radius)
                if s == 0:
                    lo_body.append(-1)
                    lo_z.append(0.0)
                elif first:
                    lo_body.append(s - 1)
                    lo_z.append(prev_link)
                else:
                    lo_body.append(s - 1)
                    lo_z.append(0.0)
                last = i == n - 1
                if last and j < 2:
                    # composite: tip disk + link + next joint's base disk
                    link = spec.links[j]
                    nxt = spec.joints[j + 1]
                    m_next = nxt.mass / nxt.disk_count
                    it_next = m_next * (3 * nxt.disk_radius ** 2
                                        + nxt.disk_thickness ** 2) / 12.0
                    ia_next = 0.5 * m_next * nxt.disk_radius ** 2
                    it_link = link.mass * (3 * link.radius ** 2 + link.length ** 2) / 12.0
                    ia_link = 0.5 * link.mass * link.radius ** 2
                    parts = [(m_disk, 0.0, it_d, ia_d),
                             (link.mass, link.length / 2.0, it_link, ia_link),
                             (m_next, link.length, it_next, ia_next)]
                    m_tot = sum(p[0] for p in parts)
                    cz = sum(p[0] * p[1] for p in parts) / m_tot
                    it_tot = sum(p[2] + p[0] * (p[1] - cz) ** 2 for p in parts)
                    ia_tot = sum(p[3] for p in parts)
                    mass.append(m_tot)
                    com_z.append(cz)
                    i_t.append(it_tot)
                    i_a.append(ia_tot)
                    spheres.append((s, 0.0, joint.disk_radius))
                    spheres.append((s, link.length / 3.0, link.radius))
                    spheres.append((s, 2.0 * link.length / 3.0, link.radius))
                else:
                    mass.append(m_disk)
                    com_z.append(0.0)
                    i_t.append(it_d)
                    i_a.append(ia_d)
                    spheres.append((s, 0.0, joint.disk_radius))
                k_q.extend([k_disk, k_disk])
                c_q.extend([c_disk, c_disk])
                lim1.extend([joint.per_uj_limit()] * 2)
                rim_ang.append(joint.rim_contact_angle())
                s += 1
            seg_ranges.append((seg_start, s))

        self.n_seg = s
        self.n_q = 2 * s
        self.pre_z = np.array(pre_z)
        self.half = np.array(half)
        self.seg_joint = np.array(seg_joint, dtype=np.int64)
        self.lo_body = np.array(lo_body, dtype=np.int64)
        self.lo_z = np.array(lo_z)
        self.att_r = np.array(att_r)
        self.mass = np.array(mass)
        self.com_z = np.array(com_z)
        self.i_t = np.array(i_t)
        self.i_a = np.array(i_a)
        self.k_q = np.array(k_q)
        self.c_q = np.array(c_q)
        self.lim1 = np.array(lim1)
        self.rim_ang = np.array(rim_ang)
        self.sph_body = np.array([p[0] for p in spheres], dtype=np.int64)
        self.sph_z = np.array([p[1] for p in spheres])
        self.sph_r = np.array([p[2] for p in spheres])
        self.seg_ranges = seg_ranges
        # arm base orientation: straight arm extends along +z of the base
        # frame; pinning rotates it forward so it points down-and-forward
        self.mount_rot = geometry.rot_y(math.pi - spec.pin_angle)
        self.mount_pos = np.array(spec.mount_position)

    def base_pose(self, carriage_z: float) -> tuple[np.ndarray, np.ndarray]:
        p = self.mount_pos + np.array([0.0, 0.0, carriage_z])
        return self.mount_rot, p


@dataclass
class ArmFK:
    """FK cache for one arm at one configuration."""

    ax: np.ndarray
    apt: np.ndarray
    body_r: np.ndarray
    body_p: np.ndarray
    com_w: np.ndarray
    base_r: np.ndarray
    base_p: np.ndarray


class Engine:
    """Steps a compiled scene; one engine per thread."""

    def __init__(self, model: RobotModel, box: BoxSpec | None = None):
        self.model = model
        self.box = box
        self.arm_l = ArmStructure(model.left)
        self.arm_r = ArmStructure(model.right)
        self.n_l = self.arm_l.n_q
        self.n_r = self.arm_r.n_q
        self.n_box = 6 if box is not None else 0
        self.n_tot = self.n_l + self.n_r + self.n_box
        self._a = np.zeros((self.n_tot, self.n_tot))
        self._rhs = np.zeros(self.n_tot)
        self._cidx = np.zeros((MAX_CONTACTS, 4), dtype=np.int64)
        self._cgeo = np.zeros((MAX_CONTACTS, 13))
        self._cbodies: list[tuple[str, str]] = []
        self._f_out = np.zeros((MAX_CONTACTS, 3))
        self.methods = model.limit_methods
        if box is not None:
            self.box_inertia = box.inertia()

    # --- state construction --------------------------------------------------

    def carriage_z(self, h: float) -> float:
        return self.model.torso.carriage_height + h

    def initial_state(self, box_x=None, box_yaw: float = 0.0) -> SimState:
        mid = 0.5 * (PRESSURE_MIN_KPA + PRESSURE_MAX_KPA)
        plan = elevator.plan_move(0.0, 0.0, 0.0, self.model.elevator, t0=0.0)
        if self.box is not None:
            if box_x is None:
                box_x = np.array([self.model.box_start_x, 0.0,
                                  self.box.size[2] / 2.0])
            quat = geometry.quat_from_rotvec(np.array([0.0, 0.0, box_yaw]))
        else:
            box_x = np.zeros(3)
            quat = np.array([1.0, 0.0, 0.0, 0.0])
        return SimState(
            q_l=np.zeros(self.n_l), qd_l=np.zeros(self.n_l),
            q_r=np.zeros(self.n_r), qd_r=np.zeros(self.n_r),
            p_l=np.full(12, mid), p_r=np.full(12, mid),
            h=0.0, hd=0.0, plan=plan,
            box_x=np.asarray(box_x, dtype=float), box_quat=quat,
            box_v=np.zeros(3), box_w=np.zeros(3), t=0.0)

    # --- kinematics -----------------------------------------------------------

    def arm_fk(self, arm: ArmStructure, q: np.ndarray, h: float) -> ArmFK:
        base_r, base_p = arm.base_pose(self.carriage_z(h))
        ax = np.empty((arm.n_q, 3))
        apt = np.empty((arm.n_q, 3))
        body_r = np.empty((arm.n_seg, 3, 3))
        body_p = np.empty((arm.n_seg, 3))
        com_w = np.empty((arm.n_seg, 3))
        K.fk_arm(q, base_r, base_p, arm.pre_z, arm.half, ax, apt, body_r, body_p)
        K.body_coms(body_r, body_p, arm.com_z, com_w)
        return ArmFK(ax, apt, body_r, body_p, com_w, base_r, base_p)

    def fk(self, state: SimState) -> tuple[ArmFK, ArmFK]:
        return (self.arm_fk(self.arm_l, state.q_l, state.h),
                self.arm_fk(self.arm_r, state.q_r, state.h))

    def joint_frames(self, arm: ArmStructure, fk: ArmFK):
        """(base_pose, tip_pose) world rotation/position per continuum joint."""
        frames = []
        link_len = [l.length for l in arm.spec.links]
        for j, (s0, s1) in enumerate(arm.seg_ranges):
            if j == 0:
                rb, pb = fk.base_r, fk.base_p
            else:
                prev = s0 - 1
                rb = fk.body_r[prev]
                pb = fk.body_p[prev] + rb[:, 2] * link_len[j - 1]
            rt = fk.body_r[s1 - 1]
            pt = fk.body_p[s1 - 1]
            frames.append(((rb, pb), (rt, pt)))
        return frames

    def cc_estimates(self, arm: ArmStructure, fk: ArmFK):
        """Per-joint CC estimates (q 2-vector, twist) from relative orientation."""
        out = []
        for (rb, _), (rt, _) in self.joint_frames(arm, fk):
            w = geometry.so3_log(rb.T @ rt)
            out.append((w[:2].copy(), float(w[2])))
        return out

    def chest_box(self, h: float) -> tuple[np.ndarray, np.ndarray]:
        """(center, half_extents) of the chest collision box at height h."""
        c = np.array(self.model.torso.chest_center) + np.array(
            [0.0, 0.0, self.carriage_z(h)])
        return c, np.array(self.model.torso.chest_half_extents)

    # --- force assembly helpers ----------------------------------------------

    def _arm_system(self, arm: ArmStructure, fk: ArmFK, q, qd, pressures,
                    hd: float, hdd: float, dt: float):
        """Per-arm mass matrix, implicit diagonal, and explicit torques."""
        nq = arm.n_q
        m = np.empty((nq, nq))
        K.crba_arm(fk.ax, fk.apt, fk.body_r, fk.com_w, arm.mass, arm.i_t,
                   arm.i_a, m)
        bias = np.empty(nq)
        base_vel = np.array([0.0, 0.0, hd])
        base_acc = np.array([0.0, 0.0, self.model.gravity + hdd])
        K.rnea_bias_arm(qd, fk.ax, fk.apt, fk.body_r, fk.com_w, arm.mass,
                        arm.i_t, arm.i_a, base_vel, base_acc, bias)
        tau = np.empty(nq)
        lengths = np.empty(12)
        K.tendon_forces_arm(pressures * 1e3, self.model.actuator.effective_area,
                            fk.ax, fk.apt, fk.body_r, fk.body_p, fk.base_r,
                            fk.base_p, arm.lo_body, arm.lo_z, arm.att_r,
                            arm.seg_joint, tau, lengths)
        tau -= bias
        tau -= arm.k_q * q          # spring explicit part (implicit term in A)
        diag_k = arm.k_q.copy()
        diag_c = arm.c_q.copy()
        a_extra = np.zeros((nq, nq))
        if 1 in self.methods:
            excess = q - np.clip(q, -arm.lim1, arm.lim1)
            active = excess != 0.0
            tau -= LIMIT_STIFFNESS * excess
            diag_k[active] += LIMIT_STIFFNESS
            diag_c[active] += LIMIT_DAMPING
        if 3 in self.methods:
            for s in range(arm.n_seg):
                b = q[2 * s:2 * s + 2]
                nb = float(np.hypot(b[0], b[1]))
                e = nb - arm.rim_ang[s]
                if e <= 0.0 or nb < 1e-12:
                    continue
                u = b / nb
                tau[2 * s:2 * s + 2] -= LIMIT_STIFFNESS * e * u
                blk = (LIMIT_STIFFNESS * dt + LIMIT_DAMPING) * np.outer(u, u)
                a_extra[2 * s:2 * s + 2, 2 * s:2 * s + 2] += dt * blk
        a = m + np.diag(dt * diag_c + dt * dt * diag_k) + a_extra
        rhs = m @ qd + dt * tau
        return m, a, rhs

    # --- contact detection ----------------------------------------------------

    def _detect_contacts(self, state: SimState, fk_l: ArmFK, fk_r: ArmFK,
                         hd: float):
        cs = self.model.contact
        n = 0
        cidx, cgeo = self._cidx, self._cgeo
        self._cbodies = []
        bias_carriage = np.array([0.0, 0.0, hd])

        def add(sa, ba, sb, bb, point, normal, depth, mu, bias_rel, names):
            nonlocal n
            if n >= MAX_CONTACTS:
                return
            cidx[n, 0], cidx[n, 1], cidx[n, 2], cidx[n, 3] = sa, ba, sb, bb
            cgeo[n, 0:3] = point
            cgeo[n, 3:6] = normal
            cgeo[n, 6] = depth
            cgeo[n, 7] = cs.k_n
            cgeo[n, 8] = cs.c_n
            cgeo[n, 9] = mu
            cgeo[n, 10:13] = bias_rel
            self._cbodies.append(names)
            n += 1

        have_box = self.box is not None
        if have_box:
            r_box = geometry.quat_to_rot(state.box_quat)
            he = 0.5 * np.array(self.box.size)

        for side, (arm, fk, name) in enumerate((
                (self.arm_l, fk_l, "left"), (self.arm_r, fk_r, "right"))):
            centers = (fk.body_p[arm.sph_body]
                       + fk.body_r[arm.sph_body][:, :, 2] * arm.sph_z[:, None])
            radii = arm.sph_r
            # spheres vs floor
            depth_f = radii - centers[:, 2]
            for i in np.nonzero(depth_f > 0.0)[0]:
                c = centers[i]
                point = np.array([c[0], c[1], 0.0])
                add(3, 0, side, int(arm.sph_body[i]), point,
                    np.array([0.0, 0.0, 1.0]), float(depth_f[i]),
                    cs.mu_box_ground, bias_carriage,
                    ("floor", f"{name}:{int(arm.sph_body[i])}"))
            if have_box:
                local = (centers - state.box_x) @ r_box
                clamped = np.clip(local, -he, he)
                delta = local - clamped
                dist = np.linalg.norm(delta, axis=1)
                for i in range(centers.shape[0]):
                    if dist[i] >= radii[i]:
                        continue
                    if dist[i] > 1e-12:
                        n_local = delta[i] / dist[i]
                        depth = radii[i] - dist[i]
                        point_local = clamped[i]
                    else:
                        gaps = he - np.abs(local[i])
                        axp = int(np.argmin(gaps))
                        n_local = np.zeros(3)
                        n_local[axp] = math.copysign(1.0, local[i][axp])
                        depth = radii[i] + float(gaps[axp])
                        point_local = local[i].copy()
                        point_local[axp] = math.copysign(he[axp], local[i][axp])
                    normal = r_box @ n_local
                    point = state.box_x + r_box @ point_local
                    add(2, 0, side, int(arm.sph_body[i]), point, normal,
                        float(depth), self.box.friction, bias_carriage,
                        ("box", f"{name}:{int(arm.sph_body[i])}"))

        if have_box:
            corners_local = np.array([(sx * he[0], sy * he[1], sz * he[2])
                                      for sx in (-1, 1) for sy in (-1, 1)
                                      for sz in (-1, 1)])
            corners = state.box_x + corners_local @ r_box.T
            for i in range(8):
                d = -corners[i, 2]
                if d > 0.0:
                    point = corners[i].copy()
                    point[2] = 0.0
                    add(3, 0, 2, 0, point, np.array([0.0, 0.0, 1.0]), float(d),
                        cs.mu_box_ground, np.zeros(3), ("floor", "box"))
            # chest (axis-aligned, carriage-mounted) vs box
            cc, che = self.chest_box(state.h)
            rel = corners - cc
            inside = np.all(np.abs(rel) < che, axis=1)
            for i in np.nonzero(inside)[0]:
                gaps = che - np.abs(rel[i])
                axp = int(np.argmin(gaps))
                normal = np.zeros(3)
                normal[axp] = math.copysign(1.0, rel[i][axp])
                point = corners[i]
                add(3, 0, 2, 0, point, normal, float(gaps[axp]),
                    self.box.friction, -bias_carriage, ("chest", "box"))
            # chest corners inside the manipuland box
            ch_corners = cc + np.array([(sx * che[0], sy * che[1], sz * che[2])
                                        for sx in (-1, 1) for sy in (-1, 1)
                                        for sz in (-1, 1)])
            local = (ch_corners - state.box_x) @ r_box
            inside = np.all(np.abs(local) < he, axis=1)
            for i in np.nonzero(inside)[0]:
                gaps = he - np.abs(local[i])
                axp = int(np.argmin(gaps))
                n_local = np.zeros(3)
                n_local[axp] = math.copysign(1.0, local[i][axp])
                add(2, 0, 3, 0, ch_corners[i], r_box @ n_local,
                    float(gaps[axp]), self.box.friction, bias_carriage,
                    ("box", "chest"))
        return n

    # --- stepping ---------------------------------------------------------------

    def step(self, state: SimState, command: CommandVector, dt: float | None = None,
             ext_force_box: np.ndarray | None = None) -> tuple[SimState, StepInfo]:
        if dt is None:
            dt = self.model.timestep
        u = command.clamped(self.model.elevator.h_min, self.model.elevator.h_max)
        plan = state.plan
        # deadband: replanning resets the accel ramp, so chase the setpoint
        # only when it moves materially (keeps braking at full a_max)
        if abs(u.h_des - plan.target) > ELEVATOR_REPLAN_BAND:
            plan = elevator.plan_move(state.h, state.hd, u.h_des,
                                      self.model.elevator, t0=state.t)
        h, hd, hdd = plan.sample(state.t)

        tau_p = self.model.actuator.time_constant
        p_l = pressure_step(state.p_l, u.p_l_des, dt, tau_p)
        p_r = pressure_step(state.p_r, u.p_r_des, dt, tau_p)

        fk_l = self.arm_fk(self.arm_l, state.q_l, h)
        fk_r = self.arm_fk(self.arm_r, state.q_r, h)

        _, a_l, rhs_l = self._arm_system(self.arm_l, fk_l, state.q_l,
                                         state.qd_l, p_l, hd, hdd, dt)
        _, a_r, rhs_r = self._arm_system(self.arm_r, fk_r, state.q_r,
                                         state.qd_r, p_r, hd, hdd, dt)

        nl, nr = self.n_l, self.n_r
        a = self._a
        rhs = self._rhs
        a[:] = 0.0
        a[:nl, :nl] = a_l
        a[nl:nl + nr, nl:nl + nr] = a_r
        rhs[:nl] = rhs_l
        rhs[nl:nl + nr] = rhs_r

        if self.box is not None:
            r_box = geometry.quat_to_rot(state.box_quat)
            i_w = r_box @ np.diag(self.box_inertia) @ r_box.T
            m_box = self.box.mass
            bo = nl + nr
            a[bo:bo + 3, bo:bo + 3] = m_box * np.eye(3)
            a[bo + 3:, bo + 3:] = i_w
            f_ext = np.array([0.0, 0.0, -m_box * self.model.gravity])
            if ext_force_box is not None:
                f_ext = f_ext + ext_force_box
            tau_gyro = -np.cross(state.box_w, i_w @ state.box_w)
            rhs[bo:bo + 3] = m_box * state.box_v + dt * f_ext
            rhs[bo + 3:] = i_w @ state.box_w + dt * tau_gyro

        n_c = self._detect_contacts(state, fk_l, fk_r, hd)
        if n_c > 0:
            K.assemble_contacts(a, rhs, dt, self._cidx, self._cgeo, n_c,
                                fk_l.ax, fk_l.apt, state.qd_l,
                                fk_r.ax, fk_r.apt, state.qd_r,
                                state.box_x, state.box_v, state.box_w,
                                nl, nr, self.model.contact.v_eps,
                                self._f_out, rhs, 0)

        try:
            cf = scipy.linalg.cho_factor(a, lower=True, check_finite=False)
            v_new = scipy.linalg.cho_solve(cf, rhs, check_finite=False)
        except (scipy.linalg.LinAlgError, ValueError) as e:
            raise IntegrationError(f"velocity solve failed: {e}", state.copy())

        new = state.copy()
        new.plan = plan
        new.p_l, new.p_r = p_l, p_r
        new.qd_l = v_new[:nl].copy()
        new.qd_r = v_new[nl:nl + nr].copy()
        new.q_l = state.q_l + dt * new.qd_l
        new.q_r = state.q_r + dt * new.qd_r
        if self.box is not None:
            bo = nl + nr
            v_box = v_new[bo:bo + 3]
            w_box = v_new[bo + 3:bo + 6]
            # trapezoidal position update is exact for constant acceleration
            new.box_x = state.box_x + 0.5 * dt * (state.box_v + v_box)
            new.box_v = v_box.copy()
            new.box_w = w_box.copy()
            new.box_quat = geometry.quat_normalize(geometry.quat_mul(
                geometry.quat_from_rotvec(dt * w_box), state.box_quat))

        contacts: list[ContactPoint] = []
        if n_c > 0:
            K.assemble_contacts(a, rhs, dt, self._cidx, self._cgeo, n_c,
                                fk_l.ax, fk_l.apt, state.qd_l,
                                fk_r.ax, fk_r.apt, state.qd_r,
                                state.box_x, state.box_v, state.box_w,
                                nl, nr, self.model.contact.v_eps,
                                self._f_out, v_new, 1)
            for i in range(n_c):
                f = self._f_out[i].copy()
                nrm = self._cgeo[i, 3:6].copy()
                fn = float(f @ nrm)
                if fn < 0.0:
                    f = f - fn * nrm  # report the clamped normal component
                contacts.append(ContactPoint(
                    position=self._cgeo[i, 0:3].copy(), normal=nrm,
                    depth=float(self._cgeo[i, 6]),
                    bodies=self._cbodies[i], force=f))

        new.t = state.t + dt
        new.h, new.hd, _ = plan.sample(new.t)
        if not new.finite():
            raise IntegrationError("non-finite state after step", state.copy())
        return new, StepInfo(fk_l=fk_l, fk_r=fk_r, contacts=contacts, hdd=hdd)

    # --- diagnostics ------------------------------------------------------------

    def tendon_path_lengths(self, arm: ArmStructure, fk: ArmFK) -> np.ndarray:
        """Total tendon path length per chamber (12), for energy oracles."""
        tau = np.zeros(arm.n_q)
        lengths = np.zeros(12)
        K.tendon_forces_arm(np.zeros(12), self.model.actuator.effective_area,
                            fk.ax, fk.apt, fk.body_r, fk.body_p, fk.base_r,
                            fk.base_p, arm.lo_body, arm.lo_z, arm.att_r,
                            arm.seg_joint, tau, lengths)
        return lengths

    def tendon_torque(self, arm: ArmStructure, fk: ArmFK,
                      pressures_kpa: np.ndarray) -> np.ndarray:
        tau = np.empty(arm.n_q)
        lengths = np.empty(12)
        K.tendon_forces_arm(np.asarray(pressures_kpa, dtype=float) * 1e3,
                            self.model.actuator.effective_area,
                            fk.ax, fk.apt, fk.body_r, fk.body_p, fk.base_r,
                            fk.base_p, arm.lo_body, arm.lo_z, arm.att_r,
                            arm.seg_joint, tau, lengths)
        return tau

    def mass_matrix(self, arm: ArmStructure, fk: ArmFK) -> np.ndarray:
        m = np.empty((arm.n_q, arm.n_q))
        K.crba_arm(fk.ax, fk.apt, fk.body_r, fk.com_w, arm.mass, arm.i_t,
                   arm.i_a, m)
        return m

    def mechanical_energy(self, state: SimState, include_box: bool = False) -> float:
        """Kinetic + spring + gravity energy (carriage assumed stationary)."""
        e = 0.0
        g = self.model.gravity
        for arm, q, qd in ((self.arm_l, state.q_l, state.qd_l),
                           (self.arm_r, state.q_r, state.qd_r)):
            fk = self.arm_fk(arm, q, state.h)
            m = self.mass_matrix(arm, fk)
            e += 0.5 * float(qd @ m @ qd)
            e += 0.5 * float(arm.k_q @ (q * q))
            e += g * float(arm.mass @ fk.com_w[:, 2])
        if include_box and self.box is not None:
            r = geometry.quat_to_rot(state.box_quat)
            i_w = r @ np.diag(self.box_inertia) @ r.T
            e += 0.5 * self.box.mass * float(state.box_v @ state.box_v)
            e += 0.5 * float(state.box_w @ i_w @ state.box_w)
            e += self.box.mass * g * state.box_x[2]
        return e
