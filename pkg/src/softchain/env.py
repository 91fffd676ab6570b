"""Whole-body grasping environment.

An episode asks the robot to lift a box 0.5 m off the floor using both
arms and the elevator.  The policy runs at 20 Hz over a 5 ms simulation
(10 substeps per action) for at most 1200 steps (60 s).  Outcomes:

* ``LIFT``  - box raised 0.5 m above its start height (success, +10)
* ``TIP``   - box tilted more than 80 degrees from vertical (-2)
* ``SLIP``  - neither happened before the step limit (truncation)

Observations follow the fixed 93-entry measurement layout; actions are 13
normalized values (elevator setpoint + 6 differential pressures per arm)
mapped onto 24 antagonistic chamber commands centered at 150 kPa.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import dynamics, elevator, geometry
from .model import BoxSpec, PRESSURE_MAX_KPA, RobotModel


def elevator_hold_plan(h: float, model: RobotModel):
    return elevator.plan_move(h, 0.0, h, model.elevator, t0=0.0)

OBS_DIM = 93
ACT_DIM = 13
POLICY_RATE_HZ = 20.0
MAX_STEPS = 1200
SUBSTEPS = 10
TILT_LIMIT_RAD = math.radians(80.0)
LIFT_HEIGHT_M = 0.5
APPROACH_TOL_M = 0.02   # band for the "h approximately reached" transition
SETTLE_SUBSTEPS = 40

# box-parameter ranges used to generate training/evaluation objects
BOX_RANGES = {
    "mass": (0.5, 10.0),
    "width": (0.2, 0.6),
    "depth": (0.2, 0.6),
    "height": (0.5, 1.25),
}
PLACEMENT_DX_M = 0.1
PLACEMENT_YAW_RAD = math.radians(60.0)


class Outcome(enum.Enum):
    LIFT = "lift"
    TIP = "tip"
    SLIP = "slip"
    ERROR = "error"


# --- observation layout -------------------------------------------------------

def _observation_bounds() -> tuple[np.ndarray, np.ndarray]:
    lo: list[float] = []
    hi: list[float] = []

    def add(lo_v, hi_v, dim):
        if np.isscalar(lo_v):
            lo_v = [lo_v] * dim
            hi_v = [hi_v] * dim
        lo.extend(lo_v)
        hi.extend(hi_v)

    add([0.2, 0.2, 0.5], [0.6, 0.6, 1.25], 3)      # box size
    add([-3.0, -3.0, 0.0], [3.0, 3.0, 2.0], 3)     # box position
    add(-1.0, 1.0, 4)                              # box quaternion
    add(-2.0, 2.0, 3)                              # box linear velocity
    add(-math.pi, math.pi, 3)                      # box angular velocity
    add(-1.25, 1.25, 3)                            # chest-to-box offset
    add(-1.5, 0.0, 1)                              # elevator height
    add(-1.0, 1.0, 1)                              # elevator velocity
    add(-math.pi, math.pi, 6)                      # left joint angles
    add(-math.pi, math.pi, 6)                      # right joint angles
    add(-2 * math.pi, 2 * math.pi, 6)              # left joint velocities
    add(-2 * math.pi, 2 * math.pi, 6)              # right joint velocities
    add(0.0, PRESSURE_MAX_KPA, 12)                 # left pressures
    add(0.0, PRESSURE_MAX_KPA, 12)                 # right pressures
    add(0.0, PRESSURE_MAX_KPA, 12)                 # left filtered commands
    add(0.0, PRESSURE_MAX_KPA, 12)                 # right filtered commands
    return np.array(lo), np.array(hi)


OBS_LO, OBS_HI = _observation_bounds()
assert OBS_LO.shape == (OBS_DIM,)


def normalize_obs(raw: np.ndarray) -> np.ndarray:
    scaled = 2.0 * (raw - OBS_LO) / (OBS_HI - OBS_LO) - 1.0
    return np.clip(scaled, -1.0, 1.0)


def unnormalize_obs(norm: np.ndarray) -> np.ndarray:
    return OBS_LO + 0.5 * (np.asarray(norm) + 1.0) * (OBS_HI - OBS_LO)


@dataclass(frozen=True)
class Observation:
    raw: np.ndarray
    normalized: np.ndarray


# --- actions -------------------------------------------------------------------

H_LO, H_HI = -1.5, 0.0
DP_MAX = 150.0


def unnormalize_action(a_norm: np.ndarray) -> np.ndarray:
    """[-1,1]^13 -> physical [h_des, dp_l(6), dp_r(6)]."""
    a = np.clip(np.asarray(a_norm, dtype=float), -1.0, 1.0)
    out = np.empty(13)
    out[0] = H_LO + 0.5 * (a[0] + 1.0) * (H_HI - H_LO)
    out[1:] = a[1:] * DP_MAX
    return out


def normalize_action(a_phys: np.ndarray) -> np.ndarray:
    a = np.asarray(a_phys, dtype=float)
    out = np.empty(13)
    out[0] = 2.0 * (a[0] - H_LO) / (H_HI - H_LO) - 1.0
    out[1:] = a[1:] / DP_MAX
    return np.clip(out, -1.0, 1.0)


def antagonistic_pressures(dp: np.ndarray) -> np.ndarray:
    """6 differential pressures -> 12 chamber commands (I6 (x) [1,-1] map).

    Each pair straddles the 150 kPa midpoint: (150 + dp, 150 - dp).
    """
    dp = np.asarray(dp, dtype=float)
    out = np.empty(12)
    out[0::2] = 150.0 + dp
    out[1::2] = 150.0 - dp
    return out


class ActionFilter:
    """First-order low-pass on normalized actions (the command memory)."""

    def __init__(self, alpha: float, initial: np.ndarray):
        self.alpha = float(alpha)
        self.state = np.asarray(initial, dtype=float).copy()

    def apply(self, a_norm: np.ndarray) -> np.ndarray:
        a = np.clip(np.asarray(a_norm, dtype=float), -1.0, 1.0)
        self.state = self.alpha * a + (1.0 - self.alpha) * self.state
        return self.state.copy()


HOME_ACTION_NORM = np.concatenate(([1.0], np.zeros(12)))  # h=0, all dp=0


def map_action(a_norm: np.ndarray, filt: ActionFilter) -> tuple[dynamics.CommandVector, np.ndarray]:
    """Filter, unnormalize, and expand a policy action into a command.

    Returns the command and the filtered physical action (h_des, dp x12).
    """
    a = np.asarray(a_norm, dtype=float)
    if a.shape != (ACT_DIM,):
        raise ValueError(f"action must have length {ACT_DIM}, got {a.shape}")
    a_f = filt.apply(a)
    phys = unnormalize_action(a_f)
    cmd = dynamics.CommandVector(
        h_des=float(phys[0]),
        p_l_des=antagonistic_pressures(phys[1:7]),
        p_r_des=antagonistic_pressures(phys[7:13]))
    return cmd, phys


# --- rewards --------------------------------------------------------------------

def task_reward(tipped: bool, lifted: bool) -> float:
    if tipped:
        return -2.0
    if lifted:
        return 10.0
    return 0.0


def guided_reward(a_norm: np.ndarray, a_star_norm: np.ndarray,
                  tipped: bool = False, lifted: bool = False) -> float:
    """Sparse task term plus similarity to the primitive's action."""
    d = np.asarray(a_norm) - np.asarray(a_star_norm)
    r_guide = 0.1 * math.exp(-0.5 * float(d @ d))
    return task_reward(tipped, lifted) + r_guide


def shaped_reward(chest_to_box: np.ndarray, n_contacts: int,
                  box_z: float, box_z0: float,
                  tipped: bool = False, lifted: bool = False) -> float:
    """Approach/grasp/height shaping baseline."""
    p = np.asarray(chest_to_box)
    r_approach = 0.1 * math.exp(-4.0 * float(p @ p))
    r_grasp = 0.1 * n_contacts if abs(p[2]) < 0.35 else 0.0
    r_height = max(0.0, box_z - box_z0)
    return task_reward(tipped, lifted) + r_approach + r_grasp + r_height


# --- motion primitive -------------------------------------------------------------

class Phase(enum.Enum):
    APPROACH = 0
    GRASP = 1
    LIFT = 2


class MotionPrimitive:
    """Waypoint-based grasping primitive (APPROACH -> GRASP -> LIFT).

    The approach pressures ramp in over N steps while the elevator drops
    to the approach height; once the height is reached the grasp pressures
    blend in over N more steps, then the elevator returns to the top.
    Emits the same normalized action vector the policy would produce.
    """

    N = 50

    def __init__(self, model: RobotModel):
        p = model.primitive
        self.dp_approach = np.concatenate([p.dp_approach_left, p.dp_approach_right])
        self.dp_grasp = np.concatenate([p.dp_grasp_left, p.dp_grasp_right])
        self.approach_height = p.approach_height
        self.reset()

    def reset(self):
        self.phase = Phase.APPROACH
        self.n = 0
        self._h_des = 0.0
        self._dp = np.zeros(12)

    def action(self, h: float) -> np.ndarray:
        """Advance one policy step given the current elevator height."""
        if self.phase is Phase.APPROACH:
            if self.n < self.N:
                self._h_des = self.approach_height
                self._dp = (self.n / self.N) * self.dp_approach
                self.n += 1
            elif abs(h - self.approach_height) < APPROACH_TOL_M:
                self.n = 0
                self.phase = Phase.GRASP
        elif self.phase is Phase.GRASP:
            f = self.n / self.N
            self._dp = (1.0 - f) * self.dp_approach + f * self.dp_grasp
            self.n += 1
            if self.n == self.N:
                self.phase = Phase.LIFT
        else:
            self._h_des = 0.0
        phys = np.concatenate(([self._h_des], self._dp))
        return normalize_action(phys)


# --- box sampling ------------------------------------------------------------------

def sample_boxes(count: int, seed: int) -> list[BoxSpec]:
    """Latin hypercube sample of box mass/width/depth/height.

    Each of the four dimensions is split into ``count`` strata containing
    exactly one sample; deterministic for a given seed.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    cols = {}
    for name, (lo, hi) in BOX_RANGES.items():
        strata = rng.permutation(count)
        u = rng.uniform(0.0, 1.0, count)
        cols[name] = lo + (strata + u) / count * (hi - lo)
    return [BoxSpec(size=(cols["width"][i], cols["depth"][i], cols["height"][i]),
                    mass=float(cols["mass"][i]))
            for i in range(count)]


# --- perturbation -------------------------------------------------------------------

@dataclass(frozen=True)
class PerturbationSchedule:
    """Square-wave downward force at the box centroid: 1 s on, 1 s off."""

    onset_time: float = 10.0
    force: float = 100.0      # N, applied along -z
    period_on: float = 1.0
    period_off: float = 1.0

    def force_at(self, t: float) -> np.ndarray:
        if t < self.onset_time:
            return np.zeros(3)
        cycle = (t - self.onset_time) % (self.period_on + self.period_off)
        if cycle < self.period_on:
            return np.array([0.0, 0.0, -self.force])
        return np.zeros(3)


# --- episode configuration -----------------------------------------------------------

@dataclass(frozen=True)
class EpisodeConfig:
    box: BoxSpec = field(default_factory=BoxSpec)
    max_steps: int = MAX_STEPS
    policy_rate: float = POLICY_RATE_HZ
    substeps: int = SUBSTEPS
    dt: float = 0.005
    perturbation: PerturbationSchedule | None = None

    def __post_init__(self):
        if abs(self.substeps * self.dt - 1.0 / self.policy_rate) > 1e-12:
            raise ValueError("substeps * dt must equal the policy period")

    @property
    def horizon_s(self) -> float:
        return self.max_steps / self.policy_rate


class EnvError(RuntimeError):
    pass


class GraspEnv:
    """Step/reset environment around the dynamics engine.

    One instance per thread.  ``reward`` selects the guided or shaped
    scheme; info always carries the primitive's reference action so either
    reward can be recomputed offline.
    """

    observation_dim = OBS_DIM
    action_dim = ACT_DIM

    def __init__(self, model: RobotModel, reward: str = "guided",
                 config: EpisodeConfig | None = None):
        if reward not in ("guided", "shaped"):
            raise ValueError("reward must be 'guided' or 'shaped'")
        self.model = model
        self.reward_kind = reward
        self.config = config or EpisodeConfig()
        self.engine: dynamics.Engine | None = None
        self._state: dynamics.SimState | None = None
        self.primitive = MotionPrimitive(model)
        self._filter: ActionFilter | None = None
        self._step_count = 0
        self._box_z0 = 0.0
        self._cc_prev: np.ndarray | None = None
        self._done = False

    # -- helpers --

    def _chest_center(self, h: float) -> np.ndarray:
        c, _ = self.engine.chest_box(h)
        return c

    def _cc_vector(self, fk_l, fk_r) -> np.ndarray:
        qs = []
        for arm, fk in ((self.engine.arm_l, fk_l), (self.engine.arm_r, fk_r)):
            for q2, _tw in self.engine.cc_estimates(arm, fk):
                qs.append(q2)
        return np.concatenate(qs)  # left joints 1-3 then right joints 1-3

    def _observe(self, fk_l, fk_r, cc_now: np.ndarray, cc_rate: np.ndarray,
                 cmd_phys: np.ndarray) -> Observation:
        st = self._state
        chest = self._chest_center(st.h)
        p_cmd_l = antagonistic_pressures(cmd_phys[1:7])
        p_cmd_r = antagonistic_pressures(cmd_phys[7:13])
        raw = np.concatenate([
            np.array(self.config.box.size),
            st.box_x,
            st.box_quat,
            st.box_v,
            st.box_w,
            chest - st.box_x,
            [st.h, st.hd],
            cc_now[:6], cc_now[6:],
            cc_rate[:6], cc_rate[6:],
            st.p_l, st.p_r,
            p_cmd_l, p_cmd_r,
        ])
        return Observation(raw=raw, normalized=normalize_obs(raw))

    # -- API --

    def reset(self, seed: int) -> Observation:
        rng = np.random.default_rng(seed)
        box = self.config.box
        self.engine = dynamics.Engine(self.model, box=box)
        home_cmd, home_phys = map_action(
            HOME_ACTION_NORM,
            ActionFilter(1.0, HOME_ACTION_NORM))
        state = info = None
        for attempt in range(20):
            dx = rng.uniform(-PLACEMENT_DX_M, PLACEMENT_DX_M)
            yaw = rng.uniform(-PLACEMENT_YAW_RAD, PLACEMENT_YAW_RAD)
            start = np.array([self.model.box_start_x + dx, 0.0,
                              box.size[2] / 2.0])
            state = self.engine.initial_state(box_x=start, box_yaw=yaw)
            state, info = self.engine.step(state, home_cmd, self.config.dt)
            touching = any("box" in c.bodies
                           and any(b.startswith(("left", "right"))
                                   for b in c.bodies)
                           for c in info.contacts)
            if not touching:
                break
        else:
            raise EnvError("box placement keeps intersecting the robot")
        for _ in range(SETTLE_SUBSTEPS - 1):
            state, info = self.engine.step(state, home_cmd, self.config.dt)
        state.t = 0.0
        state.plan = elevator_hold_plan(state.h, self.model)
        self._state = state
        self._filter = ActionFilter(self.model.action_filter_alpha,
                                    HOME_ACTION_NORM)
        self.primitive.reset()
        self._step_count = 0
        self._box_z0 = float(state.box_x[2])
        self._done = False
        fk_l, fk_r = info.fk_l, info.fk_r
        cc = self._cc_vector(fk_l, fk_r)
        self._cc_prev = cc
        return self._observe(fk_l, fk_r, cc, np.zeros(12), home_phys)

    def primitive_action(self) -> np.ndarray:
        """Reference action for the CURRENT step (advances the primitive)."""
        return self.primitive.action(self._state.h)

    def step(self, a_norm: np.ndarray):
        """Apply one policy action; returns (obs, reward, terminated, truncated, info)."""
        if self._state is None:
            raise EnvError("step called before reset")
        if self._done:
            raise EnvError("episode finished; call reset")
        a_norm = np.asarray(a_norm, dtype=float)
        a_star = self.primitive_action()
        cmd, cmd_phys = map_action(a_norm, self._filter)
        st = self._state
        sched = self.config.perturbation
        info_k = None
        cc_prev_sub = None
        try:
            for k in range(self.config.substeps):
                ext = sched.force_at(st.t) if sched is not None else None
                if k == self.config.substeps - 1:
                    cc_prev_sub = self._cc_vector(info_k.fk_l, info_k.fk_r) \
                        if info_k is not None else self._cc_prev
                st, info_k = self.engine.step(st, cmd, self.config.dt,
                                              ext_force_box=ext)
        except dynamics.IntegrationError as e:
            self._done = True
            raise EnvError(f"simulation diverged at t={st.t:.3f}: {e}") from e
        self._state = st
        self._step_count += 1

        cc_now = self._cc_vector(info_k.fk_l, info_k.fk_r)
        cc_rate = (cc_now - cc_prev_sub) / self.config.dt
        self._cc_prev = cc_now

        r_box = geometry.quat_to_rot(st.box_quat)
        tilt = math.acos(min(1.0, max(-1.0, r_box[2, 2])))
        lifted = st.box_x[2] - self._box_z0 >= LIFT_HEIGHT_M
        tipped = tilt > TILT_LIMIT_RAD and not lifted
        terminated = tipped or lifted
        truncated = (not terminated) and self._step_count >= self.config.max_steps

        n_contacts = sum(1 for c in info_k.contacts if "box" in c.bodies
                         and any(b.startswith(("left", "right"))
                                 for b in c.bodies))
        chest = self._chest_center(st.h)
        if self.reward_kind == "guided":
            reward = guided_reward(a_norm, a_star, tipped, lifted)
        else:
            reward = shaped_reward(chest - st.box_x, n_contacts,
                                   float(st.box_x[2]), self._box_z0,
                                   tipped, lifted)
        outcome = None
        if lifted:
            outcome = Outcome.LIFT
        elif tipped:
            outcome = Outcome.TIP
        elif truncated:
            outcome = Outcome.SLIP
        self._done = terminated or truncated
        obs = self._observe(info_k.fk_l, info_k.fk_r, cc_now, cc_rate, cmd_phys)
        info = {
            "primitive_action": a_star,
            "n_contacts": n_contacts,
            "contacts": info_k.contacts,
            "outcome": outcome,
            "step": self._step_count,
            "tilt": tilt,
            "box_height_gain": float(st.box_x[2] - self._box_z0),
            "primitive_phase": self.primitive.phase.name,
            "sim_time": st.t,
        }
        return obs, reward, terminated, truncated, info
