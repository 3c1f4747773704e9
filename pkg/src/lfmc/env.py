"""Locomotion MDP: observations, per-substep rewards, termination and a
batched environment that runs the actuation tracker between policy updates.

Observation layout (blind, no history), 18 entries::

    gravity in base frame (2) | joint positions (4) | base linear velocity in
    base frame (2) | pitch rate (1) | joint velocities (4) | desired minus
    measured joint positions (4) | heading-velocity command (1)

followed by ``H`` history samples of (joint positions, joint velocities) and,
for perceptive policies, 17 terrain heights relative to the base.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from lfmc.actuation import ActuationConfig, BatchLatency, actuator_lag, pd_torque
from lfmc.randomization import DRRanges, sample_dynamics
from lfmc.robot import (ContactParams, RobotModel, RobotState, base_points, fast_step,
                        foot_positions, knee_positions, mass_matrix)
from lfmc.seeding import rng_for
from lfmc.terrain import TerrainBatch, generate_terrain

BLIND_DIM = 18
HISTORY_SAMPLE_DIM = 8

NONE, ORIENTATION, BASE_CONTACT, KNEE_CONTACT, JOINT_LIMIT, TIMEOUT, FAULT = range(7)
REASONS = ("none", "orientation", "base_contact", "knee_contact", "joint_limit", "timeout", "fault")


class ContractError(ValueError):
    pass


@dataclass
class ObservationSpec:
    mode: str = "blind"
    history: int = 0
    history_frequency: float = 200.0
    scan_span: float = 0.8
    scan_resolution: float = 0.1

    def __post_init__(self):
        if self.mode not in ("blind", "perceptive"):
            raise ContractError(f"observation mode must be blind or perceptive, not {self.mode!r}")
        if self.history < 0:
            raise ContractError("history length must be non-negative")
        if not self.history_frequency > 0:
            raise ContractError("history frequency must be positive")

    @property
    def scan_points(self):
        return int(math.ceil(2 * self.scan_span / self.scan_resolution - 1e-9)) + 1

    @property
    def scan_offsets(self):
        return -self.scan_span + self.scan_resolution * np.arange(self.scan_points)

    @property
    def dim(self):
        d = BLIND_DIM + HISTORY_SAMPLE_DIM * self.history
        if self.mode == "perceptive":
            d += self.scan_points
        return d

    def blocks(self):
        """(label, start, stop) for each observation block."""
        spans = [("gravity", 2), ("joint_pos", 4), ("base_lin_vel", 2), ("pitch_rate", 1),
                 ("joint_vel", 4), ("joint_err", 4), ("command", 1)]
        for k in range(1, self.history + 1):
            spans += [(f"hist{k}_pos", 4), (f"hist{k}_vel", 4)]
        if self.mode == "perceptive":
            spans.append(("scan", self.scan_points))
        out, start = [], 0
        for label, n in spans:
            out.append((label, start, start + n))
            start += n
        return out


class HistoryBuffer:
    """Ring of joint (position, velocity) samples, one row per environment.

    Samples are pushed every ``1/f_j`` seconds.  ``read(H)`` returns the ``H``
    samples preceding the newest one (the newest is the current state, which
    is already part of the base observation); unfilled slots read as zeros.
    """

    def __init__(self, n_envs, capacity):
        self.capacity = max(int(capacity), 1) + 1
        self.ring = np.zeros((n_envs, self.capacity, HISTORY_SAMPLE_DIM))
        self.count = np.zeros(n_envs, dtype=int)
        self.cursor = 0

    def push(self, joints, joint_velocities):
        self.cursor = (self.cursor + 1) % self.capacity
        self.ring[:, self.cursor, :4] = joints
        self.ring[:, self.cursor, 4:] = joint_velocities
        self.count = np.minimum(self.count + 1, self.capacity)

    def reset(self, rows, joints, joint_velocities):
        self.ring[rows] = 0.0
        self.ring[rows, self.cursor, :4] = joints
        self.ring[rows, self.cursor, 4:] = joint_velocities
        self.count[rows] = 1

    def read(self, H):
        if H == 0:
            return np.zeros((self.ring.shape[0], 0))
        if H >= self.capacity:
            raise ContractError(f"history buffer holds {self.capacity - 1} past samples, asked for {H}")
        k = np.arange(1, H + 1)
        out = self.ring[:, (self.cursor - k) % self.capacity, :]
        out = np.where((k[None, :] < self.count[:, None])[..., None], out, 0.0)
        return out.reshape(out.shape[0], -1)


@dataclass
class RewardConfig:
    tracking_weight: float = 1.0
    tracking_sharpness: float = 4.0
    pitch_rate_weight: float = 0.01
    torque_weight: float = 2e-4
    smoothness_weight: float = 0.02
    smoothness_reference_frequency: float = 10.0
    nominal_weight: float = 0.05
    base_height_weight: float = 0.0
    base_height_target: float = 0.46
    termination_reward: float = -10.0
    smoothness_overrides: dict = field(default_factory=dict)
    nominal_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.tracking_weight > 0:
            raise ContractError("tracking weight must be positive")
        for name in ("pitch_rate_weight", "torque_weight", "smoothness_weight", "nominal_weight",
                     "base_height_weight", "tracking_sharpness"):
            if getattr(self, name) < 0:
                raise ContractError(f"{name} must be non-negative")

    def smoothness_for(self, frequency):
        if frequency is None:
            return self.smoothness_weight
        if frequency in self.smoothness_overrides:
            return self.smoothness_overrides[frequency]
        return self.smoothness_weight * frequency / self.smoothness_reference_frequency

    def nominal_for(self, frequency):
        if frequency is not None and frequency in self.nominal_overrides:
            return self.nominal_overrides[frequency]
        return self.nominal_weight


def reward_terms(cfg, state, torques, action, prev_action, command, t_s, nominal=None, frequency=None):
    """Per-term rewards for one simulation substep, each already scaled by ``t_s``."""
    q = np.asarray(state.q)
    v = np.asarray(state.v)
    err = v[..., 0] - command
    terms = {
        "tracking": cfg.tracking_weight * np.exp(-cfg.tracking_sharpness * err * err),
        "pitch_rate": -cfg.pitch_rate_weight * v[..., 2] ** 2,
        "torque": -cfg.torque_weight * np.sum(np.square(torques), axis=-1),
        "smoothness": -cfg.smoothness_for(frequency) * np.sum(np.square(np.subtract(action, prev_action)), axis=-1),
    }
    if nominal is not None:
        terms["nominal"] = -cfg.nominal_for(frequency) * np.sum(np.square(q[..., 3:] - nominal), axis=-1)
    if cfg.base_height_weight:
        terms["base_height"] = -cfg.base_height_weight * (q[..., 1] - cfg.base_height_target) ** 2
    return {k: t_s * val for k, val in terms.items()}


def reward_step(cfg, state, torques, action, prev_action, command, t_s, nominal=None, frequency=None):
    """Scalar (or per-env) reward of one simulation substep."""
    return sum(reward_terms(cfg, state, torques, action, prev_action, command, t_s, nominal, frequency).values())


def episode_reward(cfg, substeps, control_frequency, t_s, nominal=None):
    """Score a recorded substep trajectory under ``control_frequency`` bookkeeping.

    ``substeps`` is a sequence of ``(state, torques, action, prev_action,
    command)`` tuples, one per simulation step.  Rewards are summed per control
    step (``1 / (control_frequency * t_s)`` substeps each) and then over the
    episode.  Returns ``(total, per_control_step)``.
    """
    n_sub = int(round(1.0 / (control_frequency * t_s)))
    per_step = []
    for start in range(0, len(substeps), n_sub):
        acc = 0.0
        for rec in substeps[start:start + n_sub]:
            acc += reward_step(cfg, *rec, t_s, nominal=nominal)
        per_step.append(acc)
    return float(np.sum(per_step)), np.array(per_step)


@dataclass
class TerminationConfig:
    max_tilt: float = 0.4 * math.pi
    base_clearance: float = 0.08
    check_joint_limits: bool = True


def terminate_codes(state, model, terrain, cfg=None):
    """Vectorized termination check; returns reason codes (0 = still valid)."""
    cfg = cfg or TerminationConfig()
    q = np.atleast_2d(state.q)
    codes = np.zeros(q.shape[0], dtype=int)
    heights = _heights_fn(terrain)
    if cfg.check_joint_limits:
        j = q[:, 3:]
        bad = np.any((j < np.asarray(model.joint_lower)) | (j > np.asarray(model.joint_upper)), axis=1)
        codes[bad] = JOINT_LIMIT
    knees = knee_positions(model, q)
    knee_hit = np.any(knees[..., 1] - heights(knees[..., 0]) <= model.foot_radius, axis=1)
    codes[knee_hit] = KNEE_CONTACT
    pts = base_points(model, q)
    base_hit = np.any(pts[..., 1] - heights(pts[..., 0]) < cfg.base_clearance, axis=1)
    codes[base_hit] = BASE_CONTACT
    codes[np.abs(q[:, 2]) > cfg.max_tilt] = ORIENTATION
    return codes


def terminate(state, model, terrain, cfg=None):
    """``(done, reason)`` for a single state."""
    code = int(terminate_codes(state, model, terrain, cfg)[0])
    return code != NONE, REASONS[code]


def _heights_fn(terrain):
    if terrain is None or getattr(terrain, "flat", False):
        return np.zeros_like
    if isinstance(terrain, TerrainBatch):
        return terrain.height
    return lambda x: np.interp(x, terrain.xs, terrain.heights)


def sample_command(rng, command_range, size=None):
    lo, hi = command_range
    if lo > hi:
        raise ContractError("command range lower bound above upper bound")
    if lo == hi:
        return float(lo) if size is None else np.full(size, float(lo))
    return rng.uniform(lo, hi, size=size)


def terrain_scan(state, terrain, spec):
    """Terrain heights minus base height at ``spec.scan_offsets`` ahead of the base."""
    q = np.atleast_2d(state.q)
    xs = q[:, :1] + spec.scan_offsets[None, :]
    heights = _heights_fn(terrain)
    if isinstance(terrain, TerrainBatch):
        h = terrain.height(xs)
    else:
        h = heights(xs)
    out = h - q[:, 1:2]
    return out[0] if np.ndim(state.q) == 1 else out


def observe(spec, state, history, command, desired, terrain=None):
    """Assemble observation vectors for a batch of states."""
    q = np.atleast_2d(state.q)
    v = np.atleast_2d(state.v)
    desired = np.atleast_2d(desired)
    B = q.shape[0]
    c, s = np.cos(q[:, 2]), np.sin(q[:, 2])
    parts = [
        np.stack([-s, -c], axis=1),
        q[:, 3:],
        np.stack([c * v[:, 0] + s * v[:, 1], -s * v[:, 0] + c * v[:, 1]], axis=1),
        v[:, 2:3],
        v[:, 3:],
        desired - q[:, 3:],
        np.broadcast_to(np.asarray(command, float).reshape(-1, 1), (B, 1)),
    ]
    if spec.history:
        if history is None:
            raise ContractError("observation spec asks for history but no buffer given")
        parts.append(history.read(spec.history))
    if spec.mode == "perceptive":
        parts.append(np.atleast_2d(terrain_scan(RobotState(q, v), terrain, spec)))
    obs = np.concatenate(parts, axis=1)
    if obs.shape[1] != spec.dim:
        raise ContractError(f"observation has {obs.shape[1]} entries, spec says {spec.dim}")
    return obs[0] if np.ndim(state.q) == 1 else obs


@dataclass
class EnvConfig:
    control_frequency: float = 10.0
    sim_dt: float = 0.0025
    episode_length: float = 1.0
    terrain: str = "flat"
    terrain_params: dict = field(default_factory=dict)
    command_range: tuple = (-1.0, 1.5)
    command_resample_interval: float = 0.0
    init_joint_noise: float = 0.1
    init_height_range: float = 0.05
    observation: ObservationSpec = field(default_factory=ObservationSpec)
    reward: RewardConfig = field(default_factory=RewardConfig)
    actuation: ActuationConfig = field(default_factory=ActuationConfig)
    model: RobotModel = field(default_factory=RobotModel)
    contact: ContactParams = field(default_factory=ContactParams)
    termination: TerminationConfig = field(default_factory=TerminationConfig)
    randomization: DRRanges | None = None

    @property
    def substeps(self):
        if abs(self.actuation.frequency * self.sim_dt - 1.0) > 1e-9:
            raise ContractError("actuation steps and simulation steps must coincide (f_a = 1/t_s)")
        return self.actuation.check_motion_frequency(self.control_frequency)

    @property
    def history_stride(self):
        ratio = self.actuation.frequency / self.observation.history_frequency
        if abs(ratio - round(ratio)) > 1e-9 or ratio < 1:
            raise ContractError("history frequency must divide the actuation frequency")
        stride = int(round(ratio))
        if self.substeps % stride:
            raise ContractError("history samples must land on control-step boundaries (f_j multiple of f_m)")
        return stride

    @property
    def episode_steps(self):
        return int(round(self.episode_length * self.control_frequency))


class LocomotionEnv:
    """``n_envs`` independent copies of the locomotion MDP advanced in lockstep.

    Every per-episode random draw (initial pose, command, terrain, dynamics)
    comes from the stream ``(seed, tag, episode_id)``, so an episode is
    reproducible regardless of which batch or worker runs it.
    """

    def __init__(self, config, n_envs, seed=0, auto_reset=True, record_substeps=False, id_stride=None):
        self.cfg = config
        self.n = int(n_envs)
        # auto-reset moves an env from episode id e to e + id_stride
        self.id_stride = self.n if id_stride is None else int(id_stride)
        self.seed = int(seed)
        self.auto_reset = auto_reset
        self.record_substeps = record_substeps
        self.n_sub = config.substeps
        self.stride = config.history_stride
        self.dt = config.sim_dt
        self.model = config.model
        self.nominal = np.asarray(config.model.nominal_joints, float)
        self.spec = config.observation
        dr = config.randomization
        max_latency = config.actuation.latency if dr is None else max(dr.latency[1], config.actuation.latency)
        self.max_delay = int(np.rint(np.max(max_latency) * config.actuation.frequency))
        self.q = np.zeros((self.n, 7))
        self.v = np.zeros((self.n, 7))
        self.t = np.zeros(self.n)
        self.command = np.zeros(self.n)
        self.desired = np.repeat(self.nominal[None], self.n, axis=0)
        self.prev_desired = self.desired.copy()
        self.tau_state = np.zeros((self.n, 4))
        self.mass_scale = np.ones(self.n)
        self.friction = np.full(self.n, float(config.contact.friction))
        self.kp = np.full(self.n, float(config.actuation.kp))
        self.kd = np.full(self.n, float(config.actuation.kd))
        self.lag = np.full(self.n, float(config.actuation.lag))
        self.latency = BatchLatency(self.desired, int(np.rint(config.actuation.latency * config.actuation.frequency)),
                                    max_delay=self.max_delay)
        self.history = HistoryBuffer(self.n, max(self.spec.history, 1))
        self.episode_id = np.zeros(self.n, dtype=np.int64)
        self.done = np.zeros(self.n, dtype=bool)
        self.reason = np.zeros(self.n, dtype=int)
        self.terrain = None
        self.impulses = []          # (time, delta_vx) base velocity kicks, applied once
        self._impulse_applied = np.zeros((0, self.n), dtype=bool)
        self._terrain_cache = {}

    # -- episode setup -------------------------------------------------
    def _terrain_for(self, episode_id):
        kind = self.cfg.terrain
        if kind == "flat":
            key = ("flat",)
            seed = 0
        else:
            seed = int(rng_for(self.seed, "terrain-seed", int(episode_id)).integers(2**31))
            key = (kind, seed)
        if key not in self._terrain_cache:
            if len(self._terrain_cache) > 4 * self.n + 16:
                self._terrain_cache.clear()
            self._terrain_cache[key] = generate_terrain(kind, seed, self.cfg.terrain_params)
        return self._terrain_cache[key]

    def reset(self, episode_ids=None, rows=None, commands=None):
        """Start new episodes in ``rows`` (default all) with the given episode ids."""
        rows = np.arange(self.n) if rows is None else np.asarray(rows)
        if episode_ids is None:
            episode_ids = self.episode_id[rows] + self.id_stride
        episode_ids = np.broadcast_to(np.asarray(episode_ids, dtype=np.int64), rows.shape)
        cfg = self.cfg
        terrains = None if cfg.terrain == "flat" else (
            list(self.terrain.terrains) if self.terrain is not None else [None] * self.n)
        for r, eid in zip(rows, episode_ids):
            rng = rng_for(self.seed, "episode", int(eid))
            joints = self.nominal + rng.uniform(-cfg.init_joint_noise, cfg.init_joint_noise, 4)
            if commands is None:
                self.command[r] = sample_command(rng, cfg.command_range)
            lift = rng.uniform(0.0, cfg.init_height_range) if cfg.init_height_range > 0 else 0.0
            if cfg.randomization is not None:
                p = sample_dynamics(rng_for(self.seed, "dynamics", int(eid)), 1, cfg.randomization)
                self.mass_scale[r] = p["mass_scale"][0]
                self.friction[r] = p["friction"][0]
                self.kp[r] = cfg.actuation.kp * p["gain_scale"][0]
                self.kd[r] = cfg.actuation.kd * p["gain_scale"][0]
                self.lag[r] = p["lag"][0]
                self.latency.reset(r, joints, int(np.rint(p["latency"][0] * cfg.actuation.frequency)))
            if terrains is not None:
                terrains[r] = self._terrain_for(eid)
            q = np.zeros(7)
            q[3:] = joints
            feet = foot_positions(self.model, q)
            ground = 0.0 if terrains is None else np.interp(feet[:, 0], terrains[r].xs, terrains[r].heights)
            q[1] = np.max(ground + self.model.foot_radius - feet[:, 1]) + lift
            self.q[r] = q
        if commands is not None:
            self.command[rows] = commands
        self.v[rows] = 0.0
        self.t[rows] = 0.0
        self.desired[rows] = self.q[rows, 3:]
        self.prev_desired[rows] = self.q[rows, 3:]
        self.tau_state[rows] = 0.0
        if cfg.randomization is None:
            self.latency.reset(rows, self.q[rows, 3:])
        self.history.reset(rows, self.q[rows, 3:], self.v[rows, 3:])
        self.episode_id[rows] = episode_ids
        self.done[rows] = False
        self.reason[rows] = NONE
        if terrains is not None:
            self.terrain = TerrainBatch(terrains)
        if self.impulses:
            self._impulse_applied[:, rows] = False
        return self.observe()

    def set_impulses(self, impulses):
        """Base velocity kicks ``[(time_s, impulse_Ns), ...]`` applied during each episode."""
        self.impulses = list(impulses)
        self._impulse_applied = np.zeros((len(self.impulses), self.n), dtype=bool)

    def observe(self):
        return observe(self.spec, RobotState(self.q, self.v), self.history, self.command, self.desired,
                       self.terrain)

    @property
    def state(self):
        return RobotState(self.q.copy(), self.v.copy(), 0.0)

    # -- stepping ------------------------------------------------------
    def step(self, actions):
        """Apply desired joint positions for one control period.

        Returns ``(obs, reward, done, info)``.  ``info`` holds the termination
        ``reason`` codes, ``truncated`` (time-limit) flags, the tracking part
        of the reward, and, with auto-reset, ``terminal_obs`` for envs that
        finished.
        """
        cfg = self.cfg
        actions = np.array(actions, dtype=float)
        bad = ~np.all(np.isfinite(actions), axis=1)
        if np.any(bad):
            actions[bad] = self.desired[bad]
        self.prev_desired = self.desired
        self.desired = actions
        live = ~self.done
        live &= ~bad
        reward = np.zeros(self.n)
        tracking = np.zeros(self.n)
        reason = np.where(bad, FAULT, NONE)
        act = ActuationConfig(kp=self.kp, kd=self.kd, torque_limit=self.model.torque_limit,
                              frequency=cfg.actuation.frequency)
        use_lag = np.any(self.lag > 0)
        frozen = self.done.copy()
        freq = cfg.control_frequency
        records = [] if self.record_substeps else None
        heights = _heights_fn(self.terrain)
        rcfg = cfg.reward
        for k in range(self.n_sub):
            applied = self.latency(self.desired)
            tau = pd_torque(act, applied, self.q[:, 3:], self.v[:, 3:])
            if use_lag:
                tau = actuator_lag(tau, self.tau_state, self.dt, self.lag)
                self.tau_state = tau
            q_new, v_new, fn, _ = fast_step(self.model, self.q, self.v, tau, self.terrain, self.dt,
                                            cfg.contact, self.mass_scale, self.friction)
            if np.any(frozen):
                q_new[frozen] = self.q[frozen]
                v_new[frozen] = self.v[frozen]
            self.q, self.v = q_new, v_new
            self.t += self.dt
            for i, (t_imp, impulse) in enumerate(self.impulses):
                hit = (~self._impulse_applied[i]) & (self.t >= t_imp - 1e-9) & ~frozen
                if np.any(hit):
                    M = mass_matrix(self.model, self.q[hit]) * self.mass_scale[hit, None, None]
                    kick = np.zeros((int(hit.sum()), 7))
                    kick[:, 0] = impulse
                    self.v[hit] += np.linalg.solve(M, kick[:, :, None])[:, :, 0]
                    self._impulse_applied[i, hit] = True
            terms = reward_terms(rcfg, RobotState(self.q, self.v), tau, self.desired, self.prev_desired,
                                 self.command, self.dt, self.nominal, freq)
            r = sum(terms.values())
            reward += r * live
            tracking += terms["tracking"] * live
            codes = terminate_codes(RobotState(self.q, self.v), self.model, self.terrain, cfg.termination)
            newly = live & (codes != NONE)
            if np.any(newly):
                reason[newly] = codes[newly]
                live &= ~newly
                if not self.auto_reset:
                    frozen |= newly
            if (k + 1) % self.stride == 0:
                self.history.push(self.q[:, 3:], self.v[:, 3:])
            if records is not None:
                feet = foot_positions(self.model, self.q)
                records.append({
                    "q": self.q.copy(), "v": self.v.copy(), "tau": tau.copy(),
                    "desired": self.desired.copy(), "reward": r * live,
                    "contacts": feet[..., 1] - heights(feet[..., 0]) <= self.model.foot_radius,
                    "normal_force": fn.copy(), "live": live.copy(),
                })
        failed = reason != NONE
        reward[failed] += rcfg.termination_reward
        if cfg.command_resample_interval > 0:
            period = int(round(cfg.command_resample_interval / self.dt))
            steps_now = np.rint(self.t / self.dt).astype(int)
            redraw = (~failed) & (steps_now % period < self.n_sub) & (steps_now >= period)
            for r in np.flatnonzero(redraw):
                rng = rng_for(self.seed, "command", int(self.episode_id[r]), int(steps_now[r]))
                self.command[r] = sample_command(rng, cfg.command_range)
        truncated = (~failed) & ~self.done & (self.t >= cfg.episode_length - 1e-9)
        reason[truncated] = TIMEOUT
        finished = failed | truncated
        newly_done = finished & ~self.done
        self.reason = np.where(newly_done, reason, self.reason)
        self.done |= finished
        info = {"reason": reason, "truncated": truncated, "tracking": tracking, "failed": failed}
        if records is not None:
            info["substeps"] = records
        obs = self.observe()
        if self.auto_reset and np.any(finished):
            info["terminal_obs"] = obs[finished].copy()
            rows = np.flatnonzero(finished)
            obs_new = self.reset(self.episode_id[rows] + self.id_stride, rows=rows)
            obs = obs_new
        return obs, reward, finished, info


def env_step(env, action):
    """Functional alias for :meth:`LocomotionEnv.step`."""
    return env.step(action)
