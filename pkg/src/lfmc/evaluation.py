"""Evaluation battery for trained policies.

Every analysis runs deterministic (mean-action) rollouts whose initial states,
commands and dynamics depend only on the given seed and rollout index, so
two policies evaluated with the same seed face identical conditions.
"""

import csv
import os
from dataclasses import dataclass, field, replace

import numpy as np

from lfmc.env import FAULT, NONE, TIMEOUT, LocomotionEnv, RobotState
from lfmc.randomization import DRRanges

TERRAIN_ALIASES = {"rough": "perlin"}


def success_rate_from_counts(n_failed, n_total):
    """``1 - N_e / N_T``."""
    if n_total < 1:
        raise ValueError("need at least one rollout")
    if not 0 <= n_failed <= n_total:
        raise ValueError("failed rollouts must lie in [0, N_T]")
    return 1.0 - n_failed / n_total


@dataclass
class RolloutBatch:
    failed: np.ndarray          # early termination flags
    reasons: np.ndarray         # termination reason codes (TIMEOUT for survivors)
    tracking: np.ndarray        # accumulated tracking reward
    returns: np.ndarray
    elapsed: np.ndarray         # seconds survived
    commands: np.ndarray
    duration: float
    substeps: list = None       # per-substep records when requested

    @property
    def success_rate(self):
        return success_rate_from_counts(int(self.failed.sum()), len(self.failed))


def eval_env_config(env_cfg, terrain=None, duration=10.0, latency=None):
    """Copy of ``env_cfg`` for evaluation: horizon, terrain and optional fixed latency."""
    cfg = replace(env_cfg, episode_length=duration)
    if terrain is not None:
        cfg = replace(cfg, terrain=TERRAIN_ALIASES.get(terrain, terrain))
    if latency is not None:
        cfg = replace(cfg, actuation=replace(cfg.actuation, latency=float(latency)))
        if cfg.randomization is not None:
            cfg = replace(cfg, randomization=replace(cfg.randomization, latency=(float(latency),) * 2))
    return cfg


def run_rollouts(policy, env_cfg, n, seed, duration=10.0, commands=None, latency_steps=None,
                 impulses=None, record=False, on_step=None, command_fn=None):
    """Run ``n`` fixed-horizon rollouts in lockstep with the mean action.

    ``latency_steps`` gives a per-rollout command delay in actuation steps,
    ``impulses`` a list of ``(time_s, N*s)`` base kicks, ``command_fn(t)``
    a time-varying heading-velocity command.  ``on_step(env, obs)`` is called
    before each control step.
    """
    cfg = replace(env_cfg, episode_length=duration)
    if latency_steps is not None:
        latency_steps = np.broadcast_to(np.asarray(latency_steps, int), (n,))
        top = int(latency_steps.max()) / cfg.actuation.frequency
        cfg = replace(cfg, actuation=replace(cfg.actuation, latency=top))
        if cfg.randomization is not None:
            cfg = replace(cfg, randomization=replace(cfg.randomization, latency=(top, top)))
    env = LocomotionEnv(cfg, n, seed=seed, auto_reset=False, record_substeps=record)
    if impulses:
        env.set_impulses(impulses)
    if command_fn is not None:
        commands = np.full(n, float(command_fn(0.0)))
    obs = env.reset(episode_ids=np.arange(n),
                    commands=None if commands is None else np.broadcast_to(np.asarray(commands, float), (n,)))
    if latency_steps is not None:
        env.latency.reset(np.arange(n), env.q[:, 3:], latency_steps)
    tracking = np.zeros(n)
    returns = np.zeros(n)
    records = [] if record else None
    steps = int(round(duration * cfg.control_frequency))
    for k in range(steps):
        if command_fn is not None:
            env.command[:] = command_fn(k / cfg.control_frequency)
            obs = env.observe()
        if on_step is not None:
            on_step(env, obs)
        action, _ = policy.act(obs)
        obs, reward, _, info = env.step(action)
        tracking += info["tracking"]
        returns += reward
        if record:
            records.extend(info["substeps"])
        if np.all(env.done):
            break
    reasons = np.where(env.reason == NONE, TIMEOUT, env.reason)
    failed = (reasons != TIMEOUT)
    return RolloutBatch(failed, reasons, tracking, returns, np.minimum(env.t, duration), env.command.copy(),
                        duration, records)


def success_rate(policy, env_cfg, n_rollouts=100, seed=0, duration=10.0, **kw):
    """Fraction of ``n_rollouts`` fixed-horizon rollouts that never hit an invalid state."""
    return run_rollouts(policy, env_cfg, n_rollouts, seed, duration, **kw).success_rate


def tracking_ratio(batch, tracking_weight=1.0):
    """Tracking reward collected as a fraction of its ceiling (weight x horizon), per rollout."""
    return batch.tracking / (tracking_weight * batch.duration)


@dataclass
class LatencyResult:
    limit_ms: float
    resolution_ms: float
    threshold: float
    n_rollouts: int
    success_rates: dict = field(default_factory=dict)   # latency ms -> SR
    failed_at_zero: bool = False


def latency_limit(policy, env_cfg, resolution=0.005, seed=0, n_rollouts=20, threshold=0.9,
                  max_latency=0.3, duration=10.0):
    """Largest injected latency (multiple of ``resolution``) with SR >= ``threshold``.

    Latencies are tried upward from 0; the sweep stops at the first level
    whose SR falls below the threshold.  Every level uses the same rollout
    seeds, so only the injected delay differs between levels.
    """
    per_level = resolution * env_cfg.actuation.frequency
    if abs(per_level - round(per_level)) > 1e-9:
        raise ValueError("latency resolution must be a whole number of actuation steps")
    per_level = int(round(per_level))
    n_levels = int(np.floor(max_latency / resolution + 1e-9)) + 1
    out = LatencyResult(0.0, resolution * 1e3, threshold, n_rollouts)
    for lv in range(n_levels):
        batch = run_rollouts(policy, env_cfg, n_rollouts, seed, duration, latency_steps=lv * per_level)
        ms = round(lv * resolution * 1e3, 6)
        out.success_rates[ms] = batch.success_rate
        if batch.success_rate < threshold:
            out.failed_at_zero = lv == 0
            return out
        out.limit_ms = ms
    return out


# -- gait ----------------------------------------------------------------------

def contact_intervals(flags, dt, t0=0.0):
    """Split a boolean contact signal into ``(stance, swing)`` interval lists.

    Sample ``k`` covers ``[t0 + k*dt, t0 + (k+1)*dt)``; the intervals
    partition ``[t0, t0 + len(flags)*dt]``.
    """
    flags = np.asarray(flags, bool)
    stance, swing = [], []
    if flags.size == 0:
        return stance, swing
    edges = np.flatnonzero(np.diff(flags.astype(np.int8))) + 1
    starts = np.concatenate([[0], edges])
    stops = np.concatenate([edges, [flags.size]])
    for a, b in zip(starts, stops):
        (stance if flags[a] else swing).append((t0 + a * dt, t0 + b * dt))
    return stance, swing


def _mean_length(intervals, lo, hi):
    inner = [b - a for a, b in intervals if a > lo + 1e-12 and b < hi - 1e-12]
    if not inner:
        inner = [b - a for a, b in intervals]
    return float(np.mean(inner)) if inner else 0.0


@dataclass
class GaitResult:
    dt: float
    duration: float
    stance: list                 # per foot: list of (start, stop)
    swing: list
    mean_stance: np.ndarray      # per foot, seconds
    mean_swing: np.ndarray
    stance_fraction: np.ndarray
    failed: bool = False

    @property
    def mean_stance_duration(self):
        return float(np.mean(self.mean_stance))


def gait_from_flags(flags, dt, warmup=0.0):
    """Gait statistics from a (steps, feet) contact-flag array.

    Mean durations use intervals that start after ``warmup`` and do not touch
    the end of the record (clipped intervals are only used as a fallback).
    """
    flags = np.asarray(flags, bool)
    duration = flags.shape[0] * dt
    stance, swing, ms, mw = [], [], [], []
    for f in range(flags.shape[1]):
        st, sw = contact_intervals(flags[:, f], dt)
        stance.append(st)
        swing.append(sw)
        ms.append(_mean_length(st, warmup, duration))
        mw.append(_mean_length(sw, warmup, duration))
    settled = flags[int(round(warmup / dt)):]
    if settled.shape[0] == 0:        # warm-up covers the whole record
        settled = flags
    frac = settled.mean(axis=0) if flags.shape[0] else np.zeros(flags.shape[1])
    return GaitResult(dt, duration, stance, swing, np.array(ms), np.array(mw), np.asarray(frac, float))


def gait_sequence(policy, env_cfg, duration=5.0, seed=0, command=0.5, warmup=1.0, n_rollouts=1):
    """Stance / swing intervals per foot from a rollout at a fixed command.

    With ``n_rollouts > 1`` the per-foot means are averaged over rollouts and
    the intervals of the first rollout are returned.
    """
    batch = run_rollouts(policy, env_cfg, n_rollouts, seed, duration, commands=command, record=True)
    flags = np.array([rec["contacts"] for rec in batch.substeps])    # (steps, n, feet)
    results = [gait_from_flags(flags[:, i], env_cfg.sim_dt, warmup) for i in range(n_rollouts)]
    first = results[0]
    first.mean_stance = np.mean([r.mean_stance for r in results], axis=0)
    first.mean_swing = np.mean([r.mean_swing for r in results], axis=0)
    first.stance_fraction = np.mean([r.stance_fraction for r in results], axis=0)
    first.failed = bool(np.any(batch.failed))
    return first


# -- saliency ------------------------------------------------------------------

@dataclass
class SaliencyResult:
    matrix: np.ndarray           # (actions, observations)
    labels: list                 # per observation column
    blocks: dict                 # block label -> aggregate
    steps: int


def _column_labels(spec):
    names = {"gravity": ["gx", "gz"], "base_lin_vel": ["vx", "vz"], "pitch_rate": ["pitch_rate"],
             "command": ["command"]}
    labels = []
    for label, a, b in spec.blocks():
        if label in names:
            labels += names[label]
        else:
            labels += [f"{label}[{i}]" for i in range(b - a)]
    return labels


def jacobian_saliency(policy, env_cfg, duration=2.0, seed=0, command=0.5, n_rollouts=1, aggregate="mean"):
    """Mean (or max) absolute policy Jacobian ``|d action / d observation|`` over a rollout."""
    acc = []

    def hook(env, obs):
        live = ~env.done
        if np.any(live):
            acc.append(np.abs(policy.observation_jacobian(obs[live])))

    run_rollouts(policy, env_cfg, n_rollouts, seed, duration, commands=command, on_step=hook)
    jac = np.concatenate(acc, axis=0)
    mat = jac.mean(axis=0) if aggregate == "mean" else jac.max(axis=0)
    spec = env_cfg.observation
    blocks = {label: float(mat[:, a:b].mean()) for label, a, b in spec.blocks()}
    hist = [mat[:, a:b] for label, a, b in spec.blocks() if label.startswith("hist")]
    if hist:
        blocks["history"] = float(np.mean(np.concatenate(hist, axis=1)))
    return SaliencyResult(mat, _column_labels(spec), blocks, jac.shape[0])


# -- PD setpoint toy study ---------------------------------------------------

@dataclass
class PDStudyResult:
    kp_list: tuple
    kd: float
    frequencies: tuple
    spread: dict                 # update frequency -> mean inter-gain spread at update instants
    traces: dict                 # update frequency -> (times, setpoints, positions (steps, gains))
    amplitude: float


def pd_toy_study(kp_list=(50.0, 65.0, 80.0, 95.0), kd=2.0, update_frequencies=(5.0, 200.0), inertia=0.02,
                 amplitude=0.5, setpoint_frequency=0.5, duration=4.0, actuation_frequency=400.0):
    """Setpoint tracking of a 1-DoF double integrator ``I q'' = kp (q* - q) - kd q'``.

    The PD torque is recomputed at ``actuation_frequency`` and held between
    actuation steps (integrated exactly); the sinusoidal setpoint is sampled
    and held at each update frequency.  The spread is the mean over update
    instants (taken just before each new setpoint) of the max-min position
    across gains.
    """
    dt = 1.0 / actuation_frequency
    n = int(round(duration * actuation_frequency))
    kp = np.asarray(kp_list, float)
    spread, traces = {}, {}
    for f in update_frequencies:
        hold = actuation_frequency / f
        if abs(hold - round(hold)) > 1e-9:
            raise ValueError(f"update frequency {f} must divide the actuation frequency")
        hold = int(round(hold))
        q = np.zeros_like(kp)
        v = np.zeros_like(kp)
        target = 0.0
        times, sps, pos, gaps = [], [], [], []
        for k in range(n):
            if k % hold == 0:
                if k > 0:
                    gaps.append(q.max() - q.min())
                target = amplitude * np.sin(2 * np.pi * setpoint_frequency * k * dt)
            tau = kp * (target - q) - kd * v
            acc = tau / inertia
            q = q + v * dt + 0.5 * acc * dt * dt
            v = v + acc * dt
            times.append((k + 1) * dt)
            sps.append(target)
            pos.append(q.copy())
        spread[f] = float(np.mean(gaps)) if gaps else 0.0
        traces[f] = (np.array(times), np.array(sps), np.array(pos))
    return PDStudyResult(tuple(kp_list), kd, tuple(update_frequencies), spread, traces, amplitude)


# -- velocity tracking -----------------------------------------------------------

@dataclass
class TrackingReport:
    mean_velocity: float
    max_velocity: float
    rmse: float
    distance: float
    displacement: float
    rows: list                  # (t, command, velocity, distance)
    failed: bool


def velocity_tracking_report(policy, env_cfg, command_profile=1.5, seed=0, duration=4.0, settle=0.0):
    """Heading-velocity statistics for one rollout under ``command_profile``.

    ``command_profile`` is a constant or a callable of time.  Velocity is the
    per-substep base heading velocity; distance is its running integral.
    Statistics exclude the first ``settle`` seconds.
    """
    fn = command_profile if callable(command_profile) else (lambda t, c=float(command_profile): c)
    x0 = []

    def hook(env, obs):
        if not x0:
            x0.append(env.q[0, 0])

    batch = run_rollouts(policy, env_cfg, 1, seed, duration, record=True, command_fn=fn, on_step=hook)
    dt = env_cfg.sim_dt
    rows, dist = [], 0.0
    for k, rec in enumerate(batch.substeps):
        if not rec["live"][0] and k > 0 and not batch.substeps[k - 1]["live"][0]:
            break
        t = (k + 1) * dt
        vx = float(rec["v"][0, 0])
        dist += vx * dt
        rows.append((t, float(fn(k * dt - (k * dt) % (1.0 / env_cfg.control_frequency))), vx, dist))
    arr = np.array(rows)
    keep = arr[:, 0] > settle
    vel, cmd = arr[keep, 2], arr[keep, 1]
    displacement = float(batch.substeps[len(rows) - 1]["q"][0, 0] - x0[0])
    return TrackingReport(float(vel.mean()), float(vel.max()), float(np.sqrt(np.mean((vel - cmd) ** 2))),
                          dist, displacement, rows, bool(batch.failed[0]))


# -- perturbation / dynamics sweeps ----------------------------------------------

def perturbation_sweep(policy, env_cfg, impulses=(0.0, 5.0, 10.0, 20.0, 30.0), at=2.0, n_rollouts=20, seed=0,
                       duration=5.0):
    """SR versus the size of a forward base impulse (N*s) applied at ``at`` seconds."""
    out = {}
    for imp in impulses:
        kicks = [(at, float(imp))] if imp else None
        out[float(imp)] = success_rate(policy, env_cfg, n_rollouts, seed, duration, impulses=kicks)
    return out


def dynamics_sweep(policy, env_cfg, parameter="mass_scale", values=(0.8, 0.9, 1.0, 1.1, 1.2), n_rollouts=20,
                   seed=0, duration=5.0):
    """SR versus a fixed dynamics offset (``mass_scale``, ``friction`` or ``gain_scale``)."""
    out = {}
    base = env_cfg.randomization or DRRanges.none()
    base = replace(base, friction=(env_cfg.contact.friction,) * 2) if env_cfg.randomization is None else base
    for val in values:
        ranges = replace(base, **{parameter: (float(val), float(val))})
        cfg = replace(env_cfg, randomization=ranges)
        out[float(val)] = success_rate(policy, cfg, n_rollouts, seed, duration)
    return out


# -- ablation ------------------------------------------------------------------------

ABSENT = "absent"


def ablation_table(policy_grid, terrain_kinds=("rough", "stairs", "bricks"), n_rollouts=100, seed=0,
                   duration=10.0):
    """SR table: rows are grid labels, columns terrain kinds.

    ``policy_grid`` maps a label to ``(policy, env_cfg)``; a ``None`` policy
    (missing checkpoint) yields :data:`ABSENT` cells.
    """
    table = {}
    for label, (policy, env_cfg) in policy_grid.items():
        row = {}
        for kind in terrain_kinds:
            if policy is None:
                row[kind] = ABSENT
                continue
            cfg = eval_env_config(env_cfg, terrain=kind, duration=duration)
            row[kind] = success_rate(policy, cfg, n_rollouts, seed, duration)
        table[label] = row
    return table


# -- reports -------------------------------------------------------------------------

@dataclass
class EvalReport:
    policy_id: dict
    seeds: dict
    config: dict
    blocks: dict = field(default_factory=dict)     # name -> (header, rows)
    summary: list = field(default_factory=list)    # text lines

    def add_table(self, name, header, rows):
        self.blocks[name] = (list(header), [list(r) for r in rows])

    def write(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        for name, (header, rows) in self.blocks.items():
            write_csv(os.path.join(out_dir, f"{name}.csv"), header, rows)
        with open(os.path.join(out_dir, "summary.txt"), "w") as f:
            f.write(self.text())
        return out_dir

    def text(self):
        lines = ["policy: " + ", ".join(f"{k}={v}" for k, v in self.policy_id.items()),
                 "seeds: " + ", ".join(f"{k}={v}" for k, v in self.seeds.items())]
        lines += [f"config.{k} = {v}" for k, v in self.config.items()]
        lines += self.summary
        return "\n".join(lines) + "\n"


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return v


def write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(v) for v in r])


__all__ = ["success_rate", "success_rate_from_counts", "run_rollouts", "latency_limit", "gait_sequence",
           "gait_from_flags", "contact_intervals", "jacobian_saliency", "pd_toy_study",
           "velocity_tracking_report", "perturbation_sweep", "dynamics_sweep", "ablation_table", "EvalReport",
           "write_csv", "tracking_ratio", "eval_env_config", "RobotState", "FAULT"]
