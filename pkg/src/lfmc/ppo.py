"""Clipped-surrogate PPO with frequency-consistent discounting.

The discount is fixed by a half-life in seconds rather than control steps::

    gamma = exp(ln 0.5 / (f_t * n_half))

and the number of parallel environments is scaled so every training
frequency collects the same number of control steps per iteration::

    n_env = b_s / (f_t * N)
"""

import csv
import math
import multiprocessing as mp
import os
from dataclasses import dataclass, field, replace

import numpy as np

from lfmc.env import EnvConfig, LocomotionEnv
from lfmc.nn import Adam, clip_grad_norm
from lfmc.policy import Policy, save_policy, save_value
from lfmc.randomization import DRRanges, apply_dynamics_randomization  # noqa: F401  (re-export)
from lfmc.seeding import rng_for


class ConfigError(ValueError):
    pass


class TrainingHalted(RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


def discount_for(f_t, n_half):
    """Discount factor whose weight halves after ``n_half`` seconds at ``f_t`` Hz."""
    if not (f_t > 0 and n_half > 0):
        raise ConfigError(f"discount_for needs positive f_t and n_half, got {f_t}, {n_half}")
    return math.exp(math.log(0.5) / (f_t * n_half))


def half_life_steps(gamma):
    """Control steps until ``gamma**n`` reaches one half."""
    if not 0.0 < gamma < 1.0:
        raise ConfigError("gamma must lie in (0, 1)")
    return math.log(0.5) / math.log(gamma)


def n_envs_for(b_s, f_t, N):
    """Parallel environments needed for ``b_s`` control steps per iteration."""
    steps = f_t * N
    if not (b_s > 0 and steps > 0):
        raise ConfigError("batch size, frequency and episode length must be positive")
    n = b_s / steps
    if abs(n - round(n)) > 1e-9 or round(n) < 1 or abs(steps - round(steps)) > 1e-9:
        lo = max(1, math.floor(n)) * steps
        hi = max(1, math.ceil(n)) * steps
        near = lo if abs(b_s - lo) <= abs(hi - b_s) else hi
        raise ConfigError(f"batch size {b_s} is not divisible by f_t*N = {steps:g}; "
                          f"nearest valid batch size is {near:g}")
    return int(round(n))


@dataclass
class TrainConfig:
    frequency: float = 10.0
    half_life: float = 3.0
    episode_length: float = 1.0          # N: seconds of experience per env per iteration
    max_episode_length: float = 10.0    # environment timeout; episodes span iterations
    batch_size: int = 4800
    gae_lambda: float = 0.95
    lambda_half_life: float = 0.0      # seconds; when > 0 it overrides gae_lambda per frequency
    clip: float = 0.2
    epochs: int = 5
    minibatches: int = 4
    learning_rate: float = 1e-3
    adaptive_lr: bool = True
    desired_kl: float = 0.01
    value_coef: float = 1.0
    entropy_coef: float = 0.005
    max_grad_norm: float = 1.0
    iterations: int = 300
    seed: int = 0
    hidden: tuple = (128, 128)
    action_scale: float = 0.5
    init_log_std: float = -0.7
    workers: int = 1
    checkpoint_interval: int = 50
    randomization: bool = False
    dr_ranges: DRRanges = field(default_factory=DRRanges)
    actuator_lag: bool = False
    lag_range: tuple = (0.0, 0.01)
    env: EnvConfig = field(default_factory=EnvConfig)

    def __post_init__(self):
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ConfigError("gae_lambda must lie in [0, 1]")
        if not self.clip > 0:
            raise ConfigError("clip must be positive")
        if self.epochs < 1 or self.minibatches < 1 or self.iterations < 0:
            raise ConfigError("epochs and minibatches must be at least 1")
        if self.lambda_half_life < 0:
            raise ConfigError("lambda_half_life must be non-negative")
        if self.max_episode_length < self.episode_length:
            raise ConfigError("max_episode_length must be at least episode_length")

    @property
    def gamma(self):
        return discount_for(self.frequency, self.half_life)

    @property
    def lam(self):
        """GAE lambda; with ``lambda_half_life`` set it is scaled like the discount."""
        if self.lambda_half_life > 0:
            return discount_for(self.frequency, self.lambda_half_life)
        return self.gae_lambda

    @property
    def n_env(self):
        return n_envs_for(self.batch_size, self.frequency, self.episode_length)

    @property
    def steps_per_iteration(self):
        return int(round(self.frequency * self.episode_length))

    def env_config(self):
        """Environment settings implied by this training config."""
        dr = None
        if self.randomization:
            dr = self.dr_ranges
        if self.actuator_lag:
            dr = replace(dr or DRRanges.none(), lag=tuple(self.lag_range))
        env = replace(self.env, control_frequency=self.frequency, episode_length=self.max_episode_length,
                      randomization=dr)
        env.substeps  # validates f_t against the actuation frequency
        return env

    def derived(self):
        return {"gamma": self.gamma, "lambda": self.lam, "n_env": self.n_env, "steps_per_iteration": self.steps_per_iteration,
                "substeps": self.env_config().substeps}


def make_policy(cfg, obs_dim):
    return Policy(obs_dim, 4, hidden=tuple(cfg.hidden), init_log_std=cfg.init_log_std,
                  rng=rng_for(cfg.seed, "policy-init"), action_scale=cfg.action_scale,
                  nominal=cfg.env.model.nominal_joints)


# -- advantage estimation -------------------------------------------------

def gae(rewards, values, dones, gamma, lam, next_values=None, truncated=None):
    """Generalized advantage estimates and value targets along axis 0.

    ``dones[t]`` marks that the episode ended after step ``t``.  The value of
    the successor state is ``next_values[t]`` (default ``values[t + 1]``, and
    0 after the last step); it is kept for ``truncated`` (time-limit) endings
    and dropped for true terminations.
    """
    rewards = np.asarray(rewards, float)
    values = np.asarray(values, float)
    dones = np.asarray(dones, bool)
    if next_values is None:
        next_values = np.concatenate([values[1:], np.zeros_like(values[:1])])
    truncated = np.zeros_like(dones) if truncated is None else np.asarray(truncated, bool)
    keep_next = (~dones) | truncated
    delta = rewards + gamma * next_values * keep_next - values
    adv = np.zeros_like(rewards)
    running = np.zeros_like(rewards[0])
    for t in range(rewards.shape[0] - 1, -1, -1):
        running = delta[t] + gamma * lam * running * (~dones[t])
        adv[t] = running
    return adv, adv + values


# -- PPO update ----------------------------------------------------------------

def _policy_loss_grads(policy, obs_n, raw, old_logp, adv, clip, entropy_coef):
    mu, acts = policy.actor.forward(obs_n, keep=True)
    std = np.exp(policy.log_std)
    z = (raw - mu) / std
    logp = -0.5 * np.sum(z * z, axis=1) - np.sum(policy.log_std) - 0.5 * mu.shape[1] * np.log(2 * np.pi)
    ratio = np.exp(logp - old_logp)
    surr1 = ratio * adv
    surr2 = np.clip(ratio, 1.0 - clip, 1.0 + clip) * adv
    n = obs_n.shape[0]
    loss = -np.mean(np.minimum(surr1, surr2))
    active = surr1 <= surr2
    dlogp = -(adv * ratio * active) / n
    gmu = dlogp[:, None] * (z / std)
    glog = np.sum(dlogp[:, None] * (z * z - 1.0), axis=0) - entropy_coef
    grads = policy.actor.backward(acts, gmu)
    info = {"policy_loss": loss, "approx_kl": float(np.mean((ratio - 1.0) - np.log(ratio))),
            "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > clip))}
    return loss, grads, glog, info


def _value_loss_grads(policy, obs_n, returns, value_coef):
    v, acts = policy.critic.forward(obs_n, keep=True)
    err = v[:, 0] - returns
    loss = float(np.mean(err * err))
    g = (2.0 * value_coef / err.shape[0]) * err[:, None]
    return loss, policy.critic.backward(acts, g)


def ppo_loss_and_grads(policy, batch, cfg):
    """Total loss and gradients (actor params, log-std, critic params) on one minibatch."""
    ploss, pgrads, glog, info = _policy_loss_grads(policy, batch["obs"], batch["actions"], batch["log_probs"],
                                                  batch["advantages"], cfg.clip, cfg.entropy_coef)
    vloss, vgrads = _value_loss_grads(policy, batch["obs"], batch["returns"], cfg.value_coef)
    ent = policy.entropy()
    total = ploss + cfg.value_coef * vloss - cfg.entropy_coef * ent
    info.update(value_loss=vloss, entropy=ent, loss=total)
    return total, pgrads + [glog] + vgrads, info


def _params(policy):
    return policy.actor.params + [policy.log_std] + policy.critic.params


def ppo_update(policy, optimizer, batch, cfg, rng):
    """Run ``cfg.epochs`` passes of minibatch Adam over ``batch`` (normalized obs).

    Advantages are normalized over the whole batch first.  Returns averaged
    diagnostics; raises :class:`TrainingHalted` on a non-finite loss.
    """
    adv = np.asarray(batch["advantages"], float)
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    data = dict(batch, advantages=adv)
    n = adv.shape[0]
    mb = max(1, n // cfg.minibatches)
    sums, count = {}, 0
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, mb * cfg.minibatches, mb):
            idx = order[start:start + mb]
            sub = {k: v[idx] for k, v in data.items()}
            loss, grads, info = ppo_loss_and_grads(policy, sub, cfg)
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
                raise TrainingHalted("non-finite PPO loss", info)
            grads, gnorm = clip_grad_norm(grads, cfg.max_grad_norm)
            info["grad_norm"] = gnorm
            if cfg.adaptive_lr and cfg.desired_kl:
                if info["approx_kl"] > 2.0 * cfg.desired_kl:
                    optimizer.lr = max(1e-5, optimizer.lr / 1.5)
                elif 0.0 < info["approx_kl"] < 0.5 * cfg.desired_kl:
                    optimizer.lr = min(1e-2, optimizer.lr * 1.5)
            optimizer.step(_params(policy), grads)
            for k, v in info.items():
                sums[k] = sums.get(k, 0.0) + float(v)
            count += 1
    out = {k: v / count for k, v in sums.items()}
    out["learning_rate"] = optimizer.lr
    return out


# -- rollouts --------------------------------------------------------------

class _Segment:
    """Persistent environments for a slice of global env indices."""

    def __init__(self, cfg, env_cfg, rows, n_env):
        self.cfg = cfg
        self.rows = np.asarray(rows)
        self.env = LocomotionEnv(env_cfg, len(self.rows), seed=cfg.seed, id_stride=n_env)
        self.obs = self.env.reset(episode_ids=self.rows)
        # spread the first timeouts so episode endings do not arrive in lockstep
        steps = int(round(env_cfg.episode_length * env_cfg.control_frequency))
        offsets = [rng_for(cfg.seed, "start-offset", int(r)).integers(steps) for r in self.rows]
        self.env.t[:] = np.array(offsets) / env_cfg.control_frequency
        self.noise = [rng_for(cfg.seed, "action-noise", int(r)) for r in self.rows]
        self.ep_return = np.zeros(len(self.rows))
        self.ep_tracking = np.zeros(len(self.rows))
        self.ep_steps = np.zeros(len(self.rows), dtype=int)

    def collect(self, policy, T):
        B = len(self.rows)
        D = self.obs.shape[1]
        out = {"obs": np.empty((T, B, D)), "actions": np.empty((T, B, 4)), "log_probs": np.empty((T, B)),
               "values": np.empty((T, B)), "rewards": np.empty((T, B)), "dones": np.zeros((T, B), bool),
               "truncated": np.zeros((T, B), bool), "next_values": np.empty((T, B))}
        noise = np.stack([g.standard_normal((T, 4)) for g in self.noise], axis=1)
        episodes = []
        for t in range(T):
            obs = self.obs
            mu = policy.mean(obs)
            raw = mu + np.exp(policy.log_std) * noise[t]
            out["obs"][t] = obs
            out["actions"][t] = raw
            out["log_probs"][t] = policy.log_prob(mu, raw)
            out["values"][t] = policy.value(obs)
            obs, reward, finished, info = self.env.step(policy.to_joint_targets(raw))
            if not np.all(np.isfinite(reward)):
                raise TrainingHalted("environment produced a non-finite reward")
            out["rewards"][t] = reward
            out["dones"][t] = finished
            out["truncated"][t] = info["truncated"]
            nxt = policy.value(obs)
            if np.any(finished):
                nxt[finished] = 0.0
                trunc = info["truncated"][finished]
                if np.any(trunc):
                    rows = np.flatnonzero(finished)[trunc]
                    nxt[rows] = policy.value(info["terminal_obs"][trunc])
            out["next_values"][t] = nxt
            self.ep_return += reward
            self.ep_tracking += info["tracking"]
            self.ep_steps += 1
            for b in np.flatnonzero(finished):
                episodes.append((float(self.ep_return[b]), int(self.ep_steps[b]), bool(info["failed"][b]),
                                 float(self.ep_tracking[b])))
            self.ep_return[finished] = 0.0
            self.ep_tracking[finished] = 0.0
            self.ep_steps[finished] = 0
            self.obs = obs
        return out, episodes


def _worker_main(conn, cfg, env_cfg, rows, n_env):
    seg = _Segment(cfg, env_cfg, rows, n_env)
    conn.send(seg.obs.shape[1])
    while True:
        msg = conn.recv()
        if msg is None:
            break
        policy, T = msg
        try:
            conn.send(("ok", seg.collect(policy, T)))
        except Exception as exc:  # reported to the trainer, which halts
            conn.send(("error", repr(exc)))
    conn.close()


class RolloutWorkers:
    """Partition of the ``n_env`` environments over ``workers`` processes.

    Each environment's episode ids and action noise depend only on its global
    index, so results do not depend on the partition (up to floating-point
    reduction order in batched matrix products).
    """

    def __init__(self, cfg, env_cfg, n_env, workers=1):
        parts = [p for p in np.array_split(np.arange(n_env), workers) if len(p)]
        self.local = None
        self.procs, self.conns = [], []
        if len(parts) == 1:
            self.local = _Segment(cfg, env_cfg, parts[0], n_env)
            self.obs_dim = self.local.obs.shape[1]
            return
        ctx = mp.get_context("fork" if "fork" in mp.get_all_start_methods() else "spawn")
        for rows in parts:
            parent, child = ctx.Pipe()
            p = ctx.Process(target=_worker_main, args=(child, cfg, env_cfg, rows, n_env), daemon=True)
            p.start()
            self.procs.append(p)
            self.conns.append(parent)
        dims = [c.recv() for c in self.conns]
        self.obs_dim = dims[0]

    def collect(self, policy, T):
        if self.local is not None:
            return self.local.collect(policy, T)
        for c in self.conns:
            c.send((policy, T))
        results = [c.recv() for c in self.conns]
        for status, payload in results:
            if status != "ok":
                raise TrainingHalted(f"rollout worker failed: {payload}")
        parts = [payload for _, payload in results]
        out = {k: np.concatenate([p[0][k] for p in parts], axis=1) for k in parts[0][0]}
        episodes = [e for p in parts for e in p[1]]
        return out, episodes

    def close(self):
        for c in self.conns:
            try:
                c.send(None)
            except (BrokenPipeError, OSError):
                pass
        for p in self.procs:
            p.join(timeout=5)
        self.procs, self.conns = [], []


# -- training loop -----------------------------------------------------------

CURVE_FIELDS = ["iteration", "mean_return", "mean_episode_length", "episodes", "failure_rate",
                "mean_step_reward", "policy_loss", "value_loss", "entropy", "approx_kl", "clip_fraction",
                "learning_rate"]


@dataclass
class TrainResult:
    policy: Policy
    curve: list
    checkpoint: str = None
    halted: str = None


def train(cfg, out_dir=None, log=None, policy=None):
    """Train a policy; writes ``returns.csv`` and checkpoints into ``out_dir`` if given.

    Deterministic for a fixed config when ``cfg.workers == 1``.
    """
    env_cfg = cfg.env_config()
    n_env, T = cfg.n_env, cfg.steps_per_iteration
    gamma = cfg.gamma
    workers = RolloutWorkers(cfg, env_cfg, n_env, cfg.workers)
    if policy is None:
        policy = make_policy(cfg, workers.obs_dim)
    opt = Adam(_params(policy), lr=cfg.learning_rate)
    rng = rng_for(cfg.seed, "minibatch")
    curve = []
    recent = []
    halted = None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    csv_file = open(os.path.join(out_dir, "returns.csv"), "w", newline="") if out_dir else None
    writer = None
    if csv_file:
        writer = csv.DictWriter(csv_file, fieldnames=CURVE_FIELDS)
        writer.writeheader()
    try:
        for it in range(cfg.iterations):
            try:
                roll, episodes = workers.collect(policy, T)
                adv, ret = gae(roll["rewards"], roll["values"], roll["dones"], gamma, cfg.lam,
                               next_values=roll["next_values"], truncated=roll["truncated"])
                D = roll["obs"].shape[-1]
                raw_obs = roll["obs"].reshape(-1, D)
                batch = {"obs": policy.norm(raw_obs), "actions": roll["actions"].reshape(-1, 4),
                         "log_probs": roll["log_probs"].ravel(), "advantages": adv.ravel(),
                         "returns": ret.ravel()}
                diag = ppo_update(policy, opt, batch, cfg, rng)
                policy.norm.update(raw_obs)
            except TrainingHalted as exc:
                halted = f"iteration {it}: {exc}"
                break
            recent = (recent + episodes)[-max(len(episodes), n_env):]
            row = {"iteration": it,
                   "mean_return": float(np.mean([e[0] for e in recent])) if recent else float("nan"),
                   "mean_episode_length": float(np.mean([e[1] for e in recent])) / cfg.frequency if recent
                   else float("nan"),
                   "episodes": len(episodes),
                   "failure_rate": float(np.mean([e[2] for e in episodes])) if episodes else 0.0,
                   "mean_step_reward": float(np.mean(roll["rewards"]))}
            row.update({k: diag[k] for k in CURVE_FIELDS if k in diag})
            curve.append(row)
            if writer:
                writer.writerow({k: (format(v, ".17g") if isinstance(v, float) else v) for k, v in row.items()})
                csv_file.flush()
            if log:
                log(row)
            if out_dir and cfg.checkpoint_interval and (it + 1) % cfg.checkpoint_interval == 0:
                save_checkpoint(policy, out_dir, f"iter{it + 1:05d}")
    finally:
        workers.close()
        if csv_file:
            csv_file.close()
    ckpt = None
    if out_dir:
        ckpt = save_checkpoint(policy, out_dir, "final" if halted is None else "halted")
    return TrainResult(policy, curve, ckpt, halted)


def save_checkpoint(policy, out_dir, tag):
    path = os.path.join(out_dir, f"policy_{tag}.txt")
    save_policy(policy, path)
    save_value(policy, os.path.join(out_dir, f"value_{tag}.txt"))
    return path
