"""Gaussian MLP policy, value network and the text checkpoint format.

Checkpoint layout (one item per line, numbers as 17-significant-digit text)::

    LFMC-POLICY v1
    activation tanh
    layers 18 128 128 4
    obs_mean <n_obs numbers>
    obs_var <n_obs numbers>
    log_std <n_act numbers>
    W0 <rows> <cols>
    <one line per row>
    b0 <len>
    <numbers>
    ...

The value network is stored the same way under the header ``LFMC-VALUE v1``
(without the normalization and log-std lines).
"""

import numpy as np

from lfmc.nn import MLP, RunningNorm

POLICY_HEADER = "LFMC-POLICY v1"
VALUE_HEADER = "LFMC-VALUE v1"
LOG2PI = np.log(2.0 * np.pi)


class CheckpointError(ValueError):
    pass


class Policy:
    """Observation normalizer + action-mean MLP + state-independent log-std,
    with a separate value MLP of the same shape."""

    def __init__(self, obs_dim, act_dim=4, hidden=(128, 128), activation="tanh", init_log_std=-0.7,
                 rng=None, action_scale=0.5, nominal=None):
        rng = np.random.default_rng(0) if rng is None else rng
        sizes = [obs_dim, *hidden, act_dim]
        self.actor = MLP(sizes, activation, rng=rng, output_gain=0.01)
        self.critic = MLP([obs_dim, *hidden, 1], activation, rng=rng, output_gain=1.0)
        self.log_std = np.full(act_dim, float(init_log_std))
        self.norm = RunningNorm(obs_dim)
        self.action_scale = action_scale
        self.nominal = np.zeros(act_dim) if nominal is None else np.asarray(nominal, float)

    @property
    def obs_dim(self):
        return self.actor.sizes[0]

    @property
    def act_dim(self):
        return self.actor.sizes[-1]

    def mean(self, obs):
        return self.actor(self.norm(obs))

    def value(self, obs):
        return self.critic(self.norm(obs))[..., 0]

    def to_joint_targets(self, raw_action):
        return self.nominal + self.action_scale * raw_action

    def act(self, obs, noise=None):
        """Joint targets (and raw actions); deterministic when ``noise`` is None."""
        mu = self.mean(obs)
        raw = mu if noise is None else mu + np.exp(self.log_std) * noise
        return self.to_joint_targets(raw), raw

    def log_prob(self, mean, raw):
        z = (raw - mean) * np.exp(-self.log_std)
        return -0.5 * np.sum(z * z, axis=-1) - np.sum(self.log_std) - 0.5 * self.act_dim * LOG2PI

    def entropy(self):
        return float(np.sum(self.log_std + 0.5 * (1.0 + LOG2PI)))

    def observation_jacobian(self, obs):
        """``d action_mean / d observation`` on raw (unnormalized) observations, (B, act, obs)."""
        jac = self.actor.input_jacobian(self.norm(np.atleast_2d(obs)))
        return jac * self.norm.scale[None, None, :]

    def copy(self):
        p = Policy.__new__(Policy)
        p.actor = self.actor.copy()
        p.critic = self.critic.copy()
        p.log_std = self.log_std.copy()
        p.norm = RunningNorm(self.obs_dim)
        p.norm.mean, p.norm.var, p.norm.count = self.norm.mean.copy(), self.norm.var.copy(), self.norm.count
        p.action_scale = self.action_scale
        p.nominal = self.nominal.copy()
        return p


def _fmt(values):
    return " ".join(format(float(x), ".17g") for x in np.ravel(values))


def _write_layers(lines, net):
    for i in range(len(net.sizes) - 1):
        W, b = net.params[2 * i], net.params[2 * i + 1]
        lines.append(f"W{i} {W.shape[0]} {W.shape[1]}")
        lines.extend(_fmt(row) for row in W)
        lines.append(f"b{i} {b.shape[0]}")
        lines.append(_fmt(b))


def save_policy(policy, path):
    lines = [POLICY_HEADER, f"activation {policy.actor.activation}",
             "layers " + " ".join(str(s) for s in policy.actor.sizes),
             "obs_mean " + _fmt(policy.norm.mean), "obs_var " + _fmt(policy.norm.var),
             "log_std " + _fmt(policy.log_std)]
    _write_layers(lines, policy.actor)
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def save_value(policy, path):
    lines = [VALUE_HEADER, f"activation {policy.critic.activation}",
             "layers " + " ".join(str(s) for s in policy.critic.sizes)]
    _write_layers(lines, policy.critic)
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


class _Lines:
    def __init__(self, path):
        self.path = path
        with open(path) as f:
            self.lines = f.read().splitlines()
        self.i = 0

    def next(self):
        if self.i >= len(self.lines):
            raise CheckpointError(f"{self.path}: unexpected end of file")
        self.i += 1
        return self.lines[self.i - 1]

    def keyed(self, key):
        line = self.next()
        parts = line.split()
        if not parts or parts[0] != key:
            raise CheckpointError(f"{self.path}:{self.i}: expected '{key}', got {line[:40]!r}")
        return parts[1:]


def _read_layers(src, sizes, activation):
    params = []
    for i in range(len(sizes) - 1):
        r, c = (int(x) for x in src.keyed(f"W{i}"))
        if (r, c) != (sizes[i], sizes[i + 1]):
            raise CheckpointError(f"{src.path}: W{i} is {r}x{c}, layer list says {sizes[i]}x{sizes[i + 1]}")
        W = np.array([[float(x) for x in src.next().split()] for _ in range(r)])
        n = int(src.keyed(f"b{i}")[0])
        b = np.array([float(x) for x in src.next().split()])
        if W.shape != (r, c) or b.shape != (n,) or n != c:
            raise CheckpointError(f"{src.path}: malformed layer {i}")
        params += [W, b]
    return MLP(sizes, activation, params=params)


def load_policy(path, value_path=None, action_scale=0.5, nominal=None):
    src = _Lines(path)
    if src.next().strip() != POLICY_HEADER:
        raise CheckpointError(f"{path}: not a policy checkpoint (missing '{POLICY_HEADER}')")
    activation = src.keyed("activation")[0]
    sizes = [int(x) for x in src.keyed("layers")]
    mean = np.array([float(x) for x in src.keyed("obs_mean")])
    var = np.array([float(x) for x in src.keyed("obs_var")])
    log_std = np.array([float(x) for x in src.keyed("log_std")])
    if mean.shape != (sizes[0],) or var.shape != (sizes[0],) or log_std.shape != (sizes[-1],):
        raise CheckpointError(f"{path}: normalization / log-std sizes do not match layer list")
    actor = _read_layers(src, sizes, activation)
    p = Policy(sizes[0], sizes[-1], hidden=tuple(sizes[1:-1]), activation=activation,
               action_scale=action_scale, nominal=nominal)
    p.actor = actor
    p.norm.mean, p.norm.var, p.norm.count = mean, var, 1.0
    p.log_std = log_std
    if value_path is not None:
        vsrc = _Lines(value_path)
        if vsrc.next().strip() != VALUE_HEADER:
            raise CheckpointError(f"{value_path}: not a value checkpoint")
        vact = vsrc.keyed("activation")[0]
        vsizes = [int(x) for x in vsrc.keyed("layers")]
        p.critic = _read_layers(vsrc, vsizes, vact)
    return p
