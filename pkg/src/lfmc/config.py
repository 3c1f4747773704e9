"""Plain-text run configuration.

Grammar (``#`` or ``;`` start a comment line; blank lines are ignored)::

    [section]
    key = value

Sections and their keys mirror the dataclass fields of the objects they
configure:

    [train]         TrainConfig (frequency, half_life, batch_size, ...)
    [env]           EnvConfig scalars (sim_dt, terrain, command_range, ...)
    [observation]   ObservationSpec (mode, history, history_frequency, ...)
    [reward]        RewardConfig
    [actuation]     ActuationConfig (kp, kd, latency, lag, frequency, ...)
    [contact]       ContactParams
    [termination]   TerminationConfig
    [randomization] DRRanges; the section's presence enables randomization
    [eval]          EvalConfig

Values: numbers, ``true``/``false``, bare strings, comma-separated tuples
(``command_range = -1.0, 1.5``) and ``key:value`` maps
(``smoothness_overrides = 10:0.02, 200:0.3``).  Unknown sections or keys are
errors reported with their line number.
"""

import dataclasses
import os
from dataclasses import dataclass, field, replace

from lfmc.actuation import ActuationConfig
from lfmc.env import EnvConfig, ObservationSpec, RewardConfig, TerminationConfig
from lfmc.ppo import ConfigError, TrainConfig
from lfmc.randomization import DRRanges
from lfmc.robot import ContactParams


@dataclass
class EvalConfig:
    n_rollouts: int = 100
    duration: float = 10.0
    seed: int = 0
    terrain: str = "flat"
    latency_resolution: float = 0.005
    latency_rollouts: int = 20
    latency_threshold: float = 0.9
    latency_max: float = 0.3
    gait_command: float = 0.5
    gait_duration: float = 5.0
    gait_rollouts: int = 4
    jacobian_duration: float = 2.0
    jacobian_command: float = 0.5
    jacobian_aggregate: str = "mean"
    tracking_command: float = 1.5
    tracking_duration: float = 4.0
    impulses: tuple = (0.0, 5.0, 10.0, 20.0, 30.0)
    impulse_time: float = 2.0
    mass_scales: tuple = (0.8, 0.9, 1.0, 1.1, 1.2)
    frictions: tuple = (0.3, 0.5, 0.7, 1.0)
    ablation_terrains: tuple = ("rough", "stairs", "bricks")
    pd_kp: tuple = (50.0, 65.0, 80.0, 95.0)
    pd_kd: float = 2.0
    pd_frequencies: tuple = (5.0, 200.0)
    pd_inertia: float = 0.02

    def __post_init__(self):
        if self.n_rollouts < 1 or self.latency_rollouts < 1:
            raise ConfigError("rollout counts must be at least 1")
        if not self.latency_resolution > 0:
            raise ConfigError("latency_resolution must be positive")
        if self.jacobian_aggregate not in ("mean", "max"):
            raise ConfigError("jacobian_aggregate must be mean or max")


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    source: str = None
    text: str = ""

    @property
    def env(self):
        return self.train.env_config()

    def describe(self):
        """Derived quantities, one ``key = value`` line each."""
        d = self.train.derived()
        return [f"gamma = {d['gamma']:.6f}", f"lambda = {d['lambda']:.6f}", f"n_env = {d['n_env']}",
                f"steps_per_iteration = {d['steps_per_iteration']}", f"substeps = {d['substeps']}",
                f"randomization = {'on' if self.train.randomization else 'off'}"]


SECTIONS = {
    "train": TrainConfig, "env": EnvConfig, "observation": ObservationSpec, "reward": RewardConfig,
    "actuation": ActuationConfig, "contact": ContactParams, "termination": TerminationConfig,
    "randomization": DRRanges, "eval": EvalConfig,
}
_NESTED = {"env", "dr_ranges", "observation", "reward", "actuation", "model", "contact", "termination",
           "randomization", "terrain_params"}


def _fields(cls):
    return {f.name: f for f in dataclasses.fields(cls) if f.name not in _NESTED}


def _default(f):
    if f.default is not dataclasses.MISSING:
        return f.default
    if f.default_factory is not dataclasses.MISSING:
        return f.default_factory()
    return None


def _scalar(text):
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def _coerce(raw, default):
    if isinstance(default, dict):
        out = {}
        for item in filter(None, (p.strip() for p in raw.split(","))):
            k, sep, v = item.partition(":")
            if not sep:
                raise ValueError(f"expected key:value pairs, got {item!r}")
            out[float(k)] = float(v)
        return out
    if isinstance(default, tuple):
        items = [p.strip() for p in raw.split(",") if p.strip()]
        # elements take the type of the default's elements (floats for numeric defaults)
        kind = default[0] if default else 0.0
        if isinstance(kind, str):
            return tuple(items)
        if isinstance(kind, int) and not isinstance(kind, bool):
            return tuple(_coerce(x, 0) for x in items)
        return tuple(_coerce(x, 0.0) for x in items)
    if isinstance(default, bool):
        val = _scalar(raw)
        if not isinstance(val, bool):
            raise ValueError(f"expected true/false, got {raw!r}")
        return val
    if isinstance(default, int):
        val = _scalar(raw)
        if isinstance(val, bool) or not isinstance(val, int):
            raise ValueError(f"expected an integer, got {raw!r}")
        return val
    if isinstance(default, float):
        val = _scalar(raw)
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise ValueError(f"expected a number, got {raw!r}")
        return float(val)
    return raw


def parse_sections(text, source="<config>"):
    """``{section: {key: (value_text, line_number)}}`` with syntax checks."""
    sections = {}
    current = None
    for n, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s or s[0] in "#;":
            continue
        if s.startswith("["):
            if not s.endswith("]"):
                raise ConfigError(f"{source}:{n}: malformed section header {s!r}")
            current = s[1:-1].strip()
            if current not in SECTIONS:
                raise ConfigError(f"{source}:{n}: unknown section [{current}]")
            if current in sections:
                raise ConfigError(f"{source}:{n}: duplicate section [{current}]")
            sections[current] = {}
            continue
        key, sep, value = s.partition("=")
        if not sep:
            raise ConfigError(f"{source}:{n}: expected 'key = value', got {s!r}")
        if current is None:
            raise ConfigError(f"{source}:{n}: key outside of any section")
        key = key.strip()
        if key in sections[current]:
            raise ConfigError(f"{source}:{n}: duplicate key '{key}'")
        sections[current][key] = (value.split(" #")[0].strip(), n)
    return sections


def _build(cls, entries, source, section, base=None):
    fields = _fields(cls)
    values = {}
    for key, (raw, n) in entries.items():
        if key not in fields:
            raise ConfigError(f"{source}:{n}: unknown key '{key}' in [{section}]")
        default = getattr(base, key) if base is not None else _default(fields[key])
        try:
            values[key] = _coerce(raw, default)
        except ValueError as exc:
            raise ConfigError(f"{source}:{n}: bad value for '{key}': {exc}") from None
    try:
        return replace(base, **values) if base is not None else cls(**values)
    except (ValueError, TypeError) as exc:
        first = min((n for _, n in entries.values()), default=0)
        raise ConfigError(f"{source}:{first}: invalid [{section}] settings: {exc}") from None


def parse_config_text(text, source="<config>"):
    sec = parse_sections(text, source)
    env = _build(EnvConfig, sec.get("env", {}), source, "env", base=EnvConfig())
    for name in ("observation", "reward", "actuation", "contact", "termination"):
        if name in sec:
            env = replace(env, **{name: _build(SECTIONS[name], sec[name], source, name)})
    tr_entries = sec.get("train", {})
    dr = None
    if "randomization" in sec:
        dr = _build(DRRanges, sec["randomization"], source, "randomization")
    train = _build(TrainConfig, tr_entries, source, "train", base=TrainConfig(env=env))
    if dr is not None:
        train = replace(train, randomization=True, dr_ranges=dr)
    elif "randomization" in tr_entries and train.randomization:
        pass  # enabled with default ranges
    try:
        train.derived()     # validates gamma, n_env and frequency divisibility
    except (ValueError, ZeroDivisionError) as exc:
        # point at the key the message is about
        keys = ("batch_size", "frequency", "episode_length") if "batch size" in str(exc) else \
            ("frequency", "batch_size")
        line = next((tr_entries[k][1] for k in keys if k in tr_entries), 0)
        raise ConfigError(f"{source}:{line}: {exc}") from None
    ev = _build(EvalConfig, sec.get("eval", {}), source, "eval")
    return RunConfig(train, ev, source, text)


def parse_config(path):
    """Parse and validate a config file; raises :class:`ConfigError` with line numbers."""
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path) as f:
        return parse_config_text(f.read(), path)


def dump_config(run):
    """Round-trippable text for the scalar settings of ``run``."""
    def fmt(v):
        if isinstance(v, dict):
            return ", ".join(f"{k:g}:{x:.17g}" for k, x in v.items())
        if isinstance(v, tuple):
            return ", ".join(format(x, ".17g") if isinstance(x, float) else str(x) for x in v)
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, float):
            return format(v, ".17g")
        return str(v)

    def block(name, obj):
        lines = [f"[{name}]"]
        lines += [f"{k} = {fmt(getattr(obj, k))}" for k in _fields(type(obj))]
        return lines

    tr = run.train
    out = block("train", tr) + [""] + block("env", tr.env)
    for name in ("observation", "reward", "actuation", "contact", "termination"):
        out += [""] + block(name, getattr(tr.env, name))
    if tr.randomization:
        out += [""] + block("randomization", tr.dr_ranges)
    out += [""] + block("eval", run.eval)
    return "\n".join(out) + "\n"
