"""Per-episode dynamics randomization."""

from dataclasses import dataclass, replace

import numpy as np


@dataclass
class DRRanges:
    mass_scale: tuple = (0.9, 1.1)
    friction: tuple = (0.4, 1.0)
    gain_scale: tuple = (0.9, 1.1)
    latency: tuple = (0.0, 0.02)
    lag: tuple = (0.0, 0.0)

    def __post_init__(self):
        for name in ("mass_scale", "friction", "gain_scale", "latency", "lag"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"randomization range {name} has lower bound above upper bound")
            if lo < 0:
                raise ValueError(f"randomization range {name} must be non-negative")
        if self.mass_scale[0] <= 0 or self.gain_scale[0] < 0:
            raise ValueError("mass scale must be positive")

    @classmethod
    def none(cls):
        return cls((1.0, 1.0), (0.7, 0.7), (1.0, 1.0), (0.0, 0.0), (0.0, 0.0))


def sample_dynamics(rng, n, ranges):
    """Draw ``n`` parameter sets; returns a dict of arrays of shape (n,)."""
    out = {}
    for name in ("mass_scale", "friction", "gain_scale", "latency", "lag"):
        lo, hi = getattr(ranges, name)
        out[name] = rng.uniform(lo, hi, size=n) if hi > lo else np.full(n, float(lo))
    return out


def apply_dynamics_randomization(rng, model, actuation, ranges, contact=None):
    """Resample one environment's dynamics.

    Returns ``(model', actuation')``, or ``(model', actuation', contact')`` when
    contact parameters are given (friction lives there).  Degenerate ranges of
    the form ``(1, 1)`` for scales leave the corresponding quantity unchanged.
    """
    p = sample_dynamics(rng, 1, ranges)
    model2 = model.scaled(float(p["mass_scale"][0]))
    act2 = replace(actuation, kp=actuation.kp * float(p["gain_scale"][0]),
                   kd=actuation.kd * float(p["gain_scale"][0]),
                   latency=float(p["latency"][0]), lag=float(p["lag"][0]))
    if contact is None:
        return model2, act2
    return model2, act2, replace(contact, friction=float(p["friction"][0]))
