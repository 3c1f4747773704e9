"""Actuation tracker: joint impedance (PD) law, command latency and actuator lag."""

from collections import deque
from dataclasses import dataclass

import numpy as np


class ActuationError(ValueError):
    pass


@dataclass
class ActuationConfig:
    kp: float = 80.0
    kd: float = 2.0
    torque_limit: float = 40.0
    latency: float = 0.0
    lag: float = 0.0
    frequency: float = 400.0

    def __post_init__(self):
        if np.any(np.asarray(self.kp) < 0) or np.any(np.asarray(self.kd) < 0):
            raise ActuationError("kp and kd must be non-negative")
        if not self.torque_limit > 0:
            raise ActuationError("torque_limit must be positive")
        if np.any(np.asarray(self.latency) < 0):
            raise ActuationError("latency must be non-negative")
        if np.any(np.asarray(self.lag) < 0):
            raise ActuationError("lag time constant must be non-negative")
        if not self.frequency > 0:
            raise ActuationError("actuation frequency must be positive")

    @property
    def dt(self):
        return 1.0 / self.frequency

    @property
    def latency_steps(self):
        """Latency rounded to whole actuation steps."""
        return np.rint(np.asarray(self.latency) * self.frequency).astype(int)

    def check_motion_frequency(self, motion_frequency):
        if motion_frequency > self.frequency:
            raise ActuationError(
                f"motion control frequency {motion_frequency} Hz exceeds actuation frequency {self.frequency} Hz")
        ratio = self.frequency / motion_frequency
        if abs(ratio - round(ratio)) > 1e-9:
            raise ActuationError(
                f"motion control frequency {motion_frequency} Hz must divide {self.frequency} Hz")
        return int(round(ratio))


def pd_torque(config, q_desired, q, qdot):
    """Impedance law ``kp * (q_desired - q) - kd * qdot`` clamped to the torque limit."""
    q_desired, q, qdot = np.asarray(q_desired, float), np.asarray(q, float), np.asarray(qdot, float)
    if not (q_desired.shape == q.shape == qdot.shape):
        raise ActuationError(f"shape mismatch: {q_desired.shape}, {q.shape}, {qdot.shape}")
    kp = np.asarray(config.kp, float)
    kd = np.asarray(config.kd, float)
    if kp.ndim:
        kp, kd = kp[:, None], kd[:, None]
    tau = kp * (q_desired - q) - kd * qdot
    return np.clip(tau, -config.torque_limit, config.torque_limit)


class LatencyBuffer:
    """FIFO of timestamped joint-position commands.

    ``pop(now, latency)`` hands back the newest command stamped at or before
    ``now - latency``; until the first command matures the initial setpoint is
    returned.
    """

    def __init__(self, initial, capacity=None):
        self.initial = np.array(initial, dtype=float)
        self.capacity = capacity
        self._items = deque()
        self._last_time = -np.inf

    def push(self, time, command):
        if time < self._last_time:
            raise ActuationError("latency buffer timestamps must be non-decreasing")
        self._last_time = time
        self._items.append((time, np.array(command, dtype=float)))

    def pop(self, now, latency):
        # 1e-9 guards against float round-off in now - latency
        cutoff = now - latency + 1e-9
        out = self.initial
        while self._items and self._items[0][0] <= cutoff:
            _, out = self._items.popleft()
            self.initial = out
        if self.capacity is not None and len(self._items) > self.capacity:
            raise ActuationError("latency buffer overflow; capacity below latency / actuation step")
        return out

    def __len__(self):
        return len(self._items)


def delayed_setpoint(buffer, q_desired_new, now, latency):
    """Push the new command and return the one that matured ``latency`` seconds ago."""
    buffer.push(now, q_desired_new)
    return buffer.pop(now, latency)


class BatchLatency:
    """Per-environment integer-step command delay for a batch of environments.

    Commands are pushed once per actuation step; ``delay[b]`` steps later they
    become the applied setpoint.  Equivalent to one :class:`LatencyBuffer` per
    environment with latency quantized to actuation steps.
    """

    def __init__(self, initial, delay_steps, max_delay=None):
        initial = np.asarray(initial, dtype=float)
        self.delay = np.array(np.broadcast_to(np.asarray(delay_steps, dtype=int), initial.shape[:1]))
        top = int(self.delay.max()) if max_delay is None else max(int(max_delay), int(self.delay.max()))
        self.depth = top + 1
        self.ring = np.repeat(initial[None], self.depth, axis=0)
        self.cursor = 0
        self._rows = np.arange(initial.shape[0])

    def reset(self, rows, initial, delay_steps=None):
        """Refill ``rows`` with ``initial`` (and optionally change their delay)."""
        self.ring[:, rows] = initial
        if delay_steps is not None:
            delay_steps = np.asarray(delay_steps, dtype=int)
            if np.any(delay_steps >= self.depth):
                raise ActuationError("delay exceeds the buffer depth chosen at construction")
            self.delay[rows] = delay_steps

    def __call__(self, command):
        self.cursor = (self.cursor + 1) % self.depth
        self.ring[self.cursor] = command
        if self.depth == 1:
            return self.ring[0].copy()
        return self.ring[(self.cursor - self.delay) % self.depth, self._rows]


def actuator_lag(tau_commanded, tau_state, dt, lag):
    """First-order lag; returns the new applied torque (identity when ``lag == 0``).

    Uses the exact zero-order-hold discretization ``alpha = 1 - exp(-dt/lag)``,
    so a step input reaches ``1 - 1/e`` of its size after ``lag`` seconds for
    any ``dt`` dividing ``lag``.
    """
    lag_arr = np.asarray(lag, float)
    if np.any(lag_arr < 0):
        raise ActuationError("lag time constant must be non-negative")
    if not dt > 0:
        raise ActuationError("dt must be positive")
    tau_commanded = np.asarray(tau_commanded, float)
    if lag_arr.ndim:
        lag_arr = lag_arr[:, None]
    alpha = np.where(lag_arr > 0, -np.expm1(-dt / np.where(lag_arr > 0, lag_arr, 1.0)), 1.0)
    return tau_state + alpha * (tau_commanded - tau_state)
