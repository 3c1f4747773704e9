"""Planar (sagittal-plane) floating-base robot with a front and a hind leg.

Generalized coordinates ``q = (x, z, pitch, hip_f, knee_f, hip_h, knee_h)``.
Pitch is the counter-clockwise rotation of the base in the x-z plane, so a
positive pitch raises the front hip.  A leg segment at absolute angle ``a``
points along ``(sin a, -cos a)``: angle zero hangs straight down.

All functions accept a single state (shape ``(7,)``) or a batch (``(B, 7)``).
Model fields may be scalars or per-environment arrays of shape ``(B,)``.
"""

from dataclasses import dataclass, field, fields, replace

import numpy as np

NQ = 7
NJ = 4
JOINT_NAMES = ("hip_front", "knee_front", "hip_hind", "knee_hind")
LEGS = ((+1.0, 3, 4), (-1.0, 5, 6))  # (hip side, hip index, knee index)


class IntegrationError(FloatingPointError):
    """Raised when the simulator is handed a non-finite state."""


class ModelError(ValueError):
    pass


@dataclass
class RobotModel:
    base_mass: float = 16.0
    base_length: float = 0.6
    base_inertia: float = 0.48
    thigh_mass: float = 1.2
    thigh_length: float = 0.25
    thigh_inertia: float = 0.00625
    shank_mass: float = 0.8
    shank_length: float = 0.25
    shank_inertia: float = 0.0042
    torque_limit: float = 40.0
    joint_lower: tuple = (-1.6, -0.3, -1.6, -2.8)
    joint_upper: tuple = (1.6, 2.8, 1.6, 0.3)
    foot_radius: float = 0.02
    gravity: float = 9.81
    nominal_joints: tuple = (-0.4, 0.8, 0.4, -0.8)

    def __post_init__(self):
        for name in ("base_mass", "base_length", "base_inertia", "thigh_mass", "thigh_length",
                     "thigh_inertia", "shank_mass", "shank_length", "shank_inertia",
                     "torque_limit", "foot_radius"):
            if not np.all(np.asarray(getattr(self, name)) > 0):
                raise ModelError(f"{name} must be strictly positive")
        lo, hi = np.asarray(self.joint_lower, float), np.asarray(self.joint_upper, float)
        if lo.shape != (NJ,) or hi.shape != (NJ,) or not np.all(lo < hi):
            raise ModelError("joint limits must be four non-empty intervals")

    @property
    def total_mass(self):
        return self.base_mass + 2 * (self.thigh_mass + self.shank_mass)

    def scaled(self, mass_scale):
        """Copy with every link mass and inertia multiplied by ``mass_scale``."""
        kw = {n: getattr(self, n) * mass_scale for n in
              ("base_mass", "base_inertia", "thigh_mass", "thigh_inertia", "shank_mass", "shank_inertia")}
        return replace(self, **kw)

    def standing_height(self, joints=None):
        """Base height at which both feet of a level robot touch flat ground."""
        q = np.zeros(NQ)
        q[3:] = self.nominal_joints if joints is None else joints
        feet = foot_positions(self, q)
        # 1 pm below the exact value so round-off cannot lift the feet off the ground
        return self.foot_radius - feet[:, 1].min() - 1e-12


@dataclass
class ContactParams:
    stiffness: float = 1e4
    damping: float = 200.0
    friction: float = 0.7
    # damping fades in over this penetration depth so the force is continuous at touchdown
    damping_ramp: float = 1e-3


@dataclass
class RobotState:
    q: np.ndarray
    v: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        if self.q.shape != self.v.shape or self.q.shape[-1] != NQ:
            raise ModelError(f"q and v must both have trailing dimension {NQ}")

    @property
    def joints(self):
        return self.q[..., 3:]

    @property
    def joint_velocities(self):
        return self.v[..., 3:]

    @property
    def pitch(self):
        return self.q[..., 2]

    def copy(self):
        return RobotState(self.q.copy(), self.v.copy(), self.t)

    @classmethod
    def standing(cls, model, x=0.0, ground=0.0):
        q = np.zeros(NQ)
        q[0] = x
        q[1] = model.standing_height() + ground
        q[3:] = model.nominal_joints
        return cls(q, np.zeros(NQ))


def _col(value, extra):
    a = np.asarray(value, dtype=float)
    return a.reshape(a.shape + (1,) * extra)


def _point(model, q, sigma, a, b, hi, ki, v=None):
    """Position, Jacobian and velocity-product acceleration of a leg point.

    The point sits at ``hip + a * dir(thigh) + b * dir(shank)``.
    """
    B = q.shape[0]
    th = q[:, 2]
    c, s = np.cos(th), np.sin(th)
    half = _col(model.base_length, 0) / 2 * sigma
    a1 = th + q[:, hi]
    a2 = a1 + q[:, ki]
    s1, c1, s2, c2 = np.sin(a1), np.cos(a1), np.sin(a2), np.cos(a2)
    pos = np.stack([q[:, 0] + half * c + a * s1 + b * s2,
                    q[:, 1] + half * s - a * c1 - b * c2], axis=-1)
    J = np.zeros((B, 2, NQ))
    J[:, 0, 0] = 1.0
    J[:, 1, 1] = 1.0
    leg_x = a * c1 + b * c2
    leg_z = a * s1 + b * s2
    J[:, 0, 2] = -half * s + leg_x
    J[:, 1, 2] = half * c + leg_z
    J[:, 0, hi] = leg_x
    J[:, 1, hi] = leg_z
    J[:, 0, ki] = b * c2
    J[:, 1, ki] = b * s2
    if v is None:
        return pos, J
    w0 = v[:, 2]
    w1 = w0 + v[:, hi]
    w2 = w1 + v[:, ki]
    bias = np.stack([-half * c * w0**2 - a * s1 * w1**2 - b * s2 * w2**2,
                     -half * s * w0**2 + a * c1 * w1**2 + b * c2 * w2**2], axis=-1)
    return pos, J, bias


def _links(model, q, v=None):
    """Per-link (mass, inertia, com, Jv, angular-velocity row, bias acc)."""
    B = q.shape[0]
    out = []
    Jb = np.zeros((B, 2, NQ))
    Jb[:, 0, 0] = 1.0
    Jb[:, 1, 1] = 1.0
    wb = np.zeros(NQ)
    wb[2] = 1.0
    out.append((model.base_mass, model.base_inertia, q[:, :2], Jb, wb, np.zeros((B, 2))))
    l1 = model.thigh_length
    l2 = model.shank_length
    for sigma, hi, ki in LEGS:
        res = _point(model, q, sigma, 0.5 * l1, 0.0, hi, ki, v)
        w = wb.copy()
        w[hi] = 1.0
        out.append((model.thigh_mass, model.thigh_inertia, res[0], res[1], w, res[2] if v is not None else None))
        res = _point(model, q, sigma, l1, 0.5 * l2, hi, ki, v)
        w = w.copy()
        w[ki] = 1.0
        out.append((model.shank_mass, model.shank_inertia, res[0], res[1], w, res[2] if v is not None else None))
    return out


def _as_batch(x):
    x = np.asarray(x, dtype=float)
    return (x[None, :], True) if x.ndim == 1 else (x, False)


def mass_matrix(model, q):
    q, single = _as_batch(q)
    M = np.zeros((q.shape[0], NQ, NQ))
    for m, inertia, _, J, w, _ in _links(model, q):
        M += _col(m, 2) * np.einsum("bki,bkj->bij", J, J) + _col(inertia, 2) * np.outer(w, w)
    return M[0] if single else M


def bias_forces(model, q, v):
    """Velocity-product plus gravity terms ``h`` with ``M qdd = S^T tau - h + J^T F``."""
    q, single = _as_batch(q)
    v, _ = _as_batch(v)
    h = np.zeros((q.shape[0], NQ))
    g = _col(model.gravity, 0)
    for m, _, _, J, _, bias in _links(model, q, v):
        m = _col(m, 1)
        h += m * np.einsum("bki,bk->bi", J, bias)
        h += (m * g) * J[:, 1, :]
    return h[0] if single else h


def foot_positions(model, q, with_jacobian=False):
    """Foot-centre positions, shape (..., 2 legs, 2)."""
    q, single = _as_batch(q)
    pos, jac = [], []
    for sigma, hi, ki in LEGS:
        p, J = _point(model, q, sigma, model.thigh_length, model.shank_length, hi, ki)
        pos.append(p)
        jac.append(J)
    pos = np.stack(pos, axis=1)
    jac = np.stack(jac, axis=1)
    if single:
        pos, jac = pos[0], jac[0]
    return (pos, jac) if with_jacobian else pos


def knee_positions(model, q):
    q, single = _as_batch(q)
    pos = np.stack([_point(model, q, sigma, model.thigh_length, 0.0, hi, ki)[0]
                    for sigma, hi, ki in LEGS], axis=1)
    return pos[0] if single else pos


def base_points(model, q):
    """Base centre, front hip and hind hip, shape (..., 3, 2)."""
    q, single = _as_batch(q)
    c, s = np.cos(q[:, 2]), np.sin(q[:, 2])
    half = _col(model.base_length, 0) / 2
    centre = q[:, :2]
    off = np.stack([half * c, half * s], axis=-1)
    pts = np.stack([centre, centre + off, centre - off], axis=1)
    return pts[0] if single else pts


def _terrain_heights(terrain, x):
    if terrain is None:
        return np.zeros_like(x)
    if hasattr(terrain, "heights") and getattr(terrain, "heights").ndim == 2:
        return terrain.height(x)
    return np.interp(x, terrain.xs, terrain.heights)


def _per_env(value):
    """Scalar, or per-env (B,) array shaped to broadcast against (B, legs)."""
    a = np.asarray(value, dtype=float)
    return a[:, None] if a.ndim else a


def contact_normal_force(params, penetration, penetration_rate):
    """Spring-damper normal force, zero when not penetrating."""
    pen = np.asarray(penetration, dtype=float)
    ramp = np.clip(pen / params.damping_ramp, 0.0, 1.0)
    f = _per_env(params.stiffness) * pen + _per_env(params.damping) * ramp * penetration_rate
    return np.where(pen > 0, np.maximum(f, 0.0), 0.0)


def step_arrays(model, q, v, tau, terrain, dt, contact=None):
    """One semi-implicit Euler step on batched arrays; returns (q, v, normal, tangential).

    Constant gravity is integrated exactly (the ``0.5 g dt^2`` position term),
    everything else with semi-implicit Euler.  Tangential foot forces are the
    forces that would stop the foot within the step, clamped to the friction
    cone.
    """
    if contact is None:
        contact = ContactParams()
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(v)) and np.all(np.isfinite(tau))):
        raise IntegrationError("non-finite robot state or torque handed to the simulator")
    B = q.shape[0]
    M = mass_matrix(model, q)
    h = bias_forces(model, q, v)
    feet, Jf = foot_positions(model, q, with_jacobian=True)        # (B,2,2), (B,2,2,7)
    vf = np.einsum("blki,bi->blk", Jf, v)
    ground = _terrain_heights(terrain, feet[..., 0])
    pen = ground + _per_env(model.foot_radius) - feet[..., 1]
    fn = contact_normal_force(contact, pen, -vf[..., 1])

    rhs = -h + np.einsum("bli,bl->bi", Jf[:, :, 1, :], fn)
    rhs[:, 3:] += tau
    Jt = Jf[:, :, 0, :]                                             # (B,2,7)
    sol = np.linalg.solve(M, np.concatenate([rhs[:, :, None], np.swapaxes(Jt, 1, 2)], axis=2))
    acc0 = sol[:, :, 0]
    MinvJtT = sol[:, :, 1:]
    active = fn > 0
    ft = np.zeros((B, 2))
    if np.any(active):
        A = np.einsum("bli,bim->blm", Jt, MinvJtT)
        b = vf[..., 0] / dt + np.einsum("bli,bi->bl", Jt, acc0)
        mask = active[:, :, None] & active[:, None, :]
        A = np.where(mask, A, np.eye(2))
        b = np.where(active, b, 0.0)
        ft = -np.linalg.solve(A, b[:, :, None])[:, :, 0]
        limit = _per_env(contact.friction) * fn
        ft = np.clip(ft, -limit, limit)
    acc = acc0 + np.einsum("bil,bl->bi", MinvJtT, ft)
    v_new = v + dt * acc
    q_new = q + dt * v_new
    q_new[:, 1] += 0.5 * dt * dt * np.asarray(model.gravity)
    # Semi-implicit Euler lets sum(m * xdot_com) drift by O(dt^2) per step; a
    # base-velocity correction restores the exact balance p1 = p0 + dt * sum(ft).
    p0 = np.einsum("bi,bi->b", mass_matrix(model, q)[:, 0, :], v)
    p1 = np.einsum("bi,bi->b", mass_matrix(model, q_new)[:, 0, :], v_new)
    v_new[:, 0] += (p0 + dt * ft.sum(axis=1) - p1) / np.asarray(model.total_mass)
    return q_new, v_new, fn, ft


def dynamics_step(model, state, joint_torques, terrain, dt, contact=None):
    """Advance ``state`` by one simulation step of length ``dt``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    q, single = _as_batch(state.q)
    v, _ = _as_batch(state.v)
    tau, _ = _as_batch(joint_torques)
    q_new, v_new, _, _ = step_arrays(model, q, v, tau, terrain, dt, contact)
    if single:
        q_new, v_new = q_new[0], v_new[0]
    return RobotState(q_new, v_new, state.t + dt)


def contact_flags(model, state, terrain):
    """Per-foot contact booleans (front, hind); touching the threshold counts as contact."""
    feet = foot_positions(model, state.q)
    ground = _terrain_heights(terrain, feet[..., 0])
    return feet[..., 1] - ground <= _per_env(model.foot_radius)


def mechanical_energy(model, state, terrain=None):
    """Kinetic plus gravitational potential energy (terrain does not store energy)."""
    q, single = _as_batch(state.q)
    v, _ = _as_batch(state.v)
    M = mass_matrix(model, q)
    kinetic = 0.5 * np.einsum("bi,bij,bj->b", v, M, v)
    potential = np.zeros(q.shape[0])
    for m, _, com, _, _, _ in _links(model, q):
        potential += np.asarray(m) * model.gravity * com[:, 1]
    e = kinetic + potential
    return float(e[0]) if single else e


def model_fields():
    return [f.name for f in fields(RobotModel)]


_FLAT = np.zeros((1, 2))


def fast_step(model, q, v, tau, terrain, dt, contact=None, mass_scale=None, friction=None):
    """Compiled equivalent of :func:`step_arrays` for a batch of environments.

    ``terrain`` is ``None`` (flat), a :class:`~lfmc.terrain.Terrain` shared by
    all environments or a :class:`~lfmc.terrain.TerrainBatch` with one row per
    environment.  ``mass_scale`` and ``friction`` optionally override the link
    masses and friction coefficient per environment.
    """
    from lfmc._kernels import step_batch

    if contact is None:
        contact = ContactParams()
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(v)) and np.all(np.isfinite(tau))):
        raise IntegrationError("non-finite robot state or torque handed to the simulator")
    B = q.shape[0]
    if terrain is None or getattr(terrain, "flat", False):
        heights, x0, spacing = _FLAT, 0.0, 1.0
    elif terrain.heights.ndim == 1:
        heights, x0, spacing = terrain.heights[None, :], terrain.x0, terrain.spacing
    else:
        heights, x0, spacing = terrain.heights, terrain.x0, terrain.spacing
    ms = np.ones(B) if mass_scale is None else np.broadcast_to(np.asarray(mass_scale, float), (B,))
    mu = np.broadcast_to(np.asarray(contact.friction if friction is None else friction, float), (B,))
    q_out = np.empty_like(q)
    v_out = np.empty_like(v)
    fn = np.empty((B, 2))
    ft = np.empty((B, 2))
    step_batch(np.ascontiguousarray(q, dtype=float), np.ascontiguousarray(v, dtype=float),
               np.ascontiguousarray(tau, dtype=float), np.ascontiguousarray(ms), np.ascontiguousarray(mu),
               np.ascontiguousarray(heights, dtype=float), float(x0), float(spacing), float(dt),
               float(model.base_mass), float(model.base_length), float(model.base_inertia),
               float(model.thigh_mass), float(model.thigh_length), float(model.thigh_inertia),
               float(model.shank_mass), float(model.shank_length), float(model.shank_inertia),
               float(model.foot_radius), float(model.gravity),
               float(contact.stiffness), float(contact.damping), float(contact.damping_ramp),
               q_out, v_out, fn, ft)
    return q_out, v_out, fn, ft
