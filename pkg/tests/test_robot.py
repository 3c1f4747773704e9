import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lfmc.robot import (ContactParams, IntegrationError, ModelError, RobotModel, RobotState, bias_forces,
                        contact_flags, contact_normal_force, dynamics_step, fast_step, foot_positions,
                        mass_matrix, mechanical_energy, step_arrays)
from lfmc.terrain import generate_terrain

MODEL = RobotModel()
DT = 0.0025


# -- independent oracle: link frames written out by hand -------------------------

def _seg(a):
    return np.array([np.sin(a), -np.cos(a)])


def oracle_links(m, q):
    """(mass, inertia, com, absolute angle) per link, from plain planar geometry."""
    x, z, th = q[:3]
    base = np.array([x, z])
    out = [(m.base_mass, m.base_inertia, base, th)]
    for sign, hip, knee in ((1, q[3], q[4]), (-1, q[5], q[6])):
        h = base + sign * 0.5 * m.base_length * np.array([np.cos(th), np.sin(th)])
        a1, a2 = th + hip, th + hip + knee
        out.append((m.thigh_mass, m.thigh_inertia, h + 0.5 * m.thigh_length * _seg(a1), a1))
        k = h + m.thigh_length * _seg(a1)
        out.append((m.shank_mass, m.shank_inertia, k + 0.5 * m.shank_length * _seg(a2), a2))
    return out


def oracle_energy(m, q, v, eps=1e-6):
    """Kinetic energy by finite-differenced link velocities, plus potential."""
    ke, pe = 0.0, 0.0
    plus, minus = oracle_links(m, q + eps * v), oracle_links(m, q - eps * v)
    for (mass, inertia, com, _), (_, _, cp, ap), (_, _, cm, am) in zip(oracle_links(m, q), plus, minus):
        vel = (cp - cm) / (2 * eps)
        w = (ap - am) / (2 * eps)
        ke += 0.5 * mass * vel @ vel + 0.5 * inertia * w * w
        pe += mass * m.gravity * com[1]
    return ke, pe


def random_q(rng):
    q = np.zeros(7)
    q[:3] = rng.uniform(-0.5, 0.5, 3) + [0, 1.0, 0]
    q[3:] = rng.uniform(-1, 1, 4)
    return q


def test_mass_matrix_matches_kinetic_energy_oracle():
    rng = np.random.default_rng(3)
    for _ in range(20):
        q, v = random_q(rng), rng.normal(size=7)
        ke, _ = oracle_energy(MODEL, q, v)
        assert 0.5 * v @ mass_matrix(MODEL, q) @ v == pytest.approx(ke, rel=1e-7)


def test_mass_matrix_symmetric_positive_definite():
    rng = np.random.default_rng(4)
    M = mass_matrix(MODEL, np.stack([random_q(rng) for _ in range(10)]))
    assert np.allclose(M, np.swapaxes(M, 1, 2))
    assert np.all(np.linalg.eigvalsh(M) > 0)


def test_bias_forces_match_lagrangian_oracle():
    # h = Mdot v - dT/dq + dV/dq, each term by central differences
    rng = np.random.default_rng(5)
    eps = 1e-6
    for _ in range(10):
        q, v = random_q(rng), rng.normal(size=7)
        mdot_v = (mass_matrix(MODEL, q + eps * v) - mass_matrix(MODEL, q - eps * v)) @ v / (2 * eps)
        grad = np.zeros(7)
        for i in range(7):
            e = np.zeros(7)
            e[i] = eps
            tp = 0.5 * v @ mass_matrix(MODEL, q + e) @ v + oracle_energy(MODEL, q + e, v)[1]
            tm = 0.5 * v @ mass_matrix(MODEL, q - e) @ v + oracle_energy(MODEL, q - e, v)[1]
            ke_p = 0.5 * v @ mass_matrix(MODEL, q + e) @ v
            ke_m = 0.5 * v @ mass_matrix(MODEL, q - e) @ v
            grad[i] = -(ke_p - ke_m) / (2 * eps) + ((tp - ke_p) - (tm - ke_m)) / (2 * eps)
        np.testing.assert_allclose(bias_forces(MODEL, q, v), mdot_v + grad, rtol=1e-5, atol=1e-5)


def test_model_validation():
    with pytest.raises(ModelError):
        RobotModel(base_mass=0.0)
    with pytest.raises(ModelError):
        RobotModel(torque_limit=-1.0)
    with pytest.raises(ModelError):
        RobotModel(joint_lower=(0, 0, 0, 0), joint_upper=(0, 1, 1, 1))
    assert MODEL.total_mass == pytest.approx(20.0)


def airborne(h=5.0, v0=None):
    s = RobotState.standing(MODEL)
    s.q[1] += h
    if v0 is not None:
        s.v[:] = v0
    return s


def test_ballistic_arc_matches_closed_form():
    s = airborne(v0=[0.3, 1.2, 0, 0, 0, 0, 0])
    z0, vz0 = s.q[1], s.v[1]
    for k in range(1, 101):
        s = dynamics_step(MODEL, s, np.zeros(4), None, DT)
        t = k * DT
        assert abs(s.q[1] - (z0 + vz0 * t - 0.5 * 9.81 * t * t)) < 1e-6
    assert s.t == pytest.approx(100 * DT)


def test_horizontal_momentum_conserved_in_flight():
    rng = np.random.default_rng(0)
    s = airborne(v0=rng.normal(size=7))
    p0 = (mass_matrix(MODEL, s.q) @ s.v)[0]
    s1 = dynamics_step(MODEL, s, np.zeros(4), None, DT)
    assert (mass_matrix(MODEL, s1.q) @ s1.v)[0] == pytest.approx(p0, rel=1e-12, abs=1e-12)


def test_energy_drift_in_free_flight():
    rng = np.random.default_rng(1)
    s = airborne(h=10.0, v0=0.5 * rng.normal(size=7))
    e0 = mechanical_energy(MODEL, s)
    for _ in range(200):     # 0.5 s
        s = dynamics_step(MODEL, s, np.zeros(4), None, DT)
    assert abs(mechanical_energy(MODEL, s) - e0) / abs(e0) < 1e-3 * 0.5


def test_energy_at_rest_is_potential_and_kinetic_is_quadratic():
    s = RobotState.standing(MODEL)
    _, pe = oracle_energy(MODEL, s.q, s.v)
    assert mechanical_energy(MODEL, s) == pytest.approx(pe)
    rng = np.random.default_rng(2)
    s.v[:] = rng.normal(size=7)
    k1 = mechanical_energy(MODEL, s) - pe
    s.v *= 2
    assert mechanical_energy(MODEL, s) - pe == pytest.approx(4 * k1)


def test_contact_force_at_one_millimetre():
    f = contact_normal_force(ContactParams(), np.array([0.001]), np.array([0.0]))
    assert f[0] == pytest.approx(1e4 * 0.001)


@given(st.floats(-0.01, 0.01), st.floats(-2, 2))
def test_contact_force_zero_without_penetration_and_nonnegative(pen, rate):
    f = float(contact_normal_force(ContactParams(), np.array(pen), np.array(rate)))
    assert f >= 0
    if pen <= 0:
        assert f == 0


def test_contact_force_continuous_in_penetration():
    pens = np.linspace(-1e-3, 3e-3, 4001)
    f = contact_normal_force(ContactParams(), pens, np.full_like(pens, 0.5))
    assert np.max(np.abs(np.diff(f))) < 1.0      # no jump at touchdown


def test_tangential_force_inside_friction_cone():
    rng = np.random.default_rng(7)
    q = np.repeat(RobotState.standing(MODEL).q[None], 64, axis=0)
    q[:, 1] -= rng.uniform(0, 0.01, 64)
    v = rng.normal(scale=1.0, size=(64, 7))
    tau = rng.uniform(-40, 40, (64, 4))
    _, _, fn, ft = step_arrays(MODEL, q, v, tau, None, DT)
    assert np.all(np.abs(ft) <= 0.7 * fn + 1e-12)


def test_step_is_deterministic_and_rejects_nonfinite():
    s = RobotState.standing(MODEL)
    a = dynamics_step(MODEL, s, np.ones(4), None, DT)
    b = dynamics_step(MODEL, s, np.ones(4), None, DT)
    assert np.array_equal(a.q, b.q) and np.array_equal(a.v, b.v)
    s.q[0] = np.nan
    with pytest.raises(IntegrationError):
        dynamics_step(MODEL, s, np.zeros(4), None, DT)


@pytest.mark.parametrize("kind", ["flat", "perlin", "bricks"])
def test_compiled_step_matches_reference(kind):
    rng = np.random.default_rng(11)
    terrain = None if kind == "flat" else generate_terrain(kind, 3)
    q = np.repeat(RobotState.standing(MODEL).q[None], 32, axis=0)
    q[:, 0] = rng.uniform(-2, 2, 32)
    q[:, 1] += rng.uniform(-0.01, 0.05, 32) + (0 if terrain is None else terrain.height(q[:, 0]))
    v = rng.normal(scale=0.5, size=(32, 7))
    tau = rng.uniform(-40, 40, (32, 4))
    ref = step_arrays(MODEL, q, v, tau, terrain, DT)
    got = fast_step(MODEL, q, v, tau, terrain, DT)
    for r, g in zip(ref, got):
        np.testing.assert_allclose(g, r, rtol=1e-9, atol=1e-9)


def test_contact_flags():
    s = RobotState.standing(MODEL)
    assert contact_flags(MODEL, s, None).tolist() == [True, True]
    s.q[1] += 1.0
    assert contact_flags(MODEL, s, None).tolist() == [False, False]
    # dyadic lengths make the boundary exact: straight legs put both feet at z - 0.5
    m = RobotModel(foot_radius=0.03125)
    q = np.zeros(7)
    q[1] = 0.53125
    assert contact_flags(m, RobotState(q, np.zeros(7)), None).tolist() == [True, True]
    q[1] += 2.0 ** -20
    assert contact_flags(m, RobotState(q, np.zeros(7)), None).tolist() == [False, False]


def test_standing_pose_rests_on_ground():
    s = RobotState.standing(MODEL)
    feet = foot_positions(MODEL, s.q)
    assert np.allclose(feet[:, 1], MODEL.foot_radius)
    assert 0.4 < s.q[1] < 0.55
