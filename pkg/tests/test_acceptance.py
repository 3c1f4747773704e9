"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Criteria 6, 7 and 9 need trained policies; they come from the cache managed
in ``conftest.py`` (trained on first use).
"""

from pathlib import Path

import numpy as np

from lfmc.cli import main
from lfmc.env import EnvConfig, LocomotionEnv, RewardConfig, episode_reward
from lfmc.evaluation import (eval_env_config, gait_sequence, jacobian_saliency, latency_limit, pd_toy_study,
                             run_rollouts, tracking_ratio)
from lfmc.nn import MLP
from lfmc.policy import Policy
from lfmc.ppo import discount_for, half_life_steps, n_envs_for
from lfmc.robot import RobotModel, RobotState, dynamics_step, mechanical_energy

from conftest import trained_policy

QUICK = str(Path(__file__).resolve().parents[1] / "configs" / "quick.ini")


def test_1_discount_scaling(acceptance_log):
    errs = {f: abs(discount_for(f, 3.0) ** (f * 3.0) - 0.5) / 0.5 for f in (5, 8, 10, 25, 50, 100, 200)}
    steps = half_life_steps(0.98)
    ok = max(errs.values()) <= 1e-12 and abs(steps - 34) <= 0.5
    acceptance_log(1, ok, f"max rel err of gamma^(f*3s) vs 0.5 = {max(errs.values()):.1e}; "
                          f"gamma 0.98 half-life = {steps:.2f} steps")
    assert ok


def test_2_batch_scaling(acceptance_log):
    got = (n_envs_for(48000, 200, 1), n_envs_for(48000, 5, 1))
    ok = got == (240, 9600)
    acceptance_log(2, ok, f"n_env at 200 Hz = {got[0]}, at 5 Hz = {got[1]}")
    assert ok


def test_3_physics_sanity(acceptance_log):
    model, dt = RobotModel(), 0.0025
    # ballistic arc: a rigidly translating airborne body, compared with the closed form
    s = RobotState.standing(model)
    s.q[1] += 5.0
    s.v[:2] = [0.4, 1.5]
    c0 = _com(model, s.q)
    arc_err = 0.0
    for k in range(1, 101):
        s = dynamics_step(model, s, np.zeros(4), None, dt)
        t = k * dt
        want = c0 + np.array([0.4 * t, 1.5 * t - 0.5 * model.gravity * t * t])
        arc_err = max(arc_err, float(np.max(np.abs(_com(model, s.q) - want))))
    # energy: a tumbling body with every joint moving, zero torque, for one second
    s = RobotState.standing(model)
    s.q[1] += 5.0
    s.v[:] = [0.4, 1.5, 0.3, 1.0, -2.0, 0.5, 1.5]
    e0 = mechanical_energy(model, s)
    for _ in range(400):
        s = dynamics_step(model, s, np.zeros(4), None, dt)
    drift = abs(mechanical_energy(model, s) - e0) / abs(e0)
    ok = drift < 1e-3 and arc_err < 1e-6
    acceptance_log(3, ok, f"energy drift {100 * drift:.4f} %/s, ballistic error {arc_err:.2e} m over 100 steps")
    assert ok


def _com(model, q):
    """Centre of mass from plain planar geometry (independent of the simulator's kinematics)."""
    x, z, th = q[:3]
    base = np.array([x, z])
    seg = lambda a: np.array([np.sin(a), -np.cos(a)])
    total, acc = model.base_mass, model.base_mass * base
    for sign, hip, knee in ((1, q[3], q[4]), (-1, q[5], q[6])):
        h = base + sign * 0.5 * model.base_length * np.array([np.cos(th), np.sin(th)])
        a1, a2 = th + hip, th + hip + knee
        k = h + model.thigh_length * seg(a1)
        acc = acc + model.thigh_mass * (h + 0.5 * model.thigh_length * seg(a1))
        acc = acc + model.shank_mass * (k + 0.5 * model.shank_length * seg(a2))
        total += model.thigh_mass + model.shank_mass
    return acc / total


def _param_fd_error(net, x, w, eps=1e-5):
    _, acts = net.forward(x, keep=True)
    grads = net.backward(acts, w)
    worst = 0.0
    for p, g in zip(net.params, grads):
        fd = np.zeros_like(p)
        for i in np.ndindex(p.shape):
            old = p[i]
            p[i] = old + eps
            lp = float(np.sum(w * net(x)))
            p[i] = old - eps
            lm = float(np.sum(w * net(x)))
            p[i] = old
            fd[i] = (lp - lm) / (2 * eps)
        worst = max(worst, np.max(np.abs(g - fd)) / max(np.max(np.abs(fd)), 1e-8))
    return worst


def test_4_gradient_correctness(acceptance_log):
    rng = np.random.default_rng(4)
    dim = EnvConfig().observation.dim
    x = rng.normal(size=(100, dim))
    actor = MLP([dim, 128, 128, 4], rng=rng, output_gain=1.0)
    critic = MLP([dim, 128, 128, 1], rng=rng, output_gain=1.0)
    e_actor = _param_fd_error(actor, x, rng.normal(size=(100, 4)))
    e_critic = _param_fd_error(critic, x, rng.normal(size=(100, 1)))

    pol = Policy(dim, rng=rng, nominal=RobotModel().nominal_joints)
    for p in pol.actor.params:
        p += rng.normal(scale=0.1, size=p.shape)
    pol.norm.update(rng.normal(0.5, 2.0, size=(1000, dim)))
    e_jac = 0.0
    eps = 1e-5
    for xi in x:
        jac = pol.observation_jacobian(xi)[0]
        fd = np.stack([(pol.mean(xi + eps * e) - pol.mean(xi - eps * e)) / (2 * eps) for e in np.eye(dim)], 1)
        e_jac = max(e_jac, np.max(np.abs(jac - fd)) / np.max(np.abs(fd)))
    # saliency along a rollout against differenced absolute Jacobians at the visited states
    cfg = EnvConfig()
    seen = []
    run_rollouts(pol, cfg, 1, 0, 2.0, commands=0.5, on_step=lambda env, obs: seen.append(obs[~env.done].copy()))
    sal = jacobian_saliency(pol, cfg, 2.0, seed=0, command=0.5)
    fd_abs = np.mean([np.abs(np.stack([(pol.mean(o + eps * e) - pol.mean(o - eps * e))[0] / (2 * eps)
                                       for e in np.eye(dim)], 1)) for o in seen], axis=0)
    e_sal = np.max(np.abs(sal.matrix - fd_abs)) / np.max(fd_abs)
    worst = max(e_actor, e_critic, e_jac, e_sal)
    ok = worst < 1e-4
    acceptance_log(4, ok, f"rel err actor {e_actor:.1e}, value {e_critic:.1e}, input Jacobian {e_jac:.1e}, "
                          f"saliency {e_sal:.1e}")
    assert ok


def test_5_reward_frequency_invariance(acceptance_log):
    cfg = EnvConfig(control_frequency=10)
    env = LocomotionEnv(cfg, 1, seed=5, auto_reset=False, record_substeps=True)
    env.reset(episode_ids=[0], commands=[0.6])
    rng = np.random.default_rng(5)
    nominal = np.array(cfg.model.nominal_joints)
    prev, recs = nominal.copy(), []
    for _ in range(20):          # 2 s recorded at 10 Hz
        act = nominal + rng.normal(scale=0.1, size=4)
        _, _, _, info = env.step(act[None])
        for r in info["substeps"]:
            recs.append((RobotState(r["q"][0], r["v"][0]), r["tau"][0], act, prev, 0.6))
        prev = act
    a, _ = episode_reward(RewardConfig(), recs, 10, cfg.sim_dt, nominal)
    b, _ = episode_reward(RewardConfig(), recs, 200, cfg.sim_dt, nominal)
    rel = abs(a - b) / abs(a)
    ok = rel <= 1e-9
    acceptance_log(5, ok, f"cumulative reward {a:.12f} (10 Hz) vs {b:.12f} (200 Hz), rel diff {rel:.1e}")
    assert ok


def test_6_trainability(acceptance_log):
    pol, cfg = trained_policy(10)
    env = eval_env_config(cfg.env_config(), terrain="flat", duration=10.0)
    batch = run_rollouts(pol, env, 100, seed=0, duration=10.0)
    ratio = float(tracking_ratio(batch, env.reward.tracking_weight).mean())
    ok = ratio >= 0.7 and batch.success_rate >= 0.9 and cfg.iterations <= 2000 and cfg.batch_size == 4800
    acceptance_log(6, ok, f"10 Hz, b_s {cfg.batch_size}, {cfg.iterations} iterations: tracking {ratio:.3f} of "
                          f"ceiling, SR {batch.success_rate:.2f} over 100 rollouts")
    assert ok


def test_7_latency_trend(acceptance_log):
    limits, notes = {}, []
    for f in (10, 50, 200):
        pol, cfg = trained_policy(f)
        res = latency_limit(pol, eval_env_config(cfg.env_config(), duration=10.0), resolution=0.005, seed=0,
                            n_rollouts=20, threshold=0.9)
        limits[f] = res.limit_ms
        notes.append(f"{f} Hz {res.limit_ms:g} ms" + (" (fails at 0 ms)" if res.failed_at_zero else ""))
    ok = limits[10] >= limits[50] >= limits[200]
    acceptance_log(7, ok, "latency limits: " + ", ".join(notes))
    assert ok


def test_8_pd_toy_study(acceptance_log):
    res = pd_toy_study(kp_list=(50.0, 65.0, 80.0, 95.0), kd=2.0, update_frequencies=(5.0, 200.0))
    ok = res.spread[5.0] < res.spread[200.0]
    acceptance_log(8, ok, f"inter-gain spread {res.spread[5.0]:.5f} rad at 5 Hz vs {res.spread[200.0]:.5f} rad "
                          "at 200 Hz")
    assert ok


def test_9_gait_trend(acceptance_log):
    stance = {}
    for f in (10, 100):
        pol, cfg = trained_policy(f)
        g = gait_sequence(pol, eval_env_config(cfg.env_config(), duration=5.0), 5.0, seed=0, command=0.5,
                          n_rollouts=4)
        stance[f] = g.mean_stance_duration
    ok = stance[10] > stance[100]
    acceptance_log(9, ok, f"mean stance at 0.5 m/s: 10 Hz {stance[10]:.3f} s, 100 Hz {stance[100]:.3f} s")
    assert ok


def _csvs(directory):
    return {p.relative_to(directory).as_posix(): p.read_bytes() for p in sorted(Path(directory).rglob("*.csv"))}


def test_10_determinism(acceptance_log, tmp_path):
    def run(tag):
        base = tmp_path / tag
        assert main(["train", "-c", QUICK, "-o", str(base / "train")]) == 0
        ckpt = str(base / "train" / "policy_final.txt")
        assert main(["eval", "-c", QUICK, "-p", ckpt, "-a", "success,latency,tracking,perturbation",
                     "--dump-trajectory", "-o", str(base / "eval")]) == 0
        assert main(["gait", "-c", QUICK, "-p", ckpt, "-o", str(base / "gait")]) == 0
        assert main(["jacobian", "-c", QUICK, "-p", ckpt, "-o", str(base / "jacobian")]) == 0
        assert main(["pd-study", "-c", QUICK, "-o", str(base / "pd")]) == 0
        assert main(["sweep", "-c", QUICK, "-f", "10,25", "-o", str(base / "sweep")]) == 0
        assert main(["ablate", "-c", QUICK, "-p", f"a={ckpt}", "-o", str(base / "ablate")]) == 0
        return _csvs(base)

    a, b = run("a"), run("b")
    same = sorted(k for k in a if a[k] == b.get(k))
    ok = a == b and len(a) > 0
    acceptance_log(10, ok, f"{len(same)}/{len(a)} CSV files bit-identical across reruns of 7 subcommands")
    assert ok
