import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lfmc.policy import CheckpointError, Policy, load_policy, save_policy, save_value


def _trained_looking(seed=0, obs_dim=18):
    rng = np.random.default_rng(seed)
    p = Policy(obs_dim, rng=rng, init_log_std=-1.3)
    for w in p.actor.params + p.critic.params:
        w += rng.normal(scale=0.3, size=w.shape)
    p.norm.update(rng.normal(2.0, 3.0, size=(500, obs_dim)))
    return p


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    p = _trained_looking()
    save_policy(p, tmp_path / "p.txt")
    save_value(p, tmp_path / "v.txt")
    q = load_policy(tmp_path / "p.txt", tmp_path / "v.txt")
    for a, b in zip(p.actor.params + p.critic.params, q.actor.params + q.critic.params):
        assert np.array_equal(a, b)
    assert np.array_equal(p.norm.mean, q.norm.mean) and np.array_equal(p.norm.var, q.norm.var)
    assert np.array_equal(p.log_std, q.log_std)
    obs = np.random.default_rng(1).normal(size=(4, 18))
    assert np.array_equal(p.mean(obs), q.mean(obs)) and np.array_equal(p.value(obs), q.value(obs))
    save_policy(q, tmp_path / "p2.txt")
    assert (tmp_path / "p.txt").read_bytes() == (tmp_path / "p2.txt").read_bytes()


def test_checkpoint_layout(tmp_path):
    save_policy(Policy(18, hidden=(8, 8)), tmp_path / "p.txt")
    lines = (tmp_path / "p.txt").read_text().splitlines()
    assert lines[:3] == ["LFMC-POLICY v1", "activation tanh", "layers 18 8 8 4"]
    assert [ln.split()[0] for ln in lines[3:7]] == ["obs_mean", "obs_var", "log_std", "W0"]
    assert lines[6] == "W0 18 8" and len(lines[7].split()) == 8


def test_corrupt_checkpoints_rejected(tmp_path):
    path = tmp_path / "p.txt"
    path.write_text("something else\n")
    with pytest.raises(CheckpointError):
        load_policy(path)
    save_policy(Policy(6, hidden=(4,)), path)
    text = path.read_text().splitlines()
    path.write_text("\n".join(text[:-2]) + "\n")
    with pytest.raises(CheckpointError, match="end of file"):
        load_policy(path)
    text[2] = "layers 6 5 4"
    path.write_text("\n".join(text) + "\n")
    with pytest.raises(CheckpointError):
        load_policy(path)


def test_log_prob_matches_gaussian_density():
    p = Policy(3, act_dim=2, init_log_std=-0.5)
    mean, raw = np.array([0.1, -0.2]), np.array([0.3, 0.4])
    sd = np.exp(-0.5)
    want = np.sum(-0.5 * ((raw - mean) / sd) ** 2 - np.log(sd * np.sqrt(2 * np.pi)))
    assert p.log_prob(mean, raw) == pytest.approx(want, rel=1e-12)
    assert p.entropy() == pytest.approx(2 * (0.5 * np.log(2 * np.pi * np.e) - 0.5), rel=1e-12)


def test_action_mapping():
    nom = np.array([-0.4, 0.8, 0.4, -0.8])
    p = Policy(18, nominal=nom, action_scale=0.5)
    obs = np.zeros((1, 18))
    targets, raw = p.act(obs)
    assert np.array_equal(targets, nom + 0.5 * p.mean(obs))
    noisy, raw_n = p.act(obs, noise=np.ones((1, 4)))
    np.testing.assert_allclose(raw_n - raw, np.exp(p.log_std)[None])


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_observation_jacobian_matches_finite_differences(seed):
    p = _trained_looking(seed % 7, obs_dim=10)
    x = np.random.default_rng(seed).normal(size=10) * 3.0
    jac = p.observation_jacobian(x)[0]
    eps = 1e-5
    for j in range(10):
        e = np.zeros(10)
        e[j] = eps
        fd = (p.mean(x + e) - p.mean(x - e)) / (2 * eps)
        np.testing.assert_allclose(jac[:, j], fd, rtol=1e-4, atol=1e-7)
