"""Shared fixtures: cached trained policies for the acceptance suite.

Trained checkpoints live under ``artifacts/acceptance/f<freq>`` (override the
root with ``LFMC_ACCEPTANCE_CACHE``).  A cached policy is reused when its
``train.ini`` matches the training settings below; otherwise, or when
``LFMC_RETRAIN=1``, it is retrained from scratch (tens of minutes per policy
on one core).
"""

import os
from pathlib import Path

import pytest

from lfmc.config import RunConfig, dump_config
from lfmc.policy import load_policy
from lfmc.ppo import TrainConfig, train

ROOT = Path(__file__).resolve().parents[1]
CACHE = Path(os.environ.get("LFMC_ACCEPTANCE_CACHE", ROOT / "artifacts" / "acceptance"))

# blind policies on flat terrain, b_s = 4800, one second of experience per env and iteration.
# A fixed batch holds fewer env-seconds at high frequency (24 at 200 Hz vs 480 at 10 Hz), so those
# policies get more iterations; the GAE lambda keeps a fixed half-life in seconds (0.95 at 10 Hz).
ACCEPTANCE_ITERATIONS = {10: 300, 50: 600, 100: 800, 200: 1500}


def acceptance_config(frequency):
    return TrainConfig(frequency=frequency, iterations=ACCEPTANCE_ITERATIONS[frequency], init_log_std=-1.0,
                       lambda_half_life=1.35, checkpoint_interval=250)


def trained_policy(frequency):
    """Load the cached acceptance policy for ``frequency``, training it if needed."""
    cfg = acceptance_config(frequency)
    out = CACHE / f"f{frequency:03d}"
    stamp = dump_config(RunConfig(train=cfg))
    ckpt = out / "policy_final.txt"
    fresh = (ckpt.exists() and (out / "train.ini").exists() and (out / "train.ini").read_text() == stamp
             and os.environ.get("LFMC_RETRAIN") != "1")
    if not fresh:
        res = train(cfg, out_dir=str(out))
        assert res.halted is None, res.halted
        (out / "train.ini").write_text(stamp)
    return load_policy(str(ckpt), action_scale=cfg.action_scale, nominal=cfg.env.model.nominal_joints), cfg


_ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_log():
    """``log(n, ok, detail)`` prints one PASS/FAIL line per criterion, repeated in the summary."""
    def log(number, ok, detail):
        line = f"ACCEPTANCE {number:>2} {'PASS' if ok else 'FAIL'}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return log


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
