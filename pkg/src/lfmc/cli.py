"""Command-line entry point: ``lfmc <subcommand> ...``.

Subcommands: train, eval, sweep, gait, jacobian, pd-study, ablate.  Outputs
go to ``-o DIR`` or, by default, ``$LFMC_OUTPUT_ROOT/<subcommand>-s<seed>``
(``./runs`` when the variable is unset).  An existing non-empty output
directory is refused unless ``--force`` is given.  The exit status is
nonzero iff any requested analysis failed.
"""

import argparse
import os
import shlex
import sys
from dataclasses import replace

import numpy as np

from lfmc import __version__
from lfmc.config import RunConfig, dump_config, parse_config
from lfmc.evaluation import (ABSENT, EvalReport, ablation_table, dynamics_sweep, eval_env_config, gait_sequence,
                             jacobian_saliency, latency_limit, pd_toy_study, perturbation_sweep, run_rollouts,
                             tracking_ratio, velocity_tracking_report, write_csv)
from lfmc.policy import CheckpointError, load_policy
from lfmc.ppo import ConfigError, train

OUTPUT_ENV = "LFMC_OUTPUT_ROOT"


class CLIError(RuntimeError):
    pass


def _log(msg):
    print(msg, file=sys.stderr, flush=True)


def load_run_config(path, seed=None, workers=None):
    run = parse_config(path) if path else RunConfig()
    tr = run.train
    if seed is not None:
        tr = replace(tr, seed=seed)
        run = replace(run, eval=replace(run.eval, seed=seed))
    if workers is not None:
        tr = replace(tr, workers=workers)
    return replace(run, train=tr)


def prepare_output(args, name):
    out = args.output or os.path.join(os.environ.get(OUTPUT_ENV, "runs"), f"{name}-s{args.seed or 0}")
    if os.path.isdir(out) and os.listdir(out) and not args.force:
        raise CLIError(f"output directory {out} exists and is not empty; pass --force to overwrite")
    os.makedirs(out, exist_ok=True)
    return out


def write_manifest(out, args, run, extra=()):
    lines = [f"lfmc {__version__}", "command: lfmc " + " ".join(shlex.quote(a) for a in args.argv),
             f"subcommand: {args.command}", f"seed: {run.train.seed}", f"workers: {run.train.workers}"]
    try:
        lines += ["derived: " + "; ".join(run.describe())]
    except ValueError:
        pass
    lines += list(extra)
    lines += ["", "# config snapshot", dump_config(run)]
    with open(os.path.join(out, "manifest.txt"), "w") as f:
        f.write("\n".join(lines))


def _policy(path, run):
    try:
        pol = load_policy(path, action_scale=run.train.action_scale, nominal=run.train.env.model.nominal_joints)
    except (OSError, CheckpointError) as exc:
        raise CLIError(str(exc)) from None
    dim = run.train.env.observation.dim
    if pol.obs_dim != dim:
        raise CLIError(f"checkpoint {path} expects {pol.obs_dim} observations, config gives {dim}")
    return pol


def _policy_id(run, path=None):
    tr = run.train
    return {"f_t": tr.frequency, "mode": tr.env.observation.mode, "H": tr.env.observation.history,
            "DR": "on" if tr.randomization else "off", "checkpoint": path or "-"}


def _report(run, path, **seeds):
    ev = run.eval
    return EvalReport(_policy_id(run, path), {"eval": ev.seed, **seeds},
                      {"duration_s": ev.duration, "n_rollouts": ev.n_rollouts, "terrain": ev.terrain})


# -- analyses ------------------------------------------------------------------

def analysis_success(report, pol, run):
    ev = run.eval
    cfg = eval_env_config(run.env, terrain=ev.terrain, duration=ev.duration)
    b = run_rollouts(pol, cfg, ev.n_rollouts, ev.seed, ev.duration)
    ratio = tracking_ratio(b, cfg.reward.tracking_weight)
    report.add_table("rollouts", ["rollout", "command", "failed", "reason", "elapsed_s", "return", "tracking_ratio"],
                     [[i, b.commands[i], int(b.failed[i]), int(b.reasons[i]), b.elapsed[i], b.returns[i], ratio[i]]
                      for i in range(len(b.failed))])
    report.summary += [f"success rate: {b.success_rate:.4f} over {len(b.failed)} rollouts of {ev.duration} s",
                       f"tracking reward / ceiling: {ratio.mean():.4f}"]
    return b.success_rate, float(ratio.mean())


def analysis_latency(report, pol, run):
    ev = run.eval
    cfg = eval_env_config(run.env, terrain=ev.terrain, duration=ev.duration)
    res = latency_limit(pol, cfg, ev.latency_resolution, ev.seed, ev.latency_rollouts, ev.latency_threshold,
                        ev.latency_max, ev.duration)
    report.add_table("latency", ["latency_ms", "success_rate"], sorted(res.success_rates.items()))
    report.summary += [f"latency limit: {res.limit_ms:g} ms (SR >= {res.threshold} over {res.n_rollouts} "
                       f"rollouts, {res.resolution_ms:g} ms resolution)"
                       + (" [fails at zero latency]" if res.failed_at_zero else "")]
    return res


def analysis_gait(report, pol, run):
    ev = run.eval
    cfg = eval_env_config(run.env, terrain=ev.terrain, duration=ev.gait_duration)
    g = gait_sequence(pol, cfg, ev.gait_duration, ev.seed, ev.gait_command, n_rollouts=ev.gait_rollouts)
    rows = []
    for foot, name in enumerate(("front", "hind")):
        rows += [[name, "stance", a, b] for a, b in g.stance[foot]]
        rows += [[name, "swing", a, b] for a, b in g.swing[foot]]
    rows.sort(key=lambda r: (r[0], r[2]))
    report.add_table("gait_intervals", ["foot", "phase", "start_s", "stop_s"], rows)
    report.add_table("gait_summary", ["foot", "mean_stance_s", "mean_swing_s", "stance_fraction"],
                     [[n, g.mean_stance[i], g.mean_swing[i], g.stance_fraction[i]]
                      for i, n in enumerate(("front", "hind"))])
    report.summary += [f"gait at {ev.gait_command} m/s: mean stance {g.mean_stance_duration:.3f} s, "
                       f"mean swing {float(np.mean(g.mean_swing)):.3f} s"]
    return g


def analysis_jacobian(report, pol, run):
    ev = run.eval
    cfg = eval_env_config(run.env, terrain=ev.terrain, duration=ev.jacobian_duration)
    s = jacobian_saliency(pol, cfg, ev.jacobian_duration, ev.seed, ev.jacobian_command,
                          aggregate=ev.jacobian_aggregate)
    report.add_table("saliency", ["action"] + s.labels,
                     [[f"a{i}"] + list(s.matrix[i]) for i in range(s.matrix.shape[0])])
    report.add_table("saliency_blocks", ["block", ev.jacobian_aggregate + "_abs_jacobian"], list(s.blocks.items()))
    report.summary += [f"saliency over {s.steps} control steps: "
                       + ", ".join(f"{k}={v:.4g}" for k, v in s.blocks.items())]
    return s


def analysis_tracking(report, pol, run):
    ev = run.eval
    cfg = eval_env_config(run.env, terrain=ev.terrain, duration=ev.tracking_duration)
    t = velocity_tracking_report(pol, cfg, ev.tracking_command, ev.seed, ev.tracking_duration)
    report.add_table("tracking", ["t_s", "command", "velocity", "distance"], t.rows)
    report.summary += [f"tracking {ev.tracking_command} m/s: mean {t.mean_velocity:.3f}, max {t.max_velocity:.3f}, "
                       f"rmse {t.rmse:.3f}, distance {t.distance:.3f} m"]
    return t


def analysis_perturbation(report, pol, run):
    ev = run.eval
    cfg = eval_env_config(run.env, terrain=ev.terrain, duration=ev.duration)
    imp = perturbation_sweep(pol, cfg, ev.impulses, ev.impulse_time, ev.latency_rollouts, ev.seed, ev.duration)
    mass = dynamics_sweep(pol, cfg, "mass_scale", ev.mass_scales, ev.latency_rollouts, ev.seed, ev.duration)
    fr = dynamics_sweep(pol, cfg, "friction", ev.frictions, ev.latency_rollouts, ev.seed, ev.duration)
    rows = [["impulse_Ns", k, v] for k, v in imp.items()]
    rows += [["mass_scale", k, v] for k, v in mass.items()]
    rows += [["friction", k, v] for k, v in fr.items()]
    report.add_table("perturbation", ["parameter", "value", "success_rate"], rows)
    return rows


def dump_trajectory(path, pol, run):
    ev = run.eval
    cfg = eval_env_config(run.env, terrain=ev.terrain, duration=ev.duration)
    b = run_rollouts(pol, cfg, 1, ev.seed, ev.duration, record=True)
    rows = []
    for k, rec in enumerate(b.substeps):
        rows.append([(k + 1) * cfg.sim_dt, *rec["q"][0], *rec["v"][0], *rec["desired"][0], *rec["tau"][0],
                     rec["reward"][0], *rec["contacts"][0].astype(int), int(rec["live"][0])])
    header = (["t_s", "x", "z", "pitch", "hip_f", "knee_f", "hip_h", "knee_h"]
              + [f"v_{n}" for n in ("x", "z", "pitch", "hip_f", "knee_f", "hip_h", "knee_h")]
              + ["target_hip_f", "target_knee_f", "target_hip_h", "target_knee_h"]
              + ["tau_hip_f", "tau_knee_f", "tau_hip_h", "tau_knee_h", "reward",
                 "contact_front", "contact_hind", "live"])
    write_csv(path, header, rows)


# -- subcommands ---------------------------------------------------------------

def cmd_train(args, run):
    out = prepare_output(args, "train")
    write_manifest(out, args, run)
    _log("; ".join(run.describe()))
    res = train(run.train, out_dir=out, log=(lambda r: _log(
        f"iter {r['iteration']}: return {r['mean_return']:.4f}, ep len {r['mean_episode_length']:.2f} s"))
        if args.verbose else None)
    if res.halted:
        _log(f"training halted at {res.halted}; checkpoint {res.checkpoint}")
        return 1
    _log(f"checkpoint: {res.checkpoint}")
    return 0


def _run_analyses(args, run, names):
    out = prepare_output(args, args.command)
    write_manifest(out, args, run, [f"checkpoint: {args.policy}"])
    pol = _policy(args.policy, run)
    report = _report(run, args.policy)
    failures = 0
    table = {"success": analysis_success, "latency": analysis_latency, "gait": analysis_gait,
             "jacobian": analysis_jacobian, "tracking": analysis_tracking, "perturbation": analysis_perturbation}
    for name in names:
        try:
            table[name](report, pol, run)
        except Exception as exc:     # one analysis failing must not hide the others
            failures += 1
            report.summary.append(f"{name}: FAILED ({exc!r})")
    if getattr(args, "dump_trajectory", False):
        dump_trajectory(os.path.join(out, "trajectory.csv"), pol, run)
    report.write(out)
    sys.stdout.write(report.text())
    return 1 if failures else 0


def cmd_eval(args, run):
    names = args.analyses.split(",") if args.analyses else ["success", "latency", "tracking"]
    return _run_analyses(args, run, names)


def cmd_gait(args, run):
    return _run_analyses(args, run, ["gait"])


def cmd_jacobian(args, run):
    return _run_analyses(args, run, ["jacobian"])


def cmd_pd_study(args, run):
    out = prepare_output(args, "pd-study")
    write_manifest(out, args, run)
    ev = run.eval
    res = pd_toy_study(ev.pd_kp, ev.pd_kd, ev.pd_frequencies, ev.pd_inertia)
    rows = [[f, res.spread[f], res.spread[f] / res.amplitude] for f in res.frequencies]
    write_csv(os.path.join(out, "pd_spread.csv"), ["update_hz", "spread_rad", "spread_over_amplitude"], rows)
    for f in res.frequencies:
        t, sp, pos = res.traces[f]
        write_csv(os.path.join(out, f"pd_trace_{f:g}hz.csv"), ["t_s", "setpoint"] + [f"kp{k:g}" for k in res.kp_list],
                  [[t[i], sp[i], *pos[i]] for i in range(len(t))])
    text = "\n".join(f"{f:g} Hz updates: inter-gain spread {res.spread[f]:.5f} rad" for f in res.frequencies)
    with open(os.path.join(out, "summary.txt"), "w") as fh:
        fh.write(text + "\n")
    print(text)
    return 0


def cmd_sweep(args, run):
    out = prepare_output(args, "sweep")
    write_manifest(out, args, run, [f"frequencies: {args.frequencies}"])
    freqs = [float(f) for f in args.frequencies.split(",") if f.strip()]
    rows, failures = [], 0
    for f in freqs:
        sub = os.path.join(out, f"f{f:g}")
        try:
            fr = replace(run, train=replace(run.train, frequency=f))
            fr.describe()
            res = train(fr.train, out_dir=sub)
            if res.halted:
                raise RuntimeError(f"training halted: {res.halted}")
            rep = _report(fr, res.checkpoint)
            sr, ratio = analysis_success(rep, res.policy, fr)
            lat = analysis_latency(rep, res.policy, fr)
            rep.write(os.path.join(sub, "eval"))
            final = res.curve[-1]["mean_return"] if res.curve else float("nan")
            rows.append([f, fr.train.gamma, fr.train.n_env, final, sr, ratio, lat.limit_ms, "ok"])
        except Exception as exc:     # record and continue with the other frequencies
            failures += 1
            rows.append([f, "", "", "", "", "", "", f"failed: {exc}"])
            _log(f"frequency {f:g} Hz failed: {exc}")
    write_csv(os.path.join(out, "comparison.csv"),
              ["frequency_hz", "gamma", "n_env", "final_mean_return", "success_rate", "tracking_ratio",
               "latency_limit_ms", "status"], rows)
    return 1 if failures else 0


def cmd_ablate(args, run):
    out = prepare_output(args, "ablate")
    grid, labels = {}, []
    for item in args.policy or []:
        label, sep, rest = item.partition("=")
        if not sep:
            raise CLIError(f"ablate expects label=checkpoint[@config], got {item!r}")
        path, _, cfg_path = rest.partition("@")
        sub = load_run_config(cfg_path, args.seed, args.workers) if cfg_path else run
        try:
            grid[label] = (_policy(path, sub), sub.env)
        except CLIError as exc:
            _log(f"{label}: {exc}; cell marked absent")
            grid[label] = (None, sub.env)
        labels.append(label)
    write_manifest(out, args, run, ["grid: " + ", ".join(args.policy or [])])
    ev = run.eval
    table = ablation_table(grid, ev.ablation_terrains, ev.n_rollouts, ev.seed, ev.duration)
    write_csv(os.path.join(out, "ablation.csv"), ["policy", *ev.ablation_terrains],
              [[lb, *[table[lb][k] for k in ev.ablation_terrains]] for lb in labels])
    missing = any(v == ABSENT for row in table.values() for v in row.values())
    return 1 if missing else 0


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep, "gait": cmd_gait,
            "jacobian": cmd_jacobian, "pd-study": cmd_pd_study, "ablate": cmd_ablate}


def build_parser():
    p = argparse.ArgumentParser(prog="lfmc", description="Low-frequency motion control experiments.")
    p.add_argument("--version", action="version", version=f"lfmc {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, policy=False):
        sp.add_argument("-c", "--config", help="run config file")
        sp.add_argument("-s", "--seed", type=int, help="root seed override")
        sp.add_argument("-o", "--output", help=f"output directory (default under ${OUTPUT_ENV})")
        sp.add_argument("--workers", type=int, help="rollout worker processes (default 1, deterministic)")
        sp.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")
        sp.add_argument("-v", "--verbose", action="store_true")
        if policy:
            sp.add_argument("-p", "--policy", required=True, help="policy checkpoint")
            sp.add_argument("--dump-trajectory", action="store_true", help="write one rollout as trajectory.csv")
        return sp

    common(sub.add_parser("train", help="train a policy"))
    ev = common(sub.add_parser("eval", help="evaluate a checkpoint"), policy=True)
    ev.add_argument("-a", "--analyses", help="comma list of success,latency,tracking,perturbation,gait,jacobian")
    sw = common(sub.add_parser("sweep", help="train and evaluate one policy per frequency"))
    sw.add_argument("-f", "--frequencies", default="5,8,10,25,50,100,200")
    common(sub.add_parser("gait", help="stance/swing intervals of a checkpoint"), policy=True)
    common(sub.add_parser("jacobian", help="Jacobian saliency of a checkpoint"), policy=True)
    common(sub.add_parser("pd-study", help="PD setpoint toy study"))
    ab = common(sub.add_parser("ablate", help="success-rate table over policies and terrains"))
    ab.add_argument("-p", "--policy", action="append", help="label=checkpoint[@config], repeatable")
    return p


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    args.argv = argv
    try:
        run = load_run_config(args.config, args.seed, args.workers)
        return COMMANDS[args.command](args, run)
    except (ConfigError, CLIError) as exc:
        _log(f"error: {exc}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
