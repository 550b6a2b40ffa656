#!/usr/bin/env python3
"""
🌀 NS LAB
=========

Spectral Navier-Stokes lab on the periodic torus: Galerkin and mollified
approximations, a-priori-estimate verification and regularity-epoch analysis.

Usage:
    python ns_lab.py simulate --config run.env [--out DIR] [--seed S]
    python ns_lab.py verify --trajectory DIR/trajectory.csv [--checks energy,ds,ddn]
    python ns_lab.py epochs --trajectory DIR/trajectory.csv [--flags flags.csv] [--eta 0.5] [--c 0.2]
    python ns_lab.py converge --config run.env --levels 4,8,16 [--cross-family M]
    python ns_lab.py estimate-constant -N 16 [--trials 200] [--seed 1] [--margin 0.5]

Checks: energy, ds, ddn, dn, ddn_agmon, agmon, weak (or 'all': every check
the available artifacts support; 'weak' needs fields.npz from field_archive=true).

Exit codes:
    0  success
    1  usage, configuration or artifact format error
    2  blow-up (artifacts for the valid prefix are still written)
    3  estimate contradiction (failed check, pigeonhole contradiction)

Environment (optionally from ns_lab.env):
    NS_LAB_THREADS   FFT workers and parallel level runs (default 1)
    LOG_DIR          log directory (default logs)
    RUN_LEDGER_FILE  sqlite run ledger (default ns_lab_runs.db)
"""

import argparse
import os
import sys
import time
import traceback
from typing import Dict, List, Optional

import pandas as pd
from dotenv import dotenv_values, load_dotenv

from artifacts import (
    FIELD_ARCHIVE_FILE, TRAJECTORY_FILE, RunLedger, RunManifest, TrajectoryFormatError,
    attach_fields, load_manifest_config, read_trajectory_csv, write_field_archive,
    write_frame_csv, write_json, write_snapshot, write_trajectory_csv, atomic_write_text,
)
from convergence import convergence_sweep
from dynamics import DEFAULT_AGMON_MARGIN, DEFAULT_ETA, BlowUpError, ConfigError, SolverConfig, run
from epochs import HorizonTooShort, PigeonholeContradiction, analyze_epochs
from estimates import (
    CHECK_NAMES, InequalityReport, agmon_check, ddn_agmon_check, ddn_residual, dn_identity_check,
    ds_bound_check, energy_check, estimate_agmon_constant, random_test_set, resolve_agmon_constant,
    weak_form_residual,
)
from lab_logger import Logger
from spectral_core import set_fft_workers, thread_count

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_BLOWUP = 2
EXIT_CONTRADICTION = 3

DEFAULT_CHECKS = 'energy,ds,ddn,dn,agmon'
DEFAULT_WEAK_TESTS = 5

env_paths = [
    "ns_lab.env",  # Current directory
    os.path.join(os.path.dirname(os.path.abspath(__file__)), "ns_lab.env"),  # Same directory as script
]


def load_environment():
    for env_path in env_paths:
        if os.path.exists(env_path):
            load_dotenv(dotenv_path=env_path, override=False)
            return env_path
    return None


class UsageError(Exception):
    pass


class LabArgumentParser(argparse.ArgumentParser):
    """argparse that raises instead of exiting, so usage errors map to exit code 1"""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _thread_count() -> int:
    raw = os.getenv('NS_LAB_THREADS', '')
    if raw and not raw.strip().lstrip('+-').isdigit():
        Logger.warning(f"⚠️ NS_LAB_THREADS={raw!r} is not an integer, using 1")
    return thread_count()


def load_run_config(path: str, overrides: Optional[Dict[str, object]] = None) -> SolverConfig:
    """Parse a key=value run configuration (dotenv grammar: '#' comments, blank lines ignored)"""
    if not path or not os.path.isfile(path):
        raise FileNotFoundError(f"config file not found: {path}")
    mapping = dict(dotenv_values(path))
    for key, value in (overrides or {}).items():
        if value is not None:
            mapping[key] = str(value)
    return SolverConfig.from_mapping(mapping)


def _finish(args, manifest: RunManifest, out_dir: str, started: float,
            reports: Optional[List[dict]] = None) -> int:
    manifest.timings['total_seconds'] = round(time.perf_counter() - started, 6)
    manifest.write(out_dir)
    if not args.no_ledger:
        ledger = RunLedger(args.ledger or os.getenv('RUN_LEDGER_FILE', 'ns_lab_runs.db'))
        run_id = ledger.record_run(manifest, out_dir)
        for report in reports or []:
            ledger.record_check(run_id, report)
    return manifest.exit_code


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    started = time.perf_counter()
    config = load_run_config(args.config, {'seed': args.seed})
    out_dir = args.out or config.out
    keep_fields = bool(config.snapshot_times) or config.field_archive

    traj = run(config, keep_fields=keep_fields)
    solve_seconds = time.perf_counter() - started

    artifacts = {'trajectory': TRAJECTORY_FILE}
    write_trajectory_csv(traj, os.path.join(out_dir, TRAJECTORY_FILE))

    label = config.resolved_scheme().label()
    times = traj.times
    for i, target in enumerate(config.snapshot_times):
        j = int(abs(times - target).argmin())
        name = f"snapshot_{i:02d}.txt"
        write_snapshot(os.path.join(out_dir, name), traj.samples[j].field, times[j], label)
        artifacts[f'snapshot_{i:02d}'] = name
    if config.field_archive:
        write_field_archive(os.path.join(out_dir, FIELD_ARCHIVE_FILE), traj)
        artifacts['fields'] = FIELD_ARCHIVE_FILE

    exit_code = EXIT_BLOWUP if traj.truncated else EXIT_OK
    rollup = {
        'samples': len(traj),
        'final_time': float(times[-1]),
        'blowup': traj.truncated,
        'blowup_time': traj.blowup_time,
        'blowup_reason': traj.blowup_reason,
    }
    manifest = RunManifest('simulate', config.to_mapping(), artifacts,
                           {'solve_seconds': round(solve_seconds, 6)}, rollup, exit_code)
    Logger.info(f"💾 Trajectory written to {os.path.join(out_dir, TRAJECTORY_FILE)}")
    return _finish(args, manifest, out_dir, started)


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------

def parse_checks(text: str, has_archive: bool) -> List[str]:
    names = [s.strip().lower() for s in (text or DEFAULT_CHECKS).split(',') if s.strip()]
    if names == ['all']:
        return [n for n in CHECK_NAMES if n != 'weak' or has_archive]
    unknown = [n for n in names if n not in CHECK_NAMES]
    if unknown:
        raise ValueError(f"unknown check {', '.join(repr(n) for n in unknown)} (known: {', '.join(CHECK_NAMES)})")
    if 'weak' in names and not has_archive:
        raise FileNotFoundError(f"check 'weak' needs the field archive {FIELD_ARCHIVE_FILE} next to the trajectory")
    return list(dict.fromkeys(names))


def run_check(name: str, traj, args) -> InequalityReport:
    if name == 'energy':
        return energy_check(traj)
    if name == 'ds':
        return ds_bound_check(traj, c=args.c)
    if name == 'ddn':
        return ddn_residual(traj)
    if name == 'dn':
        return dn_identity_check(traj)
    if name == 'ddn_agmon':
        return ddn_agmon_check(traj, c=args.c)
    if name == 'agmon':
        return agmon_check(traj, c=args.c)
    fields = traj.fields()
    scheme = traj.scheme()
    horizon = float(traj.times[-1] - traj.times[0])
    tests = random_test_set(fields[0].N, args.weak_tests, horizon, seed=args.seed or 0,
                            cutoff=scheme.cutoff if scheme.kind == 'galerkin' else None)
    return weak_form_residual(traj, tests)


def cmd_verify(args) -> int:
    started = time.perf_counter()
    path = args.trajectory
    if not os.path.isfile(path):
        raise FileNotFoundError(f"trajectory artifact not found: {path}")
    traj_dir = os.path.dirname(os.path.abspath(path))
    config = load_manifest_config(traj_dir)
    traj = read_trajectory_csv(path, config)

    archive = os.path.join(traj_dir, FIELD_ARCHIVE_FILE)
    checks = parse_checks(args.checks, os.path.isfile(archive))
    if 'weak' in checks:
        traj = attach_fields(traj, archive)

    out_dir = args.out or os.path.join(traj_dir, 'verify')
    Logger.info(f"🔍 Verifying {path}: {', '.join(checks)}")
    reports = []
    for name in checks:
        report = run_check(name, traj, args)
        report.log()
        series_file = f"{name}_series.csv"
        write_frame_csv(report.series_frame(), os.path.join(out_dir, series_file))
        summary = report.to_dict(series_file)
        write_json(os.path.join(out_dir, f"{name}.json"), summary)
        reports.append(summary)

    all_pass = all(r['pass'] for r in reports)
    write_json(os.path.join(out_dir, 'verify_summary.json'),
               {'trajectory': os.path.basename(path), 'pass': all_pass,
                'checks': {r['name']: r['status'] for r in reports}})
    if all_pass:
        Logger.success(f"✅ All {len(reports)} checks passed")
    else:
        Logger.error(f"❌ Failed checks: {', '.join(r['name'] for r in reports if not r['pass'])}")

    manifest = RunManifest('verify', config.to_mapping() if config else {},
                           {r['name']: f"{r['name']}.json" for r in reports}, {},
                           {'pass': all_pass, 'checks': {r['name']: r['status'] for r in reports}},
                           EXIT_OK if all_pass else EXIT_CONTRADICTION)
    return _finish(args, manifest, out_dir, started, reports)


# ---------------------------------------------------------------------------
# epochs
# ---------------------------------------------------------------------------

def cmd_epochs(args) -> int:
    started = time.perf_counter()
    path = args.trajectory
    if not os.path.isfile(path):
        raise FileNotFoundError(f"trajectory artifact not found: {path}")
    traj_dir = os.path.dirname(os.path.abspath(path))
    config = load_manifest_config(traj_dir)
    traj = read_trajectory_csv(path, config)

    eta = args.eta if args.eta is not None else (config.eta if config else DEFAULT_ETA)
    if not eta > 0:
        raise ValueError(f"--eta must be positive, got {eta}")
    flags = None
    if args.flags:
        if not os.path.isfile(args.flags):
            raise FileNotFoundError(f"convergence flags not found: {args.flags}")
        flags = pd.read_csv(args.flags)
    c = resolve_agmon_constant(traj, args.c)
    out_dir = args.out or os.path.join(traj_dir, 'epochs')

    rollup = {'eta': eta, 'c': c}
    try:
        report = analyze_epochs(traj, eta, c, flags, extend=not args.no_extend)
        exit_code = EXIT_OK
    except HorizonTooShort as e:
        Logger.error(f"❌ {e}")
        Logger.error(f"   Re-run with T >= {e.required:.6g}")
        rollup.update({'required_T': e.required, 'available_T': e.available})
        manifest = RunManifest('epochs', config.to_mapping() if config else {}, {}, {}, rollup, EXIT_USAGE)
        return _finish(args, manifest, out_dir, started)
    except PigeonholeContradiction as e:
        Logger.error(f"❌ {e}")
        rollup['contradiction'] = str(e)
        manifest = RunManifest('epochs', config.to_mapping() if config else {}, {}, {}, rollup, EXIT_CONTRADICTION)
        return _finish(args, manifest, out_dir, started)

    write_json(os.path.join(out_dir, 'epochs.json'), report.to_dict())
    table = report.format_table()
    atomic_write_text(os.path.join(out_dir, 'epochs.txt'), table + '\n')
    print(table)

    rollup.update({'theta': report.theta, 't_m': report.t_m, 'epochs': len(report.epochs),
                   'uncovered_measure': report.uncovered_measure,
                   'global_bound_holds': report.global_bound_holds})
    manifest = RunManifest('epochs', config.to_mapping() if config else {},
                           {'report': 'epochs.json', 'table': 'epochs.txt'}, {}, rollup, exit_code)
    return _finish(args, manifest, out_dir, started)


# ---------------------------------------------------------------------------
# converge
# ---------------------------------------------------------------------------

def parse_levels(text: str) -> List[float]:
    try:
        return [float(s) for s in str(text).split(',') if s.strip()]
    except ValueError:
        raise ValueError(f"--levels must be a comma-separated list of numbers, got {text!r}") from None


def cmd_converge(args) -> int:
    started = time.perf_counter()
    config = load_run_config(args.config, {'seed': args.seed})
    levels = parse_levels(args.levels)
    out_dir = args.out or os.path.join(config.out, 'converge')

    report = convergence_sweep(config, levels, max_parallel=_thread_count(), cross_family_m=args.cross_family)
    write_json(os.path.join(out_dir, 'convergence.json'), report.to_dict())
    write_frame_csv(report.flags_frame(), os.path.join(out_dir, 'convergence_flags.csv'))

    if report.truncated:
        exit_code = EXIT_BLOWUP
    elif report.holds:
        exit_code = EXIT_OK
    else:
        exit_code = EXIT_CONTRADICTION
    rollup = {'holds': report.holds, 'lhs_nonincreasing': report.lhs_nonincreasing,
              'converged_samples': int(report.converged.sum()), 'samples': int(report.converged.size),
              'blowups': {repr(k): v for k, v in report.blowups.items()}}
    manifest = RunManifest('converge', config.to_mapping(),
                           {'report': 'convergence.json', 'flags': 'convergence_flags.csv'}, {}, rollup, exit_code)
    return _finish(args, manifest, out_dir, started)


# ---------------------------------------------------------------------------
# estimate-constant
# ---------------------------------------------------------------------------

def cmd_estimate_constant(args) -> int:
    started = time.perf_counter()
    estimate = estimate_agmon_constant(args.N, args.trials, args.seed if args.seed is not None else 1)
    margin = args.margin
    out_dir = args.out or 'agmon_estimate'
    summary = estimate.to_dict(margin)
    write_json(os.path.join(out_dir, 'agmon.json'), summary)
    Logger.success(f"✅ ĉ = {estimate.c_hat:.6f}, calibrated c = {summary['c']:.6f} (margin {margin:g})")
    manifest = RunManifest('estimate-constant', {'N': str(args.N), 'trials': str(args.trials),
                                                 'seed': str(estimate.seed), 'margin': repr(margin)},
                           {'report': 'agmon.json'}, {}, {'c_hat': estimate.c_hat, 'c': summary['c']}, EXIT_OK)
    return _finish(args, manifest, out_dir, started)


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> LabArgumentParser:
    common = LabArgumentParser(add_help=False)
    common.add_argument('--out', type=str, help='Output directory')
    common.add_argument('--ledger', type=str, help='SQLite run ledger file (default $RUN_LEDGER_FILE)')
    common.add_argument('--no-ledger', action='store_true', help='Do not record the run in the ledger')
    common.add_argument('--log-dir', type=str, help='Log directory (default $LOG_DIR or logs)')
    common.add_argument('--seed', type=int, help='Seed override')

    parser = LabArgumentParser(prog='ns_lab', description='Spectral Navier-Stokes a-priori-estimate lab')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('simulate', parents=[common], help='Integrate one configuration')
    p.add_argument('--config', required=True, help='key=value run configuration')
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser('verify', parents=[common], help='Check a-priori estimates on a trajectory')
    p.add_argument('--trajectory', required=True, help='trajectory.csv written by simulate')
    p.add_argument('--checks', default=DEFAULT_CHECKS, help=f"Comma list or 'all' (default {DEFAULT_CHECKS})")
    p.add_argument('--c', type=float, help='Agmon-derived constant (default: calibrated)')
    p.add_argument('--weak-tests', type=int, default=DEFAULT_WEAK_TESTS, help='Number of weak-form test modes')
    p.set_defaults(handler=cmd_verify)

    p = sub.add_parser('epochs', parents=[common], help='Pigeonhole time, Riccati bound and epoch cover')
    p.add_argument('--trajectory', required=True, help='trajectory.csv written by simulate')
    p.add_argument('--flags', help='convergence_flags.csv from converge (default: all samples valid)')
    p.add_argument('--eta', type=float, help=f'Pigeonhole parameter (default config eta or {DEFAULT_ETA})')
    p.add_argument('--c', type=float, help='Agmon-derived constant (default: calibrated)')
    p.add_argument('--no-extend', action='store_true',
                   help='Report only the guaranteed local intervals, no maximal extension')
    p.set_defaults(handler=cmd_epochs)

    p = sub.add_parser('converge', parents=[common], help='Cauchy diagnostics across levels')
    p.add_argument('--config', required=True, help='key=value run configuration')
    p.add_argument('--levels', required=True, help='Comma list of >= 3 increasing cutoffs or mollifier indices')
    p.add_argument('--cross-family', type=float, help='Also compare Galerkin(finest) with mollified(m=M)')
    p.set_defaults(handler=cmd_converge)

    p = sub.add_parser('estimate-constant', parents=[common], help='Calibrate the Agmon constant')
    p.add_argument('-N', type=int, required=True, help='Resolution')
    p.add_argument('--trials', type=int, default=200, help='Random fields sampled')
    p.add_argument('--margin', type=float, default=DEFAULT_AGMON_MARGIN, help='c = ĉ(1 + margin)')
    p.set_defaults(handler=cmd_estimate_constant)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    load_environment()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        Logger.error(f"❌ {e}")
        parser.print_usage()
        return EXIT_USAGE

    Logger.init_file_logging(args.log_dir)
    set_fft_workers(_thread_count())
    try:
        return args.handler(args)
    except ConfigError as e:
        Logger.error(f"❌ Invalid configuration ({', '.join(e.keys)}): {e}")
        return EXIT_USAGE
    except TrajectoryFormatError as e:
        Logger.error(f"❌ Bad trajectory artifact: {e}")
        return EXIT_USAGE
    except BlowUpError as e:
        Logger.error(f"💥 {e}")
        return EXIT_BLOWUP
    except (FileNotFoundError, ValueError) as e:
        Logger.error(f"❌ {e}")
        return EXIT_USAGE
    except Exception as e:
        Logger.error(f"❌ Unexpected error: {e}")
        Logger.error(traceback.format_exc())
        return EXIT_USAGE
    finally:
        Logger.close()


if __name__ == "__main__":
    sys.exit(main())
