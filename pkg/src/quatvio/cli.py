"""Command-line front door: simulate, run, evaluate, compare, bench, sweep.

Every subcommand resolves its configuration the same way (defaults, then
config file, then QUATVIO_* environment variables, then --set overrides,
then dedicated flags), writes its outputs into --out, and drops a
manifest.json recording the resolved configuration and the produced
files. Exit codes group failures by kind: 2 for data problems, 3 for
configuration problems, 4 for numerical failures, 1 for anything else.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from . import __version__
from . import io as qio
from .config import dump_flat, resolve_config
from .errors import (
    ConfigError,
    DataError,
    DegenerateAlignmentError,
    DivergenceError,
    EmptyAssociationError,
    InsufficientDataError,
    InvalidInputError,
    InvalidStepError,
    NumericalError,
    QuatvioError,
)
from .evaluation import evaluate_trajectories, metric_correlation
from .filtering import FilterMode
from .pipeline import (
    BENCH_FIELDS,
    SWEEP_FIELDS,
    VO_LOG_FIELDS,
    ComparisonReport,
    bench_propagation,
    compare_modes,
    evaluate_run,
    run_pipeline,
    sweep,
    write_comparison,
)
from .simulate import (
    EPISODE_KINDS,
    TRAJECTORY_FAMILIES,
    CorruptionEpisode,
    ScenarioSpec,
    simulate,
)

REPORT_FIELDS = [
    "n_pairs",
    "ate_rmse",
    "rmse_x",
    "rmse_y",
    "rmse_z",
    "quat_rmse_deg",
    "roll_rmse_deg",
    "pitch_rmse_deg",
    "yaw_rmse_deg",
    "roll_rmse_raw_deg",
    "pitch_rmse_raw_deg",
    "yaw_rmse_raw_deg",
    "euler_unreliable",
    "aligned",
]

SUMMARY_FIELDS = [
    "mode",
    "n_propagations",
    "n_visual",
    "n_zupt",
    "n_gravity",
    "n_rejected",
    "diverged",
]

TIMING_RUN_FIELDS = ["mode", "total_s", "propagation_s", "update_s", "rtf"]


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="config file of key = value lines")
    parser.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override one config key (repeatable)",
    )
    parser.add_argument("--out", required=True, help="output directory for this run")
    parser.add_argument("--seed", type=int, help="seed recorded in the manifest")
    parser.add_argument(
        "--mode",
        choices=[m.value for m in FilterMode],
        help="filter mode (overrides config)",
    )


def _resolve(args) -> "RunConfig":
    cfg = resolve_config(file_path=args.config, cli_sets=args.set)
    if getattr(args, "mode", None):
        cfg.mode = FilterMode(args.mode)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg.validate()


def _write_manifest(out_dir: str, command: str, cfg, inputs: dict, outputs: dict) -> str:
    manifest = {
        "command": command,
        "version": __version__,
        "config": dump_flat(cfg),
        "seed": cfg.seed,
        "inputs": {k: str(v) for k, v in sorted(inputs.items())},
        "outputs": {k: os.path.basename(str(v)) for k, v in sorted(outputs.items())},
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _parse_episode(text: str) -> CorruptionEpisode:
    parts = text.split(":")
    if len(parts) not in (3, 4):
        raise ConfigError(
            f"--corrupt expects start:end:kind[:magnitude], got {text!r}"
        )
    try:
        start, end = float(parts[0]), float(parts[1])
        magnitude = float(parts[3]) if len(parts) == 4 else 10.0
    except ValueError as exc:
        raise ConfigError(f"bad numbers in --corrupt {text!r}") from exc
    kind = parts[2]
    if kind not in EPISODE_KINDS:
        raise ConfigError(f"unknown corruption kind {kind!r}; choose from {EPISODE_KINDS}")
    return CorruptionEpisode(start=start, end=end, kind=kind, magnitude=magnitude)


def _scenario_from_args(args, cfg) -> ScenarioSpec:
    return ScenarioSpec(
        trajectory=args.scenario,
        duration=args.duration,
        imu_rate=args.imu_rate,
        vo_rate=args.vo_rate,
        noise=cfg.noise,
        vo_sigma_p=args.vo_sigma_p,
        vo_sigma_v=args.vo_sigma_v,
        noise_scale=args.noise_scale,
        corruption=[_parse_episode(c) for c in args.corrupt],
        seed=cfg.seed,
    )


def _add_scenario_args(parser, required: bool) -> None:
    parser.add_argument(
        "--scenario",
        choices=TRAJECTORY_FAMILIES,
        required=required,
        default=None if required else "figure8",
    )
    parser.add_argument("--duration", type=float, default=60.0)
    parser.add_argument("--imu-rate", type=float, default=200.0)
    parser.add_argument("--vo-rate", type=float, default=10.0)
    parser.add_argument("--vo-sigma-p", type=float, default=0.02)
    parser.add_argument("--vo-sigma-v", type=float, default=0.05)
    parser.add_argument("--noise-scale", type=float, default=1.0)
    parser.add_argument(
        "--corrupt",
        action="append",
        default=[],
        metavar="START:END:KIND[:MAG]",
        help="corruption episode on the visual stream (repeatable)",
    )


def _load_bundle_args(args) -> qio.SequenceBundle:
    if args.bundle:
        return qio.load_bundle(args.bundle)
    if not args.imu:
        raise ConfigError("provide either --bundle or --imu (with optional --gt/--vo)")
    gt = qio.load_ground_truth(args.gt) if args.gt else []
    vo = qio.load_vo_replay(args.vo) if args.vo else []
    return qio.SequenceBundle(
        name=os.path.basename(args.imu),
        imu=qio.load_euroc_imu(args.imu),
        ground_truth=gt,
        vo=vo,
    )


def _add_bundle_args(parser) -> None:
    parser.add_argument("--bundle", help="directory with imu.csv/ground_truth.csv/vo.csv")
    parser.add_argument("--imu", help="IMU csv path (alternative to --bundle)")
    parser.add_argument("--gt", help="reference state csv path")
    parser.add_argument("--vo", help="visual replay csv path")


def _report_rows(report) -> list[dict]:
    return [dataclasses.asdict(report)]


def cmd_simulate(args) -> int:
    cfg = _resolve(args)
    spec = _scenario_from_args(args, cfg)
    bundle = simulate(spec)
    os.makedirs(args.out, exist_ok=True)
    paths = qio.save_bundle(args.out, bundle)
    _write_manifest(
        args.out,
        "simulate",
        cfg,
        {"scenario": spec.trajectory, "duration": spec.duration},
        paths,
    )
    print(
        f"simulated {bundle.name}: {len(bundle.imu)} imu, "
        f"{len(bundle.ground_truth)} reference, {len(bundle.vo)} visual samples -> {args.out}"
    )
    return 0


def cmd_run(args) -> int:
    cfg = _resolve(args)
    bundle = _load_bundle_args(args)
    result = run_pipeline(bundle, cfg)
    os.makedirs(args.out, exist_ok=True)
    outputs = {}

    traj_path = os.path.join(args.out, "trajectory.csv")
    qio.write_trajectory(traj_path, result.trajectory)
    outputs["trajectory"] = traj_path

    vo_log_path = os.path.join(args.out, "vo_log.csv")
    qio.write_csv_rows(vo_log_path, VO_LOG_FIELDS, result.vo_log)
    outputs["vo_log"] = vo_log_path

    summary_path = os.path.join(args.out, "summary.csv")
    qio.write_csv_rows(
        summary_path,
        SUMMARY_FIELDS,
        [
            {
                "mode": result.mode.value,
                "n_propagations": result.n_propagations,
                "n_visual": result.n_visual,
                "n_zupt": result.n_zupt,
                "n_gravity": result.n_gravity,
                "n_rejected": result.n_rejected,
                "diverged": result.diverged,
            }
        ],
    )
    outputs["summary"] = summary_path

    timing_path = os.path.join(args.out, "timing.csv")
    qio.write_csv_rows(
        timing_path,
        TIMING_RUN_FIELDS,
        [
            {
                "mode": result.mode.value,
                "total_s": result.total_s,
                "propagation_s": result.propagation_s,
                "update_s": result.update_s,
                "rtf": result.rtf(),
            }
        ],
    )
    outputs["timing"] = timing_path

    if bundle.ground_truth:
        report = evaluate_run(result, bundle.ground_truth)
        report_path = os.path.join(args.out, "report.csv")
        qio.write_csv_rows(report_path, REPORT_FIELDS, _report_rows(report))
        outputs["report"] = report_path
        print(
            f"{result.mode.value}: ate {report.ate_rmse:.4f} m, "
            f"attitude {report.quat_rmse_deg:.3f} deg, rtf {result.rtf():.2f}"
            + (" [diverged]" if result.diverged else "")
        )
    else:
        print(f"{result.mode.value}: {result.n_propagations} steps, rtf {result.rtf():.2f}")

    inputs = {
        "bundle": args.bundle or "",
        "imu": args.imu or "",
        "gt": args.gt or "",
        "vo": args.vo or "",
    }
    _write_manifest(args.out, "run", cfg, inputs, outputs)
    if result.diverged:
        raise DivergenceError("filter diverged; partial outputs were written")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _resolve(args)
    est = qio.load_ground_truth(args.est)
    gt = qio.load_ground_truth(args.gt)
    report = evaluate_trajectories(
        est,
        gt,
        max_dt=args.max_dt,
        align=not args.no_align,
        with_scale=args.with_scale,
    )
    os.makedirs(args.out, exist_ok=True)
    report_path = os.path.join(args.out, "report.csv")
    qio.write_csv_rows(report_path, REPORT_FIELDS, _report_rows(report))
    outputs = {"report": report_path}

    if args.vo_log:
        labels, matrix = _vo_log_correlation(args.vo_log, est, gt, args.window)
        corr_path = os.path.join(args.out, "correlation.csv")
        qio.write_correlation_csv(corr_path, labels, matrix)
        outputs["correlation"] = corr_path

    _write_manifest(
        args.out, "evaluate", cfg, {"est": args.est, "gt": args.gt}, outputs
    )
    print(
        f"pairs {report.n_pairs}: ate {report.ate_rmse:.4f} m, "
        f"attitude {report.quat_rmse_deg:.3f} deg"
        + (" [euler unreliable]" if report.euler_unreliable else "")
    )
    return 0


def _vo_log_correlation(vo_log_path, est, gt, window_s: float):
    """Windowed Pearson correlation between logged metrics and ATE."""
    import csv

    import numpy as np

    from .evaluation import align_se3, associate

    with open(vo_log_path, "r", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise InsufficientDataError(f"{vo_log_path}: empty visual log")

    pairs = associate(est, gt)
    try:
        alignment = align_se3(pairs)
    except DegenerateAlignmentError:
        alignment = None
    times = np.array([a.t for a, _ in pairs], dtype=np.int64)
    p_est = np.array([a.p for a, _ in pairs])
    p_ref = np.array([b.p for _, b in pairs])
    if alignment is not None:
        r, t, s = alignment
        p_est = s * (p_est @ r.T) + t
    err = np.linalg.norm(p_est - p_ref, axis=1)

    metric_names = ["intensity", "entropy", "blur", "pose_chi2", "culled_kf", "projection_error"]
    t0 = int(times[0])
    span = max(int(times[-1]) - t0, 1)
    width = max(int(round(window_s * 1e9)), 1)
    n_win = max(span // width, 1)

    window_ate: list[float] = []
    metrics: dict[str, list[float]] = {name: [] for name in metric_names}
    for w in range(n_win):
        lo = t0 + w * width
        hi = lo + width
        sel = (times >= lo) & (times < hi)
        in_rows = [
            row for row in rows if lo <= int(row["t"]) < hi
        ]
        if not np.any(sel) or not in_rows:
            continue
        window_ate.append(float(np.sqrt((err[sel] ** 2).mean())))
        for name in metric_names:
            metrics[name].append(float(np.mean([float(r[name]) for r in in_rows])))
    return metric_correlation(metrics, window_ate)


def cmd_compare(args) -> int:
    cfg = _resolve(args)
    if args.bundle or args.imu:
        bundle = _load_bundle_args(args)
    else:
        if not args.scenario:
            raise ConfigError("compare needs --bundle, --imu, or --scenario")
        bundle = simulate(_scenario_from_args(args, cfg))
    report: ComparisonReport = compare_modes(bundle, cfg, jobs=args.jobs)
    os.makedirs(args.out, exist_ok=True)
    paths = write_comparison(args.out, report)
    _write_manifest(
        args.out,
        "compare",
        cfg,
        {"bundle": args.bundle or "", "scenario": args.scenario or ""},
        paths,
    )
    for name, rep in report.reports.items():
        flag = " [diverged]" if report.diverged[name] else ""
        print(
            f"{name:>20s}: ate {rep.ate_rmse:.4f} m, attitude {rep.quat_rmse_deg:.3f} deg{flag}"
        )
    print(f"timing ordering eskf < hybrid < full_sukf: {report.timing_ordering_ok}")
    return 0


def cmd_bench(args) -> int:
    cfg = _resolve(args)
    rows = bench_propagation(args.steps, noise=cfg.noise, sut=cfg.sut, seed=cfg.seed)
    os.makedirs(args.out, exist_ok=True)
    bench_path = os.path.join(args.out, "bench.csv")
    qio.write_csv_rows(bench_path, BENCH_FIELDS, rows)
    _write_manifest(args.out, "bench", cfg, {"steps": args.steps}, {"bench": bench_path})
    for row in rows:
        print(
            f"{row['mode']:>12s}: {row['mean_step_s'] * 1e6:9.1f} us/step "
            f"(p99 {row['p99_step_s'] * 1e6:9.1f} us)"
        )
    return 0


def cmd_sweep(args) -> int:
    cfg = _resolve(args)
    bundle = _load_bundle_args(args)
    grid: dict[str, list[float]] = {}
    for spec in args.param:
        if "=" not in spec:
            raise ConfigError(f"--param expects name=v1,v2,..., got {spec!r}")
        name, _, values = spec.partition("=")
        try:
            grid[name.strip()] = [float(v) for v in values.split(",") if v.strip()]
        except ValueError as exc:
            raise ConfigError(f"bad values in --param {spec!r}") from exc
    rows = sweep(bundle, cfg, grid, strategy=args.strategy, jobs=args.jobs)
    os.makedirs(args.out, exist_ok=True)
    sweep_path = os.path.join(args.out, "sweep.csv")
    qio.write_csv_rows(sweep_path, SWEEP_FIELDS, rows)
    _write_manifest(
        args.out, "sweep", cfg, {"bundle": args.bundle or ""}, {"sweep": sweep_path}
    )
    best = rows[0]
    print(f"best: {best['params']} (ate {best['ate_rmse']:.4f} m over {len(rows)} runs)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="quatvio",
        description="quaternion error-state visual-inertial estimation toolkit",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="generate a synthetic sensor bundle")
    _add_common(p_sim)
    _add_scenario_args(p_sim, required=True)
    p_sim.set_defaults(func=cmd_simulate)

    p_run = sub.add_parser("run", help="run one filter over a bundle")
    _add_common(p_run)
    _add_bundle_args(p_run)
    p_run.set_defaults(func=cmd_run)

    p_eval = sub.add_parser("evaluate", help="compare a trajectory against reference")
    _add_common(p_eval)
    p_eval.add_argument("--est", required=True, help="estimated trajectory csv")
    p_eval.add_argument("--gt", required=True, help="reference trajectory csv")
    p_eval.add_argument("--max-dt", type=float, default=0.005)
    p_eval.add_argument("--no-align", action="store_true")
    p_eval.add_argument("--with-scale", action="store_true")
    p_eval.add_argument("--vo-log", help="vo_log.csv from a run, for metric correlation")
    p_eval.add_argument("--window", type=float, default=2.0, help="correlation window (s)")
    p_eval.set_defaults(func=cmd_evaluate)

    p_cmp = sub.add_parser("compare", help="run all filter modes and tabulate")
    _add_common(p_cmp)
    _add_bundle_args(p_cmp)
    _add_scenario_args(p_cmp, required=False)
    p_cmp.add_argument("--jobs", type=int, default=1)
    p_cmp.set_defaults(func=cmd_compare)

    p_bench = sub.add_parser("bench", help="time pure propagation per mode")
    _add_common(p_bench)
    p_bench.add_argument("--steps", type=int, default=20000)
    p_bench.set_defaults(func=cmd_bench)

    p_sweep = sub.add_parser("sweep", help="search adaptive parameters")
    _add_common(p_sweep)
    _add_bundle_args(p_sweep)
    p_sweep.add_argument(
        "--param",
        action="append",
        default=[],
        required=True,
        metavar="NAME=V1,V2,...",
        help="parameter values to sweep (repeatable)",
    )
    p_sweep.add_argument("--strategy", choices=["ovat", "grid"], default="ovat")
    p_sweep.add_argument("--jobs", type=int, default=1)
    p_sweep.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InvalidInputError, InvalidStepError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 3
    except (
        DataError,
        EmptyAssociationError,
        InsufficientDataError,
        DegenerateAlignmentError,
    ) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, DivergenceError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 4
    except QuatvioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
