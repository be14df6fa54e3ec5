"""Command-line entry point: train -> translate -> run -> sweep -> report.

Exit codes: 0 success, 1 domain error (message names the failing module
and parameter), 2 usage error.  Every run writes a ``manifest.txt`` under
the output directory recording the resolved configuration and seeds, so
any artifact can be reproduced from its manifest alone.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__, experiments, maze, metrics, qnet, snn

_DOMAIN_ERRORS = (
    maze.MazeError,
    qnet.QNetError,
    snn.SnnError,
    metrics.MetricsError,
    experiments.ExperimentError,
    OSError,
)


def _resolve_out_dir(args) -> Path:
    out = args.out_dir or os.environ.get("NEUROSTRIKE_OUT")
    if not out:
        raise UsageError("no output directory: pass --out-dir or set NEUROSTRIKE_OUT")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


class UsageError(Exception):
    pass


def _write_manifest(out_dir: Path, subcommand: str, entries: dict) -> None:
    import numba

    lines = [
        f"subcommand={subcommand}",
        f"package_version={__version__}",
        f"numpy_version={np.__version__}",
        f"numba_version={numba.__version__}",
    ]
    for key, value in entries.items():
        lines.append(f"{key}={value}")
    (out_dir / "manifest.txt").write_text("\n".join(lines) + "\n")


def _load_maze(args) -> maze.MazeGrid:
    if getattr(args, "maze", None):
        return maze.load_maze(args.maze)
    return maze.default_maze()


def _write_spikes(rec: metrics.SpikeRecord, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["neuron_id", "time_ms"])
        for nid, t in zip(rec.neuron_ids, rec.times_ms):
            writer.writerow([int(nid), repr(float(t))])


def _read_spikes(path: Path, duration_ms: float, n_neurons: int) -> metrics.SpikeRecord:
    ids, times = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            ids.append(int(row["neuron_id"]))
            times.append(float(row["time_ms"]))
    return metrics.SpikeRecord(
        neuron_ids=np.array(ids, dtype=np.int64),
        times_ms=np.array(times),
        duration_ms=duration_ms,
        n_neurons=n_neurons,
    )


def _attack_plans(args, clock: snn.RunClock) -> list[snn.AttackPlan]:
    if args.attack == "none":
        return []
    targets = experiments.sample_targets(args.n_neurons, 0, args.targets_seed)
    if args.attack == "jam":
        return [snn.make_jam_plan(targets, args.first_pos, args.n_pos, clock)]
    return [snn.make_flo_plan(targets, args.first_pos, args.vi, clock)]


# ---------------------------------------------------------------------------
# subcommand handlers


def _cmd_train(args) -> int:
    out_dir = _resolve_out_dir(args)
    grid = _load_maze(args)
    cfg = qnet.TrainConfig(seed=args.seed)
    net = qnet.train(grid, cfg)
    weights_path = out_dir / "weights.txt"
    qnet.save_weights(net, weights_path)
    (out_dir / "maze.txt").write_text(maze.format_maze(grid))
    _write_manifest(out_dir, "train", {"seed": args.seed, "maze": args.maze or "<default>",
                                       "weights": weights_path.name, **asdict(cfg)})
    episode = qnet.play_episode(net, grid, grid.start)
    print(f"trained: start playout {episode.steps} steps, success={episode.success}")
    return 0


def _cmd_translate(args) -> int:
    out_dir = _resolve_out_dir(args)
    net = qnet.load_weights(args.weights)
    bio = snn.translate(net, args.gain)
    topo_path = out_dir / "topology.csv"
    bio.dump_topology(topo_path)
    _write_manifest(out_dir, "translate", {
        "weights": args.weights, "gain": repr(bio.gain),
        "n_neurons": bio.n_neurons, "n_synapses": bio.n_synapses,
    })
    print(f"translated: {bio.n_neurons} neurons, {bio.n_synapses} synapses, gain={bio.gain:.6g}")
    return 0


def _cmd_run_bio(args) -> int:
    out_dir = _resolve_out_dir(args)
    grid = _load_maze(args)
    net = qnet.load_weights(args.weights)
    bio = snn.translate(net, args.gain)
    schedule = snn.build_stimulus(grid, maze.shortest_path(grid))
    clock = snn.RunClock(dt=args.dt)
    plans = _attack_plans(args, clock)
    rec = snn.run(bio, schedule, plans, clock)
    _write_spikes(rec, out_dir / "spikes.csv")
    n_spikes = metrics.count_spikes(rec)
    dispersion = metrics.temporal_dispersion(rec)
    (out_dir / "metrics.txt").write_text(
        f"n_spikes={n_spikes}\ndispersion_pct={dispersion!r}\n"
    )
    _write_manifest(out_dir, "run-bio", {
        "weights": args.weights, "maze": args.maze or "<default>",
        "attack": args.attack, "targets_seed": args.targets_seed,
        "n_neurons": args.n_neurons, "first_pos": args.first_pos,
        "n_pos": args.n_pos, "vi": args.vi, "dt": args.dt, "gain": repr(bio.gain),
    })
    print(f"bio run: {n_spikes} spikes, dispersion {dispersion:.3f}%")
    return 0


def _cmd_run_cnn(args) -> int:
    out_dir = _resolve_out_dir(args)
    grid = _load_maze(args)
    net = qnet.load_weights(args.weights)
    if args.attack == "none":
        overrides, activation = qnet.EMPTY_OVERRIDES, qnet.ALWAYS
    else:
        targets = experiments.sample_targets(args.n_neurons, 0, args.targets_seed)
        if args.attack == "jam":
            overrides, activation = qnet.jam_overrides(targets), qnet.ALWAYS
        else:
            overrides = qnet.flo_overrides(targets, args.importance)
            activation = qnet.FromPathIndex(args.first_pos)
    episode = qnet.play_episode(net, grid, grid.start, overrides, activation, cap=args.cap)
    (out_dir / "episode.txt").write_text(
        f"steps={episode.steps}\nsuccess={int(episode.success)}\n"
        + "trajectory=" + " ".join(f"{p.row},{p.col}" for p in episode.trajectory) + "\n"
    )
    _write_manifest(out_dir, "run-cnn", {
        "weights": args.weights, "maze": args.maze or "<default>",
        "attack": args.attack, "targets_seed": args.targets_seed,
        "n_neurons": args.n_neurons, "first_pos": args.first_pos,
        "importance": args.importance, "cap": args.cap,
    })
    print(f"cnn run: {episode.steps} steps, success={episode.success}")
    return 0


def _sweep_config(args, kind: str) -> experiments.SweepConfig:
    if kind == "jam":
        cfg = experiments.default_jam_config(quick=args.quick, master_seed=args.seed)
    else:
        cfg = experiments.default_flo_config(quick=args.quick, master_seed=args.seed)
    if args.config:
        overrides = json.loads(Path(args.config).read_text())
        tuple_fields = {"neuron_counts", "positions", "amplitudes"}
        clean = {}
        for key, value in overrides.items():
            if key in tuple_fields:
                clean[key] = tuple(tuple(v) if isinstance(v, list) else v for v in value)
            else:
                clean[key] = value
        cfg = replace(cfg, **clean)
    return cfg


def _config_entries(cfg: experiments.SweepConfig) -> dict:
    return {k: v for k, v in asdict(cfg).items()}


def _cmd_sweep(args, kind: str) -> int:
    out_dir = _resolve_out_dir(args)
    grid = _load_maze(args)
    net = qnet.load_weights(args.weights)
    cfg = _sweep_config(args, kind)
    results = experiments.run_sweep(grid, net, cfg, jobs=args.jobs)
    experiments.persist(results, out_dir / "results.csv")
    manifest = {"weights": args.weights, "maze": args.maze or "<default>",
                "quick": int(args.quick), "jobs": args.jobs, **_config_entries(cfg)}

    if kind == "flo":
        try:
            report = experiments.correlate(results, experiments.FLO_REPORT_FEATURES)
            report.write_csv(out_dir / "correlation.csv")
        except metrics.DegenerateVarianceError:
            manifest["correlation"] = "degenerate (constant column)"
        cnn_rows = [r for r in results if r.scenario == experiments.SCENARIO_CNN]
        try:
            ss = experiments.correlate(cnn_rows, ("steps", "success"))
            ss.write_csv(out_dir / "correlation_steps_success.csv")
        except metrics.DegenerateVarianceError:
            manifest["steps_success_correlation"] = "degenerate (constant column)"
    elif not args.quick:
        # cross-scenario comparison uses small target sets, where CNN
        # steps still vary, with the full path under attack
        corr_cfg = replace(
            cfg,
            neuron_counts=experiments.JAM_CORRELATION_NEURON_COUNTS,
            positions=(27,),
        )
        corr_results = experiments.run_sweep(grid, net, corr_cfg, jobs=args.jobs)
        experiments.persist(corr_results, out_dir / "results_correlation.csv")
        try:
            report = experiments.correlate(corr_results, experiments.JAM_REPORT_FEATURES)
            report.write_csv(out_dir / "correlation.csv")
        except metrics.DegenerateVarianceError:
            manifest["correlation"] = "degenerate (constant column)"

    _write_manifest(out_dir, f"sweep-{kind}", manifest)
    print(f"sweep-{kind}: {len(results)} result rows -> {out_dir}")
    return 0


def _cmd_report(args) -> int:
    out_dir = _resolve_out_dir(args)
    results = experiments.load_results(args.results)
    features = (
        experiments.JAM_REPORT_FEATURES if args.kind == "jam"
        else experiments.FLO_REPORT_FEATURES
    )
    report = experiments.correlate(results, features)
    report.write_csv(out_dir / "correlation.csv")
    _write_manifest(out_dir, "report", {"results": args.results, "kind": args.kind})
    print(f"report: {len(features)}x{len(features)} correlation matrix -> {out_dir}")
    return 0


def _cmd_export_raster(args) -> int:
    out_dir = _resolve_out_dir(args)
    attacked = _read_spikes(Path(args.attacked), args.duration_ms, args.n_neurons)
    baseline = _read_spikes(Path(args.baseline), args.duration_ms, args.n_neurons)
    metrics.export_raster(attacked, baseline, out_dir / "raster.csv")
    _write_manifest(out_dir, "export-raster", {
        "attacked": args.attacked, "baseline": args.baseline,
        "duration_ms": args.duration_ms, "n_neurons": args.n_neurons,
    })
    print(f"raster -> {out_dir / 'raster.csv'}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="neurostrike",
        description="Neuronal jamming/flooding attack simulations over a "
        "maze-solving CNN and its spiking twin",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p, weights=False):
        p.add_argument("--out-dir", help="output directory (or NEUROSTRIKE_OUT)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--maze", help="maze text file (default: built-in layout)")
        if weights:
            p.add_argument("--weights", required=True, help="qnet-v1 weight file")

    p = sub.add_parser("train", help="train the maze-solving Q-network")
    common(p)

    p = sub.add_parser("translate", help="convert trained weights to the spiking network")
    common(p, weights=True)
    p.add_argument("--gain", type=float, default=None, help="synaptic gain (default: normalize max jump to 1 mV)")

    p = sub.add_parser("run-bio", help="one spiking-network simulation")
    common(p, weights=True)
    p.add_argument("--attack", choices=["jam", "flo", "none"], default="none")
    p.add_argument("--targets-seed", type=int, default=0)
    p.add_argument("--n-neurons", type=int, default=5)
    p.add_argument("--first-pos", type=int, default=1)
    p.add_argument("--n-pos", type=int, default=1)
    p.add_argument("--vi", type=float, default=40.0)
    p.add_argument("--dt", type=float, default=0.1)
    p.add_argument("--gain", type=float, default=None)

    p = sub.add_parser("run-cnn", help="one greedy maze playout under attack")
    common(p, weights=True)
    p.add_argument("--attack", choices=["jam", "flo", "none"], default="none")
    p.add_argument("--targets-seed", type=int, default=0)
    p.add_argument("--n-neurons", type=int, default=5)
    p.add_argument("--first-pos", type=int, default=1)
    p.add_argument("--importance", type=float, default=60.0, help="FLO scaling percentage")
    p.add_argument("--cap", type=int, default=200)

    for kind in ("jam", "flo"):
        p = sub.add_parser(f"sweep-{kind}", help=f"full {kind.upper()} sweep over both scenarios")
        common(p, weights=True)
        p.add_argument("--config", help="JSON file overriding sweep config fields")
        p.add_argument("--quick", action="store_true", help="3 executions, reduced grid")
        p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("report", help="correlation report from an existing results CSV")
    p.add_argument("--out-dir", help="output directory (or NEUROSTRIKE_OUT)")
    p.add_argument("--results", required=True)
    p.add_argument("--kind", choices=["jam", "flo"], required=True)

    p = sub.add_parser("export-raster", help="diff two spike CSVs into a tagged raster")
    p.add_argument("--out-dir", help="output directory (or NEUROSTRIKE_OUT)")
    p.add_argument("--attacked", required=True)
    p.add_argument("--baseline", required=True)
    p.add_argument("--duration-ms", type=float, default=27000.0)
    p.add_argument("--n-neurons", type=int, default=qnet.N_NODES)

    return parser


_HANDLERS = {
    "train": _cmd_train,
    "translate": _cmd_translate,
    "run-bio": _cmd_run_bio,
    "run-cnn": _cmd_run_cnn,
    "sweep-jam": lambda a: _cmd_sweep(a, "jam"),
    "sweep-flo": lambda a: _cmd_sweep(a, "flo"),
    "report": _cmd_report,
    "export-raster": _cmd_export_raster,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        return _HANDLERS[args.subcommand](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except _DOMAIN_ERRORS as exc:
        print(f"error [{type(exc).__module__.rsplit('.', 1)[-1]}.{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
