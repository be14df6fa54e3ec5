"""Sweep protocols: JAM/FLO attacks over both scenarios, seeded target
sampling, CSV persistence, and cross-scenario correlation reports.

Each sweep cell (attack parameters x execution index) runs the attack
against the biological network (spikes, dispersion) and the CNN (steps,
success) with the *same* sampled node ids — the shared 276-id space is
the bridge between the two scenarios.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import metrics, qnet, snn
from .maze import MazeGrid, format_maze, parse_maze, shortest_path
from .qnet import ALWAYS, FromPathIndex, QNetwork, jam_overrides, flo_overrides, play_episode

SCENARIO_BIO = "bio"
SCENARIO_CNN = "cnn"

N_NODES = qnet.N_NODES

# bio voltage increment (mV) <-> CNN output-importance scaling (%)
FLO_AMPLITUDE_PAIRS = ((10.0, 15.0), (20.0, 30.0), (40.0, 60.0), (60.0, 90.0))
JAM_CLAMP_MV = -65.0
JAM_IMPORTANCE = -1.0

DEFAULT_NEURON_COUNTS = (5, 35, 55, 75, 105)
DEFAULT_POSITIONS = tuple(range(1, 28))
# cross-scenario JAM comparison is restricted to small target sets, where
# the CNN step count still varies
JAM_CORRELATION_NEURON_COUNTS = tuple(range(1, 21))

QUICK_EXECUTIONS = 3
QUICK_NEURON_COUNTS = (5, 35, 75, 105)
QUICK_FLO_POSITIONS = (1, 14, 27)
QUICK_JAM_CONSECUTIVE = (1, 7, 14, 21, 27)


class ExperimentError(Exception):
    pass


@dataclass(frozen=True)
class SweepConfig:
    attack_kind: str  # "jam" | "flo"
    neuron_counts: tuple[int, ...] = DEFAULT_NEURON_COUNTS
    # FLO: attacked path positions; JAM: consecutive-position counts
    positions: tuple[int, ...] = DEFAULT_POSITIONS
    # FLO: (vi mV, importance %) pairs; JAM: fixed clamp/importance
    amplitudes: tuple[tuple[float, float], ...] = FLO_AMPLITUDE_PAIRS
    executions: int = 10
    master_seed: int = 0
    dt: float = 0.1
    cap: int = 200
    gain: float | None = None  # synaptic gain; None = auto-normalize

    def __post_init__(self):
        if self.attack_kind not in ("jam", "flo"):
            raise ExperimentError(f"unknown attack kind {self.attack_kind!r}")
        if self.executions < 1:
            raise ExperimentError("executions must be >= 1")
        if any(not 0 <= n <= N_NODES for n in self.neuron_counts):
            raise ExperimentError(f"neuron counts must be in 0..{N_NODES}")
        if any(not 1 <= p <= 27 for p in self.positions):
            raise ExperimentError("positions must be in 1..27")


def default_jam_config(quick: bool = False, master_seed: int = 0) -> SweepConfig:
    cfg = SweepConfig(
        attack_kind="jam",
        amplitudes=((JAM_CLAMP_MV, JAM_IMPORTANCE),),
        master_seed=master_seed,
    )
    if quick:
        cfg = replace(
            cfg,
            neuron_counts=QUICK_NEURON_COUNTS,
            positions=QUICK_JAM_CONSECUTIVE,
            executions=QUICK_EXECUTIONS,
        )
    return cfg


def default_flo_config(quick: bool = False, master_seed: int = 0) -> SweepConfig:
    cfg = SweepConfig(attack_kind="flo", master_seed=master_seed)
    if quick:
        cfg = replace(
            cfg,
            neuron_counts=QUICK_NEURON_COUNTS,
            positions=QUICK_FLO_POSITIONS,
            amplitudes=((40.0, 60.0),),
            executions=QUICK_EXECUTIONS,
        )
    return cfg


@dataclass(frozen=True)
class RunResult:
    """One scenario's outcome for one sweep cell execution.

    ``position`` is the attacked path position for FLO and the number of
    consecutive attacked positions for JAM.  Exactly one metric block is
    populated: (n_spikes, dispersion_pct) for bio, (steps, success) for
    cnn.
    """

    scenario: str
    attack_kind: str
    n_neurons: int
    position: int
    amplitude: float
    execution_index: int
    target_set_seed: int
    n_spikes: int | None = None
    dispersion_pct: float | None = None
    steps: int | None = None
    success: bool | None = None

    def __post_init__(self):
        bio = self.n_spikes is not None or self.dispersion_pct is not None
        cnn = self.steps is not None or self.success is not None
        if bio == cnn:
            raise ExperimentError("exactly one scenario metric block must be populated")
        if (self.scenario == SCENARIO_BIO) != bio:
            raise ExperimentError("metric block does not match scenario")


RESULT_COLUMNS = [f.name for f in fields(RunResult)]


def sample_targets(n: int, execution_index: int, master_seed: int) -> np.ndarray:
    """Uniform sample of ``n`` distinct node ids, reproducible from
    (master_seed, execution_index, n); n=0 yields an empty attack."""
    if not 0 <= n <= N_NODES:
        raise ExperimentError(f"target count {n} outside 0..{N_NODES}")
    ss = np.random.SeedSequence([master_seed, execution_index, n])
    rng = np.random.default_rng(ss)
    return np.sort(rng.choice(N_NODES, size=n, replace=False))


def target_set_seed(n: int, execution_index: int, master_seed: int) -> int:
    """The recorded replay seed for a target sample."""
    return int(np.random.SeedSequence([master_seed, execution_index, n]).generate_state(1)[0])


# ---------------------------------------------------------------------------
# per-cell workers (module-level so a process pool can pickle the calls)

_CTX: dict = {}


def _init_worker(maze_text: str, weight_blobs: dict, gain: float | None, dt: float, cap: int):
    grid = parse_maze(maze_text)
    net = QNetwork(**{k: np.array(v) for k, v in weight_blobs.items()})
    bio = snn.translate(net, gain)
    path = shortest_path(grid)
    schedule = snn.build_stimulus(grid, path)
    clock = snn.RunClock(dt=dt)
    _CTX.update(grid=grid, net=net, bio=bio, schedule=schedule, clock=clock, cap=cap)


def _bio_metrics(rec) -> tuple[int, float]:
    return metrics.count_spikes(rec), metrics.temporal_dispersion(rec)


def _run_cell(args) -> tuple[RunResult, RunResult]:
    kind, n_neurons, position, amp_bio, amp_cnn, execution, master_seed = args
    targets = sample_targets(n_neurons, execution, master_seed)
    seed = target_set_seed(n_neurons, execution, master_seed)
    clock, cap = _CTX["clock"], _CTX["cap"]
    if kind == "jam":
        plan = snn.make_jam_plan(targets, 1, position, clock)
        overrides = jam_overrides(targets)
        activation = ALWAYS
    else:
        plan = snn.make_flo_plan(targets, position, amp_bio, clock)
        overrides = flo_overrides(targets, amp_cnn)
        activation = FromPathIndex(position)
    rec = snn.run(_CTX["bio"], _CTX["schedule"], [plan], clock)
    n_spikes, dispersion = _bio_metrics(rec)
    episode = play_episode(
        _CTX["net"], _CTX["grid"], _CTX["grid"].start, overrides, activation, cap=cap
    )
    common = dict(
        attack_kind=kind,
        n_neurons=n_neurons,
        position=position,
        execution_index=execution,
        target_set_seed=seed,
    )
    bio_row = RunResult(
        scenario=SCENARIO_BIO, amplitude=amp_bio,
        n_spikes=n_spikes, dispersion_pct=dispersion, **common,
    )
    cnn_row = RunResult(
        scenario=SCENARIO_CNN, amplitude=amp_cnn,
        steps=episode.steps, success=episode.success, **common,
    )
    return bio_row, cnn_row


def _cell_args(cfg: SweepConfig) -> list[tuple]:
    cells = []
    for n_neurons in cfg.neuron_counts:
        for position in cfg.positions:
            for amp_bio, amp_cnn in cfg.amplitudes:
                for execution in range(cfg.executions):
                    cells.append(
                        (cfg.attack_kind, n_neurons, position, amp_bio, amp_cnn,
                         execution, cfg.master_seed)
                    )
    return cells


def run_sweep(grid: MazeGrid, net: QNetwork, cfg: SweepConfig, jobs: int = 1) -> list[RunResult]:
    """Run every sweep cell; results arrive in config order regardless of
    ``jobs``, so persisted output is scheduling-independent."""
    blobs = {name: arr for name, arr in net.param_list()}
    cells = _cell_args(cfg)
    if jobs <= 1:
        _init_worker(format_maze(grid), blobs, cfg.gain, cfg.dt, cfg.cap)
        pairs = [_run_cell(c) for c in cells]
    else:
        with ProcessPoolExecutor(
            max_workers=jobs,
            initializer=_init_worker,
            initargs=(format_maze(grid), blobs, cfg.gain, cfg.dt, cfg.cap),
        ) as pool:
            pairs = list(pool.map(_run_cell, cells, chunksize=4))
    results = []
    for bio_row, cnn_row in pairs:
        results.append(bio_row)
        results.append(cnn_row)
    return results


def run_jam_sweep(grid: MazeGrid, net: QNetwork, cfg: SweepConfig, jobs: int = 1) -> list[RunResult]:
    if cfg.attack_kind != "jam":
        raise ExperimentError("config is not a JAM sweep")
    return run_sweep(grid, net, cfg, jobs)


def run_flo_sweep(grid: MazeGrid, net: QNetwork, cfg: SweepConfig, jobs: int = 1) -> list[RunResult]:
    if cfg.attack_kind != "flo":
        raise ExperimentError("config is not a FLO sweep")
    return run_sweep(grid, net, cfg, jobs)


# ---------------------------------------------------------------------------
# correlation reports


@dataclass(frozen=True)
class CorrelationReport:
    features: tuple[str, ...]
    matrix: np.ndarray  # square, symmetric, diagonal 1

    def entry(self, a: str, b: str) -> float:
        return float(self.matrix[self.features.index(a), self.features.index(b)])

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["feature", *self.features])
            for name, row in zip(self.features, self.matrix):
                writer.writerow([name, *(f"{v:.6f}" for v in row)])


# how each correlation feature is read off a joined bio+cnn row pair
_FEATURE_SOURCES = {
    "position": ("key", "position"),
    "n_neurons": ("key", "n_neurons"),
    "n_spikes": (SCENARIO_BIO, "n_spikes"),
    "dispersion_pct": (SCENARIO_BIO, "dispersion_pct"),
    "steps": (SCENARIO_CNN, "steps"),
    "success": (SCENARIO_CNN, "success"),
}


# CNN amplitudes (importance %) mapped back to their paired bio values so
# both scenarios' rows share a join key
_CANONICAL_AMPLITUDE = {cnn: bio for bio, cnn in FLO_AMPLITUDE_PAIRS}
_CANONICAL_AMPLITUDE[JAM_IMPORTANCE] = JAM_CLAMP_MV


def correlate(results: list[RunResult], features: tuple[str, ...]) -> CorrelationReport:
    """Join bio and cnn rows on (n_neurons, position, amplitude,
    execution) and compute pairwise Pearson over the requested feature
    columns.

    Multiple rows landing on the same join key have their features
    averaged within the pair.
    """
    unknown = [f for f in features if f not in _FEATURE_SOURCES]
    if unknown:
        raise ExperimentError(f"unknown correlation features {unknown}")
    groups: dict[tuple, dict[str, list[float]]] = {}
    for r in results:
        amp = _CANONICAL_AMPLITUDE.get(r.amplitude, r.amplitude) if r.scenario == SCENARIO_CNN else r.amplitude
        key = (r.n_neurons, r.position, amp, r.execution_index)
        bucket = groups.setdefault(key, {})
        for feat in features:
            source, attr = _FEATURE_SOURCES[feat]
            if source == "key":
                value = getattr(r, attr)
            elif source == r.scenario:
                value = getattr(r, attr)
            else:
                continue
            if value is None:
                raise ExperimentError(f"feature {feat} missing on a {r.scenario} row")
            bucket.setdefault(feat, []).append(float(value))
    columns = {f: [] for f in features}
    for key in sorted(groups):
        bucket = groups[key]
        missing = [f for f in features if f not in bucket]
        if missing:
            raise ExperimentError(f"join key {key} lacks features {missing}")
        for f in features:
            columns[f].append(float(np.mean(bucket[f])))
    n = len(features)
    matrix = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            r = metrics.pearson(columns[features[i]], columns[features[j]])
            matrix[i, j] = matrix[j, i] = r
    return CorrelationReport(features=tuple(features), matrix=matrix)


FLO_REPORT_FEATURES = ("position", "n_spikes", "dispersion_pct", "steps", "n_neurons")
JAM_REPORT_FEATURES = ("n_spikes", "dispersion_pct", "steps", "n_neurons")


# ---------------------------------------------------------------------------
# persistence


def persist(results: list[RunResult], path: str | Path) -> None:
    """One CSV row per RunResult, stable column order, header included."""
    path = Path(path)
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(RESULT_COLUMNS)
            for r in results:
                row = []
                for col in RESULT_COLUMNS:
                    v = getattr(r, col)
                    if v is None:
                        row.append("")
                    elif isinstance(v, bool):
                        row.append(int(v))
                    elif isinstance(v, float):
                        row.append(repr(v))
                    else:
                        row.append(v)
                writer.writerow(row)
    except OSError as exc:
        raise ExperimentError(f"cannot write results to {path}: {exc}") from exc


def load_results(path: str | Path) -> list[RunResult]:
    results = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != RESULT_COLUMNS:
            raise ExperimentError(f"{path}: unexpected result columns {reader.fieldnames}")
        for row in reader:
            results.append(
                RunResult(
                    scenario=row["scenario"],
                    attack_kind=row["attack_kind"],
                    n_neurons=int(row["n_neurons"]),
                    position=int(row["position"]),
                    amplitude=float(row["amplitude"]),
                    execution_index=int(row["execution_index"]),
                    target_set_seed=int(row["target_set_seed"]),
                    n_spikes=int(row["n_spikes"]) if row["n_spikes"] else None,
                    dispersion_pct=float(row["dispersion_pct"]) if row["dispersion_pct"] else None,
                    steps=int(row["steps"]) if row["steps"] else None,
                    success=bool(int(row["success"])) if row["success"] else None,
                )
            )
    return results
