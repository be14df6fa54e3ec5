"""Clock-driven Izhikevich spiking network with JAM/FLO attack injection.

The 276-neuron topology mirrors the CNN node-for-node (shared id space);
only the second conv layer and the dense layer become synapses.  Layer 1
is driven purely by the two-level external current scheme (10/15 mV/ms).

Per-step order: FLO impulses, forward-Euler update (synaptic jumps from
the previous step's spikes enter the current term as w/dt), JAM clamp,
threshold/reset.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a declared dependency
    njit = None

from .maze import MazeGrid, Position, valid_moves, apply_move
from .metrics import SpikeRecord
from .qnet import N_LAYER1, N_LAYER2, N_NODES, QNetwork

SEGMENT_MS = 1000.0
N_PATH_POSITIONS = 27
CURRENT_BASE = 10.0  # mV/ms, all neurons
CURRENT_STIMULUS = 15.0  # mV/ms, intervening layer-1 neurons


class SnnError(Exception):
    pass


class DivergenceError(SnnError):
    """Non-finite neuron state during integration."""

    def __init__(self, neuron: int, time_ms: float):
        self.neuron = neuron
        self.time_ms = time_ms
        super().__init__(f"non-finite state in neuron {neuron} at t={time_ms:.3f} ms")


@dataclass(frozen=True)
class IzhikevichParams:
    """Regular-spiking parameter set; overridable via config."""

    a: float = 0.02  # 1/ms
    b: float = 0.2  # 1/ms
    c: float = -65.0  # mV
    d: float = 8.0  # mV/ms
    v_min: float = -65.0  # mV
    v_peak: float = 30.0  # mV

    def __post_init__(self):
        if self.v_min >= self.v_peak:
            raise SnnError("v_min must be below v_peak")


@dataclass(frozen=True)
class RunClock:
    t_win: float = 27000.0  # ms
    dt: float = 0.1  # ms

    def __post_init__(self):
        if not 0.0 < self.dt <= 1.0:
            raise SnnError("dt must be in (0, 1] ms")
        if abs(self.t_win / self.dt - round(self.t_win / self.dt)) > 1e-9:
            raise SnnError("t_win must be a multiple of dt")

    @property
    def n_steps(self) -> int:
        return round(self.t_win / self.dt)


@dataclass(frozen=True)
class AttackPlan:
    kind: str  # "jam" or "flo"
    targets: frozenset[int]
    t_attk: float  # ms
    t_pulse: float = 0.0  # ms, JAM only
    vi: float = 0.0  # mV, FLO only

    def __post_init__(self):
        if self.kind not in ("jam", "flo"):
            raise SnnError(f"unknown attack kind {self.kind!r}")
        if any(not 0 <= t < N_NODES for t in self.targets):
            raise SnnError("attack targets must be neuron ids 0..275")
        if self.t_attk < 0:
            raise SnnError("t_attk must be >= 0")
        if self.kind == "jam" and self.t_pulse <= 0:
            raise SnnError("JAM requires t_pulse > 0")
        if self.kind == "flo" and not np.isfinite(self.vi):
            raise SnnError("FLO requires a finite voltage increment")


@dataclass(frozen=True)
class StimulusSchedule:
    """Per-segment external currents; one segment per optimal-path cell."""

    currents: np.ndarray  # (n_segments, n_neurons), mV/ms
    segment_ms: float = SEGMENT_MS

    @property
    def n_segments(self) -> int:
        return self.currents.shape[0]

    @property
    def total_ms(self) -> float:
        return self.n_segments * self.segment_ms


@dataclass
class SpikingNetwork:
    params: IzhikevichParams
    n_neurons: int
    syn_pre: np.ndarray  # (n_syn,) int
    syn_post: np.ndarray  # (n_syn,) int
    syn_weight: np.ndarray  # (n_syn,) mV jump on post per pre spike
    gain: float = 1.0

    def __post_init__(self):
        self.syn_pre = np.asarray(self.syn_pre, dtype=np.int64)
        self.syn_post = np.asarray(self.syn_post, dtype=np.int64)
        self.syn_weight = np.asarray(self.syn_weight, dtype=np.float64)
        if not (len(self.syn_pre) == len(self.syn_post) == len(self.syn_weight)):
            raise SnnError("synapse arrays must have equal length")
        if not np.all(np.isfinite(self.syn_weight)):
            raise SnnError("synaptic weights must be finite")
        # dense outgoing-weight matrix used by the integrator
        self._w_out = np.zeros((self.n_neurons, self.n_neurons))
        np.add.at(self._w_out, (self.syn_pre, self.syn_post), self.syn_weight)

    @property
    def n_synapses(self) -> int:
        return len(self.syn_pre)

    def dump_topology(self, path: str | Path) -> None:
        """CSV ``pre,post,weight_mV`` for audit."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["pre", "post", "weight_mV"])
            for pre, post, w in zip(self.syn_pre, self.syn_post, self.syn_weight):
                writer.writerow([int(pre), int(post), repr(float(w))])


# ---------------------------------------------------------------------------
# topology translation


def _layer1_id(x: int, y: int, f: int) -> int:
    return x * 40 + y * 8 + f


def _layer2_id(x: int, y: int, f: int) -> int:
    return N_LAYER1 + x * 24 + y * 8 + f


# Default normalization target for the largest synaptic jump.  Coupling
# at this strength makes downstream spike counts sensitive to volley
# coincidence, so desynchronizing attacks measurably reduce activity.
DEFAULT_MAX_JUMP_MV = 4.0


def translate(
    net: QNetwork,
    gain: float | None = None,
    params: IzhikevichParams | None = None,
    max_jump_mv: float = DEFAULT_MAX_JUMP_MV,
) -> SpikingNetwork:
    """Build the 276-neuron network from the trained CNN.

    conv2 kernels become layer1->layer2 synapses (one per receptive-field
    entry), dense weights become layer2->dense synapses; conv1 kernels are
    not translated (layer 1 is current-driven).  ``gain=None`` scales so
    the largest absolute synaptic jump is ``max_jump_mv``.
    """
    if gain is None:
        w_max = max(np.abs(net.conv2_kernels).max(), np.abs(net.dense_weights).max())
        gain = max_jump_mv / w_max if w_max > 0 else 1.0
    pre, post, weight = [], [], []
    for x2 in range(3):
        for y2 in range(3):
            for f2 in range(8):
                for dx in range(3):
                    for dy in range(3):
                        for f1 in range(8):
                            pre.append(_layer1_id(x2 + dx, y2 + dy, f1))
                            post.append(_layer2_id(x2, y2, f2))
                            weight.append(gain * net.conv2_kernels[f2, dx, dy, f1])
    for j in range(4):
        for k in range(N_LAYER2):
            pre.append(N_LAYER1 + k)
            post.append(N_LAYER1 + N_LAYER2 + j)
            weight.append(gain * net.dense_weights[j, k])
    return SpikingNetwork(
        params=params or IzhikevichParams(),
        n_neurons=N_NODES,
        syn_pre=np.array(pre),
        syn_post=np.array(post),
        syn_weight=np.array(weight),
        gain=gain,
    )


# ---------------------------------------------------------------------------
# stimulus


def intervening_neurons(grid: MazeGrid, pos: Position) -> set[int]:
    """Layer-1 neurons whose receptive field covers a valid-move neighbor.

    Neuron (x, y, f) sees input rows x..x+2, cols y..y+2; all 8 filters of
    a spatial site share the footprint.
    """
    targets = set()
    neighbor_cells = set()
    for action in valid_moves(grid, pos):
        new_pos, _ = apply_move(grid, pos, action)
        neighbor_cells.add((new_pos.row, new_pos.col))
    for x in range(5):
        for y in range(5):
            covered = any(x <= r <= x + 2 and y <= c <= y + 2 for r, c in neighbor_cells)
            if covered:
                for f in range(8):
                    targets.add(_layer1_id(x, y, f))
    return targets


def build_stimulus(grid: MazeGrid, path: list[Position]) -> StimulusSchedule:
    """One 1000 ms segment per optimal-path cell: 15 mV/ms to the cell's
    intervening layer-1 neurons, 10 mV/ms to every other neuron."""
    if len(path) != N_PATH_POSITIONS:
        raise SnnError(f"optimal path must have {N_PATH_POSITIONS} cells, got {len(path)}")
    currents = np.full((len(path), N_NODES), CURRENT_BASE)
    for k, cell in enumerate(path):
        for nid in intervening_neurons(grid, cell):
            currents[k, nid] = CURRENT_STIMULUS
    return StimulusSchedule(currents=currents)


def constant_stimulus(currents: np.ndarray, t_win: float) -> StimulusSchedule:
    """Single-segment schedule holding ``currents`` for the whole window."""
    arr = np.asarray(currents, dtype=np.float64)
    return StimulusSchedule(currents=arr.reshape(1, -1), segment_ms=t_win)


# ---------------------------------------------------------------------------
# attack plan builders


def make_jam_plan(targets, first_pos: int, n_positions: int, clock: RunClock) -> AttackPlan:
    """JAM window opening 50 ms into path position ``first_pos`` (1-based)
    and closing at the end of the last attacked position."""
    if not (1 <= first_pos and n_positions >= 1 and first_pos + n_positions - 1 <= N_PATH_POSITIONS):
        raise SnnError(f"positions {first_pos}..{first_pos + n_positions - 1} outside 1..{N_PATH_POSITIONS}")
    t_attk = (first_pos - 1) * SEGMENT_MS + 50.0
    t_pulse = n_positions * SEGMENT_MS - 50.0
    if t_attk + t_pulse > clock.t_win:
        raise SnnError("JAM window exceeds the simulation window")
    return AttackPlan(kind="jam", targets=frozenset(int(t) for t in targets), t_attk=t_attk, t_pulse=t_pulse)


def make_flo_plan(targets, pos: int, vi: float, clock: RunClock) -> AttackPlan:
    """FLO impulse 50 ms after the mouse reaches path position ``pos``."""
    if not 1 <= pos <= N_PATH_POSITIONS:
        raise SnnError(f"path position {pos} outside 1..{N_PATH_POSITIONS}")
    t_attk = (pos - 1) * SEGMENT_MS + 50.0
    if t_attk >= clock.t_win:
        raise SnnError("FLO instant outside the simulation window")
    return AttackPlan(kind="flo", targets=frozenset(int(t) for t in targets), t_attk=t_attk, vi=vi)


# ---------------------------------------------------------------------------
# integration


def derivatives(params: IzhikevichParams, v, u, current):
    """Point-model derivatives (dv/dt, du/dt); the recovery variable u
    couples as negative feedback on v."""
    dv = 0.04 * v * v + 5.0 * v + 140.0 - u + current
    du = params.a * (params.b * v - u)
    return dv, du


@dataclass
class SimState:
    v: np.ndarray
    u: np.ndarray
    pending: np.ndarray  # synaptic jumps accumulated from last step's spikes
    t_step: int = 0


def initial_state(network: SpikingNetwork) -> SimState:
    p = network.params
    v = np.full(network.n_neurons, p.c)
    return SimState(v=v, u=p.b * v.copy(), pending=np.zeros(network.n_neurons))


def step(
    network: SpikingNetwork,
    state: SimState,
    currents: np.ndarray,
    dt: float,
    jam_mask: np.ndarray | None = None,
    flo_increment: np.ndarray | None = None,
) -> np.ndarray:
    """Advance one step in place; returns the ids that spiked.

    Reference implementation: ``run`` must agree with it bitwise.
    """
    p = network.params
    if len(currents) != network.n_neurons:
        raise SnnError("currents length must equal neuron count")
    v, u = state.v, state.u
    if flo_increment is not None:
        v += flo_increment
    dv, du = derivatives(p, v, u, currents + state.pending / dt)
    v += dt * dv
    u += dt * du
    state.pending[:] = 0.0
    if jam_mask is not None:
        v[jam_mask] = p.v_min
    bad = ~(np.isfinite(v) & np.isfinite(u))
    if bad.any():
        raise DivergenceError(int(np.argmax(bad)), state.t_step * dt)
    spiked = v >= p.v_peak
    if jam_mask is not None:
        spiked &= ~jam_mask
    v[spiked] = p.c
    u[spiked] += p.d
    ids = np.flatnonzero(spiked)
    for i in ids:
        state.pending += network._w_out[i]
    state.t_step += 1
    return ids


def _integrate_py(
    v, u, a, b, c, d, v_min, v_peak, dt, n_steps, seg_steps, currents,
    w_out, jam_start, jam_end, jam_mask, flo_step, flo_add,
    spike_ids, spike_steps, record_idx, v_rec,
):
    n = v.shape[0]
    n_seg = currents.shape[0]
    pending = np.zeros(n)
    jammed = np.zeros(n, dtype=np.bool_)
    count = 0
    err_neuron = -1
    err_step = -1
    for t in range(n_steps):
        for k in range(flo_step.shape[0]):
            if flo_step[k] == t:
                for i in range(n):
                    v[i] += flo_add[k, i]
        seg = t // seg_steps
        if seg >= n_seg:
            seg = n_seg - 1
        any_jam = False
        for k in range(jam_start.shape[0]):
            if jam_start[k] <= t < jam_end[k]:
                any_jam = True
        if any_jam:
            for i in range(n):
                jammed[i] = False
            for k in range(jam_start.shape[0]):
                if jam_start[k] <= t < jam_end[k]:
                    for i in range(n):
                        if jam_mask[k, i]:
                            jammed[i] = True
        for i in range(n):
            vi = v[i]
            ui = u[i]
            dv = 0.04 * vi * vi + 5.0 * vi + 140.0 - ui + (currents[seg, i] + pending[i] / dt)
            du = a * (b * vi - ui)
            v[i] = vi + dt * dv
            u[i] = ui + dt * du
            pending[i] = 0.0
        if any_jam:
            for i in range(n):
                if jammed[i]:
                    v[i] = v_min
        for i in range(n):
            if not (np.isfinite(v[i]) and np.isfinite(u[i])):
                return count, i, t
        for i in range(n):
            if v[i] >= v_peak and not (any_jam and jammed[i]):
                if count >= spike_ids.shape[0]:
                    return count, -2, t  # overflow sentinel
                spike_ids[count] = i
                spike_steps[count] = t
                count += 1
                v[i] = c
                u[i] += d
                for j in range(n):
                    pending[j] += w_out[i, j]
        for r in range(record_idx.shape[0]):
            v_rec[r, t] = v[record_idx[r]]
    return count, err_neuron, err_step


_integrate = njit(cache=True)(_integrate_py) if njit is not None else _integrate_py


def run(
    network: SpikingNetwork,
    schedule: StimulusSchedule,
    attacks: list[AttackPlan],
    clock: RunClock,
    seed: int | None = None,
    record_v: list[int] | None = None,
):
    """Integrate the whole window; bitwise deterministic given inputs.

    ``seed`` is reserved (the engine itself is noise-free).  Returns a
    SpikeRecord, or (SpikeRecord, voltage traces) when ``record_v`` names
    neuron ids whose per-step membrane potential should be captured.
    """
    p = network.params
    n = network.n_neurons
    if schedule.currents.shape[1] != n:
        raise SnnError("schedule neuron count does not match network")
    if clock.t_win > schedule.total_ms + 1e-9:
        raise SnnError("schedule shorter than the simulation window")
    seg_steps = round(schedule.segment_ms / clock.dt)
    if abs(schedule.segment_ms / clock.dt - seg_steps) > 1e-9:
        raise SnnError("segment duration must be a multiple of dt")

    jam = [atk for atk in attacks if atk.kind == "jam"]
    flo = [atk for atk in attacks if atk.kind == "flo"]
    for atk in attacks:
        end = atk.t_attk + (atk.t_pulse if atk.kind == "jam" else 0.0)
        if atk.t_attk >= clock.t_win or end > clock.t_win:
            raise SnnError(f"attack window [{atk.t_attk}, {end}) outside [0, {clock.t_win})")

    jam_start = np.array([round(a.t_attk / clock.dt) for a in jam], dtype=np.int64)
    jam_end = np.array([round((a.t_attk + a.t_pulse) / clock.dt) for a in jam], dtype=np.int64)
    jam_mask = np.zeros((len(jam), n), dtype=np.bool_)
    for k, a in enumerate(jam):
        jam_mask[k, list(a.targets)] = True
    flo_step = np.array([round(a.t_attk / clock.dt) for a in flo], dtype=np.int64)
    flo_add = np.zeros((len(flo), n))
    for k, a in enumerate(flo):
        flo_add[k, list(a.targets)] = a.vi

    state = initial_state(network)
    record_idx = np.array(record_v if record_v is not None else [], dtype=np.int64)
    v_rec = np.zeros((len(record_idx), clock.n_steps))

    capacity = max(100_000, 64 * clock.n_steps // 10)
    while True:
        v = state.v.copy()
        u = state.u.copy()
        spike_ids = np.zeros(capacity, dtype=np.int64)
        spike_steps = np.zeros(capacity, dtype=np.int64)
        count, err_neuron, err_step = _integrate(
            v, u, p.a, p.b, p.c, p.d, p.v_min, p.v_peak, clock.dt, clock.n_steps,
            seg_steps, schedule.currents, network._w_out,
            jam_start, jam_end, jam_mask, flo_step, flo_add,
            spike_ids, spike_steps, record_idx, v_rec,
        )
        if err_neuron == -2:
            capacity *= 4
            continue
        if err_neuron >= 0:
            raise DivergenceError(err_neuron, err_step * clock.dt)
        break

    record = SpikeRecord(
        neuron_ids=spike_ids[:count].copy(),
        times_ms=spike_steps[:count] * clock.dt,
        duration_ms=clock.t_win,
        n_neurons=n,
    )
    if record_v is not None:
        return record, v_rec
    return record
