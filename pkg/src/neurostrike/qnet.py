"""From-scratch CNN Q-network: forward pass, trainer, node-output attacks.

Architecture (node ids are global, layer-major):
  layer 1: Conv 8 filters 3x3, 7x7x1 -> 5x5x8, ReLU   -> nodes   0..199
  layer 2: Conv 8 filters 3x3, 5x5x8 -> 3x3x8, ReLU   -> nodes 200..271
  layer 3: Dense 72 -> 4, ReLU                        -> nodes 272..275
A node id (layer, x, y, f) flattens as x*(W*F) + y*F + f within its layer.

Attacks replace node outputs post-activation: SetTo(v) writes v verbatim
(so -1 survives the ReLU), Scale(s) multiplies the activation by s.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .maze import (
    ABORT_REWARD_THRESHOLD,
    REWARD_BLOCKED,
    REWARD_MOVE,
    REWARD_REVISIT,
    REWARD_WIN,
    Action,
    MazeGrid,
    MoveOutcome,
    Position,
    apply_move,
    shortest_path,
)

N_LAYER1 = 200
N_LAYER2 = 72
N_DENSE = 4
N_NODES = N_LAYER1 + N_LAYER2 + N_DENSE  # 276

LAYER1_IDS = range(0, N_LAYER1)
LAYER2_IDS = range(N_LAYER1, N_LAYER1 + N_LAYER2)
DENSE_IDS = range(N_LAYER1 + N_LAYER2, N_NODES)


class QNetError(Exception):
    pass


class TrainingFailed(QNetError):
    """Stop criterion not met within the epoch budget."""


# ---------------------------------------------------------------------------
# convolution primitives


def _im2col_indices(h: int, w: int, c: int, kh: int, kw: int, stride: int) -> np.ndarray:
    """Indices into a flattened (h, w, c) tensor selecting each patch.

    Returns shape (out_h*out_w, kh*kw*c); patch order is (dx, dy, channel)
    row-major, matching a C-order flatten of the kernels.
    """
    out_h = (h - kh) // stride + 1
    out_w = (w - kw) // stride + 1
    if out_h <= 0 or out_w <= 0:
        raise QNetError(f"kernel {kh}x{kw} does not fit input {h}x{w}")
    idx = np.empty((out_h * out_w, kh * kw * c), dtype=np.intp)
    for ox in range(out_h):
        for oy in range(out_w):
            cols = []
            for dx in range(kh):
                for dy in range(kw):
                    base = ((ox * stride + dx) * w + (oy * stride + dy)) * c
                    cols.extend(range(base, base + c))
            idx[ox * out_w + oy] = cols
    return idx


def conv_forward(x: np.ndarray, kernels: np.ndarray, bias: np.ndarray, stride: int = 1) -> np.ndarray:
    """Valid-padding convolution + ReLU for a single (h, w, c) input.

    kernels: (filters, kh, kw, c); returns (out_h, out_w, filters).
    """
    h, w, c = x.shape
    nf, kh, kw, kc = kernels.shape
    if kc != c:
        raise QNetError(f"kernel channels {kc} != input channels {c}")
    idx = _im2col_indices(h, w, c, kh, kw, stride)
    patches = x.reshape(-1)[idx]  # (P, kh*kw*c)
    z = patches @ kernels.reshape(nf, -1).T + bias
    out_h = (h - kh) // stride + 1
    out_w = (w - kw) // stride + 1
    return np.maximum(z, 0.0).reshape(out_h, out_w, nf)


# fixed-size index tables for the Table-1 pipeline
_IDX1 = _im2col_indices(7, 7, 1, 3, 3, 1)  # (25, 9)
_IDX2 = _im2col_indices(5, 5, 8, 3, 3, 1)  # (9, 72)


# ---------------------------------------------------------------------------
# network and overrides


@dataclass
class QNetwork:
    """Weights; conv kernels stored (filters, kh, kw, in_channels)."""

    conv1_kernels: np.ndarray  # (8, 3, 3, 1)
    conv1_bias: np.ndarray  # (8,)
    conv2_kernels: np.ndarray  # (8, 3, 3, 8)
    conv2_bias: np.ndarray  # (8,)
    dense_weights: np.ndarray  # (4, 72)
    dense_bias: np.ndarray  # (4,)

    def __post_init__(self):
        shapes = {
            "conv1_kernels": (8, 3, 3, 1),
            "conv1_bias": (8,),
            "conv2_kernels": (8, 3, 3, 8),
            "conv2_bias": (8,),
            "dense_weights": (4, 72),
            "dense_bias": (4,),
        }
        for name, shape in shapes.items():
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != shape:
                raise QNetError(f"{name} must have shape {shape}, got {arr.shape}")
            setattr(self, name, arr)

    def param_list(self) -> list[tuple[str, np.ndarray]]:
        return [
            ("conv1_kernels", self.conv1_kernels),
            ("conv1_bias", self.conv1_bias),
            ("conv2_kernels", self.conv2_kernels),
            ("conv2_bias", self.conv2_bias),
            ("dense_weights", self.dense_weights),
            ("dense_bias", self.dense_bias),
        ]

    def copy(self) -> "QNetwork":
        return QNetwork(*(arr.copy() for _, arr in self.param_list()))


def init_network(seed: int) -> QNetwork:
    rng = np.random.default_rng(seed)

    def he(shape, fan_in):
        return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)

    return QNetwork(
        conv1_kernels=he((8, 3, 3, 1), 9),
        conv1_bias=np.zeros(8),
        conv2_kernels=he((8, 3, 3, 8), 72),
        conv2_bias=np.zeros(8),
        dense_weights=he((4, 72), 72),
        # optimistic output bias keeps the ReLU head alive through the
        # negative-reward early phase of training
        dense_bias=np.full(4, 4.0),
    )


@dataclass(frozen=True)
class SetTo:
    value: float


@dataclass(frozen=True)
class Scale:
    factor: float


Override = SetTo | Scale


@dataclass(frozen=True)
class NodeOverrideSet:
    """Map node_id -> override, at most one per node."""

    entries: dict[int, Override] = field(default_factory=dict)

    def __post_init__(self):
        for node_id in self.entries:
            if not 0 <= node_id < N_NODES:
                raise QNetError(f"invalid node id {node_id}")

    def __bool__(self) -> bool:
        return bool(self.entries)

    def _layer_slices(self):
        """Per-layer (local_set_idx, set_vals, local_scale_idx, scale_vals)."""
        out = []
        for lo, hi in ((0, 200), (200, 272), (272, 276)):
            set_idx, set_val, sc_idx, sc_val = [], [], [], []
            for node_id, ov in sorted(self.entries.items()):
                if lo <= node_id < hi:
                    if isinstance(ov, SetTo):
                        set_idx.append(node_id - lo)
                        set_val.append(ov.value)
                    else:
                        sc_idx.append(node_id - lo)
                        sc_val.append(ov.factor)
            out.append(
                (
                    np.array(set_idx, dtype=np.intp),
                    np.array(set_val, dtype=np.float64),
                    np.array(sc_idx, dtype=np.intp),
                    np.array(sc_val, dtype=np.float64),
                )
            )
        return out


EMPTY_OVERRIDES = NodeOverrideSet()


def jam_overrides(node_ids) -> NodeOverrideSet:
    return NodeOverrideSet({int(n): SetTo(-1.0) for n in node_ids})


def flo_overrides(node_ids, importance_pct: float) -> NodeOverrideSet:
    return NodeOverrideSet({int(n): Scale(1.0 + importance_pct / 100.0) for n in node_ids})


# ---------------------------------------------------------------------------
# state encoding and forward pass


def encode_state(grid: MazeGrid, pos: Position, visited: set[Position]) -> np.ndarray:
    """(7, 7, 1) tensor: wall 0.0, free 1.0, visited 0.8, current 0.5."""
    if grid.is_wall(pos):
        raise QNetError(f"current position {pos} is a wall")
    x = np.where(np.array(grid.walls, dtype=bool), 0.0, 1.0)
    for p in visited:
        if not grid.is_wall(p):
            x[p.row, p.col] = 0.8
    x[pos.row, pos.col] = 0.5
    return x.reshape(7, 7, 1)


def _apply_layer_overrides(flat: np.ndarray, sl) -> np.ndarray:
    set_idx, set_val, sc_idx, sc_val = sl
    if sc_idx.size:
        flat[..., sc_idx] *= sc_val
    if set_idx.size:
        flat[..., set_idx] = set_val
    return flat


def forward(net: QNetwork, state: np.ndarray, overrides: NodeOverrideSet = EMPTY_OVERRIDES) -> np.ndarray:
    """Q-values for one state; overrides replace node outputs post-ReLU."""
    q = forward_batch(net, state.reshape(1, 7, 7, 1), overrides)
    return q[0]


def forward_batch(net: QNetwork, states: np.ndarray, overrides: NodeOverrideSet = EMPTY_OVERRIDES) -> np.ndarray:
    cache = _forward_cache(net, states, overrides)
    return cache["q"]


def _forward_cache(net: QNetwork, states: np.ndarray, overrides: NodeOverrideSet = EMPTY_OVERRIDES) -> dict:
    if states.ndim != 4 or states.shape[1:] != (7, 7, 1):
        raise QNetError(f"states must be (B, 7, 7, 1), got {states.shape}")
    b = states.shape[0]
    slices = overrides._layer_slices() if overrides else None

    p1 = states.reshape(b, -1)[:, _IDX1]  # (B, 25, 9)
    z1 = p1 @ net.conv1_kernels.reshape(8, -1).T + net.conv1_bias  # (B, 25, 8)
    a1 = np.maximum(z1, 0.0)
    if slices:
        a1 = _apply_layer_overrides(a1.reshape(b, N_LAYER1), slices[0]).reshape(b, 25, 8)

    p2 = a1.reshape(b, -1)[:, _IDX2]  # (B, 9, 72)
    z2 = p2 @ net.conv2_kernels.reshape(8, -1).T + net.conv2_bias  # (B, 9, 8)
    a2 = np.maximum(z2, 0.0)
    if slices:
        a2 = _apply_layer_overrides(a2.reshape(b, N_LAYER2), slices[1]).reshape(b, 9, 8)

    flat = a2.reshape(b, N_LAYER2)
    z3 = flat @ net.dense_weights.T + net.dense_bias  # (B, 4)
    a3 = np.maximum(z3, 0.0)
    if slices:
        a3 = _apply_layer_overrides(a3.copy(), slices[2])

    return {"p1": p1, "z1": z1, "a1": a1, "p2": p2, "z2": z2, "a2": a2, "flat": flat, "z3": z3, "q": a3}


# ---------------------------------------------------------------------------
# loss and gradients (attack-free training path)


def loss_and_grads(net: QNetwork, states: np.ndarray, actions: np.ndarray, targets: np.ndarray):
    """Mean squared error on the taken action's Q-value, plus gradients.

    Returns (loss, grads) with grads keyed like ``QNetwork.param_list``.
    """
    b = states.shape[0]
    cache = _forward_cache(net, states)
    q_taken = cache["q"][np.arange(b), actions]
    err = q_taken - targets
    loss = float(np.mean(err**2))

    dq = np.zeros((b, 4))
    dq[np.arange(b), actions] = 2.0 * err / b
    dz3 = dq * (cache["z3"] > 0)
    d_w3 = dz3.T @ cache["flat"]
    d_b3 = dz3.sum(axis=0)
    dflat = dz3 @ net.dense_weights  # (B, 72)

    dz2 = dflat.reshape(b, 9, 8) * (cache["z2"] > 0)
    d_w2 = np.einsum("bpf,bpk->fk", dz2, cache["p2"]).reshape(8, 3, 3, 8)
    d_b2 = dz2.sum(axis=(0, 1))
    dp2 = dz2 @ net.conv2_kernels.reshape(8, -1)  # (B, 9, 72)
    da1 = np.zeros((b, N_LAYER1))
    np.add.at(da1, (np.arange(b)[:, None, None], _IDX2[None]), dp2)

    dz1 = da1.reshape(b, 25, 8) * (cache["z1"] > 0)
    d_w1 = np.einsum("bpf,bpk->fk", dz1, cache["p1"]).reshape(8, 3, 3, 1)
    d_b1 = dz1.sum(axis=(0, 1))

    grads = {
        "conv1_kernels": d_w1,
        "conv1_bias": d_b1,
        "conv2_kernels": d_w2,
        "conv2_bias": d_b2,
        "dense_weights": d_w3,
        "dense_bias": d_b3,
    }
    return loss, grads


# ---------------------------------------------------------------------------
# episode playout


@dataclass(frozen=True)
class Always:
    pass


@dataclass(frozen=True)
class FromPathIndex:
    """Activate overrides on first occupancy of optimal-path cell k (1-based)."""

    index: int

    def __post_init__(self):
        if not 1 <= self.index <= 27:
            raise QNetError(f"path index must be in 1..27, got {self.index}")


ActivationRule = Always | FromPathIndex

ALWAYS = Always()


@dataclass(frozen=True)
class EpisodeResult:
    steps: int
    success: bool
    trajectory: tuple[Position, ...]


def greedy_action(net: QNetwork, grid: MazeGrid, pos: Position, visited: set[Position], overrides: NodeOverrideSet = EMPTY_OVERRIDES) -> Action:
    q = forward(net, encode_state(grid, pos, visited), overrides)
    return Action(int(np.argmax(q)))  # argmax ties break by action order


def play_episode(
    net: QNetwork,
    grid: MazeGrid,
    start_pos: Position,
    overrides: NodeOverrideSet = EMPTY_OVERRIDES,
    override_activation: ActivationRule = ALWAYS,
    cap: int = 200,
    seed: int | None = None,
) -> EpisodeResult:
    """Greedy playout; ``seed`` is reserved (playout is deterministic).

    FromPathIndex(k) arms the overrides the first time the agent occupies
    optimal-path cell k and keeps them active afterwards.  The k=27 case
    (the exit cell) starts the episode at path cell 26 with overrides
    already active, so a nonzero step count exists.
    """
    if cap <= 0:
        raise QNetError("step cap must be positive")
    pos = start_pos
    active = isinstance(override_activation, Always)
    trigger_cell = None
    if isinstance(override_activation, FromPathIndex):
        path = shortest_path(grid)
        if override_activation.index == len(path):
            pos = path[-2]
            active = True
        else:
            trigger_cell = path[override_activation.index - 1]
            active = pos == trigger_cell

    visited: set[Position] = set()
    trajectory = [pos]
    steps = 0
    success = False
    while steps < cap:
        ov = overrides if active else EMPTY_OVERRIDES
        action = greedy_action(net, grid, pos, visited, ov)
        new_pos, outcome = apply_move(grid, pos, action)
        if new_pos != pos:
            visited.add(pos)
        pos = new_pos
        trajectory.append(pos)
        steps += 1
        if trigger_cell is not None and pos == trigger_cell:
            active = True
        if outcome is MoveOutcome.WIN:
            success = True
            break
    return EpisodeResult(steps=steps, success=success, trajectory=tuple(trajectory))


# ---------------------------------------------------------------------------
# trainer


@dataclass
class TrainConfig:
    discount: float = 0.95
    replay_size: int = 512
    batch_size: int = 32
    max_epochs: int = 8000
    learning_rate: float = 1e-3
    epsilon_start: float = 1.0
    epsilon_min: float = 0.05
    epsilon_decay: float = 0.997
    seed: int = 0
    step_cap: int = 200
    eval_every: int = 10
    # annealing the step size once exploration bottoms out settles the
    # near-complete policy instead of letting it oscillate
    lr_decay: float = 0.9995
    # stabilizers against the deadly-triad / dead-ReLU-head failure modes
    target_sync: int = 200  # gradient updates between target-network copies
    updates_per_step: int = 2
    target_floor: float = 0.05  # clip TD targets below this (ReLU head range)
    rms_decay: float = 0.99
    rms_eps: float = 1e-8

    def __post_init__(self):
        if not 0.0 <= self.discount <= 1.0:
            raise QNetError("discount must be in [0, 1]")
        for eps in (self.epsilon_start, self.epsilon_min):
            if not 0.0 <= eps <= 1.0:
                raise QNetError("epsilon must be in [0, 1]")


def _policy_is_complete(net: QNetwork, grid: MazeGrid, cap: int) -> bool:
    """Greedy playout wins from every Free cell and start takes 26 steps."""
    optimal = len(shortest_path(grid)) - 1
    for cell in grid.free_cells():
        if cell == grid.exit:
            continue
        result = play_episode(net, grid, cell, cap=cap)
        if not result.success:
            return False
        if cell == grid.start and result.steps != optimal:
            return False
    return True


def train(grid: MazeGrid, cfg: TrainConfig) -> QNetwork:
    """Q-learning with experience replay; deterministic given cfg.seed.

    Stops when the greedy policy wins from every Free cell and takes the
    optimal step count from the start; raises TrainingFailed otherwise.
    """
    rng = np.random.default_rng(cfg.seed)
    net = init_network(cfg.seed)
    target_net = net.copy()
    rms = {name: np.zeros_like(p) for name, p in net.param_list()}
    n_updates = 0
    free = [c for c in grid.free_cells() if c != grid.exit]
    replay: list[tuple] = []
    replay_pos = 0
    epsilon = cfg.epsilon_start
    lr = cfg.learning_rate

    for epoch in range(cfg.max_epochs):
        pos = free[rng.integers(len(free))]
        visited: set[Position] = set()
        total_reward = 0.0
        for _ in range(cfg.step_cap):
            state = encode_state(grid, pos, visited)
            if rng.random() < epsilon:
                action = Action(int(rng.integers(4)))
            else:
                action = Action(int(np.argmax(forward(net, state))))
            new_pos, outcome = apply_move(grid, pos, action)
            if outcome is MoveOutcome.WIN:
                reward = REWARD_WIN
            elif outcome is MoveOutcome.BLOCKED:
                reward = REWARD_BLOCKED
            elif new_pos in visited:
                reward = REWARD_REVISIT
            else:
                reward = REWARD_MOVE
            total_reward += reward
            if new_pos != pos:
                visited.add(pos)
            next_state = encode_state(grid, new_pos, visited)
            transition = (state, action.value, reward, next_state, outcome is MoveOutcome.WIN)
            if len(replay) < cfg.replay_size:
                replay.append(transition)
            else:
                replay[replay_pos] = transition
                replay_pos = (replay_pos + 1) % cfg.replay_size
            pos = new_pos

            if len(replay) >= cfg.batch_size:
                for _ in range(cfg.updates_per_step):
                    batch_idx = rng.integers(len(replay), size=cfg.batch_size)
                    states = np.stack([replay[i][0] for i in batch_idx])
                    actions = np.array([replay[i][1] for i in batch_idx])
                    rewards = np.array([replay[i][2] for i in batch_idx])
                    next_states = np.stack([replay[i][3] for i in batch_idx])
                    terminal = np.array([replay[i][4] for i in batch_idx])
                    next_q = forward_batch(target_net, next_states).max(axis=1)
                    targets = np.maximum(
                        rewards + np.where(terminal, 0.0, cfg.discount * next_q),
                        cfg.target_floor,
                    )
                    _, grads = loss_and_grads(net, states, actions, targets)
                    for name, param in net.param_list():
                        g = grads[name]
                        rms[name] = cfg.rms_decay * rms[name] + (1.0 - cfg.rms_decay) * g * g
                        param -= lr * g / (np.sqrt(rms[name]) + cfg.rms_eps)
                    n_updates += 1
                    if n_updates % cfg.target_sync == 0:
                        target_net = net.copy()

            if outcome is MoveOutcome.WIN or total_reward < ABORT_REWARD_THRESHOLD:
                break

        if epsilon <= cfg.epsilon_min:
            lr *= cfg.lr_decay
        epsilon = max(cfg.epsilon_min, epsilon * cfg.epsilon_decay)
        if (epoch + 1) % cfg.eval_every == 0:
            if _policy_is_complete(net, grid, cfg.step_cap):
                return net

    raise TrainingFailed(f"stop criterion not met within {cfg.max_epochs} epochs")


# ---------------------------------------------------------------------------
# weight file format (qnet-v1)

_WEIGHT_ORDER = ["conv1_kernels", "conv1_bias", "conv2_kernels", "conv2_bias", "dense_weights", "dense_bias"]


def save_weights(net: QNetwork, path: str | Path) -> None:
    """Textual format: header ``qnet-v1``, then per-block shape + values."""
    lines = ["qnet-v1"]
    for name in _WEIGHT_ORDER:
        arr = getattr(net, name)
        lines.append(name + " " + " ".join(str(d) for d in arr.shape))
        lines.append(" ".join(repr(float(v)) for v in arr.reshape(-1)))
    Path(path).write_text("\n".join(lines) + "\n")


def load_weights(path: str | Path) -> QNetwork:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != "qnet-v1":
        raise QNetError(f"{path}: not a qnet-v1 weight file")
    arrays = {}
    i = 1
    for name in _WEIGHT_ORDER:
        header = lines[i].split()
        if header[0] != name:
            raise QNetError(f"{path}: expected block {name}, found {header[0]}")
        shape = tuple(int(d) for d in header[1:])
        values = np.array([float(v) for v in lines[i + 1].split()])
        arrays[name] = values.reshape(shape)
        i += 2
    return QNetwork(**arrays)
