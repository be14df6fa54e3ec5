import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neurostrike import qnet
from neurostrike.maze import Action, Position, default_maze, shortest_path
from neurostrike.qnet import (
    ALWAYS,
    EMPTY_OVERRIDES,
    FromPathIndex,
    NodeOverrideSet,
    QNetError,
    QNetwork,
    Scale,
    SetTo,
    encode_state,
    flo_overrides,
    forward,
    forward_batch,
    init_network,
    jam_overrides,
    load_weights,
    loss_and_grads,
    play_episode,
    save_weights,
)


@pytest.fixture(scope="module")
def net():
    return init_network(1)


@pytest.fixture(scope="module")
def grid():
    return default_maze()


def _state(grid):
    return encode_state(grid, grid.start, set())


# ---------------------------------------------------------------------------
# architecture


def test_node_counts():
    assert qnet.N_LAYER1 == 200
    assert qnet.N_LAYER2 == 72
    assert qnet.N_DENSE == 4
    assert qnet.N_NODES == 276


def test_forward_shapes(net, grid):
    cache = qnet._forward_cache(net, _state(grid).reshape(1, 7, 7, 1))
    assert cache["a1"].shape == (1, 25, 8)  # 5x5x8 layer
    assert cache["a2"].shape == (1, 9, 8)  # 3x3x8 layer
    assert cache["q"].shape == (1, 4)


def test_forward_batch_matches_single(net, grid):
    path = shortest_path(grid)
    states = np.stack([encode_state(grid, p, set(path[:i])) for i, p in enumerate(path[:5])])
    batch = forward_batch(net, states)
    for i in range(5):
        # batched matmul may reduce in a different order; agreement is
        # to floating-point accuracy, not bitwise
        assert np.allclose(batch[i], forward(net, states[i]), rtol=1e-12, atol=1e-12)


def test_relu_outputs_nonnegative(net, grid):
    q = forward(net, _state(grid))
    assert np.all(q >= 0.0)


def test_shape_validation():
    with pytest.raises(QNetError):
        QNetwork(
            conv1_kernels=np.zeros((8, 3, 3, 2)),
            conv1_bias=np.zeros(8),
            conv2_kernels=np.zeros((8, 3, 3, 8)),
            conv2_bias=np.zeros(8),
            dense_weights=np.zeros((4, 72)),
            dense_bias=np.zeros(4),
        )


# ---------------------------------------------------------------------------
# state encoding


def test_encode_state_values(grid):
    path = shortest_path(grid)
    visited = {path[0], path[1]}
    pos = path[2]
    x = encode_state(grid, pos, visited)
    assert x.shape == (7, 7, 1)
    assert x[pos.row, pos.col, 0] == 0.5
    for p in visited:
        assert x[p.row, p.col, 0] == 0.8
    assert x[1, 0, 0] == 0.0  # wall
    free_untouched = [
        (r, c)
        for r in range(7)
        for c in range(7)
        if grid.is_free(Position(r, c)) and Position(r, c) not in visited and Position(r, c) != pos
    ]
    assert all(x[r, c, 0] == 1.0 for r, c in free_untouched)


def test_encode_state_rejects_wall(grid):
    with pytest.raises(QNetError):
        encode_state(grid, Position(1, 0), set())


# ---------------------------------------------------------------------------
# node overrides


def test_set_to_bypasses_relu(net, grid):
    ov = jam_overrides([272, 273, 274, 275])
    q = forward(net, _state(grid), ov)
    assert np.array_equal(q, np.full(4, -1.0))


def test_scale_multiplies_activation(net, grid):
    base = forward(net, _state(grid))
    ov = NodeOverrideSet({272: Scale(2.0)})
    q = forward(net, _state(grid), ov)
    assert q[0] == pytest.approx(2.0 * base[0], rel=1e-12, abs=1e-12)
    assert np.array_equal(q[1:], base[1:])


def test_layer1_override_propagates_downstream(net, grid):
    base = forward(net, _state(grid))
    ov = NodeOverrideSet({i: SetTo(-1.0) for i in range(0, 40)})
    q = forward(net, _state(grid), ov)
    assert not np.array_equal(q, base)


def test_flo_overrides_scaling():
    ov = flo_overrides([3, 250], 60.0)
    assert ov.entries[3] == Scale(1.6)
    assert ov.entries[250] == Scale(1.6)


def test_override_rejects_bad_node():
    with pytest.raises(QNetError):
        NodeOverrideSet({276: SetTo(0.0)})


@given(st.sets(st.integers(min_value=0, max_value=275), min_size=1, max_size=30))
@settings(max_examples=25, deadline=None)
def test_jam_override_nodes_read_minus_one(node_ids):
    net = init_network(3)
    grid = default_maze()
    ov = jam_overrides(node_ids)
    cache = qnet._forward_cache(net, _state(grid).reshape(1, 7, 7, 1), ov)
    flat = np.concatenate(
        [cache["a1"].reshape(-1), cache["a2"].reshape(-1), cache["q"].reshape(-1)]
    )
    for nid in node_ids:
        assert flat[nid] == -1.0


# ---------------------------------------------------------------------------
# gradients


def test_gradients_match_finite_differences(net, grid):
    rng = np.random.default_rng(0)
    states = np.stack([_state(grid)] * 3)
    states += rng.normal(0, 0.01, size=states.shape)
    actions = np.array([0, 2, 3])
    targets = rng.normal(1.0, 0.5, size=3)
    _, grads = loss_and_grads(net, states, actions, targets)
    eps = 1e-6
    for name, param in net.param_list():
        flat = param.reshape(-1)
        for idx in rng.choice(flat.size, size=min(6, flat.size), replace=False):
            orig = flat[idx]
            flat[idx] = orig + eps
            up, _ = loss_and_grads(net, states, actions, targets)
            flat[idx] = orig - eps
            down, _ = loss_and_grads(net, states, actions, targets)
            flat[idx] = orig
            numeric = (up - down) / (2 * eps)
            analytic = grads[name].reshape(-1)[idx]
            assert analytic == pytest.approx(numeric, rel=1e-4, abs=1e-8), name


# ---------------------------------------------------------------------------
# playout


def test_play_episode_deterministic(net, grid):
    a = play_episode(net, grid, grid.start)
    b = play_episode(net, grid, grid.start)
    assert a == b


def test_play_episode_cap(net, grid):
    result = play_episode(net, grid, grid.start, cap=3)
    assert result.steps <= 3


def test_from_path_index_exit_case_starts_before_exit(net, grid):
    path = shortest_path(grid)
    result = play_episode(net, grid, grid.start, override_activation=FromPathIndex(27), cap=50)
    assert result.trajectory[0] == path[-2]


def test_from_path_index_validation():
    with pytest.raises(QNetError):
        FromPathIndex(0)
    with pytest.raises(QNetError):
        FromPathIndex(28)


def test_empty_overrides_match_no_overrides(net, grid):
    a = play_episode(net, grid, grid.start)
    b = play_episode(net, grid, grid.start, EMPTY_OVERRIDES, ALWAYS)
    assert a == b


# ---------------------------------------------------------------------------
# persistence


def test_weight_round_trip(net, tmp_path):
    path = tmp_path / "w.txt"
    save_weights(net, path)
    loaded = load_weights(path)
    for (name, a), (_, b) in zip(net.param_list(), loaded.param_list()):
        assert np.array_equal(a, b), name


def test_load_rejects_bad_header(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("not-a-weight-file\n")
    with pytest.raises(QNetError):
        load_weights(path)
