"""7x7 maze world: grid, legal movement, BFS shortest path, rewards.

The grid is a matrix of Free/Wall cells with a single start and exit.
The shipped default layout is a three-bar serpentine whose unique
shortest path covers exactly 27 cells (26 moves).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

GRID_SIZE = 7

# Reward scheme consumed by the Q-learning trainer.  The win reward is
# large enough that discounted returns stay positive from every free
# cell, which a ReLU output head can actually represent.
REWARD_WIN = 8.0
REWARD_BLOCKED = -0.75
REWARD_REVISIT = -0.25
REWARD_MOVE = -0.04
ABORT_REWARD_THRESHOLD = -21.0


class Action(Enum):
    """The four moves, ordered; ties in argmax resolve in this order."""

    UP = 0
    DOWN = 1
    LEFT = 2
    RIGHT = 3


# row/col deltas, indexed by Action.value
_DELTAS = {
    Action.UP: (-1, 0),
    Action.DOWN: (1, 0),
    Action.LEFT: (0, -1),
    Action.RIGHT: (0, 1),
}


class MoveOutcome(Enum):
    VALID = "valid"
    BLOCKED = "blocked"
    WIN = "win"


@dataclass(frozen=True, order=True)
class Position:
    row: int
    col: int

    def __post_init__(self):
        if not (0 <= self.row < GRID_SIZE and 0 <= self.col < GRID_SIZE):
            raise ValueError(f"position out of bounds: ({self.row}, {self.col})")


class MazeError(Exception):
    """Invalid maze definition or query."""


class UnreachableExitError(MazeError):
    """No Free-cell path from start to exit."""


@dataclass(frozen=True)
class MazeGrid:
    """Immutable maze: ``walls[r][c]`` True for Wall cells."""

    walls: tuple[tuple[bool, ...], ...]
    start: Position
    exit: Position

    def __post_init__(self):
        if len(self.walls) != GRID_SIZE or any(len(r) != GRID_SIZE for r in self.walls):
            raise MazeError("maze must be 7x7")
        if self.is_wall(self.start) or self.is_wall(self.exit):
            raise MazeError("start and exit must be Free cells")
        if self.start == self.exit:
            raise MazeError("start and exit must be distinct")

    def is_wall(self, pos: Position) -> bool:
        return self.walls[pos.row][pos.col]

    def is_free(self, pos: Position) -> bool:
        return not self.walls[pos.row][pos.col]

    def free_cells(self) -> list[Position]:
        return [
            Position(r, c)
            for r in range(GRID_SIZE)
            for c in range(GRID_SIZE)
            if not self.walls[r][c]
        ]

    def wall_count(self) -> int:
        return sum(sum(row) for row in self.walls)


def valid_moves(grid: MazeGrid, pos: Position) -> set[Action]:
    """Actions whose target cell is in-bounds and Free.

    Raises MazeError if ``pos`` is a Wall cell.
    """
    if grid.is_wall(pos):
        raise MazeError(f"position {pos} is a wall")
    moves = set()
    for action, (dr, dc) in _DELTAS.items():
        r, c = pos.row + dr, pos.col + dc
        if 0 <= r < GRID_SIZE and 0 <= c < GRID_SIZE and not grid.walls[r][c]:
            moves.add(action)
    return moves


def apply_move(grid: MazeGrid, pos: Position, action: Action) -> tuple[Position, MoveOutcome]:
    """Blocked moves (wall or boundary) leave the agent in place."""
    if grid.is_wall(pos):
        raise MazeError(f"position {pos} is a wall")
    dr, dc = _DELTAS[action]
    r, c = pos.row + dr, pos.col + dc
    if not (0 <= r < GRID_SIZE and 0 <= c < GRID_SIZE) or grid.walls[r][c]:
        return pos, MoveOutcome.BLOCKED
    new_pos = Position(r, c)
    if new_pos == grid.exit:
        return new_pos, MoveOutcome.WIN
    return new_pos, MoveOutcome.VALID


def neighbors(grid: MazeGrid, pos: Position) -> list[Position]:
    """Free in-bounds 4-neighbors, in action order."""
    out = []
    for action in Action:
        if action in valid_moves(grid, pos):
            new_pos, _ = apply_move(grid, pos, action)
            out.append(new_pos)
    return out


def shortest_path(grid: MazeGrid) -> list[Position]:
    """BFS shortest Free-cell path start -> exit.

    Deterministic: neighbor expansion follows action order
    Up < Down < Left < Right, so the first path found is reproducible.
    Raises UnreachableExitError when no path exists.
    """
    prev: dict[Position, Position] = {}
    seen = {grid.start}
    queue = deque([grid.start])
    while queue:
        pos = queue.popleft()
        if pos == grid.exit:
            path = [pos]
            while path[-1] != grid.start:
                path.append(prev[path[-1]])
            return list(reversed(path))
        for nxt in neighbors(grid, pos):
            if nxt not in seen:
                seen.add(nxt)
                prev[nxt] = pos
                queue.append(nxt)
    raise UnreachableExitError(f"exit {grid.exit} unreachable from start {grid.start}")


def count_shortest_paths(grid: MazeGrid) -> int:
    """Number of distinct minimum-length paths (uniqueness check)."""
    dist = {grid.start: 0}
    ways = {grid.start: 1}
    queue = deque([grid.start])
    while queue:
        pos = queue.popleft()
        for nxt in neighbors(grid, pos):
            if nxt not in dist:
                dist[nxt] = dist[pos] + 1
                ways[nxt] = ways[pos]
                queue.append(nxt)
            elif dist[nxt] == dist[pos] + 1:
                ways[nxt] += ways[pos]
    if grid.exit not in ways:
        raise UnreachableExitError(f"exit {grid.exit} unreachable from start {grid.start}")
    return ways[grid.exit]


# Serpentine default layout: three wall bars, each with a single opening,
# so the shortest path is forced and unique (27 cells, 26 moves).
_DEFAULT_LAYOUT = """\
S......
######.
.......
.######
.......
######.
....E..
"""


def parse_maze(text: str) -> MazeGrid:
    """Parse the plain-text maze format: 7 lines x 7 chars.

    ``#`` wall, ``.`` free, ``S`` start, ``E`` exit.
    """
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if len(lines) != GRID_SIZE or any(len(ln) != GRID_SIZE for ln in lines):
        raise MazeError("maze text must be 7 lines of 7 characters")
    walls = []
    start = exit_ = None
    for r, line in enumerate(lines):
        row = []
        for c, ch in enumerate(line):
            if ch == "#":
                row.append(True)
            elif ch in ".SE":
                row.append(False)
                if ch == "S":
                    if start is not None:
                        raise MazeError("multiple start cells")
                    start = Position(r, c)
                elif ch == "E":
                    if exit_ is not None:
                        raise MazeError("multiple exit cells")
                    exit_ = Position(r, c)
            else:
                raise MazeError(f"unknown maze character {ch!r}")
        walls.append(tuple(row))
    if start is None or exit_ is None:
        raise MazeError("maze must contain exactly one S and one E")
    return MazeGrid(walls=tuple(walls), start=start, exit=exit_)


def format_maze(grid: MazeGrid) -> str:
    lines = []
    for r in range(GRID_SIZE):
        chars = []
        for c in range(GRID_SIZE):
            pos = Position(r, c)
            if grid.walls[r][c]:
                chars.append("#")
            elif pos == grid.start:
                chars.append("S")
            elif pos == grid.exit:
                chars.append("E")
            else:
                chars.append(".")
        lines.append("".join(chars))
    return "\n".join(lines) + "\n"


def load_maze(path: str | Path) -> MazeGrid:
    return parse_maze(Path(path).read_text())


def default_maze() -> MazeGrid:
    """The pinned default layout; its unique shortest path has 27 cells."""
    return parse_maze(_DEFAULT_LAYOUT)
