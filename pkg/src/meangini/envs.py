"""
Desk-scale environments with deterministic moves and stochastic rewards.

``GuardedMaze`` is a 6x6 maze where one of two equally long routes crosses a
red cell whose reward is a categorical lottery. ``NoisyRegionGrid`` adds Gaussian reward
noise whenever the agent stands in a region defined on its x-coordinate,
optionally scaled by ``max(0, 1 - x / decay_distance)``.

Cells are ``(x, y)`` pairs, states are flat indices ``y * width + x``.
Actions: 0 up (+y), 1 down (-y), 2 left (-x), 3 right (+x).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .risk_measures import CategoricalDist

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

MOVES = ((0, 1), (0, -1), (-1, 0), (1, 0))
ACTION_NAMES = ("up", "down", "left", "right")

#: Counter-based bit generator used for every stream in this package.
RNG_ALGORITHM = "Philox-4x64-10"


def make_rng(seed: int, *stream) -> np.random.Generator:
    """
    Independent Philox stream for ``(seed, *stream)``.

    The stream key is the SeedSequence spawn key, so e.g. ``(seed, "train", k, i)``
    always maps to the same generator whatever order or process draws it.
    """
    key = tuple(_stream_word(s) for s in stream)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=key)))


def _stream_word(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part)
    return int.from_bytes(hashlib.sha256(str(part).encode()).digest()[:4], "little")


@dataclass(frozen=True)
class StepResult:
    next_state: int
    reward: float
    done: bool
    info: dict = field(default_factory=dict)


class GridEnv:
    """Shared grid geometry: walls, blocked moves, state indexing."""

    width: int
    height: int
    walls: frozenset
    max_steps: int
    gamma: float
    start: tuple

    n_actions = 4

    @property
    def n_states(self) -> int:
        return self.width * self.height

    def state_of(self, cell) -> int:
        x, y = cell
        return y * self.width + x

    def cell_of(self, state: int) -> tuple:
        return state % self.width, state // self.width

    def reset(self, rng: np.random.Generator | None = None) -> int:
        return self.state_of(self.start)

    def _move(self, state: int, action: int) -> int:
        if action not in (0, 1, 2, 3):
            raise ValueError(f"step: invalid action {action!r}")
        x, y = self.cell_of(state)
        dx, dy = MOVES[action]
        nx, ny = x + dx, y + dy
        if not (0 <= nx < self.width and 0 <= ny < self.height) or (nx, ny) in self.walls:
            return state
        return self.state_of((nx, ny))

    def next_state_table(self) -> np.ndarray:
        return np.array([[self._move(s, a) for a in range(4)] for s in range(self.n_states)])

    def free_cells(self) -> list:
        return [(x, y) for y in range(self.height) for x in range(self.width) if (x, y) not in self.walls]


#: Two 11-action routes from (0, 0) to (5, 0) that meet at (3, 3): one climbs
#: the left column, the other runs along the bottom through the red cell and
#: climbs column 3.
DEFAULT_WALLS = frozenset({(1, 1), (2, 1), (1, 2), (2, 2), (4, 0), (4, 1), (4, 2)})


@dataclass(frozen=True)
class GuardedMazeConfig:
    width: int = 6
    height: int = 6
    start: tuple = (0, 0)
    goal: tuple = (5, 0)
    red_cell: tuple = (2, 0)
    walls: frozenset = DEFAULT_WALLS
    step_reward: float = -1.0
    red_values: tuple = (-15.0, -1.0, 13.0)
    red_probs: tuple = (0.4, 0.2, 0.4)
    goal_reward: float = 20.0
    max_steps: int = 100
    gamma: float = 0.999

    @property
    def red_reward_dist(self) -> CategoricalDist:
        return CategoricalDist.from_atoms(self.red_values, self.red_probs)


class GuardedMaze(GridEnv):
    """Maze with a red cell whose reward is a lottery, and a red-free detour."""

    kind = "maze"

    def __init__(self, config: GuardedMazeConfig | None = None, **overrides):
        cfg = config or GuardedMazeConfig()
        if overrides:
            cfg = GuardedMazeConfig(**{**cfg.__dict__, **overrides})
        walls = frozenset(tuple(w) for w in cfg.walls)
        for name in ("start", "goal", "red_cell"):
            x, y = getattr(cfg, name)
            if not (0 <= x < cfg.width and 0 <= y < cfg.height):
                raise ValueError(f"GuardedMazeConfig: {name} lies outside the grid")
            if (x, y) in walls:
                raise ValueError(f"GuardedMazeConfig: {name} lies on a wall")
        self.config = cfg
        self.width, self.height = cfg.width, cfg.height
        self.walls = walls
        self.start = tuple(cfg.start)
        self.goal = tuple(cfg.goal)
        self.red_cell = tuple(cfg.red_cell)
        self.max_steps = cfg.max_steps
        self.gamma = cfg.gamma
        self.goal_state = self.state_of(self.goal)
        self.red_state = self.state_of(self.red_cell)
        self._red_values = np.asarray(cfg.red_values, dtype=float)
        self._red_cdf = np.cumsum(cfg.red_probs)
        self._red_cdf[-1] = 1.0
        self._next = self.next_state_table()

    def step(self, state: int, action: int, rng: np.random.Generator, t: int = 0) -> StepResult:
        """
        Move deterministically; blocked moves stay put with the step reward.

        Entering the goal pays ``goal_reward`` and ends the episode, entering the
        red cell samples the red lottery. ``t`` is the number of steps already
        taken; the episode is cut at ``max_steps``.
        """
        nxt = int(self._next[state, action]) if 0 <= action < 4 else self._move(state, action)
        return self._result(state, nxt, rng, t)

    def _result(self, state: int, nxt: int, rng, t: int) -> StepResult:
        visited_red = False
        if nxt == self.goal_state:
            reward, done = self.config.goal_reward, True
        elif nxt == self.red_state:
            # a blocked move that leaves the agent on red also draws the lottery
            idx = int(np.searchsorted(self._red_cdf, rng.random(), side="right"))
            reward, done, visited_red = float(self._red_values[idx]), False, True
        else:
            reward, done = self.config.step_reward, False
        truncated = not done and t + 1 >= self.max_steps
        x, _ = self.cell_of(nxt)
        return StepResult(nxt, float(reward), done or truncated,
                          {"visited_red": visited_red, "in_noisy_region": visited_red,
                           "x_position": float(x), "reached_goal": done, "truncated": truncated})

    def _bfs_actions(self, src: int, dst: int, blocked: frozenset = frozenset()) -> list | None:
        prev = {src: None}
        frontier = [src]
        while frontier and dst not in prev:
            nxt_frontier = []
            for s in frontier:
                if s == self.goal_state and s != dst:
                    continue
                for a in range(4):
                    n = int(self._next[s, a])
                    if n not in prev and n not in blocked:
                        prev[n] = (s, a)
                        nxt_frontier.append(n)
            frontier = nxt_frontier
        if dst not in prev:
            return None
        actions = []
        while prev[dst] is not None:
            dst, a = prev[dst]
            actions.append(a)
        return actions[::-1]

    def safe_path_actions(self) -> list:
        """Shortest action sequence from start to goal that never enters the red cell."""
        path = self._bfs_actions(self.state_of(self.start), self.goal_state, frozenset({self.red_state}))
        if path is None:
            raise ValueError("safe_path_actions: no red-free route to the goal")
        return path

    def risky_path_actions(self) -> list:
        """Shortest action sequence from start to goal passing through the red cell."""
        first = self._bfs_actions(self.state_of(self.start), self.red_state)
        second = self._bfs_actions(self.red_state, self.goal_state)
        if first is None or second is None:
            raise ValueError("risky_path_actions: the red cell is not on a route to the goal")
        return first + second

    def path_rewards(self, actions) -> tuple:
        """
        Walk ``actions`` from the start. Returns the per-step rewards with the
        red-cell steps set to 0 and the list of step indices that enter red.
        """
        s = self.state_of(self.start)
        rewards, red_steps = [], []
        for t, a in enumerate(actions):
            s = int(self._next[s, a])
            if s == self.goal_state:
                rewards.append(self.config.goal_reward)
            elif s == self.red_state:
                rewards.append(0.0)
                red_steps.append(t)
            else:
                rewards.append(self.config.step_reward)
        if s != self.goal_state:
            raise ValueError("path_rewards: the actions do not end on the goal")
        return rewards, red_steps


def _discounted(rewards, gamma: float) -> float:
    r = np.asarray(rewards, dtype=float)
    return float(np.dot(gamma ** np.arange(r.size), r))


def _with_goal(cfg: GuardedMazeConfig, goal_reward) -> GuardedMaze:
    return GuardedMaze(cfg if goal_reward is None else GuardedMazeConfig(**{**cfg.__dict__, "goal_reward": goal_reward}))


def safe_path_return(cfg: GuardedMazeConfig, goal_reward: float | None = None) -> float:
    """Discounted return of the shortest red-free route (deterministic)."""
    env = _with_goal(cfg, goal_reward)
    rewards, _ = env.path_rewards(env.safe_path_actions())
    return _discounted(rewards, cfg.gamma)


def risky_path_return_dist(cfg: GuardedMazeConfig) -> CategoricalDist:
    """Exact return distribution of the shortest route through the red cell (entered once)."""
    env = GuardedMaze(cfg)
    rewards, red_steps = env.path_rewards(env.risky_path_actions())
    if len(red_steps) != 1:
        raise ValueError("risky_path_return_dist: the route must enter red exactly once")
    vals = _discounted(rewards, cfg.gamma) + cfg.gamma ** red_steps[0] * np.asarray(cfg.red_values, dtype=float)
    return CategoricalDist.from_atoms(vals, cfg.red_probs)


def per_step_reward_variance(rewards, gamma: float) -> float:
    """
    Variance of the per-step reward under the discounted occupancy of one
    deterministic trajectory, normalized over its steps.
    """
    r = np.asarray(rewards, dtype=float)
    w = gamma ** np.arange(r.size)
    w = w / w.sum()
    mu = float(np.dot(w, r))
    return float(np.dot(w, (r - mu) ** 2))


def safe_path_reward_variance(cfg: GuardedMazeConfig, goal_reward: float | None = None) -> float:
    env = _with_goal(cfg, goal_reward)
    rewards, _ = env.path_rewards(env.safe_path_actions())
    return per_step_reward_variance(rewards, cfg.gamma)


@dataclass(frozen=True)
class NoisyRegionGridConfig:
    """
    Grid with a noisy band on the x-axis.

    ``x_position = x - x_origin``. The region holds when ``region_min_x <=
    x_position <= region_max_x`` (either bound may be ``None``). Terminal
    ``goals`` map cells to rewards; ``forward_reward`` is paid per +1 move in x.
    """

    width: int = 9
    height: int = 3
    start: tuple = (4, 1)
    walls: frozenset = frozenset()
    goals: tuple = (((0, 1), 10.0), ((8, 1), 12.0))
    step_reward: float = -0.1
    forward_reward: float = 0.0
    x_origin: int = 0
    region_min_x: float | None = 5
    region_max_x: float | None = None
    noise_scale: float = 10.0
    decay: bool = False
    decay_distance: float = 20.0
    max_steps: int = 30
    gamma: float = 0.99

    def __post_init__(self):
        if self.decay and (self.region_min_x is None or self.region_min_x < 0):
            raise ValueError("NoisyRegionGridConfig: decay requires a positive-x region")
        xs = [x - self.x_origin for x in range(self.width)]
        if not any(self.in_region(x) for x in xs):
            raise ValueError("NoisyRegionGridConfig: noisy region is empty")

    def in_region(self, x_position: float) -> bool:
        lo, hi = self.region_min_x, self.region_max_x
        return (lo is None or x_position >= lo) and (hi is None or x_position <= hi)

    def noise_factor(self, x_position: float) -> float:
        if not self.in_region(x_position):
            return 0.0
        if self.decay:
            return self.noise_scale * max(0.0, 1.0 - x_position / self.decay_distance)
        return self.noise_scale


class NoisyRegionGrid(GridEnv):
    """Gridworld whose reward gains ``scale * N(0, 1)`` inside an x-defined region."""

    kind = "grid"

    def __init__(self, config: NoisyRegionGridConfig | None = None, **overrides):
        cfg = config or NoisyRegionGridConfig()
        if overrides:
            cfg = NoisyRegionGridConfig(**{**cfg.__dict__, **overrides})
        self.config = cfg
        self.width, self.height = cfg.width, cfg.height
        self.walls = frozenset(tuple(w) for w in cfg.walls)
        self.start = tuple(cfg.start)
        self.max_steps = cfg.max_steps
        self.gamma = cfg.gamma
        for x, y in [self.start] + [tuple(c) for c, _ in cfg.goals]:
            if not (0 <= x < cfg.width and 0 <= y < cfg.height) or (x, y) in self.walls:
                raise ValueError(f"NoisyRegionGridConfig: cell {(x, y)} is outside the grid or on a wall")
        self.goal_rewards = {self.state_of(tuple(c)): float(r) for c, r in cfg.goals}
        self._next = self.next_state_table()
        self._noise = np.array([cfg.noise_factor(self.cell_of(s)[0] - cfg.x_origin)
                                for s in range(self.n_states)])

    def noise_std(self, state: int) -> float:
        return float(self._noise[state])

    def step(self, state: int, action: int, rng: np.random.Generator, t: int = 0) -> StepResult:
        """Base reward, plus ``noise_factor(x) * N(0, 1)`` when the next cell is in the region."""
        nxt = int(self._next[state, action]) if 0 <= action < 4 else self._move(state, action)
        cfg = self.config
        x_next = self.cell_of(nxt)[0] - cfg.x_origin
        reward = cfg.step_reward + cfg.forward_reward * (x_next - (self.cell_of(state)[0] - cfg.x_origin))
        done = False
        if nxt in self.goal_rewards:
            reward += self.goal_rewards[nxt]
            done = True
        in_region = cfg.in_region(x_next)
        sigma = self._noise[nxt]
        if in_region and sigma > 0:
            reward += sigma * rng.standard_normal()
        truncated = not done and t + 1 >= self.max_steps
        return StepResult(nxt, float(reward), done or truncated,
                          {"visited_red": False, "in_noisy_region": bool(in_region),
                           "x_position": float(x_next), "reached_goal": done,
                           "truncated": truncated, "noise_std": float(sigma)})


def load_env_config(source) -> dict:
    """Read a TOML file (path) or already-parsed mapping holding an ``[env]`` table."""
    if isinstance(source, (str, Path)):
        with open(source, "rb") as fh:
            source = tomllib.load(fh)
    return dict(source.get("env", source))


def make_env(cfg: dict) -> GridEnv:
    """Build an environment from a config mapping with ``kind = "maze" | "grid"``."""
    cfg = dict(cfg)
    kind = cfg.pop("kind", "maze")
    for key in ("start", "goal", "red_cell"):
        if key in cfg:
            cfg[key] = tuple(cfg[key])
    if "walls" in cfg:
        cfg["walls"] = frozenset(tuple(w) for w in cfg["walls"])
    if kind == "maze":
        for key in ("red_values", "red_probs"):
            if key in cfg:
                cfg[key] = tuple(cfg[key])
        return GuardedMaze(GuardedMazeConfig(**cfg))
    if kind == "grid":
        if "goals" in cfg:
            cfg["goals"] = tuple((tuple(g["cell"]), float(g["reward"])) if isinstance(g, dict)
                                  else (tuple(g[0]), float(g[1])) for g in cfg["goals"])
        return NoisyRegionGrid(NoisyRegionGridConfig(**cfg))
    raise ValueError(f"make_env: unknown environment kind {kind!r}")
