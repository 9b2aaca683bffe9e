"""2D occupancy-grid world with a unicycle vehicle and a ray-cast lidar.

Coordinates: x grows with column index, y grows upward. Row 0 of a map file is
the top (max-y) row, so cell ``(row, col)`` covers
``x in [col*res, (col+1)*res)`` and ``y in [(H-1-row)*res, (H-row)*res)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources

import numpy as np

N_GROUPS = 15
STATE_DIM = N_GROUPS + 2

LINEAR_SPEEDS = (0.2, 0.4, 0.6, 0.8, 1.0)
ANGULAR_RATES = (-1.0, -0.5, 0.0, 0.5, 1.0)
N_ACTIONS = len(LINEAR_SPEEDS) * len(ANGULAR_RATES)


class WorldError(Exception):
    """Base class for simulator errors."""


class MapParseError(WorldError):
    pass


class MapDimensionError(WorldError):
    pass


class MapBorderError(WorldError):
    pass


class PoseInObstacleError(WorldError):
    pass


class GroupingError(WorldError):
    pass


class SamplingExhaustedError(WorldError):
    pass


class Reason(str, Enum):
    GOAL = "goal"
    COLLISION = "collision"
    TIMEOUT = "timeout"
    RUNNING = "running"


@dataclass(frozen=True)
class WorldConfig:
    beam_count: int = 360
    max_range: float = 3.5
    dt: float = 0.1
    max_steps: int = 500
    goal_radius: float = 0.3
    collision_threshold: float = 0.15
    min_separation: float = 2.0
    goal_reward: float = 100.0
    collision_reward: float = -100.0
    k_progress: float = 10.0
    k_time: float = 0.05
    max_sample_tries: int = 10_000


@dataclass
class ObstacleMap:
    width: int
    height: int
    resolution: float
    cells: np.ndarray  # bool (height, width), row 0 = top
    name: str = "map"
    _clearance_cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.cells = np.asarray(self.cells, dtype=bool)
        if self.cells.shape != (self.height, self.width):
            raise MapDimensionError(
                f"cells shape {self.cells.shape} does not match size {self.width}x{self.height}"
            )
        # bottom-up view, indexed [iy, ix]
        self._occ = np.ascontiguousarray(self.cells[::-1])

    @property
    def free_count(self) -> int:
        return int((~self.cells).sum())

    @property
    def diagonal(self) -> float:
        return self.resolution * math.hypot(self.width, self.height)

    def is_occupied(self, x: float, y: float) -> bool:
        ix = math.floor(x / self.resolution)
        iy = math.floor(y / self.resolution)
        if ix < 0 or iy < 0 or ix >= self.width or iy >= self.height:
            return True
        return bool(self._occ[iy, ix])

    def cell_center(self, row: int, col: int) -> tuple[float, float]:
        r = self.resolution
        return (col + 0.5) * r, (self.height - 1 - row + 0.5) * r

    def to_text(self) -> str:
        lines = [f"resolution {self.resolution!r}", f"size {self.width} {self.height}"]
        lines += ["".join("#" if c else "." for c in row) for row in self.cells]
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    heading: float = 0.0


@dataclass(frozen=True)
class ActionCommand:
    index: int
    linear_speed: float
    angular_rate: float


ACTIONS = tuple(
    ActionCommand(5 * i + j, v, w)
    for i, v in enumerate(LINEAR_SPEEDS)
    for j, w in enumerate(ANGULAR_RATES)
)


def action_command(index: int) -> ActionCommand:
    if not 0 <= index < N_ACTIONS:
        raise ValueError(f"action index {index} outside [0, {N_ACTIONS})")
    return ACTIONS[index]


@dataclass(frozen=True)
class StepOutcome:
    next_state: np.ndarray
    reward: float
    done: bool
    reason: Reason
    next_pose: Pose


def wrap_angle(a: float) -> float:
    """Normalize an angle to [-pi, pi)."""
    w = (a + math.pi) % (2.0 * math.pi) - math.pi
    if w >= math.pi:
        w -= 2.0 * math.pi
    return w


def load_map(text: str, name: str = "map") -> ObstacleMap:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if len(lines) < 2:
        raise MapParseError("line 1: missing 'resolution' and 'size' header")

    head = lines[0].split()
    if len(head) != 2 or head[0] != "resolution":
        raise MapParseError(f"line 1: expected 'resolution <float>', got {lines[0]!r}")
    try:
        resolution = float(head[1])
    except ValueError:
        raise MapParseError(f"line 1: bad resolution {head[1]!r}") from None
    if not math.isfinite(resolution) or resolution <= 0:
        raise MapDimensionError(f"line 1: resolution must be > 0, got {resolution}")

    size = lines[1].split()
    if len(size) != 3 or size[0] != "size":
        raise MapParseError(f"line 2: expected 'size <width> <height>', got {lines[1]!r}")
    try:
        width, height = int(size[1]), int(size[2])
    except ValueError:
        raise MapParseError(f"line 2: bad size {lines[1]!r}") from None
    if width < 3 or height < 3:
        raise MapDimensionError(f"map must be at least 3x3, got {width}x{height}")

    rows = lines[2:]
    if len(rows) != height:
        raise MapParseError(f"expected {height} grid rows, got {len(rows)}")
    cells = np.zeros((height, width), dtype=bool)
    for r, row in enumerate(rows):
        lineno = r + 3
        if len(row) != width:
            raise MapParseError(f"line {lineno}: expected {width} characters, got {len(row)}")
        for c, ch in enumerate(row):
            if ch == "#":
                cells[r, c] = True
            elif ch != ".":
                raise MapParseError(
                    f"line {lineno}, column {c + 1}: invalid cell character {ch!r}"
                )

    border = np.concatenate([cells[0], cells[-1], cells[:, 0], cells[:, -1]])
    if not border.all():
        rr, cc = np.nonzero(~cells)
        on_edge = (rr == 0) | (rr == height - 1) | (cc == 0) | (cc == width - 1)
        r, c = int(rr[on_edge][0]), int(cc[on_edge][0])
        raise MapBorderError(f"line {r + 3}, column {c + 1}: border cell is free")
    return ObstacleMap(width, height, resolution, cells, name)


BUILTIN_MAPS = ("open10", "utrap")


def builtin_map(name: str) -> ObstacleMap:
    if name not in BUILTIN_MAPS:
        raise KeyError(f"unknown builtin map {name!r}; choose from {', '.join(BUILTIN_MAPS)}")
    text = resources.files("perddqn.maps").joinpath(f"{name}.txt").read_text(encoding="utf-8")
    return load_map(text, name)


def raycast(
    omap: ObstacleMap, pose: Pose, beam_count: int = 360, max_range: float = 3.5
) -> np.ndarray:
    """Cast ``beam_count`` beams over 360 degrees with an exact grid traversal.

    Beam k points at ``heading + 2*pi*k/B - pi``; each range is the distance to
    the first occupied cell boundary, clamped to ``max_range``.
    """
    if omap.is_occupied(pose.x, pose.y):
        raise PoseInObstacleError(f"pose ({pose.x:.3f}, {pose.y:.3f}) lies in an occupied cell")
    res = omap.resolution
    angles = pose.heading + 2.0 * math.pi * np.arange(beam_count) / beam_count - math.pi
    dx, dy = np.cos(angles), np.sin(angles)

    ix0 = math.floor(pose.x / res)
    iy0 = math.floor(pose.y / res)
    ix = np.full(beam_count, ix0, dtype=np.int64)
    iy = np.full(beam_count, iy0, dtype=np.int64)
    step_x = np.where(dx > 0, 1, -1)
    step_y = np.where(dy > 0, 1, -1)
    with np.errstate(divide="ignore", invalid="ignore"):
        bx = np.where(dx > 0, (ix0 + 1) * res, ix0 * res)
        by = np.where(dy > 0, (iy0 + 1) * res, iy0 * res)
        t_max_x = np.where(dx != 0, (bx - pose.x) / dx, np.inf)
        t_max_y = np.where(dy != 0, (by - pose.y) / dy, np.inf)
        t_delta_x = np.where(dx != 0, res / np.abs(dx), np.inf)
        t_delta_y = np.where(dy != 0, res / np.abs(dy), np.inf)

    ranges = np.full(beam_count, max_range)
    active = np.ones(beam_count, dtype=bool)
    occ = omap._occ
    for _ in range(omap.width + omap.height + 2):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        along_x = t_max_x[idx] <= t_max_y[idx]
        t = np.where(along_x, t_max_x[idx], t_max_y[idx])
        xi, yi = idx[along_x], idx[~along_x]
        ix[xi] += step_x[xi]
        t_max_x[xi] += t_delta_x[xi]
        iy[yi] += step_y[yi]
        t_max_y[yi] += t_delta_y[yi]

        beyond = t >= max_range
        cx, cy = ix[idx], iy[idx]
        outside = (cx < 0) | (cy < 0) | (cx >= omap.width) | (cy >= omap.height)
        hit = outside.copy()
        inside = ~outside
        hit[inside] = occ[cy[inside], cx[inside]]
        hit &= ~beyond
        ranges[idx[hit]] = t[hit]
        active[idx[hit | beyond]] = False
    # pose exactly on a cell edge can give t == 0
    return np.maximum(ranges, 1e-9)


def group_scan(scan: np.ndarray, n_groups: int = N_GROUPS) -> np.ndarray:
    scan = np.asarray(scan, dtype=np.float64)
    if scan.ndim != 1 or scan.size % n_groups != 0:
        raise GroupingError(f"beam count {scan.size} is not divisible by {n_groups}")
    return scan.reshape(n_groups, -1).min(axis=1)


def step_kinematics(pose: Pose, cmd: ActionCommand, dt: float) -> Pose:
    """Turn-then-move Euler step of the unicycle model."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    heading = wrap_angle(pose.heading + cmd.angular_rate * dt)
    return Pose(
        pose.x + cmd.linear_speed * math.cos(heading) * dt,
        pose.y + cmd.linear_speed * math.sin(heading) * dt,
        heading,
    )


def goal_features(omap: ObstacleMap, pose: Pose, goal: Pose) -> tuple[float, float]:
    gx, gy = goal.x - pose.x, goal.y - pose.y
    dist = math.hypot(gx, gy)
    bearing = wrap_angle(math.atan2(gy, gx) - pose.heading) if dist > 0 else 0.0
    return min(dist / omap.diagonal, 1.0), bearing / math.pi


def state_from_scan(omap: ObstacleMap, scan: np.ndarray, pose: Pose, goal: Pose, max_range: float):
    state = np.empty(STATE_DIM)
    state[:N_GROUPS] = group_scan(scan) / max_range
    state[N_GROUPS], state[N_GROUPS + 1] = goal_features(omap, pose, goal)
    return state


def compute_state(
    omap: ObstacleMap, pose: Pose, goal: Pose, config: WorldConfig = WorldConfig()
) -> np.ndarray:
    scan = raycast(omap, pose, config.beam_count, config.max_range)
    return state_from_scan(omap, scan, pose, goal, config.max_range)


def compute_reward_and_termination(
    prev_pose: Pose,
    outcome_pose: Pose,
    goal: Pose,
    min_lidar: float,
    step_index: int,
    config: WorldConfig = WorldConfig(),
) -> tuple[float, Reason]:
    """Reward and reason for the step that moved ``prev_pose`` to ``outcome_pose``.

    ``step_index`` counts executed steps in the episode, this one included.
    """
    if step_index < 0:
        raise ValueError("step_index must be >= 0")
    d_prev = math.hypot(goal.x - prev_pose.x, goal.y - prev_pose.y)
    d_now = math.hypot(goal.x - outcome_pose.x, goal.y - outcome_pose.y)
    if d_now < config.goal_radius:
        return config.goal_reward, Reason.GOAL
    if min_lidar < config.collision_threshold:
        return config.collision_reward, Reason.COLLISION
    shaping = config.k_progress * (d_prev - d_now) - config.k_time
    if step_index >= config.max_steps:
        return shaping, Reason.TIMEOUT
    return shaping, Reason.RUNNING


def _eligible_cells(omap: ObstacleMap, config: WorldConfig) -> np.ndarray:
    key = (config.beam_count, config.max_range, config.collision_threshold)
    cached = omap._clearance_cache.get(key)
    if cached is not None:
        return cached
    centers = []
    for r, c in zip(*np.nonzero(~omap.cells)):
        x, y = omap.cell_center(int(r), int(c))
        scan = raycast(omap, Pose(x, y, 0.0), config.beam_count, config.max_range)
        if scan.min() >= config.collision_threshold:
            centers.append((x, y))
    out = np.array(centers, dtype=np.float64).reshape(-1, 2)
    omap._clearance_cache[key] = out
    return out


def sample_start_goal(
    omap: ObstacleMap, rng: np.random.Generator, config: WorldConfig = WorldConfig()
) -> tuple[Pose, Pose]:
    """Draw a random start pose and goal at centers of distinct free cells."""
    cells = _eligible_cells(omap, config)
    if len(cells) < 2:
        raise SamplingExhaustedError(f"map {omap.name!r} has fewer than 2 usable free cells")
    for _ in range(config.max_sample_tries):
        i, j = rng.integers(len(cells), size=2)
        if i == j:
            continue
        (sx, sy), (gx, gy) = cells[i], cells[j]
        if math.hypot(gx - sx, gy - sy) >= config.min_separation:
            heading = float(rng.uniform(-math.pi, math.pi))
            return Pose(float(sx), float(sy), wrap_angle(heading)), Pose(float(gx), float(gy), 0.0)
    raise SamplingExhaustedError(
        f"no start/goal pair at least {config.min_separation} m apart after "
        f"{config.max_sample_tries} draws on map {omap.name!r}"
    )


class NavEnv:
    """Episode wrapper: holds the vehicle pose, goal and step counter."""

    def __init__(self, omap: ObstacleMap, config: WorldConfig = WorldConfig()):
        self.map = omap
        self.config = config
        self.pose: Pose | None = None
        self.goal: Pose | None = None
        self.steps = 0
        self.state: np.ndarray | None = None

    def reset(self, start: Pose, goal: Pose) -> np.ndarray:
        self.pose, self.goal, self.steps = start, goal, 0
        self.state = compute_state(self.map, start, goal, self.config)
        return self.state

    def step(self, action: int) -> StepOutcome:
        if self.pose is None:
            raise RuntimeError("reset() must be called before step()")
        cfg = self.config
        cmd = action_command(action)
        prev = self.pose
        pose = step_kinematics(prev, cmd, cfg.dt)
        self.steps += 1
        if self.map.is_occupied(pose.x, pose.y):
            # only reachable when speed*dt exceeds the collision threshold
            reward, reason = compute_reward_and_termination(
                prev, pose, self.goal, 0.0, self.steps, cfg
            )
            state = self.state
        else:
            scan = raycast(self.map, pose, cfg.beam_count, cfg.max_range)
            reward, reason = compute_reward_and_termination(
                prev, pose, self.goal, float(scan.min()), self.steps, cfg
            )
            state = state_from_scan(self.map, scan, pose, self.goal, cfg.max_range)
        self.pose, self.state = pose, state
        return StepOutcome(state, reward, reason is not Reason.RUNNING, reason, pose)
