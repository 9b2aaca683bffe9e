"""Training / evaluation driver and the four-way method comparison."""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import nn
from .agent import Agent, AgentConfig, Algo, ReplayKind, greedy_action, make_buffer
from .replay import Transition
from .world import (
    BUILTIN_MAPS,
    NavEnv,
    ObstacleMap,
    Reason,
    WorldConfig,
    action_command,
    builtin_map,
    load_map,
    sample_start_goal,
)

TRAIN_HEADER = ["episode", "steps", "cum_reward", "outcome", "time_s", "len_m"]
COMPARE_HEADER = ["method", "success_rate", "avg_time_s", "avg_len_m"]
METHODS = {
    "dqn": (Algo.DQN, ReplayKind.UNIFORM),
    "ddqn": (Algo.DDQN, ReplayKind.UNIFORM),
    "dqn_per": (Algo.DQN, ReplayKind.PER),
    "ddqn_per": (Algo.DDQN, ReplayKind.PER),
}


COMPARE_EPISODES = 500


class ConfigError(ValueError):
    pass


class NumericalError(RuntimeError):
    pass


@dataclass(frozen=True)
class RunConfig:
    map: str = "open10"
    algo: Algo = Algo.DDQN
    replay: ReplayKind = ReplayKind.PER
    episodes: int = 2500
    seed: int = 0
    out: str = "runs"
    # agent
    epsilon: float = 0.05
    gamma: float = 0.99
    lr: float = 0.03
    batch_size: int = 64
    target_sync_every: int = 200
    clip_norm: float = 10.0
    warmup: int = 500
    # replay
    buffer_capacity: int = 3000
    alpha_prio: float = 0.6
    eps_prio: float = 1e-3
    beta: float = 0.1
    beta_final: float | None = None
    beta_anneal_steps: int = 100_000
    stratified: bool = False
    # world
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
    # evaluation / comparison
    eval_episodes: int = 50
    eval_seed: int = 12345

    def __post_init__(self):
        try:
            object.__setattr__(self, "algo", Algo(self.algo))
        except ValueError:
            raise ConfigError(f"invalid algo {self.algo!r} (choose dqn or ddqn)") from None
        try:
            object.__setattr__(self, "replay", ReplayKind(self.replay))
        except ValueError:
            raise ConfigError(f"invalid replay {self.replay!r} (choose uniform or per)") from None
        if self.episodes < 0:
            raise ConfigError("episodes must be >= 0")

    def agent_config(self) -> AgentConfig:
        clip = self.clip_norm if self.clip_norm > 0 else None
        return AgentConfig(
            epsilon=self.epsilon, gamma=self.gamma, lr=self.lr, batch_size=self.batch_size,
            target_sync_every=self.target_sync_every, algo=self.algo,
            replay_kind=self.replay, clip_norm=clip,
        )

    def world_config(self) -> WorldConfig:
        names = {f.name for f in fields(WorldConfig)}
        return WorldConfig(**{k: v for k, v in asdict(self).items() if k in names})


def _coerce(field_type, raw: str, key: str):
    t = field_type if isinstance(field_type, str) else getattr(field_type, "__name__", str(field_type))
    try:
        if "None" in t and raw.lower() in ("none", ""):
            return None
        if t.startswith("bool"):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if t.startswith("int"):
            return int(raw)
        if t.startswith("float"):
            val = float(raw)
            if not math.isfinite(val):
                raise ValueError(raw)
            return val
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


def parse_config_text(text: str) -> dict:
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    known = {f.name: f.type for f in fields(RunConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        values[key] = _coerce(known[key], raw, key)
    return values


def config_from(overrides: dict, config_file: str | Path | None = None,
                defaults: dict | None = None) -> RunConfig:
    """Layer ``defaults`` < config file < non-None ``overrides`` into a RunConfig."""
    values = dict(defaults or {})
    if config_file is not None:
        values.update(parse_config_text(Path(config_file).read_text(encoding="utf-8")))
    values.update({k: v for k, v in overrides.items() if v is not None})
    cfg = RunConfig(**values)
    try:
        cfg.agent_config()
        cfg.world_config()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def resolve_map(spec: str | ObstacleMap) -> ObstacleMap:
    if isinstance(spec, ObstacleMap):
        return spec
    path = Path(spec)
    if path.is_file():
        return load_map(path.read_text(encoding="utf-8"), path.stem)
    if spec in BUILTIN_MAPS:
        return builtin_map(spec)
    raise FileNotFoundError(f"map {spec!r} is neither a file nor a builtin ({', '.join(BUILTIN_MAPS)})")


@dataclass(frozen=True)
class EpisodeRecord:
    episode: int
    steps: int
    cum_reward: float
    outcome: Reason
    time_s: float
    len_m: float

    def row(self) -> list[str]:
        return [
            str(self.episode), str(self.steps), repr(float(self.cum_reward)),
            self.outcome.value, repr(float(self.time_s)), repr(float(self.len_m)),
        ]


@dataclass(frozen=True)
class ExperimentSummary:
    method: str
    success_rate: float
    avg_time_s: float
    avg_len_m: float
    episodes: int

    def row(self) -> list[str]:
        return [self.method, f"{self.success_rate:.1f}", f"{self.avg_time_s:.3f}", f"{self.avg_len_m:.3f}"]


def summarize(method: str, records) -> ExperimentSummary:
    """Success rate over all episodes; time and length averaged over successes only."""
    records = list(records)
    wins = [r for r in records if r.outcome is Reason.GOAL]
    n = len(records)
    rate = 100.0 * len(wins) / n if n else 0.0
    avg_t = float(np.mean([r.time_s for r in wins])) if wins else math.nan
    avg_l = float(np.mean([r.len_m for r in wins])) if wins else math.nan
    return ExperimentSummary(method, rate, avg_t, avg_l, n)


def run_episode(env: NavEnv, start, goal, act, on_step=None, index: int = 0) -> EpisodeRecord:
    """Roll out one episode; ``act(state) -> action``; ``on_step(state, a, outcome)``."""
    state = env.reset(start, goal)
    dt = env.config.dt
    cum, length, steps = 0.0, 0.0, 0
    while True:
        a = act(state)
        outcome = env.step(a)
        steps += 1
        cum += outcome.reward
        length += action_command(a).linear_speed * dt
        if on_step is not None:
            on_step(state, a, outcome)
        state = outcome.next_state
        if outcome.done:
            return EpisodeRecord(index, steps, cum, outcome.reason, steps * dt, length)


def _streams(seed: int):
    ss = np.random.SeedSequence(seed)
    return [np.random.default_rng(s) for s in ss.spawn(4)]


def train(config: RunConfig, out_dir: str | Path | None = None, omap: ObstacleMap | None = None,
          progress=None):
    """Train one agent; returns ``(network, records)``.

    Writes ``train.csv`` (flushed per episode) and ``params.bin`` into
    ``out_dir`` when given.
    """
    omap = omap if omap is not None else resolve_map(config.map)
    wcfg = config.world_config()
    acfg = config.agent_config()
    init_rng, env_rng, act_rng, replay_rng = _streams(config.seed)
    buffer = make_buffer(
        acfg, config.buffer_capacity, alpha=config.alpha_prio, eps=config.eps_prio,
        beta=config.beta, beta_final=config.beta_final,
        beta_anneal_steps=config.beta_anneal_steps, stratified=config.stratified,
    ) if acfg.replay_kind is ReplayKind.PER else make_buffer(acfg, config.buffer_capacity)
    agent = Agent(acfg, buffer, init_rng)
    env = NavEnv(omap, wcfg)
    warmup = max(config.warmup, acfg.batch_size)

    fh = writer = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        fh = open(out_dir / "train.csv", "w", newline="", encoding="utf-8")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRAIN_HEADER)
        fh.flush()

    def on_step(state, a, outcome):
        buffer.push(Transition(state, a, outcome.reward, outcome.next_state,
                               outcome.reason in (Reason.GOAL, Reason.COLLISION)))
        if len(buffer) >= warmup:
            loss = agent.train_step(replay_rng)
            if not math.isfinite(loss):
                raise NumericalError(
                    f"non-finite loss at training step {agent.train_steps}"
                )

    records = []
    try:
        for ep in range(config.episodes):
            start, goal = sample_start_goal(omap, env_rng, wcfg)
            try:
                rec = run_episode(env, start, goal,
                                  lambda s: agent.select_action(s, act_rng), on_step, ep)
            except nn.NetworkError as exc:
                raise NumericalError(f"episode {ep}: {exc}") from exc
            records.append(rec)
            if writer is not None:
                writer.writerow(rec.row())
                fh.flush()
            if progress is not None:
                progress(rec)
    finally:
        if fh is not None:
            fh.close()
    if out_dir is not None:
        (out_dir / "params.bin").write_bytes(nn.save_params(agent.current_net))
    return agent.current_net, records


def eval_pairs(omap: ObstacleMap, n: int, seed: int, config: WorldConfig = WorldConfig()):
    rng = np.random.default_rng(seed)
    return [sample_start_goal(omap, rng, config) for _ in range(n)]


def evaluate(net: nn.Network, omap: ObstacleMap, n: int, seed: int,
             config: WorldConfig = WorldConfig(), method: str = "eval"):
    """Greedy rollouts on ``n`` seeded start/goal pairs, identical for any net."""
    if n < 1:
        raise ValueError("n must be >= 1")
    env = NavEnv(omap, config)
    records = [
        run_episode(env, start, goal, lambda s: greedy_action(net, s), index=i)
        for i, (start, goal) in enumerate(eval_pairs(omap, n, seed, config))
    ]
    return summarize(method, records), records


def _method_job(config: RunConfig, name: str, omap: ObstacleMap, n_eval: int, sub):
    algo, kind = METHODS[name]
    cfg = replace(config, algo=algo, replay=kind)
    net, _ = train(cfg, sub, omap)
    summary, _ = evaluate(net, omap, n_eval, config.eval_seed, config.world_config(), name)
    return summary


def compare(config: RunConfig, n_eval: int | None = None, out_dir: str | Path | None = None,
            methods=tuple(METHODS), progress=None, jobs: int = 1):
    """Train and evaluate the method variants under identical seeds and pairs.

    With ``jobs > 1`` the variants run as independent worker processes; each
    owns its seeded streams, so results match the sequential run exactly.
    """
    n_eval = config.eval_episodes if n_eval is None else n_eval
    if jobs < 1:
        raise ConfigError("jobs must be >= 1")
    omap = resolve_map(config.map)
    out_dir = Path(out_dir) if out_dir is not None else None
    args = [(config, name, omap, n_eval, out_dir / name if out_dir is not None else None)
            for name in methods]
    summaries = []
    if jobs == 1:
        for a in args:
            summaries.append(_method_job(*a))
            if progress is not None:
                progress(summaries[-1])
    else:
        with ProcessPoolExecutor(max_workers=min(jobs, len(args))) as pool:
            futures = [pool.submit(_method_job, *a) for a in args]
            for fut in futures:
                summaries.append(fut.result())
                if progress is not None:
                    progress(summaries[-1])
    if out_dir is not None:
        write_compare_csv(out_dir / "compare.csv", summaries)
        meta = {
            "map": omap.name, "seed": config.seed, "episodes": config.episodes,
            "eval_episodes": n_eval, "eval_seed": config.eval_seed,
            "avg_time_s": "mean over successful evaluation episodes only",
            "avg_len_m": "mean over successful evaluation episodes only",
        }
        (out_dir / "compare_meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    return summaries


def write_compare_csv(path, summaries) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COMPARE_HEADER)
        for s in summaries:
            w.writerow(s.row())


def read_train_csv(path) -> list[EpisodeRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [
        EpisodeRecord(int(r["episode"]), int(r["steps"]), float(r["cum_reward"]),
                      Reason(r["outcome"]), float(r["time_s"]), float(r["len_m"]))
        for r in rows
    ]
