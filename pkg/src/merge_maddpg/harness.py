"""Training loop, best-checkpoint tracking, policy transfer and evaluation scenarios."""

import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from . import maddpg, nn
from .config import ConfigError, RunConfig, ScenarioConfig
from .env import MAIN, RAMP, TRACE_HEADER, Cause, InitialConditions, MergeEnv, format_trace_row
from .io import atomic_write_csv, atomic_write_json

log = logging.getLogger(__name__)

WINDOW = 100
SCENARIOS = ("rear_end", "lateral", "eight_cav", "custom")


class NumericError(RuntimeError):
    """A reward, loss or action went non-finite during training."""


def rolling_average(values, window=WINDOW):
    """Trailing mean; the first entries average whatever prefix exists."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("rolling_average needs a non-empty series")
    csum = np.concatenate([[0.0], np.cumsum(values)])
    idx = np.arange(1, values.size + 1)
    lo = np.maximum(0, idx - window)
    return (csum[idx] - csum[lo]) / (idx - lo)


@dataclass
class TrainingRecord:
    n_agents: int
    agent_returns: list = field(default_factory=list)  # per episode, list of N
    network_returns: list = field(default_factory=list)
    rolling: list = field(default_factory=list)
    causes: list = field(default_factory=list)
    sigmas: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    updates: int = 0
    best_rolling: float = -np.inf
    best_episode: int | None = None
    best_history: list = field(default_factory=list)  # (episode, rolling) per save

    @property
    def episodes(self):
        return len(self.network_returns)

    @property
    def cause_counts(self):
        counts = {c.value: 0 for c in Cause}
        for c in self.causes:
            counts[c] += 1
        return counts

    def mean_network_return(self, start, stop):
        return float(np.mean(self.network_returns[start:stop]))

    def metrics_rows(self):
        for e in range(self.episodes):
            yield ([e + 1] + [repr(float(r)) for r in self.agent_returns[e]]
                   + [repr(float(self.network_returns[e])),
                      repr(float(self.network_returns[e]) / self.n_agents),
                      repr(float(self.rolling[e])),
                      self.causes[e], repr(float(self.sigmas[e]))])

    def metrics_header(self):
        return (["episode"] + [f"return_{i}" for i in range(self.n_agents)]
                + ["network_return", "network_mean", "rolling100", "cause", "sigma"])


@dataclass
class TrainResult:
    record: TrainingRecord
    agents: list
    best: list | None  # per-agent checkpoint dicts from the best rolling window
    config: RunConfig


def training_init(cfg: RunConfig):
    return InitialConditions(roads=cfg.roads)


def _check_finite(what, *values):
    for v in values:
        if not np.all(np.isfinite(v)):
            raise NumericError(f"non-finite {what}: {np.asarray(v).tolist()}")


def _best_docs(agents, episode, rolling):
    docs = []
    for ag in agents:
        doc = ag.checkpoint()
        doc.update({"agent": ag.index, "episode": episode, "rolling100": rolling})
        docs.append(doc)
    return docs


def train(cfg: RunConfig, progress=None):
    """Run MADDPG training; returns a :class:`TrainResult`.

    When ``cfg.out_dir`` is set, writes ``config.json`` up front,
    ``best/agent_<i>.json`` whenever the full 100-episode average improves, and
    ``metrics.csv`` at the end (and every ``log_every`` episodes).
    """
    scen, hyper = cfg.scenario, cfg.hyperparameters
    n = scen.n_vehicles
    seq = np.random.SeedSequence(cfg.seed)
    init_ss, env_ss, sample_ss, *noise_ss = seq.spawn(3 + n)
    init_rng = np.random.default_rng(init_ss)
    env_rng = np.random.default_rng(env_ss)
    sample_rng = np.random.default_rng(sample_ss)
    noise_rngs = [np.random.default_rng(s) for s in noise_ss]

    agents = maddpg.make_agents(n, hyper, init_rng)
    buffer = maddpg.ReplayBuffer(min(hyper.buffer_capacity, cfg.episodes * scen.max_steps), n)
    noises = [maddpg.NoiseProcess(hyper.noise_sigma, hyper.noise_decay, hyper.noise_floor)
              for _ in range(n)]
    env = MergeEnv(scen)
    init = training_init(cfg)
    record = TrainingRecord(n)
    best = None
    out = cfg.out_dir
    if out:
        os.makedirs(os.path.join(out, "best"), exist_ok=True)
        atomic_write_json(os.path.join(out, "config.json"), cfg.to_dict())

    min_fill = max(hyper.warmup_steps, hyper.batch_size)
    total_steps = 0
    for episode in range(1, cfg.episodes + 1):
        obs = env.reset(init, env_rng, episode=episode)
        returns = np.zeros(n)
        while True:
            actions = np.array([maddpg.act(ag, obs[ag.index], scen, noises[ag.index],
                                           noise_rngs[ag.index]) for ag in agents])
            _check_finite("action", actions)
            outcome = env.step(actions)
            _check_finite("reward", outcome.rewards)
            buffer.push(obs, actions, outcome.rewards, outcome.observations, outcome.done)
            returns += outcome.rewards
            obs = outcome.observations
            total_steps += 1
            if len(buffer) >= min_fill and total_steps % hyper.update_every == 0:
                batch = buffer.sample(hyper.batch_size, sample_rng)
                stats = maddpg.train_step(agents, batch, hyper, scen)
                record.updates += 1
                _check_finite("critic loss / mean Q", np.asarray(stats))
            if outcome.done:
                break

        record.agent_returns.append(returns.tolist())
        record.network_returns.append(float(returns.sum()))
        window = record.network_returns[-WINDOW:]
        rolling = float(np.mean(window))
        record.rolling.append(rolling)
        record.causes.append(env.cause.value)
        record.sigmas.append(noises[0].sigma)
        record.steps.append(env.steps)
        for noise in noises:
            noise.end_episode()

        # only a full window counts as a 100-episode average
        if episode >= WINDOW and rolling > record.best_rolling:
            record.best_rolling = rolling
            record.best_episode = episode
            record.best_history.append((episode, rolling))
            best = _best_docs(agents, episode, rolling)
            if out:
                for doc in best:
                    atomic_write_json(os.path.join(out, "best", f"agent_{doc['agent']}.json"), doc)

        if progress is not None:
            progress(episode, record)
        if cfg.log_every and episode % cfg.log_every == 0:
            log.info("episode %d rolling100 %.3f best %.3f causes %s", episode, rolling,
                     record.best_rolling, record.cause_counts)
            if out:
                write_metrics(record, os.path.join(out, "metrics.csv"))

    if out:
        write_metrics(record, os.path.join(out, "metrics.csv"))
    return TrainResult(record, agents, best, cfg)


def write_metrics(record, path):
    atomic_write_csv(path, record.metrics_header(), record.metrics_rows())


# ---------------------------------------------------------------- checkpoints

def load_checkpoint_dir(path):
    """Per-agent checkpoint documents from ``<path>/agent_<i>.json`` (or ``<path>/best``)."""
    if os.path.isdir(os.path.join(path, "best")):
        path = os.path.join(path, "best")
    if not os.path.isdir(path):
        raise FileNotFoundError(f"checkpoint directory not found: {path}")
    names = sorted((f for f in os.listdir(path) if f.startswith("agent_") and f.endswith(".json")),
                   key=lambda f: int(f[len("agent_"):-len(".json")]))
    if not names:
        raise nn.CheckpointError(f"no agent_<i>.json files in {path}")
    docs = []
    for name in names:
        with open(os.path.join(path, name)) as fh:
            text = fh.read()
        try:
            docs.append(json.loads(text))
        except json.JSONDecodeError as exc:
            raise nn.CheckpointError(f"{name}: not valid JSON ({exc})") from None
    return docs


def save_checkpoint_dir(docs, path):
    for i, doc in enumerate(docs):
        atomic_write_json(os.path.join(path, f"agent_{i}.json"), doc)


def transfer_policy(checkpoint, n_target, source=0):
    """Replicate one trained actor into ``n_target`` independent policies.

    ``checkpoint`` may be a list of per-agent documents, a single agent
    document (with an ``actor`` key), or a bare network checkpoint.
    """
    if n_target < 1:
        raise ValueError("n_target must be >= 1")
    if isinstance(checkpoint, list):
        if not checkpoint:
            raise nn.CheckpointError("checkpoint holds no agents")
        if not 0 <= source < len(checkpoint):
            raise nn.CheckpointError(f"source agent {source} not in checkpoint of {len(checkpoint)}")
        checkpoint = checkpoint[source]
    if not isinstance(checkpoint, dict):
        raise nn.CheckpointError("checkpoint must be a document or list of documents")
    doc = checkpoint.get("actor", checkpoint)
    actor = nn.load_checkpoint(doc)
    if actor.output_dim != 1 or actor.activations[-1] != "tanh":
        raise nn.CheckpointError("selected network is not an actor (tanh, 1 output)")
    return [actor.copy() for _ in range(n_target)]


# ----------------------------------------------------------------- evaluation

@dataclass
class EpisodeTrace:
    rows: list
    cause: Cause
    events: list
    roads: tuple
    cfg: ScenarioConfig

    @property
    def n_vehicles(self):
        return len(self.roads)

    @property
    def steps(self):
        return len(self.rows) // self.n_vehicles

    def column(self, name):
        """(steps, N) array of a numeric trace column."""
        k = TRACE_HEADER.index(name)
        return np.array([r[k] for r in self.rows], dtype=np.float64).reshape(self.steps, -1)

    def times(self):
        return self.column("t")[:, 0]

    def phases(self):
        k = TRACE_HEADER.index("phase")
        return np.array([r[k] for r in self.rows]).reshape(self.steps, -1)

    def csv_rows(self):
        return [format_trace_row(r) for r in self.rows]

    def write_csv(self, path):
        atomic_write_csv(path, TRACE_HEADER, self.csv_rows())


def scenario_init(name, cfg, rng, custom=None):
    """Initial conditions for a named demonstration scenario."""
    if name == "rear_end":
        # follower (0) faster than its leader (1), both on the main road
        return InitialConditions(roads=(MAIN, MAIN), positions=(0.0, 15.0), speeds=(12.0, 8.0))
    if name == "lateral":
        # same speeds, projected gap 0.3 m: they would reach the merge together
        return InitialConditions(roads=(MAIN, RAMP), positions=(0.3, 0.0), speeds=(10.0, 10.0))
    if name == "eight_cav":
        roads = (MAIN,) * 4 + (RAMP,) * 4
        return InitialConditions(roads=roads, speeds=(13.0,) * 4 + (12.0,) * 4,
                                 p_range=(0.0, 30.0), min_spacing=2.0)
    if name == "custom":
        if custom is None:
            raise ConfigError("custom scenario needs explicit InitialConditions")
        return custom
    raise ConfigError(f"unknown scenario {name!r}; expected one of {SCENARIOS}")


def rollout(policies, init, cfg, rng, episode=1):
    """Noise-free closed-loop episode; returns an :class:`EpisodeTrace`."""
    if len(policies) < len(init.roads):
        raise ValueError(f"{len(init.roads)} vehicles but only {len(policies)} policies")
    env = MergeEnv(cfg, record=True)
    obs = env.reset(init, rng, episode=episode)
    lo, hi = cfg.u_min, cfg.u_max
    while True:
        actions = [min(hi, max(lo, maddpg.scale_action(float(policies[i](obs[i])[0]), cfg)))
                   for i in range(env.n)]
        outcome = env.step(actions)
        obs = outcome.observations
        if outcome.done:
            return EpisodeTrace(env.trace, outcome.cause, outcome.events, tuple(init.roads), cfg)


def evaluate(policies, scenario, seed=0, cfg=None, custom=None):
    cfg = cfg or ScenarioConfig()
    rng = np.random.default_rng(seed)
    init = scenario_init(scenario, cfg, rng, custom)
    return rollout(policies, init, cfg, rng)


def collision_free_rate(policies, rollouts=100, seed=0, cfg=None, roads=(MAIN, RAMP)):
    """Fraction of noise-free rollouts, from training-style random starts, with no collision."""
    cfg = cfg or ScenarioConfig()
    rng = np.random.default_rng(seed)
    init = InitialConditions(roads=tuple(roads))
    ok = 0
    for k in range(rollouts):
        trace = rollout(policies, init, cfg, rng, episode=k + 1)
        ok += trace.cause is not Cause.COLLISION
    return ok / rollouts


@dataclass
class SpeedRange:
    """Per-road instantaneous speed statistics over vehicles still in the zones."""

    rows: list  # (road, t, min, avg, max, count)
    causes: list

    header = ("road", "t", "v_min", "v_avg", "v_max", "count")

    def series(self, road):
        sel = [r for r in self.rows if r[0] == road]
        return {k: np.array([r[i] for r in sel]) for i, k in enumerate(self.header) if i}

    def csv_rows(self):
        return [[road, f"{t:.1f}", f"{a:.6f}", f"{b:.6f}", f"{c:.6f}", str(n)]
                for road, t, a, b, c, n in self.rows]

    def write_csv(self, path):
        atomic_write_csv(path, self.header, self.csv_rows())


def speed_range_init(cfg, speed_range=(6.0, 13.0)):
    roads = (MAIN,) * 4 + (RAMP,) * 4
    return InitialConditions(roads=roads, p_range=(0.0, 30.0), min_spacing=2.0,
                             v_range=tuple(speed_range))


def speed_range_experiment(policies, runs=5, seed=0, cfg=None, speed_range=(6.0, 13.0),
                           init=None):
    """Aggregate instantaneous min/avg/max speed per road and time step across runs."""
    cfg = cfg or ScenarioConfig()
    rng = np.random.default_rng(seed)
    init = init or speed_range_init(cfg, speed_range)
    samples = {}  # (road, step) -> speeds
    causes = []
    for k in range(runs):
        trace = rollout(policies, init, cfg, rng, episode=k + 1)
        causes.append(trace.cause.value)
        speeds = trace.column("v")
        phases = trace.phases()
        for step in range(trace.steps):
            for i, road in enumerate(trace.roads):
                if phases[step, i] != "exited":
                    samples.setdefault((road, step), []).append(speeds[step, i])
    rows = []
    for road in (MAIN, RAMP):
        steps = sorted(s for (r, s) in samples if r == road)
        for step in steps:
            vals = np.array(samples[(road, step)])
            rows.append((road, (step + 1) * cfg.dt, float(vals.min()), float(vals.mean()),
                         float(vals.max()), int(vals.size)))
    return SpeedRange(rows, causes)


# ----------------------------------------------------------- safety metrics

def min_gaps(trace):
    """Smallest same-road gap (follower still controlled) and smallest
    cross-road projected gap with both vehicles in the merging zone, per step."""
    p = trace.column("p")
    phases = trace.phases()
    roads = trace.roads
    same = np.full(trace.steps, np.inf)
    cross = np.full(trace.steps, np.inf)
    n = trace.n_vehicles
    for t in range(trace.steps):
        for a in range(n):
            for b in range(a + 1, n):
                gap = abs(p[t, a] - p[t, b])
                if roads[a] == roads[b]:
                    follower = a if p[t, a] < p[t, b] else b
                    if phases[t, follower] != "exited":
                        same[t] = min(same[t], gap)
                elif phases[t, a] == "merging" and phases[t, b] == "merging":
                    cross[t] = min(cross[t], gap)
    return same, cross


# ------------------------------------------------------------------ plot data

PLOT_KINDS = ("position", "speed", "speed-range")


def plot_table(rows, kind):
    """Reshape trace (or speed-range) CSV rows into a tidy ``(header, rows)`` table.

    ``position`` and ``speed`` keep one row per vehicle and time step.
    ``speed-range`` gives one row per road, time and statistic; it accepts
    either a trajectory trace or the output of the speed-range experiment.
    """
    if kind not in PLOT_KINDS:
        raise ConfigError(f"unknown plot kind {kind!r}; expected one of {PLOT_KINDS}")
    if not rows:
        raise ConfigError("input table is empty")
    cols = set(rows[0])
    if kind == "speed-range" and {"road", "t", "v_min", "v_avg", "v_max"} <= cols:
        out = [[r["road"], r["t"], stat, r[f"v_{stat}"]]
               for r in rows for stat in ("min", "avg", "max")]
        return ("road", "t", "stat", "v"), out
    missing = {"episode", "t", "vehicle_id", "road", "p", "v", "d_merge", "phase"} - cols
    if missing:
        raise ConfigError(f"input is not a trajectory trace; missing {sorted(missing)}")
    if kind == "position":
        return (("episode", "t", "vehicle_id", "road", "p", "d_merge", "phase"),
                [[r["episode"], r["t"], r["vehicle_id"], r["road"], r["p"], r["d_merge"],
                  r["phase"]] for r in rows])
    if kind == "speed":
        return (("episode", "t", "vehicle_id", "road", "v", "phase"),
                [[r["episode"], r["t"], r["vehicle_id"], r["road"], r["v"], r["phase"]]
                 for r in rows])
    groups = {}
    for r in rows:
        if r["phase"] != "exited":
            groups.setdefault((r["road"], float(r["t"])), []).append(float(r["v"]))
    out = []
    for road in (MAIN, RAMP):
        for t in sorted(t for (rd, t) in groups if rd == road):
            vals = np.array(groups[(road, t)])
            for stat, val in (("min", vals.min()), ("avg", vals.mean()), ("max", vals.max())):
                out.append([road, f"{t:.1f}", stat, f"{val:.6f}"])
    return ("road", "t", "stat", "v"), out
