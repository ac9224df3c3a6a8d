"""On-ramp merging simulator.

Vehicles are points on one of two single-lane roads. Both roads use a path
coordinate ``p`` that is 0 at control-zone entry and ``L + S`` at the end of
the merging zone, so a ramp vehicle's projected distance to the merge end is
simply ``L + S - p``. The merging zone spans ``[L, L + S]``.
"""

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .config import ConfigError, ScenarioConfig

MAIN = "main"
RAMP = "ramp"
ROADS = (MAIN, RAMP)
OBS_DIM = 6

TRACE_HEADER = ("episode", "t", "vehicle_id", "road", "p", "v", "u", "d_merge",
                "r_speed", "r_rear", "r_lateral", "r_total", "phase")


class Phase(str, Enum):
    CONTROL = "control"
    MERGING = "merging"
    EXITED = "exited"


class Cause(str, Enum):
    TIME_LIMIT = "time_limit"
    COLLISION = "collision"
    ALL_MERGED = "all_merged"


def phase_of(p, cfg):
    L = cfg.control_zone_length
    if p < L:
        return Phase.CONTROL
    if p <= L + cfg.merging_zone_length:
        return Phase.MERGING
    return Phase.EXITED


@dataclass
class VehicleState:
    id: int
    road: str
    p: float
    v: float
    last_u: float = 0.0
    phase: Phase = Phase.CONTROL


@dataclass(frozen=True)
class CollisionEvent:
    follower: int
    leader: int
    kind: str  # "rear" | "lateral"
    gap: float


@dataclass
class StepOutcome:
    observations: np.ndarray  # (N, 6)
    rewards: np.ndarray  # (N,)
    components: np.ndarray  # (N, 3): speed, rear, lateral (unweighted)
    done: bool
    cause: Cause | None
    events: list = field(default_factory=list)


def integrate(p, v, u, dt):
    """Exact double-integrator step under constant ``u``; speed floors at 0."""
    v_next = v + u * dt
    if v_next >= 0.0:
        return p + v * dt + 0.5 * u * dt * dt, v_next
    # stops mid-step: integrate only up to the zero-speed instant
    t_stop = -v / u
    return p + v * t_stop + 0.5 * u * t_stop * t_stop, 0.0


def distance_to_merge_end(veh, cfg):
    return cfg.road_length - veh.p


def neighbors(vehicles, i, cfg=None):
    """Nearest vehicle ahead on the same road (k) and on the other road (j).

    "Ahead" means strictly smaller distance to the merge end. Either may be
    None. Exited vehicles stay eligible.
    """
    me = vehicles[i]
    best_k = best_j = None
    gap_k = gap_j = math.inf
    for other in vehicles:
        if other.id == me.id:
            continue
        gap = other.p - me.p
        if gap <= 0.0:
            continue
        if other.road == me.road:
            if gap < gap_k:
                best_k, gap_k = other.id, gap
        elif gap < gap_j:
            best_j, gap_j = other.id, gap
    return best_k, best_j


def observe(vehicles, i, cfg, nbrs=None):
    """Six-entry local state ``[p_i, v_i, p_k, v_k, p_j, v_j]``."""
    me = vehicles[i]
    k, j = nbrs if nbrs is not None else neighbors(vehicles, i, cfg)
    far_p, far_v = me.p + cfg.sentinel, cfg.v_max
    obs = np.array([
        me.p, me.v,
        far_p if k is None else vehicles[k].p, far_v if k is None else vehicles[k].v,
        far_p if j is None else vehicles[j].p, far_v if j is None else vehicles[j].v,
    ])
    if cfg.normalize_observations:
        obs[0::2] /= cfg.road_length
        obs[1::2] /= cfg.v_max
    return obs


def reward_speed(v, cfg):
    if v > cfg.v_max or v < cfg.v_min:
        return cfg.speed_violation_penalty
    return (cfg.v_max - math.sqrt((v - cfg.v_max) ** 2)) / cfg.v_max


def _gap_penalty(gap, cfg):
    if 0.0 < gap < cfg.d_safe:
        return -1.0 / max(gap, cfg.collision_gap_epsilon)
    return 0.0


def reward_rear(p_i, p_k, cfg):
    """Penalty for closing on the same-road leader; 0 when there is none."""
    if p_k is None:
        return 0.0
    return _gap_penalty(p_k - p_i, cfg)


def reward_lateral(d_i, d_j, cfg):
    """Penalty for a cross-road leader too close while both are near the merge."""
    if d_j is None:
        return 0.0
    S = cfg.merging_zone_length
    if d_j < S and d_i < S:
        return _gap_penalty(d_i - d_j, cfg)
    return 0.0


def weighted_reward(components, cfg):
    """Weighted sum of (speed, rear, lateral) components; works row-wise."""
    return np.asarray(components) @ np.array([cfg.w_speed, cfg.w_rear, cfg.w_lateral])


@dataclass
class InitialConditions:
    """Initial placement. ``positions``/``speeds`` entries of None are sampled."""

    roads: tuple
    positions: tuple | None = None
    speeds: tuple | None = None
    p_range: tuple = (0.0, 15.0)
    v_range: tuple | None = None  # None means [v_min, v_max]
    min_spacing: float | None = None  # None means 2 * d_safe
    max_attempts: int = 1000

    def __post_init__(self):
        n = len(self.roads)
        bad = [r for r in self.roads if r not in ROADS]
        if bad:
            raise ConfigError(f"unknown road(s) {bad}")
        for name in ("positions", "speeds"):
            seq = getattr(self, name)
            if seq is not None and len(seq) != n:
                raise ConfigError(f"{name} has {len(seq)} entries for {n} vehicles")


def sample_initial_states(cfg, init, rng):
    n = len(init.roads)
    positions = list(init.positions or [None] * n)
    speeds = list(init.speeds or [None] * n)
    spacing = 2 * cfg.d_safe if init.min_spacing is None else init.min_spacing
    lo, hi = init.p_range
    for road in ROADS:
        members = [i for i in range(n) if init.roads[i] == road]
        free = [i for i in members if positions[i] is None]
        fixed = [positions[i] for i in members if positions[i] is not None]
        if not free:
            continue
        for _ in range(init.max_attempts):
            draw = rng.uniform(lo, hi, size=len(free))
            ordered = np.sort(np.concatenate([draw, fixed]))
            if len(ordered) < 2 or np.min(np.diff(ordered)) >= spacing:
                break
        else:
            raise ConfigError(
                f"could not place {len(free)} {road} vehicles in [{lo}, {hi}] m with "
                f"spacing {spacing} m after {init.max_attempts} attempts")
        for i, p in zip(free, draw):
            positions[i] = float(p)
    v_lo, v_hi = init.v_range if init.v_range is not None else (cfg.v_min, cfg.v_max)
    for i in range(n):
        if speeds[i] is None:
            speeds[i] = float(rng.uniform(v_lo, v_hi))
    return [VehicleState(i, init.roads[i], float(positions[i]), float(speeds[i]),
                         0.0, phase_of(positions[i], cfg)) for i in range(n)]


class MergeEnv:
    """One merging episode at a time. Not safe for concurrent ``step`` calls."""

    def __init__(self, cfg=None, record=False):
        self.cfg = cfg or ScenarioConfig()
        self.record = record
        self.vehicles = []
        self.steps = 0
        self.episode = 0
        self.done = True
        self.cause = None
        self.trace = []

    @property
    def n(self):
        return len(self.vehicles)

    @property
    def time(self):
        return self.steps * self.cfg.dt

    def reset(self, init, rng, episode=None):
        self.vehicles = sample_initial_states(self.cfg, init, rng)
        self.steps = 0
        self.episode = self.episode + 1 if episode is None else episode
        self.done = False
        self.cause = None
        return self.observations()

    def observations(self):
        return np.stack([observe(self.vehicles, i, self.cfg) for i in range(self.n)])

    def _distances(self):
        L_S = self.cfg.road_length
        return [L_S - veh.p for veh in self.vehicles]

    def step(self, actions):
        if self.done:
            raise RuntimeError("episode is over; call reset()")
        actions = np.asarray(actions, dtype=np.float64).reshape(-1)
        if actions.shape[0] != self.n:
            raise ValueError(f"expected {self.n} actions, got {actions.shape[0]}")
        if not np.all(np.isfinite(actions)):
            raise ValueError(f"non-finite action(s): {actions.tolist()}")
        cfg = self.cfg
        actions = np.clip(actions, cfg.u_min, cfg.u_max)

        d_pre = self._distances()
        phase_pre = [veh.phase for veh in self.vehicles]
        for veh, u in zip(self.vehicles, actions):
            if veh.phase is Phase.EXITED:
                u = 0.0  # cruise at exit speed
            veh.p, veh.v = integrate(veh.p, veh.v, float(u), cfg.dt)
            veh.last_u = float(u)
            veh.phase = phase_of(veh.p, cfg)
        self.steps += 1
        d_post = self._distances()

        events = self._collisions(d_pre, d_post, phase_pre)

        n = self.n
        comps = np.zeros((n, 3))
        for i, veh in enumerate(self.vehicles):
            if veh.phase is Phase.EXITED:
                continue
            k, j = neighbors(self.vehicles, i, cfg)
            comps[i, 0] = reward_speed(veh.v, cfg)
            comps[i, 1] = reward_rear(veh.p, None if k is None else self.vehicles[k].p, cfg)
            comps[i, 2] = reward_lateral(d_post[i], None if j is None else d_post[j], cfg)
        rewards = weighted_reward(comps, cfg)

        cause = None
        if events:
            cause = Cause.COLLISION
        elif all(veh.phase is Phase.EXITED for veh in self.vehicles):
            cause = Cause.ALL_MERGED
            rewards = rewards + cfg.success_bonus
        elif self.steps >= cfg.max_steps:
            cause = Cause.TIME_LIMIT
        self.done = cause is not None
        self.cause = cause

        if self.record:
            self._record(d_post, comps, rewards)
        return StepOutcome(self.observations(), rewards, comps, self.done, cause, events)

    def _collisions(self, d_pre, d_post, phase_pre):
        """Pairs whose post-step gap, measured in pre-step order, is <= epsilon.

        A negative gap means one vehicle passed through the other.
        """
        eps = self.cfg.collision_gap_epsilon
        events = []
        vs = self.vehicles
        for a in range(self.n):
            for b in range(a + 1, self.n):
                if d_pre[a] > d_pre[b]:
                    f, l = a, b
                else:
                    f, l = b, a
                if vs[a].road == vs[b].road:
                    if phase_pre[f] is Phase.EXITED:
                        continue
                    kind = "rear"
                else:
                    both_now = vs[a].phase is Phase.MERGING and vs[b].phase is Phase.MERGING
                    both_before = (phase_pre[a] is Phase.MERGING
                                   and phase_pre[b] is Phase.MERGING)
                    if not (both_now or both_before):
                        continue
                    kind = "lateral"
                gap = d_post[f] - d_post[l]
                if d_pre[a] == d_pre[b]:
                    gap = abs(gap)
                if gap <= eps:
                    events.append(CollisionEvent(f, l, kind, gap))
        return events

    def _record(self, d_post, comps, rewards):
        t = self.time
        for i, veh in enumerate(self.vehicles):
            self.trace.append((self.episode, t, veh.id, veh.road, veh.p, veh.v, veh.last_u,
                               d_post[i], comps[i, 0], comps[i, 1], comps[i, 2], rewards[i],
                               veh.phase.value))


def format_trace_row(row):
    ep, t, vid, road, p, v, u, d, rs, rr, rl, rt, phase = row
    return [str(ep), f"{t:.1f}", str(vid), road, f"{p:.6f}", f"{v:.6f}", f"{u:.6f}",
            f"{d:.6f}", f"{rs:.6f}", f"{rr:.6f}", f"{rl:.6f}", f"{rt:.6f}", phase]
