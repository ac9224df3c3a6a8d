import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from merge_maddpg import env
from merge_maddpg.config import ConfigError, ScenarioConfig
from merge_maddpg.env import (MAIN, RAMP, Cause, InitialConditions, MergeEnv, Phase,
                              VehicleState, integrate)


def fine_integrate(p, v, u, dt, substeps=20_000):
    """Oracle: explicit Euler with tiny substeps and the zero-speed floor."""
    h = dt / substeps
    for _ in range(substeps):
        p += v * h
        v = max(0.0, v + u * h)
    return p, v


def place(cfg, roads, ps, vs):
    e = MergeEnv(cfg)
    e.reset(InitialConditions(roads=tuple(roads), positions=tuple(ps), speeds=tuple(vs)),
            np.random.default_rng(0))
    return e


# ------------------------------------------------------------- integrate

def test_integrate_closed_form():
    p, v = integrate(0.0, 10.0, 2.0, 0.1)
    assert p == pytest.approx(1.01, abs=1e-12)
    assert v == pytest.approx(10.2, abs=1e-12)


def test_integrate_rest_stays_at_rest():
    assert integrate(5.0, 0.0, 0.0, 0.1) == (5.0, 0.0)
    assert integrate(5.0, 0.0, -3.0, 0.1) == (5.0, 0.0)


def test_integrate_stops_at_zero_speed():
    p, v = integrate(0.0, 0.1, -3.0, 0.1)
    t_stop = 1.0 / 30.0
    assert v == 0.0
    assert p == pytest.approx(0.1 * t_stop - 1.5 * t_stop ** 2, abs=1e-15)
    assert p == pytest.approx(0.001667, abs=1e-6)


@settings(max_examples=25, deadline=None)
@given(v=st.floats(0.0, 20.0), u=st.floats(-3.0, 3.0))
def test_integrate_matches_fine_oracle(v, u):
    p, vv = integrate(0.0, v, u, 0.1)
    po, vo = fine_integrate(0.0, v, u, 0.1)
    assert vv == pytest.approx(vo, abs=1e-9)
    assert p == pytest.approx(po, abs=2e-6)


# -------------------------------------------------------------- geometry

@pytest.mark.parametrize("p, expected", [(0.0, 100.0), (100.0, 0.0), (95.0, 5.0)])
def test_distance_to_merge_end(cfg, p, expected):
    for road in (MAIN, RAMP):
        assert env.distance_to_merge_end(VehicleState(0, road, p, 10.0), cfg) == expected


@given(p=st.floats(0.0, 500.0))
def test_phase_partition(p):
    cfg = ScenarioConfig()
    phase = env.phase_of(p, cfg)
    assert (phase is Phase.CONTROL) == (p < 90)
    assert (phase is Phase.MERGING) == (90 <= p <= 100)
    assert (phase is Phase.EXITED) == (p > 100)


def test_neighbors_examples(cfg):
    vs = [VehicleState(0, MAIN, 0.0, 10), VehicleState(1, MAIN, 5.0, 10)]
    assert env.neighbors(vs, 0, cfg) == (1, None)
    assert env.neighbors(vs, 1, cfg) == (None, None)
    vs = [VehicleState(0, MAIN, 0.0, 10), VehicleState(1, RAMP, 2.0, 10)]
    assert env.neighbors(vs, 0, cfg) == (None, 1)
    assert env.neighbors([VehicleState(0, RAMP, 3.0, 10)], 0, cfg) == (None, None)


def test_neighbors_pick_nearest_and_keep_exited(cfg):
    vs = [VehicleState(0, MAIN, 50.0, 10), VehicleState(1, MAIN, 70.0, 10),
          VehicleState(2, MAIN, 60.0, 10), VehicleState(3, RAMP, 120.0, 10, phase=Phase.EXITED),
          VehicleState(4, RAMP, 40.0, 10)]
    assert env.neighbors(vs, 0, cfg) == (2, 3)


# ----------------------------------------------------------- observation

def test_observe_with_sentinel(raw_cfg):
    vs = [VehicleState(0, MAIN, 10.0, 8.0), VehicleState(1, MAIN, 20.0, 9.0)]
    assert env.observe(vs, 0, raw_cfg).tolist() == [10, 8, 20, 9, 190, 15]
    alone = [VehicleState(0, RAMP, 10.0, 8.0)]
    assert env.observe(alone, 0, raw_cfg).tolist() == [10, 8, 190, 15, 190, 15]


def test_observe_normalized(cfg):
    obs = env.observe([VehicleState(0, MAIN, 50.0, 15.0)], 0, cfg)
    assert obs[:2].tolist() == [0.5, 1.0]
    assert obs.shape == (6,)


def test_custom_sentinel_gap():
    cfg = ScenarioConfig(normalize_observations=False, sentinel_gap=50.0)
    assert env.observe([VehicleState(0, MAIN, 1.0, 7.0)], 0, cfg)[2] == 51.0


# ---------------------------------------------------------------- reward

def test_reward_speed_values(cfg):
    assert env.reward_speed(10.0, cfg) == pytest.approx(2 / 3, abs=1e-15)
    assert env.reward_speed(15.0, cfg) == 1.0
    assert env.reward_speed(16.0, cfg) == -10.0
    assert env.reward_speed(4.9, cfg) == -10.0
    assert env.reward_speed(5.0, cfg) == pytest.approx(1 / 3)


@given(v=st.floats(5.0, 15.0))
def test_reward_speed_bounds(v):
    cfg = ScenarioConfig()
    r = env.reward_speed(v, cfg)
    assert cfg.v_min / cfg.v_max - 1e-12 <= r <= 1.0
    assert (r == 1.0) == (v == 15.0)


def test_reward_rear_values(cfg):
    assert env.reward_rear(10.0, 10.25, cfg) == -4.0
    assert env.reward_rear(10.0, 10.5, cfg) == 0.0
    assert env.reward_rear(10.0, 10.05, cfg) == -10.0
    assert env.reward_rear(10.0, None, cfg) == 0.0


def test_reward_lateral_values(cfg):
    assert env.reward_lateral(4.0, 3.8, cfg) == pytest.approx(-5.0, abs=1e-12)
    assert env.reward_lateral(12.0, 11.9, cfg) == 0.0
    assert env.reward_lateral(4.0, 3.5, cfg) == 0.0
    assert env.reward_lateral(4.0, None, cfg) == 0.0


@given(a=st.floats(0.1, 0.5, exclude_min=True, exclude_max=True),
       b=st.floats(0.1, 0.5, exclude_min=True, exclude_max=True))
def test_penalties_monotone_in_gap(a, b):
    cfg = ScenarioConfig()
    lo, hi = sorted((a, b))
    rear = env.reward_rear(0.0, lo, cfg), env.reward_rear(0.0, hi, cfg)
    lat = env.reward_lateral(5.0 + lo, 5.0, cfg), env.reward_lateral(5.0 + hi, 5.0, cfg)
    assert rear[0] <= rear[1] and lat[0] <= lat[1]
    # strict once the gaps differ by more than rounding
    if hi - lo > 1e-9:
        assert rear[0] < rear[1] and lat[0] < lat[1]


# ------------------------------------------------------------------ step

def test_step_pure_speed_reward(cfg):
    e = place(cfg, [MAIN, RAMP], [0.0, 20.0], [10.0, 12.0])
    out = e.step([0.0, 0.0])
    assert not out.done
    assert out.components[:, 1:].tolist() == [[0, 0], [0, 0]]
    np.testing.assert_allclose(out.rewards, [10 / 15, 12 / 15], rtol=1e-14)


def test_step_clamps_actions(cfg):
    e = place(cfg, [MAIN], [0.0], [10.0])
    e.step([100.0])
    assert e.vehicles[0].last_u == 3.0
    assert e.vehicles[0].v == pytest.approx(10.3)


def test_step_rear_collision(cfg):
    # follower closes 1 m on a slow leader; post-step gap is 0.05 m
    e = place(cfg, [MAIN, MAIN], [0.0, 1.05], [11.0, 1.0])
    out = e.step([0.0, 0.0])
    assert out.done and out.cause is Cause.COLLISION
    assert [(ev.follower, ev.leader, ev.kind) for ev in out.events] == [(0, 1, "rear")]
    assert out.events[0].gap == pytest.approx(0.05)


def test_step_pass_through_is_a_collision(cfg):
    e = place(cfg, [MAIN, MAIN], [0.0, 0.5], [15.0, 5.0])
    out = e.step([0.0, 0.0])
    assert out.cause is Cause.COLLISION
    assert out.events[0].gap < 0


def test_step_lateral_collision_only_in_merging_zone(cfg):
    e = place(cfg, [MAIN, RAMP], [50.0, 50.05], [10.0, 10.0])
    assert not e.step([0.0, 0.0]).done
    e = place(cfg, [MAIN, RAMP], [94.0, 94.05], [10.0, 10.0])
    out = e.step([0.0, 0.0])
    assert out.cause is Cause.COLLISION and out.events[0].kind == "lateral"


def test_step_all_merged_bonus(cfg):
    e = place(cfg, [MAIN, RAMP], [99.5, 99.0], [10.0, 12.0])
    out = e.step([0.0, 0.0])
    assert out.done and out.cause is Cause.ALL_MERGED
    assert out.rewards.tolist() == [10.0, 10.0]
    assert np.all(out.components == 0.0)


def test_step_time_limit():
    cfg = ScenarioConfig(episode_duration=0.5)
    e = place(cfg, [MAIN], [0.0], [6.0])
    causes = [e.step([0.0]).cause for _ in range(5)]
    assert causes == [None] * 4 + [Cause.TIME_LIMIT]
    with pytest.raises(RuntimeError):
        e.step([0.0])


def test_step_wrong_action_count(cfg):
    e = place(cfg, [MAIN, RAMP], [0.0, 10.0], [10.0, 10.0])
    with pytest.raises(ValueError):
        e.step([0.0])
    with pytest.raises(ValueError):
        e.step([0.0, float("nan")])


def test_exited_vehicles_cruise_with_zero_reward(cfg):
    e = place(cfg, [MAIN, RAMP], [99.9, 0.0], [12.0, 10.0])
    out = e.step([3.0, 0.0])
    assert e.vehicles[0].phase is Phase.EXITED
    v_exit = e.vehicles[0].v
    for _ in range(30):
        out = e.step([-3.0, 0.0])
        assert e.vehicles[0].v == v_exit
        assert out.rewards[0] == 0.0


def random_rollout(cfg, seed, n_steps=600):
    rng = np.random.default_rng(seed)
    e = MergeEnv(cfg)
    e.reset(InitialConditions(roads=(MAIN, MAIN, RAMP, RAMP)), rng)
    outs = []
    while not e.done and len(outs) < n_steps:
        outs.append(e.step(rng.uniform(-3, 3, size=4)))
    return e, outs


@pytest.mark.parametrize("seed", range(5))
def test_reward_decomposition_and_soundness(cfg, seed):
    w = np.array([cfg.w_speed, cfg.w_rear, cfg.w_lateral])
    _, outs = random_rollout(cfg, seed)
    for out in outs:
        bonus = cfg.success_bonus if out.cause is Cause.ALL_MERGED else 0.0
        np.testing.assert_allclose(out.rewards, out.components @ w + bonus, rtol=0, atol=1e-12)
        if out.cause is Cause.COLLISION:
            assert out.events and min(ev.gap for ev in out.events) <= cfg.collision_gap_epsilon
        else:
            assert not out.events


def test_rollout_is_deterministic(cfg):
    _, a = random_rollout(cfg, 3)
    _, b = random_rollout(cfg, 3)
    assert len(a) == len(b)
    for x, y in zip(a, b):
        assert np.array_equal(x.observations, y.observations)
        assert np.array_equal(x.rewards, y.rewards)
        assert x.cause == y.cause


# ----------------------------------------------------------------- reset

def test_reset_explicit_passthrough(cfg):
    e = MergeEnv(cfg)
    e.reset(InitialConditions(roads=(MAIN, RAMP), positions=(0.0, 0.0), speeds=(13.0, 12.0)),
            np.random.default_rng(1))
    assert [(v.road, v.p, v.v) for v in e.vehicles] == [(MAIN, 0.0, 13.0), (RAMP, 0.0, 12.0)]


def test_reset_same_seed_same_state(cfg):
    init = InitialConditions(roads=(MAIN, MAIN, RAMP))
    a = MergeEnv(cfg).reset(init, np.random.default_rng(9))
    b = MergeEnv(cfg).reset(init, np.random.default_rng(9))
    assert np.array_equal(a, b)


@pytest.mark.parametrize("seed", range(20))
def test_reset_enforces_spacing(cfg, seed):
    init = InitialConditions(roads=(MAIN,) * 4 + (RAMP,) * 4, p_range=(0.0, 15.0),
                             min_spacing=1.0)
    e = MergeEnv(cfg)
    e.reset(init, np.random.default_rng(seed))
    for road in (MAIN, RAMP):
        ps = sorted(v.p for v in e.vehicles if v.road == road)
        assert min(np.diff(ps)) >= 1.0
    speeds = [v.v for v in e.vehicles]
    assert min(speeds) >= cfg.v_min and max(speeds) <= cfg.v_max


def test_reset_infeasible_spacing(cfg):
    init = InitialConditions(roads=(MAIN,) * 5, p_range=(0.0, 1.0), min_spacing=1.0,
                             max_attempts=50)
    with pytest.raises(ConfigError):
        MergeEnv(cfg).reset(init, np.random.default_rng(0))


def test_initial_conditions_validation():
    with pytest.raises(ConfigError):
        InitialConditions(roads=("main", "offramp"))
    with pytest.raises(ConfigError):
        InitialConditions(roads=("main",), speeds=(1.0, 2.0))


# ----------------------------------------------------------------- trace

def test_trace_rows_and_format(cfg):
    e = MergeEnv(cfg, record=True)
    e.reset(InitialConditions(roads=(MAIN, RAMP), positions=(0.0, 5.0), speeds=(10.0, 11.0)),
            np.random.default_rng(0), episode=3)
    for _ in range(4):
        e.step([1.0, -1.0])
    assert len(e.trace) == 2 * 4
    row = env.format_trace_row(e.trace[0])
    assert len(row) == len(env.TRACE_HEADER)
    assert row[:4] == ["3", "0.1", "0", "main"]
    assert row[4] == f"{1.005:.6f}"
    assert row[-1] == "control"
    assert math.isclose(float(row[7]), 100 - 1.005)


def test_config_invariants():
    with pytest.raises(ConfigError):
        ScenarioConfig(control_zone_length=5.0, merging_zone_length=10.0)
    with pytest.raises(ConfigError):
        ScenarioConfig(collision_gap_epsilon=0.6)
    with pytest.raises(ConfigError):
        ScenarioConfig(u_min=1.0)
    with pytest.raises(ConfigError):
        ScenarioConfig(n_vehicles=0)
