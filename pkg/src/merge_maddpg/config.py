"""Scenario, learning and run configuration, with JSON round-tripping.

Unknown keys are rejected everywhere so typos in a config file fail loudly.
"""

import dataclasses
import json
from dataclasses import dataclass, field


class ConfigError(ValueError):
    pass


def _from_mapping(cls, doc, where):
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: expected an object, got {type(doc).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown field(s) {', '.join(unknown)}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name in doc:
            value = doc[f.name]
            kwargs[f.name] = tuple(value) if isinstance(value, list) else value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


@dataclass(frozen=True)
class ScenarioConfig:
    control_zone_length: float = 90.0
    merging_zone_length: float = 10.0
    d_safe: float = 0.5
    v_min: float = 5.0
    v_max: float = 15.0
    u_min: float = -3.0
    u_max: float = 3.0
    dt: float = 0.1
    episode_duration: float = 50.0
    n_vehicles: int = 3
    w_speed: float = 1.0
    w_rear: float = 20.0
    w_lateral: float = 20.0
    speed_violation_penalty: float = -10.0
    success_bonus: float = 10.0
    collision_gap_epsilon: float = 0.1
    # None means 2 * control_zone_length
    sentinel_gap: float | None = None
    normalize_observations: bool = True

    def __post_init__(self):
        L, S = self.control_zone_length, self.merging_zone_length
        checks = [
            (L > S > 0, "need control_zone_length > merging_zone_length > 0"),
            (self.v_max > self.v_min >= 0, "need v_max > v_min >= 0"),
            (self.u_max > 0 > self.u_min, "need u_max > 0 > u_min"),
            (self.dt > 0, "dt must be positive"),
            (self.episode_duration > 0, "episode_duration must be positive"),
            (isinstance(self.n_vehicles, int) and self.n_vehicles >= 1, "n_vehicles must be an integer >= 1"),
            (0 < self.collision_gap_epsilon < self.d_safe, "need 0 < collision_gap_epsilon < d_safe"),
            (self.sentinel_gap is None or self.sentinel_gap > 0, "sentinel_gap must be positive"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)

    @property
    def road_length(self):
        """Distance from control-zone entry to the end of the merging zone."""
        return self.control_zone_length + self.merging_zone_length

    @property
    def sentinel(self):
        return 2.0 * self.control_zone_length if self.sentinel_gap is None else self.sentinel_gap

    @property
    def max_steps(self):
        return int(round(self.episode_duration / self.dt))

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_dict(cls, doc):
        return _from_mapping(cls, doc, "scenario")


@dataclass(frozen=True)
class Hyperparameters:
    gamma: float = 0.99
    tau: float = 0.01
    batch_size: int = 64
    buffer_capacity: int = 1_000_000
    warmup_steps: int = 1000
    update_every: int = 1
    noise_sigma: float = 0.5
    noise_decay: float = 0.999
    noise_floor: float = 0.02
    actor_lr: float = 1e-3
    critic_lr: float = 1e-3
    hidden: tuple = (64, 64)
    init_bounds: tuple = (1.0, 1.0, 3e-3)

    def __post_init__(self):
        checks = [
            (0.0 <= self.gamma < 1.0, "gamma must lie in [0, 1)"),
            (0.0 < self.tau <= 1.0, "tau must lie in (0, 1]"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (self.buffer_capacity >= 1, "buffer_capacity must be >= 1"),
            (self.warmup_steps >= 0, "warmup_steps must be >= 0"),
            (self.update_every >= 1, "update_every must be >= 1"),
            (self.noise_sigma >= 0 and self.noise_floor >= 0, "noise scales must be >= 0"),
            (0.0 < self.noise_decay <= 1.0, "noise_decay must lie in (0, 1]"),
            (self.actor_lr > 0 and self.critic_lr > 0, "learning rates must be positive"),
            (len(self.hidden) >= 1 and all(h >= 1 for h in self.hidden), "hidden widths must be >= 1"),
            (len(self.init_bounds) >= 1 and all(b >= 0 for b in self.init_bounds), "init bounds must be >= 0"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)

    @classmethod
    def from_dict(cls, doc):
        return _from_mapping(cls, doc, "hyperparameters")


# Learning rates per training profile.
PROFILES = {
    "paper": {"actor_lr": 0.3, "critic_lr": 0.3},
    "reference": {"actor_lr": 1e-3, "critic_lr": 1e-3},
}


@dataclass(frozen=True)
class RunConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    hyperparameters: Hyperparameters = field(default_factory=Hyperparameters)
    episodes: int = 15000
    seed: int = 0
    out_dir: str | None = None
    profile: str = "reference"
    # training population: the first n_vehicles - n_ramp vehicles are on the main road
    n_ramp: int = 1
    # metrics/checkpoint cadence is per episode; this only throttles log lines
    log_every: int = 100

    def __post_init__(self):
        if self.episodes < 1:
            raise ConfigError("episodes must be >= 1")
        if self.profile not in PROFILES:
            raise ConfigError(f"unknown profile {self.profile!r}; expected one of {sorted(PROFILES)}")
        if not 0 <= self.n_ramp <= self.scenario.n_vehicles:
            raise ConfigError("n_ramp must lie in [0, n_vehicles]")

    @property
    def roads(self):
        n = self.scenario.n_vehicles
        return ("main",) * (n - self.n_ramp) + ("ramp",) * self.n_ramp

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        doc = dataclasses.asdict(self)
        doc["hyperparameters"]["hidden"] = list(self.hyperparameters.hidden)
        doc["hyperparameters"]["init_bounds"] = list(self.hyperparameters.init_bounds)
        return doc

    @classmethod
    def from_dict(cls, doc, profile=None):
        """Resolve a run document: defaults, then profile rates, then explicit values."""
        if not isinstance(doc, dict):
            raise ConfigError("run config must be a JSON object")
        doc = dict(doc)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"run config: unknown field(s) {', '.join(unknown)}")
        profile = profile or doc.get("profile", "reference")
        if profile not in PROFILES:
            raise ConfigError(f"unknown profile {profile!r}; expected one of {sorted(PROFILES)}")
        scenario = ScenarioConfig.from_dict(doc.pop("scenario", {}))
        hyper_doc = {**PROFILES[profile], **doc.pop("hyperparameters", {})}
        hyper = Hyperparameters.from_dict(hyper_doc)
        doc["profile"] = profile
        try:
            return cls(scenario=scenario, hyperparameters=hyper, **doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path, profile=None):
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        return cls.from_dict(doc, profile=profile)
