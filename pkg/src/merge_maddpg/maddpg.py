"""Multi-agent DDPG: decentralized actors, one centralized critic per agent.

The critic input for every agent is the joint vector
``[s_1, ..., s_N, u_1, ..., u_N]`` in fixed agent order, with actions in
m/s^2. Actors see only their own six-entry observation.
"""

from dataclasses import dataclass

import numpy as np

from . import nn
from .env import OBS_DIM


class SamplingError(RuntimeError):
    pass


@dataclass
class Agent:
    index: int
    actor: nn.Mlp
    critic: nn.Mlp
    target_actor: nn.Mlp
    target_critic: nn.Mlp
    actor_opt: nn.AdamState
    critic_opt: nn.AdamState

    def checkpoint(self):
        return {
            "actor": nn.save_checkpoint(self.actor),
            "critic": nn.save_checkpoint(self.critic),
            "target_actor": nn.save_checkpoint(self.target_actor),
            "target_critic": nn.save_checkpoint(self.target_critic),
        }


def make_agents(n_agents, hyper, rng):
    init = nn.InitSpec(tuple(hyper.init_bounds))
    agents = []
    for i in range(n_agents):
        actor = nn.actor_net(OBS_DIM, hyper.hidden, init, rng)
        critic = nn.critic_net(n_agents, OBS_DIM, 1, hyper.hidden, init, rng)
        agents.append(Agent(
            index=i,
            actor=actor,
            critic=critic,
            target_actor=actor.copy(),
            target_critic=critic.copy(),
            actor_opt=nn.AdamState.for_params(actor.params, lr=hyper.actor_lr),
            critic_opt=nn.AdamState.for_params(critic.params, lr=hyper.critic_lr),
        ))
    return agents


def scale_action(o, cfg):
    """Map a tanh output in (-1, 1) onto [u_min, u_max]."""
    return cfg.u_min + (o + 1.0) * 0.5 * (cfg.u_max - cfg.u_min)


def action_scale_slope(cfg):
    return 0.5 * (cfg.u_max - cfg.u_min)


class NoiseProcess:
    """Additive Gaussian exploration noise with per-episode multiplicative decay."""

    def __init__(self, sigma=0.5, decay=0.999, floor=0.02):
        if sigma < 0 or floor < 0:
            raise ValueError("noise scales must be non-negative")
        self.sigma = float(sigma)
        self.decay = float(decay)
        self.floor = min(float(floor), self.sigma)

    def sample(self, rng):
        return rng.normal(0.0, self.sigma) if self.sigma > 0 else 0.0

    def end_episode(self):
        self.sigma = max(self.floor, self.sigma * self.decay)


def act(agent, obs, cfg, noise=None, rng=None):
    """Deterministic policy action, optionally perturbed and clamped."""
    o = float(agent.actor(obs)[0])
    u = scale_action(o, cfg)
    if noise is not None:
        u += noise.sample(rng)
    return min(cfg.u_max, max(cfg.u_min, u))


@dataclass
class Batch:
    s: np.ndarray  # (B, N, 6)
    u: np.ndarray  # (B, N)
    r: np.ndarray  # (B, N)
    s2: np.ndarray  # (B, N, 6)
    done: np.ndarray  # (B,)

    def __len__(self):
        return self.u.shape[0]

    def agent_slice(self, i):
        """Per-agent experience tuple (s_i, u_i, r_i, s'_i)."""
        return self.s[:, i], self.u[:, i], self.r[:, i], self.s2[:, i]


class ReplayBuffer:
    """Bounded FIFO ring of joint transitions; uniform sampling with replacement."""

    def __init__(self, capacity, n_agents, obs_dim=OBS_DIM):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        self.n_agents = n_agents
        # np.zeros is lazily backed, so a large capacity costs only what is used
        self._s = np.zeros((capacity, n_agents, obs_dim))
        self._u = np.zeros((capacity, n_agents))
        self._r = np.zeros((capacity, n_agents))
        self._s2 = np.zeros((capacity, n_agents, obs_dim))
        self._done = np.zeros(capacity)
        self._next = 0
        self.size = 0

    def __len__(self):
        return self.size

    def push(self, s, u, r, s2, done):
        k = self._next
        self._s[k] = s
        self._u[k] = u
        self._r[k] = r
        self._s2[k] = s2
        self._done[k] = float(done)
        self._next = (k + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def _at(self, idx):
        return Batch(self._s[idx], self._u[idx], self._r[idx], self._s2[idx], self._done[idx])

    def contents(self):
        """All stored transitions, oldest first."""
        if self.size < self.capacity:
            idx = np.arange(self.size)
        else:
            idx = (np.arange(self.size) + self._next) % self.capacity
        return self._at(idx)

    def sample(self, n, rng, min_size=None):
        need = max(1, n if min_size is None else min_size)
        if self.size < need:
            raise SamplingError(f"buffer holds {self.size} transitions; {need} required to sample")
        return self._at(rng.integers(0, self.size, size=n))


def joint_input(s, u):
    """Critic input rows ``[s_1..s_N, u_1..u_N]`` from (B, N, 6) and (B, N)."""
    b = s.shape[0]
    return np.concatenate([s.reshape(b, -1), u], axis=1)


def target_actions(agents, s2, cfg):
    return np.stack([scale_action(ag.target_actor(s2[:, ag.index])[:, 0], cfg)
                     for ag in agents], axis=1)


def compute_target(agents, batch, gamma, cfg):
    """Bootstrapped targets y of shape (B, N); bootstrap masked at terminals."""
    x2 = joint_input(batch.s2, target_actions(agents, batch.s2, cfg))
    mask = gamma * (1.0 - batch.done)
    ys = [batch.r[:, ag.index] + mask * ag.target_critic(x2)[:, 0] for ag in agents]
    return np.stack(ys, axis=1)


def update_critic(agent, batch, y):
    """One Adam step on the squared TD error; returns the pre-step loss."""
    x = joint_input(batch.s, batch.u)
    q, cache = agent.critic.forward(x)
    err = q[:, 0] - y
    loss = float(np.mean(err * err))
    grads, _ = agent.critic.backward(cache, (2.0 / len(err)) * err[:, None])
    nn.adam_step(agent.critic, grads, agent.critic_opt)
    return loss


def actor_objective_grad(agent, batch, cfg):
    """Mean Q with agent's own action replaced by its policy, and its gradient.

    Returns ``(mean_q, grads)`` where ``grads`` is d(mean_q)/d(actor params).
    Other agents' actions come from the stored batch.
    """
    i = agent.index
    n = batch.u.shape[1]
    o, a_cache = agent.actor.forward(batch.s[:, i])
    u = batch.u.copy()
    u[:, i] = scale_action(o[:, 0], cfg)
    q, c_cache = agent.critic.forward(joint_input(batch.s, u))
    b = len(batch)
    _, dx = agent.critic.backward(c_cache, np.full((b, 1), 1.0 / b), param_grads=False)
    do = dx[:, OBS_DIM * n + i] * action_scale_slope(cfg)
    grads, _ = agent.actor.backward(a_cache, do[:, None])
    return float(np.mean(q)), grads


def update_actor(agent, batch, cfg):
    """Gradient ascent on the batch-mean centralized Q; returns pre-step mean Q."""
    mean_q, grads = actor_objective_grad(agent, batch, cfg)
    nn.adam_step(agent.actor, -grads, agent.actor_opt)
    return mean_q


def update_targets(agents, tau):
    for ag in agents:
        nn.polyak_update(ag.target_actor, ag.actor, tau)
        nn.polyak_update(ag.target_critic, ag.critic, tau)


def train_step(agents, batch, hyper, cfg):
    """Targets from the pre-update target nets, then critic and actor per agent,
    then Polyak. Returns per-agent (critic_loss, mean_q)."""
    y = compute_target(agents, batch, hyper.gamma, cfg)
    stats = []
    for ag in agents:
        loss = update_critic(ag, batch, y[:, ag.index])
        mean_q = update_actor(ag, batch, cfg)
        stats.append((loss, mean_q))
    update_targets(agents, hyper.tau)
    return stats
