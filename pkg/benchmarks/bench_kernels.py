"""Compare the compiled and numpy kernel backends.

    python benchmarks/bench_kernels.py [--repeat 2000] [--train-episodes 30]

Times the per-call kernels at the sizes training uses (batch 64, 64-unit
hidden layers, N=2 critic) plus a short end-to-end training run per backend.
"""

import argparse
import time

import numpy as np

from merge_maddpg import _backend, nn
from merge_maddpg.config import RunConfig, ScenarioConfig
from merge_maddpg.harness import train


def bench(fn, repeat):
    fn()
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn()
    return (time.perf_counter() - t0) / repeat * 1e6


def kernel_suite(repeat):
    rng = np.random.default_rng(0)
    actor = nn.actor_net(rng=rng)
    critic = nn.critic_net(2, rng=rng)
    xb_actor = rng.normal(size=(64, 6))
    xb_critic = rng.normal(size=(64, 14))
    x1 = rng.normal(size=6)
    dy = rng.normal(size=(64, 1))
    _, cache = critic.forward(xb_critic)
    grads = rng.normal(size=critic.n_params)
    state = nn.AdamState.for_params(critic.params, lr=1e-9)
    target = critic.copy()

    def backward():
        critic.backward(cache, dy)

    return {
        "actor forward, 1 obs": bench(lambda: actor.forward(x1), repeat),
        "actor forward, batch 64": bench(lambda: actor.forward(xb_actor), repeat),
        "critic forward, batch 64": bench(lambda: critic.forward(xb_critic), repeat),
        "critic backward, batch 64": bench(backward, repeat),
        "adam step, critic": bench(lambda: nn.adam_step(critic, grads, state), repeat),
        "polyak, critic": bench(lambda: nn.polyak_update(target, critic, 0.01), repeat),
    }


def train_seconds(episodes):
    cfg = RunConfig(scenario=ScenarioConfig(n_vehicles=2), episodes=episodes, seed=0,
                    log_every=0)
    t0 = time.perf_counter()
    result = train(cfg)
    return time.perf_counter() - t0, sum(result.record.steps)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=2000)
    parser.add_argument("--train-episodes", type=int, default=30)
    args = parser.parse_args()

    backends = _backend.available()
    results = {}
    for name in backends:
        _backend.set_backend(name)
        timings = kernel_suite(args.repeat)
        secs, steps = train_seconds(args.train_episodes)
        timings[f"train {args.train_episodes} episodes (per env step)"] = secs / steps * 1e6
        results[name] = timings

    rows = list(next(iter(results.values())))
    print(f"{'kernel (microseconds per call)':48s}" + "".join(f"{b:>12s}" for b in backends)
          + ("     speedup" if len(backends) == 2 else ""))
    for row in rows:
        vals = [results[b][row] for b in backends]
        line = f"{row:48s}" + "".join(f"{v:12.1f}" for v in vals)
        if len(backends) == 2:
            line += f"{results['python'][row] / results['cython'][row]:11.2f}x"
        print(line)


if __name__ == "__main__":
    main()
