"""Small dense networks with hand-written backprop, Adam and Polyak averaging.

Parameters of a network live in one flat float64 array so the optimizer and
target-network updates are single kernel calls. ``Mlp.layers`` exposes
per-layer ``(W, b)`` views into that array.
"""

import json
from dataclasses import dataclass

import numpy as np

from . import _backend

ACTIVATIONS = {"linear": 0, "relu": 1, "tanh": 2}
CHECKPOINT_VERSION = 1


class NetworkError(ValueError):
    """Bad network shape, mismatched arrays, or a stale forward cache."""


class CheckpointError(ValueError):
    """A checkpoint document could not be turned back into a network."""


@dataclass(frozen=True)
class InitSpec:
    """Per-layer uniform init bounds; the last bound repeats for deeper nets.

    Defaults follow the published table: input and first hidden layer in
    U(-1, 1), the output layer in U(-3e-3, 3e-3). Biases share their layer's
    bound.
    """

    bounds: tuple = (1.0, 1.0, 3e-3)

    def bound(self, layer):
        return self.bounds[min(layer, len(self.bounds) - 1)]


@dataclass
class ForwardCache:
    work: np.ndarray
    batch: int
    version: int
    owner: int
    squeeze: bool


class Mlp:
    def __init__(self, dims, activations, params=None):
        dims = tuple(int(d) for d in dims)
        activations = tuple(a.lower() for a in activations)
        if len(dims) < 2 or any(d < 1 for d in dims):
            raise NetworkError(f"need at least two positive layer widths, got {dims}")
        if len(activations) != len(dims) - 1:
            raise NetworkError(
                f"{len(dims) - 1} layers but {len(activations)} activation tags")
        unknown = [a for a in activations if a not in ACTIVATIONS]
        if unknown:
            raise NetworkError(f"unknown activation(s) {unknown}")
        self.dims = dims
        self.activations = activations

        w_off, b_off, off = [], [], 0
        for n_in, n_out in zip(dims[:-1], dims[1:]):
            w_off.append(off)
            off += n_in * n_out
            b_off.append(off)
            off += n_out
        self.n_params = off
        self._dims = np.asarray(dims, dtype=np.intp)
        self._acts = np.asarray([ACTIVATIONS[a] for a in activations], dtype=np.intc)
        self._w_off = np.asarray(w_off, dtype=np.intp)
        self._b_off = np.asarray(b_off, dtype=np.intp)

        if params is None:
            self.params = np.zeros(off)
        else:
            params = np.ascontiguousarray(params, dtype=np.float64)
            if params.shape != (off,):
                raise NetworkError(f"expected {off} parameters, got shape {params.shape}")
            self.params = params.copy()
        self.version = 0

    @property
    def input_dim(self):
        return self.dims[0]

    @property
    def output_dim(self):
        return self.dims[-1]

    @property
    def layers(self):
        return self.unflatten(self.params)

    def unflatten(self, flat):
        """Split a flat parameter-shaped array into per-layer ``(W, b)`` views."""
        out = []
        for l, (n_in, n_out) in enumerate(zip(self.dims[:-1], self.dims[1:])):
            w = flat[self._w_off[l]:self._w_off[l] + n_in * n_out].reshape(n_out, n_in)
            b = flat[self._b_off[l]:self._b_off[l] + n_out]
            out.append((w, b))
        return out

    def touch(self):
        """Mark parameters as mutated, invalidating outstanding caches."""
        self.version += 1

    def copy(self):
        return Mlp(self.dims, self.activations, self.params)

    def same_architecture(self, other):
        return self.dims == other.dims and self.activations == other.activations

    def forward(self, x):
        """Return ``(y, cache)`` for a single vector or a ``(batch, in)`` matrix."""
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.dims[0]:
            raise NetworkError(f"input shape {x.shape} does not match input_dim {self.dims[0]}")
        x = np.ascontiguousarray(x)
        batch = x.shape[0]
        work = np.empty(batch * sum(self.dims))
        _backend.kernels.forward(self.params, self._dims, self._acts,
                                 self._w_off, self._b_off, x, work)
        y = work[-batch * self.dims[-1]:].reshape(batch, self.dims[-1])
        cache = ForwardCache(work, batch, self.version, id(self), squeeze)
        return (y[0] if squeeze else y), cache

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache, dy, param_grads=True):
        """Return ``(grads, dx)`` where both are gradients of ``sum(dy * y)``.

        ``grads`` is flat in parameter layout (see :meth:`unflatten`); it is
        ``None`` when ``param_grads`` is false.
        """
        if cache.owner != id(self) or cache.version != self.version:
            raise NetworkError("forward cache is stale or belongs to another network")
        dy = np.asarray(dy, dtype=np.float64)
        if cache.squeeze and dy.ndim == 1:
            dy = dy[None, :]
        if dy.shape != (cache.batch, self.dims[-1]):
            raise NetworkError(f"dy shape {dy.shape} != {(cache.batch, self.dims[-1])}")
        dy = np.ascontiguousarray(dy)
        width = max(self.dims) * cache.batch
        grads = np.empty(self.n_params)
        dx = np.empty((cache.batch, self.dims[0]))
        _backend.kernels.backward(self.params, self._dims, self._acts,
                                  self._w_off, self._b_off, cache.work, cache.batch,
                                  dy, grads, dx, np.empty(width), np.empty(width),
                                  bool(param_grads))
        if cache.squeeze:
            dx = dx[0]
        return (grads if param_grads else None), dx


def mlp_init(dims, activations, init=None, rng=None):
    """Build an Mlp with every parameter drawn from its layer's uniform bound."""
    init = init or InitSpec()
    rng = rng if rng is not None else np.random.default_rng()
    net = Mlp(dims, activations)
    for l, (w, b) in enumerate(net.layers):
        bound = init.bound(l)
        w[...] = rng.uniform(-bound, bound, size=w.shape)
        b[...] = rng.uniform(-bound, bound, size=b.shape)
    return net


def actor_net(s_dim=6, hidden=(64, 64), init=None, rng=None):
    dims = (s_dim, *hidden, 1)
    return mlp_init(dims, ["relu"] * len(hidden) + ["tanh"], init, rng)


def critic_net(n_agents, s_dim=6, u_dim=1, hidden=(64, 64), init=None, rng=None):
    dims = ((s_dim + u_dim) * n_agents, *hidden, 1)
    return mlp_init(dims, ["relu"] * len(hidden) + ["linear"], init, rng)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    lr: float = 0.3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0

    @classmethod
    def for_params(cls, params, lr=0.3, **kw):
        return cls(np.zeros_like(params), np.zeros_like(params), lr=lr, **kw)


def adam_step(net, grads, state):
    """One bias-corrected Adam descent step on ``net``'s parameters, in place."""
    grads = np.ascontiguousarray(grads, dtype=np.float64)
    if grads.shape != net.params.shape or state.m.shape != net.params.shape:
        raise NetworkError(
            f"shape mismatch: params {net.params.shape}, grads {grads.shape}, "
            f"moments {state.m.shape}")
    state.t += 1
    _backend.kernels.adam(net.params, grads, state.m, state.v, state.lr,
                          state.beta1, state.beta2, state.eps,
                          1.0 - state.beta1 ** state.t, 1.0 - state.beta2 ** state.t)
    net.touch()
    return net, state


def polyak_update(target, source, tau):
    """target <- tau * source + (1 - tau) * target, parameter-wise."""
    if not target.same_architecture(source):
        raise NetworkError("polyak_update needs identical architectures")
    if not 0.0 <= tau <= 1.0:
        raise NetworkError(f"tau must lie in [0, 1], got {tau}")
    _backend.kernels.polyak(target.params, source.params, float(tau))
    target.touch()


def save_checkpoint(net):
    return {
        "version": CHECKPOINT_VERSION,
        "dims": list(net.dims),
        "activations": list(net.activations),
        "layers": [{"w": w.tolist(), "b": b.tolist()} for w, b in net.layers],
    }


def load_checkpoint(doc):
    """Rebuild an Mlp from a checkpoint dict or JSON string."""
    if isinstance(doc, (str, bytes)):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"checkpoint is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise CheckpointError("checkpoint must be a JSON object")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {doc.get('version')!r}")
    try:
        net = Mlp(doc["dims"], doc["activations"])
        layers = doc["layers"]
        if len(layers) != len(net.layers):
            raise CheckpointError(f"{len(layers)} layers stored, {len(net.layers)} expected")
        for (w, b), stored in zip(net.layers, layers):
            sw = np.asarray(stored["w"], dtype=np.float64)
            sb = np.asarray(stored["b"], dtype=np.float64)
            if sw.shape != w.shape or sb.shape != b.shape:
                raise CheckpointError(
                    f"layer shape {sw.shape}/{sb.shape} != {w.shape}/{b.shape}")
            w[...] = sw
            b[...] = sb
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"malformed checkpoint: {exc}") from None
    if not np.all(np.isfinite(net.params)):
        raise CheckpointError("checkpoint holds non-finite parameters")
    return net


def param_digest(net):
    """Cheap content hash, used to assert evaluation leaves networks untouched."""
    return hash(net.params.tobytes())


__all__ = [
    "AdamState", "CheckpointError", "ForwardCache", "InitSpec", "Mlp", "NetworkError",
    "actor_net", "adam_step", "critic_net", "load_checkpoint", "mlp_init",
    "param_digest", "polyak_update", "save_checkpoint",
]
