"""Pure-numpy twin of ``_kernels.pyx``; same signatures, same buffer layout."""

import numpy as np

NAME = "python"


def _views(params, dims, w_off, b_off, l):
    n_in, n_out = dims[l], dims[l + 1]
    w = params[w_off[l]:w_off[l] + n_out * n_in].reshape(n_out, n_in)
    b = params[b_off[l]:b_off[l] + n_out]
    return w, b


def _blocks(work, dims, batch):
    out, off = [], 0
    for d in dims:
        out.append(work[off:off + batch * d].reshape(batch, d))
        off += batch * d
    return out


def forward(params, dims, acts, w_off, b_off, x, work):
    batch = x.shape[0]
    blocks = _blocks(work, dims, batch)
    blocks[0][...] = x
    for l, code in enumerate(acts):
        w, b = _views(params, dims, w_off, b_off, l)
        z = blocks[l + 1]
        np.matmul(blocks[l], w.T, out=z)
        z += b
        if code == 1:
            np.maximum(z, 0.0, out=z)
        elif code == 2:
            np.tanh(z, out=z)


def backward(params, dims, acts, w_off, b_off, work, batch, dy, grads, dx,
             scratch_a, scratch_b, param_grads):
    blocks = _blocks(work, dims, batch)
    da = np.array(dy, dtype=np.float64)
    for l in range(len(acts) - 1, -1, -1):
        a_out = blocks[l + 1]
        if acts[l] == 1:
            da[a_out <= 0.0] = 0.0
        elif acts[l] == 2:
            da *= 1.0 - a_out * a_out
        w, _ = _views(params, dims, w_off, b_off, l)
        if param_grads:
            gw, gb = _views(grads, dims, w_off, b_off, l)
            np.matmul(da.T, blocks[l], out=gw)
            gb[...] = da.sum(axis=0)
        da = da @ w
    dx[...] = da


def adam(params, grads, m, v, lr, beta1, beta2, eps, bias1, bias2):
    m *= beta1
    m += (1.0 - beta1) * grads
    v *= beta2
    v += (1.0 - beta2) * grads * grads
    params -= (lr / bias1) * m / (np.sqrt(v * (1.0 / bias2)) + eps)


def polyak(target, source, tau):
    target[...] = tau * source + (1.0 - tau) * target
