# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled dense-network kernels.

All networks keep their parameters in one flat float64 buffer. Layer ``l``
owns a row-major ``(dims[l+1], dims[l])`` weight block at ``w_off[l]`` and a
bias block at ``b_off[l]``. Activations are coded 0=linear, 1=relu, 2=tanh.

The forward workspace ``work`` holds the input copy followed by every
layer's post-activation output, each as a row-major ``(batch, width)`` block.

Matrix products go through BLAS dgemm; BLAS is column-major, so every
row-major block is passed as its transpose.
"""

from libc.math cimport sqrt, tanh
from libc.string cimport memcpy, memset
from scipy.linalg.cython_blas cimport dgemm

NAME = "cython"


cdef inline void _gemm(char ta, char tb, int m, int n, int k,
                       double* a, int lda, double* b, int ldb,
                       double beta, double* c, int ldc) noexcept nogil:
    cdef double alpha = 1.0
    dgemm(&ta, &tb, &m, &n, &k, &alpha, a, &lda, b, &ldb, &beta, c, &ldc)


def forward(double[::1] params, Py_ssize_t[::1] dims, int[::1] acts,
            Py_ssize_t[::1] w_off, Py_ssize_t[::1] b_off,
            double[:, ::1] x, double[::1] work):
    cdef Py_ssize_t n_layers = acts.shape[0]
    cdef Py_ssize_t batch = x.shape[0]
    cdef Py_ssize_t l, r, c, n_in, n_out
    cdef Py_ssize_t off_in = 0, off_out
    cdef double* z
    cdef double* bias
    cdef double* w = &params[0]
    cdef double* ws = &work[0]
    with nogil:
        memcpy(ws, &x[0, 0], batch * dims[0] * sizeof(double))
        for l in range(n_layers):
            n_in = dims[l]
            n_out = dims[l + 1]
            off_out = off_in + batch * n_in
            z = ws + off_out
            bias = w + b_off[l]
            for r in range(batch):
                memcpy(z + r * n_out, bias, n_out * sizeof(double))
            _gemm(b'T', b'N', <int>n_out, <int>batch, <int>n_in,
                  w + w_off[l], <int>n_in, ws + off_in, <int>n_in,
                  1.0, z, <int>n_out)
            if acts[l] == 1:
                for c in range(batch * n_out):
                    if z[c] < 0.0:
                        z[c] = 0.0
            elif acts[l] == 2:
                for c in range(batch * n_out):
                    z[c] = tanh(z[c])
            off_in = off_out


def backward(double[::1] params, Py_ssize_t[::1] dims, int[::1] acts,
             Py_ssize_t[::1] w_off, Py_ssize_t[::1] b_off,
             double[::1] work, Py_ssize_t batch, double[:, ::1] dy,
             double[::1] grads, double[:, ::1] dx,
             double[::1] scratch_a, double[::1] scratch_b,
             bint param_grads):
    cdef Py_ssize_t n_layers = acts.shape[0]
    cdef Py_ssize_t l, r, c, n_in, n_out, off_out
    cdef double* w = &params[0]
    cdef double* ws = &work[0]
    cdef double* g = &grads[0]
    cdef double* da = &scratch_a[0]
    cdef double* nxt = &scratch_b[0]
    cdef double* tmp
    cdef double* a_out
    cdef double* a_in
    cdef double* gb
    cdef Py_ssize_t total = 0
    for l in range(n_layers + 1):
        total += batch * dims[l]
    with nogil:
        off_out = total - batch * dims[n_layers]
        memcpy(da, &dy[0, 0], batch * dims[n_layers] * sizeof(double))
        for l in range(n_layers - 1, -1, -1):
            n_in = dims[l]
            n_out = dims[l + 1]
            a_out = ws + off_out
            a_in = a_out - batch * n_in
            # da becomes dz in place
            if acts[l] == 1:
                for c in range(batch * n_out):
                    if a_out[c] <= 0.0:
                        da[c] = 0.0
            elif acts[l] == 2:
                for c in range(batch * n_out):
                    da[c] = da[c] * (1.0 - a_out[c] * a_out[c])
            if param_grads:
                _gemm(b'N', b'T', <int>n_in, <int>n_out, <int>batch,
                      a_in, <int>n_in, da, <int>n_out,
                      0.0, g + w_off[l], <int>n_in)
                gb = g + b_off[l]
                memset(gb, 0, n_out * sizeof(double))
                for r in range(batch):
                    for c in range(n_out):
                        gb[c] += da[r * n_out + c]
            _gemm(b'N', b'N', <int>n_in, <int>batch, <int>n_out,
                  w + w_off[l], <int>n_in, da, <int>n_out,
                  0.0, nxt, <int>n_in)
            tmp = da
            da = nxt
            nxt = tmp
            off_out -= batch * n_in
        memcpy(&dx[0, 0], da, batch * dims[0] * sizeof(double))


def adam(double[::1] params, double[::1] grads, double[::1] m, double[::1] v,
         double lr, double beta1, double beta2, double eps,
         double bias1, double bias2):
    """In-place Adam step; ``bias1``/``bias2`` are ``1 - beta**t``."""
    cdef Py_ssize_t i, n = params.shape[0]
    cdef double gi, mi, vi
    cdef double c1 = 1.0 - beta1, c2 = 1.0 - beta2
    cdef double step = lr / bias1, inv_bias2 = 1.0 / bias2
    with nogil:
        for i in range(n):
            gi = grads[i]
            mi = beta1 * m[i] + c1 * gi
            vi = beta2 * v[i] + c2 * gi * gi
            m[i] = mi
            v[i] = vi
            params[i] -= step * mi / (sqrt(vi * inv_bias2) + eps)


def polyak(double[::1] target, double[::1] source, double tau):
    cdef Py_ssize_t i, n = target.shape[0]
    cdef double keep = 1.0 - tau
    with nogil:
        for i in range(n):
            target[i] = tau * source[i] + keep * target[i]
