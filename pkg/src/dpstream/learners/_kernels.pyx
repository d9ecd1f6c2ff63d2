# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-example clipped-gradient kernel.

Same contract as ``_reference.clipped_grad_sum``: one pass per example
(forward, backward over the trainable suffix, clip, accumulate), no
per-example gradient stored beyond the layer deltas.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt, tanh

cnp.import_array()


def clipped_grad_sum(double[::1] params, sizes, X, y, int kind, double clip_norm, int first_trainable=0):
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] Xc = np.ascontiguousarray(X, dtype=np.float64)
    cdef double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef long[::1] sz = np.asarray(sizes, dtype=np.int64).astype(np.int_)
    cdef int n_layers = sz.shape[0] - 1
    cdef Py_ssize_t n = Xc.shape[0]
    cdef double[:, ::1] xv = Xc

    # offsets into params, activations and deltas
    cdef long[::1] w_off = np.zeros(n_layers, dtype=np.int_)
    cdef long[::1] b_off = np.zeros(n_layers, dtype=np.int_)
    cdef long[::1] a_off = np.zeros(n_layers + 1, dtype=np.int_)
    cdef long[::1] d_off = np.zeros(n_layers + 1, dtype=np.int_)
    cdef long pos = 0
    cdef int l
    for l in range(n_layers):
        w_off[l] = pos
        b_off[l] = pos + sz[l] * sz[l + 1]
        pos = b_off[l] + sz[l + 1]
        a_off[l + 1] = a_off[l] + sz[l]
        d_off[l + 1] = d_off[l] + sz[l + 1]
    if pos != params.shape[0]:
        raise ValueError("parameter vector does not match layer sizes")

    cdef double[::1] acts = np.zeros(a_off[n_layers] + 1, dtype=np.float64)
    cdef double[::1] dl = np.zeros(d_off[n_layers] + 1, dtype=np.float64)
    grad_arr = np.zeros(params.shape[0], dtype=np.float64)
    norms_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] grad = grad_arr
    cdef double[::1] norms = norms_arr

    cdef Py_ssize_t i, j, k
    cdef long n_in, n_out, ao, do_, wo, bo, out_l = n_layers - 1
    cdef double zmax, tot, an, dn, sq, scale, yhat, v

    for i in range(n):
        for j in range(sz[0]):
            acts[j] = xv[i, j]
        # hidden layers
        for l in range(n_layers - 1):
            n_in = sz[l]
            n_out = sz[l + 1]
            wo = w_off[l]
            bo = b_off[l]
            ao = a_off[l]
            for k in range(n_out):
                acts[a_off[l + 1] + k] = params[bo + k]
            # row-major weights: accumulate one input row at a time
            for j in range(n_in):
                v = acts[ao + j]
                if v != 0.0:
                    for k in range(n_out):
                        acts[a_off[l + 1] + k] += v * params[wo + j * n_out + k]
            for k in range(n_out):
                if acts[a_off[l + 1] + k] < 0.0:
                    acts[a_off[l + 1] + k] = 0.0
        # output layer, pre-activation into its delta slot
        n_in = sz[out_l]
        n_out = sz[n_layers]
        wo = w_off[out_l]
        bo = b_off[out_l]
        ao = a_off[out_l]
        do_ = d_off[out_l]
        for k in range(n_out):
            dl[do_ + k] = params[bo + k]
        for j in range(n_in):
            v = acts[ao + j]
            if v != 0.0:
                for k in range(n_out):
                    dl[do_ + k] += v * params[wo + j * n_out + k]
        if kind == 0:
            zmax = dl[do_]
            for k in range(1, n_out):
                if dl[do_ + k] > zmax:
                    zmax = dl[do_ + k]
            tot = 0.0
            for k in range(n_out):
                dl[do_ + k] = exp(dl[do_ + k] - zmax)
                tot += dl[do_ + k]
            for k in range(n_out):
                dl[do_ + k] /= tot
            dl[do_ + <long>yv[i]] -= 1.0
        else:
            yhat = 0.5 * (1.0 + tanh(0.5 * dl[do_]))
            dl[do_] = 2.0 * (yhat - yv[i]) * yhat * (1.0 - yhat)

        # backward over the trainable suffix
        sq = 0.0
        l = out_l
        while l >= first_trainable:
            n_in = sz[l]
            n_out = sz[l + 1]
            ao = a_off[l]
            do_ = d_off[l]
            an = 1.0
            for j in range(n_in):
                an += acts[ao + j] * acts[ao + j]
            dn = 0.0
            for k in range(n_out):
                dn += dl[do_ + k] * dl[do_ + k]
            sq += an * dn
            if l > first_trainable:
                wo = w_off[l]
                for j in range(n_in):
                    if acts[ao + j] > 0.0:
                        v = 0.0
                        for k in range(n_out):
                            v += params[wo + j * n_out + k] * dl[do_ + k]
                        dl[d_off[l - 1] + j] = v
                    else:
                        dl[d_off[l - 1] + j] = 0.0
            l -= 1
        norms[i] = sqrt(sq)
        v = norms[i] / clip_norm
        scale = 1.0 / v if v > 1.0 else 1.0

        for l in range(first_trainable, n_layers):
            n_in = sz[l]
            n_out = sz[l + 1]
            ao = a_off[l]
            do_ = d_off[l]
            wo = w_off[l]
            bo = b_off[l]
            for k in range(n_out):
                dl[do_ + k] *= scale
                grad[bo + k] += dl[do_ + k]
            for j in range(n_in):
                v = acts[ao + j]
                if v != 0.0:
                    for k in range(n_out):
                        grad[wo + j * n_out + k] += v * dl[do_ + k]
    return grad_arr, norms_arr
