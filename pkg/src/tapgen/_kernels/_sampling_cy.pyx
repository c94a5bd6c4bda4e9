# Compiled sampling kernels: hot loops of the proposal feature sampler.
#
# Same contract as _sampling_py: plan arrays encode out-of-range samples as
# index 0 with weight 0, and cells with start >= end have all-zero weights,
# so the loops below may skip the lower triangle entirely.  Built with
# -ffp-contract=off so results stay bit-identical to the numpy fallback.

import numpy as np

cimport cython
cimport numpy as cnp

cnp.import_array()

ctypedef fused real:
    float
    double

NAME = "ext"


def expand_forward(real[:, ::1] f,
                   int[:, :, ::1] tl, int[:, :, ::1] tr,
                   real[:, :, ::1] wl, real[:, :, ::1] wr):
    cdef Py_ssize_t L = tl.shape[0]
    cdef Py_ssize_t N = tl.shape[2]
    cdef Py_ssize_t C = f.shape[1]
    dtype = np.float32 if real is float else np.float64
    out_arr = np.zeros((L, L, N, C), dtype=dtype)
    cdef real[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t i, j, n, c, a, b
    cdef real u, v
    with nogil:
        for i in range(L):
            for j in range(i + 1, L):
                for n in range(N):
                    u = wl[i, j, n]
                    v = wr[i, j, n]
                    a = tl[i, j, n]
                    b = tr[i, j, n]
                    for c in range(C):
                        out[i, j, n, c] = u * f[a, c] + v * f[b, c]
    return out_arr


def expand_backward(real[:, :, :, ::1] gout,
                    int[:, :, ::1] tl, int[:, :, ::1] tr,
                    real[:, :, ::1] wl, real[:, :, ::1] wr,
                    Py_ssize_t length):
    cdef Py_ssize_t L = tl.shape[0]
    cdef Py_ssize_t N = tl.shape[2]
    cdef Py_ssize_t C = gout.shape[3]
    dtype = np.float32 if real is float else np.float64
    gin_arr = np.zeros((length, C), dtype=dtype)
    cdef real[:, ::1] gin = gin_arr
    cdef Py_ssize_t i, j, n, c, a, b
    cdef real u, v
    with nogil:
        for i in range(L):
            for j in range(i + 1, L):
                for n in range(N):
                    u = wl[i, j, n]
                    v = wr[i, j, n]
                    a = tl[i, j, n]
                    b = tr[i, j, n]
                    for c in range(C):
                        gin[a, c] += u * gout[i, j, n, c]
                        gin[b, c] += v * gout[i, j, n, c]
    return gin_arr


def collapse_forward(real[:, :, ::1] g,
                     int[:, :, ::1] tl, int[:, :, ::1] tr,
                     real[:, :, ::1] wl, real[:, :, ::1] wr,
                     real[::1] bias):
    cdef Py_ssize_t L = tl.shape[0]
    cdef Py_ssize_t N = tl.shape[2]
    cdef Py_ssize_t K = g.shape[2]
    dtype = np.float32 if real is float else np.float64
    out_arr = np.empty((L, L, K), dtype=dtype)
    cdef real[:, :, ::1] out = out_arr
    cdef Py_ssize_t i, j, n, k, a, b
    cdef real u, v
    with nogil:
        for i in range(L):
            for j in range(L):
                for k in range(K):
                    out[i, j, k] = bias[k]
        for i in range(L):
            for j in range(i + 1, L):
                for n in range(N):
                    u = wl[i, j, n]
                    v = wr[i, j, n]
                    a = tl[i, j, n]
                    b = tr[i, j, n]
                    for k in range(K):
                        out[i, j, k] += u * g[a, n, k] + v * g[b, n, k]
    return out_arr


def collapse_backward(real[:, :, ::1] gout,
                      int[:, :, ::1] tl, int[:, :, ::1] tr,
                      real[:, :, ::1] wl, real[:, :, ::1] wr,
                      Py_ssize_t length):
    cdef Py_ssize_t L = tl.shape[0]
    cdef Py_ssize_t N = tl.shape[2]
    cdef Py_ssize_t K = gout.shape[2]
    dtype = np.float32 if real is float else np.float64
    ggrid_arr = np.zeros((length, N, K), dtype=dtype)
    cdef real[:, :, ::1] ggrid = ggrid_arr
    cdef Py_ssize_t i, j, n, k, a, b
    cdef real u, v
    with nogil:
        for i in range(L):
            for j in range(i + 1, L):
                for n in range(N):
                    u = wl[i, j, n]
                    v = wr[i, j, n]
                    a = tl[i, j, n]
                    b = tr[i, j, n]
                    for k in range(K):
                        ggrid[a, n, k] += u * gout[i, j, k]
                        ggrid[b, n, k] += v * gout[i, j, k]
    return ggrid_arr
