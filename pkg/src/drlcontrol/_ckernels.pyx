# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the kernels in ``_pykernels``.

Same signatures and semantics; each loop is fused into a single pass over
memory instead of the chain of temporaries numpy would allocate.
"""
import numpy as np
from libc.math cimport sqrt, pow


def adam_update(double[::1] params, const double[::1] grads, double[::1] m,
                double[::1] v, double lr, double beta1, double beta2,
                double eps, long step):
    cdef Py_ssize_t i, n = params.shape[0]
    cdef double g, mi, vi
    cdef double bc1 = 1.0 - pow(beta1, <double>step)
    cdef double bc2 = 1.0 - pow(beta2, <double>step)
    cdef double c1 = 1.0 - beta1, c2 = 1.0 - beta2
    cdef double step_size = lr / bc1
    if grads.shape[0] != n or m.shape[0] != n or v.shape[0] != n:
        raise ValueError("adam_update: length mismatch")
    with nogil:
        for i in range(n):
            g = grads[i]
            mi = beta1 * m[i] + c1 * g
            vi = beta2 * v[i] + c2 * (g * g)
            m[i] = mi
            v[i] = vi
            params[i] -= step_size * mi / (sqrt(vi / bc2) + eps)


def soft_update(double[::1] target, const double[::1] online, double tau):
    cdef Py_ssize_t i, n = target.shape[0]
    cdef double keep = 1.0 - tau
    if online.shape[0] != n:
        raise ValueError("soft_update: length mismatch")
    with nogil:
        for i in range(n):
            target[i] = keep * target[i] + tau * online[i]


def invert_gradients(const double[:, ::1] grads, const double[:, ::1] actions,
                     const double[::1] low, const double[::1] high):
    cdef Py_ssize_t i, j, n = grads.shape[0], k = grads.shape[1]
    out_arr = np.empty((n, k), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double g, width
    with nogil:
        for i in range(n):
            for j in range(k):
                g = grads[i, j]
                width = high[j] - low[j]
                if g > 0.0:
                    out[i, j] = g * (high[j] - actions[i, j]) / width
                else:
                    out[i, j] = g * (actions[i, j] - low[j]) / width
    return out_arr


def bn_forward_train(const double[:, ::1] z, const double[::1] gamma,
                     const double[::1] beta, double eps):
    cdef Py_ssize_t i, j, n = z.shape[0], f = z.shape[1]
    mean_arr = np.zeros(f, dtype=np.float64)
    var_arr = np.zeros(f, dtype=np.float64)
    inv_arr = np.empty(f, dtype=np.float64)
    xhat_arr = np.empty((n, f), dtype=np.float64)
    out_arr = np.empty((n, f), dtype=np.float64)
    cdef double[::1] mean = mean_arr, var = var_arr, inv_std = inv_arr
    cdef double[:, ::1] xhat = xhat_arr, out = out_arr
    cdef double d, inv_n = 1.0 / n
    with nogil:
        for i in range(n):
            for j in range(f):
                mean[j] += z[i, j]
        for j in range(f):
            mean[j] *= inv_n
        for i in range(n):
            for j in range(f):
                d = z[i, j] - mean[j]
                var[j] += d * d
        for j in range(f):
            var[j] *= inv_n
            inv_std[j] = 1.0 / sqrt(var[j] + eps)
        for i in range(n):
            for j in range(f):
                d = (z[i, j] - mean[j]) * inv_std[j]
                xhat[i, j] = d
                out[i, j] = d * gamma[j] + beta[j]
    return out_arr, xhat_arr, mean_arr, var_arr, inv_arr


def bn_backward(const double[:, ::1] dout, const double[:, ::1] xhat,
                const double[::1] gamma, const double[::1] inv_std):
    cdef Py_ssize_t i, j, n = dout.shape[0], f = dout.shape[1]
    dz_arr = np.empty((n, f), dtype=np.float64)
    dgamma_arr = np.zeros(f, dtype=np.float64)
    dbeta_arr = np.zeros(f, dtype=np.float64)
    cdef double[:, ::1] dz = dz_arr
    cdef double[::1] dgamma = dgamma_arr, dbeta = dbeta_arr
    cdef double dx, inv_n = 1.0 / n
    with nogil:
        for i in range(n):
            for j in range(f):
                dbeta[j] += dout[i, j]
                dgamma[j] += dout[i, j] * xhat[i, j]
        # sum(dxhat) = gamma*dbeta and sum(dxhat*xhat) = gamma*dgamma
        for i in range(n):
            for j in range(f):
                dx = dout[i, j] * gamma[j]
                dz[i, j] = inv_std[j] * (dx - inv_n * gamma[j] * dbeta[j]
                                         - xhat[i, j] * inv_n * gamma[j] * dgamma[j])
    return dz_arr, dgamma_arr, dbeta_arr
