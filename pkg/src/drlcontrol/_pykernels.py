"""Pure numpy implementations of the hot elementwise kernels.

Every function here has an identically-named counterpart in the compiled
``_ckernels`` extension; :mod:`drlcontrol.kernels` picks one at import.
All arrays are float64 and C-contiguous; in-place kernels mutate their
first argument(s).
"""
import numpy as np


def adam_update(params, grads, m, v, lr, beta1, beta2, eps, step):
    # step is the already-incremented step count (>= 1)
    m *= beta1
    m += (1.0 - beta1) * grads
    v *= beta2
    v += (1.0 - beta2) * (grads * grads)
    bc1 = 1.0 - beta1 ** step
    bc2 = 1.0 - beta2 ** step
    params -= (lr / bc1) * m / (np.sqrt(v / bc2) + eps)


def soft_update(target, online, tau):
    target *= 1.0 - tau
    target += tau * online


def invert_gradients(grads, actions, low, high):
    width = high - low
    up = (high - actions) / width
    down = (actions - low) / width
    return grads * np.where(grads > 0.0, up, down)


def bn_forward_train(z, gamma, beta, eps):
    mean = z.mean(axis=0)
    centered = z - mean
    var = (centered * centered).mean(axis=0)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    return xhat * gamma + beta, xhat, mean, var, inv_std


def bn_backward(dout, xhat, gamma, inv_std):
    n = dout.shape[0]
    dbeta = dout.sum(axis=0)
    dgamma = (dout * xhat).sum(axis=0)
    dxhat = dout * gamma
    dz = (inv_std / n) * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
    return dz, dgamma, dbeta
