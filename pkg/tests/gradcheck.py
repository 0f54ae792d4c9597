"""Central finite-difference oracle shared by the nn and acceptance tests."""
import numpy as np

from drlcontrol.nn import Activation, LayerSpec, DenseNetwork, Mode

STEP = 1e-5
# gradients smaller than this are compared in absolute terms
FLOOR = 1e-4


def relative_error(analytic, numeric):
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), FLOOR)
    return float(np.max(np.abs(analytic - numeric) / scale))


def random_network(rng, batch_norm=None):
    """Small network with random widths (<= 16), activations and batch norm."""
    n_layers = int(rng.integers(1, 4))
    dims = [int(rng.integers(1, 17)) for _ in range(n_layers + 1)]
    kinds = list(Activation)
    specs = []
    for i in range(n_layers):
        bn = bool(rng.integers(2)) if batch_norm is None else batch_norm
        specs.append(LayerSpec(dims[i], dims[i + 1], kinds[int(rng.integers(len(kinds)))],
                               batch_norm=bn and i < n_layers - 1,
                               l2_decay=float(rng.choice([0.0, 1e-3]))))
    net = DenseNetwork(specs, rng=rng)
    # zero biases behind a dead relu put the next pre-activation exactly on
    # the kink, where finite differences are meaningless
    for sl in net._slices:
        a, b, _ = sl["biases"]
        net.params[a:b] = rng.uniform(-0.5, 0.5, b - a)
    return net


def objective(net, x, w, mode):
    out, cache = net.forward(x, mode)
    return float(np.sum(w * out)), cache


def draw_inputs(net, rng, batch, mode, margin=1e-3, tries=200):
    """Inputs that keep every relu pre-activation ``margin`` away from its kink."""
    for _ in range(tries):
        x = rng.standard_normal((batch, net.input_dim))
        _, cache = net.forward(x, mode)
        gaps = [np.min(np.abs(z)) for z, layer in zip(cache.normed, net.layers)
                if layer.activation is Activation.RELU]
        if not gaps or min(gaps) > margin:
            return x
    raise RuntimeError("could not draw inputs away from the relu kink")


def check_network(net, rng, batch=8, mode=Mode.TRAIN):
    """Max relative error between analytic and finite-difference gradients.

    The objective is ``sum(w * net(x)) + 0.5 * sum_l decay_l * |theta_l|^2``
    for a fixed random ``w``, so the L2 term in the analytic gradient has an
    exact counterpart.
    """
    x = draw_inputs(net, rng, batch, mode)
    w = rng.standard_normal((batch, net.output_dim))

    decay = np.zeros_like(net.params)
    for sl, layer in zip(net._slices, net.layers):
        for key in ("weights", "biases"):
            a, b, _ = sl[key]
            decay[a:b] = layer.l2_decay

    def total(p):
        saved = net.params.copy()
        net.params[:] = p
        val, _ = objective(net, x, w, mode)
        net.params[:] = saved
        return val + 0.5 * float(np.sum(decay * p * p))

    _, cache = objective(net, x, w, mode)
    grads = net.backward(cache, w)
    p0 = net.params.copy()
    numeric = np.empty_like(p0)
    for i in range(p0.size):
        e = np.zeros_like(p0)
        e[i] = STEP
        numeric[i] = (total(p0 + e) - total(p0 - e)) / (2 * STEP)

    # input gradient as well
    def total_x(xx):
        val, _ = objective(net, xx, w, mode)
        return val

    num_x = np.empty_like(x)
    for idx in np.ndindex(*x.shape):
        e = np.zeros_like(x)
        e[idx] = STEP
        num_x[idx] = (total_x(x + e) - total_x(x - e)) / (2 * STEP)
    return max(relative_error(grads.flat, numeric), relative_error(grads.inputs, num_x))
