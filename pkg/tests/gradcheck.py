"""Central finite-difference oracle shared by the gradient tests."""

import numpy as np

EPS = 1e-5
# below this both gradients are finite-difference noise (e.g. a bias feeding a
# train-mode BatchNorm), so the absolute difference is reported instead
ZERO_GRAD = 1e-7


def rel_error(a, b, floor=1e-8):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), floor)))


def grad_error(analytic, numeric):
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if max(np.max(np.abs(a)), np.max(np.abs(n))) < ZERO_GRAD:
        return float(np.max(np.abs(a - n)))
    return rel_error(a, n)


def numeric_grad(f, x, eps=EPS):
    """d f() / d x by central differences, perturbing ``x`` in place."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        fp = f()
        x[i] = old - eps
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * eps)
    return g


def check_layer(layer, x, train=True, seed=0):
    """Return the worst relative error over the input and every parameter."""
    rng = np.random.default_rng(1234)
    y, _ = layer.forward(x, train, np.random.default_rng(seed))
    probe = rng.standard_normal(y.shape)

    def loss():
        out, _ = layer.forward(x, train, np.random.default_rng(seed))
        return float(np.sum(out * probe))

    _, cache = layer.forward(x, train, np.random.default_rng(seed))
    dx, grads = layer.backward(cache, probe)
    worst = {"input": grad_error(dx, numeric_grad(loss, x))}
    for name, p in layer.named_params().items():
        worst[name] = grad_error(grads[name], numeric_grad(loss, p))
    return worst
