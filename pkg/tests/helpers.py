"""Shared test oracles, independent of the library's backward pass."""

import numpy as np

from ldag import tensor as T


def fd_grad(loss_fn, tensor, step):
    """Central-difference gradient of loss_fn w.r.t. one tensor's elements.

    ``loss_fn`` must rebuild its forward pass from current tensor data on
    every call; it is evaluated in float64 so the oracle's own noise stays
    far below the tolerances it checks.
    """
    flat = tensor.data.reshape(-1)
    grad = np.zeros(flat.shape, dtype=np.float64)
    with T.precision("float64"):
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            f_plus = float(loss_fn().data)
            flat[j] = orig - step
            f_minus = float(loss_fn().data)
            flat[j] = orig
            grad[j] = (f_plus - f_minus) / (2.0 * step)
    return grad.reshape(tensor.data.shape)


def rel_err(analytic, numeric, floor=1e-8):
    """Max elementwise relative error, absolute floor absorbing near-zero noise.

    An element passes at tolerance t when |a - n| <= floor + t * max(|a|, |n|);
    the returned value is the max of (|a - n| - floor) / max(|a|, |n|, floor),
    so "rel_err < t" is exactly that criterion.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max((np.abs(a - n) - floor) / scale))


def check_grad(loss_fn, tensors, step, tol, floor=1e-8):
    """Assert every tensor's recorded gradient matches finite differences."""
    with T.Graph() as g:
        loss = loss_fn()
    grads = g.backward(loss, write_grad=False)
    worst = 0.0
    for t in tensors:
        err = rel_err(grads.of(t), fd_grad(loss_fn, t, step), floor=floor)
        worst = max(worst, err)
        assert err < tol, f"gradient mismatch: rel err {err:.3e} >= {tol}"
    return worst


def random_tensor(rng, shape, requires_grad=True, scale=1.0, offset=0.0):
    data = (rng.standard_normal(shape) * scale + offset).astype(np.float32)
    return T.Tensor(data, requires_grad=requires_grad)
