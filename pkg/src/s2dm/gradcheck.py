import numpy as np

from .errors import NumericError
from .tensor import Tape, backward


def finite_diff_check(f, params, eps=1e-5):
    """Max relative error between backprop and central differences.

    ``f`` takes no arguments and returns a scalar Tensor built from
    ``params``; it must be deterministic (freeze any sampling noise).
    """
    params = list(params)
    if not params:
        return 0.0
    with Tape() as tape:
        loss = f()
    grads = backward(loss, tape, params)
    worst = 0.0
    for p in params:
        analytic = grads[id(p)].reshape(-1)
        flat = p.data.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            up = float(f().data)
            flat[k] = orig - eps
            down = float(f().data)
            flat[k] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericError("function returned NaN/Inf during finite differencing")
            numeric = (up - down) / (2 * eps)
            a = analytic[k]
            err = abs(a - numeric) / (abs(a) + abs(numeric) + 1e-12)
            worst = max(worst, err)
    return worst
