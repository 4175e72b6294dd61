"""Central-difference Jacobians."""

import numpy as np


def step_sizes(x, rel=1e-6, floor=1e-6):
    """h = max(floor, rel * |x|) per component."""
    return np.maximum(floor, rel * np.abs(np.asarray(x, dtype=float)))


def central_jacobian(f, x, rel=1e-6, floor=1e-6):
    """J[a, b] = d f_a / d x_b by central differences."""
    x = np.asarray(x, dtype=float)
    h = step_sizes(x, rel, floor)
    f0 = np.asarray(f(x))
    jac = np.empty((f0.size, x.size))
    for b in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[b] += h[b]
        xm[b] -= h[b]
        jac[:, b] = (np.ravel(f(xp)) - np.ravel(f(xm))) / (2.0 * h[b])
    return jac
