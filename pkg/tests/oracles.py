"""Reference computations that share no code path with the package."""
import math

import numpy as np


def simpson(fn, lo, hi, panels=64):
    if hi == lo:
        return 0.0
    xs = np.linspace(lo, hi, 2 * panels + 1)
    ys = fn(xs)
    h = (hi - lo) / (2 * panels)
    return h / 3.0 * (ys[0] + ys[-1] + 4.0 * ys[1:-1:2].sum() + 2.0 * ys[2:-1:2].sum())


def basis_quadrature(breaks, k, c, x):
    """c-fold integral from 0 of the boxcar on [breaks[k], breaks[k+1]).

    Uses the repeated-integration formula int_0^x (x - s)**(c-1) / (c-1)! box(s) ds,
    with composite Simpson on each piece where the box is constant.
    """
    lo_k, hi_k = breaks[k], breaks[k + 1]
    if c == 0:
        return float(lo_k <= x < hi_k)
    a, b = min(0.0, x), max(0.0, x)
    lo, hi = max(a, lo_k), min(b, hi_k)
    if hi <= lo:
        return 0.0
    kernel = lambda s: (x - s) ** (c - 1) / math.factorial(c - 1)
    val = simpson(kernel, lo, hi)
    return val if x >= 0 else -val


def central_diff(fn, x, h=1e-5):
    return (fn(x + h) - fn(x - h)) / (2 * h)
