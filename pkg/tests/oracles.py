"""Independent reference computations used by the tests.

Nothing here imports the package under test.  Values marked FROZEN were
produced once by these oracles (or by hand) and are pinned as literals so a
regression in either side shows up.
"""

import math

import numpy as np

# FROZEN: bisection on the defining equations with the default rewards
# (r1, r2, r_safe) = (0.5, 2.0, 1.2) and (r_win, r_loss) = (3.0, 0.2).
P_E_TOY = 0.5333333333333333
P_T_TOY = 0.3684827970831031
P_E_PORTFOLIO = 0.2857142857142857
KELLY_AT_HALF = 0.375
# FROZEN: pure-Python summation of (EV step - clamped Kelly)^2 over p = i/20.
MSE_EV_VS_KELLY_21 = 0.1914434523809524
# FROZEN: 1 / (1 + e^-1)
SIGMOID_K10_P05_AT_06 = 0.7310585786300049


def bisect(fn, lo, hi, tol=1e-15, max_iter=200):
    flo = fn(lo)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        fm = fn(mid)
        if fm == 0 or hi - lo < tol:
            return mid
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def p_e_toy(r1, r2, r_safe):
    # expected factor of risky minus safe, decreasing in p
    return bisect(lambda p: p * r1 + (1 - p) * r2 - r_safe, 0.0, 1.0)


def p_t_toy(r1, r2, r_safe):
    return bisect(lambda p: p * math.log(r1) + (1 - p) * math.log(r2) - math.log(r_safe), 0.0, 1.0)


def p_e_portfolio(r_win, r_loss):
    return bisect(lambda p: p * r_win + (1 - p) * r_loss - 1.0, 0.0, 1.0)


def growth(f, p, r_win, r_loss):
    return p * np.log1p(f * (r_win - 1)) + (1 - p) * np.log1p(f * (r_loss - 1))


def kelly_grid(p, r_win, r_loss, step=1e-6):
    n = int(round(1 / step))
    f = np.arange(n + 1) / n
    return float(f[np.argmax(growth(f, p, r_win, r_loss))])


def numeric_grad(fn, x, h=1e-5):
    """Central differences of scalar ``fn`` w.r.t. every entry of array ``x`` (in place, restored)."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = fn()
        flat[i] = orig - h
        down = fn()
        flat[i] = orig
        gf[i] = (up - down) / (2 * h)
    return g


def dense_forward(weights, biases, x):
    """Plain loop-free reference forward pass for a single network and input vector."""
    a = np.asarray(x, dtype=float)
    for i, (w, b) in enumerate(zip(weights, biases)):
        a = w @ a + b
        if i < len(weights) - 1:
            a = np.maximum(a, 0.0)
    return a


def splitmix64(x):
    """Reference SplitMix64 output function (Steele, Lea and Flood constants)."""
    mask = (1 << 64) - 1
    z = (x + 0x9E3779B97F4A7C15) & mask
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
    return z ^ (z >> 31)
