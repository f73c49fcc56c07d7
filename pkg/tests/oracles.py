"""Independent reference implementations used as test oracles.

Everything here is written directly from the defining formulas, in plain
Python loops where practical, without calling into the package under test.
"""

import math

import numpy as np


def brute_percentile(x, q):
    s = sorted(float(v) for v in x)
    h = (len(s) - 1) * q / 100.0
    lo = math.floor(h)
    hi = min(lo + 1, len(s) - 1)
    return s[lo] + (h - lo) * (s[hi] - s[lo])


def brute_aggregate(x, kind):
    x = [float(v) for v in x]
    n = len(x)
    mean = math.fsum(x) / n
    if kind == "mean":
        return mean
    if kind == "sd":
        return math.sqrt(math.fsum((v - mean) ** 2 for v in x) / n)
    if kind == "iqr":
        return brute_percentile(x, 75) - brute_percentile(x, 25)
    if kind == "pd":
        return brute_percentile(x, 95) - brute_percentile(x, 5)
    raise ValueError(kind)


def adam_trajectory(theta0, grad_fn, steps, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    """Scalar Adam stepped by hand."""
    theta, m, v = float(theta0), 0.0, 0.0
    out = []
    for t in range(1, steps + 1):
        g = grad_fn(theta)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        theta = theta - lr * mhat / (math.sqrt(vhat) + eps)
        out.append(theta)
    return out


def brute_rmse(t, p):
    return math.sqrt(math.fsum((a - b) ** 2 for a, b in zip(t, p)) / len(t))


def brute_r2(t, p):
    mean = math.fsum(t) / len(t)
    ss_res = math.fsum((a - b) ** 2 for a, b in zip(t, p))
    ss_tot = math.fsum((a - mean) ** 2 for a in t)
    return 1.0 - ss_res / ss_tot


def brute_bins(times, values, window):
    """Mean of values per [k*window, (k+1)*window) bin, as {k: mean}."""
    acc = {}
    for t, v in zip(times, values):
        acc.setdefault(int(math.floor(t / window)), []).append(v)
    return {k: math.fsum(vs) / len(vs) for k, vs in sorted(acc.items())}


def gru_step(x, h, P):
    """One scalar-loop GRU step with h' = (1 - z) h + z c."""
    H = len(h)
    sig = lambda a: 1.0 / (1.0 + math.exp(-a))
    z = [sig(sum(x[i] * P["W_z"][i][j] for i in range(len(x))) + sum(h[k] * P["U_z"][k][j] for k in range(H)) + P["b_z"][j]) for j in range(H)]
    r = [sig(sum(x[i] * P["W_r"][i][j] for i in range(len(x))) + sum(h[k] * P["U_r"][k][j] for k in range(H)) + P["b_r"][j]) for j in range(H)]
    c = [
        math.tanh(sum(x[i] * P["W_h"][i][j] for i in range(len(x))) + sum(r[k] * h[k] * P["U_h"][k][j] for k in range(H)) + P["b_h"][j])
        for j in range(H)
    ]
    return [(1 - z[j]) * h[j] + z[j] * c[j] for j in range(H)]


def fd_gradients(loss_fn, params, eps=1e-5):
    """Central finite differences of ``loss_fn()`` w.r.t. every entry of every array in ``params``."""
    out = {}
    for name, p in params.items():
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = p[i]
            p[i] = old + eps
            up = loss_fn()
            p[i] = old - eps
            down = loss_fn()
            p[i] = old
            g[i] = (up - down) / (2 * eps)
        out[name] = g
    return out


def rel_error(a, b, floor=1e-6):
    """Elementwise |a - b| / max(|a|, |b|, floor); the floor absorbs FD noise on exact zeros."""
    a, b = np.asarray(a), np.asarray(b)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def student_t_two_sided_p(t, df):
    """Two-sided p-value from the finite series for the Student t CDF (integer df)."""
    theta = math.atan(abs(t) / math.sqrt(df))
    s, c = math.sin(theta), math.cos(theta)
    if df % 2 == 1:
        term, acc = c, 0.0
        for k in range(1, (df - 1) // 2 + 1):
            acc += term
            term *= c * c * (2 * k) / (2 * k + 1)
        a = 2 / math.pi * (theta + s * acc) if df > 1 else 2 * theta / math.pi
    else:
        term, acc = 1.0, 0.0
        for k in range(1, df // 2 + 1):
            acc += term
            term *= c * c * (2 * k - 1) / (2 * k)
        a = s * acc
    return 1.0 - a


def brute_paired_t(a, b):
    d = [float(x) - float(y) for x, y in zip(a, b)]
    n = len(d)
    mean = math.fsum(d) / n
    sd = math.sqrt(math.fsum((v - mean) ** 2 for v in d) / (n - 1))
    t = mean / (sd / math.sqrt(n))
    return t, student_t_two_sided_p(t, n - 1)
