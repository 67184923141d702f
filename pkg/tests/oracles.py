"""Brute-force reference implementations used only by the tests.

Plain Python loops over float64 numpy arrays, written straight from the
formulas rather than from the library code paths they check.
"""

import math

import numpy as np


def unit_rows(rng, n, c):
    x = rng.normal(size=(n, c))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def read_oracle(q, p):
    K, C = q.shape
    M = p.shape[0]
    w = np.zeros((K, M))
    aug = np.zeros((K, 2 * C))
    for k in range(K):
        e = [math.exp(sum(q[k, c] * p[m, c] for c in range(C))) for m in range(M)]
        z = sum(e)
        for m in range(M):
            w[k, m] = e[m] / z
        for c in range(C):
            aug[k, c] = sum(w[k, m] * p[m, c] for m in range(M))
            aug[k, C + c] = q[k, c]
    return aug, w


def nearest_oracle(q_row, p):
    best, best_m = -math.inf, -1
    for m in range(p.shape[0]):
        s = sum(q_row[c] * p[m, c] for c in range(p.shape[1]))
        if s > best:  # strict: ties keep the lower index
            best, best_m = s, m
    return best_m


def update_oracle(p, q):
    M, C = p.shape
    out = p.copy()
    assign = [nearest_oracle(q[k], p) for k in range(q.shape[0])]
    for m in range(M):
        members = [k for k in range(q.shape[0]) if assign[k] == m]
        if not members:
            continue
        sims = [sum(q[k, c] * p[m, c] for c in range(C)) for k in members]
        e = [math.exp(s) for s in sims]
        z = sum(e)
        vec = [p[m, c] + sum(e[i] / z * q[k, c] for i, k in enumerate(members)) for c in range(C)]
        n = math.sqrt(sum(v * v for v in vec))
        if n > 1e-12:  # fully cancelled memory is left in place
            out[m] = [v / n for v in vec]
    return out


def sqdist(a, b):
    return sum((x - y) ** 2 for x, y in zip(a, b))


def compactness_oracle(q, p):
    return sum(sqdist(q[k], p[nearest_oracle(q[k], p)]) for k in range(q.shape[0]))


def separateness_oracle(q, p, alpha):
    total = 0.0
    for k in range(q.shape[0]):
        sims = [(sum(q[k, c] * p[m, c] for c in range(p.shape[1])), -m) for m in range(p.shape[0])]
        order = sorted(range(p.shape[0]), key=lambda m: sims[m], reverse=True)
        first, second = order[0], order[1]
        total += max(0.0, sqdist(q[k], p[first]) - sqdist(q[k], p[second]) + alpha)
    return total


def avg_min_dist_oracle(q, p):
    return sum(min(math.sqrt(sqdist(q[k], p[m])) for m in range(p.shape[0])) for k in range(q.shape[0])) / q.shape[0]


def pairwise_auc(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l == 1]
    neg = [s for s, l in zip(scores, labels) if l == 0]
    wins = 0.0
    for a in pos:
        for b in neg:
            wins += 1.0 if a > b else 0.5 if a == b else 0.0
    return wins / (len(pos) * len(neg))


def conv3x3_gap_oracle(x, weight, bias):
    """Zero-padded 3x3 convolution followed by a spatial mean, by explicit loops."""
    cin, h, w = x.shape
    cout = weight.shape[0]
    out = np.zeros(cout)
    for o in range(cout):
        acc = 0.0
        for i in range(h):
            for j in range(w):
                v = bias[o]
                for c in range(cin):
                    for di in range(3):
                        for dj in range(3):
                            ii, jj = i + di - 1, j + dj - 1
                            if 0 <= ii < h and 0 <= jj < w:
                                v += weight[o, c, di, dj] * x[c, ii, jj]
                acc += v
        out[o] = acc / (h * w)
    return out


def central_difference(f, x, eps=1e-6, coords=None):
    """Central-difference gradient of scalar ``f`` at numpy array ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    idx = range(flat.size) if coords is None else coords
    for i in idx:
        old = flat[i]
        flat[i] = old + eps
        fp = f(x)
        flat[i] = old - eps
        fm = f(x)
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * eps)
    return g


def rel_err(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-30))
