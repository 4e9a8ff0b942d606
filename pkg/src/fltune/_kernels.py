"""Compiled inner loops for local training.

Same arithmetic as the numpy reference in ``model.py``; the test suite checks
the two agree to round-off.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(cache=True)
def _softmax_grad(z, yb, nb, C):
    # z holds logits on entry and d(mean xent)/d(logits) on exit.
    for i in range(nb):
        m = z[i, 0]
        for c in range(1, C):
            if z[i, c] > m:
                m = z[i, c]
        s = 0.0
        for c in range(C):
            z[i, c] = math.exp(z[i, c] - m)
            s += z[i, c]
        for c in range(C):
            z[i, c] /= s
        z[i, yb[i]] -= 1.0
        for c in range(C):
            z[i, c] /= nb


@njit(cache=True)
def sgd_linear(w, xs, ys, batch, lr, mom, d, C):
    buf = np.zeros_like(w)
    g = np.empty_like(w)
    W = w[: d * C].reshape((d, C))
    b = w[d * C :]
    gW = g[: d * C].reshape((d, C))
    gb = g[d * C :]
    total = ys.shape[0]
    z = np.empty((batch, C))
    steps = 0
    for start in range(0, total, batch):
        nb = min(batch, total - start)
        for i in range(nb):
            for c in range(C):
                acc = b[c]
                for j in range(d):
                    acc += xs[start + i, j] * W[j, c]
                z[i, c] = acc
        _softmax_grad(z, ys[start : start + nb], nb, C)
        for j in range(d):
            for c in range(C):
                acc = 0.0
                for i in range(nb):
                    acc += xs[start + i, j] * z[i, c]
                gW[j, c] = acc
        for c in range(C):
            acc = 0.0
            for i in range(nb):
                acc += z[i, c]
            gb[c] = acc
        for p in range(w.shape[0]):
            buf[p] = mom * buf[p] + g[p]
            w[p] -= lr * buf[p]
        steps += 1
    return steps


@njit(cache=True)
def sgd_mlp(w, xs, ys, batch, lr, mom, d, H, C):
    buf = np.zeros_like(w)
    g = np.empty_like(w)
    o1 = d * H
    o2 = o1 + H
    o3 = o2 + H * C
    W1 = w[:o1].reshape((d, H))
    b1 = w[o1:o2]
    W2 = w[o2:o3].reshape((H, C))
    b2 = w[o3:]
    gW1 = g[:o1].reshape((d, H))
    gb1 = g[o1:o2]
    gW2 = g[o2:o3].reshape((H, C))
    gb2 = g[o3:]
    total = ys.shape[0]
    pre = np.empty((batch, H))
    h = np.empty((batch, H))
    z = np.empty((batch, C))
    dh = np.empty((batch, H))
    steps = 0
    for start in range(0, total, batch):
        nb = min(batch, total - start)
        for i in range(nb):
            for k in range(H):
                acc = b1[k]
                for j in range(d):
                    acc += xs[start + i, j] * W1[j, k]
                pre[i, k] = acc
                h[i, k] = acc if acc > 0.0 else 0.0
            for c in range(C):
                acc = b2[c]
                for k in range(H):
                    acc += h[i, k] * W2[k, c]
                z[i, c] = acc
        _softmax_grad(z, ys[start : start + nb], nb, C)
        for k in range(H):
            for c in range(C):
                acc = 0.0
                for i in range(nb):
                    acc += h[i, k] * z[i, c]
                gW2[k, c] = acc
        for c in range(C):
            acc = 0.0
            for i in range(nb):
                acc += z[i, c]
            gb2[c] = acc
        for i in range(nb):
            for k in range(H):
                if pre[i, k] > 0.0:
                    acc = 0.0
                    for c in range(C):
                        acc += z[i, c] * W2[k, c]
                    dh[i, k] = acc
                else:
                    dh[i, k] = 0.0
        for j in range(d):
            for k in range(H):
                acc = 0.0
                for i in range(nb):
                    acc += xs[start + i, j] * dh[i, k]
                gW1[j, k] = acc
        for k in range(H):
            acc = 0.0
            for i in range(nb):
                acc += dh[i, k]
            gb1[k] = acc
        for p in range(w.shape[0]):
            buf[p] = mom * buf[p] + g[p]
            w[p] -= lr * buf[p]
        steps += 1
    return steps
