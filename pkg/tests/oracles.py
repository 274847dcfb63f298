"""Naive reference implementations the fast code is tested against.

Everything here is written the slow, obvious way (explicit loops, direct
formulas) and shares no code with the package beyond numpy itself.
"""

import math

import numpy as np


def conv2d_ref(x, kernel, bias, padding=0):
    """Direct convolution, [cin, h, w] -> [cout, h', w']."""
    cin, h, w = x.shape
    cout, cin2, k, _ = kernel.shape
    assert cin == cin2
    xp = np.zeros((cin, h + 2 * padding, w + 2 * padding))
    xp[:, padding:padding + h, padding:padding + w] = x
    oh = h + 2 * padding - k + 1
    ow = w + 2 * padding - k + 1
    out = np.zeros((cout, oh, ow))
    for co in range(cout):
        for i in range(oh):
            for j in range(ow):
                acc = bias[co]
                for ci in range(cin):
                    for di in range(k):
                        for dj in range(k):
                            acc += kernel[co, ci, di, dj] * xp[ci, i + di, j + dj]
                out[co, i, j] = acc
    return out


def matmul_ref(a, b):
    n, m = a.shape
    m2, p = b.shape
    assert m == m2
    out = np.zeros((n, p))
    for i in range(n):
        for j in range(p):
            out[i, j] = sum(a[i, k] * b[k, j] for k in range(m))
    return out


def maxpool2_ref(x):
    c, h, w = x.shape
    out = np.zeros((c, h // 2, w // 2))
    for ci in range(c):
        for i in range(h // 2):
            for j in range(w // 2):
                out[ci, i, j] = x[ci, 2 * i:2 * i + 2, 2 * j:2 * j + 2].max()
    return out


def bilinear_ref(x, oh, ow):
    """Half-pixel source coords, clamped at the borders."""
    c, h, w = x.shape
    out = np.zeros((c, oh, ow))
    for ci in range(c):
        for i in range(oh):
            for j in range(ow):
                u = min(max((i + 0.5) * h / oh - 0.5, 0.0), h - 1.0)
                v = min(max((j + 0.5) * w / ow - 0.5, 0.0), w - 1.0)
                i0, j0 = int(math.floor(u)), int(math.floor(v))
                i1, j1 = min(i0 + 1, h - 1), min(j0 + 1, w - 1)
                fu, fv = u - i0, v - j0
                out[ci, i, j] = ((1 - fu) * (1 - fv) * x[ci, i0, j0]
                                 + (1 - fu) * fv * x[ci, i0, j1]
                                 + fu * (1 - fv) * x[ci, i1, j0]
                                 + fu * fv * x[ci, i1, j1])
    return out


def softmax_rows_ref(x):
    out = np.zeros_like(x, dtype=np.float64)
    for i in range(x.shape[0]):
        mx = max(x[i])
        exps = [math.exp(v - mx) for v in x[i]]
        s = sum(exps)
        out[i] = [e / s for e in exps]
    return out


def normalize_adjacency_ref(adj):
    n = adj.shape[0]
    biased = adj + np.eye(n)
    return softmax_rows_ref(biased)


def gcn_ref(h, a_hat, weight):
    n, d = h.shape
    mixed = matmul_ref(a_hat, h)
    out = matmul_ref(mixed, weight)
    for i in range(n):
        for j in range(d):
            if out[i, j] < 0:
                out[i, j] = 0.0
    return out


def cross_entropy_ref(logits, ids, mode="mean"):
    """Per-cell softmax cross entropy on [C, h, w] logits."""
    c, h, w = logits.shape
    total = 0.0
    for i in range(h):
        for j in range(w):
            col = logits[:, i, j]
            mx = max(col)
            lse = mx + math.log(sum(math.exp(v - mx) for v in col))
            total += lse - col[int(ids[i, j])]
    return total / (h * w) if mode == "mean" else total


def count_map_ref(points, h, w, r):
    """Window enumeration on the padded, stride-extended location grid."""
    s = max(1, r // 2)
    he = math.ceil(h / s) * s
    we = math.ceil(w / s) * s
    loc = np.zeros((he, we))
    for x, y in points:
        col = min(max(int(math.floor(x + 0.5)), 0), we - 1)
        row = min(max(int(math.floor(y + 0.5)), 0), he - 1)
        loc[row, col] += 1.0
    if r == 1:
        return loc.copy(), 1
    if r > he and r > we:
        return np.array([[loc.sum()]]), 1
    padded = np.zeros((he + 2 * s, we + 2 * s))
    padded[s:s + he, s:s + we] = loc
    rows = (he + 2 * s - r) // s + 1
    cols = (we + 2 * s - r) // s + 1
    out = np.zeros((rows, cols))
    for i in range(rows):
        for j in range(cols):
            out[i, j] = padded[i * s:i * s + r, j * s:j * s + r].sum()
    return out, 2
