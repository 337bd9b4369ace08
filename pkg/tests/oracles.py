"""Independent brute-force oracles used by the test suite.

Every function here recomputes a quantity with naive loops or a closed form,
never by calling the implementation it checks.
"""

import numpy as np


def matmul_loops(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    r, k = a.shape
    k2, c = b.shape
    assert k == k2
    out = np.zeros((r, c))
    for i in range(r):
        for j in range(c):
            acc = 0.0
            for t in range(k):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


def conv2d_loops(x, w, bias=None, stride=1, padding=0, depthwise=False):
    """Naive convolution, one scalar multiply-add at a time.

    Inner accumulation runs over (kh, kw, c_in) for each output element.
    """
    squeeze = x.ndim == 3
    if squeeze:
        x = x[None]
    b_n, c_in, h, wdt = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    if depthwise:
        c_out, kh, kw = w.shape[0], w.shape[1], w.shape[2]
    else:
        c_out, kh, kw = w.shape[0], w.shape[2], w.shape[3]
    h_out = (h + 2 * padding - kh) // stride + 1
    w_out = (wdt + 2 * padding - kw) // stride + 1
    out = np.zeros((b_n, c_out, h_out, w_out))
    for b in range(b_n):
        for co in range(c_out):
            for oh in range(h_out):
                for ow in range(w_out):
                    acc = 0.0
                    for i in range(kh):
                        for j in range(kw):
                            if depthwise:
                                acc += xp[b, co, oh * stride + i, ow * stride + j] * w[co, i, j]
                            else:
                                for ci in range(c_in):
                                    acc += xp[b, ci, oh * stride + i, ow * stride + j] * w[co, ci, i, j]
                    if bias is not None:
                        acc += bias[co]
                    out[b, co, oh, ow] = acc
    return out[0] if squeeze else out


def softmax_closed_form(x: np.ndarray, axis=-1) -> np.ndarray:
    e = np.exp(x)
    return e / e.sum(axis=axis, keepdims=True)


def attention_loops(tokens_q, tokens_kv, wq, wk, wv, d_k):
    """Step-by-step scaled dot-product attention with explicit loops.

    tokens_q: (Tq, D), tokens_kv: (Tk, D). Returns (Tq, D_v) output and the
    (Tq, Tk) attention weight matrix.
    """
    q = tokens_q @ wq
    k = tokens_kv @ wk
    v = tokens_kv @ wv
    tq, tk = q.shape[0], k.shape[0]
    scores = np.zeros((tq, tk))
    for i in range(tq):
        for j in range(tk):
            scores[i, j] = float(np.dot(q[i], k[j])) / np.sqrt(d_k)
    weights = np.zeros_like(scores)
    for i in range(tq):
        row = scores[i] - scores[i].max()
        e = np.exp(row)
        weights[i] = e / e.sum()
    out = np.zeros((tq, v.shape[1]))
    for i in range(tq):
        for j in range(tk):
            out[i] += weights[i, j] * v[j]
    return out, weights


def finite_difference_grads(f, arrays, h=1e-5):
    """Central finite differences of scalar-valued f w.r.t. each array."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f()
            flat[i] = orig - h
            fm = f()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    num = np.abs(a - b)
    den = np.maximum(np.abs(a) + np.abs(b), 1e-10)
    return float((num / den).max())


def pairwise_auroc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Exhaustive O(n^2) pair counting AUROC with half-credit ties."""
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                wins += 1.0
            elif p == n:
                wins += 0.5
    return wins / (len(pos) * len(neg))


def dice_counts(pred_mask: np.ndarray, true_mask: np.ndarray) -> float:
    inter = 0
    p_n = 0
    t_n = 0
    for pv, tv in zip(pred_mask.reshape(-1), true_mask.reshape(-1)):
        if pv and tv:
            inter += 1
        if pv:
            p_n += 1
        if tv:
            t_n += 1
    if p_n == 0 and t_n == 0:
        return 1.0
    return 2.0 * inter / (p_n + t_n)
