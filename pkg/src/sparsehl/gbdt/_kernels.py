"""numba kernels for histogram construction, split search and tree routing.

Bin 0 of every feature holds missing values; value bins are 1..n_bins[f].
"""
import numpy as np
from numba import njit

N_SLOTS = 256


@njit(cache=True)
def build_histogram(bins, grad, hess, idx, features):
    """Per-bin sums of gradient, hessian and sample count over ``idx``."""
    hist = np.zeros((bins.shape[0], N_SLOTS, 3))
    n = idx.shape[0]
    g = np.empty(n)
    h = np.empty(n)
    for k in range(n):
        g[k] = grad[idx[k]]
        h[k] = hess[idx[k]]
    for f in features:
        col = bins[f]
        hf = hist[f]
        for k in range(n):
            b = col[idx[k]]
            hf[b, 0] += g[k]
            hf[b, 1] += h[k]
            hf[b, 2] += 1.0
    return hist


@njit(cache=True)
def _threshold_l1(g, l1):
    if g > l1:
        return g - l1
    if g < -l1:
        return g + l1
    return 0.0


@njit(cache=True)
def leaf_score(g, h, l1, l2):
    t = _threshold_l1(g, l1)
    denom = h + l2
    if denom <= 0.0:
        return 0.0
    return t * t / denom


@njit(cache=True)
def leaf_value(g, h, l1, l2):
    denom = h + l2
    if denom <= 0.0:
        return 0.0
    return -_threshold_l1(g, l1) / denom


@njit(cache=True)
def best_split(hist, n_bins, features, G, H, N, l1, l2, min_child_samples, min_child_weight):
    """Return (gain, feature, bin, missing_left) of the best split, gain -inf if none."""
    parent = leaf_score(G, H, l1, l2)
    best_gain = -np.inf
    best_f = -1
    best_b = -1
    best_ml = False
    for f in features:
        nb = n_bins[f]
        mg = hist[f, 0, 0]
        mh = hist[f, 0, 1]
        mn = hist[f, 0, 2]
        gl = 0.0
        hl = 0.0
        nl = 0.0
        for t in range(1, nb + 1):
            gl += hist[f, t, 0]
            hl += hist[f, t, 1]
            nl += hist[f, t, 2]
            for side in range(2):
                ml = side == 1
                if t == nb and (ml or mn == 0.0):
                    continue
                GL = gl + mg if ml else gl
                HL = hl + mh if ml else hl
                NL = nl + mn if ml else nl
                GR = G - GL
                HR = H - HL
                NR = N - NL
                if NL < min_child_samples or NR < min_child_samples:
                    continue
                if HL < min_child_weight or HR < min_child_weight:
                    continue
                gain = leaf_score(GL, HL, l1, l2) + leaf_score(GR, HR, l1, l2) - parent
                if gain > best_gain:
                    best_gain = gain
                    best_f = f
                    best_b = t
                    best_ml = ml
    return best_gain, best_f, best_b, best_ml


@njit(cache=True)
def go_left_mask(col, idx, split_bin, missing_left):
    out = np.empty(idx.shape[0], dtype=np.bool_)
    for k in range(idx.shape[0]):
        b = col[idx[k]]
        if b == 0:
            out[k] = missing_left
        else:
            out[k] = b <= split_bin
    return out


@njit(cache=True)
def route(bins, feature, split_bin, missing_left, left, right, out_leaf):
    """Leaf index for every column of ``bins``; children < 0 encode ``~leaf``."""
    n = bins.shape[1]
    if feature.shape[0] == 0:
        out_leaf[:] = 0
        return
    for i in range(n):
        node = 0
        while node >= 0:
            b = bins[feature[node], i]
            if b == 0:
                gl = missing_left[node]
            else:
                gl = b <= split_bin[node]
            node = left[node] if gl else right[node]
        out_leaf[i] = ~node
