"""Compiled kernels for squared-loss gradient boosting.

Trees are grown depth-wise with exact split enumeration.  Each feature is
argsorted once per fit; every level of every tree is then a single pass over
those orderings, with per-node running sums standing in for a re-sort.

A tree is stored as four parallel arrays indexed by node id (root is 0):
``feature`` (-1 marks a leaf), ``threshold``, ``children`` (left child id;
right child is ``children + 1``) and ``value`` (leaf output, unscaled).
"""

from __future__ import annotations

import numpy as np
from numba import njit

# Relative slack a split must clear over the parent's score; keeps
# floating-point noise from splitting nodes whose residuals are constant.
_GAIN_RTOL = 1e-12


@njit(cache=True, nogil=True)
def _grow_tree(x, order, resid, max_depth, min_leaf, feature, threshold, children, value, node_of):
    n, d = x.shape
    max_nodes = feature.shape[0]
    for k in range(max_nodes):
        feature[k] = -1
        threshold[k] = 0.0
        children[k] = -1
        value[k] = 0.0

    # per-node totals for every node ever created
    cnt = np.zeros(max_nodes, dtype=np.int64)
    tot = np.zeros(max_nodes)
    for i in range(n):
        node_of[i] = 0
        cnt[0] += 1
        tot[0] += resid[i]
    n_nodes = 1
    level_start = 0
    level_end = 1

    best_gain = np.empty(max_nodes)
    best_feat = np.empty(max_nodes, dtype=np.int64)
    best_thr = np.empty(max_nodes)
    left_cnt = np.empty(max_nodes, dtype=np.int64)
    left_sum = np.empty(max_nodes)
    last_val = np.empty(max_nodes)

    for depth in range(max_depth):
        any_open = False
        for k in range(level_start, level_end):
            best_feat[k] = -1
            best_gain[k] = tot[k] * tot[k] / cnt[k] if cnt[k] > 0 else 0.0
            best_gain[k] += _GAIN_RTOL * (abs(best_gain[k]) + 1.0)
            if cnt[k] >= 2 * min_leaf:
                any_open = True
        if not any_open:
            break

        for f in range(d):
            for k in range(level_start, level_end):
                left_cnt[k] = 0
                left_sum[k] = 0.0
                last_val[k] = -np.inf
            for r in range(n):
                i = order[r, f]
                k = node_of[i]
                if k < level_start or cnt[k] < 2 * min_leaf:
                    continue
                xv = x[i, f]
                nl = left_cnt[k]
                if nl >= min_leaf and xv > last_val[k]:
                    nr = cnt[k] - nl
                    if nr >= min_leaf:
                        sl = left_sum[k]
                        sr = tot[k] - sl
                        gain = sl * sl / nl + sr * sr / nr
                        if gain > best_gain[k]:
                            best_gain[k] = gain
                            best_feat[k] = f
                            thr = 0.5 * (last_val[k] + xv)
                            if thr >= xv:
                                thr = last_val[k]
                            best_thr[k] = thr
                left_cnt[k] = nl + 1
                left_sum[k] += resid[i]
                last_val[k] = xv

        next_start = n_nodes
        for k in range(level_start, level_end):
            if best_feat[k] >= 0:
                feature[k] = best_feat[k]
                threshold[k] = best_thr[k]
                children[k] = n_nodes
                cnt[n_nodes] = 0
                tot[n_nodes] = 0.0
                cnt[n_nodes + 1] = 0
                tot[n_nodes + 1] = 0.0
                n_nodes += 2
        if n_nodes == next_start:
            break
        for i in range(n):
            k = node_of[i]
            if k >= level_start and feature[k] >= 0:
                c = children[k]
                if x[i, feature[k]] > threshold[k]:
                    c += 1
                node_of[i] = c
                cnt[c] += 1
                tot[c] += resid[i]
        level_start = next_start
        level_end = n_nodes

    for k in range(n_nodes):
        if feature[k] < 0 and cnt[k] > 0:
            value[k] = tot[k] / cnt[k]
    return n_nodes


@njit(cache=True, nogil=True)
def fit_boosted(x, y, eta, nrounds, max_depth, min_leaf, base, feature, threshold, children, value, train_loss):
    """Fill the per-round tree arrays in place; ``train_loss[t]`` is the
    training MSE after ``t`` rounds."""
    n, d = x.shape
    order = np.empty((n, d), dtype=np.int64)
    for f in range(d):
        order[:, f] = np.argsort(x[:, f], kind="mergesort")
    pred = np.full(n, base)
    resid = np.empty(n)
    node_of = np.empty(n, dtype=np.int64)
    for i in range(n):
        resid[i] = y[i] - pred[i]
    loss = 0.0
    for i in range(n):
        loss += resid[i] * resid[i]
    train_loss[0] = loss / n
    for t in range(nrounds):
        _grow_tree(x, order, resid, max_depth, min_leaf,
                   feature[t], threshold[t], children[t], value[t], node_of)
        loss = 0.0
        for i in range(n):
            pred[i] += eta * value[t, node_of[i]]
            resid[i] = y[i] - pred[i]
            loss += resid[i] * resid[i]
        train_loss[t + 1] = loss / n


@njit(cache=True, nogil=True)
def predict_boosted(x, eta, base, feature, threshold, children, value):
    n = x.shape[0]
    out = np.full(n, base)
    for t in range(feature.shape[0]):
        for i in range(n):
            k = 0
            while feature[t, k] >= 0:
                if x[i, feature[t, k]] > threshold[t, k]:
                    k = children[t, k] + 1
                else:
                    k = children[t, k]
            out[i] += eta * value[t, k]
    return out
