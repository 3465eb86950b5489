"""Compiled kernels for tree growth, honest leaf assignment and prediction.

Split search is histogram-based: features are pre-binned once per training
set, each node pass accumulates per-bin arm counts, pseudo-outcome sums and
raw-value extrema, and candidate cuts sit between adjacent non-empty bins.
Reported thresholds are midpoints of the adjacent observed values inside the
node, so whenever a feature has no more distinct values than bins the search
is exhaustive over all adjacent-midpoint thresholds.

All accumulation is sequential and in canonical (ascending-row, ascending-bin)
order so results are independent of thread count and reproducible bit for bit.
"""

import numpy as np
from numba import njit, uint64

_GOLDEN = uint64(0x9E3779B97F4A7C15)
_MIX1 = uint64(0xBF58476D1CE4E5B9)
_MIX2 = uint64(0x94D049BB133111EB)


@njit(uint64(uint64), cache=True, nogil=True, inline="always")
def _mix64(z):
    z = (z ^ (z >> uint64(30))) * _MIX1
    z = (z ^ (z >> uint64(27))) * _MIX2
    return z ^ (z >> uint64(31))


@njit(cache=True, nogil=True, inline="always")
def _next_rand(state):
    state = state + _GOLDEN
    return state, _mix64(state)


@njit(cache=True, nogil=True)
def grow_tree(xb, xv, y, w, rows, min_leaf, max_depth, mtry, nbins_f, seed):
    """Grow one tree's split structure from the splitting-half rows.

    nbins_f holds each feature's bin count so scans stop early on
    low-cardinality features. Returns (feature, threshold, left, right,
    n_nodes); feature[k] == -1 marks a leaf. max_depth < 0 means unlimited.
    """
    n = rows.size
    m = xb.shape[1]
    n_bins = 0
    for f in range(m):
        if nbins_f[f] > n_bins:
            n_bins = nbins_f[f]
    max_nodes = 2 * n + 1
    feat = np.full(max_nodes, -1, np.int32)
    thr = np.zeros(max_nodes, np.float64)
    left = np.full(max_nodes, -1, np.int32)
    right = np.full(max_nodes, -1, np.int32)
    if n == 0:
        return feat[:1], thr[:1], left[:1], right[:1], 1

    order = rows.copy()
    buf = np.empty(n, np.int64)
    rho = np.empty(n, np.float64)
    stack_node = np.empty(max_nodes, np.int32)
    stack_lo = np.empty(max_nodes, np.int64)
    stack_hi = np.empty(max_nodes, np.int64)
    stack_depth = np.empty(max_nodes, np.int64)
    pool = np.empty(m, np.int64)
    cnt1 = np.empty(n_bins, np.int64)
    cnt0 = np.empty(n_bins, np.int64)
    srho = np.empty(n_bins, np.float64)
    bmin = np.empty(n_bins, np.float64)
    bmax = np.empty(n_bins, np.float64)

    state = uint64(seed)
    n_nodes = 1
    sp = 0
    stack_node[sp] = 0
    stack_lo[sp] = 0
    stack_hi[sp] = n
    stack_depth[sp] = 0
    sp = 1
    while sp > 0:
        sp -= 1
        node = stack_node[sp]
        lo = stack_lo[sp]
        hi = stack_hi[sp]
        depth = stack_depth[sp]
        nn = hi - lo

        n1 = 0
        for i in range(lo, hi):
            if w[order[i]] == 1:
                n1 += 1
        n0 = nn - n1
        if n1 < 2 * min_leaf or n0 < 2 * min_leaf:
            continue
        if max_depth >= 0 and depth >= max_depth:
            continue

        sy = 0.0
        for i in range(lo, hi):
            sy += y[order[i]]
        wbar = n1 / nn
        ybar = sy / nn
        num = 0.0
        den = 0.0
        for i in range(lo, hi):
            r = order[i]
            dw = (1.0 if w[r] == 1 else 0.0) - wbar
            num += dw * (y[r] - ybar)
            den += dw * dw
        if den <= 0.0:
            continue
        tau = num / den
        a = den / nn
        for i in range(lo, hi):
            r = order[i]
            dw = (1.0 if w[r] == 1 else 0.0) - wbar
            rho[i] = dw * (y[r] - ybar - tau * dw) / a

        # draw the candidate features, then scan them in ascending index order
        for f in range(m):
            pool[f] = f
        k = mtry if mtry < m else m
        for i in range(k):
            state, z = _next_rand(state)
            j = i + int(z % uint64(m - i))
            tmp = pool[i]
            pool[i] = pool[j]
            pool[j] = tmp
        for i in range(1, k):
            v = pool[i]
            j = i - 1
            while j >= 0 and pool[j] > v:
                pool[j + 1] = pool[j]
                j -= 1
            pool[j + 1] = v

        best_crit = -np.inf
        best_f = -1
        best_thr = 0.0
        best_cut = -1
        for ci in range(k):
            f = pool[ci]
            fb = nbins_f[f]
            for b in range(fb):
                cnt1[b] = 0
                cnt0[b] = 0
                srho[b] = 0.0
                bmin[b] = np.inf
                bmax[b] = -np.inf
            for i in range(lo, hi):
                r = order[i]
                b = xb[r, f]
                if w[r] == 1:
                    cnt1[b] += 1
                else:
                    cnt0[b] += 1
                srho[b] += rho[i]
                v = xv[r, f]
                if v < bmin[b]:
                    bmin[b] = v
                if v > bmax[b]:
                    bmax[b] = v
            total = 0.0
            for b in range(fb):
                total += srho[b]

            c1 = 0
            c0 = 0
            s = 0.0
            prev_bin = -1
            for b in range(fb):
                nb = cnt1[b] + cnt0[b]
                if nb == 0:
                    continue
                if prev_bin >= 0:
                    n1l = c1
                    n0l = c0
                    n1r = n1 - c1
                    n0r = n0 - c0
                    if (
                        n1l >= min_leaf
                        and n0l >= min_leaf
                        and n1r >= min_leaf
                        and n0r >= min_leaf
                    ):
                        nl = n1l + n0l
                        nr = n1r + n0r
                        sr = total - s
                        crit = s * s / nl + sr * sr / nr
                        if crit > best_crit:
                            best_crit = crit
                            best_f = f
                            best_thr = 0.5 * (bmax[prev_bin] + bmin[b])
                            best_cut = prev_bin
                c1 += cnt1[b]
                c0 += cnt0[b]
                s += srho[b]
                prev_bin = b

        if best_f < 0:
            continue

        p = lo
        for i in range(lo, hi):
            if xb[order[i], best_f] <= best_cut:
                buf[p] = order[i]
                p += 1
        mid = p
        for i in range(lo, hi):
            if xb[order[i], best_f] > best_cut:
                buf[p] = order[i]
                p += 1
        for i in range(lo, hi):
            order[i] = buf[i]

        lid = n_nodes
        rid = n_nodes + 1
        n_nodes += 2
        feat[node] = best_f
        thr[node] = best_thr
        left[node] = lid
        right[node] = rid
        stack_node[sp] = rid
        stack_lo[sp] = mid
        stack_hi[sp] = hi
        stack_depth[sp] = depth + 1
        sp += 1
        stack_node[sp] = lid
        stack_lo[sp] = lo
        stack_hi[sp] = mid
        stack_depth[sp] = depth + 1
        sp += 1

    return feat[:n_nodes], thr[:n_nodes], left[:n_nodes], right[:n_nodes], n_nodes


@njit(cache=True, nogil=True)
def assign_honest(feat, thr, left, right, xv, honest_rows):
    """Route honest rows, collapse splits with an empty honest side, re-route.

    Mutates `feat` in place (collapsed nodes become leaves) and returns the
    leaf id of each honest row.
    """
    n_nodes = feat.size
    counts = np.zeros(n_nodes, np.int64)
    for idx in range(honest_rows.size):
        r = honest_rows[idx]
        node = 0
        counts[0] += 1
        while feat[node] >= 0:
            if xv[r, feat[node]] <= thr[node]:
                node = left[node]
            else:
                node = right[node]
            counts[node] += 1
    for k in range(n_nodes):
        if feat[k] >= 0 and (counts[left[k]] == 0 or counts[right[k]] == 0):
            feat[k] = -1
    leaf_of = np.empty(honest_rows.size, np.int32)
    for idx in range(honest_rows.size):
        r = honest_rows[idx]
        node = 0
        while feat[node] >= 0:
            if xv[r, feat[node]] <= thr[node]:
                node = left[node]
            else:
                node = right[node]
        leaf_of[idx] = node
    return leaf_of


@njit(cache=True, nogil=True)
def predict_batch(
    feat, thr, left, right, roots, leaf_ptr, leaf_rows, y, w, queries, n_train
):
    """Forest-weighted growth-rate estimates for a batch of query points.

    Per query, each tree contributes uniform weight over the honest rows of
    the leaf the query lands in; weights are averaged over the trees that
    have any honest support there and plugged into the weighted slope
    estimating equation. Returns (r_hat, n_effective, status) with status 0 ok,
    1 no support, 2 single-arm support.
    """
    nq = queries.shape[0]
    r_hat = np.full(nq, np.nan)
    n_eff = np.zeros(nq, np.float64)
    status = np.zeros(nq, np.int8)
    alpha = np.zeros(n_train, np.float64)
    touched = np.empty(n_train, np.int64)
    n_trees = roots.size

    for qi in range(nq):
        nt = 0
        support_trees = 0
        for b in range(n_trees):
            node = roots[b]
            while feat[node] >= 0:
                if queries[qi, feat[node]] <= thr[node]:
                    node = left[node]
                else:
                    node = right[node]
            ls = leaf_ptr[node]
            le = leaf_ptr[node + 1]
            if le > ls:
                support_trees += 1
                inv = 1.0 / (le - ls)
                for k in range(ls, le):
                    r = leaf_rows[k]
                    if alpha[r] == 0.0:
                        touched[nt] = r
                        nt += 1
                    alpha[r] += inv
        if support_trees == 0:
            status[qi] = 1
            continue

        asum = 0.0
        swa = 0.0
        sya = 0.0
        for i in range(nt):
            r = touched[i]
            a = alpha[r] / support_trees
            alpha[r] = a
            asum += a
            if w[r] == 1:
                swa += a
            sya += a * y[r]
        wbar = swa / asum
        ybar = sya / asum
        num = 0.0
        den = 0.0
        for i in range(nt):
            r = touched[i]
            dw = (1.0 if w[r] == 1 else 0.0) - wbar
            num += alpha[r] * dw * (y[r] - ybar)
            den += alpha[r] * dw * dw
        if den <= 0.0:
            status[qi] = 2
        else:
            r_hat[qi] = num / den
            n_eff[qi] = nt
        for i in range(nt):
            alpha[touched[i]] = 0.0

    return r_hat, n_eff, status


@njit(cache=True, nogil=True)
def query_weights(feat, thr, left, right, roots, leaf_ptr, leaf_rows, query, n_train):
    """Normalized forest weights alpha_i(query) over training rows."""
    alpha = np.zeros(n_train, np.float64)
    support_trees = 0
    for b in range(roots.size):
        node = roots[b]
        while feat[node] >= 0:
            if query[feat[node]] <= thr[node]:
                node = left[node]
            else:
                node = right[node]
        ls = leaf_ptr[node]
        le = leaf_ptr[node + 1]
        if le > ls:
            support_trees += 1
            inv = 1.0 / (le - ls)
            for k in range(ls, le):
                alpha[leaf_rows[k]] += inv
    if support_trees > 0:
        alpha /= support_trees
    return alpha, support_trees
