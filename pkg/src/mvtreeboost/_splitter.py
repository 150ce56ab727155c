"""Compiled kernels for tree growing, routing and the multivariate boosting step.

Predictor data is passed transposed (``XT``, shape p x n) and targets as
``YT`` (T x n). A node owns the segment ``[a, b)`` of every row of the
workspace ``idx`` (p x m): row j of the segment lists the node's rows with a
valid value of predictor j in ascending order, followed by the rows missing
it. ``cnt[j]`` is the number of valid entries.

Split search keeps, per leaf, the running maximum gain and the list of
"records" (candidates strictly better than everything scanned before them)
that lie within ``TIE_RTOL`` of it. The lexicographically first candidate
reaching any floor at or above that band is always in the list, which makes
the near-tie rule exact in a single pass.
"""
import numpy as np
from numba import njit

INVALID = -1.0
TIE_RTOL = 1e-9
MIN_GAIN_RTOL = 1e-12
NREC = 64


def presort(XT):
    """Per-predictor stable ascending order, missing values last."""
    order = np.argsort(XT, axis=1, kind="stable").astype(np.int64)
    n_valid = (~np.isnan(XT)).sum(axis=1).astype(np.int64)
    return np.ascontiguousarray(order), n_valid


@njit(cache=True, nogil=True)
def node_sorted(order, n_valid, member, m):
    """Root workspace for the rows flagged in ``member`` (``m`` of them)."""
    p, n = order.shape
    idx = np.empty((p, m + 1), np.int64)
    cnt = np.zeros(p, np.int64)
    for j in range(p):
        c = 0
        nv = n_valid[j]
        for i in range(nv):
            r = order[j, i]
            idx[j, c] = r
            c += member[r]
        cnt[j] = c
        for i in range(nv, n):
            r = order[j, i]
            idx[j, c] = r
            c += member[r]
    return idx, cnt


@njit(cache=True, nogil=True)
def _record(B, rg, rj, ri, nr, s, g, j, i):
    B[s] = g
    lim = g - TIE_RTOL * g
    k = nr[s]
    d = 0
    while d < k and rg[s, d] < lim:
        d += 1
    if k - d == NREC:
        d += 1
    if d > 0:
        for e in range(d, k):
            rg[s, e - d] = rg[s, e]
            rj[s, e - d] = rj[s, e]
            ri[s, e - d] = ri[s, e]
        k -= d
    rg[s, k] = g
    rj[s, k] = j
    ri[s, k] = i
    nr[s] = k + 1


_FM = {"nnan", "ninf", "nsz"}


@njit(cache=True, nogil=True, fastmath=_FM)
def _max_gain(P, w, mu, c):
    mx = 0.0
    for i in range(1, c):
        d = P[i] - i * mu
        g = d * d * w[i]
        if g > mx:
            mx = g
    return mx


@njit(cache=True, nogil=True, fastmath=_FM)
def _max_joint(acc, w, c):
    mx = 0.0
    for i in range(1, c):
        g = acc[i] * w[i]
        if g > mx:
            mx = g
    return mx


@njit(cache=True, nogil=True)
def scan(XT, YT, idx, a, cnt, min_node, joint, B, rg, rj, ri, nr):
    """Evaluate every admissible split of the node at segment offset ``a``.

    The gain of a split is the SSE reduction over rows valid on the split
    predictor. With ``joint`` it is summed over the targets into slot 0;
    otherwise every target has its own slot. Record position i means the
    first i + 1 sorted valid rows go left. Children below ``min_node`` valid
    rows and cuts whose midpoint is not strictly between the two values
    (ties, or adjacent doubles) are inadmissible. Only positive gains are
    recorded; ``B`` stays 0 when there are none.
    """
    p = idx.shape[0]
    T = YT.shape[0]
    for s in range(B.shape[0]):
        B[s] = 0.0
        nr[s] = 0
    size = idx.shape[1]
    wb = np.empty(size)
    w = np.empty(size)
    P = np.empty(size + 1)
    acc = np.empty(size)
    lo = max(min_node, 1)
    lastc = -1
    for j in range(p):
        c = cnt[j]
        if c < 2 * lo:
            continue
        if c != lastc:
            for i in range(1, c):
                wb[i] = c / (i * (c - i)) if (i >= lo and c - i >= lo) else 0.0
            lastc = c
        row = idx[j, a:a + c]
        xr = XT[j]
        prev = xr[row[0]]
        any_ok = False
        for i in range(1, c):
            x = xr[row[i]]
            h = 0.5 * (prev + x)
            if prev < h and h < x and wb[i] > 0.0:
                w[i] = wb[i]
                any_ok = True
            else:
                w[i] = 0.0
            prev = x
        if not any_ok:
            continue
        if joint:
            for i in range(1, c):
                acc[i] = 0.0
        for t in range(T):
            yr = YT[t]
            tot = 0.0
            P[0] = 0.0
            for i in range(c):
                tot += yr[row[i]]
                P[i + 1] = tot
            mu = tot / c
            if joint:
                for i in range(1, c):
                    d = P[i] - i * mu
                    acc[i] += d * d
            elif _max_gain(P, w, mu, c) > B[t]:
                bt = B[t]
                for i in range(1, c):
                    d = P[i] - i * mu
                    g = d * d * w[i]
                    if g > bt:
                        bt = g
                        _record(B, rg, rj, ri, nr, t, g, j, i - 1)
        if joint and _max_joint(acc, w, c) > B[0]:
            bt = B[0]
            for i in range(1, c):
                g = acc[i] * w[i]
                if g > bt:
                    bt = g
                    _record(B, rg, rj, ri, nr, 0, g, j, i - 1)


@njit(cache=True, nogil=True)
def _surrogates(XT, idx, a, cnt, pj, st, n_sur, out_f, out_t, out_r):
    """Rank surrogate splits for primary predictor ``pj``.

    ``st[r]`` is 1/0 for rows going left/right on the primary split and -1
    for rows missing it. Agreement is counted over rows valid on both
    predictors and must beat the majority direction. Returns how many were
    kept; ranking is by agreement rate, then predictor index.
    """
    p = idx.shape[0]
    rate = np.full(p, -1.0)
    thr = np.zeros(p)
    rev = np.zeros(p, np.bool_)
    for k in range(p):
        if k == pj:
            continue
        m = 0
        nl = 0
        for i in range(cnt[k]):
            s = st[idx[k, a + i]]
            if s >= 0:
                m += 1
                nl += s
        if m < 2:
            continue
        nr = m - nl
        base = max(nl, nr)
        best = -1
        bthr = 0.0
        brev = False
        seen = 0
        cl = 0
        prev = 0.0
        for i in range(cnt[k]):
            r = idx[k, a + i]
            s = st[r]
            if s < 0:
                continue
            x = XT[k, r]
            h = 0.5 * (prev + x)
            if seen > 0 and prev < h and h < x:
                cr = seen - cl
                same = cl + (nr - cr)
                opp = m - same
                if same > best:
                    best = same
                    bthr = h
                    brev = False
                if opp > best:
                    best = opp
                    bthr = h
                    brev = True
            seen += 1
            cl += s
            prev = x
        if best > base:
            rate[k] = best / m
            thr[k] = bthr
            rev[k] = brev
    kept = 0
    for s in range(n_sur):
        bk = -1
        for k in range(p):
            if rate[k] >= 0.0 and (bk < 0 or rate[k] > rate[bk]):
                bk = k
        if bk < 0:
            break
        out_f[s] = bk
        out_t[s] = thr[bk]
        out_r[s] = rev[bk]
        rate[bk] = -1.0
        kept += 1
    return kept


@njit(cache=True, nogil=True)
def _rows_stats(YT, rows, k, mean):
    """Target means and SSE of the first ``k`` entries of ``rows``."""
    T = YT.shape[0]
    sse = 0.0
    for t in range(T):
        yr = YT[t]
        mu = 0.0
        for i in range(k):
            mu += yr[rows[i]]
        mu = mu / k if k > 0 else 0.0
        mean[t] = mu
        for i in range(k):
            d = yr[rows[i]] - mu
            sse += d * d
    return sse


@njit(cache=True, nogil=True)
def _split_rows(rows, st, out_l, out_r):
    """Stable branchless split of ``rows`` by ``st`` (1 = left)."""
    x = 0
    y = 0
    for i in range(rows.shape[0]):
        r = rows[i]
        sv = st[r]
        out_l[x] = r
        out_r[y] = r
        x += sv
        y += 1 - sv
    return x, y


@njit(cache=True, nogil=True)
def grow(XT, YT, idx, cnt0, depth, min_node, min_gain, n_sur, pre_B, pre_rg, pre_rj, pre_ri,
         pre_nr, pre_slot):
    """Grow one best-first tree on the root segment of ``idx`` (modified).

    Up to ``depth`` splits are made; each is the candidate with the largest
    joint gain over all leaves, near-ties (within ``TIE_RTOL``) going to the
    lowest predictor, then lowest threshold, then lowest node id. A split
    needs gain above ``max(min_gain, MIN_GAIN_RTOL * root SSE)``. If
    ``pre_slot >= 0`` the root's scan is taken from that slot of the
    ``pre_*`` arrays instead of being recomputed.
    """
    p = idx.shape[0]
    T = YT.shape[0]
    m = idx.shape[1] - 1
    n = XT.shape[1]
    N = 2 * depth + 1
    S = max(n_sur, 1)
    L = depth + 1
    lo = max(min_node, 1)

    feature = np.full(N, -1, np.int64)
    threshold = np.zeros(N)
    left = np.full(N, -1, np.int64)
    right = np.full(N, -1, np.int64)
    dleft = np.zeros(N, np.bool_)
    sfeat = np.zeros((N, S), np.int64)
    sthr = np.zeros((N, S))
    srev = np.zeros((N, S), np.bool_)
    nsur = np.zeros(N, np.int64)
    value = np.zeros((N, T))
    nsamp = np.zeros(N, np.int64)
    improv = np.zeros(N)
    order = np.full(depth, -1, np.int64)
    node_a = np.zeros(N, np.int64)
    node_b = np.zeros(N, np.int64)
    node_sse = np.zeros(N)

    lnode = np.full(L, -1, np.int64)
    lcnt = np.zeros((L, p), np.int64)
    lB = np.full(L, INVALID)
    lrg = np.zeros((L, NREC))
    lrj = np.zeros((L, NREC), np.int64)
    lri = np.zeros((L, NREC), np.int64)
    lnr = np.zeros(L, np.int64)

    st = np.zeros(n, np.int8)
    buf = np.empty(m + 1, np.int64)
    bufl = np.empty(m + 1, np.int64)
    bufr = np.empty(m + 1, np.int64)
    mean = np.empty(T)

    sse0 = _rows_stats(YT, idx[0], m, mean)
    value[0] = mean
    nsamp[0] = m
    node_sse[0] = sse0
    node_b[0] = m
    floor_gain = max(min_gain, MIN_GAIN_RTOL * sse0)

    lnode[0] = 0
    lcnt[0] = cnt0
    if pre_slot >= 0:
        lB[0] = pre_B[pre_slot]
        lnr[0] = pre_nr[pre_slot]
        for k in range(pre_nr[pre_slot]):
            lrg[0, k] = pre_rg[pre_slot, k]
            lrj[0, k] = pre_rj[pre_slot, k]
            lri[0, k] = pre_ri[pre_slot, k]
    elif m >= 2 * lo:
        scan(XT, YT, idx, 0, cnt0, min_node, True, lB[0:1], lrg[0:1], lrj[0:1], lri[0:1],
             lnr[0:1])
    n_leaves = 1
    n_nodes = 1
    n_split = 0

    for s in range(depth):
        G = INVALID
        for li in range(n_leaves):
            if lB[li] > G:
                G = lB[li]
        if not (G > floor_gain and G > 0.0):
            break
        F = G - TIE_RTOL * G
        bl = -1
        bj = -1
        bi = -1
        bthr = 0.0
        for li in range(n_leaves):
            if lB[li] < F:
                continue
            k = 0
            while lrg[li, k] < F:
                k += 1
            j = lrj[li, k]
            i = lri[li, k]
            a = node_a[lnode[li]]
            thr = 0.5 * (XT[j, idx[j, a + i]] + XT[j, idx[j, a + i + 1]])
            if bl < 0 or j < bj or (j == bj and (thr < bthr or (thr == bthr and lnode[li] < lnode[bl]))):
                bl, bj, bi, bthr = li, j, i, thr
        node = lnode[bl]
        a = node_a[node]
        b = node_b[node]
        c = lcnt[bl, bj]
        dl = bi + 1 >= c - (bi + 1)

        for q in range(a, a + c):
            st[idx[bj, q]] = 1 if q - a <= bi else 0
        for q in range(a + c, b):
            st[idx[bj, q]] = -1
        ns = 0
        if n_sur > 0:
            ns = _surrogates(XT, idx, a, lcnt[bl], bj, st, n_sur, sfeat[node], sthr[node],
                             srev[node])
        for q in range(a + c, b):
            r = idx[bj, q]
            gl = dl
            for e in range(ns):
                u = XT[sfeat[node, e], r]
                if not np.isnan(u):
                    gl = (u < sthr[node, e]) != srev[node, e]
                    break
            st[r] = 1 if gl else 0

        feature[node] = bj
        threshold[node] = bthr
        dleft[node] = dl
        nsur[node] = ns
        order[n_split] = node
        n_split += 1

        idl = n_nodes
        idr = n_nodes + 1
        n_nodes += 2
        left[node] = idl
        right[node] = idr
        nl, nr_ = _split_rows(idx[0, a:b], st, bufl, bufr)
        ssel = _rows_stats(YT, bufl, nl, mean)
        value[idl] = mean
        sser = _rows_stats(YT, bufr, nr_, mean)
        value[idr] = mean
        nsamp[idl] = nl
        nsamp[idr] = nr_
        node_sse[idl] = ssel
        node_sse[idr] = sser
        improv[node] = max(node_sse[node] - ssel - sser, 0.0)
        node_a[idl] = a
        node_b[idl] = a + nl
        node_a[idr] = a + nl
        node_b[idr] = b

        # the split leaf's slot is reused for the left child
        lnode[bl] = idl
        lnode[n_leaves] = idr
        lB[bl] = INVALID
        lB[n_leaves] = INVALID
        lnr[bl] = 0
        lnr[n_leaves] = 0
        rl = n_leaves
        n_leaves += 1
        if s + 1 < depth:
            for jj in range(p):
                cv = lcnt[bl, jj]
                x0 = a
                y0 = 0
                for q in range(a, a + cv):
                    r = idx[jj, q]
                    sv = st[r]
                    idx[jj, x0] = r
                    buf[y0] = r
                    x0 += sv
                    y0 += 1 - sv
                lcnt[bl, jj] = x0 - a
                lcnt[rl, jj] = y0
                for q in range(a + cv, b):
                    r = idx[jj, q]
                    sv = st[r]
                    idx[jj, x0] = r
                    buf[y0] = r
                    x0 += sv
                    y0 += 1 - sv
                for q in range(y0):
                    idx[jj, x0 + q] = buf[q]
            for li in (bl, rl):
                nd = lnode[li]
                if node_b[nd] - node_a[nd] >= 2 * lo:
                    scan(XT, YT, idx, node_a[nd], lcnt[li], min_node, True, lB[li:li + 1],
                         lrg[li:li + 1], lrj[li:li + 1], lri[li:li + 1], lnr[li:li + 1])

    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), dleft[:n_nodes].copy(), sfeat[:n_nodes].copy(),
            sthr[:n_nodes].copy(), srev[:n_nodes].copy(), nsur[:n_nodes].copy(),
            value[:n_nodes].copy(), nsamp[:n_nodes].copy(), improv[:n_nodes].copy(),
            order[:n_split].copy())


@njit(cache=True, nogil=True)
def apply_tree(XT, feature, threshold, left, right, default_left, sfeat, sthr, srev, nsur):
    """Leaf id reached by every column of ``XT``.

    Missing split values fall back to the node's surrogates in order, then
    to the node's majority direction.
    """
    n = XT.shape[1]
    out = np.empty(n, np.int64)
    for r in range(n):
        node = 0
        while feature[node] >= 0:
            v = XT[feature[node], r]
            if not np.isnan(v):
                gl = v < threshold[node]
            else:
                gl = default_left[node]
                for s in range(nsur[node]):
                    u = XT[sfeat[node, s], r]
                    if not np.isnan(u):
                        gl = (u < sthr[node, s]) != srev[node, s]
                        break
            node = left[node] if gl else right[node]
        out[r] = node
    return out


@njit(cache=True, nogil=True)
def _center(x, out):
    n = x.shape[0]
    mu = 0.0
    for i in range(n):
        mu += x[i]
    mu /= n
    for i in range(n):
        out[i] = x[i] - mu


@njit(cache=True, nogil=True)
def _dot(a, b):
    s = 0.0
    for i in range(a.shape[0]):
        s += a[i] * b[i]
    return s


@njit(cache=True, nogil=True)
def covariance(RT):
    """Sample covariance (n - 1 denominator) of the rows of ``RT``."""
    Q, n = RT.shape
    Z = np.empty((Q, n))
    for q in range(Q):
        _center(RT[q], Z[q])
    C = np.empty((Q, Q))
    for q in range(Q):
        for r in range(q, Q):
            C[q, r] = _dot(Z[q], Z[r]) / (n - 1)
            C[r, q] = C[q, r]
    return C


@njit(cache=True, nogil=True)
def sq_discrepancy(A, B):
    s = 0.0
    for i in range(A.shape[0]):
        for j in range(A.shape[1]):
            d = A[i, j] - B[i, j]
            s += d * d
    return s


@njit(cache=True, nogil=True)
def mv_step(XT, RT, C, order, n_valid, member, m, depth, min_node, v, n_sur):
    """One multivariate boosting step on the subsample flagged in ``member``.

    One candidate tree per residual row of ``RT``, all on the same rows.
    Each candidate's covariance after its v-scaled update is computed over
    all columns; the candidate with the largest squared discrepancy (first
    on ties) is committed to ``RT`` in place. Returns the chosen index,
    the discrepancy of every candidate, the covariance after the step, the
    chosen tree and whether the updated residuals are finite.
    """
    Q, n = RT.shape
    idx0, cnt0 = node_sorted(order, n_valid, member, m)
    B = np.empty(Q)
    rg = np.zeros((Q, NREC))
    rj = np.zeros((Q, NREC), np.int64)
    ri = np.zeros((Q, NREC), np.int64)
    nr = np.zeros(Q, np.int64)
    lo = max(min_node, 1)
    if m >= 2 * lo:
        scan(XT, RT, idx0, 0, cnt0, min_node, False, B, rg, rj, ri, nr)
    else:
        for q in range(Q):
            B[q] = INVALID
    Z = np.empty((Q, n))
    for q in range(Q):
        _center(RT[q], Z[q])
    zu = np.empty(n)
    u = np.empty(n)
    D = np.empty(Q)
    best_q = -1
    best_C = C.copy()
    best_u = np.empty(n)
    ws = idx0.copy() if depth > 1 else idx0
    tree = grow(XT, RT[0:1], ws, cnt0, depth, min_node, 0.0, n_sur, B, rg, rj, ri, nr, 0)
    best_tree = tree
    for q in range(Q):
        if q > 0:
            ws = idx0.copy() if depth > 1 else idx0
            tree = grow(XT, RT[q:q + 1], ws, cnt0, depth, min_node, 0.0, n_sur, B, rg, rj, ri,
                        nr, q)
        leaf = apply_tree(XT, tree[0], tree[1], tree[2], tree[3], tree[4], tree[5], tree[6],
                          tree[7], tree[8])
        val = tree[9]
        for i in range(n):
            u[i] = RT[q, i] - v * val[leaf[i], 0]
        _center(u, zu)
        Cq = C.copy()
        for r in range(Q):
            if r == q:
                Cq[q, q] = _dot(zu, zu) / (n - 1)
            else:
                Cq[q, r] = _dot(zu, Z[r]) / (n - 1)
                Cq[r, q] = Cq[q, r]
        D[q] = sq_discrepancy(C, Cq)
        if best_q < 0 or D[q] > D[best_q]:
            best_q = q
            best_C = Cq
            best_u[:] = u
            best_tree = tree
    finite = True
    for i in range(n):
        RT[best_q, i] = best_u[i]
        if not np.isfinite(best_u[i]):
            finite = False
    return best_q, D, best_C, best_tree, finite
