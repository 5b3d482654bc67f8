"""Hot loops of tree induction and prediction.

Each kernel exists twice: a numba ``@njit`` version and a pure-numpy
version with identical semantics and identical floating point accumulation
order. The dispatching names (``best_split``, ``predict_tree``) bind to the
numba path unless numba is missing or ``FEDSENSE_DISABLE_NUMBA`` is set to a
truthy value before import.

Split selection rule shared by both paths: compute the gain of every
candidate, take the maximum, then pick the first candidate (lowest feature
position, then lowest threshold) whose gain is within ``tol`` of it. ``tol``
is ``1e-12`` times the weighted sum of squared targets. Zero-gain splits are
accepted (XOR-like nodes only separate one level down); a node is left
unsplit only when it has no admissible candidate.
"""

import os

import numpy as np

_TOL = 1e-12

_flag = os.environ.get("FEDSENSE_DISABLE_NUMBA", "").strip().lower()
_disabled = _flag in ("1", "true", "yes", "on")

try:
    if _disabled:
        raise ImportError
    from numba import njit

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False

BACKEND = "numba" if HAS_NUMBA else "numpy"


def presort(X):
    """Per-column stable argsort, shape (n_features, n_rows)."""
    return np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T)


def best_split_numpy(X, y, w, idx, features, min_leaf, order, in_node):
    """Best threshold split of the rows ``idx`` over columns ``features``.

    ``order`` is ``presort(X)`` and ``in_node`` flags the rows of ``idx``.
    Returns ``(feature, threshold, gain)``; ``feature == -1`` when no
    admissible split improves on the parent. ``gain`` is the reduction in
    weighted sum of squared error.
    """
    n = idx.shape[0]
    m = features.shape[0]
    if n < 2 or m == 0:
        return -1, 0.0, 0.0
    wn = w[idx]
    yn = y[idx]
    W = np.cumsum(wn)[-1]
    S = np.cumsum(wn * yn)[-1]
    S2 = np.cumsum(wn * yn * yn)[-1]
    if W <= 0.0:
        return -1, 0.0, 0.0
    parent = S * S / W
    tol = _TOL * S2

    O = order[features]
    rows = O[in_node[O]].reshape(m, n).T
    vs = X[rows, features[None, :]]
    ws = w[rows]
    wys = ws * y[rows]
    WL = np.cumsum(ws, axis=0)[:-1]
    SL = np.cumsum(wys, axis=0)[:-1]
    WR = W - WL
    SR = S - SL
    nl = np.arange(1, n)[:, None]
    valid = (
        (vs[1:] > vs[:-1])
        & (nl >= min_leaf)
        & (n - nl >= min_leaf)
        & (WL > 0.0)
        & (WR > 0.0)
    )
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = SL * SL / WL + SR * SR / WR - parent
    gain = np.where(valid, gain, -np.inf)

    # column-major scan order: feature first, then threshold position
    flat = gain.T.ravel()
    best = flat.max()
    if not best >= -tol:
        return -1, 0.0, 0.0
    pos = int(np.flatnonzero(flat >= best - tol)[0])
    j, p = divmod(pos, n - 1)
    lo = vs[p, j]
    hi = vs[p + 1, j]
    t = 0.5 * (lo + hi)
    if not t < hi:
        t = lo
    return int(features[j]), float(t), float(flat[pos])


def predict_tree_numpy(X, feature, threshold, left, right, value):
    """Leaf value reached by each row of ``X``; go left iff x <= threshold."""
    n = X.shape[0]
    node = np.zeros(n, dtype=np.int64)
    rows = np.arange(n)
    active = feature[node] >= 0
    while active.any():
        r = rows[active]
        nd = node[r]
        go_left = X[r, feature[nd]] <= threshold[nd]
        node[r] = np.where(go_left, left[nd], right[nd])
        active = feature[node] >= 0
    return value[node]


if HAS_NUMBA:

    @njit(cache=True, nogil=True)
    def best_split_numba(X, y, w, idx, features, min_leaf, order, in_node):
        n = idx.shape[0]
        m = features.shape[0]
        if n < 2 or m == 0:
            return -1, 0.0, 0.0
        W = 0.0
        S = 0.0
        S2 = 0.0
        for i in range(n):
            r = idx[i]
            W += w[r]
            S += w[r] * y[r]
            S2 += w[r] * y[r] * y[r]
        if W <= 0.0:
            return -1, 0.0, 0.0
        parent = S * S / W
        tol = 1e-12 * S2
        N = order.shape[1]

        best = -np.inf
        best_j = -1
        best_p = -1
        gains = np.full((m, n - 1), -np.inf)
        for j in range(m):
            f = features[j]
            WL = 0.0
            SL = 0.0
            p = 0
            prev = 0.0
            for q in range(N):
                r = order[f, q]
                if not in_node[r]:
                    continue
                v = X[r, f]
                if p > 0:
                    # candidate between the p-th and (p+1)-th node rows
                    nl = p
                    if v > prev and nl >= min_leaf and n - nl >= min_leaf:
                        WR = W - WL
                        SR = S - SL
                        if WL > 0.0 and WR > 0.0:
                            g = SL * SL / WL + SR * SR / WR - parent
                            gains[j, p - 1] = g
                            if g > best:
                                best = g
                WL += w[r]
                SL += w[r] * y[r]
                prev = v
                p += 1
        if not best >= -tol:
            return -1, 0.0, 0.0
        for j in range(m):
            for p in range(n - 1):
                if gains[j, p] >= best - tol:
                    best_j = j
                    best_p = p
                    break
            if best_j >= 0:
                break
        # recover the two values bracketing the chosen cut
        f = features[best_j]
        c = 0
        lo = 0.0
        hi = 0.0
        for q in range(N):
            r = order[f, q]
            if not in_node[r]:
                continue
            if c == best_p:
                lo = X[r, f]
            elif c == best_p + 1:
                hi = X[r, f]
                break
            c += 1
        t = 0.5 * (lo + hi)
        if not t < hi:
            t = lo
        return f, t, gains[best_j, best_p]

    @njit(cache=True, nogil=True)
    def predict_tree_numba(X, feature, threshold, left, right, value):
        n = X.shape[0]
        out = np.empty(n)
        for i in range(n):
            node = 0
            while feature[node] >= 0:
                if X[i, feature[node]] <= threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            out[i] = value[node]
        return out

    def best_split(X, y, w, idx, features, min_leaf, order, in_node):
        f, t, g = best_split_numba(X, y, w, idx, features, min_leaf, order, in_node)
        return int(f), float(t), float(g)

    predict_tree = predict_tree_numba
else:
    best_split_numba = None
    predict_tree_numba = None
    best_split = best_split_numpy
    predict_tree = predict_tree_numpy
