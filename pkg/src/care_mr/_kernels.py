"""Compiled inner loops for screening and bagging.

Per-instrument quantities are passed as three coefficient arrays so that the
per-copy criterion of instrument j at slope ``t`` is
``a[j] - 2*t*b[j] + t*t*d[j]`` with

    a = beta_y**2 / se_y**2
    b = beta_y * beta_rb / se_y**2
    d = (beta_rb**2 - var_rb) / se_y**2

and ``w`` holds positive integer weights. Instruments with zero weight, and
in bagging those not flagged eligible, are removed before entering the solvers.
"""

import numpy as np
from numba import njit

OK = 0
WEAK = 1
PRUNED = 2


@njit(cache=True, nogil=True, inline="always")
def _before(vals, i, j):
    return vals[i] < vals[j] or (vals[i] == vals[j] and i < j)


@njit(cache=True, nogil=True)
def select_smallest(vals, idx, v):
    """Permute ``idx`` so its first ``v`` entries index the ``v`` smallest ``vals``.

    Entries are ordered by ``(vals[i], i)``, so ties go to the lower index and
    the selected set does not depend on the incoming order of ``idx``.
    """
    lo = 0
    hi = idx.size - 1
    k = v - 1
    while lo < hi:
        mid = (lo + hi) >> 1
        if _before(vals, idx[mid], idx[lo]):
            idx[mid], idx[lo] = idx[lo], idx[mid]
        if _before(vals, idx[hi], idx[lo]):
            idx[hi], idx[lo] = idx[lo], idx[hi]
        if _before(vals, idx[hi], idx[mid]):
            idx[hi], idx[mid] = idx[mid], idx[hi]
        pivot = idx[mid]
        i = lo
        j = hi
        while i <= j:
            while _before(vals, idx[i], pivot):
                i += 1
            while _before(vals, pivot, idx[j]):
                j -= 1
            if i <= j:
                idx[i], idx[j] = idx[j], idx[i]
                i += 1
                j -= 1
        if k <= j:
            hi = j
        elif k >= i:
            lo = i
        else:
            break


@njit(cache=True, nogil=True)
def smallest_mask(vals, v, mask):
    """Mark the ``v`` smallest entries of ``vals``; ties go to the lower index."""
    idx = np.arange(vals.size)
    select_smallest(vals, idx, v)
    mask[:] = False
    for m in range(v):
        mask[idx[m]] = True


@njit(cache=True, nogil=True)
def profile(a, b, d, w, t, v, wc, idx):
    """Optimal valid set at slope ``t`` (first ``v`` entries of ``idx``).

    Returns ``(loss, num, den)`` where ``num / den`` is the refitted slope.
    """
    k = a.size
    for i in range(k):
        wc[i] = w[i] * (a[i] - 2.0 * t * b[i] + t * t * d[i])
    select_smallest(wc, idx, v)
    loss = 0.0
    num = 0.0
    den = 0.0
    for m in range(v):
        i = idx[m]
        loss += wc[i]
        num += w[i] * b[i]
        den += w[i] * d[i]
    return loss, num, den


@njit(cache=True, nogil=True)
def refit(b, d, w, mask):
    """Closed-form slope on the masked set; NaN when the curvature is not positive."""
    num = 0.0
    den = 0.0
    for i in range(b.size):
        if mask[i]:
            num += w[i] * b[i]
            den += w[i] * d[i]
    if not den > 0.0:
        return np.nan
    return num / den


@njit(cache=True, nogil=True)
def bcd(a, b, d, w, v, theta0, rel_tol, max_iter, mask, wc, idx, trace):
    """Alternate the valid-set and slope updates from ``theta0``.

    ``trace[i]`` receives the profiled loss at the i-th iterate, so entries
    ``0..iters`` are filled. Returns ``(theta, loss, iters, converged, status)``
    and leaves the final valid set in ``mask``. ``idx`` is scratch holding a
    permutation of ``0..k-1``.
    """
    theta = theta0
    iters = 0
    converged = False
    loss, num, den = profile(a, b, d, w, theta, v, wc, idx)
    while iters < max_iter:
        trace[iters] = loss
        if not den > 0.0:
            return np.nan, np.nan, iters, False, WEAK
        new = num / den
        iters += 1
        diff = abs(new - theta)
        done = diff == 0.0 or diff < rel_tol * abs(theta)
        theta = new
        loss, num, den = profile(a, b, d, w, theta, v, wc, idx)
        if done:
            converged = True
            break
    trace[iters] = loss
    mask[:] = False
    for m in range(v):
        mask[idx[m]] = True
    return theta, loss, iters, converged, OK


@njit(cache=True, nogil=True)
def loss_bounds(a, b, d, w, out):
    """``out[v-1]`` is a lower bound on the v-instrument loss at any slope.

    With every ``d`` positive, each weighted criterion is bounded below by its
    own minimum over the slope, and summing the v smallest of those bounds the
    joint minimum.
    """
    k = a.size
    m = np.empty(k)
    for i in range(k):
        m[i] = w[i] * (a[i] - b[i] * b[i] / d[i])
    m.sort()
    total = 0.0
    for i in range(k):
        total += m[i]
        out[i] = total


@njit(cache=True, nogil=True)
def weighted_median(vals, w):
    """Lower weighted median: the smallest value holding half the total weight."""
    order = np.argsort(vals, kind="mergesort")
    half = 0.5 * w.sum()
    acc = 0.0
    for i in order:
        acc += w[i]
        if acc >= half:
            return vals[i]
    return vals[order[-1]]


@njit(cache=True, nogil=True)
def path(a, b, d, w, v_lo, v_hi, inits, rel_tol, max_iter, log_n, s_total,
         theta_out, loss_out, gbic_out, iters_out, conv_out, status_out, masks_out,
         prune=False):
    """Best-of-restarts solution for every v in ``v_lo..v_hi``.

    ``inits[v - v_lo, r]`` is the starting slope of restart r. Failed v get
    an infinite GBIC. Returns the row of the GBIC minimizer (ties to larger
    v) or -1 when every v failed.

    With ``prune=True`` (requires all ``d > 0``) values of v whose loss lower
    bound already loses to the incumbent are skipped and marked with
    ``status = PRUNED``. The returned row is unchanged by pruning.
    """
    k = a.size
    mask = np.empty(k, dtype=np.bool_)
    wc = np.empty(k)
    idx = np.arange(k)
    trace = np.empty(max_iter + 1)
    bound = np.empty(k)
    if prune:
        loss_bounds(a, b, d, w, bound)
    best_row = -1
    best_gbic = np.inf
    nv = v_hi - v_lo + 1
    # Descending v: large valid sets usually win, which makes pruning bite early.
    for step in range(nv):
        vi = nv - 1 - step
        v = v_lo + vi
        pen = log_n * (s_total - v)
        if prune and bound[v - 1] + pen > best_gbic:
            status_out[vi] = PRUNED
            theta_out[vi] = np.nan
            loss_out[vi] = np.nan
            gbic_out[vi] = np.inf
            continue
        best_loss = np.inf
        status_out[vi] = WEAK
        for r in range(inits.shape[1]):
            th, loss, it, cv, st = bcd(a, b, d, w, v, inits[vi, r], rel_tol, max_iter,
                                       mask, wc, idx, trace)
            if st == OK and loss < best_loss:
                best_loss = loss
                theta_out[vi] = th
                loss_out[vi] = loss
                iters_out[vi] = it
                conv_out[vi] = cv
                status_out[vi] = OK
                for i in range(k):
                    masks_out[vi, i] = mask[i]
        if status_out[vi] == OK:
            gbic_out[vi] = loss_out[vi] + pen
            if gbic_out[vi] < best_gbic:
                best_gbic = gbic_out[vi]
                best_row = vi
        else:
            theta_out[vi] = np.nan
            loss_out[vi] = np.nan
            gbic_out[vi] = np.inf
    return best_row


@njit(cache=True, nogil=True)
def _replicate(a_all, b_all, d_all, bx_all, by_all, elig, counts, unif, rel_tol, max_iter, log_n,
               median_start):
    """One bootstrap replicate; returns ``(theta_b, v_b, converged, status)``.

    Only drawn instruments flagged in ``elig`` (which must imply ``d > 0``)
    may be declared valid.
    """
    s = counts.size
    k = 0
    for j in range(s):
        if counts[j] > 0 and elig[j]:
            k += 1
    idx = np.empty(k, dtype=np.int64)
    k = 0
    for j in range(s):
        if counts[j] > 0 and elig[j]:
            idx[k] = j
            k += 1
    if k < 2:
        return np.nan, 0, False, WEAK
    a = a_all[idx]
    b = b_all[idx]
    d = d_all[idx]
    w = counts[idx].astype(np.float64)
    ratios = np.empty(k)
    rw = np.empty(k)
    m = 0
    for i in range(k):
        bx = bx_all[idx[i]]
        if bx != 0.0:
            ratios[m] = by_all[idx[i]] / bx
            rw[m] = w[i]
            m += 1
    lo = 0.0
    hi = 0.0
    med = 0.0
    if m > 0:
        lo = ratios[:m].min()
        hi = ratios[:m].max()
        med = weighted_median(ratios[:m], rw[:m])
    nv = k - 1
    n_rand = unif.shape[1]
    inits = np.empty((nv, n_rand + (1 if median_start else 0)))
    inits[:, :n_rand] = lo + (hi - lo) * unif[:nv, :]
    if median_start:
        inits[:, n_rand] = med
    theta_out = np.empty(nv)
    loss_out = np.empty(nv)
    gbic_out = np.empty(nv)
    iters_out = np.empty(nv, dtype=np.int64)
    conv_out = np.empty(nv, dtype=np.bool_)
    status_out = np.empty(nv, dtype=np.int64)
    masks = np.empty((nv, k), dtype=np.bool_)
    row = path(a, b, d, w, 2, k, inits, rel_tol, max_iter, log_n, s,
               theta_out, loss_out, gbic_out, iters_out, conv_out, status_out, masks, True)
    if row < 0:
        return np.nan, 0, False, WEAK
    theta_b = refit(b, d, w, masks[row])
    if np.isnan(theta_b):
        return np.nan, row + 2, conv_out[row], WEAK
    return theta_b, row + 2, conv_out[row], OK


@njit(cache=True, nogil=True)
def bag_range(a, b, d, bx, by, elig, counts, unif, rel_tol, max_iter, log_n, median_start, lo,
              hi, theta_out, v_out, conv_out, status_out):
    """Run replicates ``lo..hi-1``, writing only to those rows of the outputs."""
    for rep in range(lo, hi):
        th, v, cv, st = _replicate(a, b, d, bx, by, elig, counts[rep], unif[rep],
                                   rel_tol, max_iter, log_n, median_start)
        theta_out[rep] = th
        v_out[rep] = v
        conv_out[rep] = cv
        status_out[rep] = st
