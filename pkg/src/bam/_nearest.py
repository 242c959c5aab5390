"""Compiled kernel for the Gaussian nearest-sum greedy selection."""

import numpy as np
from numba import njit


@njit(cache=True)
def _find(parent, p):
    root = p
    while parent[root] != root:
        root = parent[root]
    while parent[p] != root:
        step = parent[p]
        parent[p] = root
        p = step
    return root


@njit(cache=True)
def nearest_sum_greedy(sums, ids, n_each, m0, v0, s2, nt, st, qt, incumbent, slack):
    n = sums.shape[0]
    # union-find pointers to the nearest unselected position at or right of p
    # (sentinel n) and at or left of p (shifted by one, sentinel 0 -> none)
    right_of = np.arange(n + 1)
    left_of = np.arange(n + 1)
    chosen = np.empty(n, dtype=np.int64)
    k = 0
    acc_n = 0.0
    acc_s = 0.0
    log2pi = np.log(2.0 * np.pi)
    ybar = st / nt
    while k < n:
        prec = 1.0 / v0 + (acc_n + n_each) / s2
        # sum that puts the candidate prior mean exactly at ybar
        want = (ybar * prec - m0 / v0) * s2 - acc_s
        lo, hi = 0, n
        while lo < hi:
            mid = (lo + hi) // 2
            if sums[mid] < want:
                lo = mid + 1
            else:
                hi = mid
        right = _find(right_of, lo)
        left = _find(left_of, lo) - 1
        if left >= 0:
            # leftmost unselected duplicate carries the lowest id
            while left > 0:
                q = _find(left_of, left) - 1
                if q >= 0 and sums[q] == sums[left]:
                    left = q
                else:
                    break
        if right < n and left >= 0:
            dl = want - sums[left]
            dr = sums[right] - want
            if dl < dr:
                best = left
            elif dr < dl:
                best = right
            else:
                best = left if ids[left] < ids[right] else right
        elif right < n:
            best = right
        elif left >= 0:
            best = left
        else:
            break
        cand_n = acc_n + n_each
        cand_s = acc_s + sums[best]
        cprec = 1.0 / v0 + cand_n / s2
        cmean = (m0 / v0 + cand_s / s2) / cprec
        tprec = cprec + nt / s2
        tmean = (cmean * cprec + st / s2) / tprec
        quad = qt / s2 + cmean * cmean * cprec - tmean * tmean * tprec
        score = -0.5 * nt * (log2pi + np.log(s2)) + 0.5 * np.log(cprec / tprec) - 0.5 * quad
        if not score > incumbent + slack:
            break
        incumbent = score
        chosen[k] = ids[best]
        k += 1
        acc_n = cand_n
        acc_s = cand_s
        right_of[best] = best + 1
        left_of[best + 1] = best
    return chosen[:k], incumbent
