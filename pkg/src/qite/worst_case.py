"""Minimum of the (stratified) rank statistic over composite effect nulls.

For the hypothesis that at most n-k effects exceed c, the minimizing effect
configuration gives the m = min(n-k, n_t) treated units with the largest
observed outcomes unbounded effects (imputed control outcome -inf) and
effect exactly c to everyone else.  For stratified designs the unbounded
slots must additionally be allocated across strata, an exact integer
resource-allocation problem solved here by dynamic programming.

``tie_shift`` selects the evaluation point around a threshold: 0 means the
statistic exactly at c, -1 the limit from above (c + eps), +1 the limit
from below (c - eps).  Shifted evaluations resolve exact ties between an
imputed treated outcome and a control outcome without float epsilon games.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from .model import NEG_INF
from .engine import per_stratum_transforms, ranks, statistic


def _largest_treated_first(z, y):
    """Treated indices ordered by outcome descending, ties largest index
    first.

    Evicting the largest index among equal outcomes keeps the smallest
    index, and on an exact tie between a kept imputed outcome and a control
    outcome the smaller index ranks below the control, which is what
    attains the minimum.  (Exactness is enforced against the brute-force
    oracle in the tests.)
    """
    treated = np.flatnonzero(np.asarray(z) == 1)
    order = np.lexsort((-treated, -np.asarray(y, dtype=float)[treated]))
    return treated[order]


def _imputed_outcomes(z, y, m, c, slot_order=None):
    z = np.asarray(z)
    y = np.asarray(y, dtype=float)
    out = np.where(z == 1, y - c, y)
    if m > 0:
        slots = _largest_treated_first(z, y) if slot_order is None else slot_order
        out[slots[:m]] = NEG_INF
    return out


def _shift_vector(z, tie_shift):
    if tie_shift == 0:
        return None
    return np.where(np.asarray(z) == 1, tie_shift, 0)


def min_stat_cre(data, transform, k, c, tie_shift=0):
    """Infimum of the statistic over effect vectors with at most n-k
    entries above c (all-units scope), for a completely randomized design."""
    n, n_t = data.n, data.n_t
    if not 0 <= k <= n:
        raise ValueError(f"k must be in [0, {n}]")
    m = min(n - k, n_t)
    out = _imputed_outcomes(data.z, data.y, m, c)
    return statistic(data.z, out, transform, _shift_vector(data.z, tie_shift))


def min_stat_scre_profile(data, transforms, c, tie_shift=0):
    """DP profile: entry u is the minimum stratified statistic when up to u
    unbounded-effect slots may be allocated across strata (u = 0..n_t).

    Per-stratum cost tables f_s(m) are exact within-stratum statistics; no
    convexity of f_s is assumed.  f_s is nonincreasing in m, so the minimum
    at capacity u is attained using all u slots and the profile itself is
    nonincreasing.
    """
    transforms = per_stratum_transforms(data, transforms)
    sizes = data.stratum_sizes()
    if all(nst == 1 for _, nst in sizes):
        return _profile_one_treated(data, transforms, c, tie_shift)
    n_t = data.n_t
    dp = np.zeros(1)
    for idx, transform in zip(data.stratum_members(), transforms):
        z_s, y_s = data.z[idx], data.y[idx]
        n_st = int(z_s.sum())
        slots = _largest_treated_first(z_s, y_s)
        shift = _shift_vector(z_s, tie_shift)
        f = np.array([
            statistic(z_s, _imputed_outcomes(z_s, y_s, m, c, slots), transform, shift)
            for m in range(n_st + 1)
        ])
        prev = dp
        width = min(prev.size - 1 + n_st, n_t)
        dp = np.full(width + 1, np.inf)
        for m in range(n_st + 1):
            hi = min(prev.size, dp.size - m)
            if hi > 0:
                np.minimum(dp[m:m + hi], prev[:hi] + f[m], out=dp[m:m + hi])
        np.minimum.accumulate(dp, out=dp)
    return dp


def _profile_one_treated(data, transforms, c, tie_shift):
    """Closed-form profile for one treated unit per stratum.

    Evicting stratum s moves its treated unit to within-stratum rank 1, so
    the allocation problem reduces to keeping the u largest savings
    f_s(0) - phi_s(1).  Within-stratum ranks come from one global sort.
    """
    z, y, strata = data.z, data.y, data.strata
    n = data.n
    imputed = np.where(z == 1, y - c, y)
    shift = np.zeros(n) if tie_shift == 0 else np.where(z == 1, tie_shift, 0)
    order = np.lexsort((np.arange(n), shift, imputed, strata))
    counts = np.bincount(strata, minlength=data.n_strata)
    starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
    within = np.arange(n) - np.repeat(starts, counts)
    rank = np.empty(n, dtype=np.int64)
    rank[order] = within + 1
    treated = np.flatnonzero(z == 1)
    treated_of = np.empty(len(counts), dtype=np.int64)
    treated_of[strata[treated]] = treated
    f0 = np.empty(len(counts))
    f1 = np.empty(len(counts))
    for s, tr in enumerate(transforms):
        phi = tr.scores(counts[s])
        f0[s] = phi[rank[treated_of[s]] - 1]
        f1[s] = phi[0]
    savings = np.sort(f0 - f1)[::-1]
    profile = np.empty(data.n_t + 1)
    profile[0] = f0.sum()
    profile[1:] = profile[0] - np.cumsum(savings)
    return profile


def min_stat_scre(data, transforms, k, c, tie_shift=0):
    """Infimum of the stratified statistic over the all-units composite null."""
    n = data.n
    if not 0 <= k <= n:
        raise ValueError(f"k must be in [0, {n}]")
    dp = min_stat_scre_profile(data, transforms, c, tie_shift)
    return float(dp[min(n - k, data.n_t)])


def best_allocation(data, transforms, k, c, tie_shift=0):
    """Optimal per-stratum slot counts (m_1..m_S) and the achieved minimum."""
    transforms = per_stratum_transforms(data, transforms)
    capacity = min(data.n - k, data.n_t)
    tables = []
    for idx, transform in zip(data.stratum_members(), transforms):
        z_s, y_s = data.z[idx], data.y[idx]
        slots = _largest_treated_first(z_s, y_s)
        shift = _shift_vector(z_s, tie_shift)
        tables.append([
            statistic(z_s, _imputed_outcomes(z_s, y_s, m, c, slots), transform, shift)
            for m in range(int(z_s.sum()) + 1)
        ])
    # small-scale exact DP with backtracking
    S = len(tables)
    best = {0: (0.0, ())}
    for s in range(S):
        nxt = {}
        for used, (val, path) in best.items():
            for m, fm in enumerate(tables[s]):
                u = used + m
                if u > capacity:
                    break
                cand = (val + fm, path + (m,))
                if u not in nxt or cand[0] < nxt[u][0]:
                    nxt[u] = cand
        best = nxt
    val, path = min(best.values(), key=lambda t: t[0])
    return float(val), path


def brute_force_min(data, transforms, scope, k, c, tie_shift=0, max_configs=300_000):
    """Exhaustive minimum over two-point effect configurations (testing oracle).

    Enumerates every effect vector with entries in {c, +inf} subject to the
    scope's cap on +inf entries: at most n-k anywhere for the all-units
    hypothesis, at most n_t-k among treated for the treated-units one.
    Any configuration in the composite null reduces to one of these, so the
    enumeration attains the true infimum.  Intended for tiny instances.
    """
    z = data.z
    n, n_t = data.n, data.n_t
    if scope == "all":
        pool = np.arange(n)
        cap = n - k
    elif scope == "treated":
        pool = np.flatnonzero(z == 1)
        cap = n_t - k
    else:
        raise ValueError(f"unknown scope {scope!r}")
    if cap < 0:
        raise ValueError("k exceeds the scope size")
    cap = min(cap, pool.size)
    total = sum(math.comb(pool.size, j) for j in range(cap + 1))
    if total > max_configs:
        raise ValueError(f"{total} configurations exceed oracle budget {max_configs}")

    stratified = data.strata is not None
    if stratified:
        transforms = per_stratum_transforms(data, transforms)
        members = data.stratum_members()
    shift = _shift_vector(z, tie_shift)
    best = np.inf
    base = np.where(z == 1, data.y - c, data.y)
    for j in range(cap + 1):
        for subset in itertools.combinations(pool, j):
            out = base.copy()
            idx = np.fromiter(subset, dtype=np.int64, count=j)
            if j:
                out[idx[z[idx] == 1]] = NEG_INF   # +inf effect on a control is inert
            if stratified:
                val = 0.0
                for mem, tr in zip(members, transforms):
                    sh = None if shift is None else shift[mem]
                    val += statistic(z[mem], out[mem], tr, sh)
            else:
                val = statistic(z, out, transforms, shift)
            if val < best:
                best = val
    return float(best)


def enumerate_allocations_min(data, transforms, k, c, tie_shift=0):
    """Exhaustive minimum over feasible slot allocations (DP cross-check)."""
    transforms = per_stratum_transforms(data, transforms)
    capacity = min(data.n - k, data.n_t)
    tables = []
    for idx, transform in zip(data.stratum_members(), transforms):
        z_s, y_s = data.z[idx], data.y[idx]
        slots = _largest_treated_first(z_s, y_s)
        shift = _shift_vector(z_s, tie_shift)
        tables.append([
            statistic(z_s, _imputed_outcomes(z_s, y_s, m, c, slots), transform, shift)
            for m in range(int(z_s.sum()) + 1)
        ])
    best = np.inf
    for combo in itertools.product(*(range(len(t)) for t in tables)):
        if sum(combo) > capacity:
            continue
        val = sum(t[m] for t, m in zip(tables, combo))
        best = min(best, val)
    return float(best)
