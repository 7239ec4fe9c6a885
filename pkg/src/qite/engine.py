"""Rank-score statistics and their randomization null distributions.

The statistic is sum over treated units of phi(rank of outcome), with ties
broken by unit position.  Under complete randomization its distribution is
free of the outcome values: it depends only on (n, n_t, phi), which is what
makes exact enumeration and reusable null distributions possible.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import ndtr

from .model import DEFAULT_MC, rng_for

EXACT_CAP_DEFAULT = 1_000_000

# substream purpose tags
_TAG_CRE_NULL = 11
_TAG_SCRE_NULL = 12


class ExactEnumerationError(RuntimeError):
    """Exact enumeration would exceed the cap; use Monte Carlo mode."""


def ranks(values, tie_shift=None):
    """Ranks 1..n of the coordinates, ties broken by position.

    -inf sentinels rank lowest.  ``tie_shift`` is an optional secondary
    sort key per unit (used to evaluate open limits c +- epsilon exactly:
    a unit with a smaller shift ranks below an exact-tie partner).
    """
    v = np.asarray(values, dtype=float)
    n = v.size
    if tie_shift is None:
        order = np.argsort(v, kind="stable")
    else:
        order = np.lexsort((np.arange(n), np.asarray(tie_shift), v))
    r = np.empty(n, dtype=np.int64)
    r[order] = np.arange(1, n + 1)
    return r


def statistic(z, outcomes, transform, tie_shift=None):
    """Rank-score statistic: sum of phi(rank) over treated units."""
    z = np.asarray(z)
    r = ranks(outcomes, tie_shift)
    phi = transform.scores(r.size)
    # summing in sorted-rank order keeps float sums bit-identical with the
    # enumeration order used by the exact null distributions
    treated_ranks = np.sort(r[z == 1])
    return float(phi[treated_ranks - 1].sum())


def stratified_statistic(data, transforms, outcomes=None, tie_shift=None):
    """Sum over strata of within-stratum rank-score statistics."""
    y = data.y if outcomes is None else np.asarray(outcomes, dtype=float)
    transforms = per_stratum_transforms(data, transforms)
    total = 0.0
    for idx, transform in zip(data.stratum_members(), transforms):
        shift = None if tie_shift is None else np.asarray(tie_shift)[idx]
        total += statistic(data.z[idx], y[idx], transform, shift)
    return total


def per_stratum_transforms(data, transforms):
    """Normalize a single transform or a sequence to one per stratum."""
    S = data.n_strata
    if hasattr(transforms, "scores"):
        return (transforms,) * S
    transforms = tuple(transforms)
    if len(transforms) != S:
        raise ValueError(f"need {S} per-stratum transforms, got {len(transforms)}")
    return transforms


# ---------------------------------------------------------------------------
# Null distributions
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class NullDistribution:
    """Survival function G(x) = P(t >= x) of a (stratified) rank statistic.

    Discrete form stores sorted support plus tail weights; queries are
    binary searches, so G is evaluable at arbitrary data-dependent points.
    The Gaussian form is used by the asymptotic sensitivity approximation.
    """

    kind: str                      # "discrete" | "gaussian"
    provenance: tuple
    design: tuple
    support: np.ndarray | None = None
    tail: np.ndarray | None = None
    mean: float = 0.0
    sd: float = 0.0

    def survival(self, x):
        """P(t >= x); equals 1 at -inf and 0 above an exact support.

        Sampled nulls carry a pseudo-atom at +inf (add-one convention), so
        their survival never reaches 0 at finite draw counts.
        """
        if self.kind == "gaussian":
            if x == float("-inf"):
                return 1.0
            if self.sd == 0.0:
                return 1.0 if x <= self.mean else 0.0
            return float(ndtr((self.mean - x) / self.sd))
        i = int(np.searchsorted(self.support, x, side="left"))
        if i >= self.tail.size:
            return 0.0
        return float(self.tail[i])

    def to_dict(self):
        d = {"kind": self.kind, "provenance": list(self.provenance), "design": list(self.design)}
        if self.kind == "discrete":
            d["support"] = self.support.tolist()
            d["tail"] = self.tail.tolist()
        else:
            d["mean"] = self.mean
            d["sd"] = self.sd
        return d

    @staticmethod
    def from_dict(d):
        if d["kind"] == "discrete":
            return discrete_null(
                np.asarray(d["support"], dtype=float),
                weights=None,
                tail=np.asarray(d["tail"], dtype=float),
                provenance=tuple(d["provenance"]),
                design=tuple(d["design"]),
            )
        return NullDistribution(
            "gaussian", tuple(d["provenance"]), tuple(d["design"]),
            mean=float(d["mean"]), sd=float(d["sd"]),
        )


def survival(dist, x):
    return dist.survival(x)


def discrete_null(support, weights=None, tail=None, provenance=(), design=()):
    """Assemble a discrete null from support values and nonnegative weights."""
    support = np.asarray(support, dtype=float)
    order = np.argsort(support, kind="stable")
    support = support[order]
    if tail is None:
        w = np.asarray(weights, dtype=float)[order]
        tail = np.cumsum(w[::-1])[::-1]
        tail = tail / tail[0]
    support.setflags(write=False)
    tail = np.ascontiguousarray(tail, dtype=float)
    tail.setflags(write=False)
    return NullDistribution("discrete", tuple(provenance), tuple(design),
                            support=support, tail=tail)


def _merge_atoms(values, weights):
    vals, inverse = np.unique(values, return_inverse=True)
    w = np.bincount(inverse, weights=weights, minlength=vals.size)
    return vals, w


def _exact_subset_sums(phi, n, n_t, cap):
    """Support and counts of sum(phi[S]) over all n_t-subsets of 0..n-1."""
    total = math.comb(n, n_t)
    if total > cap:
        raise ExactEnumerationError(
            f"C({n},{n_t}) = {total} assignments exceed the exact cap {cap}; use Monte Carlo"
        )
    vals = np.empty(total, dtype=float)
    pos = 0
    it = itertools.combinations(range(n), n_t)
    while True:
        chunk = list(itertools.islice(it, 100_000))
        if not chunk:
            break
        idx = np.array(chunk, dtype=np.int64)
        vals[pos:pos + idx.shape[0]] = phi[idx].sum(axis=1)
        pos += idx.shape[0]
    return _merge_atoms(vals, np.ones(total))


def _mc_subset_sums(phi, n, n_t, mc, tag, stream):
    """Monte Carlo draws of sum(phi[S]) over random n_t-subsets."""
    rng = rng_for(mc.seed, tag, stream)
    out = np.empty(mc.draws, dtype=float)
    pos = 0
    chunk = max(1, min(mc.draws, 4_000_000 // max(n, 1)))
    while pos < mc.draws:
        m = min(chunk, mc.draws - pos)
        u = rng.random((m, n))
        sel = np.argpartition(u, n_t - 1, axis=1)[:, :n_t]
        out[pos:pos + m] = np.sort(phi[sel], axis=1).sum(axis=1) if n_t else 0.0
        pos += m
    return out


def convolve_discrete(parts, cap=EXACT_CAP_DEFAULT):
    """Convolution of independent discrete parts [(support, weights), ...].

    Weights within each part should sum to about 1 so that products cannot
    underflow across hundreds of strata; the result is normalized anyway.
    """
    acc_v = np.zeros(1)
    acc_w = np.ones(1)
    for v, w in parts:
        vals = (acc_v[:, None] + np.asarray(v)[None, :]).ravel()
        wts = (acc_w[:, None] * np.asarray(w)[None, :]).ravel()
        acc_v, acc_w = _merge_atoms(vals, wts)
        if acc_v.size > cap:
            raise ExactEnumerationError(
                f"convolved support size {acc_v.size} exceeds cap {cap}; use Monte Carlo"
            )
    return acc_v, acc_w


def null_distribution(design, transforms, mode="auto", mc=DEFAULT_MC, cap=EXACT_CAP_DEFAULT):
    """Null distribution of the (stratified) rank-score statistic.

    design: ("cre", n, n_t) or ("scre", ((n_s, n_st), ...)).
    mode: "exact", "mc", or "auto" (exact when within the cap).
    CRE enumerates treated-rank subsets; SCRE convolves exact per-stratum
    distributions when every stratum is enumerable, else samples strata
    jointly with a seeded generator.
    """
    key_transforms = transforms if hasattr(transforms, "scores") else tuple(transforms)
    return _null_cached(tuple(design), key_transforms, mode, mc, cap)


@lru_cache(maxsize=128)
def _null_cached(design, transforms, mode, mc, cap):
    if design[0] == "cre":
        _, n, n_t = design
        if not (1 <= n_t < n):
            raise ValueError("CRE design needs 1 <= n_t < n")
        phi = transforms.scores(n) if hasattr(transforms, "scores") else transforms[0].scores(n)
        if mode == "auto":
            mode = "exact" if math.comb(n, n_t) <= cap else "mc"
        if mode == "exact":
            vals, wts = _exact_subset_sums(phi, n, n_t, cap)
            return discrete_null(vals, wts, provenance=("exact",), design=design)
        draws = _mc_subset_sums(phi, n, n_t, mc, _TAG_CRE_NULL, 0)
        return _mc_null(draws, ("mc", mc.draws, mc.seed), design)

    if design[0] == "scre":
        sizes = design[1]
        if hasattr(transforms, "scores"):
            transforms = (transforms,) * len(sizes)
        if len(transforms) != len(sizes):
            raise ValueError("one transform per stratum required")
        if mode == "auto":
            feasible = all(math.comb(ns, nst) <= cap for ns, nst in sizes)
            mode = "exact" if feasible else "mc"
        if mode == "exact":
            if len(sizes) == 1:
                (ns, nst), tr = sizes[0], transforms[0]
                vals, wts = _exact_subset_sums(tr.scores(ns), ns, nst, cap)
            else:
                parts = []
                for (ns, nst), tr in zip(sizes, transforms):
                    v, w = _exact_subset_sums(tr.scores(ns), ns, nst, cap)
                    parts.append((v, w / w.sum()))
                vals, wts = convolve_discrete(parts, cap)
            return discrete_null(vals, wts, provenance=("exact",), design=design)
        total = np.zeros(mc.draws)
        for s, ((ns, nst), tr) in enumerate(zip(sizes, transforms)):
            total += _mc_subset_sums(tr.scores(ns), ns, nst, mc, _TAG_SCRE_NULL, s)
        return _mc_null(total, ("mc", mc.draws, mc.seed), design)

    raise ValueError(f"unknown design {design[0]!r}")


def _mc_null(draws, provenance, design):
    """Discrete null from Monte Carlo draws with the add-one convention.

    A pseudo-draw at +inf makes the estimated survival (B + 1) / (R + 1),
    so p-values from a sampled null are never exactly zero and stay valid
    at any finite draw count.
    """
    vals, wts = _merge_atoms(draws, np.ones(draws.size))
    vals = np.append(vals, np.inf)
    wts = np.append(wts, 1.0)
    return discrete_null(vals, wts, provenance=provenance, design=design)


def null_for(data, transforms, mode="auto", mc=DEFAULT_MC, cap=EXACT_CAP_DEFAULT):
    """Null distribution matching the design of an ExperimentData."""
    if data.strata is None:
        tr = transforms if hasattr(transforms, "scores") else tuple(transforms)[0]
        return null_distribution(("cre", data.n, data.n_t), tr, mode, mc, cap)
    transforms = per_stratum_transforms(data, transforms)
    return null_distribution(("scre", data.stratum_sizes()), transforms, mode, mc, cap)
