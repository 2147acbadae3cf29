"""Greedy maximization, loss-augmented inference and continuous extensions."""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import (InvalidInputError, SetFunction, Subset, _check_same,
                   masks_to_indicators, popcount)
from .dsf import DsfModel


@dataclass(frozen=True)
class Constraint:
    """Either a cardinality bound k or a knapsack (budget, per-element costs)."""

    kind: str
    k: int = 0
    budget: float = 0.0
    costs: tuple = ()

    def __post_init__(self):
        if self.kind == "cardinality":
            if self.k < 0:
                raise InvalidInputError("k must be >= 0")
        elif self.kind == "knapsack":
            if self.budget < 0 or any(c < 0 for c in self.costs):
                raise InvalidInputError("budget and costs must be >= 0")
            object.__setattr__(self, "costs", tuple(float(c) for c in self.costs))
        else:
            raise InvalidInputError(f"unknown constraint kind {self.kind!r}")


def cardinality(k: int) -> Constraint:
    return Constraint("cardinality", k=int(k))


def knapsack(budget: float, costs: Sequence[float]) -> Constraint:
    return Constraint("knapsack", budget=float(budget), costs=tuple(costs))


@dataclass
class GreedyTrace:
    picks: list = field(default_factory=list)  # (element id, marginal gain)
    value: float = 0.0
    evaluations: int = 0
    variant: str = "lazy"


@dataclass
class GreedyResult:
    subset: Subset
    value: float
    trace: GreedyTrace

    def __iter__(self):
        return iter((self.subset, self.value, self.trace))


def _as_fn(f) -> SetFunction:
    if isinstance(f, SetFunction):
        return f
    if isinstance(f, DsfModel):
        return f.as_set_function()
    raise InvalidInputError("expected a SetFunction or DsfModel")


def _lazy_cardinality(f: SetFunction, k: int) -> GreedyResult:
    n = f.n
    k = min(k, n)
    S, cur = 0, f(0)
    trace = GreedyTrace(variant="lazy")
    if k == 0:
        trace.value = cur
        return GreedyResult(Subset(f.ground, 0), cur, trace)
    first = f.evaluate_masks(np.array([1 << v for v in range(n)], dtype=np.int64)) - cur
    trace.evaluations += n
    # (-gain, id, round in which the gain was computed)
    heap = [(-float(g), v, 0) for v, g in enumerate(first)]
    heapq.heapify(heap)
    while len(trace.picks) < k:
        neg, v, stamp = heapq.heappop(heap)
        if stamp == len(trace.picks):
            S |= 1 << v
            cur = cur - neg
            trace.picks.append((v, -neg))
            continue
        gain = f(S | 1 << v) - cur
        trace.evaluations += 1
        heapq.heappush(heap, (-gain, v, len(trace.picks)))
    # report the exact value rather than the running sum of gains
    cur = f(S)
    trace.value = cur
    return GreedyResult(Subset(f.ground, S), cur, trace)


def naive_greedy(f, k: int) -> GreedyResult:
    """Plain greedy: re-evaluate every candidate each round (lowest id wins ties)."""
    f = _as_fn(f)
    n = f.n
    k = min(k, n)
    S, cur = 0, f(0)
    trace = GreedyTrace(variant="naive")
    for _ in range(k):
        cand = np.array([v for v in range(n) if not S >> v & 1], dtype=np.int64)
        vals = f.evaluate_masks(S | (np.int64(1) << cand))
        trace.evaluations += len(cand)
        j = int(np.argmax(vals))
        v = int(cand[j])
        trace.picks.append((v, float(vals[j] - cur)))
        S |= 1 << v
        cur = float(vals[j])
    trace.value = cur
    return GreedyResult(Subset(f.ground, S), cur, trace)


def _knapsack_pass(f: SetFunction, c: Constraint, ratio: bool) -> GreedyResult:
    n = f.n
    costs = np.asarray(c.costs)
    S, cur, spent = 0, f(0), 0.0
    trace = GreedyTrace(variant="ratio" if ratio else "plain")
    while True:
        cand = [v for v in range(n) if not S >> v & 1 and spent + costs[v] <= c.budget + 1e-12]
        if not cand:
            break
        cand = np.array(cand, dtype=np.int64)
        vals = f.evaluate_masks(S | (np.int64(1) << cand))
        trace.evaluations += len(cand)
        gains = vals - cur
        if ratio:
            with np.errstate(divide="ignore", invalid="ignore"):
                score = np.where(costs[cand] > 0, gains / costs[cand], np.where(gains > 0, np.inf, gains))
        else:
            score = gains
        j = int(np.argmax(score))
        if gains[j] <= 0:
            break
        v = int(cand[j])
        S |= 1 << v
        spent += costs[v]
        trace.picks.append((v, float(gains[j])))
        cur = float(vals[j])
    trace.value = cur
    return GreedyResult(Subset(f.ground, S), cur, trace)


def greedy_max(f, c: Constraint, lazy: bool = True) -> GreedyResult:
    """Greedy maximization; returns (subset, value, trace).

    Cardinality: lazy greedy with a priority queue of stale gains, ties to the
    lowest id, exactly min(k, n) picks. Knapsack: the better of plain-gain and
    gain-per-cost greedy over affordable elements (empty if nothing fits).
    """
    f = _as_fn(f)
    if c.kind == "cardinality":
        return _lazy_cardinality(f, c.k) if lazy else naive_greedy(f, c.k)
    if len(c.costs) != f.n:
        raise InvalidInputError("knapsack needs one cost per element")
    a = _knapsack_pass(f, c, ratio=False)
    b = _knapsack_pass(f, c, ratio=True)
    return b if b.value > a.value else a


def hamming_loss(S: Subset) -> SetFunction:
    """l_S(A) = |A symmetric-difference S| (modular up to a constant; zero at S)."""
    s = S.bits
    n = S.ground.size
    from .zoo import _popcount_array
    return SetFunction(S.ground, lambda m: float(popcount(m ^ s)),
                       lambda ms: _popcount_array(np.asarray(ms) ^ s).astype(float),
                       exact=True, name="hamming")


def loss_augmented_inference(f, loss: SetFunction, c: Constraint) -> Subset:
    """Greedy argmax of f(A) + loss(A)."""
    f = _as_fn(f)
    _check_same(f.ground, loss.ground)
    return greedy_max(f + loss, c).subset


def _check_unit_box(x, n):
    x = np.asarray(x, dtype=float)
    if x.shape != (n,):
        raise InvalidInputError(f"vector must have length {n}")
    if np.any(x < 0) or np.any(x > 1) or np.any(np.isnan(x)):
        raise InvalidInputError("coordinates must lie in [0,1]")
    return x


def lovasz_extension(f, x):
    """(value, subgradient): sort x descending (ties by id) and take the chain gains."""
    f = _as_fn(f)
    x = _check_unit_box(x, f.n)
    order = np.lexsort((np.arange(f.n), -x))
    prefixes = [0]
    for v in order:
        prefixes.append(prefixes[-1] | 1 << int(v))
    if f.n <= 62:
        vals = f.evaluate_masks(np.array(prefixes, dtype=np.int64))
    else:
        vals = np.array([f(m) for m in prefixes])
    gains = np.diff(vals)
    g = np.zeros(f.n)
    g[order] = gains
    return float(x[order] @ gains), g


def relaxed_hamming_distance(f, z1, z2) -> float:
    """Lovasz value at z1 + z2 - 2 z1*z2; equals f(A xor B) on binary inputs."""
    f = _as_fn(f)
    z1 = _check_unit_box(z1, f.n)
    z2 = _check_unit_box(z2, f.n)
    z = np.clip(z1 + z2 - 2.0 * z1 * z2, 0.0, 1.0)
    return lovasz_extension(f, z)[0]


def polymatroid_concave_extension(f, x, cap: int = 16):
    """min_S [f(S) + sum_v x_v f(v|S)] by enumeration, with a minimizing
    supergradient (f(v|S*))_v."""
    f = _as_fn(f)
    if f.n > cap:
        raise InvalidInputError("enumeration cap exceeded")
    x = np.asarray(x, dtype=float)
    if x.shape != (f.n,) or np.any(x < 0):
        raise InvalidInputError("x must be a nonneg vector of length n")
    T = f.table()
    masks = np.arange(len(T), dtype=np.int64)
    G = np.stack([T[masks | (1 << v)] - T for v in range(f.n)], axis=1)
    vals = T + G @ x
    j = int(np.argmin(vals))
    return float(vals[j]), G[j]


def exhaustive_max(f, k: int):
    """Best subset of size exactly min(k, n) by enumeration (lowest mask on ties)."""
    f = _as_fn(f)
    n = f.n
    k = min(k, n)
    masks = np.array([m for m in range(1 << n) if popcount(m) == k], dtype=np.int64)
    vals = f.evaluate_masks(masks)
    j = int(np.argmax(vals))
    return Subset(f.ground, int(masks[j])), float(vals[j])
