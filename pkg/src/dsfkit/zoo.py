"""Constructors for named set functions: SCMMs, feature-based functions, graph
functions, coverage and divergence objectives, matroid ranks, and presets.

Integer-valued functions are evaluated with Python ints and returned as floats.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import concave as C
from .concave import ConcaveUnit
from .core import (GroundSet, InvalidInputError, ModularFunction, SetFunction, Subset,
                   masks_to_indicators, popcount)
from .dsf import DsfModel, DsfNode


# -- helpers ------------------------------------------------------------------------------

def _popcount_array(a: np.ndarray) -> np.ndarray:
    """Vectorized popcount of non-negative int64 values."""
    x = a.astype(np.uint64)
    x = x - ((x >> np.uint64(1)) & np.uint64(0x5555555555555555))
    x = (x & np.uint64(0x3333333333333333)) + ((x >> np.uint64(2)) & np.uint64(0x3333333333333333))
    x = (x + (x >> np.uint64(4))) & np.uint64(0x0F0F0F0F0F0F0F0F)
    return ((x * np.uint64(0x0101010101010101)) >> np.uint64(56)).astype(np.int64)


def _mask_of(ground: GroundSet, items) -> int:
    return Subset.of(ground, items).bits


def _ground_of(ground, n=None) -> GroundSet:
    if isinstance(ground, GroundSet):
        return ground
    if ground is None:
        return GroundSet.range(n)
    return GroundSet(ground)


# -- SCMMs and feature-based functions ----------------------------------------------------

def make_scmm(terms: Sequence, m_pm=None, ground: Optional[GroundSet] = None) -> DsfModel:
    """sum_i w_i phi_i(m_i(A)) + m_pm(A) as a one-hidden-layer model.

    ``terms`` holds (unit, nonneg ModularFunction or weight vector, weight) triples.
    """
    if ground is None:
        for _, m, _ in terms:
            if isinstance(m, ModularFunction):
                ground = m.ground
                break
        else:
            if isinstance(m_pm, ModularFunction):
                ground = m_pm.ground
    if ground is None:
        raise InvalidInputError("cannot infer the ground set; pass ground=")
    nodes, parents = [], []
    for i, (unit, m, w) in enumerate(terms):
        if not isinstance(m, ModularFunction):
            m = ModularFunction(ground, tuple(m))
        if m.ground != ground:
            raise InvalidInputError("term modular lives on another ground set")
        weights = m.as_array()
        if np.any(weights < 0):
            raise InvalidInputError(f"term {i} has a negative modular entry")
        if w < 0:
            raise InvalidInputError(f"term {i} has a negative weight")
        nid = f"t{i}"
        nodes.append(DsfNode(nid, unit, (), [(a, x) for a, x in enumerate(weights) if x != 0]))
        parents.append((nid, float(w)))
    nodes.append(DsfNode("root", C.identity(), parents))
    layer_of = {nd.id: 1 for nd in nodes[:-1]}
    layer_of["root"] = 2
    return DsfModel(ground, nodes, "root", m_pm, layer_of)


@dataclass
class FeatureMatrix:
    """Scores m_u(v) >= 0 (features x elements), feature weights and units."""

    scores: np.ndarray
    weights: Optional[np.ndarray] = None
    units: object = None
    names: Optional[Sequence[str]] = None

    def __post_init__(self):
        self.scores = np.atleast_2d(np.asarray(self.scores, dtype=float))
        U = self.scores.shape[0]
        if np.any(self.scores < 0):
            raise InvalidInputError("feature scores must be >= 0")
        self.weights = np.ones(U) if self.weights is None else np.asarray(self.weights, dtype=float)
        if self.weights.shape != (U,) or np.any(self.weights < 0):
            raise InvalidInputError("feature weights must be a nonneg vector, one per feature")
        if self.units is None:
            self.units = C.sqrt()
        if isinstance(self.units, ConcaveUnit):
            self.units = [self.units] * U
        if len(self.units) != U:
            raise InvalidInputError("need one unit per feature")


def make_feature_based(F: FeatureMatrix, m_pm=None, ground=None) -> DsfModel:
    """f(X) = sum_u w_u phi_u(m_u(X)) + m_pm(X)."""
    ground = _ground_of(ground, F.scores.shape[1])
    if F.scores.shape[1] != ground.size:
        raise InvalidInputError("feature matrix width does not match the ground set")
    terms = [(F.units[u], F.scores[u], F.weights[u]) for u in range(F.scores.shape[0])]
    return make_scmm(terms, m_pm, ground=ground)


def scmm_as_truncations(model: DsfModel):
    """Rewrite an SCMM as a nonneg sum of modular truncations min(m(A), beta).

    Exact on every subset: each concave term is replaced by the piecewise-linear
    interpolant through the values its modular argument actually attains.
    Returns (list of (coef, weights, beta), linear weights, SetFunction).
    """
    n = model.n
    if n > 20:
        raise InvalidInputError("truncation rewrite enumerates subsets; n <= 20")
    root = model.node(model.root)
    X = masks_to_indicators(np.arange(1 << n), n)
    pieces = []
    for pid, w in root.parents_internal:
        nd = model.node(pid)
        if nd.parents_internal:
            raise InvalidInputError("not an SCMM: term has internal parents")
        m = np.zeros(n)
        for a, x in nd.parents_ground:
            m[a] = x
        pts = np.unique(X @ m)
        vals = w * nd.unit.value(pts)
        d = np.diff(vals) / np.diff(pts) if len(pts) > 1 else np.zeros(0)
        for j in range(len(d)):
            coef = d[j] - (d[j + 1] if j + 1 < len(d) else 0.0)
            if coef != 0.0:
                pieces.append((float(coef), m.copy(), float(pts[j + 1])))
    lin = model.final_modular.as_array()

    def batch(masks):
        Xm = masks_to_indicators(masks, n)
        out = Xm @ lin
        for coef, m, beta in pieces:
            out = out + coef * np.minimum(Xm @ m, beta)
        return out

    fn = SetFunction(model.ground, lambda mask: float(batch(np.array([mask]))[0]), batch,
                     name="truncations")
    return pieces, lin, fn


# -- matroid ranks --------------------------------------------------------------------------

@dataclass
class PartitionSpec:
    blocks: Sequence
    caps: Sequence[int]


def make_partition_rank(spec: PartitionSpec, ground) -> SetFunction:
    """r(X) = sum_i min(|X cap V_i|, k_i)."""
    ground = _ground_of(ground)
    if len(spec.blocks) != len(spec.caps):
        raise InvalidInputError("one cap per block")
    bmasks = [_mask_of(ground, b) for b in spec.blocks]
    caps = [int(k) for k in spec.caps]
    if any(k < 0 for k in caps):
        raise InvalidInputError("caps must be >= 0")
    union = 0
    for bm in bmasks:
        if union & bm:
            raise InvalidInputError("partition blocks overlap")
        union |= bm
    if union != (1 << ground.size) - 1:
        raise InvalidInputError("partition blocks must cover the ground set")

    def ev(mask: int) -> float:
        return float(sum(min(popcount(mask & bm), k) for bm, k in zip(bmasks, caps)))

    def batch(masks):
        out = np.zeros(len(masks), dtype=np.int64)
        for bm, k in zip(bmasks, caps):
            out += np.minimum(_popcount_array(masks & bm), k)
        return out.astype(float)

    return SetFunction(ground, ev, batch, exact=True, name="partition_rank")


@dataclass
class LaminarTree:
    """Node of a laminar family: member elements, capacity and child sets."""

    members: Sequence
    cap: int
    children: list = field(default_factory=list)


def _laminar_check(t: LaminarTree, ground: GroundSet, top=True) -> int:
    mask = _mask_of(ground, t.members)
    if int(t.cap) < 0:
        raise InvalidInputError("laminar capacities must be >= 0")
    if top and mask != (1 << ground.size) - 1:
        raise InvalidInputError("laminar root must be the whole ground set")
    seen = 0
    for ch in t.children:
        cm = _laminar_check(ch, ground, False)
        if cm & ~mask:
            raise InvalidInputError("laminar child is not inside its parent")
        if cm & seen:
            raise InvalidInputError("laminar children overlap")
        seen |= cm
    return mask


def make_laminar_rank(t: LaminarTree, ground):
    """Laminar matroid rank as (tree DSF with truncation units, exact recursive oracle)."""
    ground = _ground_of(ground)
    _laminar_check(t, ground)

    nodes, counter = [], [0]

    def unit_for(cap):
        return C.truncate(cap) if cap > 0 else C.piecewise_linear([], [0.0])

    def build(node: LaminarTree, depth: int):
        nid = f"F{counter[0]}"
        counter[0] += 1
        child_ids = [build(ch, depth + 1) for ch in node.children]
        covered = 0
        for ch in node.children:
            covered |= _mask_of(ground, ch.members)
        own = _mask_of(ground, node.members) & ~covered
        gp = [(i, 1.0) for i in range(ground.size) if own >> i & 1]
        nodes.append(DsfNode(nid, unit_for(int(node.cap)), [(c, 1.0) for c in child_ids], gp))
        return nid

    root = build(t, 0)
    model = DsfModel(ground, nodes, root)

    def flatten(node: LaminarTree):
        covered = 0
        kids = [flatten(ch) for ch in node.children]
        for ch in node.children:
            covered |= _mask_of(ground, ch.members)
        own = _mask_of(ground, node.members) & ~covered
        return (own, int(node.cap), kids)

    tree = flatten(t)

    def rank(mask: int, nd=tree) -> int:
        own, cap, kids = nd
        return min(sum(rank(mask, k) for k in kids) + popcount(mask & own), cap)

    def batch(masks):
        def rec(nd):
            own, cap, kids = nd
            tot = _popcount_array(masks & own)
            for k in kids:
                tot = tot + rec(k)
            return np.minimum(tot, cap)
        return rec(tree).astype(float)

    oracle = SetFunction(ground, lambda m: float(rank(m)), batch, exact=True, name="laminar_rank")
    return model, oracle


def make_truncated_partition_rank(R, a: int, b: int, ground=None) -> SetFunction:
    """f_R(A) = min(|A|, a + |A minus R|, b)."""
    if isinstance(R, Subset):
        ground = R.ground
        rmask = R.bits
    else:
        ground = _ground_of(ground)
        rmask = _mask_of(ground, R)
    a, b = int(a), int(b)
    if a >= b:
        raise InvalidInputError("need a < b")
    if a < 0 or a > popcount(rmask):
        raise InvalidInputError("need 0 <= a <= |R|")
    full = (1 << ground.size) - 1
    rbar = full & ~rmask

    def ev(mask: int) -> float:
        return float(min(popcount(mask), a + popcount(mask & rbar), b))

    def batch(masks):
        return np.minimum(np.minimum(_popcount_array(masks), a + _popcount_array(masks & rbar)), b).astype(float)

    return SetFunction(ground, ev, batch, exact=True, name="truncated_partition_rank")


def cycle_matroid_rank(edges: Sequence, A) -> int:
    """Size of a maximum spanning forest of the edges indexed by A."""
    ids = A.ids() if isinstance(A, Subset) else list(A)
    parent = {}

    def find(x):
        while parent.setdefault(x, x) != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    r = 0
    for i in ids:
        if not 0 <= i < len(edges):
            raise InvalidInputError(f"edge index {i} out of range")
        u, v = edges[i]
        ru, rv = find(u), find(v)
        if ru != rv:
            parent[ru] = rv
            r += 1
    return r


K4_EDGES = ((1, 2), (1, 3), (1, 4), (2, 3), (2, 4), (3, 4))


def make_cycle_matroid(edges: Sequence, ground=None) -> SetFunction:
    edges = [tuple(e) for e in edges]
    if ground is None:
        ground = GroundSet(f"{u}{v}" for u, v in edges)
    ground = _ground_of(ground)
    if ground.size != len(edges):
        raise InvalidInputError("one ground element per edge")
    n = ground.size
    return SetFunction(ground, lambda m: float(cycle_matroid_rank(edges, [i for i in range(n) if m >> i & 1])),
                       exact=True, name="cycle_rank")


def k4_rank() -> SetFunction:
    """Cycle-matroid rank of the complete graph on four vertices (6 edges)."""
    return make_cycle_matroid(K4_EDGES)


# -- F_k example ---------------------------------------------------------------------------

def _half_min2() -> ConcaveUnit:
    # x -> min(x, 2) / 2
    return C.piecewise_linear([2.0], [0.5, 0.0])


def make_fk_hat(k: int, max_k: int = 4) -> DsfModel:
    """k-layer tree DSF: f1(X) = min(|X|,2)/2, fk(X) = min(sum_i f_{k-1}(X cap V_ki), 2)/2.

    Elements are consecutive blocks: V_k1 holds ids 0..3^(k-1)-1, and so on.
    """
    if k < 1:
        raise InvalidInputError("k must be >= 1")
    if k > max_k or 3 ** k > 256:
        raise InvalidInputError(f"k={k} exceeds the configured cap")
    n = 3 ** k
    ground = GroundSet.range(n, "x")
    nodes, layer_of = [], {}

    def build(level: int, start: int) -> str:
        nid = f"L{level}_{start}"
        if level == 1:
            nodes.append(DsfNode(nid, _half_min2(), (), [(start + i, 1.0) for i in range(3)]))
        else:
            size = 3 ** (level - 1)
            kids = [build(level - 1, start + i * size) for i in range(3)]
            nodes.append(DsfNode(nid, _half_min2(), [(c, 1.0) for c in kids]))
        layer_of[nid] = level
        return nid

    root = build(k, 0)
    return DsfModel(ground, nodes, root, layer_of=layer_of)


def fk_blocks(k: int) -> list:
    """The triples (V_s1, V_s2, V_s3) of the recursive 3-ary partition, as id lists.

    Root triple first, then breadth-first: 1 + 3 + ... + 3^(k-1) triples.
    """
    out = []
    level = [list(range(3 ** k))]
    for _ in range(k):
        nxt = []
        for block in level:
            size = len(block) // 3
            parts = [block[i * size:(i + 1) * size] for i in range(3)]
            out.append(parts)
            nxt.extend(parts)
        level = nxt
    return out


# -- graph and coverage functions ----------------------------------------------------------------

def make_graph_function(kind: str, W, ground=None, gamma: float = 1.0, alpha: float = 0.5,
                        node_weights=None):
    """Graph-based functions.

    facility_location, graph_cut and monotone_cut return a SetFunction; the
    others return SCMM models. ``W`` is (clients x elements) for facility
    functions, (elements x elements) for cuts, and a 0/1 (U x elements)
    incidence for bipartite_neighborhood.
    """
    W = np.atleast_2d(np.asarray(W, dtype=float))
    if np.any(W < 0):
        raise InvalidInputError("graph weights must be >= 0")
    n = W.shape[1]
    ground = _ground_of(ground, n)
    if ground.size != n:
        raise InvalidInputError("weight matrix width does not match the ground set")

    if kind == "facility_location":
        def batch(masks):
            X = masks_to_indicators(masks, n)
            return np.max(X[:, None, :] * W[None, :, :], axis=2, initial=0.0).sum(axis=1)
        return SetFunction(ground, lambda m: float(batch(np.array([m]))[0]), batch, name=kind)

    if kind == "softmax_facility":
        if gamma <= 0:
            raise InvalidInputError("gamma must be > 0")
        # (1/gamma) log(1 + sum_a (exp(gamma w_a) - 1)); equals w on singletons
        terms = [(C.log_gamma(1.0 / gamma), np.expm1(gamma * W[u]) / gamma, 1.0) for u in range(W.shape[0])]
        return make_scmm(terms, ground=ground)

    if kind in ("graph_cut", "monotone_cut", "saturated_cut"):
        if W.shape != (n, n):
            raise InvalidInputError("cut functions need a square weight matrix")
    if kind == "graph_cut":
        def batch(masks):
            X = masks_to_indicators(masks, n)
            return np.einsum("bi,ij,bj->b", X, W, 1.0 - X)
        return SetFunction(ground, lambda m: float(batch(np.array([m]))[0]), batch, name=kind)

    if kind == "monotone_cut":
        row = W.sum(axis=1)

        def batch(masks):
            return masks_to_indicators(masks, n) @ row
        return SetFunction(ground, lambda m: float(batch(np.array([m]))[0]), batch, name=kind)

    if kind == "saturated_cut":
        if not 0 < alpha < 1:
            raise InvalidInputError("alpha must lie in (0,1)")
        terms = []
        for v in range(n):
            tot = W[v].sum()
            if tot > 0:
                terms.append((C.truncate(alpha * tot), W[v], 1.0))
        return make_scmm(terms, ground=ground)

    if kind == "bipartite_neighborhood":
        if not np.all(np.isin(W, (0.0, 1.0))):
            raise InvalidInputError("bipartite incidence must be 0/1")
        w = np.ones(W.shape[0]) if node_weights is None else np.asarray(node_weights, dtype=float)
        terms = [(C.truncate(1.0), W[u], float(w[u])) for u in range(W.shape[0])]
        return make_scmm(terms, ground=ground)

    raise InvalidInputError(f"unknown graph function {kind!r}")


def make_prob_coverage(p, ground=None, topic_weights=None) -> DsfModel:
    """sum_u w_u (1 - prod_{a in A} (1 - p(u|a))) as an SCMM with 1-exp(-x) units."""
    p = np.atleast_2d(np.asarray(p, dtype=float))
    if np.any(p < 0) or np.any(p >= 1):
        raise InvalidInputError("probabilities must lie in [0,1); p = 1 gives an infinite weight")
    ground = _ground_of(ground, p.shape[1])
    w = np.ones(p.shape[0]) if topic_weights is None else np.asarray(topic_weights, dtype=float)
    terms = [(C.one_minus_exp(), -np.log1p(-p[u]), float(w[u])) for u in range(p.shape[0])]
    return make_scmm(terms, ground=ground)


def make_divergence_objective(p, delta: float, scores, ground=None) -> DsfModel:
    """SCMM whose maximization matches divergence minimization at fixed total mass.

    delta < 1: sum_u p_u^delta m_u(X)^(1-delta); delta = 1: sum_u p_u log(1 + m_u(X)).
    """
    p = np.asarray(p, dtype=float)
    scores = np.atleast_2d(np.asarray(scores, dtype=float))
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise InvalidInputError("p must be a probability vector")
    if not 0 < delta <= 1:
        raise InvalidInputError("delta must lie in (0,1]")
    if scores.shape[0] != p.shape[0] or np.any(scores < 0):
        raise InvalidInputError("scores must be nonneg with one row per feature")
    if delta == 1.0:
        F = FeatureMatrix(scores, p, C.log_gamma(1.0))
    else:
        F = FeatureMatrix(scores, p ** delta, C.power(delta))
    return make_feature_based(F, ground=ground)


def alpha_divergence(p, q, delta: float) -> float:
    """D_delta(p, q) for delta in (0,1); KL(p||q) at delta = 1."""
    p, q = np.asarray(p, float), np.asarray(q, float)
    if delta == 1.0:
        nz = p > 0
        with np.errstate(divide="ignore"):
            return float(np.sum(p[nz] * np.log(p[nz] / q[nz])))
    return float((1.0 - np.sum(p ** delta * q ** (1.0 - delta))) / (delta * (1.0 - delta)))


# -- presets ---------------------------------------------------------------------------------

SIX = GroundSet("abcdef")

# per-object shape counts for objects a..i, one column per shape feature
FIG1_COUNTS = np.array([
    [9, 0, 0],  # a
    [8, 1, 0],  # b
    [6, 3, 0],  # c
    [3, 3, 3],  # d
    [2, 7, 0],  # e
    [4, 2, 3],  # f
    [4, 3, 2],  # g
    [2, 4, 3],  # h
    [0, 2, 7],  # i
], dtype=float)


def laminar6():
    """min(min(|A cap abc|,2) + min(|A cap def|,2), 3): model and exact oracle."""
    t = LaminarTree("abcdef", 3, [LaminarTree("abc", 2), LaminarTree("def", 2)])
    return make_laminar_rank(t, SIX)


def _block_truncation(ground, blocks, cap_inner, cap_outer) -> DsfModel:
    nodes = [DsfNode(f"B{i + 1}", C.truncate(cap_inner), (), [(ground.index(x), 1.0) for x in b])
             for i, b in enumerate(blocks)]
    nodes.append(DsfNode("root", C.truncate(cap_outer), [(nd.id, 1.0) for nd in nodes]))
    layer_of = {nd.id: 1 for nd in nodes[:-1]}
    layer_of["root"] = 2
    return DsfModel(ground, nodes, "root", layer_of=layer_of)


def overlap6() -> DsfModel:
    """min(min(|A cap abcd|,3) + min(|A cap cdef|,3), 5)."""
    return _block_truncation(SIX, ["abcd", "cdef"], 3, 5)


def fourblocks8() -> DsfModel:
    """min(sum_i min(|A cap B_i|,3), 7) over four overlapping 4-blocks of 8 elements."""
    g = GroundSet("abcdefgh")
    return _block_truncation(g, ["abcd", "cdef", "efgh", "ghab"], 3, 7)


def thm41(phi: ConcaveUnit) -> DsfModel:
    """phi(min(|A cap abc|,2) + min(|A cap def|,2))."""
    nodes = [DsfNode("L", C.truncate(2), (), [(i, 1.0) for i in range(3)]),
             DsfNode("R", C.truncate(2), (), [(i, 1.0) for i in range(3, 6)]),
             DsfNode("root", phi, [("L", 1.0), ("R", 1.0)])]
    return DsfModel(SIX, nodes, "root", layer_of={"L": 1, "R": 1, "root": 2})


def fig1() -> DsfModel:
    """sum over shapes of sqrt(count of that shape in A) for the nine objects a..i."""
    F = FeatureMatrix(FIG1_COUNTS.T, units=C.sqrt(), names=["square", "triangle", "circle"])
    return make_feature_based(F, ground=GroundSet("abcdefghi"))


def fig1_deep() -> DsfModel:
    """Two-layer variant: sqrt(sqrt(squares) + sqrt(triangles)) + sqrt(circles)."""
    g = GroundSet("abcdefghi")
    cnt = FIG1_COUNTS
    nodes = [DsfNode(s, C.sqrt(), (), [(a, cnt[a, j]) for a in range(9) if cnt[a, j]])
             for j, s in enumerate(["sq", "tri", "circ"])]
    nodes.append(DsfNode("poly", C.sqrt(), [("sq", 1.0), ("tri", 1.0)]))
    nodes.append(DsfNode("root", C.identity(), [("poly", 1.0), ("circ", 1.0)]))
    return DsfModel(g, nodes, "root")


def truncation_1_5():
    """min(min(|A cap abc|,1) + min(|A cap def|,1), 1.5) and its SCMM rewrite."""
    dsf = _block_truncation(SIX, ["abc", "def"], 1, 1.5)
    phi = C.piecewise_linear([1.0], [1.0, 0.5])  # min(x, 0.5 + 0.5x)
    abc = np.array([1, 1, 1, 0, 0, 0], float)
    scmm = make_scmm([(phi, abc, 1.0), (phi, 1 - abc, 1.0), (C.truncate(0.5), np.ones(6), 1.0)],
                     m_pm=ModularFunction(SIX, (-0.5,) * 6), ground=SIX)
    return dsf, scmm


THM41_UNITS = {
    "sqrt": C.sqrt,
    "trunc3": lambda: C.truncate(3.0),
    "identity": C.identity,
    "log": lambda: C.log_gamma(1.0),
}


def preset(name: str):
    """Named constructions: a DsfModel or a SetFunction."""
    if name.startswith("thm41:"):
        key = name.split(":", 1)[1]
        if key not in THM41_UNITS:
            raise InvalidInputError(f"unknown thm41 unit {key!r}")
        return thm41(THM41_UNITS[key]())
    table = {
        "laminar6": lambda: laminar6()[0],
        "laminar6_oracle": lambda: laminar6()[1],
        "overlap6": overlap6,
        "fourblocks8": fourblocks8,
        "k4": k4_rank,
        "fk1": lambda: make_fk_hat(1),
        "fk2": lambda: make_fk_hat(2),
        "fig1": fig1,
        "fig1_deep": fig1_deep,
    }
    if name not in table:
        raise InvalidInputError(f"unknown preset {name!r}")
    return table[name]()


PRESET_NAMES = ("laminar6", "laminar6_oracle", "overlap6", "fourblocks8", "k4", "fk1", "fk2",
                "fig1", "fig1_deep", "thm41:sqrt", "thm41:trunc3", "thm41:identity", "thm41:log")
