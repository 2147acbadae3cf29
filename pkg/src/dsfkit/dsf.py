"""Deep submodular function engine: DAG model, forward pass, extension, gradients."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .concave import (PARAM_CEIL, PARAM_FLOOR, SLOPE_CAP, ConcaveUnit, identity,
                      param_derivative)
from .core import (DsfError, GroundSet, InvalidInputError, ModularFunction, SetFunction,
                   Subset, VerificationReport, _check_same, masks_to_indicators)


class InvalidModelError(DsfError, ValueError):
    pass


def _merge_edges(edges, key_type):
    merged = {}
    for src, w in edges:
        src = key_type(src)
        merged[src] = merged.get(src, 0.0) + float(w)
    return tuple(merged.items())


@dataclass(frozen=True)
class DsfNode:
    """One unit: psi = phi(sum_u w_u psi_u + sum_a m(a) 1[a in A]).

    Repeated parents are merged by summing their weights.
    """

    id: str
    unit: ConcaveUnit = field(default_factory=identity)
    parents_internal: tuple = ()
    parents_ground: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "id", str(self.id))
        object.__setattr__(self, "parents_internal", _merge_edges(self.parents_internal, str))
        object.__setattr__(self, "parents_ground", _merge_edges(self.parents_ground, int))


@dataclass
class ParamGradient:
    labels: list
    values: np.ndarray
    capped: bool = False

    def as_dict(self) -> dict:
        return dict(zip(self.labels, self.values.tolist()))


class DsfModel:
    """A DAG of concave (or convex) units over a ground set plus a signed modular term.

    Construction is permissive so that ``validate_model`` can report problems;
    evaluation compiles the model and raises ``InvalidModelError`` if it is invalid.
    ``frozen`` lists node ids whose ground weights are fixed during learning.
    """

    def __init__(self, ground: GroundSet, nodes: Sequence[DsfNode], root: str,
                 final_modular=None, layer_of: Optional[dict] = None, frozen=()):
        self.ground = ground
        self.nodes = tuple(nodes)
        self.root = str(root)
        if final_modular is None:
            final_modular = ModularFunction.zeros(ground)
        elif not isinstance(final_modular, ModularFunction):
            final_modular = ModularFunction(ground, tuple(final_modular))
        _check_same(ground, final_modular.ground)
        self.final_modular = final_modular
        self.layer_of = dict(layer_of) if layer_of else None
        self.frozen = frozenset(frozen)
        self._compiled = None
        self._report = None

    # -- structure ----------------------------------------------------------------------
    @property
    def n(self) -> int:
        return self.ground.size

    def node(self, node_id: str) -> DsfNode:
        for nd in self.nodes:
            if nd.id == node_id:
                return nd
        raise KeyError(node_id)

    def topological_order(self) -> list[int]:
        """Indices into ``nodes``, parents first (Kahn, ties by position)."""
        ids = {nd.id: i for i, nd in enumerate(self.nodes)}
        indeg = [0] * len(self.nodes)
        children = [[] for _ in self.nodes]
        for i, nd in enumerate(self.nodes):
            for pid, _ in nd.parents_internal:
                if pid in ids:
                    indeg[i] += 1
                    children[ids[pid]].append(i)
        import heapq
        ready = [i for i, d in enumerate(indeg) if d == 0]
        heapq.heapify(ready)
        order = []
        while ready:
            i = heapq.heappop(ready)
            order.append(i)
            for c in children[i]:
                indeg[c] -= 1
                if indeg[c] == 0:
                    heapq.heappush(ready, c)
        return order

    def curvature(self) -> str:
        """'concave', 'convex', 'linear' or 'mixed' over all units."""
        kinds = set()
        for nd in self.nodes:
            u = nd.unit
            if u.kind == "identity" or (u.kind == "piecewise_linear" and len(set(u.params["slopes"])) == 1):
                continue
            kinds.add(u.curvature)
        if not kinds:
            return "linear"
        return kinds.pop() if len(kinds) == 1 else "mixed"

    def validate(self) -> VerificationReport:
        if self._report is None:
            self._report = validate_model(self)
        return self._report

    def compile(self) -> "CompiledDsf":
        if self._compiled is None:
            rep = self.validate()
            if not rep.passed:
                raise InvalidModelError("invalid model: " + "; ".join(map(str, rep.witnesses)))
            self._compiled = CompiledDsf(self)
        return self._compiled

    # -- evaluation -----------------------------------------------------------------------
    def __call__(self, A) -> float:
        """f(A) for a Subset, labels, or an integer bitmask."""
        if isinstance(A, (int, np.integer)):
            return float(self.evaluate_masks(np.array([A], dtype=np.int64))[0])
        return evaluate(self, A)

    def evaluate_masks(self, masks) -> np.ndarray:
        X = masks_to_indicators(masks, self.n)
        return self.compile().forward(X)[0]

    def evaluate_indicators(self, X) -> np.ndarray:
        return self.compile().forward(np.asarray(X, dtype=float))[0]

    def as_set_function(self, name: str = "dsf") -> SetFunction:
        n = self.n

        def ev(mask: int) -> float:
            x = np.zeros(n)
            for i in range(n):
                if mask >> i & 1:
                    x[i] = 1.0
            return float(self.compile().forward(x)[0][0])

        return SetFunction(self.ground, ev, self.evaluate_masks if n <= 62 else None,
                           name=name, meta={"model": self})

    # -- parameters -----------------------------------------------------------------------
    def parameters(self):
        c = self.compile()
        return c.theta.copy(), list(c.labels)

    def with_parameters(self, theta) -> "DsfModel":
        return self.compile().with_theta(theta).to_model()

    def with_final_modular(self, weights) -> "DsfModel":
        return DsfModel(self.ground, self.nodes, self.root, ModularFunction(self.ground, tuple(weights)),
                        self.layer_of, self.frozen)

    def __repr__(self):
        return f"DsfModel(n={self.n}, nodes={len(self.nodes)}, root={self.root!r})"


class CompiledDsf:
    """Flat array form of a valid model, in topological order.

    The parameter vector ``theta`` is laid out as
    [internal weights | ground weights | unit parameters | final modular].
    """

    def __init__(self, model: DsfModel, units=None):
        self.model = model
        order = model.topological_order()
        self.order = order
        nodes = [model.nodes[i] for i in order]
        self.node_ids = [nd.id for nd in nodes]
        pos = {nid: p for p, nid in enumerate(self.node_ids)}
        self.pos = pos
        self.N = len(nodes)
        self.n = model.n
        self.root = pos[model.root]
        self.units = list(units) if units is not None else [nd.unit for nd in nodes]

        int_ptr, int_src, int_w = [0], [], []
        grd_ptr, grd_src, grd_w = [0], [], []
        labels_int, labels_grd, frozen_grd = [], [], []
        glabels = model.ground.labels
        for nd in nodes:
            for pid, w in nd.parents_internal:
                int_src.append(pos[pid])
                int_w.append(w)
                labels_int.append(f"w[{nd.id}<-{pid}]")
            int_ptr.append(len(int_src))
            for a, w in nd.parents_ground:
                grd_src.append(a)
                grd_w.append(w)
                labels_grd.append(f"m[{nd.id}]({glabels[a]})")
                frozen_grd.append(nd.id in model.frozen)
            grd_ptr.append(len(grd_src))
        self.int_ptr = np.array(int_ptr, dtype=np.int64)
        self.int_src = np.array(int_src, dtype=np.int64)
        self.int_w = np.array(int_w, dtype=np.float64)
        self.grd_ptr = np.array(grd_ptr, dtype=np.int64)
        self.grd_src = np.array(grd_src, dtype=np.int64)
        self.grd_w = np.array(grd_w, dtype=np.float64)
        self.m_pm = model.final_modular.as_array()

        self.unit_params = []  # (node position, name)
        for p, u in enumerate(self.units):
            for name in u.learnable():
                self.unit_params.append((p, name))
        self._pack_units()

        E1, E2, U = len(int_w), len(grd_w), len(self.unit_params)
        self.slices = {"internal": slice(0, E1), "ground": slice(E1, E1 + E2),
                       "unit": slice(E1 + E2, E1 + E2 + U),
                       "modular": slice(E1 + E2 + U, E1 + E2 + U + self.n)}
        self.labels = (labels_int + labels_grd
                       + [f"{self.node_ids[p]}.{name}" for p, name in self.unit_params]
                       + [f"m_pm({g})" for g in glabels])
        trainable = np.ones(len(self.labels), dtype=bool)
        trainable[self.slices["ground"]] = ~np.array(frozen_grd, dtype=bool)
        self.trainable = trainable
        # entries that must stay >= 0 (everything but the final modular term)
        nonneg = np.ones(len(self.labels), dtype=bool)
        nonneg[self.slices["modular"]] = False
        self.nonneg = nonneg
        self.floor = np.full(len(self.labels), -np.inf)
        self.floor[nonneg] = 0.0
        self.ceil = np.full(len(self.labels), np.inf)
        for j, (p, name) in enumerate(self.unit_params):
            k = self.slices["unit"].start + j
            self.floor[k] = PARAM_FLOOR.get(name, 0.0)
            self.ceil[k] = PARAM_CEIL.get(name, np.inf)

    def _pack_units(self):
        N = self.N
        self.codes = np.array([u.code for u in self.units], dtype=np.int64)
        self.p0 = np.zeros(N)
        self.p1 = np.zeros(N)
        self.shift = np.array([u.shift for u in self.units])
        bp, sl, ptr = [], [], [0]
        for v, u in enumerate(self.units):
            p = u.params
            if u.kind in ("power",):
                self.p0[v] = p["delta"]
            elif u.kind in ("log_gamma", "truncate", "lin_then_sqrt"):
                self.p0[v] = p["gamma"]
            elif u.kind == "soft_min":
                self.p0[v], self.p1[v] = p["a"], p["c"]
            elif u.kind == "power_convex":
                self.p0[v] = p["p"]
            if u.kind == "piecewise_linear":
                bp.extend(p["breakpoints"])
                sl.extend(p["slopes"])
            else:
                sl.append(0.0)
            ptr.append(len(bp))
        self.pwl_ptr = np.array(ptr, dtype=np.int64)
        self.pwl_bp = np.array(bp, dtype=np.float64)
        self.pwl_sl = np.array(sl, dtype=np.float64)

    # -- parameters -----------------------------------------------------------------------
    @property
    def theta(self) -> np.ndarray:
        unit_vals = [self.units[p].params[name] for p, name in self.unit_params]
        return np.concatenate([self.int_w, self.grd_w, np.array(unit_vals, dtype=float), self.m_pm])

    def with_theta(self, theta) -> "CompiledDsf":
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (len(self.labels),):
            raise InvalidInputError("parameter vector has the wrong length")
        new = object.__new__(CompiledDsf)
        new.__dict__.update(self.__dict__)
        new.int_w = theta[self.slices["internal"]].copy()
        new.grd_w = theta[self.slices["ground"]].copy()
        new.m_pm = theta[self.slices["modular"]].copy()
        uv = theta[self.slices["unit"]]
        if len(uv):
            changes = {}
            for (p, name), val in zip(self.unit_params, uv):
                if self.units[p].params[name] != val:
                    changes.setdefault(p, {})[name] = float(val)
            if changes:
                units = list(self.units)
                for p, kw in changes.items():
                    units[p] = units[p].with_params(**kw)
                new.units = units
                new._pack_units()
        return new

    def to_model(self) -> DsfModel:
        m = self.model
        nodes = []
        by_pos = {}
        for p in range(self.N):
            nid = self.node_ids[p]
            i0, i1 = self.int_ptr[p], self.int_ptr[p + 1]
            g0, g1 = self.grd_ptr[p], self.grd_ptr[p + 1]
            by_pos[p] = DsfNode(nid, self.units[p],
                                tuple((self.node_ids[self.int_src[e]], float(self.int_w[e])) for e in range(i0, i1)),
                                tuple((int(self.grd_src[e]), float(self.grd_w[e])) for e in range(g0, g1)))
        # keep the caller's node order
        for i in range(len(m.nodes)):
            nodes.append(by_pos[self.order.index(i)])
        return DsfModel(m.ground, nodes, m.root, ModularFunction(m.ground, tuple(self.m_pm)),
                        m.layer_of, m.frozen)

    # -- passes ---------------------------------------------------------------------------
    def forward(self, X, gates=None, backend=None):
        return _kernels.forward(self, X, gates, backend)

    def backward(self, X, Z, P, coef=None, gates=None, need_input=False, cap=SLOPE_CAP):
        """Reverse pass. Returns (sum_b coef_b d f_b / d theta, dX or None, capped)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        B = X.shape[0]
        coef = np.ones(B) if coef is None else np.asarray(coef, dtype=float)
        gates = np.ones((B, self.N)) if gates is None else np.broadcast_to(gates, (B, self.N))
        abar = np.zeros((B, self.N))
        abar[:, self.root] = coef
        g_int = np.zeros(len(self.int_w))
        g_grd = np.zeros(len(self.grd_w))
        g_unit = np.zeros(len(self.unit_params))
        dX = np.zeros((B, self.n)) if need_input else None
        capped = False
        uidx = {}
        for j, (p, name) in enumerate(self.unit_params):
            uidx.setdefault(p, []).append((j, name))
        for v in range(self.N - 1, -1, -1):
            a = abar[:, v] * gates[:, v]
            if not np.any(a):
                continue
            z = Z[:, v]
            u = self.units[v]
            s = u.mid_slope(z, cap)
            if np.any((s >= cap) & (a != 0)):
                capped = True
            dz = a * s
            i0, i1 = self.int_ptr[v], self.int_ptr[v + 1]
            if i1 > i0:
                src = self.int_src[i0:i1]
                g_int[i0:i1] = dz @ P[:, src]
                abar[:, src] += dz[:, None] * self.int_w[i0:i1]
            g0, g1 = self.grd_ptr[v], self.grd_ptr[v + 1]
            if g1 > g0:
                src = self.grd_src[g0:g1]
                g_grd[g0:g1] = dz @ X[:, src]
                if need_input:
                    dX[:, src] += dz[:, None] * self.grd_w[g0:g1]
            for j, name in uidx.get(v, ()):
                g_unit[j] = a @ param_derivative(u, name, z)
        g_m = coef @ X
        if need_input:
            dX += self.m_pm
        grad = np.concatenate([g_int, g_grd, g_unit, g_m])
        return grad, dX, capped

    def kink_signature(self, Z) -> np.ndarray:
        """Which side of every kink each node's input sits on (for FD checks)."""
        sig = []
        for v, u in enumerate(self.units):
            ks = np.asarray(u.kinks())
            z = Z[:, v]
            if ks.size:
                sig.append(np.searchsorted(ks, z, side="left") * 2 + np.isin(z, ks))
            else:
                sig.append(np.zeros_like(z, dtype=np.int64))
        return np.stack(sig, axis=1)


# -- module-level operations ------------------------------------------------------------

def _subset_vec(f: DsfModel, A) -> np.ndarray:
    if not isinstance(A, Subset):
        A = Subset.of(f.ground, A)
    _check_same(f.ground, A.ground)
    x = np.zeros(f.n)
    x[A.ids()] = 1.0
    return x


def _check_x(f: DsfModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (f.n,):
        raise InvalidInputError(f"input vector must have length {f.n}")
    if np.any(x < 0) or not np.all(np.isfinite(x)):
        raise InvalidInputError("input vector must be finite and >= 0")
    return x


def evaluate(f: DsfModel, A) -> float:
    """f(A) = psi_root(1_A) + m_pm(A)."""
    return float(f.compile().forward(_subset_vec(f, A))[0][0])


def concave_extension(f: DsfModel, x) -> float:
    """The same forward pass on a real vector x >= 0."""
    return float(f.compile().forward(_check_x(f, x))[0][0])


def gradient_weights(f: DsfModel, A) -> ParamGradient:
    """d f(A) / d theta for every trainable parameter (midpoint rule at kinks).

    Ground weights of frozen (embedding) nodes are left out.
    """
    c = f.compile()
    x = _subset_vec(f, A)[None, :]
    _, Z, P = c.forward(x)
    g, _, capped = c.backward(x, Z, P)
    keep = np.flatnonzero(c.trainable)
    return ParamGradient([c.labels[i] for i in keep], g[keep], capped)


def gradient_input(f: DsfModel, x, slope_cap: float = SLOPE_CAP):
    """A supergradient of the extension at x. Returns (vector, capped flag)."""
    c = f.compile()
    x = _check_x(f, x)[None, :]
    _, Z, P = c.forward(x)
    _, dX, capped = c.backward(x, Z, P, need_input=True, cap=slope_cap)
    return dX[0], capped


def evaluate_difference(f1: DsfModel, f2: DsfModel, A) -> float:
    """f1(A) - f2(A) on a shared ground set."""
    _check_same(f1.ground, f2.ground)
    return evaluate(f1, A) - evaluate(f2, A)


# -- multivariate evaluation ---------------------------------------------------------------

@dataclass(frozen=True)
class MultivariateAssignment:
    """sigma[j] is the layer whose units argument j switches on (sigma[0] = 0 is the
    ground layer). ``modulars[j-1]`` optionally adds a signed modular term over layer
    sigma[j]'s units, in ``layer_ground`` order."""

    sigma: tuple
    modulars: tuple = ()

    def __post_init__(self):
        s = tuple(int(x) for x in self.sigma)
        if not s or s[0] != 0:
            raise InvalidInputError("sigma must start with layer 0")
        if any(b <= a for a, b in zip(s, s[1:])):
            raise InvalidInputError("sigma must be strictly increasing")
        object.__setattr__(self, "sigma", s)

    @property
    def k(self) -> int:
        return len(self.sigma)


def layer_ground(f: DsfModel, layer: int) -> GroundSet:
    """Ground set made of the node ids in a hidden layer (model order)."""
    if not f.layer_of:
        raise InvalidInputError("model has no layer annotation")
    ids = [nd.id for nd in f.nodes if f.layer_of.get(nd.id) == layer]
    if not ids:
        raise InvalidInputError(f"layer {layer} has no units")
    return GroundSet(ids)


def _gates_for(f: DsfModel, asg: MultivariateAssignment, args) -> tuple[np.ndarray, float]:
    c = f.compile()
    gates = np.ones(c.N)
    extra = 0.0
    for j in range(1, asg.k):
        lg = layer_ground(f, asg.sigma[j])
        A = args[j]
        if not isinstance(A, Subset):
            A = Subset.of(lg, A)
        _check_same(lg, A.ground)
        for i, nid in enumerate(lg.labels):
            if i not in A:
                gates[c.pos[nid]] = 0.0
        if len(asg.modulars) >= j and asg.modulars[j - 1] is not None:
            w = np.asarray(asg.modulars[j - 1], dtype=float)
            extra += float(sum(w[i] for i in A.ids()))
    return gates, extra


def evaluate_multivariate(f: DsfModel, asg: MultivariateAssignment, args) -> float:
    """Forward pass where argument j switches on the units of layer sigma[j] it contains."""
    if len(args) != asg.k:
        raise InvalidInputError("need one argument per entry of sigma")
    if asg.k > 1 and not f.layer_of:
        raise InvalidInputError("multivariate evaluation needs a layered model")
    gates, extra = _gates_for(f, asg, args)
    x = _subset_vec(f, args[0])
    return float(f.compile().forward(x, gates[None, :])[0][0]) + extra


# -- validation --------------------------------------------------------------------------

def validate_model(f: DsfModel) -> VerificationReport:
    """Structural checks; failures are listed as witnesses."""
    issues = []
    ids = [nd.id for nd in f.nodes]
    idset = set(ids)
    if len(idset) != len(ids):
        issues.append("duplicate node ids")
    if f.root not in idset:
        issues.append(f"root {f.root!r} is not a node")
    for nd in f.nodes:
        for pid, w in nd.parents_internal:
            if pid not in idset:
                issues.append(f"node {nd.id!r} has unknown parent {pid!r}")
            if not (w >= 0 and math.isfinite(w)):
                issues.append(f"negative or non-finite weight on edge {pid}->{nd.id} ({w})")
        for a, w in nd.parents_ground:
            if not 0 <= a < f.n:
                issues.append(f"node {nd.id!r} has out-of-range element {a}")
                continue
            if not (w >= 0 and math.isfinite(w)):
                issues.append(f"negative or non-finite weight on edge {f.ground.labels[a]}->{nd.id} ({w})")
        v0 = float(nd.unit.value(0.0))
        if v0 != 0.0:
            issues.append(f"unit of {nd.id!r} is not normalized (phi(0)={v0})")
    order = f.topological_order()
    if len(order) != len(f.nodes):
        cyc = sorted(set(range(len(f.nodes))) - set(order))
        issues.append("cycle among nodes " + ",".join(f.nodes[i].id for i in cyc))
    # every node must feed the root; the root feeds nothing
    if f.root in idset:
        parents = {nd.id: [p for p, _ in nd.parents_internal if p in idset] for nd in f.nodes}
        seen, stack = set(), [f.root]
        while stack:
            v = stack.pop()
            if v in seen:
                continue
            seen.add(v)
            stack.extend(parents[v])
        for nid in ids:
            if nid not in seen:
                issues.append(f"node {nid!r} does not feed the root")
        for nd in f.nodes:
            if any(p == f.root for p, _ in nd.parents_internal):
                issues.append(f"root {f.root!r} has a child {nd.id!r}")
    curv = f.curvature()
    if curv == "mixed":
        issues.append("mixed curvature: concave and convex units in one model")
    if f.layer_of:
        for nd in f.nodes:
            lv = f.layer_of.get(nd.id)
            if lv is None or lv < 1:
                issues.append(f"node {nd.id!r} lacks a layer >= 1")
                continue
            for pid, _ in nd.parents_internal:
                if pid in f.layer_of and f.layer_of[pid] >= lv:
                    issues.append(f"edge {pid}->{nd.id} does not go up a layer")
    family = {"concave": "dsf", "convex": "deep_supermodular", "linear": "modular"}.get(curv, "invalid")
    return VerificationReport("valid_model", not issues, issues, 0.0, len(f.nodes),
                              {"family": family})
