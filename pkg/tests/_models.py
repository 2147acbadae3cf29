"""Random model generators shared by the test modules."""
import numpy as np

from dsfkit import concave as C
from dsfkit.core import GroundSet
from dsfkit.dsf import DsfModel, DsfNode

SMOOTH = [C.sqrt, lambda: C.log_gamma(1.3), lambda: C.power(0.4), C.one_minus_exp,
          C.shifted_sigmoid, lambda: C.soft_min(1.0, 2.0), lambda: C.lin_then_sqrt(0.8)]
KINKED = [lambda: C.truncate(1.7), lambda: C.piecewise_linear([0.5, 1.5], [1.0, 0.6, 0.2])]
CONVEX = [C.square, C.expm1, lambda: C.power_convex(1.5)]


def random_dsf(seed, n=6, layers=2, width=3, kinds=None, signed_modular=True, density=0.7):
    """A random layered DSF: ``layers`` hidden layers then a root unit."""
    rng = np.random.default_rng(seed)
    kinds = kinds or SMOOTH + KINKED
    nodes, prev, layer_of = [], [], {}
    for d in range(layers):
        cur, pars = [], []
        for i in range(width):
            if prev:
                pars.append([(p, rng.uniform(0.1, 1.0)) for p in prev if rng.random() < density])
            else:
                pars.append([(a, rng.uniform(0.1, 1.0)) for a in range(n) if rng.random() < density] or [(0, 0.5)])
        if prev:
            # every node of the previous layer needs a child
            used = {p for par in pars for p, _ in par}
            for k, p in enumerate(prev):
                if p not in used:
                    pars[k % width].append((p, rng.uniform(0.1, 1.0)))
        for i in range(width):
            nid = f"L{d + 1}_{i}"
            unit = kinds[rng.integers(len(kinds))]()
            if prev:
                nodes.append(DsfNode(nid, unit, pars[i] or [(prev[0], 0.5)], ()))
            else:
                nodes.append(DsfNode(nid, unit, (), pars[i]))
            layer_of[nid] = d + 1
            cur.append(nid)
        prev = cur
    root = kinds[rng.integers(len(kinds))]()
    nodes.append(DsfNode("root", root, [(p, rng.uniform(0.1, 1.0)) for p in prev], ()))
    layer_of["root"] = layers + 1
    m = rng.normal(size=n) if signed_modular else np.zeros(n)
    return DsfModel(GroundSet.range(n), nodes, "root", m, layer_of)


def random_laminar(seed, n):
    """A random laminar family on n elements with random capacities."""
    from dsfkit.zoo import LaminarTree
    rng = np.random.default_rng(seed)

    def build(members, depth):
        kids = []
        if len(members) >= 2 and depth < 3:
            rest = list(members)
            rng.shuffle(rest)
            while len(rest) >= 2 and rng.random() < 0.7:
                k = int(rng.integers(1, len(rest) + 1))
                block, rest = rest[:k], rest[k:]
                kids.append(build(sorted(block), depth + 1))
        cap = int(rng.integers(0, len(members) + 1))
        return LaminarTree(members, cap, kids)

    return build(list(range(n)), 0)
