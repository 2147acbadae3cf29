"""Brute-force verification oracles and the surplus / separation machinery."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple, Optional, Sequence

import numpy as np

from . import _kernels
from .concave import ConcaveUnit
from .core import (GroundSet, InvalidInputError, SetFunction, Subset, VerificationReport,
                   _check_same, masks_to_indicators, popcount)
from .dsf import DsfModel, MultivariateAssignment, gradient_input, layer_ground

BRUTE_FORCE_CAP = 16
MAX_WITNESSES = 32
FLOAT_TOL = 1e-9

PROPERTIES = ("submodular", "supermodular", "monotone", "normalized", "modular")


def as_set_function(f) -> SetFunction:
    if isinstance(f, SetFunction):
        return f
    if isinstance(f, DsfModel):
        return f.as_set_function()
    raise InvalidInputError("expected a SetFunction or DsfModel")


def _tol(f: SetFunction, tol):
    if tol is not None:
        return float(tol)
    return 0.0 if f.exact else FLOAT_TOL


def _sub(g: GroundSet, mask: int) -> Subset:
    return Subset(g, mask)


# -- property verification -----------------------------------------------------------------

def _pairwise(f: SetFunction, table, sign: float, tol: float, name: str, max_w: int):
    n = f.n
    worst, count = _kernels.local_violations(table, n, sign, tol)
    witnesses = []
    for A in np.flatnonzero(count):
        A = int(A)
        for w in range(n):
            if A >> w & 1:
                continue
            for v in range(n):
                if v == w or A >> v & 1:
                    continue
                bw, bv = 1 << w, 1 << v
                d = sign * (table[A | bw | bv] - table[A | bw] - table[A | bv] + table[A])
                if d > tol:
                    witnesses.append((_sub(f.ground, A), _sub(f.ground, A | bw), f.ground.labels[v]))
                    if len(witnesses) >= max_w:
                        break
            if len(witnesses) >= max_w:
                break
        if len(witnesses) >= max_w:
            break
    mx = float(worst.max()) if worst.size else 0.0
    checked = int((1 << n) * n * max(n - 1, 0) // 4) if n else 0
    return VerificationReport(name, not witnesses, witnesses, mx, len(table), {"triples": checked})


def _monotone(f: SetFunction, table, tol, max_w):
    n = f.n
    masks = np.arange(len(table), dtype=np.int64)
    witnesses, mx = [], 0.0
    drops = np.zeros(len(table))
    for v in range(n):
        sel = masks[(masks >> v & 1) == 0]
        d = table[sel] - table[sel | (1 << v)]
        drops[sel] = np.maximum(drops[sel], d)
    bad = np.flatnonzero(drops > tol)
    for A in bad:
        A = int(A)
        for v in range(n):
            if not A >> v & 1 and table[A] - table[A | 1 << v] > tol:
                witnesses.append((_sub(f.ground, A), f.ground.labels[v]))
                if len(witnesses) >= max_w:
                    break
        if len(witnesses) >= max_w:
            break
    if bad.size:
        mx = float(drops.max())
    return VerificationReport("monotone", not witnesses, witnesses, mx, len(table))


def verify_properties(f, props=("submodular", "monotone", "normalized"), tol=None,
                      cap: int = BRUTE_FORCE_CAP, max_witnesses: int = MAX_WITNESSES) -> VerificationReport:
    """Exhaustive check of the requested properties.

    Submodularity uses the local test f(v|A) >= f(v|A+w) over all (A, v, w),
    which is O(2^n n^2) and equivalent to the A subset B form. Witnesses are
    (A, A+w, v) triples, lowest A first. Tolerance is 0 for exact handles and
    1e-9 otherwise.
    """
    f = as_set_function(f)
    if f.n > cap:
        raise InvalidInputError(f"ground set of size {f.n} exceeds the brute-force cap {cap}")
    if isinstance(props, str):
        props = (props,)
    for p in props:
        if p not in PROPERTIES:
            raise InvalidInputError(f"unknown property {p!r}")
    t = _tol(f, tol)
    table = f.table()
    results = {}
    for p in props:
        if p == "submodular":
            r = _pairwise(f, table, 1.0, t, p, max_witnesses)
        elif p == "supermodular":
            r = _pairwise(f, table, -1.0, t, p, max_witnesses)
        elif p == "modular":
            a = _pairwise(f, table, 1.0, t, p, max_witnesses)
            b = _pairwise(f, table, -1.0, t, p, max_witnesses)
            w = (a.witnesses + b.witnesses)[:max_witnesses]
            r = VerificationReport(p, not w, w, max(a.max_violation, b.max_violation), len(table))
        elif p == "monotone":
            r = _monotone(f, table, t, max_witnesses)
        else:
            v = float(table[0])
            ok = abs(v) <= t
            r = VerificationReport(p, ok, [] if ok else [_sub(f.ground, 0)], abs(v), 1)
        results[p] = r
    witnesses = [(p, w) for p, r in results.items() for w in r.witnesses][:max_witnesses]
    return VerificationReport("+".join(props), all(r.passed for r in results.values()), witnesses,
                              max((r.max_violation for r in results.values()), default=0.0),
                              len(table), {"results": results, "tolerance": t})


# -- surplus machinery ----------------------------------------------------------------------

def _subset(f: SetFunction, A) -> Subset:
    return A if isinstance(A, Subset) else Subset.of(f.ground, A)


def surplus(f, A) -> float:
    """sum of singleton values minus the value of the set."""
    f = as_set_function(f)
    A = _subset(f, A)
    _check_same(f.ground, A.ground)
    return sum(f(1 << a) for a in A.ids()) - (f(A.bits) if A.bits else 0.0)


def grouped_surplus(f, parts: Sequence) -> float:
    """sum_i f(A_i) - f(union A_i) for pairwise disjoint parts."""
    f = as_set_function(f)
    parts = [_subset(f, p) for p in parts]
    union = 0
    for p in parts:
        if union & p.bits:
            raise InvalidInputError("grouped surplus needs disjoint parts")
        union |= p.bits
    return sum(f(p.bits) for p in parts) - f(union)


def is_modular_at(f, B, tol=None) -> bool:
    f = as_set_function(f)
    B = _subset(f, B)
    return abs(f(B.bits) - sum(f(1 << b) for b in B.ids())) <= _tol(f, tol)


def check_abc_function(f, A, B, C, tol=None) -> str:
    """'strong_abc', 'abc' or 'none' according to the six defining equalities."""
    f = as_set_function(f)
    A, B, C = (_subset(f, X) for X in (A, B, C))
    if not (A.bits and B.bits and C.bits):
        raise InvalidInputError("parts must be non-empty")
    if A.bits & B.bits or B.bits & C.bits or A.bits & C.bits:
        raise InvalidInputError("parts must be disjoint")
    t = _tol(f, tol)
    fa, fb, fc = f(A.bits), f(B.bits), f(C.bits)
    vals = [f(A.bits | B.bits | C.bits), f(A.bits | B.bits), f(B.bits | C.bits), f(C.bits | A.bits),
            fa + fb, fb + fc, fc + fa]
    if max(vals) - min(vals) > t:
        return "none"
    # the equalities force f(A) = f(B) = f(C)
    assert max(fa, fb, fc) - min(fa, fb, fc) <= 2 * t + 1e-12
    return "strong_abc" if vals[0] > t else "abc"


def check_fk_membership(f, k: int, tol=None) -> VerificationReport:
    """Strong (V_s1, V_s2, V_s3) conditions on every node of the 3-ary partition tree."""
    from .zoo import fk_blocks
    f = as_set_function(f)
    if f.n != 3 ** k:
        raise InvalidInputError(f"F_k membership needs |V| = 3^k = {3 ** k}")
    witnesses = []
    triples = fk_blocks(k)
    t = _tol(f, tol)
    if not f(f.ground.full()) > t:
        witnesses.append(("f(V) <= 0",))
    for parts in triples:
        subs = [Subset.of(f.ground, p) for p in parts]
        verdict = check_abc_function(f, *subs, tol=tol)
        if verdict != "strong_abc":
            witnesses.append(tuple(subs) + (verdict,))
    return VerificationReport(f"F_{k}", not witnesses, witnesses[:MAX_WITNESSES], 0.0, len(triples))


# -- antitone checks -----------------------------------------------------------------------

def antitone_cross_differences(f: DsfModel, samples: int = 10000, epsilon: float = 1e-3,
                               seed: int = 0, tol: float = FLOAT_TOL, scale: float = 2.0,
                               gradient_pairs: Optional[int] = None) -> VerificationReport:
    """Sampled check that the extension has non-positive cross differences and an
    antitone (componentwise non-increasing) supergradient.

    x is drawn uniformly from [0, scale]^n; for each sample one random pair i != j
    is tested. Gradient antitonicity is tested on pairs x <= y.
    """
    rng = np.random.default_rng(seed)
    c = f.compile()
    n = f.n
    witnesses, worst = [], 0.0
    if n >= 2:
        X = rng.uniform(0.0, scale, size=(samples, n))
        i = rng.integers(0, n, size=samples)
        j = (i + rng.integers(1, n, size=samples)) % n
        rows = np.arange(samples)
        Xi, Xj, Xij = X.copy(), X.copy(), X.copy()
        Xi[rows, i] += epsilon
        Xj[rows, j] += epsilon
        Xij[rows, i] += epsilon
        Xij[rows, j] += epsilon
        fx = c.forward(X)[0]
        d = c.forward(Xij)[0] + fx - c.forward(Xi)[0] - c.forward(Xj)[0]
        # numbers of this size lose ~1e-16 relative precision per term
        slack = tol + 4e-16 * np.abs(fx)
        bad = np.flatnonzero(d > slack)
        if bad.size:
            worst = float(d[bad].max())
            for b in bad[:MAX_WITNESSES]:
                witnesses.append(("cross", X[b].round(6).tolist(), int(i[b]), int(j[b]), float(d[b])))
    gp = min(samples, 2000) if gradient_pairs is None else gradient_pairs
    grad_bad = 0
    for _ in range(gp):
        x = rng.uniform(0.0, scale, size=n)
        y = x + rng.uniform(0.0, scale, size=n) * (rng.random(n) < 0.5)
        gx, _ = gradient_input(f, x)
        gy, _ = gradient_input(f, y)
        viol = gy - gx
        lim = tol * np.maximum(1.0, np.abs(gx))
        if np.any(viol > lim):
            grad_bad += 1
            worst = max(worst, float(viol.max()))
            if len(witnesses) < MAX_WITNESSES:
                witnesses.append(("gradient", x.round(6).tolist(), y.round(6).tolist(), float(viol.max())))
    return VerificationReport("antitone", not witnesses, witnesses, worst, samples + gp,
                              {"gradient_violations": grad_bad, "epsilon": epsilon})


# -- two-layer SCMM classifier and the symmetrization operator ----------------------------------

SIX = GroundSet("abcdef")
_ABC = 0b000111
_DEF = 0b111000


def _card_trunc(mask_sel: int, cap: float, name: str) -> SetFunction:
    from .zoo import _popcount_array

    def batch(masks):
        return np.minimum(_popcount_array(np.asarray(masks) & mask_sel), cap).astype(float)
    return SetFunction(SIX, lambda m: float(min(popcount(m & mask_sel), cap)), batch, exact=True, name=name)


def _mod_trunc(w, name: str) -> SetFunction:
    w = np.asarray(w, dtype=float)

    def batch(masks):
        return np.minimum(masks_to_indicators(masks, 6) @ w, 1.0)
    return SetFunction(SIX, lambda m: float(batch(np.array([m]))[0]), batch, name=name)


ASYMMETRIC_WEIGHTS = (
    (1, 1, 0, .5, .5, .5), (0, 1, 1, .5, .5, .5), (1, 0, 1, .5, .5, .5),
    (.5, .5, .5, 1, 1, 0), (.5, .5, .5, 0, 1, 1), (.5, .5, .5, 1, 0, 1),
)


def _sum_fns(fns) -> SetFunction:
    out = fns[0]
    for g in fns[1:]:
        out = out + g
    return out


def basis_functions() -> dict:
    """The five symmetric functions f1..f5 on the canonical six-element ground set."""
    f3 = _card_trunc(_ABC, 1, "") + _card_trunc(_DEF, 1, "")
    f4 = _card_trunc(_ABC, 2, "") + _card_trunc(_DEF, 2, "")
    f5 = _sum_fns([_mod_trunc(w, "") for w in ASYMMETRIC_WEIGHTS]).scaled(1.0 / 6.0)
    f3.name, f4.name, f5.name = "f3", "f4", "f5"
    return {"f1": _card_trunc(0b111111, 1, "f1"), "f2": _card_trunc(0b111111, 2, "f2"),
            "f3": f3, "f4": f4, "f5": f5}


@dataclass
class ScmmClassification:
    verdict: str  # 'is_scmm' or 'not_scmm'
    c1: float
    c2: float
    c3: float
    c4: float
    violated: list = field(default_factory=list)
    terms: list = field(default_factory=list)  # (coefficient, description)

    @property
    def is_scmm(self) -> bool:
        return self.verdict == "is_scmm"


def _phi_values(phi: ConcaveUnit):
    return [float(phi.value(float(x))) for x in (1, 2, 3, 4)]


def classify_two_layer_scmm(phi: ConcaveUnit, tol: float = 1e-12) -> ScmmClassification:
    """Decide whether phi(min(|A cap abc|,2) + min(|A cap def|,2)) is an SCMM."""
    if not isinstance(phi, ConcaveUnit) or phi.curvature != "concave":
        raise InvalidInputError("classifier needs a concave unit")
    p1, p2, p3, p4 = _phi_values(phi)
    c1 = -p1 + 3.5 * p2 - 4 * p3 + 1.5 * p4
    c2 = 2 * p1 + p2 - 4 * p3 + 2 * p4
    c3 = -p2 + 2 * p3 - p4
    c4 = -p3 + p4
    violated = []
    if c1 < -tol:
        violated.append(f"-phi(1)+3.5phi(2)-4phi(3)+1.5phi(4) = {c1:.6g} < 0")
    if c2 < -tol:
        violated.append(f"2phi(1)+phi(2)-4phi(3)+2phi(4) = {c2:.6g} < 0")
    terms = []
    if not violated:
        terms = [(c2, "min(|A|,1)"), (c1, "min(|A|,2)"),
                 (c3, "min(|A cap abc|,1) + min(|A cap def|,1)"),
                 (c4, "min(|A cap abc|,2) + min(|A cap def|,2)")]
        for w in ASYMMETRIC_WEIGHTS:
            terms.append((c3, f"min({w} . 1_A, 1)"))
    return ScmmClassification("not_scmm" if violated else "is_scmm", c1, c2, c3, c4, violated, terms)


def expand_two_layer_scmm(phi: ConcaveUnit) -> SetFunction:
    """The explicit SCMM sum equal to the nested two-layer function."""
    cls = classify_two_layer_scmm(phi)
    if not cls.is_scmm:
        raise InvalidInputError("phi fails the SCMM conditions: " + "; ".join(cls.violated))
    b = basis_functions()
    parts = [b["f1"].scaled(cls.c2), b["f2"].scaled(cls.c1), b["f3"].scaled(cls.c3), b["f4"].scaled(cls.c4)]
    parts += [_mod_trunc(w, "").scaled(cls.c3) for w in ASYMMETRIC_WEIGHTS]
    out = _sum_fns(parts)
    out.name = "scmm_expansion"
    return out


def _symmetry_maps():
    maps = []
    for pa in itertools.permutations(range(3)):
        for pd in itertools.permutations(range(3, 6)):
            perm = list(pa) + list(pd)
            maps.append(perm)
            maps.append([(x + 3) % 6 for x in perm])  # then swap blocks
    return maps


_MAPS = _symmetry_maps()


def _apply(perm, mask: int) -> int:
    out = 0
    for i in range(6):
        if mask >> i & 1:
            out |= 1 << perm[i]
    return out


def _check_six(h: SetFunction):
    if h.n != 6:
        raise InvalidInputError("symmetrization needs a six-element ground set")


def symmetrize(h) -> SetFunction:
    """E h: average of h over the 72 symmetries (permutations within abc and def,
    with and without swapping the blocks)."""
    h = as_set_function(h)
    _check_six(h)
    tab = h.table()
    sym = np.array([np.mean([tab[_apply(p, m)] for p in _MAPS]) for m in range(64)])
    return SetFunction(h.ground, lambda m: float(sym[m]), lambda ms: sym[ms], name=f"E{h.name}")


class FiveVector(NamedTuple):
    v10: Fraction
    v20: Fraction
    v11: Fraction
    v21: Fraction
    v22: Fraction


# canonical representatives: (1,0)={a}, (2,0)={a,b}, (1,1)={a,d}, (2,1)={a,b,d}, (2,2)={a,b,d,e}
FIVE_SETS = (0b000001, 0b000011, 0b001001, 0b001011, 0b011011)


def as_rational(x: float, max_den: int = 10 ** 6) -> Fraction:
    """Small-denominator fraction within float rounding of x, else the exact float."""
    exact = Fraction(x)
    near = exact.limit_denominator(max_den)
    if abs(float(near) - x) <= 1e-12 * max(1.0, abs(x)):
        return near
    return exact


def symmetrize_five_vector(h) -> FiveVector:
    """Eh at the five canonical (n1, n2) sets as fractions.

    Each value of h is read back as a rational (exact for dyadic values, and
    recovered for small-denominator rationals carried in floats).
    """
    h = as_set_function(h)
    _check_six(h)
    out = []
    for m in FIVE_SETS:
        tot = sum((as_rational(h(_apply(p, m))) for p in _MAPS), Fraction(0))
        out.append(tot / len(_MAPS))
    return FiveVector(*out)


# -- multivariate lattice check -----------------------------------------------------------------

def verify_k_multi_submodular(f: Optional[DsfModel], asg: MultivariateAssignment, evaluator=None,
                              dims: Optional[Sequence[int]] = None, tol: float = FLOAT_TOL,
                              cap: int = BRUTE_FORCE_CAP) -> VerificationReport:
    """Exhaustive check of f(X v Y) + f(X ^ Y) <= f(X) + f(Y) over argument tuples.

    The product of Boolean lattices is the lattice of subsets of the disjoint
    union of the argument domains, so the local pairwise test applies. Pass
    ``evaluator`` (a map from a tuple of bitmasks to a value) and ``dims`` to
    check an arbitrary k-argument function.
    """
    if evaluator is None:
        if f is None:
            raise InvalidInputError("need a model or an evaluator")
        grounds = [f.ground] + [layer_ground(f, s) for s in asg.sigma[1:]]
        dims = [g.size for g in grounds]
    else:
        if dims is None or len(dims) != asg.k:
            raise InvalidInputError("evaluator needs one dimension per argument")
        grounds = [GroundSet.range(d, f"arg{j}_") for j, d in enumerate(dims)]
    total = sum(dims)
    if total > cap:
        raise InvalidInputError(f"argument domains total {total} > brute-force cap {cap}")
    offs = np.cumsum([0] + list(dims))
    masks = np.arange(1 << total, dtype=np.int64)
    parts = [(masks >> offs[j]) & ((1 << dims[j]) - 1) for j in range(asg.k)]
    if evaluator is None:
        table = _multivariate_table(f, asg, grounds, parts)
    else:
        table = np.array([evaluator(tuple(int(p[i]) for p in parts)) for i in range(len(masks))], float)
    joint = GroundSet([f"{j}:{lab}" for j, g in enumerate(grounds) for lab in g.labels])
    fake = SetFunction(joint, lambda m: float(table[m]), lambda ms: table[ms])
    rep = _pairwise(fake, table, 1.0, tol, f"{asg.k}-multi-submodular", MAX_WITNESSES)

    def split(sub: Subset):
        return tuple(Subset(grounds[j], (sub.bits >> int(offs[j])) & ((1 << dims[j]) - 1))
                     for j in range(asg.k))

    rep.witnesses = [(split(A), split(B), v) for A, B, v in rep.witnesses]
    return rep


def _multivariate_table(f: DsfModel, asg, grounds, parts) -> np.ndarray:
    c = f.compile()
    B = len(parts[0])
    X = masks_to_indicators(parts[0], f.n)
    gates = np.ones((B, c.N))
    extra = np.zeros(B)
    for j in range(1, asg.k):
        lg = grounds[j]
        for i, nid in enumerate(lg.labels):
            on = (parts[j] >> i) & 1
            gates[:, c.pos[nid]] = on
            if len(asg.modulars) >= j and asg.modulars[j - 1] is not None:
                extra += on * float(asg.modulars[j - 1][i])
    return c.forward(X, gates)[0] + extra
