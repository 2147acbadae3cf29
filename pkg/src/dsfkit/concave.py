"""Scalar nonlinearities: normalized monotone concave units and convex mirrors.

Every unit satisfies phi(0) = 0. An optional ``shift`` s >= 0 turns phi into
phi(x + s) - phi(s), which is how biases are carried.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .core import InvalidInputError

SLOPE_CAP = 1e12

# integer codes shared with the compiled kernels
KIND_CODES = {
    "identity": 0,
    "sqrt": 1,
    "power": 2,
    "log_gamma": 3,
    "truncate": 4,
    "one_minus_exp": 5,
    "shifted_sigmoid": 6,
    "soft_min": 7,
    "lin_then_sqrt": 8,
    "piecewise_linear": 9,
    "square": 10,
    "power_convex": 11,
    "expm1": 12,
}
CONVEX_KINDS = {"square", "power_convex", "expm1"}

# primary parameter per kind: (name, default); soft_min has two
_PARAMS = {
    "identity": (),
    "sqrt": (),
    "power": (("delta", 0.5),),
    "log_gamma": (("gamma", 1.0),),
    "truncate": (("gamma", 1.0),),
    "one_minus_exp": (),
    "shifted_sigmoid": (),
    "soft_min": (("a", 1.0), ("c", 1.0)),
    "lin_then_sqrt": (("gamma", 1.0),),
    "piecewise_linear": (),
    "square": (),
    "power_convex": (("p", 2.0),),
    "expm1": (),
}
# parameters with a closed-form derivative that learners may train
LEARNABLE = {
    "power": ("delta",),
    "log_gamma": ("gamma",),
    "truncate": ("gamma",),
    "lin_then_sqrt": ("gamma",),
}
# lower bounds used by projection (shift is handled separately)
PARAM_FLOOR = {"delta": 1e-6, "gamma": 1e-9}
PARAM_CEIL = {"delta": 1.0 - 1e-6}

_ALIASES = {"log": "log_gamma", "sigmoid": "shifted_sigmoid", "min": "truncate",
            "linear": "identity", "pwl": "piecewise_linear", "exp": "expm1"}


class SupergradientInterval(NamedTuple):
    d_min: float
    d_max: float

    @property
    def mid(self) -> float:
        return 0.5 * (self.d_min + self.d_max)


@dataclass(frozen=True)
class ConcaveUnit:
    """A named nonlinearity. Use the module-level constructors for convenience."""

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        kind = _ALIASES.get(self.kind, self.kind)
        if kind not in KIND_CODES:
            raise InvalidInputError(f"unknown unit kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        p = dict(self.params)
        clean = {}
        for name, default in _PARAMS[kind]:
            clean[name] = float(p.pop(name, default))
        clean["shift"] = float(p.pop("shift", 0.0))
        if kind == "piecewise_linear":
            bps = [float(b) for b in p.pop("breakpoints", [])]
            slopes = [float(s) for s in p.pop("slopes", [])]
            curv = p.pop("curvature", None)
            clean["breakpoints"] = tuple(bps)
            clean["slopes"] = tuple(slopes)
            clean["curvature"] = curv or _pwl_curvature(slopes)
        if p:
            raise InvalidInputError(f"unexpected parameters for {kind}: {sorted(p)}")
        object.__setattr__(self, "params", clean)
        self._validate()

    # -- validation --------------------------------------------------------------
    def _validate(self):
        p, k = self.params, self.kind
        if not all(math.isfinite(v) for v in p.values() if isinstance(v, float)):
            raise InvalidInputError("unit parameters must be finite")
        if p["shift"] < 0:
            raise InvalidInputError("shift must be >= 0")
        if k == "power" and not 0.0 < p["delta"] < 1.0:
            raise InvalidInputError("power unit needs delta in (0,1)")
        if k in ("log_gamma", "truncate", "lin_then_sqrt") and p["gamma"] <= 0:
            raise InvalidInputError(f"{k} needs gamma > 0")
        if k == "soft_min" and (p["a"] < -1 or p["c"] <= 0):
            raise InvalidInputError("soft_min needs a >= -1 and c > 0")
        if k == "power_convex" and p["p"] < 1:
            raise InvalidInputError("power_convex needs exponent >= 1")
        if k == "piecewise_linear":
            bps, sl = p["breakpoints"], p["slopes"]
            if len(sl) != len(bps) + 1:
                raise InvalidInputError("piecewise_linear needs len(slopes) == len(breakpoints) + 1")
            if any(b <= 0 for b in bps) or any(b2 <= b1 for b1, b2 in zip(bps, bps[1:])):
                raise InvalidInputError("breakpoints must be positive and strictly increasing")
            if any(s < 0 for s in sl):
                raise InvalidInputError("piecewise_linear slopes must be >= 0")
            diffs = np.diff(sl)
            if p["curvature"] == "concave" and np.any(diffs > 0):
                raise InvalidInputError("concave piecewise_linear needs non-increasing slopes")
            if p["curvature"] == "convex" and np.any(diffs < 0):
                raise InvalidInputError("convex piecewise_linear needs non-decreasing slopes")

    # -- metadata ----------------------------------------------------------------
    @property
    def code(self) -> int:
        return KIND_CODES[self.kind]

    @property
    def curvature(self) -> str:
        if self.kind == "piecewise_linear":
            return self.params["curvature"]
        return "convex" if self.kind in CONVEX_KINDS else "concave"

    @property
    def shift(self) -> float:
        return self.params["shift"]

    def learnable(self) -> tuple:
        return LEARNABLE.get(self.kind, ()) + ("shift",)

    def kinks(self) -> tuple:
        """Input locations (after the shift) where the slope jumps."""
        k, s = self.kind, self.shift
        if k in ("truncate", "lin_then_sqrt"):
            pts = (self.params["gamma"],)
        elif k == "piecewise_linear":
            pts = self.params["breakpoints"]
        else:
            pts = ()
        return tuple(b - s for b in pts if b - s > 0)

    def to_dict(self) -> dict:
        p = {k: v for k, v in self.params.items() if not (k == "shift" and v == 0.0)}
        if self.kind == "piecewise_linear":
            p["breakpoints"] = list(p["breakpoints"])
            p["slopes"] = list(p["slopes"])
        return {"kind": self.kind, "params": p}

    @classmethod
    def from_dict(cls, d: dict) -> "ConcaveUnit":
        return cls(d["kind"], dict(d.get("params", {})))

    def with_params(self, **kw) -> "ConcaveUnit":
        p = dict(self.params)
        p.update(kw)
        return ConcaveUnit(self.kind, p)

    # -- evaluation --------------------------------------------------------------
    def value(self, x):
        """phi(x) for scalar or array x >= 0."""
        x = _nonneg(x)
        s = self.shift
        if s == 0.0:
            return _raw_value(self, x)
        return _raw_value(self, x + s) - _raw_value(self, np.float64(s))

    def slopes(self, x, cap: float = SLOPE_CAP):
        """(right, left) derivatives, capped at ``cap`` where they blow up."""
        x = _nonneg(x) + self.shift
        r, l = _raw_slopes(self, x)
        return np.minimum(r, cap), np.minimum(l, cap)

    def mid_slope(self, x, cap: float = SLOPE_CAP):
        r, l = self.slopes(x, cap)
        return 0.5 * (r + l)

    def __call__(self, x):
        return self.value(x)


def _pwl_curvature(slopes) -> str:
    d = np.diff(slopes) if len(slopes) > 1 else np.zeros(0)
    return "convex" if d.size and np.all(d >= 0) and np.any(d > 0) else "concave"


def _nonneg(x):
    x = np.asarray(x, dtype=float)
    if np.any(x < 0) or np.any(np.isnan(x)):
        raise InvalidInputError("unit input must be >= 0")
    return x


def _softmin_M(x, a, c):
    """Power mean of (x, c) with exponent -a (a in [-1, inf))."""
    if a == 0.0:
        return np.sqrt(x * c)
    p = -a
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        if p < 0:
            # M = x * ((1 + (x/c)^{-p}) / 2)^{1/p}; zero at x = 0
            out = x * ((1.0 + (x / c) ** (-p)) / 2.0) ** (1.0 / p)
            return np.where(x > 0, out, 0.0)
        return ((x ** p + c ** p) / 2.0) ** (1.0 / p)


def _pwl_value(x, bps, sl):
    out = sl[0] * np.minimum(x, bps[0] if bps else np.inf)
    for i, b in enumerate(bps):
        hi = bps[i + 1] if i + 1 < len(bps) else np.inf
        out = out + sl[i + 1] * np.clip(x, b, hi) - sl[i + 1] * b
    return out


def _raw_value(u: ConcaveUnit, x):
    k, p = u.kind, u.params
    if k == "identity":
        return x * 1.0
    if k == "sqrt":
        return np.sqrt(x)
    if k == "power":
        return x ** (1.0 - p["delta"])
    if k == "log_gamma":
        g = p["gamma"]
        return g * np.log1p(x / g)
    if k == "truncate":
        return np.minimum(x, p["gamma"])
    if k == "one_minus_exp":
        return -np.expm1(-x)
    if k == "shifted_sigmoid":
        return 0.5 * np.tanh(0.5 * x)
    if k == "soft_min":
        a, c = p["a"], p["c"]
        return _softmin_M(x, a, c) - _softmin_M(np.float64(0.0), a, c)
    if k == "lin_then_sqrt":
        t = x / p["gamma"]
        return np.minimum(np.sqrt(t), t)
    if k == "piecewise_linear":
        return _pwl_value(x, p["breakpoints"], p["slopes"])
    if k == "square":
        return x * x
    if k == "power_convex":
        return x ** p["p"]
    if k == "expm1":
        return np.expm1(x)
    raise AssertionError(k)


def _raw_slopes(u: ConcaveUnit, x):
    """Right and left derivative at (already shifted) x."""
    k, p = u.kind, u.params
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        if k == "identity":
            d = np.ones_like(x)
            return d, d
        if k == "sqrt":
            d = (np.where(x > 0, 0.5 / np.sqrt(x), np.inf))
            return d, d
        if k == "power":
            e = 1.0 - p["delta"]
            d = (np.where(x > 0, e * x ** (-p["delta"]), np.inf))
            return d, d
        if k == "log_gamma":
            d = p["gamma"] / (p["gamma"] + x)
            return d, d
        if k == "truncate":
            g = p["gamma"]
            r = np.where(x < g, 1.0, 0.0)
            l = np.where(x <= g, 1.0, 0.0)
            return r, l
        if k == "one_minus_exp":
            d = np.exp(-x)
            return d, d
        if k == "shifted_sigmoid":
            t = np.tanh(0.5 * x)
            d = 0.25 * (1.0 - t * t)
            return d, d
        if k == "soft_min":
            d = (_softmin_slope(x, p["a"], p["c"]))
            return d, d
        if k == "lin_then_sqrt":
            g = p["gamma"]
            above = 0.5 / np.sqrt(np.maximum(x, g) * g)
            r = np.where(x < g, 1.0 / g, above)
            l = np.where(x <= g, 1.0 / g, above)
            return r, l
        if k == "piecewise_linear":
            bps = np.asarray(p["breakpoints"])
            sl = np.asarray(p["slopes"])
            r = sl[np.searchsorted(bps, x, side="right")]
            l = sl[np.searchsorted(bps, x, side="left")]
            return r, l
        if k == "square":
            d = 2.0 * x
            return d, d
        if k == "power_convex":
            d = p["p"] * x ** (p["p"] - 1.0)
            return d, d
        if k == "expm1":
            d = np.exp(x)
            return d, d
    raise AssertionError(k)


def _softmin_slope(x, a, c):
    if a == 0.0:
        return np.where(x > 0, 0.5 * np.sqrt(c / np.where(x > 0, x, 1.0)), np.inf)
    p = -a
    if p == 1.0:
        return np.full_like(x, 0.5)
    # slope = 0.5 * (M/x)^(1-p), with M/x = ((1 + (c/x)^p)/2)^(1/p)
    if p < 0:
        ratio0 = 2.0 ** (-1.0 / p)
        xs = np.where(x > 0, x, 1.0)
        r = ((1.0 + (xs / c) ** (-p)) / 2.0) ** (1.0 / p)
        return np.where(x > 0, 0.5 * r ** (1.0 - p), 0.5 * ratio0 ** (1.0 - p))
    xs = np.where(x > 0, x, 1.0)
    r = ((1.0 + (c / xs) ** p) / 2.0) ** (1.0 / p)
    return np.where(x > 0, 0.5 * r ** (1.0 - p), np.inf)


def param_derivative(u: ConcaveUnit, name: str, x):
    """d phi(x) / d param for a learnable parameter (midpoint rule at kinks)."""
    x = _nonneg(x)
    s = u.shift
    if name == "shift":
        r1, l1 = _raw_slopes(u, x + s)
        r0, l0 = _raw_slopes(u, np.float64(s) + 0 * x)
        mid = lambda r, l: 0.5 * (np.minimum(r, SLOPE_CAP) + np.minimum(l, SLOPE_CAP))
        return mid(r1, l1) - mid(r0, l0)
    return _raw_param_derivative(u, name, x + s) - _raw_param_derivative(u, name, np.float64(s) + 0 * x)


def _raw_param_derivative(u: ConcaveUnit, name: str, x):
    k, p = u.kind, u.params
    with np.errstate(divide="ignore", invalid="ignore"):
        if k == "power" and name == "delta":
            e = 1.0 - p["delta"]
            return np.where(x > 0, -(x ** e) * np.log(np.where(x > 0, x, 1.0)), 0.0)
        if k == "log_gamma" and name == "gamma":
            g = p["gamma"]
            return np.log1p(x / g) - x / (g + x)
        if k == "truncate" and name == "gamma":
            g = p["gamma"]
            return np.where(x > g, 1.0, np.where(x < g, 0.0, 0.5))
        if k == "lin_then_sqrt" and name == "gamma":
            g = p["gamma"]
            return np.where(x <= g, -x / g ** 2, -0.5 * np.sqrt(x) * g ** -1.5)
    raise InvalidInputError(f"parameter {name!r} of {k} is not differentiable")


# -- operations --------------------------------------------------------------------

def concave_value(u: ConcaveUnit, x: float) -> float:
    """phi(x); raises on negative input."""
    if x < 0:
        raise InvalidInputError("unit input must be >= 0")
    return float(u.value(x))


def concave_supergradient(u: ConcaveUnit, x: float) -> SupergradientInterval:
    """Closed supergradient (or subgradient, for convex units) interval at x."""
    if x < 0:
        raise InvalidInputError("unit input must be >= 0")
    r, l = u.slopes(float(x))
    r, l = float(r), float(l)
    return SupergradientInterval(min(r, l), max(r, l))


def last_linear_point(u: ConcaveUnit) -> float:
    """Largest alpha with phi linear on [0, alpha]."""
    k, p, s = u.kind, u.params, u.shift
    if k == "identity":
        return math.inf
    if k == "soft_min" and p["a"] == -1.0:
        return math.inf
    if k in ("truncate", "lin_then_sqrt"):
        return max(p["gamma"] - s, 0.0)
    if k == "piecewise_linear":
        bps, sl = p["breakpoints"], p["slopes"]
        first = int(np.searchsorted(bps, s, side="right"))
        for i in range(first, len(bps)):
            if sl[i + 1] != sl[first]:
                return bps[i] - s
        return math.inf
    return 0.0


def saturation_point(u: ConcaveUnit) -> float:
    """Smallest x where phi stops growing (inf if it never does)."""
    k, p, s = u.kind, u.params, u.shift
    if k == "truncate":
        return max(p["gamma"] - s, 0.0)
    if k == "piecewise_linear":
        bps, sl = p["breakpoints"], p["slopes"]
        if sl[-1] != 0.0:
            return math.inf
        i = len(sl) - 1
        while i > 0 and sl[i - 1] == 0.0:
            i -= 1
        return max(bps[i - 1] - s, 0.0) if i > 0 else 0.0
    return math.inf


def sampled_check(u: ConcaveUnit, points: int = 1000, tol: float = 1e-9) -> list[str]:
    """Sampled invariant checks; returns a list of problems (empty when fine)."""
    sat = saturation_point(u)
    hi = 10.0 * max(1.0, sat if math.isfinite(sat) and sat > 0 else 1.0)
    xs = np.linspace(0.0, hi, points)
    vals = u.value(xs)
    issues = []
    if abs(float(u.value(0.0))) > 0:
        issues.append("phi(0) != 0")
    if np.any(np.diff(vals) < -tol):
        issues.append("not monotone non-decreasing")
    sl = np.diff(vals) / np.diff(xs)
    if u.curvature == "concave" and np.any(np.diff(sl) > tol * max(1.0, np.abs(sl).max())):
        issues.append("sampled slopes increase (not concave)")
    if u.curvature == "convex" and np.any(np.diff(sl) < -tol * max(1.0, np.abs(sl).max())):
        issues.append("sampled slopes decrease (not convex)")
    alpha = last_linear_point(u)
    if alpha > 0:
        top = min(alpha, hi)
        seg = xs[xs <= top]
        if seg.size > 1:
            g = float(u.mid_slope(0.0)) if alpha < math.inf else float(sl[0])
            if not np.allclose(u.value(seg), g * seg, rtol=1e-9, atol=1e-12):
                issues.append("not linear up to last_linear_point")
    if math.isfinite(sat):
        tail = xs[xs >= sat]
        if tail.size and np.ptp(u.value(tail)) > tol:
            issues.append("grows past saturation_point")
    return issues


# -- constructors ------------------------------------------------------------------

def identity(shift=0.0): return ConcaveUnit("identity", {"shift": shift})
def sqrt(shift=0.0): return ConcaveUnit("sqrt", {"shift": shift})
def power(delta, shift=0.0): return ConcaveUnit("power", {"delta": delta, "shift": shift})
def log_gamma(gamma=1.0, shift=0.0): return ConcaveUnit("log_gamma", {"gamma": gamma, "shift": shift})
def truncate(gamma, shift=0.0): return ConcaveUnit("truncate", {"gamma": gamma, "shift": shift})
def one_minus_exp(shift=0.0): return ConcaveUnit("one_minus_exp", {"shift": shift})
def shifted_sigmoid(shift=0.0): return ConcaveUnit("shifted_sigmoid", {"shift": shift})
def soft_min(a, c, shift=0.0): return ConcaveUnit("soft_min", {"a": a, "c": c, "shift": shift})
def lin_then_sqrt(gamma, shift=0.0): return ConcaveUnit("lin_then_sqrt", {"gamma": gamma, "shift": shift})
def square(shift=0.0): return ConcaveUnit("square", {"shift": shift})
def power_convex(p, shift=0.0): return ConcaveUnit("power_convex", {"p": p, "shift": shift})
def expm1(shift=0.0): return ConcaveUnit("expm1", {"shift": shift})


def piecewise_linear(breakpoints, slopes, curvature=None, shift=0.0) -> ConcaveUnit:
    params = {"breakpoints": list(breakpoints), "slopes": list(slopes), "shift": shift}
    if curvature:
        params["curvature"] = curvature
    return ConcaveUnit("piecewise_linear", params)
