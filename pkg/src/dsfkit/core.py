"""Ground sets, subsets, modular functions and the set-function handle."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

MAX_GROUND = 256


class DsfError(Exception):
    """Base class for toolkit errors."""


class GroundMismatchError(DsfError, ValueError):
    pass


class InvalidInputError(DsfError, ValueError):
    pass


class GroundSet:
    """A finite labeled ground set. Element ids are ``0..n-1`` in label order."""

    __slots__ = ("labels", "_index")

    def __init__(self, labels: Iterable[str]):
        labels = tuple(str(x) for x in labels)
        if not labels:
            raise InvalidInputError("ground set must be non-empty")
        if len(labels) > MAX_GROUND:
            raise InvalidInputError(f"ground set larger than cap {MAX_GROUND}")
        index = {lab: i for i, lab in enumerate(labels)}
        if len(index) != len(labels):
            raise InvalidInputError("ground set labels must be unique")
        self.labels = labels
        self._index = index

    @classmethod
    def range(cls, n: int, prefix: str = "v") -> "GroundSet":
        return cls(f"{prefix}{i}" for i in range(n))

    @classmethod
    def letters(cls, n: int) -> "GroundSet":
        return cls("abcdefghijklmnopqrstuvwxyz"[:n])

    @property
    def size(self) -> int:
        return len(self.labels)

    def __len__(self):
        return len(self.labels)

    def index(self, label: str) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise InvalidInputError(f"unknown element {label!r}") from None

    def __eq__(self, other):
        return isinstance(other, GroundSet) and self.labels == other.labels

    def __hash__(self):
        return hash(self.labels)

    def __repr__(self):
        return f"GroundSet({list(self.labels)!r})"

    # convenience constructors for subsets
    def subset(self, items=()) -> "Subset":
        return Subset.of(self, items)

    def empty(self) -> "Subset":
        return Subset(self, 0)

    def full(self) -> "Subset":
        return Subset(self, (1 << self.size) - 1)


class Subset:
    """Immutable bitset over a ground set, stored as a Python int."""

    __slots__ = ("ground", "bits")

    def __init__(self, ground: GroundSet, bits: int = 0):
        bits = int(bits)
        if bits < 0 or bits >> ground.size:
            raise InvalidInputError("bitmask has bits outside the ground set")
        object.__setattr__(self, "ground", ground)
        object.__setattr__(self, "bits", bits)

    def __setattr__(self, key, value):
        raise AttributeError("Subset is immutable")

    @classmethod
    def of(cls, ground: GroundSet, items=()) -> "Subset":
        """Build from labels and/or integer ids (a string is split into characters
        only if it is not itself a label)."""
        if isinstance(items, Subset):
            _check_same(ground, items.ground)
            return items
        if isinstance(items, str):
            if items in ground._index:
                items = [items]
            elif "," in items:
                items = [s.strip() for s in items.split(",") if s.strip()]
            else:
                items = list(items)
        bits = 0
        for it in items:
            if isinstance(it, (int, np.integer)):
                i = int(it)
                if not 0 <= i < ground.size:
                    raise InvalidInputError(f"element id {i} out of range")
            else:
                i = ground.index(it)
            bits |= 1 << i
        return cls(ground, bits)

    @classmethod
    def from_indicator(cls, ground: GroundSet, vec) -> "Subset":
        vec = np.asarray(vec)
        if vec.shape != (ground.size,):
            raise InvalidInputError("indicator length does not match ground set")
        bits = 0
        for i in np.flatnonzero(vec):
            bits |= 1 << int(i)
        return cls(ground, bits)

    def ids(self) -> list[int]:
        out, b, i = [], self.bits, 0
        while b:
            if b & 1:
                out.append(i)
            b >>= 1
            i += 1
        return out

    def labels(self) -> list[str]:
        return [self.ground.labels[i] for i in self.ids()]

    def __contains__(self, item) -> bool:
        i = item if isinstance(item, (int, np.integer)) else self.ground.index(item)
        return bool(self.bits >> int(i) & 1)

    def __iter__(self):
        return iter(self.ids())

    def __len__(self):
        return bin(self.bits).count("1")

    def _other(self, other) -> int:
        if isinstance(other, Subset):
            _check_same(self.ground, other.ground)
            return other.bits
        return Subset.of(self.ground, other).bits

    def __or__(self, other):
        return Subset(self.ground, self.bits | self._other(other))

    def __and__(self, other):
        return Subset(self.ground, self.bits & self._other(other))

    def __sub__(self, other):
        return Subset(self.ground, self.bits & ~self._other(other))

    def __le__(self, other):
        return self.bits & ~self._other(other) == 0

    def add(self, i: int) -> "Subset":
        return Subset(self.ground, self.bits | (1 << int(i)))

    def complement(self) -> "Subset":
        return Subset(self.ground, ((1 << self.ground.size) - 1) & ~self.bits)

    def __eq__(self, other):
        return isinstance(other, Subset) and self.ground == other.ground and self.bits == other.bits

    def __hash__(self):
        return hash((self.ground.labels, self.bits))

    def __repr__(self):
        return "{" + ",".join(self.labels()) + "}"


def _check_same(g1: GroundSet, g2: GroundSet):
    if g1 is not g2 and g1 != g2:
        raise GroundMismatchError("subsets/functions live on different ground sets")


def indicator_vector(A: Subset) -> np.ndarray:
    """0/1 float vector of length n with ones on the members of ``A``."""
    vec = np.zeros(A.ground.size)
    vec[A.ids()] = 1.0
    return vec


def masks_to_indicators(masks, n: int) -> np.ndarray:
    """Rows of 0/1 floats for an array of integer bitmasks (n <= 62)."""
    masks = np.asarray(masks, dtype=np.int64)
    return ((masks[:, None] >> np.arange(n, dtype=np.int64)) & 1).astype(np.float64)


@dataclass(frozen=True)
class ModularFunction:
    """m(A) = sum of per-element weights. ``nonneg`` enforces m >= 0."""

    ground: GroundSet
    weights: tuple
    nonneg: bool = False

    def __post_init__(self):
        w = tuple(float(x) for x in self.weights)
        if len(w) != self.ground.size:
            raise InvalidInputError("modular weight count does not match ground set")
        if not all(np.isfinite(w)):
            raise InvalidInputError("modular weights must be finite")
        if self.nonneg and min(w) < 0:
            raise InvalidInputError("nonneg modular function has a negative weight")
        object.__setattr__(self, "weights", w)

    @classmethod
    def zeros(cls, ground: GroundSet, nonneg: bool = False):
        return cls(ground, (0.0,) * ground.size, nonneg)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=float)

    def __call__(self, A: Subset) -> float:
        return modular_eval(self, A)


def modular_eval(m: ModularFunction, A: Subset) -> float:
    """Sum of ``m`` over the members of ``A`` (0 on the empty set)."""
    _check_same(m.ground, A.ground)
    return float(sum(m.weights[i] for i in A.ids()))


@dataclass
class SetFunction:
    """Deterministic map from subsets of ``ground`` to reals.

    ``evaluator`` takes an int bitmask. ``batch`` optionally evaluates an int64
    array of masks at once. ``exact`` marks integer-valued functions that are
    computed with exact integer arithmetic, so checks may use zero tolerance.
    """

    ground: GroundSet
    evaluator: Callable[[int], float]
    batch: Optional[Callable[[np.ndarray], np.ndarray]] = None
    exact: bool = False
    name: str = "f"
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.ground.size

    def _mask(self, A) -> int:
        if isinstance(A, (int, np.integer)):
            return int(A)
        if isinstance(A, Subset):
            _check_same(self.ground, A.ground)
            return A.bits
        return Subset.of(self.ground, A).bits

    def __call__(self, A) -> float:
        return self.evaluator(self._mask(A))

    def evaluate_masks(self, masks) -> np.ndarray:
        masks = np.asarray(masks, dtype=np.int64)
        if self.batch is not None:
            return np.asarray(self.batch(masks), dtype=float)
        return np.array([self.evaluator(int(m)) for m in masks], dtype=float)

    def table(self) -> np.ndarray:
        """Values on all 2^n subsets, indexed by bitmask."""
        if self.n > 30:
            raise InvalidInputError("table() needs n <= 30")
        return self.evaluate_masks(np.arange(1 << self.n, dtype=np.int64))

    def gain(self, v: int, A) -> float:
        m = self._mask(A)
        return self.evaluator(m | (1 << v)) - self.evaluator(m)

    def __add__(self, other: "SetFunction") -> "SetFunction":
        _check_same(self.ground, other.ground)
        a, b = self, other

        def batch(masks):
            return a.evaluate_masks(masks) + b.evaluate_masks(masks)

        return SetFunction(self.ground, lambda m: a.evaluator(m) + b.evaluator(m), batch,
                           exact=a.exact and b.exact, name=f"({a.name}+{b.name})")

    def scaled(self, c: float) -> "SetFunction":
        a = self
        return SetFunction(self.ground, lambda m: c * a.evaluator(m),
                           lambda masks: c * a.evaluate_masks(masks),
                           exact=a.exact and float(c).is_integer(), name=f"{c:g}*{a.name}")


def modular_set_function(m: ModularFunction, name: str = "m") -> SetFunction:
    w = m.as_array()
    n = m.ground.size

    def ev(mask: int) -> float:
        return float(sum(w[i] for i in range(n) if mask >> i & 1))

    def batch(masks):
        return masks_to_indicators(masks, n) @ w

    return SetFunction(m.ground, ev, batch if n <= 62 else None, name=name)


def from_table(ground: GroundSet, values: Sequence[float], name: str = "f", exact: bool = False) -> SetFunction:
    """Set function backed by an explicit table indexed by bitmask."""
    vals = np.asarray(values, dtype=float)
    if vals.shape != (1 << ground.size,):
        raise InvalidInputError("table length must be 2^n")
    return SetFunction(ground, lambda m: float(vals[m]), lambda masks: vals[masks], exact=exact, name=name)


def popcount(mask: int) -> int:
    return bin(mask).count("1")


@dataclass
class VerificationReport:
    """Outcome of a property check: pass/fail, witnesses and worst violation."""

    property: str
    passed: bool
    witnesses: list = field(default_factory=list)
    max_violation: float = 0.0
    checked: int = 0
    details: dict = field(default_factory=dict)

    def __bool__(self):
        return self.passed

    def summary(self) -> str:
        head = f"{self.property}: {'pass' if self.passed else 'FAIL'}"
        if not self.passed:
            head += f" (max violation {self.max_violation:.3g}, {len(self.witnesses)} witness(es))"
        return head
