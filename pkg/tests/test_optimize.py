import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from _models import random_dsf
from dsfkit import zoo
from dsfkit.analysis import as_set_function
from dsfkit.core import GroundSet, InvalidInputError, ModularFunction, SetFunction, Subset, \
    modular_set_function
from dsfkit.optimize import (cardinality, exhaustive_max, greedy_max, hamming_loss, knapsack,
                             loss_augmented_inference, lovasz_extension, naive_greedy,
                             polymatroid_concave_extension, relaxed_hamming_distance)

ZOO = ["laminar6", "laminar6_oracle", "overlap6", "fourblocks8", "k4", "fk1", "fk2", "fig1",
       "fig1_deep", "thm41:sqrt", "thm41:trunc3"]


def modular(w):
    return modular_set_function(ModularFunction(GroundSet.range(len(w)), tuple(map(float, w))))


def test_fig1_greedy():
    g = zoo.fig1()
    S, val, trace = greedy_max(g, cardinality(3))
    assert S == Subset.of(g.ground, "d,h,f")
    assert val == 9
    assert len(trace.picks) == 3


def test_modular_top_k():
    f = modular([0.3, 2.0, 1.0, 5.0])
    assert greedy_max(f, cardinality(2)).subset.ids() == [1, 3]


def test_laminar6_k3():
    f, _ = zoo.laminar6()
    r = greedy_max(f, cardinality(3))
    assert r.value == 3
    assert r.subset == Subset.of(f.ground, "a,b,d")


def test_k_larger_than_n_and_zero():
    f = modular([1, 2])
    assert len(greedy_max(f, cardinality(5)).subset) == 2
    assert greedy_max(f, cardinality(0)).subset.bits == 0


def test_lazy_saves_evaluations():
    f = zoo.fig1_deep()
    lazy = greedy_max(f, cardinality(5))
    naive = naive_greedy(f, 5)
    assert lazy.subset == naive.subset
    assert lazy.trace.evaluations < naive.trace.evaluations


@pytest.mark.parametrize("name", ZOO)
def test_lazy_equals_naive_and_bound(name):
    f = as_set_function(zoo.preset(name))
    for k in range(1, f.n + 1):
        a = greedy_max(f, cardinality(k))
        b = greedy_max(f, cardinality(k), lazy=False)
        assert a.subset == b.subset
        if k <= 4:
            _, opt = exhaustive_max(f, k)
            assert a.value >= (1 - 1 / math.e) * opt - 1e-9


@settings(max_examples=20)
@given(st.integers(0, 10_000), st.integers(1, 6))
def test_lazy_equals_naive_random(seed, k):
    f = random_dsf(seed, n=8, signed_modular=False)
    assert greedy_max(f, cardinality(k)).subset == naive_greedy(f, k).subset


def test_knapsack():
    f = modular([1.0, 1.0, 3.0])
    r = greedy_max(f, knapsack(2.0, [1.0, 1.0, 2.0]))
    assert r.value == 3.0
    f2 = modular([2.0, 1.0, 1.0])
    r = greedy_max(f2, knapsack(2.0, [2.0, 1.0, 1.0]))
    assert r.value == 2.0
    assert greedy_max(f, knapsack(0.5, [1.0, 1.0, 2.0])).subset.bits == 0
    with pytest.raises(InvalidInputError):
        greedy_max(f, knapsack(1.0, [1.0]))


def test_constraint_validation():
    with pytest.raises(InvalidInputError):
        cardinality(-1)
    with pytest.raises(InvalidInputError):
        knapsack(-1.0, [1.0])


def test_hamming_loss_zero_at_summary():
    g = GroundSet.range(5)
    S = Subset.of(g, [1, 3])
    l = hamming_loss(S)
    assert l(S) == 0
    assert l(Subset.of(g, [0, 1])) == 2


def test_lai_reductions():
    f = zoo.fig1()
    zero = SetFunction(f.ground, lambda m: 0.0)
    assert loss_augmented_inference(f, zero, cardinality(3)) == greedy_max(f, cardinality(3)).subset
    f0 = modular([0.0] * 5)
    loss = modular([0.1, 0.9, 0.4, 0.8, 0.2])
    assert loss_augmented_inference(f0, loss, cardinality(2)).ids() == [1, 3]


def test_lai_hamming_vs_exhaustive():
    rng = np.random.default_rng(0)
    for seed in range(5):
        f = random_dsf(seed, n=8, signed_modular=False)
        S = Subset(f.ground, int(rng.choice(256)))
        obj = f.as_set_function() + hamming_loss(S)
        for k in (2, 3, 4):
            got = loss_augmented_inference(f, hamming_loss(S), cardinality(k))
            _, opt = exhaustive_max(obj, k)
            assert obj(got) >= (1 - 1 / math.e) * opt - 1e-9


def test_lovasz_examples():
    f = SetFunction(GroundSet("ab"), lambda m: float(min(bin(m).count("1"), 1)))
    val, g = lovasz_extension(f, [0.7, 0.3])
    assert val == pytest.approx(0.7)
    assert g.tolist() == [1.0, 0.0]
    r, _ = zoo.laminar6()
    assert lovasz_extension(r, [0.4] * 6)[0] == pytest.approx(0.4 * 3)
    with pytest.raises(InvalidInputError):
        lovasz_extension(f, [1.2, 0.0])


@pytest.mark.parametrize("name", ["laminar6", "k4", "fig1", "overlap6"])
def test_lovasz_vertex_tight_and_homogeneous(name):
    f = as_set_function(zoo.preset(name))
    T = f.table()
    for m in range(1 << f.n):
        x = np.array([m >> i & 1 for i in range(f.n)], float)
        assert lovasz_extension(f, x)[0] == pytest.approx(T[m], abs=1e-12)
    rng = np.random.default_rng(0)
    for _ in range(20):
        x, t = rng.random(f.n), rng.random()
        assert lovasz_extension(f, t * x)[0] == pytest.approx(t * lovasz_extension(f, x)[0], abs=1e-12)


@pytest.mark.parametrize("name", ["laminar6", "k4", "fig1"])
def test_lovasz_subgradient_is_valid(name):
    f = as_set_function(zoo.preset(name))
    rng = np.random.default_rng(1)
    for _ in range(100):
        x, y = rng.random(f.n), rng.random(f.n)
        vx, g = lovasz_extension(f, x)
        assert lovasz_extension(f, y)[0] >= vx + g @ (y - x) - 1e-9


def test_relaxed_hamming():
    card = SetFunction(GroundSet("ab"), lambda m: float(bin(m).count("1")))
    assert relaxed_hamming_distance(card, [1, 0], [0.5, 0.5]) == pytest.approx(1.0)
    r = zoo.k4_rank()
    for a, b in [(0b000111, 0b011100), (0b101010, 0b101010), (0, 0b111111)]:
        za = [a >> i & 1 for i in range(6)]
        zb = [b >> i & 1 for i in range(6)]
        assert relaxed_hamming_distance(r, za, zb) == r(a ^ b)
    assert relaxed_hamming_distance(r, za, za) == 0


def test_polymatroid_extension():
    f, _ = zoo.laminar6()
    sf = f.as_set_function()
    for m in (0, 0b000111, 0b011011, 63):
        x = np.array([m >> i & 1 for i in range(6)], float)
        assert polymatroid_concave_extension(sf, x)[0] == pytest.approx(sf(m))
    rng = np.random.default_rng(0)
    for _ in range(50):
        x, y = rng.random(6), rng.random(6)
        vx, g = polymatroid_concave_extension(sf, x)
        vy, _ = polymatroid_concave_extension(sf, y)
        # lies above the Lovasz (convex) extension, is concave, and g is a supergradient
        assert vx >= lovasz_extension(sf, x)[0] - 1e-12
        assert polymatroid_concave_extension(sf, (x + y) / 2)[0] >= (vx + vy) / 2 - 1e-12
        assert vy <= vx + g @ (y - x) + 1e-12
    with pytest.raises(InvalidInputError):
        polymatroid_concave_extension(sf, [-1.0] * 6)
