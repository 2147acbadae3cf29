import numpy as np
import pytest
from hypothesis import given, strategies as st

from dsfkit.core import (GroundMismatchError, GroundSet, InvalidInputError, ModularFunction,
                         SetFunction, Subset, from_table, indicator_vector, masks_to_indicators,
                         modular_eval, modular_set_function, popcount)

XYZ = GroundSet(["x", "y", "z"])


def test_modular_eval_examples():
    m = ModularFunction(XYZ, (1.0, 2.0, 3.0))
    assert modular_eval(m, Subset.of(XYZ, "x,z")) == 4
    assert modular_eval(m, XYZ.empty()) == 0
    six = GroundSet("abcdef")
    assert modular_eval(ModularFunction(six, (0.5,) * 6), six.full()) == 3.0


def test_indicator_vector_examples():
    g = GroundSet.range(3)
    assert indicator_vector(g.empty()).tolist() == [0, 0, 0]
    assert indicator_vector(g.full()).tolist() == [1, 1, 1]
    assert indicator_vector(Subset.of(g, [1])).tolist() == [0, 1, 0]


def test_ground_set_rejects_duplicates_and_unknown_labels():
    with pytest.raises(InvalidInputError):
        GroundSet(["a", "a"])
    with pytest.raises(InvalidInputError):
        XYZ.index("w")


def test_subset_algebra_and_repr():
    A = Subset.of(XYZ, "x,y")
    B = Subset.of(XYZ, ["y", "z"])
    assert (A | B) == XYZ.full()
    assert (A & B).labels() == ["y"]
    assert (A - B).labels() == ["x"]
    assert Subset.of(XYZ, "x") <= A
    assert repr(A) == "{x,y}"
    assert A.complement().labels() == ["z"]
    assert "x" in A and "z" not in A


def test_subset_mismatched_grounds():
    other = GroundSet(["x", "y", "w"])
    with pytest.raises(GroundMismatchError):
        Subset.of(XYZ, "x") | Subset.of(other, "x")


def test_subset_is_immutable():
    A = Subset.of(XYZ, "x")
    with pytest.raises(AttributeError):
        A.bits = 3


def test_negative_modular_needs_signed_flag():
    m = ModularFunction(XYZ, (-1.0, 0.0, 2.0))
    assert m(XYZ.full()) == 1.0
    with pytest.raises(InvalidInputError):
        ModularFunction(XYZ, (-1.0, 0.0, 2.0), nonneg=True)


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=10), st.data())
def test_modular_is_additive(w, data):
    g = GroundSet.range(len(w))
    f = modular_set_function(ModularFunction(g, tuple(w)))
    mask = data.draw(st.integers(0, (1 << len(w)) - 1))
    assert f(mask) == pytest.approx(sum(w[i] for i in range(len(w)) if mask >> i & 1))
    assert np.allclose(f.evaluate_masks(np.array([mask])), f(mask))


@given(st.integers(0, (1 << 20) - 1))
def test_popcount_and_indicators(mask):
    X = masks_to_indicators(np.array([mask]), 20)
    assert X.sum() == popcount(mask) == bin(mask).count("1")


def test_from_table_and_gain():
    f = from_table(XYZ, [0, 1, 1, 1, 1, 2, 2, 2], exact=True)
    assert f(Subset.of(XYZ, "x,y")) == 1
    assert f.gain(2, Subset.of(XYZ, "x")) == 1
    assert f.table().tolist() == [0, 1, 1, 1, 1, 2, 2, 2]
    with pytest.raises(InvalidInputError):
        from_table(XYZ, [0, 1, 2])


def test_setfunction_sum_and_scale():
    f = from_table(XYZ, range(8))
    g = (f + f).scaled(0.5)
    assert np.array_equal(g.table(), f.table())
