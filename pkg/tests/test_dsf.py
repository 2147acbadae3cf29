import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from _models import CONVEX, SMOOTH, random_dsf
from dsfkit import _kernels, concave as C, zoo
from dsfkit.analysis import verify_properties
from dsfkit.concave import SLOPE_CAP
from dsfkit.core import GroundSet, InvalidInputError, ModularFunction, Subset, masks_to_indicators
from dsfkit.dsf import (DsfModel, DsfNode, InvalidModelError, MultivariateAssignment,
                        concave_extension, evaluate, evaluate_difference, evaluate_multivariate,
                        gradient_input, gradient_weights, layer_ground, validate_model)

seeds = st.integers(0, 10_000)


def _sub(f, s):
    return Subset.of(f.ground, s)


def test_laminar6_values():
    f, _ = zoo.laminar6()
    assert evaluate(f, _sub(f, "a")) == 1
    assert evaluate(f, _sub(f, "a,b,c")) == 2
    assert evaluate(f, f.ground.full()) == 3
    assert evaluate(f, _sub(f, "a,b,d,e")) == 3


def test_fig1_values():
    g = zoo.fig1()
    assert evaluate(g, _sub(g, "b")) == pytest.approx(math.sqrt(8) + 1, abs=1e-12)
    assert evaluate(g, _sub(g, "d,h,f")) == pytest.approx(9, abs=1e-12)


def test_extension_examples():
    f, _ = zoo.laminar6()
    assert concave_extension(f, np.zeros(6)) == 0
    assert concave_extension(f, [0.5, 0.5, 0.5, 0, 0, 0]) == pytest.approx(1.5)
    with pytest.raises(InvalidInputError):
        concave_extension(f, [-0.1, 0, 0, 0, 0, 0])


def test_gradient_weights_identity_node():
    g = GroundSet("abcd")
    f = DsfModel(g, [DsfNode("r", C.identity(), (), [(i, 0.5 + i) for i in range(4)])], "r")
    A = Subset.of(g, "b,d")
    grad = gradient_weights(f, A).as_dict()
    for i, lab in enumerate("abcd"):
        want = 1.0 if lab in "bd" else 0.0
        assert grad[f"m[r]({lab})"] == want
        assert grad[f"m_pm({lab})"] == want


def test_gradient_weights_excludes_frozen():
    g = GroundSet("abc")
    nodes = [DsfNode("emb", C.sqrt(), (), [(0, 1.0), (1, 2.0)]),
             DsfNode("r", C.log_gamma(1.0), [("emb", 1.0)], [(2, 1.0)])]
    f = DsfModel(g, nodes, "r", frozen=("emb",))
    labels = gradient_weights(f, Subset.of(g, "a,c")).labels
    assert not any(lab.startswith("m[emb]") for lab in labels)
    assert "m[r](c)" in labels and "w[r<-emb]" in labels


def test_gradient_input_linear_network():
    g = GroundSet("abc")
    nodes = [DsfNode("h", C.identity(), (), [(0, 2.0), (1, 1.0)]),
             DsfNode("r", C.identity(), [("h", 3.0)], [(2, 0.5)])]
    f = DsfModel(g, nodes, "r", [1.0, -1.0, 0.0])
    for x in ([0, 0, 0], [1.0, 2.0, 3.0]):
        gx, capped = gradient_input(f, x)
        assert gx.tolist() == [7.0, 2.0, 0.5]
        assert not capped


def test_gradient_input_sqrt_at_zero_is_capped():
    g = GroundSet.range(3)
    f = DsfModel(g, [DsfNode("r", C.sqrt(), (), [(i, 1.0) for i in range(3)])], "r")
    gx, capped = gradient_input(f, np.zeros(3))
    assert capped
    assert np.all(gx == SLOPE_CAP)
    gx, _ = gradient_input(f, np.zeros(3), slope_cap=50.0)
    assert np.all(gx == 50.0)


def test_evaluate_difference_examples():
    g = GroundSet.range(4)
    f1 = DsfModel(g, [DsfNode("r", C.sqrt(), (), [(i, 1.0) for i in range(4)])], "r")
    f2 = DsfModel(g, [DsfNode("r", C.identity(), (), [(i, 0.5) for i in range(4)])], "r")
    assert evaluate_difference(f1, f2, g.full()) == pytest.approx(0.0)
    assert evaluate_difference(f1, f1, Subset.of(g, [0, 2])) == 0
    zero = DsfModel(g, [DsfNode("r", C.identity(), (), [(i, 0.0) for i in range(4)])], "r")
    assert evaluate_difference(f1, zero, Subset.of(g, [1, 2])) == evaluate(f1, Subset.of(g, [1, 2]))


class TestValidate:
    g = GroundSet("ab")

    def test_negative_internal_weight_reported(self):
        f = DsfModel(self.g, [DsfNode("h", C.sqrt(), (), [(0, 1.0)]),
                              DsfNode("r", C.sqrt(), [("h", -0.3)], ())], "r")
        rep = validate_model(f)
        assert not rep.passed
        assert any("h" in str(w) and "r" in str(w) for w in rep.witnesses)
        with pytest.raises(InvalidModelError):
            f.compile()

    def test_negative_modular_allowed(self):
        f = DsfModel(self.g, [DsfNode("r", C.sqrt(), (), [(0, 1.0), (1, 1.0)])], "r", [-2.0, 1.0])
        assert validate_model(f).passed

    def test_cycle(self):
        f = DsfModel(self.g, [DsfNode("x", C.sqrt(), [("y", 1.0)], [(0, 1.0)]),
                              DsfNode("y", C.sqrt(), [("x", 1.0)], ()),
                              DsfNode("r", C.sqrt(), [("y", 1.0)], ())], "r")
        rep = validate_model(f)
        assert not rep.passed
        assert any("cycl" in str(w) for w in rep.witnesses)

    def test_mixed_curvature_rejected(self):
        f = DsfModel(self.g, [DsfNode("h", C.square(), (), [(0, 1.0)]),
                              DsfNode("r", C.sqrt(), [("h", 1.0)], [(1, 1.0)])], "r")
        assert not validate_model(f).passed

    def test_unknown_parent_and_root(self):
        assert not validate_model(DsfModel(self.g, [DsfNode("r", C.sqrt(), [("zz", 1.0)], ())], "r")).passed
        assert not validate_model(DsfModel(self.g, [DsfNode("r", C.sqrt(), (), [(0, 1.0)])], "nope")).passed

    def test_dangling_node(self):
        f = DsfModel(self.g, [DsfNode("h", C.sqrt(), (), [(0, 1.0)]),
                              DsfNode("r", C.sqrt(), (), [(1, 1.0)])], "r")
        assert not validate_model(f).passed


def test_topological_order_respects_edges():
    f = random_dsf(3, layers=3)
    order = [f.nodes[i].id for i in f.topological_order()]
    pos = {nid: k for k, nid in enumerate(order)}
    for nd in f.nodes:
        for p, _ in nd.parents_internal:
            assert pos[p] < pos[nd.id]


def test_layer_skipping_dag_is_valid():
    g = GroundSet("abc")
    nodes = [DsfNode("h1", C.sqrt(), (), [(0, 1.0), (1, 1.0)]),
             DsfNode("h2", C.log_gamma(1.0), [("h1", 1.0)], [(2, 1.0)]),
             DsfNode("r", C.sqrt(), [("h1", 0.5), ("h2", 1.0)], [(0, 0.3)])]
    f = DsfModel(g, nodes, "r")
    assert validate_model(f).passed
    assert verify_properties(f).passed


@settings(max_examples=25)
@given(seeds, st.integers(1, 3))
def test_normalized_and_vertex_tight(seed, layers):
    f = random_dsf(seed, n=6, layers=layers)
    assert evaluate(f, f.ground.empty()) == 0.0
    c = f.compile()
    masks = np.arange(64)
    X = masks_to_indicators(masks, 6)
    vals = f.evaluate_masks(masks)
    for m in (0, 5, 17, 63):
        assert concave_extension(f, X[m]) == vals[m]
        assert evaluate(f, Subset(f.ground, m)) == vals[m]


@settings(max_examples=25)
@given(seeds, st.integers(1, 3))
def test_concave_models_are_submodular(seed, layers):
    f = random_dsf(seed, n=7, layers=layers)
    assert verify_properties(f, ("submodular",)).passed


@settings(max_examples=15)
@given(seeds)
def test_convex_models_are_supermodular(seed):
    # nested expm1 overflows to ~1e77, where an absolute tolerance is meaningless
    tame = [C.square, lambda: C.power_convex(1.5)]
    f = random_dsf(seed, n=6, layers=2, kinds=tame, signed_modular=True)
    assert validate_model(f).details["family"] == "deep_supermodular"
    rep = verify_properties(f, ("supermodular",))
    assert rep.passed


def test_expm1_scmm_is_supermodular():
    g = GroundSet.range(6)
    f = DsfModel(g, [DsfNode("r", C.expm1(), (), [(i, 0.3 + 0.1 * i) for i in range(6)])], "r")
    assert verify_properties(f, ("supermodular", "monotone", "normalized")).passed
    assert not verify_properties(f, ("submodular",)).passed


@settings(max_examples=25)
@given(seeds, st.data())
def test_psi_monotone_on_reals(seed, data):
    f = random_dsf(seed, n=5)
    m = f.final_modular.as_array()
    x = np.array(data.draw(st.lists(st.floats(0, 3), min_size=5, max_size=5)))
    d = np.array(data.draw(st.lists(st.floats(0, 3), min_size=5, max_size=5)))
    y = x + d
    assert concave_extension(f, x) - m @ x <= concave_extension(f, y) - m @ y + 1e-9


@settings(max_examples=20)
@given(seeds, st.integers(1, 3))
def test_numba_and_numpy_forward_agree(seed, layers):
    f = random_dsf(seed, n=8, layers=layers)
    c = f.compile()
    X = np.random.default_rng(seed).uniform(0, 2, size=(50, 8))
    a = _kernels.forward(c, X, backend="numba")
    b = _kernels.forward(c, X, backend="numpy")
    for u, v in zip(a, b):
        np.testing.assert_allclose(u, v, rtol=1e-13, atol=1e-13)


def test_backend_env_forces_numpy(monkeypatch):
    from dsfkit import _backend
    monkeypatch.setenv("DSFKIT_BACKEND", "numpy")
    assert not _backend.use_numba()
    f, _ = zoo.laminar6()
    assert f.evaluate_masks(np.array([0b011011]))[0] == 3


def test_parameters_roundtrip():
    f = random_dsf(5)
    theta, labels = f.parameters()
    assert len(theta) == len(labels)
    g = f.with_parameters(theta)
    assert np.array_equal(f.evaluate_masks(np.arange(64)), g.evaluate_masks(np.arange(64)))


def test_multivariate_k1_matches_evaluate():
    f = random_dsf(1, n=4, layers=2)
    asg = MultivariateAssignment((0,))
    for m in range(16):
        assert evaluate_multivariate(f, asg, [Subset(f.ground, m)]) == pytest.approx(evaluate(f, Subset(f.ground, m)))


def test_multivariate_empty_trigger_zeroes_layer():
    f = random_dsf(2, n=4, layers=2, signed_modular=False)
    asg = MultivariateAssignment((0, 1))
    lg = layer_ground(f, 1)
    assert evaluate_multivariate(f, asg, [f.ground.full(), lg.empty()]) == 0.0
    full = evaluate_multivariate(f, asg, [f.ground.full(), lg.full()])
    assert full == pytest.approx(evaluate(f, f.ground.full()))


def test_multivariate_errors():
    f = random_dsf(2, n=4, layers=2)
    with pytest.raises(InvalidInputError):
        MultivariateAssignment((1, 2))
    with pytest.raises(InvalidInputError):
        evaluate_multivariate(f, MultivariateAssignment((0, 1)), [f.ground.full()])
    bare = DsfModel(f.ground, f.nodes, f.root)
    with pytest.raises(InvalidInputError):
        evaluate_multivariate(bare, MultivariateAssignment((0, 1)), [f.ground.full(), ["L1_0"]])
