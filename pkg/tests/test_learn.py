import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from _models import KINKED, SMOOTH, random_dsf
from dsfkit import concave as C, zoo
from dsfkit.core import GroundSet, InvalidInputError, SetFunction, Subset
from dsfkit.dsf import DsfModel, DsfNode, validate_model
from dsfkit.learn import (Dataset, TrainConfig, fit_max_margin, fit_regression,
                          numeric_gradient_check, project_parameters, random_init, rebind_ground)
from dsfkit.optimize import cardinality, greedy_max


def uniform_sets(g, count, seed):
    rng = np.random.default_rng(seed)
    return [Subset(g, int(m)) for m in rng.integers(0, 1 << g.size, count)]


def sqrt_card_topology(n, seed=0):
    g = GroundSet.range(n)
    nodes = [DsfNode("t", C.sqrt(), (), [(i, 1.0) for i in range(n)]),
             DsfNode("r", C.identity(), [("t", 1.0)], ())]
    return random_init(DsfModel(g, nodes, "r"), seed)


def test_modular_target_recovered():
    g = GroundSet.range(6)
    m = np.random.default_rng(0).uniform(0, 2, 6)
    top = random_init(DsfModel(g, [DsfNode("r", C.identity(), (), [(i, 1.0) for i in range(6)])], "r"), 0)
    sets = uniform_sets(g, 200, 1)
    y = [m[s.ids()].sum() for s in sets]
    res = fit_regression(top, Dataset(g, sets, y), TrainConfig(lr=0.05, epochs=200, batch_size=16))
    c = res.model.compile()
    th = c.theta
    effective = th[c.slices["ground"]] + th[c.slices["modular"]]
    assert np.sqrt(np.mean((effective - m) ** 2)) < 1e-3


def test_zero_epochs_is_identity():
    top = sqrt_card_topology(5)
    sets = uniform_sets(top.ground, 20, 0)
    res = fit_regression(top, Dataset(top.ground, sets, [1.0] * 20), TrainConfig(epochs=0))
    assert res.model is top
    assert len(res.history) == 1


def test_sqrt_cardinality_self_realizable():
    top = sqrt_card_topology(10)
    g = top.ground
    sets = uniform_sets(g, 600, 2)
    y = np.sqrt([len(s) for s in sets])
    train, test = Dataset(g, sets, y).split(500)
    res = fit_regression(top, train, TrainConfig(lr=0.05, epochs=100, batch_size=16))
    pred = res.model.evaluate_masks(np.array([s.bits for s in test.sets]))
    rel = np.sqrt(np.mean((pred - test.values) ** 2)) / np.sqrt(np.mean(test.values ** 2))
    assert rel < 0.02
    # realizable and unregularized: loss falls by three orders of magnitude
    assert res.history[-1][1] < 1e-3 * res.history[0][1]


def test_regression_is_deterministic_and_valid():
    f = random_init(random_dsf(3, n=6, signed_modular=False), 1)
    target = random_dsf(4, n=6)
    sets = uniform_sets(f.ground, 100, 3)
    y = target.evaluate_masks(np.array([s.bits for s in sets]))
    cfg = TrainConfig(lr=0.05, epochs=5, batch_size=8, seed=7)
    a = fit_regression(f, Dataset(f.ground, sets, y), cfg)
    b = fit_regression(f, Dataset(f.ground, sets, y), cfg)
    assert a.history == b.history
    assert validate_model(a.model).passed
    theta = a.model.compile().theta
    c = a.model.compile()
    assert np.all(theta[c.nonneg] >= 0)


@pytest.mark.parametrize("loss,opt", [("absolute", "sgd"), ("squared", "adam")])
def test_other_losses_and_optimizers_reduce_loss(loss, opt):
    top = sqrt_card_topology(8)
    sets = uniform_sets(top.ground, 200, 5)
    y = np.sqrt([len(s) for s in sets])
    res = fit_regression(top, Dataset(top.ground, sets, y),
                         TrainConfig(lr=0.02, epochs=30, loss=loss, optimizer=opt))
    assert res.history[-1][1] < res.history[0][1]


def test_train_units_moves_unit_parameters():
    g = GroundSet.range(6)
    top = DsfModel(g, [DsfNode("t", C.log_gamma(1.0), (), [(i, 1.0) for i in range(6)])], "t")
    sets = uniform_sets(g, 200, 0)
    y = [3.0 * np.log1p(len(s) / 3.0) for s in sets]
    res = fit_regression(top, Dataset(g, sets, y), TrainConfig(lr=0.05, epochs=50, train_units=True))
    assert res.model.node("t").unit.params["gamma"] != 1.0
    frozen = fit_regression(top, Dataset(g, sets, y), TrainConfig(lr=0.05, epochs=2))
    assert frozen.model.node("t").unit.params["gamma"] == 1.0


def test_regression_errors():
    top = sqrt_card_topology(4)
    with pytest.raises(InvalidInputError):
        fit_regression(top, Dataset(top.ground, [], []), TrainConfig())
    with pytest.raises(InvalidInputError):
        fit_regression(top, Dataset(top.ground, [top.ground.full()]), TrainConfig())
    with pytest.raises(InvalidInputError):
        TrainConfig(lr=0)
    with pytest.raises(InvalidInputError):
        Dataset(top.ground, [top.ground.full()], [np.nan])


def test_history_csv():
    top = sqrt_card_topology(4)
    sets = uniform_sets(top.ground, 10, 0)
    res = fit_regression(top, Dataset(top.ground, sets, [1.0] * 10), TrainConfig(epochs=2))
    lines = res.history_csv().splitlines()
    assert lines[0] == "epoch,loss" and len(lines) == 4
    assert lines[1].startswith("0,")


def modular_topology(n):
    g = GroundSet.range(n)
    return DsfModel(g, [DsfNode("r", C.identity(), (), [(i, 0.1) for i in range(n)])], "r")


def test_max_margin_separable_toy():
    top = modular_topology(8)
    S = Subset(top.ground, 0b10100100)
    res = fit_max_margin(top, Dataset(top.ground, [S]), TrainConfig(lr=0.1, epochs=30, batch_size=1))
    assert greedy_max(res.model, cardinality(len(S))).subset == S
    assert all(v >= 0 for _, v in res.history)


def test_max_margin_huge_lambda_zeroes_weights():
    top = modular_topology(6)
    S = Subset(top.ground, 0b000011)
    res = fit_max_margin(top, Dataset(top.ground, [S]), TrainConfig(lr=0.1, epochs=20, lam=1e9))
    c = res.model.compile()
    assert np.all(np.abs(c.theta[c.slices["ground"]]) < 1e-6)


def test_max_margin_rejects_bad_loss():
    top = modular_topology(4)
    S = Subset(top.ground, 0b0011)
    bad = lambda _S: SetFunction(top.ground, lambda m: 1.0)
    with pytest.raises(InvalidInputError):
        fit_max_margin(top, Dataset(top.ground, [S]), TrainConfig(margin_loss=bad))
    with pytest.raises(InvalidInputError):
        fit_max_margin(top, Dataset(top.ground, []), TrainConfig())


def test_max_margin_logistic_runs():
    top = modular_topology(6)
    S = Subset(top.ground, 0b001010)
    res = fit_max_margin(top, Dataset(top.ground, [S]),
                         TrainConfig(lr=0.1, epochs=40, loss="logistic", batch_size=1))
    assert greedy_max(res.model, cardinality(2)).subset == S


class TestProjection:
    g = GroundSet("ab")

    def test_interior_is_identity(self):
        f = random_dsf(0, n=4)
        p = project_parameters(f)
        assert np.array_equal(p.compile().theta, f.compile().theta)

    def test_clamps_but_keeps_modular(self):
        nodes = [DsfNode("h", C.sqrt(), (), [(0, 1.0), (1, -0.2)]),
                 DsfNode("r", C.sqrt(), [("h", -0.3)], ())]
        f = DsfModel(self.g, nodes, "r", [-2.0, 1.0])
        p = project_parameters(f)
        assert dict(p.node("r").parents_internal)["h"] == 0.0
        assert dict(p.node("h").parents_ground)[1] == 0.0
        assert p.final_modular.weights == (-2.0, 1.0)


def test_gradient_check_linear_model():
    g = GroundSet.range(4)
    nodes = [DsfNode("h", C.identity(), (), [(i, 0.5 + i) for i in range(4)]),
             DsfNode("r", C.identity(), [("h", 2.0)], [(0, 1.0)])]
    f = DsfModel(g, nodes, "r", [0.3, -1.0, 0.0, 2.0])
    # differences are exact for any h on a linear model; a wide step keeps roundoff ~1e-13
    res = numeric_gradient_check(f, Subset.of(g, [0, 2, 3]), h=1e-3)
    assert res.max_rel_error < 1e-10
    # only the two unit shifts sit on their domain boundary (0)
    assert res.checked == 10 and res.skipped == 2


@settings(max_examples=20)
@given(st.integers(0, 10_000), st.integers(1, 255))
def test_gradient_check_random_two_layer(seed, mask):
    f = random_dsf(seed, n=8, layers=2, kinds=SMOOTH + KINKED)
    res = numeric_gradient_check(f, Subset(f.ground, mask), h=1e-6)
    assert res.max_rel_error < 1e-5
    assert res.checked > 0


def test_gradient_check_skips_kinks():
    g = GroundSet.range(4)
    nodes = [DsfNode("h", C.truncate(2.0), (), [(i, 1.0) for i in range(4)]),
             DsfNode("r", C.sqrt(), [("h", 1.0)], ())]
    f = DsfModel(g, nodes, "r")
    res = numeric_gradient_check(f, Subset.of(g, [0, 1]))
    assert res.skipped > 0
    assert res.max_rel_error < 1e-5


def test_rebind_ground():
    F = zoo.FeatureMatrix(np.array([[1.0, 0.0, 2.0], [0.0, 1.0, 1.0]]))
    g = GroundSet("abc")
    emb = [DsfNode(f"e{u}", C.identity(), (), [(i, F.scores[u, i]) for i in range(3) if F.scores[u, i]])
           for u in range(2)]
    top = DsfNode("r", C.sqrt(), [("e0", 1.0), ("e1", 2.0)], ())
    f = DsfModel(g, emb + [top], "r", frozen=("e0", "e1"))
    new_g = GroundSet("wxyz")
    new_scores = np.array([[1.0, 1.0, 0.0, 0.0], [0.0, 0.0, 3.0, 1.0]])
    h = rebind_ground(f, new_g, new_scores)
    assert h.ground == new_g
    assert h(Subset.of(new_g, "w,y")) == pytest.approx(np.sqrt(1.0 + 2.0 * 3.0))
    assert h.node("r") == f.node("r")
    with pytest.raises(InvalidInputError):
        rebind_ground(f, new_g, new_scores[:1])


def test_frozen_embedding_untouched_by_training():
    g = GroundSet.range(5)
    emb = DsfNode("e", C.identity(), (), [(i, 1.0 + i) for i in range(5)])
    f = DsfModel(g, [emb, DsfNode("r", C.sqrt(), [("e", 1.0)], [(0, 0.5)])], "r", frozen=("e",))
    sets = uniform_sets(g, 50, 0)
    res = fit_regression(f, Dataset(g, sets, [float(len(s)) for s in sets]), TrainConfig(epochs=5))
    assert res.model.node("e") == emb
