"""Regression (ERM) and max-margin training by projected stochastic subgradient steps."""
from __future__ import annotations

import io
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .concave import PARAM_CEIL, PARAM_FLOOR
from .core import (GroundSet, InvalidInputError, ModularFunction, SetFunction, Subset,
                   masks_to_indicators)
from .dsf import CompiledDsf, DsfModel, DsfNode
from .optimize import cardinality, greedy_max, hamming_loss

log = logging.getLogger(__name__)


@dataclass
class Dataset:
    """Subsets with values (regression) or reference summaries (max-margin)."""

    ground: GroundSet
    sets: list
    values: Optional[np.ndarray] = None

    def __post_init__(self):
        self.sets = [s if isinstance(s, Subset) else Subset.of(self.ground, s) for s in self.sets]
        for s in self.sets:
            if s.ground != self.ground:
                raise InvalidInputError("dataset subsets must share the ground set")
        if self.values is not None:
            self.values = np.asarray(self.values, dtype=float)
            if self.values.shape != (len(self.sets),):
                raise InvalidInputError("one value per subset")
            if not np.all(np.isfinite(self.values)):
                raise InvalidInputError("dataset values must be finite")

    def __len__(self):
        return len(self.sets)

    @property
    def is_regression(self) -> bool:
        return self.values is not None

    def indicators(self) -> np.ndarray:
        X = np.zeros((len(self.sets), self.ground.size))
        for r, s in enumerate(self.sets):
            X[r, s.ids()] = 1.0
        return X

    def split(self, n_train: int):
        a = Dataset(self.ground, self.sets[:n_train], None if self.values is None else self.values[:n_train])
        b = Dataset(self.ground, self.sets[n_train:], None if self.values is None else self.values[n_train:])
        return a, b


@dataclass
class TrainConfig:
    lr: float = 0.05
    decay: float = 0.0  # rate at epoch e is lr / (1 + decay * e)
    epochs: int = 100
    batch_size: int = 32
    lam: float = 0.0  # weight of lam * ||w||^2
    loss: str = "squared"  # squared | absolute | hinge | logistic
    margin_loss: Callable[[Subset], SetFunction] = hamming_loss
    budget: Optional[int] = None  # inference budget; defaults to |S|
    seed: int = 0
    optimizer: str = "sgd"  # sgd | adam
    train_units: bool = False  # also fit unit parameters (gamma, delta, shift)
    projection: str = "clamp"

    def __post_init__(self):
        if self.lr <= 0 or self.epochs < 0 or self.batch_size < 1:
            raise InvalidInputError("need lr > 0, epochs >= 0, batch_size >= 1")
        if self.lam < 0:
            raise InvalidInputError("lam must be >= 0")
        if self.loss not in ("squared", "absolute", "hinge", "logistic"):
            raise InvalidInputError(f"unknown loss {self.loss!r}")
        if self.optimizer not in ("sgd", "adam"):
            raise InvalidInputError(f"unknown optimizer {self.optimizer!r}")

    def rate(self, epoch: int) -> float:
        return self.lr / (1.0 + self.decay * epoch)


@dataclass
class FitResult:
    model: DsfModel
    history: list  # (epoch, objective)

    def history_csv(self) -> str:
        buf = io.StringIO()
        buf.write("epoch,loss\n")
        for e, v in self.history:
            buf.write(f"{e},{v:.12g}\n")
        return buf.getvalue()

    def __iter__(self):
        return iter((self.model, self.history))


# -- parameters ----------------------------------------------------------------------------

def _clamp_unit(unit):
    p = {}
    for name in unit.learnable():
        v = unit.params[name]
        lo = PARAM_FLOOR.get(name, 0.0)
        hi = PARAM_CEIL.get(name, math.inf)
        if not lo <= v <= hi:
            p[name] = min(max(v, lo), hi)
    return unit.with_params(**p) if p else unit


def project_parameters(f: DsfModel) -> DsfModel:
    """Clamp internal and ground weights to >= 0 and unit parameters into their
    domains; the final modular term is left alone."""
    nodes = [DsfNode(nd.id, _clamp_unit(nd.unit),
                     [(p, max(0.0, w)) for p, w in nd.parents_internal],
                     [(a, max(0.0, w)) for a, w in nd.parents_ground]) for nd in f.nodes]
    return DsfModel(f.ground, nodes, f.root, f.final_modular, f.layer_of, f.frozen)


def _project(c: CompiledDsf, theta: np.ndarray) -> np.ndarray:
    return np.clip(theta, c.floor, c.ceil)


def random_init(f: DsfModel, seed: int = 0, scale_ground: bool = True) -> DsfModel:
    """Internal (and non-frozen ground) weights ~ U(0,1) / fan-in; final modular 0."""
    rng = np.random.default_rng(seed)
    nodes = []
    for nd in f.nodes:
        fan = max(1, len(nd.parents_internal) + len(nd.parents_ground))
        pi = [(p, rng.uniform(0, 1) / fan) for p, _ in nd.parents_internal]
        if nd.id in f.frozen or not scale_ground:
            pg = list(nd.parents_ground)
        else:
            pg = [(a, rng.uniform(0, 1) / fan) for a, _ in nd.parents_ground]
        nodes.append(DsfNode(nd.id, nd.unit, pi, pg))
    return DsfModel(f.ground, nodes, f.root, ModularFunction.zeros(f.ground), f.layer_of, f.frozen)


def rebind_ground(f: DsfModel, ground: GroundSet, features: np.ndarray) -> DsfModel:
    """Move a trained model onto a new ground set by swapping the frozen
    first-layer scores. ``features`` has one row per frozen node (model order)."""
    frozen = [nd for nd in f.nodes if nd.id in f.frozen]
    features = np.atleast_2d(np.asarray(features, dtype=float))
    if features.shape != (len(frozen), ground.size):
        raise InvalidInputError("need a (frozen nodes x new ground) feature matrix")
    if np.any(features < 0):
        raise InvalidInputError("feature scores must be >= 0")
    rows = {nd.id: features[i] for i, nd in enumerate(frozen)}
    nodes = []
    for nd in f.nodes:
        if nd.id in rows:
            if nd.parents_internal:
                raise InvalidInputError("frozen nodes must read only ground elements")
            nd = DsfNode(nd.id, nd.unit, (), [(a, w) for a, w in enumerate(rows[nd.id]) if w])
        elif nd.parents_ground:
            raise InvalidInputError(f"node {nd.id!r} reads the old ground set directly")
        nodes.append(nd)
    return DsfModel(ground, nodes, f.root, ModularFunction.zeros(ground), f.layer_of, f.frozen)


# -- optimizer ------------------------------------------------------------------------------

class _Stepper:
    """Projected subgradient step with an exact proximal step for lam * ||w||^2."""

    def __init__(self, c: CompiledDsf, cfg: TrainConfig):
        self.cfg = cfg
        mask = c.trainable.copy()
        if not cfg.train_units:
            mask[c.slices["unit"]] = False
        self.mask = mask
        self.m = np.zeros(mask.sum())
        self.v = np.zeros(mask.sum())
        self.t = 0

    def step(self, c: CompiledDsf, theta: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
        g = grad[self.mask]
        if self.cfg.optimizer == "adam":
            self.t += 1
            b1, b2 = 0.9, 0.999
            self.m = b1 * self.m + (1 - b1) * g
            self.v = b2 * self.v + (1 - b2) * g * g
            mh = self.m / (1 - b1 ** self.t)
            vh = self.v / (1 - b2 ** self.t)
            g = mh / (np.sqrt(vh) + 1e-8)
        theta = theta.copy()
        w = theta[self.mask] - lr * g
        if self.cfg.lam:
            w = w / (1.0 + 2.0 * lr * self.cfg.lam)
        theta[self.mask] = w
        return _project(c, theta)

    def penalty(self, theta) -> float:
        return self.cfg.lam * float(theta[self.mask] @ theta[self.mask])


# -- regression -----------------------------------------------------------------------------

def _reg_loss(r: np.ndarray, kind: str):
    if kind == "squared":
        return r * r, 2.0 * r
    if kind == "absolute":
        return np.abs(r), np.sign(r)
    raise InvalidInputError(f"{kind} is not a regression loss")


def fit_regression(topology: DsfModel, data: Dataset, cfg: TrainConfig) -> FitResult:
    """Minimize mean L(y, f(S)) + lam ||w||^2 with mini-batch projected steps."""
    if not data.is_regression:
        raise InvalidInputError("regression needs (set, value) samples")
    if len(data) == 0:
        raise InvalidInputError("empty dataset")
    if data.ground != topology.ground:
        raise InvalidInputError("dataset and model ground sets differ")
    c = topology.compile()
    theta = c.theta
    X, y = data.indicators(), data.values
    rng = np.random.default_rng(cfg.seed)
    stepper = _Stepper(c, cfg)

    def objective(cc, th):
        return float(_reg_loss(cc.forward(X)[0] - y, cfg.loss)[0].mean()) + stepper.penalty(th)

    history = [(0, objective(c, theta))]
    N = len(y)
    for epoch in range(1, cfg.epochs + 1):
        lr = cfg.rate(epoch - 1)
        perm = rng.permutation(N)
        for s in range(0, N, cfg.batch_size):
            idx = perm[s:s + cfg.batch_size]
            Xb = X[idx]
            out, Z, P = c.forward(Xb)
            _, dl = _reg_loss(out - y[idx], cfg.loss)
            grad, _, _ = c.backward(Xb, Z, P, coef=dl / len(idx))
            theta = stepper.step(c, theta, grad, lr)
            c = c.with_theta(theta)
        history.append((epoch, objective(c, theta)))
        log.debug("epoch %d objective %.6g", epoch, history[-1][1])
    model = c.to_model() if cfg.epochs else topology
    return FitResult(model, history)


# -- max-margin -----------------------------------------------------------------------------

def compiled_set_function(c: CompiledDsf) -> SetFunction:
    ground = c.model.ground
    n = ground.size

    def ev(mask: int) -> float:
        x = np.zeros(n)
        for i in range(n):
            if mask >> i & 1:
                x[i] = 1.0
        return float(c.forward(x)[0][0])

    return SetFunction(ground, ev, lambda ms: c.forward(masks_to_indicators(ms, n))[0])


def _margin_loss(m: float, kind: str):
    if kind == "hinge":
        return max(0.0, m), (1.0 if m > 0 else 0.0)
    if kind == "logistic":
        # softplus: a smooth upper bound on the hinge
        val = m + math.log1p(math.exp(-m)) if m > 0 else math.log1p(math.exp(m))
        return val, 1.0 / (1.0 + math.exp(-m))
    raise InvalidInputError(f"{kind} is not a margin loss")


def fit_max_margin(topology: DsfModel, summaries: Dataset, cfg: TrainConfig) -> FitResult:
    """Per summary S: A~ = greedy argmax of f + l_S, then a subgradient step on
    L(f(A~) + l_S(A~) - f(S)) + lam ||w||^2, followed by projection."""
    if len(summaries) == 0:
        raise InvalidInputError("no summaries")
    if summaries.ground != topology.ground:
        raise InvalidInputError("summaries and model ground sets differ")
    loss_kind = cfg.loss if cfg.loss in ("hinge", "logistic") else "hinge"
    losses = []
    for S in summaries.sets:
        ls = cfg.margin_loss(S)
        if ls(S) != 0:
            raise InvalidInputError("margin loss must vanish at its own summary")
        losses.append(ls)
    c = topology.compile()
    theta = c.theta
    stepper = _Stepper(c, cfg)
    rng = np.random.default_rng(cfg.seed)
    n = topology.n
    N = len(summaries)

    def margin_terms(cc, i):
        S = summaries.sets[i]
        k = cfg.budget if cfg.budget is not None else len(S)
        fn = compiled_set_function(cc)
        At = greedy_max(fn + losses[i], cardinality(k)).subset
        x = np.zeros((2, n))
        x[0, At.ids()] = 1.0
        x[1, S.ids()] = 1.0
        out, Z, P = cc.forward(x)
        return out[0] + losses[i](At) - out[1], x, Z, P

    def objective(cc, th):
        tot = sum(_margin_loss(margin_terms(cc, i)[0], loss_kind)[0] for i in range(N))
        return tot / N + stepper.penalty(th)

    history = [(0, objective(c, theta))]
    for epoch in range(1, cfg.epochs + 1):
        lr = cfg.rate(epoch - 1)
        perm = rng.permutation(N)
        for s in range(0, N, cfg.batch_size):
            idx = perm[s:s + cfg.batch_size]
            grad = np.zeros(len(theta))
            for i in idx:
                m, x, Z, P = margin_terms(c, i)
                _, dl = _margin_loss(m, loss_kind)
                if dl:
                    g, _, _ = c.backward(x, Z, P, coef=np.array([dl, -dl]) / len(idx))
                    grad += g
            theta = stepper.step(c, theta, grad, lr)
            c = c.with_theta(theta)
        history.append((epoch, objective(c, theta)))
    model = c.to_model() if cfg.epochs else topology
    return FitResult(model, history)


# -- gradient check --------------------------------------------------------------------------

@dataclass
class GradCheck:
    max_rel_error: float
    checked: int
    skipped: int
    worst: Optional[str] = None


def numeric_gradient_check(f: DsfModel, A, h: float = 1e-6, floor: float = 1e-2) -> GradCheck:
    """Compare backprop gradients with central differences for every parameter.

    Relative error is |g - fd| / max(|g|, |fd|, floor). Parameters are skipped
    when a perturbation of size h moves any unit across a kink or leaves the
    parameter's domain.
    """
    from .dsf import gradient_weights
    c = f.compile()
    if not isinstance(A, Subset):
        A = Subset.of(f.ground, A)
    x = np.zeros((1, f.n))
    x[0, A.ids()] = 1.0
    theta = c.theta
    out0, Z0, _ = c.forward(x)
    sig0 = c.kink_signature(Z0)
    g_all, _, _ = c.backward(x, *c.forward(x)[1:])
    worst, worst_label, checked, skipped = 0.0, None, 0, 0
    for i, label in enumerate(c.labels):
        if not c.trainable[i]:
            continue
        if theta[i] - h < c.floor[i] or theta[i] + h > c.ceil[i]:
            skipped += 1
            continue
        vals, sigs = [], []
        for d in (h, -h):
            th = theta.copy()
            th[i] += d
            ci = c.with_theta(th)
            o, Z, _ = ci.forward(x)
            vals.append(o[0])
            sigs.append(ci.kink_signature(Z))
        if any(not np.array_equal(s, sig0) for s in sigs):
            skipped += 1
            continue
        fd = (vals[0] - vals[1]) / (2 * h)
        err = abs(g_all[i] - fd) / max(abs(g_all[i]), abs(fd), floor)
        checked += 1
        if err > worst:
            worst, worst_label = err, label
    return GradCheck(worst, checked, skipped, worst_label)
