"""Command-line front end: model and dataset files, subcommands and the repro harness."""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import analysis, learn, optimize, zoo
from ._backend import set_threads
from .concave import ConcaveUnit
from .core import DsfError, GroundSet, InvalidInputError, ModularFunction, SetFunction, Subset
from .dsf import DsfModel, DsfNode, concave_extension, validate_model

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def fmt(x) -> str:
    """Numbers are printed with 12 significant digits."""
    if isinstance(x, Fraction):
        return str(x)
    return format(float(x), ".12g")


def _num(x) -> str:
    # 17 significant digits round-trip every double
    return format(float(x), ".17g")


# -- model files ----------------------------------------------------------------------------

def _params_to_json(unit: ConcaveUnit) -> dict:
    d = unit.to_dict()
    p = {}
    for k, v in d["params"].items():
        if isinstance(v, str):
            p[k] = v  # labels such as a curvature mode
        else:
            p[k] = [_num(t) for t in v] if isinstance(v, (list, tuple)) else _num(v)
    return {"kind": d["kind"], "params": p}


def _params_from_json(d: dict) -> ConcaveUnit:
    p = {}
    for k, v in d.get("params", {}).items():
        if isinstance(v, list):
            p[k] = [float(t) for t in v]
        else:
            try:
                p[k] = float(v)
            except ValueError:
                p[k] = v
    return ConcaveUnit(d["kind"], p)


def model_to_json(f: DsfModel) -> dict:
    labels = f.ground.labels
    nodes = []
    for nd in f.nodes:
        parents = [{"node": p, "weight": _num(w)} for p, w in nd.parents_internal]
        parents += [{"element": labels[a], "weight": _num(w)} for a, w in nd.parents_ground]
        nodes.append({"id": nd.id, "unit": _params_to_json(nd.unit), "parents": parents})
    doc = {"ground": list(labels), "nodes": nodes, "root": f.root,
           "final_modular": [_num(w) for w in f.final_modular.weights]}
    if f.layer_of:
        doc["layers"] = dict(f.layer_of)
    if f.frozen:
        doc["frozen"] = sorted(f.frozen)
    return doc


def model_from_json(doc: dict) -> DsfModel:
    try:
        ground = GroundSet(doc["ground"])
        nodes = []
        for nd in doc["nodes"]:
            pi, pg = [], []
            for p in nd.get("parents", []):
                w = float(p["weight"])
                if "node" in p:
                    pi.append((p["node"], w))
                else:
                    pg.append((ground.index(p["element"]), w))
            nodes.append(DsfNode(nd["id"], _params_from_json(nd["unit"]), pi, pg))
        fm = doc.get("final_modular")
        fm = ModularFunction(ground, tuple(float(w) for w in fm)) if fm is not None else None
        f = DsfModel(ground, nodes, doc["root"], fm, doc.get("layers"), tuple(doc.get("frozen", ())))
    except (KeyError, TypeError, ValueError) as e:
        raise InvalidInputError(f"malformed model file: {e}") from e
    rep = validate_model(f)
    if not rep.passed:
        raise InvalidInputError(f"invalid model: {rep.witnesses[:3]}")
    return f


def save_model(f: DsfModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_json(f), indent=1) + "\n")


def load_model(path) -> DsfModel:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise InvalidInputError(f"malformed model file: {e}") from e
    return model_from_json(doc)


# -- datasets ---------------------------------------------------------------------------------

def load_dataset(path, ground: GroundSet) -> learn.Dataset:
    sets, values = [], []
    for ln, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            sets.append(Subset.of(ground, list(rec["set"])))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise InvalidInputError(f"{path}:{ln}: bad record ({e})") from e
        values.append(rec.get("value"))
    have = [v is not None for v in values]
    if any(have) and not all(have):
        raise InvalidInputError("either every record has a value or none does")
    return learn.Dataset(ground, sets, [float(v) for v in values] if values and all(have) else None)


def save_dataset(data: learn.Dataset, path) -> None:
    with open(path, "w") as fh:
        for i, s in enumerate(data.sets):
            rec = {"set": s.labels()}
            if data.values is not None:
                rec["value"] = float(data.values[i])
            fh.write(json.dumps(rec) + "\n")


# -- helpers ----------------------------------------------------------------------------------

def _resolve(spec: str):
    """A model file path or a preset name."""
    if os.path.exists(spec):
        return load_model(spec)
    try:
        return zoo.preset(spec)
    except InvalidInputError:
        raise UsageError(f"no model file or preset named {spec!r}")


def _floats(s: str) -> list:
    try:
        return [float(t) for t in s.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {s!r}")


def _fn(f) -> SetFunction:
    return f.as_set_function() if isinstance(f, DsfModel) else f


# -- subcommands ---------------------------------------------------------------------------------

def cmd_eval(a) -> int:
    f = _resolve(a.model)
    A = Subset.of(f.ground, a.set or "")
    print(fmt(_fn(f)(A)))
    return EXIT_OK


def cmd_extension(a) -> int:
    f = _resolve(a.model)
    if not isinstance(f, DsfModel):
        raise UsageError("extension needs a DSF model")
    print(fmt(concave_extension(f, _floats(a.x))))
    return EXIT_OK


def cmd_verify(a) -> int:
    if bool(a.model) == bool(a.preset):
        raise UsageError("give exactly one of --model or --preset")
    f = _resolve(a.model or a.preset)
    props = tuple(p.strip() for p in a.props.split(",") if p.strip())
    rep = analysis.verify_properties(f, props)
    for p, r in rep.details["results"].items():
        print(r.summary())
        for w in r.witnesses[:a.max_witnesses]:
            print(f"  witness: {w}")
    print("pass" if rep.passed else "FAIL")
    return EXIT_OK if rep.passed else EXIT_FAIL


def cmd_maximize(a) -> int:
    f = _resolve(a.model)
    if a.knapsack is not None:
        if a.costs is None:
            raise UsageError("--knapsack needs --costs")
        c = optimize.knapsack(a.knapsack, _floats(a.costs))
    elif a.cardinality is not None:
        c = optimize.cardinality(a.cardinality)
    else:
        raise UsageError("give --cardinality or --knapsack")
    r = optimize.greedy_max(f, c)
    print(f"set: {r.subset}")
    print(f"value: {fmt(r.value)}")
    return EXIT_OK


def cmd_learn(a) -> int:
    f = _resolve(a.model)
    if not isinstance(f, DsfModel):
        raise UsageError("learn needs a DSF topology")
    data = load_dataset(a.data, f.ground)
    if a.init == "random":
        f = learn.random_init(f, a.seed)
    loss = a.loss or ("squared" if a.mode == "regression" else "hinge")
    cfg = learn.TrainConfig(lr=a.lr, epochs=a.epochs, batch_size=a.batch_size, lam=a.lam, loss=loss,
                            budget=a.budget, seed=a.seed, optimizer=a.optimizer)
    if a.mode == "regression":
        res = learn.fit_regression(f, data, cfg)
    else:
        res = learn.fit_max_margin(f, data, cfg)
    if a.out:
        save_model(res.model, a.out)
    if a.history:
        Path(a.history).write_text(res.history_csv())
    print(f"final loss: {fmt(res.history[-1][1])}")
    return EXIT_OK


# -- repro harness ---------------------------------------------------------------------------------

class _Checker:
    def __init__(self):
        self.ok = True

    def value(self, label, got, want, tol=0.0):
        good = abs(float(got) - float(want)) <= tol
        self._line(label, fmt(got), fmt(want), good)

    def flag(self, label, good, got="", want=""):
        self._line(label, str(got), str(want), bool(good))

    def _line(self, label, got, want, good):
        self.ok &= good
        print(f"{label}: {got} (expected {want}) {'ok' if good else 'MISMATCH'}")


def _repro_laminar6(ck):
    f, oracle = zoo.laminar6()
    ck.value("f({a,b,d,e})", f(Subset.of(f.ground, "a,b,d,e")), 3)
    ck.value("f({a,b,c})", f(Subset.of(f.ground, "a,b,c")), 2)
    ck.value("f(V)", f(f.ground.full()), 3)
    bad = int(np.sum(f.evaluate_masks(np.arange(64)) != oracle.table()))
    ck.value("subsets where model != oracle", bad, 0)
    ck.value("extension at (.5,.5,.5,0,0,0)", concave_extension(f, [.5, .5, .5, 0, 0, 0]), 1.5, 1e-12)


def _repro_props(ck, f, props=("submodular", "monotone", "normalized")):
    rep = analysis.verify_properties(f, props)
    ck.flag("+".join(props), rep.passed, "pass" if rep.passed else "FAIL", "pass")


def _repro_overlap6(ck):
    f = zoo.overlap6()
    ck.value("f({c,d})", f(Subset.of(f.ground, "c,d")), 4)
    ck.value("f(V)", f(f.ground.full()), 5)
    _repro_props(ck, f)


def _repro_fourblocks8(ck):
    f = zoo.fourblocks8()
    ck.value("f(V)", f(f.ground.full()), 7)
    _repro_props(ck, f)


def _repro_k4(ck):
    r = zoo.k4_rank()
    g = r.ground
    ck.value("r(3-cycle {12,13,23})", r(Subset.of(g, ["12", "13", "23"])), 2)
    ck.value("r(acyclic {12,13,14})", r(Subset.of(g, ["12", "13", "14"])), 3)
    big = [r(m) for m in range(64) if bin(m).count("1") > 3]
    ck.value("min r(A) over |A| > 3", min(big), 3)
    ck.value("max r(A) over |A| > 3", max(big), 3)
    _repro_props(ck, r)


def _repro_fk(ck, k):
    f = zoo.make_fk_hat(k)
    rep = analysis.check_fk_membership(f, k)
    ck.flag(f"f_hat_{k} in F_{k}", rep.passed, "pass" if rep.passed else "FAIL", "pass")
    _repro_props(ck, f)


def _repro_table1(ck):
    want = {"f1": (1, 1, 1, 1, 1), "f2": (1, 2, 2, 2, 2), "f3": (1, 1, 2, 2, 2),
            "f4": (1, 2, 2, 3, 4), "f5": (Fraction(7, 12), 1, Fraction(5, 6), 1, 1)}
    print("      (1,0)  (2,0)  (1,1)  (2,1)  (2,2)")
    for name, h in analysis.basis_functions().items():
        got = analysis.symmetrize_five_vector(h)
        row = "  ".join(f"{str(v):>5}" for v in got)
        good = tuple(got) == tuple(Fraction(w) for w in want[name])
        ck._line(f"E{name}", row, ", ".join(str(Fraction(w)) for w in want[name]), good)


def _repro_fig1(ck):
    g = zoo.fig1()
    ck.value("g({b})", g(Subset.of(g.ground, "b")), math.sqrt(8) + 1, 1e-12)
    ck.value("g({d,h,f})", g(Subset.of(g.ground, "d,h,f")), 9, 1e-12)
    r = optimize.greedy_max(g, optimize.cardinality(3))
    ck.flag("greedy k=3 set", r.subset == Subset.of(g.ground, "d,f,h"), r.subset, "{d,f,h}")
    ck.value("greedy k=3 value", r.value, 9, 1e-12)


def _repro_thm41(ck, key):
    phi = zoo.THM41_UNITS[key]()
    c = analysis.classify_two_layer_scmm(phi)
    if key == "sqrt":
        ck.flag("verdict", c.is_scmm, c.verdict, "is_scmm")
        ck.value("c1", c.c1, 0.0215442, 1e-6)
        ck.value("c2", c.c2, 0.486010, 1e-6)
        f, e = zoo.thm41(phi), analysis.expand_two_layer_scmm(phi)
        err = float(np.max(np.abs(f.evaluate_masks(np.arange(64)) - e.table())))
        ck.value("max |nested - expansion| on 64 subsets", err, 0, 1e-9)
    else:
        ck.flag("verdict", not c.is_scmm, c.verdict, "not_scmm")
        ck.value("c1", c.c1, -1.5)
        ck.value("c2", c.c2, -2)


REPRO_CASES = {
    "laminar6": _repro_laminar6,
    "overlap6": _repro_overlap6,
    "fourblocks8": _repro_fourblocks8,
    "k4": _repro_k4,
    "fk1": lambda ck: _repro_fk(ck, 1),
    "fk2": lambda ck: _repro_fk(ck, 2),
    "table1": _repro_table1,
    "fig1": _repro_fig1,
    "thm41:sqrt": lambda ck: _repro_thm41(ck, "sqrt"),
    "thm41:trunc3": lambda ck: _repro_thm41(ck, "trunc3"),
}


def cmd_repro(a) -> int:
    cases = list(REPRO_CASES) if a.case == "all" else [a.case]
    ok = True
    for name in cases:
        if name not in REPRO_CASES:
            raise UsageError(f"unknown repro case {name!r}")
        print(f"== {name}")
        ck = _Checker()
        REPRO_CASES[name](ck)
        ok &= ck.ok
    return EXIT_OK if ok else EXIT_FAIL


# -- entry point ----------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dsfkit", description="Deep submodular function toolkit")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads for batch kernels (default: DSFKIT_THREADS or all cores)")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("eval", help="evaluate f(A)")
    s.add_argument("--model", required=True, help="model JSON file or preset name")
    s.add_argument("--set", default="", help="comma-separated element labels")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("extension", help="evaluate the concave extension at x")
    s.add_argument("--model", required=True)
    s.add_argument("--x", required=True, help="comma-separated nonnegative reals")
    s.set_defaults(func=cmd_extension)

    s = sub.add_parser("verify", help="exhaustively check set-function properties")
    s.add_argument("--model")
    s.add_argument("--preset")
    s.add_argument("--props", default="submodular,monotone,normalized")
    s.add_argument("--max-witnesses", type=int, default=5)
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("maximize", help="greedy maximization")
    s.add_argument("--model", required=True)
    s.add_argument("--cardinality", type=int)
    s.add_argument("--knapsack", type=float, help="budget")
    s.add_argument("--costs", help="comma-separated per-element costs")
    s.set_defaults(func=cmd_maximize)

    s = sub.add_parser("learn", help="train weights from a JSONL dataset")
    s.add_argument("--mode", choices=("regression", "maxmargin"), required=True)
    s.add_argument("--model", required=True, help="initial model / topology")
    s.add_argument("--data", required=True)
    s.add_argument("--epochs", type=int, default=100)
    s.add_argument("--lr", type=float, default=0.05)
    s.add_argument("--lambda", dest="lam", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--budget", type=int, default=None)
    s.add_argument("--batch-size", type=int, default=32)
    s.add_argument("--loss", choices=("squared", "absolute", "hinge", "logistic"))
    s.add_argument("--optimizer", choices=("sgd", "adam"), default="sgd")
    s.add_argument("--init", choices=("keep", "random"), default="keep")
    s.add_argument("--out", help="write the trained model here")
    s.add_argument("--history", help="write the loss history CSV here")
    s.set_defaults(func=cmd_learn)

    s = sub.add_parser("repro", help="self-checking reproduction cases")
    s.add_argument("--case", required=True, help="one of: " + ", ".join(REPRO_CASES) + ", all")
    s.set_defaults(func=cmd_repro)
    return p


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    try:
        set_threads(a.threads)
        return a.func(a)
    except (UsageError, DsfError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


def main() -> None:
    sys.exit(run_cli())
