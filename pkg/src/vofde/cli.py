"""Command-line entry point: solver runs, training loops, and CSV/JSON emission.

Subcommands: solve, weights, vp-train, gnn-train, sbm-gen, grad-check.
Settings come from an optional JSON config file plus repeatable
``--set key=value`` overrides; unknown keys are rejected.  The output
directory is ``--out``, or the VOFDE_OUT environment variable, or the
current directory.  Exit codes: 0 success, 2 config/validation error,
3 numerical divergence, 4 check failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import autodiff as ad
from . import solvers
from .errors import DivergenceError, VofdeError
from .fde_inverse import train_vp_with_state, vp_rhs
from .frac_core import abm_weights, corrector_weights, l1_weights
from .graph_dyn import generate_sbm, load_graph_csv, save_graph_csv, train_node_classifier
from .ioutil import fmt17, write_csv
from .nn import Mlp, params_to_json
from .order_fn import StateNetOrder, make_order_model, order_model_to_json
from .solvers import Scheme, SolverConfig

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_CHECK_FAILED = 4


class _Defaults:
    solve = {
        "scheme": "ABM_P",
        "rhs": "linear:-1.0",
        "order": "const:0.5",
        "x0": [1.0],
        "t0": 0.0,
        "t1": 1.0,
        "steps": 100,
        "memory_window": None,
        "seed": 0,
    }
    weights = {"scheme": "ABM_P", "n": 0, "alpha": 0.5}
    vp_train = {
        "iterations": 2000,
        "j_points": 40,
        "lr": 0.01,
        "lambda1": 1.0,
        "lambda2": 1.0,
        "seed": 0,
        "order_kind": "grid",
        "order_init": 0.8,
    }
    gnn_train = {
        "dataset": "sbm",
        "dynamics": "grand_l",
        "order": "grid:0.8",
        "baseline_order": None,
        "t_end": 3.0,
        "steps": 8,
        "epochs": 100,
        "lr": 0.01,
        "seeds": [0],
        "hidden": 16,
        "patience": 50,
        "jobs": 1,
        "sbm_n": 200,
        "sbm_p_in": 0.1,
        "sbm_p_out": 0.01,
        "sbm_d": 8,
        "sbm_signal": 1.0,
    }
    sbm_gen = {"n": 200, "p_in": 0.1, "p_out": 0.01, "d": 8, "signal": 1.0, "seed": 0}
    grad_check = {
        "suites": ["primitives", "mlp", "solver"],
        "tol": 1e-4,
        "seed": 0,
        "inject_fault": False,
    }


class CliError(Exception):
    def __init__(self, message, code=EXIT_CONFIG):
        self.code = code
        super().__init__(message)


def _load_config(defaults: dict, config_path, overrides) -> dict:
    cfg = dict(defaults)
    if config_path is not None:
        if not os.path.exists(config_path):
            raise CliError(f"config file not found: {config_path}")
        try:
            with open(config_path) as fh:
                loaded = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read config {config_path}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise CliError(f"config {config_path} must hold a JSON object")
        for key, value in loaded.items():
            if key not in cfg:
                raise CliError(f"unknown config key {key!r}")
            cfg[key] = value
    for item in overrides or ():
        if "=" not in item:
            raise CliError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        if key not in cfg:
            raise CliError(f"unknown config key {key!r}")
        try:
            cfg[key] = json.loads(raw)
        except json.JSONDecodeError:
            cfg[key] = raw
    return cfg


def _out_dir(args) -> str:
    out = args.out or os.environ.get("VOFDE_OUT") or "."
    os.makedirs(out, exist_ok=True)
    return out


def _json17(obj) -> str:
    """Deterministic JSON with 17-significant-digit floats."""
    if isinstance(obj, dict):
        items = (f"{json.dumps(str(k))}: {_json17(v)}" for k, v in obj.items())
        return "{" + ", ".join(items) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(_json17(v) for v in obj) + "]"
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt17(obj)
    return json.dumps(obj)


def _parse_scheme(name) -> Scheme:
    try:
        return Scheme(str(name))
    except ValueError:
        raise CliError(f"unknown scheme {name!r} (choose L1, ABM_P, ABM_PC)") from None


def builtin_rhs(descriptor: str):
    """Right-hand sides selectable from configs: linear:<lam>, logistic, zero."""
    parts = str(descriptor).split(":")
    kind = parts[0]
    if kind == "linear":
        lam = float(parts[1]) if len(parts) > 1 else -1.0
        return solvers.linear_rhs(lam)
    if kind == "logistic":
        return lambda t, x: vp_rhs(x)
    if kind == "zero":
        return solvers.zero_rhs
    raise CliError(f"unknown rhs {descriptor!r} (choose linear:<lam>, logistic, zero)")


def _write_alpha_trace(path, trace) -> None:
    write_csv(path, "t,alpha", trace)


# ---------------------------------------------------------------------------
# subcommands


def cmd_solve(args) -> int:
    cfg = _load_config(_Defaults.solve, args.config, args.set)
    out = _out_dir(args)
    scheme = _parse_scheme(cfg["scheme"])
    rng = np.random.default_rng(int(cfg["seed"]))
    store = ad.ParamStore()
    x0 = np.atleast_1d(np.asarray(cfg["x0"], dtype=np.float64))
    try:
        order = make_order_model(cfg["order"], store, float(cfg["t0"]), float(cfg["t1"]),
                                 rng, state_dim=x0.size)
        sc = SolverConfig(
            t0=float(cfg["t0"]), t1=float(cfg["t1"]), steps=int(cfg["steps"]),
            scheme=scheme,
            memory_window=None if cfg["memory_window"] is None else int(cfg["memory_window"]),
        )
        traj = solvers.solve(builtin_rhs(cfg["rhs"]), order, x0, sc)
    except DivergenceError:
        raise
    except VofdeError as exc:
        raise CliError(str(exc)) from exc
    with open(os.path.join(out, "trajectory.csv"), "w") as fh:
        traj.to_csv(fh)
    _write_alpha_trace(os.path.join(out, "alpha_trace.csv"),
                       np.column_stack([traj.times, traj.orders]))
    print(",".join(fmt17(v) for v in traj.states[-1]))
    return EXIT_OK


def cmd_weights(args) -> int:
    cfg = _load_config(_Defaults.weights, args.config, args.set)
    scheme = _parse_scheme(cfg["scheme"])
    kernel = {Scheme.L1: l1_weights, Scheme.ABM_P: abm_weights, Scheme.ABM_PC: corrector_weights}
    try:
        row = kernel[scheme](int(cfg["n"]), float(cfg["alpha"]), 1.0)
    except VofdeError as exc:
        raise CliError(str(exc)) from exc
    print("weights," + ",".join(fmt17(w) for w in row.weights))
    print("scale," + fmt17(row.scale))
    print("sum," + fmt17(row.weights.sum()))
    if scheme == Scheme.ABM_PC:
        print("implicit," + fmt17(row.implicit_weight))
    return EXIT_OK


def cmd_vp_train(args) -> int:
    cfg = _load_config(_Defaults.vp_train, args.config, args.set)
    out = _out_dir(args)
    try:
        reports, setup = train_vp_with_state(
            iterations=int(cfg["iterations"]), j_points=int(cfg["j_points"]),
            seed=int(cfg["seed"]), lr=float(cfg["lr"]),
            lambda1=float(cfg["lambda1"]), lambda2=float(cfg["lambda2"]),
            order_kind=str(cfg["order_kind"]), order_init=float(cfg["order_init"]),
        )
    except DivergenceError:
        raise
    except VofdeError as exc:
        raise CliError(str(exc)) from exc
    write_csv(os.path.join(out, "loss_history.csv"), "iter,l_eqn,l_ini,l_total",
              [(r.iteration, r.l_eqn, r.l_ini, r.l_total) for r in reports])
    _write_alpha_trace(os.path.join(out, "alpha_trace.csv"), reports[-1].learned_alpha_trace)
    payload = "{\"order\": " + order_model_to_json(setup.order, setup.store) \
        + ", \"params\": " + params_to_json(setup.store) + "}"
    with open(os.path.join(out, "checkpoint.json"), "w") as fh:
        fh.write(payload)
        fh.write("\n")
    print(f"final l_total {fmt17(reports[-1].l_total)}")
    return EXIT_OK


def _gnn_dataset(cfg, seed: int):
    dataset = str(cfg["dataset"])
    if dataset == "sbm":
        return generate_sbm(int(cfg["sbm_n"]), float(cfg["sbm_p_in"]), float(cfg["sbm_p_out"]),
                            d=int(cfg["sbm_d"]), signal=float(cfg["sbm_signal"]), seed=seed)
    if dataset.startswith("csv:"):
        root = dataset[4:]
        return load_graph_csv(
            os.path.join(root, "edges.csv"), os.path.join(root, "features.csv"),
            os.path.join(root, "labels.csv"), os.path.join(root, "masks.csv"),
        )
    raise CliError(f"unknown dataset {dataset!r} (choose sbm or csv:<dir>)")


def cmd_gnn_train(args) -> int:
    cfg = _load_config(_Defaults.gnn_train, args.config, args.set)
    if args.dataset is not None:
        cfg["dataset"] = args.dataset
    if args.order is not None:
        cfg["order"] = args.order
    if args.jobs is not None:
        cfg["jobs"] = int(args.jobs)
    out = _out_dir(args)
    seeds = [int(s) for s in cfg["seeds"]]
    if not seeds:
        raise CliError("gnn-train: need at least one seed")

    def run(order_desc: str, seed: int) -> dict:
        g = _gnn_dataset(cfg, seed)
        res = train_node_classifier(
            g, dynamics=str(cfg["dynamics"]), order=order_desc,
            t_end=float(cfg["t_end"]), steps=int(cfg["steps"]), epochs=int(cfg["epochs"]),
            lr=float(cfg["lr"]), seed=seed, hidden=int(cfg["hidden"]),
            patience=int(cfg["patience"]),
        )
        res["seed"] = seed
        return res

    def sweep(order_desc: str) -> list[dict]:
        jobs = int(cfg["jobs"])
        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                return list(pool.map(lambda s: run(order_desc, s), seeds))
        return [run(order_desc, s) for s in seeds]

    try:
        results = sweep(str(cfg["order"]))
        baseline = sweep(str(cfg["baseline_order"])) if cfg["baseline_order"] else None
    except DivergenceError:
        raise
    except VofdeError as exc:
        raise CliError(str(exc)) from exc

    def summarize(rows):
        return {
            "results": [
                {k: rows[i][k] for k in ("seed", "train_accuracy", "val_accuracy",
                                         "test_accuracy", "best_epoch", "epochs_run")}
                for i in range(len(rows))
            ],
            "mean_test_accuracy": float(np.mean([r["test_accuracy"] for r in rows])),
        }

    report = {"order": str(cfg["order"]), **summarize(results)}
    report["order_trace"] = [[float(t), float(a)] for t, a in results[0]["order_trace"]]
    if baseline is not None:
        report["baseline"] = {"order": str(cfg["baseline_order"]), **summarize(baseline)}
    with open(os.path.join(out, "metrics.json"), "w") as fh:
        fh.write(_json17(report))
        fh.write("\n")
    _write_alpha_trace(os.path.join(out, "alpha_trace.csv"), results[0]["order_trace"])
    print(f"mean test accuracy {fmt17(report['mean_test_accuracy'])}")
    return EXIT_OK


def cmd_sbm_gen(args) -> int:
    cfg = _load_config(_Defaults.sbm_gen, args.config, args.set)
    out = _out_dir(args)
    try:
        g = generate_sbm(int(cfg["n"]), float(cfg["p_in"]), float(cfg["p_out"]),
                         d=int(cfg["d"]), signal=float(cfg["signal"]), seed=int(cfg["seed"]))
    except VofdeError as exc:
        raise CliError(str(exc)) from exc
    save_graph_csv(g, out)
    print(f"wrote {len(g.edges) // 2} undirected edges for {g.n_nodes} nodes to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# gradient-check suite


def _check_primitives(rng, tol: float, broken: bool):
    """Finite-difference every differentiable primitive on random small tensors."""
    failures = []
    checked = 0

    def one(name, builder, shapes):
        nonlocal checked
        store = ad.ParamStore()
        for i, shape in enumerate(shapes):
            store.add(f"x{i}", rng.uniform(0.2, 1.5, size=shape))

        def loss_fn(leaves, tape):
            inputs = [leaves[f"x{i}"] for i in range(len(shapes))]
            return ad.tsum(ad.square(builder(*inputs)))

        rel, worst = ad.grad_check(loss_fn, store, rel_tol=tol)
        checked += store.n_values()
        if rel > tol:
            failures.append((f"{name}:{worst}", rel))

    one("add", lambda a, b: ad.add(a, b), [(3, 4), (3, 4)])
    one("sub", lambda a, b: ad.sub(a, b), [(5,), (5,)])
    one("hadamard", lambda a, b: ad.hadamard(a, b), [(4, 2), (4, 2)])
    one("div", lambda a, b: ad.div(a, b), [(6,), (6,)])
    one("scalar_mul", lambda a: ad.scalar_mul(-1.7, a), [(4,)])
    one("matmul", lambda a, b: ad.matmul(a, b), [(3, 4), (4, 2)])
    one("matvec", lambda a, b: ad.matmul(a, b), [(3, 4), (4,)])
    one("sigmoid", ad.sigmoid, [(7,)])
    one("tanh", ad.tanh, [(7,)])
    one("relu", lambda a: ad.relu(ad.sub(a, 0.7)), [(8,)])
    one("log", ad.log, [(6,)])
    one("row_softmax", ad.row_softmax, [(4, 5)])
    one("square", ad.square, [(3, 3)])
    one("sum_axis", lambda a: ad.tsum(a, axis=1), [(4, 3)])
    one("mean", lambda a: ad.tmean(a, axis=0), [(4, 3)])
    one("concat", lambda a, b: ad.concat([a, b]), [(2, 3), (4, 3)])
    one("reshape", lambda a: ad.reshape(a, (6,)), [(2, 3)])
    one("transpose", ad.transpose, [(3, 4)])
    one("slice_rows", lambda a: ad.slice_rows(a, 1, 4), [(6, 2)])
    one("gather_rows", lambda a: ad.gather_rows(a, np.array([0, 2, 2])), [(4, 3)])
    one("pow_const_base", lambda e: ad.pow_const_base(np.array([0.0, 0.5, 2.0, 3.0]), e), [()])
    one("pow_var_base", lambda a: ad.pow_var_base(a, 1.7), [(5,)])
    one("gamma_of", ad.gamma_of, [(4,)])
    one("reciprocal", ad.reciprocal, [(5,)])
    if broken:
        def bad_tanh(a):
            val = np.tanh(a.data)

            def backward(g):
                ad._accumulate(a, g * (1.0 - val * val) * 1.01)  # deliberately wrong

            return ad._make(val, a.tape, backward)

        one("injected_fault", bad_tanh, [(4,)])
    return checked, failures


def _check_mlp(rng, tol: float):
    store = ad.ParamStore()
    net = Mlp(store, "net", [1, 30, 30, 1], rng)
    xs = rng.uniform(-1.0, 1.0, size=(6, 1))

    def loss_fn(leaves, tape):
        return ad.tsum(ad.square(net.forward(leaves, ad.Tensor(xs))))

    rel, worst = ad.grad_check(loss_fn, store, rel_tol=tol)
    return store.n_values(), ([(f"mlp:{worst}", rel)] if rel > tol else [])


def _check_solver(rng, tol: float):
    store = ad.ParamStore()
    order = StateNetOrder(store, "order", state_dim=2, t_max=1.0, rng=rng,
                          embed_dim=4, hidden=6, init=0.7)
    drift = np.array([[-0.8, 0.2], [0.1, -0.5]])
    cfg = SolverConfig(0.0, 1.0, 20, Scheme.ABM_P)

    def rhs(t, x):
        return ad.matmul(ad.Tensor(drift), x)

    def loss_fn(leaves, tape):
        traj = solvers.solve(rhs, order, [1.0, -0.4], cfg, leaves)
        return ad.tsum(ad.square(traj.state_tensors[-1]))

    rel, worst = ad.grad_check(loss_fn, store, rel_tol=tol)
    return store.n_values(), ([(f"solver:{worst}", rel)] if rel > tol else [])


def run_grad_suite(suites, seed: int = 0, tol: float = 1e-4, inject_fault: bool = False):
    """Run the requested gradient suites; returns (n_checked, failures)."""
    rng = np.random.default_rng(seed)
    checked = 0
    failures = []
    for suite in suites:
        if suite == "primitives":
            c, f = _check_primitives(rng, tol, inject_fault)
        elif suite == "mlp":
            c, f = _check_mlp(rng, tol)
        elif suite == "solver":
            c, f = _check_solver(rng, tol)
        else:
            raise CliError(f"unknown grad-check suite {suite!r}")
        checked += c
        failures.extend(f)
    return checked, failures


def cmd_grad_check(args) -> int:
    cfg = _load_config(_Defaults.grad_check, args.config, args.set)
    checked, failures = run_grad_suite(
        list(cfg["suites"]), seed=int(cfg["seed"]), tol=float(cfg["tol"]),
        inject_fault=bool(cfg["inject_fault"]),
    )
    print(f"{checked} parameters checked")
    if failures:
        worst = max(failures, key=lambda item: item[1])
        print(f"FAIL worst {worst[0]} rel {fmt17(worst[1])}")
        return EXIT_CHECK_FAILED
    print("OK")
    return EXIT_OK


# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vofde",
                                     description="Variable-order fractional dynamics toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (
        ("solve", cmd_solve),
        ("weights", cmd_weights),
        ("vp-train", cmd_vp_train),
        ("gnn-train", cmd_gnn_train),
        ("sbm-gen", cmd_sbm_gen),
        ("grad-check", cmd_grad_check),
    ):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
        p.add_argument("--out", default=None, help="output directory (or $VOFDE_OUT)")
        if name == "gnn-train":
            p.add_argument("--dataset", default=None, help="sbm or csv:<dir>")
            p.add_argument("--order", default=None,
                           help="const:<v> | grid[:init] | timenet[:init] | statenet[:init]")
            p.add_argument("--jobs", type=int, default=None,
                           help="parallel workers across seeds")
        p.set_defaults(handler=fn)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    try:
        return args.handler(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except VofdeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
