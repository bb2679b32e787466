"""Command-line entry point: ``saaf {fit1d,train,eval,analyze,bench,gradcheck}``.

Exit codes: 0 success, 1 runtime or numeric failure, 2 configuration/usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import analysis, data
from .config import ExperimentConfig
from .core import ACTIVATION_NAMES, Saaf, make_uniform_grid
from .errors import SaafError, UsageError
from .net import Network, build_specs, forward, init_network, predict
from .train import SGD, Adam, TrainConfig, fit_saaf_ridge, gradient_check, kink_distance, train

log = logging.getLogger("saaf")

VALID_ACTIVATIONS = ACTIVATION_NAMES + tuple(f"R-{n}" for n in ACTIVATION_NAMES)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


def write_json(path: Path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(obj), indent=1) + "\n", encoding="utf-8")


def write_text(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _check_activation(name):
    if name not in VALID_ACTIVATIONS:
        raise UsageError(f"unknown activation {name!r}; valid names: {', '.join(VALID_ACTIVATIONS)}")
    return name


def load_dataset(cfg: ExperimentConfig) -> data.Dataset:
    source = cfg["data.source"]
    noise = cfg["data.noise"]
    if source == "additive":
        kw = {"noise_std": float(noise)} if noise != "" else {}
        return data.gen_additive(cfg["data.n"], cfg["data.m"], cfg.seed_for("data"), **kw)
    if source == "fig2":
        kw = {"noise": float(noise)} if noise != "" else {}
        return data.gen_fig2(cfg.seed_for("data"), **kw)
    if source == "csv":
        if not cfg["data.path"]:
            raise UsageError("data.source = csv requires data.path")
        return data.load_csv(cfg["data.path"], cfg["data.target"])
    raise UsageError(f"unknown data.source {source!r}; choose additive, fig2 or csv")


def train_config(cfg: ExperimentConfig) -> TrainConfig:
    name = cfg["train.optimizer"].lower()
    if name == "adam":
        opt = Adam(cfg["train.beta1"], cfg["train.beta2"], cfg["train.eps"])
    elif name == "sgd":
        opt = SGD(cfg["train.momentum"])
    else:
        raise UsageError(f"unknown optimizer {name!r}; choose adam or sgd")
    return TrainConfig(cfg["train.lr"], cfg["train.batch_size"], cfg["train.epochs"], cfg["train.l2"],
                       opt, cfg.seed_for("train"), cfg["train.shuffle"])


def build_network(cfg: ExperimentConfig, input_dim: int, activation: str | None = None) -> Network:
    activation = _check_activation(activation or cfg["net.activation"])
    specs = build_specs(cfg["net.widths"], activation, cfg["net.segments"], cfg["net.sharing"],
                        cfg["net.normalize"], cfg["net.lrelu_slope"])
    net = init_network(specs, input_dim, cfg.seed_for("init"))
    net.meta = {"activation": activation, "widths": list(cfg["net.widths"]),
                "input_box": [-1.0, 1.0]}
    return net


def _preprocess(cfg, train_ds, *others):
    """Fit the feature transform on the training part and apply it to every part."""
    mode = cfg["data.normalize"]
    if mode == "none":
        return (None, train_ds) + others
    train_ds, tf = data.normalize(train_ds, mode)
    return (tf, train_ds) + tuple(data.normalize(d, transform=tf)[0] for d in others)


def _split(cfg, n):
    if cfg["split.scheme"] == "random":
        return data.split(n, data.RandomSplit(cfg["split.fraction"], cfg.seed_for("split")))
    if cfg["split.scheme"] == "kfold":
        return data.split(n, data.KFold(cfg["split.folds"], cfg.seed_for("split")))
    raise UsageError(f"unknown split.scheme {cfg['split.scheme']!r}; choose random or kfold")


def cmd_fit1d(cfg: ExperimentConfig, args) -> int:
    """Ridge-fit a single SAAF to 1-D data and write the fitted curve."""
    out = Path(cfg["out"])
    c = cfg["fit1d.c"]
    if c not in (1, 2):
        raise UsageError("fit1d supports c in {1, 2}")
    if cfg["data.source"] in ("fig2", "csv"):
        ds = load_dataset(cfg)
    else:
        ds = data.gen_fig2(cfg.seed_for("data"), **({"noise": float(cfg["data.noise"])} if cfg["data.noise"] != "" else {}))
    col = 0
    if cfg["data.x_column"]:
        if cfg["data.x_column"] not in ds.feature_names:
            raise UsageError(f"no feature column {cfg['data.x_column']!r}; available: {', '.join(ds.feature_names)}")
        col = ds.feature_names.index(cfg["data.x_column"])
    xs, ts = ds.X[:, col], ds.t
    grid = make_uniform_grid(cfg["fit1d.segments"], cfg["fit1d.lo"], cfg["fit1d.hi"])
    proto = Saaf(grid, c, np.zeros(grid.n), np.zeros(c))
    f = fit_saaf_ridge(xs, ts, proto, cfg["fit1d.lambda"])
    curve_x = np.linspace(xs.min(), xs.max(), cfg["fit1d.points"])
    curve_f = f(curve_x)
    slope = f.deriv(curve_x)
    lines = ["x,f"] + [f"{x!r},{y!r}" for x, y in zip(curve_x.tolist(), curve_f.tolist())]
    write_text(out / "fit1d_curve.csv", "\n".join(lines) + "\n")
    write_text(out / "fit1d_saaf.json", f.to_json() + "\n")
    report = {
        "c": c,
        "segments": grid.n,
        "lambda": cfg["fit1d.lambda"],
        "n_points": int(xs.size),
        "train_rmse": data.metrics(f(xs), ts)["rmse"],
        "max_abs_cth_derivative": float(np.max(np.abs(f.w))),
        "lipschitz": analysis.lipschitz_saaf(f),
        "deriv_min": float(slope.min()),
        "deriv_max": float(slope.max()),
    }
    write_json(out / "fit1d_report.json", report)
    log.info("fit1d: rmse %.3g, max|f^(%d)| %.3g", report["train_rmse"], c, report["max_abs_cth_derivative"])
    return 0


def cmd_train(cfg: ExperimentConfig, args) -> int:
    """Train a network on the configured dataset and save it with its loss curve."""
    out = Path(cfg["out"])
    ds = load_dataset(cfg)
    tr, te = _split(cfg, len(ds))[0]
    tf, train_ds, test_ds = _preprocess(cfg, ds.subset(tr), ds.subset(te))
    net = build_network(cfg, ds.d)
    net.meta["transform"] = tf.to_dict() if tf else None
    report = train(net, train_ds.X, train_ds.t, train_config(cfg), test_ds.X, test_ds.t)
    log.info("trained %d epochs in %.2fs", report.epochs, report.wall_time)
    write_text(out / "network.json", net.to_json() + "\n")
    write_text(out / "train_report.json", report.to_json() + "\n")
    write_text(out / "loss_curve.csv", report.loss_csv())
    result = {"train": data.metrics(predict(net, train_ds.X), train_ds.t),
              "test": data.metrics(predict(net, test_ds.X), test_ds.t)}
    write_json(out / "metrics.json", result)
    print(json.dumps(_jsonable(result["test"])))
    return 0


def _load_network(path) -> Network:
    if not path:
        raise UsageError("--network PATH is required")
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read network file {path}: {exc.strerror}") from None
    return Network.from_json(text)


def _apply_stored_transform(net, ds):
    tf = net.meta.get("transform")
    if tf:
        return data.normalize(ds, transform=data.FeatureTransform.from_dict(tf))[0]
    return ds


def cmd_eval(cfg: ExperimentConfig, args) -> int:
    """Evaluate a saved network on the test split."""
    net = _load_network(args.network)
    ds = load_dataset(cfg)
    if ds.d != net.input_dim:
        raise UsageError(f"{cfg.source}: dataset has {ds.d} features, network expects {net.input_dim}")
    _, te = _split(cfg, len(ds))[0]
    test_ds = _apply_stored_transform(net, ds.subset(te))
    result = data.metrics(predict(net, test_ds.X), test_ds.t)
    write_json(Path(cfg["out"]) / "eval_metrics.json", result)
    print(json.dumps(_jsonable(result)))
    return 0


def cmd_analyze(cfg: ExperimentConfig, args) -> int:
    """Lipschitz bounds, fat-shattering bound and optional regression-layer diagnostic."""
    out = Path(cfg["out"])
    net = _load_network(args.network)
    box = net.meta.get("input_box") or cfg["analyze.box"]
    report = analysis.complexity_report(net, cfg["analyze.gamma"], (box[0], box[1]),
                                        cfg["analyze.pairs"], cfg.seed_for("analyze"))
    payload = report.to_dict()
    if args.diagnostic:
        ds = load_dataset(cfg)
        if ds.d != net.input_dim:
            raise UsageError(f"{cfg.source}: dataset has {ds.d} features, network expects {net.input_dim}")
        ds = _apply_stored_transform(net, ds)
        diag = analysis.conditional_expectation_diagnostic(net, ds.X, ds.t, cfg["analyze.bins"])
        payload["diagnostic"] = diag.to_dict()
        for n in diag.neurons:
            write_text(out / f"diagnostic_neuron{n.neuron}.csv", n.to_csv())
    write_json(out / "complexity.json", payload)
    print(json.dumps({"network_bound": report.network_bound, "empirical": report.empirical_estimate,
                      "fat_shattering": report.fat_shattering}))
    report.check()
    return 0


def run_bench(cfg: ExperimentConfig, activations) -> list:
    """Train one architecture per activation on identical folds and seeds."""
    ds = load_dataset(cfg)
    folds = data.split(len(ds), data.KFold(cfg["bench.folds"], cfg.seed_for("split")))
    rows = []
    for name in activations:
        rmse, corr, errors = [], [], []
        for i, (tr, te) in enumerate(folds):
            try:
                _, train_ds, test_ds = _preprocess(cfg, ds.subset(tr), ds.subset(te))
                net = build_network(cfg, ds.d, name)
                train(net, train_ds.X, train_ds.t, train_config(cfg))
                m = data.metrics(predict(net, test_ds.X), test_ds.t)
                rmse.append(m["rmse"])
                corr.append(m["pearson"])
            except UsageError:
                raise
            except SaafError as exc:
                log.warning("bench %s fold %d failed: %s", name, i, exc)
                rmse.append(None)
                corr.append(None)
                errors.append(f"fold {i}: {exc}")
        ok_r = [r for r in rmse if r is not None]
        ok_c = [c for c in corr if c is not None]
        rows.append({
            "activation": name,
            "rmse_mean": float(np.mean(ok_r)) if ok_r else None,
            "rmse_std": float(np.std(ok_r)) if ok_r else None,
            "pearson_mean": float(np.mean(ok_c)) if ok_c else None,
            "pearson_std": float(np.std(ok_c)) if ok_c else None,
            "rmse_folds": rmse,
            "pearson_folds": corr,
            "errors": errors,
        })
    return rows


def bench_csv(rows) -> str:
    def fmt(v):
        return "" if v is None else repr(v)
    k = max((len(r["rmse_folds"]) for r in rows), default=0)
    header = ["activation", "rmse_mean", "rmse_std", "pearson_mean", "pearson_std"]
    header += [f"rmse_fold{i}" for i in range(k)]
    lines = [",".join(header)]
    for r in rows:
        cells = [r["activation"]] + [fmt(r[c]) for c in header[1:5]] + [fmt(v) for v in r["rmse_folds"]]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def cmd_bench(cfg: ExperimentConfig, args) -> int:
    """Compare activations on identical k-fold splits and seeds."""
    activations = [_check_activation(a) for a in cfg["bench.activations"]]
    if len(activations) < 2:
        raise UsageError("bench needs at least two activations")
    rows = run_bench(cfg, activations)
    out = Path(cfg["out"])
    write_json(out / "bench.json", {"folds": cfg["bench.folds"], "rows": rows})
    write_text(out / "bench.csv", bench_csv(rows))
    sys.stdout.write(bench_csv(rows))
    return 0


def cmd_gradcheck(cfg: ExperimentConfig, args) -> int:
    """Backprop vs central differences over random parameter/input draws kept away from kinks."""
    rng = np.random.default_rng(cfg.seed_for("gradcheck"))
    d = cfg["data.m"]
    errors = []
    while len(errors) < cfg["gradcheck.draws"]:
        net = build_network(cfg, d)
        for k, p in net.params.items():
            net.params[k] = p + rng.normal(0.0, 0.3, p.shape)
        X = rng.uniform(-1.0, 1.0, (cfg["gradcheck.batch"], d))
        t = rng.normal(size=X.shape[0])
        _, trace = forward(net, X, training=True)
        margin = min(float(np.min(kink_distance(s.activation, trace.pre_act[l])))
                     for l, s in enumerate(net.specs))
        if margin < 1e-3:
            continue
        errors.append(gradient_check(net, X, t, cfg["train.l2"], cfg["gradcheck.step"]))
    result = {"draws": len(errors), "max_rel_error": max(errors), "tol": cfg["gradcheck.tol"],
              "passed": max(errors) < cfg["gradcheck.tol"]}
    write_json(Path(cfg["out"]) / "gradcheck.json", result)
    print(json.dumps(_jsonable(result)))
    return 0 if result["passed"] else 1


COMMANDS = {
    "fit1d": cmd_fit1d,
    "train": cmd_train,
    "eval": cmd_eval,
    "analyze": cmd_analyze,
    "bench": cmd_bench,
    "gradcheck": cmd_gradcheck,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--seed", type=int, help="root seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--activation", help=f"activation name ({', '.join(VALID_ACTIVATIONS)}); "
                                             "bench takes a comma-separated list")
    common.add_argument("--segments", type=int, help="SAAF segment count")
    common.add_argument("--c", type=int, choices=(1, 2), help="SAAF degree for fit1d")
    common.add_argument("--lambda", dest="lam", type=float, help="L2 coefficient")
    common.add_argument("--gamma", type=float, help="fat-shattering margin")
    common.add_argument("--folds", type=int, help="number of folds for bench")
    common.add_argument("--network", help="network JSON file (eval, analyze)")
    common.add_argument("--diagnostic", action="store_true", help="analyze: run the regression-layer diagnostic")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="saaf", description="Smooth adaptive activation function toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=(fn.__doc__ or name).splitlines()[0])
    return parser


def _overrides(args) -> dict:
    cmd = args.command
    ov = {"seed": args.seed, "out": args.out, "analyze.gamma": args.gamma, "bench.folds": args.folds}
    if args.activation is not None:
        ov["bench.activations" if cmd == "bench" else "net.activation"] = args.activation
    if args.segments is not None:
        ov["fit1d.segments" if cmd == "fit1d" else "net.segments"] = args.segments
    if args.lam is not None:
        ov["fit1d.lambda" if cmd == "fit1d" else "train.l2"] = args.lam
    if args.c is not None:
        ov["fit1d.c"] = args.c
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        ov[key.strip()] = value
    return ov


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = ExperimentConfig.load(args.config, _overrides(args))
        return COMMANDS[args.command](cfg, args)
    except UsageError as exc:
        print(f"saaf {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except SaafError as exc:
        print(f"saaf {args.command}: failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
