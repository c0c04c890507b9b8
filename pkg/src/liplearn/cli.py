"""Experiment orchestration: data generation, training, evaluation, reports.

One subcommand per activity: gen-data, train, eval, bounds, simulate,
report, info. A run is driven by a JSON config (versioned schema) whose
fields can be overridden on the command line with --set key.path=value.

Exit codes: 0 success, 2 config error, 3 divergence/blow-up, 4 I/O.
"""

from __future__ import annotations

import argparse
import copy
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import bounds as bd
from . import dynamics as dy
from .data import (Domain, LabeledDataset, covering_radius,
                   empirical_lipschitz_lower, make_dataset, sample_grid,
                   sample_uniform)
from .errors import BlowUpError, ConfigError, DivergenceError
from .extension import LipschitzExtension
from .network import (LipNet, MlpNet, describe, empirical_lipschitz_net,
                      load_checkpoint, save_checkpoint)
from .training import (Formulation, TrainConfig, evaluate_metrics, train,
                       train_mlp_baseline)

CONFIG_SCHEMA = "liplearn-experiment-v1"

DEFAULT_CONFIG = {
    "schema": CONFIG_SCHEMA,
    "domain": {"lower": [-2.0, -10.0, -2.0], "upper": [2.0, 10.0, 2.0]},
    "dataset": {"grid_per_dim": 3, "uniform_count": 500, "noise_bound": 0.0,
                "seed": 1, "test_count": 2000, "test_seed": 777},
    "model": {"kind": "lipnet", "layer_kind": "sandwich", "activation": "tanh",
              "width": 64, "depth": 4, "init_seed": 11},
    "formulation": {"kind": "P1", "rho": 0.0},
    "training": {"outer_iters": 10, "inner_steps": 1500, "lr": 5e-3,
                 "mu0": 1.0, "mu_growth": 10.0, "violation_factor": 0.25,
                 "tol_c": 5e-3, "seed": 1, "weight_decay": 0.0},
    "evaluation": {"pairs": 10000, "refine_steps": 20, "seed": 3},
    "simulation": {"dt": 0.01, "horizon": 10.0, "initial_conditions": 500,
                   "seed": 9},
    "output_dir": "runs",
}

TABLE_COLUMNS = ["model", "rho", "train_mse", "train_max", "test_mse",
                 "test_max", "emp_lip", "cert_lip"]


def _merge_into(base: dict, update: dict, path: str = "") -> dict:
    for key, value in update.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config field {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{where!r} must be an object")
            _merge_into(base[key], value, where)
        else:
            base[key] = value
    return base


def load_config(path: str | None, overrides=()) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except json.JSONDecodeError as err:
            raise ConfigError(f"{path}:{err.lineno}:{err.colno}: {err.msg}") from err
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: top level must be a JSON object")
        schema = user.get("schema", CONFIG_SCHEMA)
        if schema != CONFIG_SCHEMA:
            raise ConfigError(f"{path}: unsupported schema {schema!r} "
                              f"(expected {CONFIG_SCHEMA!r})")
        _merge_into(cfg, user)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like key.path=value")
        key, _, raw = item.partition("=")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw  # bare strings are allowed unquoted
        node = cfg
        parts = key.split(".")
        for part in parts[:-1]:
            if part not in node or not isinstance(node[part], dict):
                raise ConfigError(f"unknown config field {key!r}")
            node = node[part]
        if parts[-1] not in node:
            raise ConfigError(f"unknown config field {key!r}")
        node[parts[-1]] = value
    return cfg


def _domain_from(cfg: dict) -> Domain:
    try:
        return Domain(np.asarray(cfg["domain"]["lower"], dtype=float),
                      np.asarray(cfg["domain"]["upper"], dtype=float))
    except Exception as err:
        raise ConfigError(f"domain: {err}") from err


def _widths(cfg: dict, n: int, m: int) -> list[int]:
    model = cfg["model"]
    return [n] + [int(model["width"])] * int(model["depth"]) + [m]


def _train_config(cfg: dict) -> TrainConfig:
    t = cfg["training"]
    try:
        return TrainConfig(
            outer_iters=int(t["outer_iters"]), inner_steps=int(t["inner_steps"]),
            lr=float(t["lr"]), mu0=float(t["mu0"]),
            mu_growth=float(t["mu_growth"]),
            violation_factor=float(t["violation_factor"]),
            tol_c=float(t["tol_c"]), seed=int(t["seed"]),
            weight_decay=float(t["weight_decay"]))
    except (ValueError, TypeError) as err:
        raise ConfigError(f"training: {err}") from err


def _require_files(*paths) -> None:
    missing = [str(p) for p in paths if not Path(p).exists()]
    if missing:
        raise ConfigError(f"missing input files: {', '.join(missing)}")


def _load_split(data_dir: Path):
    _require_files(data_dir / "manifest.json", data_dir / "train.csv",
                   data_dir / "test.csv")
    with open(data_dir / "manifest.json") as fh:
        manifest = json.load(fh)
    domain = Domain.from_dict(manifest["domain"])
    train_ds = LabeledDataset.from_csv(data_dir / "train.csv", domain)
    test_ds = LabeledDataset.from_csv(data_dir / "test.csv", domain)
    return manifest, train_ds, test_ds


def cmd_gen_data(cfg: dict, out_dir: str | Path) -> dict:
    """Write train/test CSVs plus a manifest with L_data and covering radius."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    domain = _domain_from(cfg)
    d = cfg["dataset"]
    grid = sample_grid(domain, int(d["grid_per_dim"]))
    uniform = sample_uniform(domain, int(d["uniform_count"]), int(d["seed"]))
    train_points = np.concatenate([grid, uniform], axis=0)
    train_ds = make_dataset(dy.benchmark_field, train_points,
                            float(d["noise_bound"]), int(d["seed"]), domain)
    test_points = sample_uniform(domain, int(d["test_count"]), int(d["test_seed"]))
    test_ds = make_dataset(dy.benchmark_field, test_points, 0.0,
                           int(d["test_seed"]), domain)
    train_ds.to_csv(out / "train.csv")
    test_ds.to_csv(out / "test.csv")
    h_mode, h_res = "monte-carlo", 20000
    manifest = {
        "schema": "liplearn-manifest-v1",
        "domain": domain.to_dict(),
        "train_count": train_ds.size,
        "test_count": test_ds.size,
        "noise_bound": float(d["noise_bound"]),
        "seeds": {"train": int(d["seed"]), "test": int(d["test_seed"])},
        "l_data": empirical_lipschitz_lower(train_ds),
        "covering_radius_estimate": {
            "mode": h_mode, "resolution": h_res, "probe_seed": 99,
            "value": covering_radius(train_points, domain, h_mode, h_res, seed=99),
            "note": "finite-probe lower estimate of the true covering radius",
        },
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return manifest


def _run_name(cfg: dict) -> str:
    model = cfg["model"]
    if model["kind"] == "mlp":
        return f"mlp-wd{cfg['training']['weight_decay']:g}"
    form = cfg["formulation"]
    tag = f"{form['kind']}-{model['layer_kind']}"
    if form["kind"] in ("P2", "P3"):
        tag += f"-rho{form['rho']:g}"
    return f"lipnet-{tag}"


def cmd_train(cfg: dict, data_dir: str | Path, out_dir: str | Path | None = None,
              label: str | None = None) -> dict:
    """Train one (model, formulation, layer) combination and persist artifacts."""
    data_dir = Path(data_dir)
    manifest, train_ds, test_ds = _load_split(data_dir)
    model = cfg["model"]
    widths = _widths(cfg, train_ds.input_dim, train_ds.output_dim)
    tcfg = _train_config(cfg)
    name = label or _run_name(cfg)
    run_dir = Path(out_dir or cfg["output_dir"]) / name
    run_dir.mkdir(parents=True, exist_ok=True)

    if model["kind"] == "mlp":
        net = MlpNet(widths, model["activation"], seed=int(model["init_seed"]))
        net, report = train_mlp_baseline(net, train_ds, tcfg.weight_decay, tcfg)
        rho = None
    elif model["kind"] == "lipnet":
        net = LipNet(widths, model["layer_kind"], model["activation"],
                     seed=int(model["init_seed"]))
        form = Formulation(cfg["formulation"]["kind"],
                           float(cfg["formulation"]["rho"]))
        net, report = train(net, train_ds, form, tcfg)
        rho = form.rho
    else:
        raise ConfigError(f"model.kind must be 'lipnet' or 'mlp', "
                          f"got {model['kind']!r}")

    ev = cfg["evaluation"]
    metrics = evaluate_metrics(net, train_ds, test_ds, pairs=int(ev["pairs"]),
                               refine_steps=int(ev["refine_steps"]),
                               seed=int(ev["seed"]), rho=rho, label=name)
    save_checkpoint(net, run_dir / "checkpoint.json")
    report.to_json(run_dir / "report.json")
    metrics.to_json(run_dir / "metrics.json")
    with open(run_dir / "config.json", "w") as fh:
        json.dump(cfg, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return {"run_dir": str(run_dir), "status": report.status,
            "metrics": metrics.to_dict()}


class _ExtensionModel:
    """Adapter giving the midpoint interpolant the network interface."""

    model = "mcshane"

    def __init__(self, ext: LipschitzExtension):
        self.ext = ext

    @property
    def input_dim(self) -> int:
        return self.ext.dataset.input_dim

    def predict(self, x):
        return self.ext(np.atleast_2d(np.asarray(x, dtype=float)))


def _load_model(spec: str, train_ds: LabeledDataset):
    if spec == "mcshane":
        return _ExtensionModel(LipschitzExtension(train_ds)), "mcshane"
    _require_files(spec)
    net = load_checkpoint(spec)
    return net, net.model


def cmd_eval(model_spec: str, data_dir: str | Path, cfg: dict) -> dict:
    data_dir = Path(data_dir)
    manifest, train_ds, test_ds = _load_split(data_dir)
    model, name = _load_model(model_spec, train_ds)
    ev = cfg["evaluation"]

    def stats(ds):
        err = model.predict(ds.inputs) - ds.outputs
        sq = np.sum(err ** 2, axis=1)
        return float(np.mean(sq)), float(np.sqrt(np.max(sq)))

    train_mse, train_max = stats(train_ds)
    test_mse, test_max = stats(test_ds)
    emp = empirical_lipschitz_net(model, train_ds.domain, pairs=int(ev["pairs"]),
                                  refine_steps=int(ev["refine_steps"]),
                                  seed=int(ev["seed"]))
    cert = (model.ext.vector_lipschitz if isinstance(model, _ExtensionModel)
            else describe(model)["certified_lipschitz"])
    return {"model": name, "train_mse": train_mse, "train_max": train_max,
            "test_mse": test_mse, "test_max": test_max,
            "emp_lip": emp, "cert_lip": cert}


def cmd_simulate(model_spec: str, data_dir: str | Path, cfg: dict,
                 out_dir: str | Path) -> dict:
    data_dir = Path(data_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest, train_ds, _ = _load_split(data_dir)
    model, name = _load_model(model_spec, train_ds)
    domain = train_ds.domain
    sim = cfg["simulation"]
    dt_, horizon = float(sim["dt"]), float(sim["horizon"])
    x0 = sample_uniform(domain, int(sim["initial_conditions"]), int(sim["seed"]))
    f_field = lambda x: model.predict(x)
    times, mse_curve, sup_err, exited = dy.trajectory_error_batch(
        f_field, dy.benchmark_field, x0, dt_, horizon, domain=domain)
    dy.error_curve_to_csv(times, mse_curve, out / f"errors_{name}.csv")
    sample = dy.integrate(f_field, x0[0], dt_, horizon, domain=domain)
    truth = dy.integrate(dy.benchmark_field, x0[0], dt_, horizon)
    sample.to_csv(out / f"trajectory_{name}.csv")
    truth.to_csv(out / "trajectory_true.csv")
    summary = {
        "model": name, "initial_conditions": int(x0.shape[0]),
        "dt": dt_, "horizon": horizon,
        "sup_error": sup_err,
        "final_mse": float(mse_curve[-1]),
        "peak_mse": float(np.max(mse_curve)),
        "exited_domain_fraction": float(np.mean(exited)),
        # The delta-BIBO certificate transfers only while trajectories stay
        # in the domain where the fit bound holds.
        "certificate_applicable": bool(~np.any(exited)),
    }
    with open(out / f"simulation_{name}.json", "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return summary


def cmd_bounds(args_ns, cfg: dict) -> dict:
    if args_ns.data_dir is not None:
        manifest, train_ds, _ = _load_split(Path(args_ns.data_dir))
        l_data = manifest["l_data"]
        h = manifest["covering_radius_estimate"]["value"]
        h_mode = manifest["covering_radius_estimate"]["mode"]
        n = train_ds.input_dim
        big_n = train_ds.size
        eps_bar = manifest["noise_bound"]
    else:
        for field in ("l_data", "h", "n", "N"):
            if getattr(args_ns, field.replace("N", "big_n") if field == "N" else field) is None:
                raise ConfigError(f"bounds needs --{field.replace('_', '-')} "
                                  "when no --data-dir is given")
        l_data, h, h_mode = args_ns.l_data, args_ns.h, "user-supplied"
        n, big_n, eps_bar = args_ns.n, args_ns.big_n, args_ns.eps_bar
    report = bd.bound_report(
        l_g=args_ns.l_g, l_data=l_data, h=h, h_mode=h_mode,
        eps_bar=eps_bar, eps=max(args_ns.eps, eps_bar), rho=args_ns.rho,
        n=n, big_n=big_n, delta=args_ns.delta, k1=args_ns.k1, k2=args_ns.k2)
    return report


def _fmt(value) -> str:
    if value is None:
        return "--"
    return repr(float(value))


def _table_rows(run_dirs) -> list[dict]:
    rows = []
    for rd in run_dirs:
        metrics_file = rd / "metrics.json"
        if not metrics_file.exists():
            continue
        with open(metrics_file) as fh:
            m = json.load(fh)
        report_file = rd / "report.json"
        if report_file.exists():
            with open(report_file) as fh:
                m["_report"] = json.load(fh)
        m["_name"] = rd.name
        rows.append(m)
    return rows


def _write_table(rows: list[dict], path: Path) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(TABLE_COLUMNS) + "\n")
        for m in rows:
            fh.write(",".join([m["model"], _fmt(m.get("rho")),
                               _fmt(m["train_mse"]), _fmt(m["train_max"]),
                               _fmt(m["test_mse"]), _fmt(m["test_max"]),
                               _fmt(m["emp_lip"]), _fmt(m.get("cert_lip"))]) + "\n")


def cmd_report(run_dir: str | Path, out_dir: str | Path | None = None) -> dict:
    """Aggregate run artifacts into the three tables and the error figure."""
    run_dir = Path(run_dir)
    out = Path(out_dir or run_dir)
    out.mkdir(parents=True, exist_ok=True)
    subdirs = sorted(p for p in run_dir.iterdir() if p.is_dir()) if run_dir.exists() else []
    rows = _table_rows(subdirs)
    missing = [d.name for d in subdirs if not (d / "metrics.json").exists()]

    _write_table(rows, out / "table1.csv")
    mlp_rows = [m for m in rows if m["model"].startswith("mlp")]
    mlp_rows.sort(key=lambda m: m.get("_report", {}).get("weight_decay", 0.0))
    _write_table(mlp_rows, out / "table2.csv")
    lip_rows = [m for m in rows if m["model"].startswith("lipnet")
                or m.get("_report", {}).get("formulation") in ("P1", "P2", "P3")]
    _write_table(lip_rows, out / "table3.csv")

    curves = sorted(run_dir.glob("**/errors_*.csv"))
    figure = None
    if curves:
        figure = str(out / "figure2.svg")
        _plot_error_curves(curves, figure)
    summary = {"runs": len(rows), "missing_metrics": missing,
               "tables": [str(out / f"table{i}.csv") for i in (1, 2, 3)],
               "figure": figure}
    if missing:
        print(f"warning: runs without metrics: {', '.join(missing)}",
              file=sys.stderr)
    return summary


def _plot_error_curves(curve_files, out_path: str) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    plt.rcParams["svg.fonttype"] = "none"  # keep model names as text nodes
    fig, ax = plt.subplots(figsize=(6, 4))
    for path in curve_files:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        name = Path(path).stem.replace("errors_", "")
        ax.plot(data[:, 0], data[:, 1], label=name)
    ax.set_yscale("log")
    ax.set_xlabel("time (s)")
    ax.set_ylabel("mean squared trajectory error")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)


def cmd_info(checkpoint: str) -> dict:
    _require_files(checkpoint)
    return describe(load_checkpoint(checkpoint))


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="liplearn",
        description="Near-minimal-Lipschitz interpolation experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", default=None, help="experiment config JSON")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY.PATH=VALUE", help="override a config field")

    p = sub.add_parser("gen-data", help="generate train/test CSVs and manifest")
    add_common(p)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("train", help="train one model/formulation combination")
    add_common(p)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out", default=None, help="runs directory (default from config)")
    p.add_argument("--label", default=None, help="run name override")

    p = sub.add_parser("eval", help="evaluate a checkpoint or the mcshane oracle")
    add_common(p)
    p.add_argument("--model", required=True,
                   help="'mcshane' or a checkpoint JSON path")
    p.add_argument("--data-dir", required=True)

    p = sub.add_parser("bounds", help="print a bound report as JSON")
    add_common(p)
    p.add_argument("--data-dir", default=None)
    p.add_argument("--l-g", dest="l_g", type=float, default=None)
    p.add_argument("--l-data", dest="l_data", type=float, default=None)
    p.add_argument("--h", type=float, default=None)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--N", dest="big_n", type=int, default=None)
    p.add_argument("--eps-bar", dest="eps_bar", type=float, default=0.0)
    p.add_argument("--eps", type=float, default=0.0)
    p.add_argument("--rho", type=float, default=0.0)
    p.add_argument("--delta", type=float, default=None)
    p.add_argument("--k1", type=float, default=None)
    p.add_argument("--k2", type=float, default=None)

    p = sub.add_parser("simulate", help="ODE comparison of a model vs the benchmark")
    add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("report", help="aggregate run artifacts into tables and figure")
    add_common(p)
    p.add_argument("--run-dir", required=True)
    p.add_argument("--out", default=None)

    p = sub.add_parser("info", help="print checkpoint architecture and certificate")
    p.add_argument("--checkpoint", required=True)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(getattr(args, "config", None),
                          getattr(args, "overrides", ()))
        if args.command == "gen-data":
            out = cmd_gen_data(cfg, args.out)
        elif args.command == "train":
            out = cmd_train(cfg, args.data_dir, args.out, args.label)
        elif args.command == "eval":
            out = cmd_eval(args.model, args.data_dir, cfg)
        elif args.command == "bounds":
            out = cmd_bounds(args, cfg)
        elif args.command == "simulate":
            out = cmd_simulate(args.model, args.data_dir, cfg, args.out)
        elif args.command == "report":
            out = cmd_report(args.run_dir, args.out)
        elif args.command == "info":
            out = cmd_info(args.checkpoint)
        else:  # pragma: no cover - argparse enforces the choices
            raise ConfigError(f"unknown command {args.command!r}")
        json.dump(out, sys.stdout, sort_keys=True, indent=1)
        sys.stdout.write("\n")
        return 0
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except (DivergenceError, BlowUpError) as err:
        print(f"divergence: {err}", file=sys.stderr)
        return 3
    except OSError as err:
        print(f"i/o error: {err}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
