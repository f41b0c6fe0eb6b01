"""Command-line front end.

Subcommands: simulate, train, calibrate, infer, evaluate, compare,
oracle.  A JSON config file carries an experiment description (keys =
ExperimentConfig fields; unknown keys are rejected); --set key=value
overrides individual fields with type checking.  The master seed is
taken from --seed, else the ABCD_SEED environment variable, else the
config, and determines every draw.  Errors print a single
machine-parsable line "error: <stage>: <message>"; exit status is 2 for
configuration problems and 1 for stage failures.

Heavy imports happen inside the handlers so --threads can cap the BLAS
pool via environment variables before numpy loads.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

__all__ = ["main", "build_parser"]


class CliConfigError(Exception):
    pass


def _set_thread_env(n: int) -> None:
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


def _coerce(value: str, typ):
    if typ is bool:
        if value.lower() in ("1", "true", "yes"):
            return True
        if value.lower() in ("0", "false", "no"):
            return False
        raise CliConfigError(f"expected a boolean, got {value!r}")
    try:
        if typ is int:
            return int(value)
        if typ is float:
            return float(value)
    except ValueError as exc:
        raise CliConfigError(f"expected {typ.__name__}, got {value!r}") from exc
    return value


def load_config(args):
    """Config file + --set overrides + seed precedence -> ExperimentConfig.

    Missing keys take the model's preset defaults; a partial "train"
    section merges over the preset training settings.
    """
    from .nn import TrainConfig
    from .pipeline import ExperimentConfig

    if args.config:
        try:
            raw = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CliConfigError(f"cannot read config {args.config}: {exc}") from exc
    elif getattr(args, "model", None):
        raw = {"model": args.model}
    else:
        raise CliConfigError("need --config FILE or --model TAG")

    model = raw.get("model")
    if model not in ("ma2", "grf", "lv"):
        raise CliConfigError("config must name a model (ma2 | grf | lv)")
    fields = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
    train_fields = {f.name: f for f in dataclasses.fields(TrainConfig)}

    merged = dict(raw)
    merged["train"] = dict(raw.get("train", {}))
    for kv in args.set or []:
        if "=" not in kv:
            raise CliConfigError(f"override {kv!r} is not of the form key=value")
        key, value = kv.split("=", 1)
        if key.startswith("train."):
            sub = key.removeprefix("train.")
            if sub not in train_fields:
                raise CliConfigError(f"unknown training key {sub!r}")
            merged["train"][sub] = _coerce(value, _field_type(train_fields[sub]))
        elif key in fields:
            merged[key] = _coerce(value, _field_type(fields[key]))
        else:
            raise CliConfigError(f"unknown config key {key!r}")

    seed = os.environ.get("ABCD_SEED")
    if seed is not None:
        merged["master_seed"] = int(seed)
    if getattr(args, "seed", None) is not None:
        merged["master_seed"] = args.seed

    try:
        full = ExperimentConfig.defaults(model).to_dict()
        train_full = full["train"]
        train_full.update(merged.pop("train"))
        full.update(merged)
        full["train"] = train_full
        return ExperimentConfig.from_dict(full)
    except (ValueError, TypeError) as exc:
        raise CliConfigError(str(exc)) from exc


def _field_type(f) -> type:
    t = f.type
    if isinstance(t, str):
        t = {"int": int, "float": float, "str": str, "bool": bool}.get(t.split("|")[0].strip(), str)
    return t if isinstance(t, type) else str


def _config_key_help() -> str:
    from .nn import TrainConfig
    from .pipeline import PAPER_DEFAULTS, ExperimentConfig

    lines = ["config keys (JSON file and --set overrides):"]
    paper_note = {
        ("ma2", "n_train"): "1e4",
        ("grf", "n_train"): "7e3 at grid 100 (desk default: 2000 at grid 32)",
        ("lv", "n_train"): "1e5 (desk default: 1e4)",
    }
    for f in dataclasses.fields(ExperimentConfig):
        if f.name == "train":
            continue
        published = []
        for m, d in PAPER_DEFAULTS.items():
            if f.name in d:
                published.append(f"{m}={d[f.name]:g}")
        note = f"  [published: {', '.join(published)}]" if published else ""
        lines.append(f"  {f.name}{note}")
    lines.append("  train.<key> for " + ", ".join(f.name for f in dataclasses.fields(TrainConfig)))
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="abcdconf",
        description="Likelihood-free inference with dropout networks and conformal sets",
        epilog=_config_key_help(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--threads", type=int, help="cap BLAS/OpenMP worker threads")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        p.add_argument("--config", help="experiment config (JSON)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        p.add_argument("--seed", type=int, help="master seed (overrides config and ABCD_SEED)")
        p.add_argument("--force", action="store_true", help="recompute despite hash mismatches")

    p = sub.add_parser("simulate", help="generate a reference table")
    p.add_argument("--model", required=True, choices=("ma2", "grf", "lv"))
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stream", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--format", default="both", choices=("jsonl", "binary", "both"))
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="table option override")

    p = sub.add_parser("train", help="stages a-b: tables and network training")
    common(p)
    p.add_argument("--workdir", required=True)

    p = sub.add_parser("calibrate", help="stages a-d: through the conformal quantile")
    common(p)
    p.add_argument("--workdir", required=True)

    p = sub.add_parser("infer", help="stage e: test-set predictions and confidence sets")
    common(p)
    p.add_argument("--workdir", required=True)
    p.add_argument("--input", help="single dataset (text) to predict instead of the test set")
    p.add_argument("--output", help="where to write the single-dataset prediction (JSON)")

    p = sub.add_parser("evaluate", help="metrics report (and plot data) for one method")
    common(p)
    p.add_argument("--workdir", required=True)
    p.add_argument("--method", default="abcd-overall")
    p.add_argument("--plots", help="comma list of: scatter,intervals,ellipses")
    p.add_argument("--plot-dir", help="directory for plot CSVs (default: workdir/plots)")
    p.add_argument("--ellipse-count", type=int, default=10, help="test records to outline")

    p = sub.add_parser("compare", help="side-by-side table over methods")
    common(p)
    p.add_argument("--workdir", required=True)
    p.add_argument(
        "--methods", default="standard-abc,abc-cnn,abcd-overall,abcd-epistemic",
        help="comma-separated method list",
    )
    p.add_argument("--out", help="comparison CSV path (default: workdir/compare_<model>.csv)")

    p = sub.add_parser("oracle", help="exact MA(2) grid posterior for an observed series")
    p.add_argument("--model", required=True, choices=("ma2",))
    p.add_argument("--input", required=True, help="text file, one observation per line")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--resolution", type=int, default=400)
    return parser


def cmd_simulate(args) -> int:
    from .pipeline import _table_options
    from .simulators import generate_reference_table

    cfg = load_config(
        argparse.Namespace(config=None, model=args.model, set=args.set, seed=args.seed)
    )
    table = generate_reference_table(
        args.model, args.n, master_seed=args.seed, stream=args.stream, **_table_options(cfg)
    )
    out = Path(args.out)
    written = []
    if args.format in ("binary", "both"):
        path = out / f"{args.model}_n{args.n}_seed{args.seed}.bin"
        table.to_binary(path)
        written.append(path)
    if args.format in ("jsonl", "both"):
        path = out / f"{args.model}_n{args.n}_seed{args.seed}.jsonl"
        table.to_jsonl(path)
        written.append(path)
    for p in written:
        print(p)
    return 0


def cmd_train(args) -> int:
    from .pipeline import ensure_model, ensure_tables

    cfg = load_config(args)
    workdir = Path(args.workdir)
    tables = ensure_tables(cfg, workdir, args.force)
    model = ensure_model(cfg, workdir, tables, args.force)
    print(f"{workdir / 'model.ckpt'}")
    print(f"best epoch {model.metadata['best_epoch']}, val loss {model.metadata['val_loss']:.4f}")
    return 0


def cmd_calibrate(args) -> int:
    from .pipeline import ensure_calibrators, ensure_mc_predictions, ensure_model, ensure_tables

    cfg = load_config(args)
    workdir = Path(args.workdir)
    tables = ensure_tables(cfg, workdir, args.force)
    model = ensure_model(cfg, workdir, tables, args.force)
    cal_preds = ensure_mc_predictions(cfg, workdir, model, tables["cal"], "cal", args.force)
    joint, _ = ensure_calibrators(cfg, workdir, cal_preds, tables["cal"].theta, args.force)
    print(f"{workdir / f'calibrator_{cfg.uncertainty}.json'}")
    print(f"conformal quantile {joint.q_hat:.6g} at delta={cfg.delta} over {joint.n_cal} scores")
    return 0


def cmd_infer(args) -> int:
    import numpy as np

    from .pipeline import run_abcd_conformal

    cfg = load_config(args)
    workdir = Path(args.workdir)
    result = run_abcd_conformal(cfg, workdir, args.force)
    if args.input:
        from .mcdropout import predict_mc
        from .seeding import derive_uint64

        x = np.loadtxt(args.input)
        if cfg.model == "ma2":
            x = x[None, :]
        elif cfg.model == "lv":
            x = x.reshape(2, -1)
        elif cfg.model == "grf":
            x = x.reshape(1, cfg.grid_size, cfg.grid_size)
        pred = predict_mc(
            result.model, x, cfg.k_passes, derive_uint64(cfg.master_seed, 7)
        )
        from .conformal import confidence_set, marginal_intervals

        cs = confidence_set(pred, cfg.kind, result.joint_calibrator)
        ivs = marginal_intervals(pred, cfg.kind, result.component_calibrators)
        blob = {
            "mean": pred.mean.tolist(),
            "epistemic_cov": pred.epistemic_cov.tolist(),
            "aleatoric_diag": pred.aleatoric_diag.tolist(),
            "q_hat": cs.q_hat,
            "shape_matrix": cs.shape_matrix.tolist(),
            "intervals": ivs.tolist(),
        }
        out = Path(args.output) if args.output else workdir / "prediction.json"
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps(blob, indent=2, sort_keys=True) + "\n")
        print(out)
    else:
        print(workdir / f"report_abcd-{cfg.uncertainty}.json")
        print(f"joint coverage {result.report.joint_coverage}")
    return 0


def cmd_evaluate(args) -> int:
    from .pipeline import run_method

    cfg = load_config(args)
    workdir = Path(args.workdir)
    report = run_method(cfg, args.method, workdir, args.force)
    path = workdir / f"report_{args.method}.json"
    print(path)
    for label, value in report.metric_rows():
        if value is not None:
            print(f"{label}: {value:.4f}")
    if args.plots:
        plot_dir = Path(args.plot_dir) if args.plot_dir else workdir / "plots"
        for kind in args.plots.split(","):
            for written in emit_plot_data(cfg, args.method, workdir, plot_dir, kind.strip(), args):
                print(written)
    return 0


def cmd_compare(args) -> int:
    from .pipeline import compare, comparison_csv, regional_csv

    cfg = load_config(args)
    workdir = Path(args.workdir)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    reports = compare(cfg, methods, workdir, args.force)
    csv_text = comparison_csv(reports)
    out = Path(args.out) if args.out else workdir / f"compare_{cfg.model}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(csv_text)
    print(out)
    if any(r.regional for r in reports):
        reg = workdir / f"regional_{cfg.model}.csv"
        reg.write_text(regional_csv(reports))
        print(reg)
    print(csv_text, end="")
    return 0


def cmd_oracle(args) -> int:
    import numpy as np

    from .simulators import ma2

    x = np.loadtxt(args.input)
    post = ma2.exact_posterior(x, resolution=args.resolution)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    mean_path = out / "posterior_mean.json"
    mean_path.write_text(
        json.dumps({"mean": post.mean.tolist(), "resolution": args.resolution}, sort_keys=True)
        + "\n"
    )
    grid_path = out / "posterior_grid.csv"
    with open(grid_path, "w") as fh:
        fh.write("# theta1,theta2,mass - grid posterior over the identifiability triangle\n")
        for (t1, t2), m in zip(post.points, post.mass):
            fh.write(f"{t1!r},{t2!r},{m!r}\n")
    print(mean_path)
    print(grid_path)
    return 0


def emit_plot_data(cfg, method, workdir, plot_dir, kind, args):
    """Plot-ready CSVs: truth-vs-estimate scatter, interval strips,
    ellipse boundary outlines (score = q_hat at every emitted point)."""
    import numpy as np

    from .pipeline import ensure_tables, run_abcd_conformal, run_baseline

    plot_dir = Path(plot_dir)
    plot_dir.mkdir(parents=True, exist_ok=True)
    tables = ensure_tables(cfg, workdir)
    truths = tables["test"].theta
    written = []
    if method.startswith("abcd"):
        variant = method.removeprefix("abcd-")
        result = run_abcd_conformal(dataclasses.replace(cfg, uncertainty=variant), workdir)
        estimates = np.stack([p.mean for p in result.predictions])
        intervals = result.intervals
        sets = result.sets
    else:
        res = run_baseline(cfg, method, workdir)
        estimates, intervals, sets = res.means, res.intervals, None

    if kind == "scatter":
        path = plot_dir / f"scatter_{method}.csv"
        with open(path, "w") as fh:
            fh.write("# component,truth,estimate - point estimates vs generating parameters\n")
            for j in range(truths.shape[1]):
                for t, e in zip(truths[:, j], estimates[:, j]):
                    fh.write(f"{j + 1},{t!r},{e!r}\n")
        written.append(path)
    elif kind == "intervals":
        path = plot_dir / f"intervals_{method}.csv"
        with open(path, "w") as fh:
            fh.write(
                "# component,truth,lo,hi - marginal confidence/credible intervals"
                f" on the {cfg.report_scale} scale\n"
            )
            shift, scale = _report_shift_scale(cfg, tables)
            t_scaled = (truths - shift) / scale
            for j in range(truths.shape[1]):
                for t, (lo, hi) in zip(t_scaled[:, j], intervals[:, j, :]):
                    fh.write(f"{j + 1},{t!r},{lo!r},{hi!r}\n")
        written.append(path)
    elif kind == "ellipses":
        if sets is None:
            raise CliConfigError(f"method {method} has no joint confidence sets")
        path = plot_dir / f"ellipses_{method}.csv"
        with open(path, "w") as fh:
            fh.write("# record,x,y - 256 boundary points per confidence ellipse\n")
            for i, cs in enumerate(sets[: args.ellipse_count]):
                for pt in cs.boundary_points(256):
                    coords = ",".join(repr(v) for v in pt)
                    fh.write(f"{i},{coords}\n")
        written.append(path)
    else:
        raise CliConfigError(f"unknown plot kind {kind!r}")
    return written


def _report_shift_scale(cfg, tables):
    from .pipeline import _report_transform

    return _report_transform(cfg, tables)


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "calibrate": cmd_calibrate,
    "infer": cmd_infer,
    "evaluate": cmd_evaluate,
    "compare": cmd_compare,
    "oracle": cmd_oracle,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads:
        _set_thread_env(args.threads)
    try:
        return COMMANDS[args.command](args)
    except CliConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # stage failures: one parsable line
        module = type(exc).__module__.split(".")[-1]
        print(f"error: {module}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
