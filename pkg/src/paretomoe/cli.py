"""Command-line entry point.

Exit codes: 0 success, 1 failure (solver violations, no successful ablation
cell), 2 configuration error, 3 data error, 4 training divergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bench import run_bench
from .config import CSV, RunConfig, load_config, load_grid, parse_config
from .data import PreparedData, SplitSpec, from_embedded, lag_embed, load_csv, prepare, synth_sru
from .errors import ConfigError, DataError, DimensionError, DivergenceError, DomainError, SchemaError
from .model import OMoE, load_checkpoint, save_checkpoint
from .training import AblationSpec, evaluate, por_fixed_deltas, run_ablation, train

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3, 4

CHECKPOINT = "checkpoint.json"
METRICS = "metrics.csv"
TRAJECTORY = "trajectory.csv"
MANIFEST = "manifest.json"
ABLATION = "ablation.csv"
ABLATION_DELTAS = "ablation_deltas.csv"
PLOTS = "plots"
HIST_BINS = 30


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_table(path: Path, rows: list[dict], fields: list[str] | None = None) -> None:
    fields = fields or (list(rows[0]) if rows else [])
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(row.get(k, "")) for k in fields})


def read_table(path: Path) -> list[dict]:
    with path.open(newline="") as fh:
        return list(csv.DictReader(fh))


def load_data(cfg: RunConfig) -> PreparedData:
    d = cfg.data
    try:
        if d.source == CSV:
            raw = load_csv(cfg.resolve(d.path), d.process, d.quality, d.delimiter, d.time_column)
        else:
            raw = synth_sru(d.seed, d.rows, d.noise)
        ds = from_embedded(raw) if d.embedded else lag_embed(raw, d.lags)
        return prepare(ds, SplitSpec(tuple(d.split)), d.quality)
    except (DataError, SchemaError, DomainError, DimensionError) as exc:
        raise CliError(EXIT_DATA, f"data error: {exc}") from None


def _config(path) -> RunConfig:
    try:
        return load_config(path)
    except ConfigError as exc:
        raise CliError(EXIT_CONFIG, f"config error: {exc}") from None


def _echo(cfg: RunConfig) -> dict:
    doc = cfg.to_dict()
    if cfg.data.path:
        doc["data"]["path"] = str(cfg.resolve(cfg.data.path).resolve())
    doc["output"]["dir"] = str(cfg.output_dir.resolve())
    return doc


def _metrics_rows(report) -> list[dict]:
    return [{k: ("" if v is None else v) for k, v in row.items()} for row in report.rows()]


def cmd_train(args) -> int:
    cfg = _config(args.config)
    data = load_data(cfg)
    try:
        res = train(cfg.train_config(), data)
    except DivergenceError as exc:
        raise CliError(EXIT_DIVERGED, f"training diverged at {exc}") from None
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(res.model, out / CHECKPOINT)
    write_table(out / METRICS, res.report.curves)
    K = data.K
    traj = []
    for e in res.trajectory:
        row = {"step": e.step, "epoch": e.epoch}
        row.update({f"w{k + 1}": e.weights[k] for k in range(K)})
        row.update({f"loss{k + 1}": e.losses[k] for k in range(K)})
        row["residual"] = e.residual
        traj.append(row)
    write_table(out / TRAJECTORY, traj)
    manifest = {
        "version": __version__,
        "config": _echo(cfg),
        "seed": cfg.training.seed,
        "data_checksum": data.checksum(),
        "split_sizes": [len(data.train), len(data.val), len(data.test)],
        "best_epoch": res.best_epoch,
        "best_val_loss": res.best_val_loss,
        "final_val_loss": res.final_val_loss,
        "test_metrics": _metrics_rows(res.report),
    }
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    for m in res.report.objectives:
        r2 = "n/a" if m.r2 is None else f"{m.r2:.4f}"
        print(f"{m.name}: R2 {r2}  RMSE {m.rmse:.6g}  MAE {m.mae:.6g}")
    print(f"wrote {out}")
    return EXIT_OK


def _load_model(path, data: PreparedData) -> OMoE:
    try:
        model = load_checkpoint(path)
    except (OSError, ValueError) as exc:
        raise CliError(EXIT_DATA, f"cannot load checkpoint {path}: {exc}") from None
    if model.cfg.D_in != data.D_in or model.cfg.K != data.K:
        raise CliError(EXIT_DATA, f"checkpoint expects D_in={model.cfg.D_in}, K={model.cfg.K}; "
                                  f"data has D_in={data.D_in}, K={data.K}")
    return model


def cmd_eval(args) -> int:
    cfg = _config(args.config)
    data = load_data(cfg)
    model = _load_model(args.checkpoint, data)
    report = evaluate(model, data.test, data.y_scaler, data.quality)
    print("objective,rmse,mae,r2")
    for m in report.objectives:
        print(f"{m.name},{m.rmse!r},{m.mae!r},{'' if m.r2 is None else repr(m.r2)}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _config(args.config)
    try:
        grid = load_grid(args.grid)
        spec = AblationSpec(list(grid.get("cells") or []),
                            tuple(grid.get("seeds", (cfg.training.seed,))),
                            tuple(grid.get("modes", (cfg.training.weight_mode,))))
        spec.validate()
    except ConfigError as exc:
        raise CliError(EXIT_CONFIG, f"config error: {exc}") from None
    data = load_data(cfg)
    rows = run_ablation(spec, data, cfg.train_config())
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    table = [{k: (json.dumps(v) if k == "r2_values" else v) for k, v in row.items()} for row in rows]
    write_table(out / ABLATION, table)
    deltas = por_fixed_deltas(rows, data.quality)
    if deltas:
        write_table(out / ABLATION_DELTAS, deltas)
    ok = sum(1 for r in rows if r["runs"] > 0)
    print(f"{ok}/{len(rows)} cells succeeded; wrote {out / ABLATION}")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_solver_bench(args) -> int:
    if args.k < 1 or args.n < 1:
        raise CliError(EXIT_CONFIG, "config error: --k and --n must be >= 1")
    report = run_bench(args.k, args.n, args.seed)
    print("\n".join(report.lines()))
    return EXIT_OK if report.violations == 0 else EXIT_FAIL


def _long(rows: list[dict], step_key: str, series: list[str]) -> list[dict]:
    return [{"step": r[step_key], "series": s, "value": r[s]} for r in rows for s in series]


def cmd_export_plots(args) -> int:
    run = Path(args.run_dir)
    missing = [n for n in (METRICS, TRAJECTORY, MANIFEST, CHECKPOINT) if not (run / n).is_file()]
    if missing:
        raise CliError(EXIT_DATA, f"{run}: missing {', '.join(missing)}")
    curves = read_table(run / METRICS)
    traj = read_table(run / TRAJECTORY)
    out = run / PLOTS
    out.mkdir(exist_ok=True)
    fields = ["step", "series", "value"]
    write_table(out / "curves.csv", _long(curves, "epoch", [k for k in curves[0] if k != "epoch"]), fields)
    series = [k for k in traj[0] if k not in ("step", "epoch")]
    write_table(out / "trajectory.csv", _long(traj, "step", series), fields)

    # residuals are recomputed from the stored model and the recorded data source
    manifest = json.loads((run / MANIFEST).read_text())
    try:
        cfg = parse_config(manifest["config"], run)
    except (ConfigError, KeyError) as exc:
        raise CliError(EXIT_DATA, f"{run / MANIFEST}: unusable config echo ({exc})") from None
    data = load_data(cfg)
    if data.checksum() != manifest.get("data_checksum"):
        raise CliError(EXIT_DATA, "data no longer matches the checksum recorded for this run")
    model = _load_model(run / CHECKPOINT, data)
    resid = data.y_scaler.inverse(data.test.Y) - data.y_scaler.inverse(model.predict(data.test.X))
    rows, hist = [], []
    for k, name in enumerate(data.quality):
        rows += [{"step": i, "series": name, "value": v} for i, v in enumerate(resid[:, k])]
        counts, edges = np.histogram(resid[:, k], bins=HIST_BINS)
        for b in range(HIST_BINS):
            hist += [{"step": b, "series": f"{name}.lo", "value": edges[b]},
                     {"step": b, "series": f"{name}.hi", "value": edges[b + 1]},
                     {"step": b, "series": f"{name}.count", "value": int(counts[b])}]
    write_table(out / "residuals.csv", rows, fields)
    write_table(out / "residual_hist.csv", hist, fields)
    print(f"wrote {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="paretomoe", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("train", help="train one model from a config file")
    s.add_argument("config")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="test-set metrics of a saved checkpoint")
    s.add_argument("config")
    s.add_argument("checkpoint")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("ablate", help="run an ablation grid")
    s.add_argument("config")
    s.add_argument("grid")
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("solver-bench", help="check the weight solver on random Gram matrices")
    s.add_argument("--k", type=int, default=3)
    s.add_argument("--n", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_solver_bench)

    s = sub.add_parser("export-plots", help="write long-format plot tables for a run directory")
    s.add_argument("run_dir")
    s.set_defaults(func=cmd_export_plots)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(exc, file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
