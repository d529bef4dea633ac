"""Command line entry point: generate, build, train, tune, evaluate, inspect-weights.

Every command exits 0 on success.  Failures print a single JSON line
``{"error": <kind>, "message": <text>}`` on stderr and exit 1.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import config as config_mod
from .data import (
    fit_scaler,
    generate_synthetic_market,
    ingest_houses,
    ingest_transactions,
    write_houses_csv,
    write_transactions_csv,
)
from .evaluation import build_report, emit_plot_data, naive_baseline, report_meta_weights
from .hin import build_hin, count_meta_structure, export_counts, load_meta_structures
from .lifelong import load_checkpoint, run_lifelong, save_checkpoint
from .pipeline import PreparedMarket, build_market, save_json
from .tuner import WindowEvaluator, tune_lambda


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _load_data(data_dir: Path):
    houses = ingest_houses(data_dir / "houses.csv")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        tx = ingest_transactions(data_dir / "transactions.csv", houses)
    for w in caught:
        _log(f"warning: {w.message}")
    return houses, tx


def cmd_generate(args, cfg) -> None:
    mc = cfg["market"]
    for key in ("seed", "n_houses", "n_months", "turnover"):
        if getattr(args, key) is not None:
            mc[key] = getattr(args, key)
    market = generate_synthetic_market(config_mod.market_config(cfg))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_houses_csv(market.houses, out / "houses.csv")
    write_transactions_csv(market.transactions, out / "transactions.csv")
    np.save(out / "latent_prices.npy", market.latent)
    _log(f"generated {len(market.houses)} houses, {len(market.transactions)} transactions in {out}")


def cmd_build(args, cfg) -> None:
    houses, _ = _load_data(Path(args.data))
    specs = load_meta_structures(args.meta_structures) if args.meta_structures else None
    prepared = build_market(houses, config_mod.build_config(cfg), specs)
    prepared.save(args.out)
    if args.export_counts:
        d = Path(args.export_counts)
        d.mkdir(parents=True, exist_ok=True)
        g = build_hin(prepared.houses)
        for m, spec in enumerate(prepared.specs):
            export_counts(count_meta_structure(g, spec), d / f"{m:03d}_{spec.name.replace('+', '_')}.mtx")
    p = prepared.partition
    _log(f"built {len(prepared.specs)} meta-structures, {prepared.adjacency.nnz // 2} edges, "
         f"{p.j} subgraphs, {len(p.overlap)} overlapping houses in {args.out}")


def _train_config(args, cfg) -> dict:
    t = cfg["train"]
    if args.window_n is not None:
        t["window"] = args.window_n
    if args.epochs is not None:
        t["epochs"] = args.epochs
    if args.ablation is not None:
        t["ablation"] = args.ablation
    if args.no_regularization:
        t["regularization"] = False
    if args.no_inherit:
        t["inherit"] = False
    if args.seed is not None:
        t["seed"] = args.seed
    if getattr(args, "t0", None) is not None:
        t["t0"] = args.t0
    return cfg


def cmd_train(args, cfg) -> None:
    cfg = _train_config(args, cfg)
    _, tx = _load_data(Path(args.data))
    prepared = PreparedMarket.load(args.market)
    lcfg = config_mod.lifelong_config(cfg)
    t0 = int(cfg["train"]["t0"])
    last = cfg["train"]["last_month"] or max(e.month_index for e in tx)
    scaler = fit_scaler([e.price for e in tx if e.month_index < t0])
    trainer = prepared.trainer(tx, lcfg, scaler)
    start = time.time()
    result = run_lifelong(trainer, t0, last)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result.write_csv(out / "metrics.csv")
    save_checkpoint(trainer, out / "checkpoint.pvc")
    months = sorted(result.tests)
    arrays = {"months": np.array(months, dtype=np.int64)}
    for m in months:
        idx, _ = result.tests[m]
        arrays[f"idx{m}"] = idx
        arrays[f"pred{m}"] = result.predictions[m][idx]
        arrays[f"label{m}"] = trainer.labels[m].y
    np.savez(out / "predictions.npz", **arrays)
    save_json({
        "data": str(Path(args.data).resolve()),
        "market": str(Path(args.market).resolve()),
        "config": cfg,
        "train_loss": {str(r.month): r.train_loss for r in result.log},
        "seconds": round(time.time() - start, 3),
    }, out / "run.json")
    _log(f"trained months {t0}..{last}: mean test RMSE {result.mean_rmse():.4f} -> {out}")


def cmd_tune(args, cfg) -> None:
    cfg = _train_config(args, cfg)
    tcfg = cfg["tune"]
    for key in ("budget", "month", "epochs_per_eval"):
        if getattr(args, key) is not None:
            tcfg[key] = getattr(args, key)
    _, tx = _load_data(Path(args.data))
    prepared = PreparedMarket.load(args.market)
    lcfg = config_mod.lifelong_config(cfg)
    months = sorted({e.month_index for e in tx})
    month = tcfg["month"] or lcfg.window + 1
    if month + 1 > months[-1]:
        raise ValueError(f"tuning month {month} leaves no held-out month")
    scaler = fit_scaler([e.price for e in tx if e.month_index <= month])
    trainer = prepared.trainer(tx, lcfg, scaler)
    for t in range(1, month):
        trainer.advance_month(t)
        trainer.train_task(t)
    trainer.advance_month(month)
    evaluator = WindowEvaluator(trainer, month, tcfg["epochs_per_eval"])
    result = tune_lambda(evaluator, trainer.state.lam, tcfg["budget"], tcfg["seed"], tcfg["eps"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result.write_trace(out / "tuner_trace.csv")
    save_json({
        "lambda": result.lam.tolist(),
        "initial_rmse": result.initial_rmse,
        "best_rmse": result.best_rmse,
        "evaluations": result.evaluations,
        "stop_reason": result.stop_reason,
    }, out / "lambda.json")
    _log(f"tuned lambda in {result.evaluations} evaluations ({result.stop_reason}): "
         f"held-out RMSE {result.initial_rmse:.4f} -> {result.best_rmse:.4f}")


def _load_run(run_dir: Path):
    run = json.loads((run_dir / "run.json").read_text(encoding="utf-8"))
    prepared = PreparedMarket.load(run["market"])
    _, tx = _load_data(Path(run["data"]))
    trainer = load_checkpoint(run_dir / "checkpoint.pvc", prepared.X, prepared.partition,
                              prepared.edges, tx, prepared.house_ids)
    return run, prepared, tx, trainer


def cmd_evaluate(args, cfg) -> None:
    run_dir = Path(args.run)
    run, prepared, tx, trainer = _load_run(run_dir)
    ecfg = cfg["evaluate"]
    with np.load(run_dir / "predictions.npz") as z:
        months = [int(m) for m in z["months"]]
        preds = [z[f"pred{m}"] for m in months]
        labels = [z[f"label{m}"] for m in months]
        idxs = [z[f"idx{m}"] for m in months]
    losses = [run["train_loss"].get(str(m), float("nan")) for m in months]
    label = f"lifelong-{run['config']['train']['ablation']}"
    report = build_report(label, months, preds, labels, trainer.scaler, losses)
    report.thresholds, report.bin_width = tuple(ecfg["thresholds"]), ecfg["bin_width"]
    weights = report_meta_weights(prepared.spec_names, trainer.state.omega.data, ecfg["top_k_weights"])
    out = Path(args.out)
    emit_plot_data(report, out / "lifelong", weights)

    base_preds = []
    for m, idx in zip(months, idxs):
        raw = naive_baseline(tx, prepared.houses, m)[idx]
        base_preds.append(trainer.scaler.forward(raw))
    baseline = build_report("community-mean", months, base_preds, labels, trainer.scaler)
    baseline.thresholds, baseline.bin_width = report.thresholds, report.bin_width
    emit_plot_data(baseline, out / "baseline")
    summary = {"lifelong": report.summary(), "baseline": baseline.summary()}
    save_json(summary, out / "summary.json")
    print(json.dumps(summary, sort_keys=True))


def cmd_inspect_weights(args, cfg) -> None:
    run_dir = Path(args.run)
    _, prepared, _, trainer = _load_run(run_dir)
    k = args.top_k or cfg["evaluate"]["top_k_weights"]
    rows = report_meta_weights(prepared.spec_names, trainer.state.omega.data, k)
    print("rank,name,weight")
    for r, (name, w) in enumerate(rows, start=1):
        print(f"{r},{name},{w:.6g}")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="propval", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="JSON configuration file (defaults are used for missing keys)")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic market")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)
    g.add_argument("--n-houses", dest="n_houses", type=int)
    g.add_argument("--n-months", dest="n_months", type=int)
    g.add_argument("--turnover", type=float)

    b = sub.add_parser("build", help="HIN, similarity graph, attributes and partition")
    b.add_argument("--data", required=True, help="directory with houses.csv and transactions.csv")
    b.add_argument("--out", required=True)
    b.add_argument("--meta-structures", dest="meta_structures", help="JSON list of paths and graphs")
    b.add_argument("--export-counts", dest="export_counts", help="directory for Matrix Market count files")

    def training_flags(sp):
        sp.add_argument("--data", required=True)
        sp.add_argument("--market", required=True, help="output directory of `build`")
        sp.add_argument("--out", required=True)
        sp.add_argument("--window-n", dest="window_n", type=int)
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--ablation", choices=["full", "no-lstm", "no-gcn"])
        sp.add_argument("--no-regularization", dest="no_regularization", action="store_true")
        sp.add_argument("--no-inherit", dest="no_inherit", action="store_true")
        sp.add_argument("--seed", type=int)

    t = sub.add_parser("train", help="lifelong run over the transaction months")
    training_flags(t)
    t.add_argument("--t0", type=int, help="first scored month")

    u = sub.add_parser("tune", help="search the replay weights lambda")
    training_flags(u)
    u.add_argument("--budget", type=int)
    u.add_argument("--month", type=int, help="task month to retrain; month + 1 is held out")
    u.add_argument("--epochs-per-eval", dest="epochs_per_eval", type=int)

    e = sub.add_parser("evaluate", help="reports and plot data for a training run")
    e.add_argument("--run", required=True)
    e.add_argument("--out", required=True)

    w = sub.add_parser("inspect-weights", help="top meta-structure weights of a training run")
    w.add_argument("--run", required=True)
    w.add_argument("--top-k", dest="top_k", type=int)
    return p


COMMANDS = {
    "generate": cmd_generate,
    "build": cmd_build,
    "train": cmd_train,
    "tune": cmd_tune,
    "evaluate": cmd_evaluate,
    "inspect-weights": cmd_inspect_weights,
}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = config_mod.load_config(args.config)
        COMMANDS[args.command](args, cfg)
    except Exception as exc:  # every failure becomes one machine-readable line
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
