"""Command-line entry point: gen-data | train | attack | calibrate | sweep | report.

Exit codes: 0 success, 1 usage error (bad flag, bad value, missing input
file), 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .attacks import AttackConfig, evaluate_attack
from .calibration import calibrate_epsilon, calibration_table, load_calibration, save_calibration, trace_as_dict
from .data import SyntheticConfig, generate_synthetic, load_dataset, save_dataset
from .errors import InvalidConfigError, LpSparseError
from .model import TrainConfig, adversarial_train, budget_from_table, load_model, save_model, train
from .report import (
    atomic_write,
    emit_plots,
    result_from_csv,
    text_summary,
    write_manifest,
    write_measures_csv,
    write_optimal_p,
)
from .sweep import aggregate, default_grid, run_sweep

log = logging.getLogger("lpsparse")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise argparse.ArgumentTypeError(f"no such file: {path}")
    return p


def _p_value(text: str) -> float:
    try:
        p = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text}") from None
    if not 1.0 <= p <= 2.0:
        raise argparse.ArgumentTypeError(f"p must lie in [1, 2], got {text}")
    return p


def _nonneg(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text}") from None
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return v


def _grid(text: str) -> list[float]:
    if text == "default":
        return default_grid()
    return sorted({_p_value(tok) for tok in text.split(",") if tok.strip()})


def _add_attack_flags(sp):
    sp.add_argument("--iterations", type=int, default=100)
    sp.add_argument("--restarts", type=int, default=1)
    sp.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="lpsparse", description="lp-constrained attacks, sparsity/smoothness measures, optimal p.")
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="generate a synthetic grating dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--split", choices=("train", "test"), default="train")
    g.add_argument("--height", type=int, default=16)
    g.add_argument("--width", type=int, default=16)
    g.add_argument("--channels", type=int, default=3)
    g.add_argument("--classes", type=int, default=4)
    g.add_argument("--per-class", type=int, default=50)
    g.add_argument("--noise", type=float, default=0.1)
    g.add_argument("--seed", type=int, default=0)

    t = sub.add_parser("train", help="train a classifier")
    t.add_argument("--data", type=_existing, required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--model", choices=("mlp", "conv"), default="mlp")
    t.add_argument("--hidden", type=int, default=64, help="MLP hidden width")
    t.add_argument("--epochs", type=int, default=10)
    t.add_argument("--batch-size", type=int, default=32)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--adversarial", action="store_true", help="mixed-p adversarial training")
    t.add_argument("--adv-fraction", type=float, default=0.75)
    t.add_argument("--eps0", type=float, default=0.5, help="l2-equivalent budget for the per-p heuristic")
    t.add_argument("--attack-iterations", type=int, default=10)
    t.add_argument("--calibration", type=_existing, help="calibration JSON giving per-p training budgets")

    a = sub.add_parser("attack", help="attack one example or a whole dataset")
    a.add_argument("--model", type=_existing, required=True)
    a.add_argument("--data", type=_existing, required=True)
    a.add_argument("--p", type=_p_value, required=True)
    a.add_argument("--epsilon", type=_nonneg, required=True)
    a.add_argument("--index", type=int, help="attack only this example")
    a.add_argument("--out", required=True, help="perturbation dump (.npz); measures go to <out>.json")
    a.add_argument("--pixel-threshold", type=_nonneg, default=0.0)
    _add_attack_flags(a)

    c = sub.add_parser("calibrate", help="find epsilon_p per grid point")
    c.add_argument("--model", type=_existing, required=True)
    c.add_argument("--data", type=_existing, required=True)
    c.add_argument("--grid", type=_grid, default=default_grid())
    c.add_argument("--calib-size", type=int, default=200)
    c.add_argument("--out", required=True)
    _add_attack_flags(c)

    s = sub.add_parser("sweep", help="full p-grid experiment into a new run directory")
    s.add_argument("--model", type=_existing, required=True)
    s.add_argument("--data", type=_existing, required=True)
    s.add_argument("--grid", type=_grid, default=default_grid())
    s.add_argument("--calibration", type=_existing, help="skip calibration and use this table")
    s.add_argument("--calib-size", type=int, default=200)
    s.add_argument("--pixel-threshold", type=_nonneg, default=0.0)
    s.add_argument("--runs", default="runs", help="parent directory of run directories")
    s.add_argument("--run-id", help="run directory name (default: UTC timestamp); must not exist")
    _add_attack_flags(s)

    r = sub.add_parser("report", help="plots and a text summary from run directories")
    r.add_argument("run_dirs", nargs="+", type=_existing)
    r.add_argument("--group-by", choices=("model", "dataset"), default="model")
    r.add_argument("--out", help="output directory (default: <first run>/report); must not exist")
    return ap


def _attack_template(args, p: float = 2.0) -> AttackConfig:
    cfg = AttackConfig(p=p, epsilon=0.0, iterations=args.iterations, restarts=args.restarts, seed=args.seed)
    cfg.validate()
    return cfg


def _new_dir(path: Path) -> Path:
    if path.exists():
        raise UsageError(f"output directory already exists (run directories are append-only): {path}")
    path.mkdir(parents=True)
    return path


def cmd_gen_data(args) -> None:
    cfg = SyntheticConfig(args.height, args.width, args.channels, args.classes, args.per_class, args.noise)
    ds = generate_synthetic(cfg, args.seed, args.split)
    save_dataset(ds, args.out)
    print(f"wrote {len(ds)} examples {ds.shape} to {args.out}")


def cmd_train(args) -> None:
    ds = load_dataset(args.data)
    arch = {"hidden": (args.hidden,)} if args.model == "mlp" else {}
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr, seed=args.seed,
                      model=args.model, arch=arch, adversarial_fraction=args.adv_fraction, eps0=args.eps0,
                      attack_iterations=args.attack_iterations)
    if args.adversarial:
        budget = None
        if args.calibration:
            table = calibration_table(load_calibration(args.calibration))
            budget = budget_from_table(list(table.items()))
        model = adversarial_train(ds, cfg, budget=budget)
    else:
        model = train(ds, cfg)
    save_model(model, args.out)
    print(f"wrote checkpoint {args.out}")


def cmd_attack(args) -> None:
    model = load_model(args.model)
    ds = load_dataset(args.data)
    if args.index is not None:
        if not 0 <= args.index < len(ds):
            raise UsageError(f"--index {args.index} out of range [0, {len(ds)})")
        ds = ds.subset([args.index])
    cfg = replace(_attack_template(args, args.p), epsilon=args.epsilon)
    res = evaluate_attack(model, ds, cfg, pixel_threshold=args.pixel_threshold, keep_deltas=True)
    indices = np.array([args.index]) if args.index is not None else np.arange(len(ds))
    out = Path(args.out)
    tmp = out.with_name(out.name + ".tmp.npz")
    np.savez(tmp, delta=res.deltas, p=args.p, epsilon=args.epsilon, indices=indices,
             success=~res.adv_correct, clean_correct=res.clean_correct)
    tmp.replace(out)
    doc = {
        "p": args.p, "epsilon": args.epsilon, "attack": cfg.name,
        "clean_accuracy": res.clean_accuracy, "adv_accuracy": res.adv_accuracy, "success_rate": res.success_rate,
        "means": res.means,
        "examples": [
            {"index": int(i), "success": bool(not res.adv_correct[k]),
             **{m: (None if not np.isfinite(v[k]) else float(v[k])) for m, v in res.per_example.items()}}
            for k, i in enumerate(indices)
        ],
    }
    atomic_write(out.with_name(out.name + ".json"), json.dumps(doc, indent=2) + "\n")
    print(json.dumps({k: doc[k] for k in ("clean_accuracy", "adv_accuracy", "success_rate", "means")}, indent=2))


def cmd_calibrate(args) -> None:
    model = load_model(args.model)
    ds = load_dataset(args.data).subsample(args.calib_size, args.seed)
    results = []
    for p in args.grid:
        r = calibrate_epsilon(model, ds, p, _attack_template(args, p))
        flag = " (bracket failure)" if r.bracket_failure else ""
        print(f"p={p:.2f} epsilon={r.epsilon:.6g} achieved={r.achieved:.4f} target={r.target:.4f}{flag}")
        results.append(r)
    save_calibration(results, args.out, Path(args.model).stem, Path(args.data).stem)


def cmd_sweep(args, argv) -> None:
    started = datetime.now(timezone.utc)
    run_id = args.run_id or started.strftime("%Y%m%dT%H%M%S%fZ")
    run_dir = _new_dir(Path(args.runs) / run_id)
    model = load_model(args.model)
    ds = load_dataset(args.data)
    table = calibration_table(load_calibration(args.calibration)) if args.calibration else None
    model_id, dataset_id = Path(args.model).stem, Path(args.data).stem

    def progress(pt, _res):
        print(f"p={pt.p:.2f} epsilon={pt.epsilon:.6g} adv_accuracy={pt.adv_accuracy:.4f}"
              f"{' (flagged)' if pt.flagged else ''}", flush=True)

    result = run_sweep(model, ds, args.grid, _attack_template(args), calibration=table,
                       calib_size=args.calib_size, seed=args.seed, model_id=model_id, dataset_id=dataset_id,
                       pixel_threshold=args.pixel_threshold, on_point=progress)
    write_measures_csv(result, run_dir / "measures.csv")
    write_optimal_p(result, run_dir / "optimal_p.json")
    cals = [pt.calibration for pt in result.points if pt.calibration is not None]
    if cals:
        save_calibration(cals, run_dir / "calibration.json", model_id, dataset_id)
        atomic_write(run_dir / "calibration_trace.json",
                     json.dumps([trace_as_dict(c) for c in cals], indent=2) + "\n")
    emit_plots(result, run_dir / "plots")
    config = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items()}
    config.update(model_id=model_id, dataset_id=dataset_id, attack_template=asdict(_attack_template(args)))
    write_manifest(run_dir, run_id, ["lpsparse", *argv], config, {"seed": args.seed}, started)
    print(f"beta_opt={result.beta_opt:.4f} optimal_p={result.optimal_p_set}")
    print(f"run directory: {run_dir}")


def _load_run(run_dir: Path):
    csv_path = run_dir / "measures.csv"
    if not csv_path.exists():
        raise UsageError(f"not a run directory (no measures.csv): {run_dir}")
    manifest = json.loads((run_dir / "manifest.json").read_text()) if (run_dir / "manifest.json").exists() else {}
    cfg = manifest.get("config", {})
    flagged = ()
    if (run_dir / "optimal_p.json").exists():
        flagged = tuple(json.loads((run_dir / "optimal_p.json").read_text()).get("flagged_p", ()))
    return result_from_csv(csv_path, cfg.get("model_id", run_dir.name), cfg.get("dataset_id", ""), flagged)


def cmd_report(args) -> None:
    results = [_load_run(d) for d in args.run_dirs]
    out = _new_dir(Path(args.out) if args.out else args.run_dirs[0] / "report")
    for d, r in zip(args.run_dirs, results):
        target = out / d.name if len(results) > 1 else out
        emit_plots(r, target)
    groups = aggregate(results, args.group_by)
    emit_plots(groups, out)
    summary = text_summary(results, groups)
    atomic_write(out / "summary.txt", summary)
    print(summary, end="")


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "gen-data":
            cmd_gen_data(args)
        elif args.command == "train":
            cmd_train(args)
        elif args.command == "attack":
            cmd_attack(args)
        elif args.command == "calibrate":
            cmd_calibrate(args)
        elif args.command == "sweep":
            cmd_sweep(args, argv)
        else:
            cmd_report(args)
    except (UsageError, InvalidConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (LpSparseError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # never a bare stack trace
        print(f"error: unexpected {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
