"""Command line entry point: ``mlcap <subcommand> --config run.json``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import cat as cat_mod
from . import pipeline as pl
from .cdi import CLASS1, CLASS2, read_cdi_csv, write_cdi_csv
from .classifier import TrainedModel
from .dataprep import SplitAssignment
from .gate import MlcCertificate, gate_case
from .irt import ItemBank

EXIT_CODES = {"config": 2, "data": 3, "irt": 4, "cdi": 5, "split": 6, "train": 7,
              "evaluate": 8, "cat": 9, "gate": 10}

CLASS_NAMES = {"1": CLASS1, "class1": CLASS1, "2": CLASS2, "class2": CLASS2}


def _class(value: str) -> int:
    try:
        return CLASS_NAMES[value.lower()]
    except KeyError:
        raise argparse.ArgumentTypeError(f"class must be one of {sorted(CLASS_NAMES)}") from None


def _load_config(args) -> pl.RunConfig:
    if not args.config:
        raise ValueError("--config is required for this subcommand")
    path = Path(args.config)
    raw = json.loads(path.read_text())
    base = path.parent
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.out_dir is not None:
        raw["out_dir"] = str(Path(args.out_dir).resolve())
    if getattr(args, "data", None):
        raw["data"] = str(Path(args.data).resolve())
    if getattr(args, "coding_spec", None):
        cs = args.coding_spec
        raw["coding_spec"] = cs if cs.startswith("builtin:") else str(Path(cs).resolve())
    if getattr(args, "balance", None) is not None:
        raw["balance"] = args.balance
    if getattr(args, "grid", None):
        raw["grid"] = "full" if args.grid == "full" else json.loads(Path(args.grid).read_text())
    if getattr(args, "folds", None) is not None:
        raw["folds"] = args.folds
    if getattr(args, "epochs", None) is not None:
        raw.setdefault("train", {})["epochs"] = args.epochs
    if getattr(args, "positive_class", None) is not None:
        raw["positive_class"] = args.positive_class
    cat_over = {"reliability": "reliability", "jitter_sd": "jitter_sd", "stop_window": "stop_window",
                "max_steps": "max_steps", "step_l_offset": "step_l_offset"}
    for attr, key in cat_over.items():
        v = getattr(args, attr, None)
        if v is not None:
            raw.setdefault("cat", {})[key] = v
    return pl.RunConfig.from_dict(raw, base_dir=base)


def _out(cfg: pl.RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _need(path: Path, stage: str) -> Path:
    if not path.exists():
        raise pl.PipelineError(stage, FileNotFoundError(f"{path} missing; run the earlier stage first"))
    return path


def cmd_fit_irt(args) -> int:
    cfg = _load_config(args)
    out = _out(cfg)
    prep = pl.prepare(cfg)
    prep.spec.save(out / pl.ARTIFACTS["coding"])
    bank = pl.fit_irt(cfg, prep)
    bank.save(out / pl.ARTIFACTS["itembank"])
    print(f"wrote {out / pl.ARTIFACTS['itembank']} ({len(bank)} items, converged={bank.fit_info.converged})")
    return 0


def cmd_score_cdi(args) -> int:
    cfg = _load_config(args)
    out = _out(cfg)
    prep = pl.prepare(cfg)
    bank = ItemBank.load(_need(out / pl.ARTIFACTS["itembank"], "cdi"))
    records = pl.score(prep, bank)
    write_cdi_csv(records, out / pl.ARTIFACTS["cdi"])
    print(f"wrote {out / pl.ARTIFACTS['cdi']} ({len(records)} cases)")
    return 0


def cmd_split(args) -> int:
    cfg = _load_config(args)
    out = _out(cfg)
    records = read_cdi_csv(_need(out / pl.ARTIFACTS["cdi"], "split"))
    assignment = pl.split(cfg, records)
    assignment.write_csv(out / pl.ARTIFACTS["split"], records)
    print(f"wrote {out / pl.ARTIFACTS['split']} ({len(assignment.train_ids)} train, "
          f"{len(assignment.test_ids)} test)")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out = _out(cfg)
    prep = pl.prepare(cfg)
    assignment = SplitAssignment.read_csv(_need(out / pl.ARTIFACTS["split"], "train"))
    trad, model = pl.train(cfg, prep, assignment)
    trad.save(out / pl.ARTIFACTS["model_traditional"])
    model.save(out / pl.ARTIFACTS["model"])
    print(f"chose {trad.activation}, lr={trad.learning_rate}, hidden={trad.hidden_units}; "
          f"wrote {out / pl.ARTIFACTS['model']}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    out = _out(cfg)
    prep = pl.prepare(cfg)
    trad = TrainedModel.load(_need(out / pl.ARTIFACTS["model_traditional"], "evaluate"))
    metrics = pl.evaluate(cfg, prep, trad)
    (out / pl.ARTIFACTS["metrics"]).write_text(json.dumps(metrics.to_dict(), indent=2, sort_keys=True) + "\n")
    print(json.dumps(metrics.to_dict(), indent=2))
    return 0


def cmd_cat(args) -> int:
    cfg = _load_config(args)
    out = _out(cfg)
    prep = pl.prepare(cfg)
    model = TrainedModel.load(_need(out / pl.ARTIFACTS["model"], "cat"))
    records = read_cdi_csv(_need(out / pl.ARTIFACTS["cdi"], "cat"))
    assignment = SplitAssignment.read_csv(_need(out / pl.ARTIFACTS["split"], "cat"))
    reports, cert = pl.adaptive(cfg, prep, model, records, assignment)
    reports[CLASS1].write_trajectory_csv(out / pl.ARTIFACTS["cat_class1"])
    reports[CLASS2].write_trajectory_csv(out / pl.ARTIFACTS["cat_class2"])
    cat_mod.save_reports(reports, out / pl.ARTIFACTS["mlc"])
    cert.save(out / pl.ARTIFACTS["certificate"])
    for cls, rep in reports.items():
        print(f"class {cls}: MLC={rep.mlc:.4f} after {rep.cases_used} cases ({rep.stop_reason})")
    return 0


def cmd_gate(args) -> int:
    try:
        cert = MlcCertificate.load(args.certificate)
    except Exception as exc:
        raise pl.PipelineError("gate", exc) from exc
    if args.batch:
        rows = []
        with open(args.batch, newline="") as fh:
            for r in csv.DictReader(fh):
                try:
                    d = gate_case(float(r["raw_cdi"]), _class(r["predicted_class"]), cert, r.get("case_id"))
                except (KeyError, ValueError, argparse.ArgumentTypeError) as exc:
                    raise pl.PipelineError("gate", exc) from exc
                rows.append(d.to_dict())
        print(json.dumps(rows, indent=2))
        return 0
    if args.cdi is None or args.predicted is None:
        raise pl.PipelineError("gate", ValueError("--cdi and --predicted are required without --batch"))
    print(json.dumps(gate_case(args.cdi, args.predicted, cert).to_dict(), indent=2))
    return 0


def cmd_run_all(args) -> int:
    cfg = _load_config(args)
    report = pl.run_pipeline(cfg)
    print(pl.comparison_table(report), end="")
    print(f"artifacts in {cfg.out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration (JSON)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out-dir", help="override the config output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--data", help="input CSV")
    data.add_argument("--coding-spec", help="coding spec JSON or builtin:<name>")
    data.add_argument("--balance", dest="balance", action="store_true", default=None)
    data.add_argument("--no-balance", dest="balance", action="store_false")

    training = argparse.ArgumentParser(add_help=False)
    training.add_argument("--grid", help="hyperparameter grid JSON, or 'full'")
    training.add_argument("--folds", type=int)
    training.add_argument("--epochs", type=int)

    catp = argparse.ArgumentParser(add_help=False)
    catp.add_argument("--reliability", type=float)
    catp.add_argument("--jitter-sd", type=float)
    catp.add_argument("--stop-window", type=int)
    catp.add_argument("--max-steps", type=int)
    catp.add_argument("--step-l-offset", type=int)

    p = argparse.ArgumentParser(prog="mlcap", description="Case-difficulty benchmarking of binary classifiers.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("fit-irt", parents=[common, data], help="fit the IRT item bank").set_defaults(func=cmd_fit_irt)
    sub.add_parser("score-cdi", parents=[common, data], help="estimate case difficulty indices").set_defaults(func=cmd_score_cdi)
    sub.add_parser("split", parents=[common], help="CDI-stratified 70/30 split").set_defaults(func=cmd_split)
    sub.add_parser("train", parents=[common, data, training], help="grid search and train").set_defaults(func=cmd_train)
    ev = sub.add_parser("evaluate", parents=[common, data], help="traditional metrics")
    ev.add_argument("--positive-class", type=_class)
    ev.set_defaults(func=cmd_evaluate)
    sub.add_parser("cat", parents=[common, data, catp], help="adaptive testing and MLC").set_defaults(func=cmd_cat)
    g = sub.add_parser("gate", parents=[common], help="gate a case against a certificate")
    g.add_argument("--certificate", required=True)
    g.add_argument("--cdi", type=float, help="raw (un-inverted) CDI of the case")
    g.add_argument("--predicted", type=_class, help="predicted class: class1/class2")
    g.add_argument("--batch", help="CSV with case_id, raw_cdi, predicted_class")
    g.set_defaults(func=cmd_gate)
    ra = sub.add_parser("run-all", parents=[common, data, training, catp], help="full pipeline")
    ra.add_argument("--positive-class", type=_class)
    ra.set_defaults(func=cmd_run_all)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except pl.PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CODES.get(exc.stage, 1)
    except (ValueError, TypeError, KeyError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: configuration: {exc}", file=sys.stderr)
        return EXIT_CODES["config"]


if __name__ == "__main__":
    sys.exit(main())
