"""Command-line entry point.

Every subcommand takes the shared config keys as ``--key value`` flags; a
config file (``--config`` or the DMSW_CONFIG environment variable) supplies
defaults underneath them. Exit codes: 0 success, 1 usage error, 2 data
error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from pathlib import Path

import numpy as np

from .analyze.ablation import run_ablation
from .analyze.cohort import cohort_stats, default_rules
from .analyze.metrics import classification_metrics
from .analyze.ols import RankDeficientError, grouped_ols_report
from .checkpoint import CheckpointError, load_model, save_model
from .config import CONFIG_ENV, ConfigError, RunConfig, load_config
from .embed import write_embeddings
from .features import write_features
from .pipeline import evaluate, fit_dmsw, prepare_batch, run_gradcheck
from .preprocess import cohort_score_stats, numeric_tensor, split_indices
from .records import DataError, load_cohort_dir
from .report import write_report
from .synth import SynthConfig, write_synthetic
from .train import NumericError, extract_model_features, predict_batch

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
GRADCHECK_TOL = 1e-4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _list_of(conv):
    def parse(text: str):
        items = [t for t in text.replace(" ", "").split(",") if t]
        try:
            return [conv(t) for t in items]
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad list {text!r}") from None
    return parse


def _optional(conv):
    return lambda text: None if text.lower() in ("", "none", "null") else conv(text)


# element types of list- and None-valued keys, which the defaults cannot reveal
_LIST_TYPES = {"subjects": str, "window_sizes": int, "ablation_sizes": int,
               "ablation_placements": str, "ablation_lambdas": float}


def _flag_type(name: str, default):
    if name in _LIST_TYPES:
        conv = _list_of(_LIST_TYPES[name])
        return _optional(conv) if default is None else conv
    if default is None:
        return _optional(str)
    if isinstance(default, bool):
        return _parse_bool
    return type(default)


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("config keys (flags override the config file)")
    defaults = RunConfig()
    for f in dataclasses.fields(RunConfig):
        key = RunConfig.attr_to_key(f.name)
        default = getattr(defaults, f.name)
        group.add_argument(f"--{key}", dest=f"cfg:{key}", type=_flag_type(f.name, default),
                           default=argparse.SUPPRESS, metavar=key.upper(), help=f"default: {default!r}")
    parser.add_argument("--config", default=None,
                        help=f"YAML or JSON config file (default: ${CONFIG_ENV} if set)")


def _resolve_config(ns: argparse.Namespace) -> RunConfig:
    path = ns.config or os.environ.get(CONFIG_ENV) or None
    overrides = {k[4:]: v for k, v in vars(ns).items() if k.startswith("cfg:")}
    return load_config(path, overrides)


def _cohort(cfg: RunConfig):
    if not cfg.data_dir:
        raise UsageError("data_dir is required (--data_dir DIR)")
    return load_cohort_dir(cfg.data_dir, cfg.periods, tuple(cfg.subjects))


def _emit(kind: str, cfg: RunConfig, body: dict) -> int:
    jpath, tpath = write_report(kind, cfg, body)
    print(jpath)
    print(tpath)
    return EXIT_OK


# -- subcommands ---------------------------------------------------------------


def cmd_synth(ns, cfg: RunConfig) -> int:
    scfg = SynthConfig(n_students=ns.n, periods=cfg.periods, dropout_rate=ns.dropout_rate, seed=cfg.seed)
    paths = write_synthetic(scfg, ns.out)
    for p in paths.values():
        print(p)
    body = {"synth": {"n_students": scfg.n_students, "dropout_rate": scfg.dropout_rate, "mix": scfg.mix,
                      "files": {k: str(v) for k, v in paths.items()}}}
    return _emit("synth", cfg, body)


def cmd_preprocess(ns, cfg: RunConfig) -> int:
    cohort = _cohort(cfg)
    batch = prepare_batch(cohort, cfg)
    _, mask = numeric_tensor(cohort, cohort_score_stats(cohort, cfg.weights()))
    out = Path(cfg.out_dir)
    vectors = {(sid, p + 1): batch.text[n, p] for n, sid in enumerate(batch.ids) for p in range(cfg.periods)}
    write_embeddings(out / "embeddings.csv", vectors)
    body = {"preprocess": {"students": len(cohort), "periods": cfg.periods, "text_dim": batch.text.shape[2],
                           "numeric_dim": batch.numeric.shape[2], "imputed_cells": int(mask.sum()),
                           "embeddings": str(out / "embeddings.csv")}}
    return _emit("preprocess", cfg, body)


def cmd_train(ns, cfg: RunConfig) -> int:
    batch = prepare_batch(_cohort(cfg), cfg)
    if batch.labels is None:
        raise DataError("training needs a fully labeled cohort")
    tr, te = split_indices(batch.labels, cfg.test_fraction, cfg.seed)
    fit = fit_dmsw(batch.take(tr), cfg)
    test = batch.take(te)
    metrics = classification_metrics(predict_batch(fit.model, test)[1], test.labels)
    model_path = Path(cfg.model_path or Path(cfg.out_dir) / f"model_seed{cfg.seed}_{cfg.config_hash()}.json")
    save_model(fit.model, model_path, cfg.to_dict())
    print(model_path)
    hist = fit.history.as_dict()
    body = {"model_path": str(model_path), "metrics": {"dmsw": metrics.as_dict()},
            "training": {k: (v[-1] if v else None) for k, v in hist.items()},
            "autoencoder_mse": fit.ae_curve[-1] if fit.ae_curve else None}
    return _emit("train", cfg, body)


def _load(cfg: RunConfig):
    if not cfg.model_path:
        raise UsageError("model_path is required (--model_path FILE)")
    model, _ = load_model(cfg.model_path)
    if model.periods != cfg.periods:
        raise DataError(f"model expects {model.periods} periods, config has {cfg.periods}")
    return model


def cmd_predict(ns, cfg: RunConfig) -> int:
    model = _load(cfg)
    batch = prepare_batch(_cohort(cfg), cfg)
    probs, labels = predict_batch(model, batch)
    rows = [{"student_id": sid, "probability": float(p), "at_risk": int(l)}
            for sid, p, l in zip(batch.ids, probs, labels)]
    return _emit("predict", cfg, {"model_path": cfg.model_path, "predictions": rows})


def cmd_evaluate(ns, cfg: RunConfig) -> int:
    return _emit("evaluate", cfg, evaluate(_cohort(cfg), cfg).as_dict())


def cmd_ols(ns, cfg: RunConfig) -> int:
    batch = prepare_batch(_cohort(cfg), cfg)
    if batch.labels is None:
        raise DataError("OLS needs a fully labeled cohort")
    if cfg.model_path:
        model = _load(cfg)
    else:
        tr, _ = split_indices(batch.labels, cfg.test_fraction, cfg.seed)
        model = fit_dmsw(batch.take(tr), cfg).model
    F = extract_model_features(model, batch)
    write_features(Path(cfg.out_dir) / "features.csv", batch.ids, batch.labels, F, model.index_map)
    return _emit("ols", cfg, {"ols": grouped_ols_report(F, model.index_map, batch.labels).as_dict()})


def cmd_stats(ns, cfg: RunConfig) -> int:
    rules = default_rules(cfg.rule_spike, cfg.rule_decline, cfg.rule_width)
    return _emit("stats", cfg, {"stats": cohort_stats(_cohort(cfg), rules).as_dict()})


def cmd_ablate(ns, cfg: RunConfig) -> int:
    return _emit("ablate", cfg, {"ablation": run_ablation(_cohort(cfg), cfg=cfg).as_dict()})


def cmd_gradcheck(ns, cfg: RunConfig) -> int:
    res = run_gradcheck(cfg, cfg.seed)
    worst = res.pop("worst")
    res["worst_param"] = None if worst is None else f"{worst[0]}{list(worst[1])}"
    res["tolerance"] = GRADCHECK_TOL
    res["passed"] = res["max_rel_error"] <= GRADCHECK_TOL
    print(f"max relative error {res['max_rel_error']:.3e} over {res['checked']} coordinates "
          f"({res['skipped']} skipped near kinks)")
    _emit("gradcheck", cfg, {"gradcheck": res})
    return EXIT_OK if res["passed"] else EXIT_NUMERIC


COMMANDS = {
    "synth": (cmd_synth, "write a seeded synthetic cohort (three CSVs plus patterns.csv)"),
    "preprocess": (cmd_preprocess, "build per-period text vectors and write embeddings.csv"),
    "train": (cmd_train, "train on the training split, save a checkpoint, report test metrics"),
    "predict": (cmd_predict, "score every student of a cohort with a saved checkpoint"),
    "evaluate": (cmd_evaluate, "DMSW (configured lambda and lambda 0), logistic baselines and OLS"),
    "ols": (cmd_ols, "grouped OLS of the label on the sliding-window features"),
    "stats": (cmd_stats, "dropout rates under the behavior-pattern rules"),
    "ablate": (cmd_ablate, "placement x window-combo x lambda grid"),
    "gradcheck": (cmd_gradcheck, "finite-difference check of the training gradients"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dmsw", description="Dual-modal multiscale sliding-window dropout-risk pipeline.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        if name == "synth":
            p.add_argument("--n", type=int, default=1000, help="number of students (default: 1000)")
            p.add_argument("--dropout_rate", type=float, default=0.122, help="default: 0.122")
            p.add_argument("--out", required=True, help="output directory for the CSV files")
        _add_config_flags(p)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
        if ns.command is None:
            parser.print_usage(sys.stderr)
            raise UsageError("dmsw: error: a subcommand is required")
        cfg = _resolve_config(ns)
        return COMMANDS[ns.command][0](ns, cfg)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except (UsageError, ConfigError) as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, RankDeficientError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


cli_dispatch = main


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
