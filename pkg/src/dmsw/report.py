"""Run reports: one JSON document plus a plain-text rendering, named by seed and config hash."""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .config import RunConfig


def _clean(obj):
    """JSON-safe copy: numpy scalars become Python numbers, non-finite floats become null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def report_stem(kind: str, cfg: RunConfig) -> str:
    return f"{kind}_seed{cfg.seed}_{cfg.config_hash()}"


def build_document(kind: str, cfg: RunConfig, body: dict) -> dict:
    return _clean({"report": kind, "seed": cfg.seed, "config_hash": cfg.config_hash(),
                   "config": cfg.to_dict(), **body})


def _fmt(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.4g}"
    if isinstance(v, (list, tuple)):
        return ",".join(str(x) for x in v)
    return str(v)


def render_table(headers: list[str], rows: list[list]) -> str:
    cells = [[_fmt(v) for v in r] for r in rows]
    widths = [max([len(h)] + [len(r[i]) for r in cells]) for i, h in enumerate(headers)]
    line = lambda vals: "  ".join(v.ljust(w) for v, w in zip(vals, widths)).rstrip()
    out = [line(headers), line(["-" * w for w in widths])]
    out.extend(line(r) for r in cells)
    return "\n".join(out)


def render_text(doc: dict) -> str:
    """Human-readable view of a report document: config echo first, then every table found."""
    parts = [f"# {doc['report']} report  seed={doc['seed']}  config={doc['config_hash']}", ""]
    parts.append(render_table(["key", "value"], [[k, v] for k, v in doc["config"].items()]))
    metrics = doc.get("metrics")
    if metrics:
        names = ["accuracy", "precision", "recall", "f1", "tp", "fp", "tn", "fn"]
        parts += ["", "## metrics", render_table(["model"] + names,
                                                 [[m] + [r[n] for n in names] for m, r in metrics.items()])]
    ols = doc.get("ols")
    if ols:
        fit = ols["fit"]
        parts += ["", "## ols",
                  f"n={fit['n']} k={fit['k']} R2={_fmt(fit['r_squared'])} adjR2={_fmt(fit['adj_r_squared'])} "
                  f"F={_fmt(fit['f_statistic'])} p(F)={_fmt(fit['f_p_value'])} "
                  f"dropped={_fmt(ols['dropped_coordinates']) or '-'}",
                  render_table(["group", "members", "coef", "std_err", "p"],
                               [[g["group"], g["coordinates"], g["mean_coef"], g["mean_std_err"], g["mean_p_value"]]
                                for g in ols["groups"]])]
    stats = doc.get("stats")
    if stats:
        parts += ["", "## cohort statistics",
                  f"labeled={stats['n_labeled']} excluded_unlabeled={stats['n_excluded_unlabeled']} "
                  f"base_rate={_fmt(stats['base_rate'])}",
                  render_table(["condition", "population", "dropouts", "rate", "change", "reference"],
                               [[r["condition"], r["population"], r["dropouts"], r["rate"], r["change"],
                                 r["reference"]] for r in stats["rows"]])]
        if stats["omitted"]:
            parts.append("omitted (no members): " + "; ".join(stats["omitted"]))
    ablation = doc.get("ablation")
    if ablation:
        parts += ["", "## ablation cells",
                  render_table(["placement", "sizes", "lambda", "f1", "accuracy", "error"],
                               [[c["placement"], c["window_sizes"], c["lambda"],
                                 c["metrics"]["f1"] if c["metrics"] else None,
                                 c["metrics"]["accuracy"] if c["metrics"] else None, c["error"]]
                                for c in ablation["cells"]]),
                  "", "## combo-size means",
                  render_table(["placement", "lambda", "combo_size", "mean_f1"],
                               [[r["placement"], r["lambda"], r["combo_size"], r["mean_f1"]]
                                for r in ablation["combo_size_means"]]),
                  "", "## placement means",
                  render_table(["placement", "mean_f1"], [[k, v] for k, v in ablation["placement_means"].items()])]
    gc = doc.get("gradcheck")
    if gc:
        parts += ["", "## gradient check", render_table(["key", "value"], [[k, v] for k, v in gc.items()])]
    predictions = doc.get("predictions")
    if predictions:
        parts += ["", "## predictions", render_table(["student_id", "probability", "at_risk"],
                                                     [[p["student_id"], p["probability"], p["at_risk"]]
                                                      for p in predictions])]
    return "\n".join(parts) + "\n"


def write_report(kind: str, cfg: RunConfig, body: dict, out_dir=None) -> tuple[Path, Path]:
    doc = build_document(kind, cfg, body)
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = report_stem(kind, cfg)
    jpath, tpath = out / f"{stem}.json", out / f"{stem}.txt"
    jpath.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    tpath.write_text(render_text(doc), encoding="utf-8")
    return jpath, tpath
