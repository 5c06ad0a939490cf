"""Grid of DMSW variants over fusion placement, window-size combos and the distinction weight."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from ..config import RunConfig
from ..pipeline import fit_dmsw, prepare_batch
from ..preprocess import split_indices
from ..records import Cohort
from ..train import predict_batch
from .metrics import MetricsReport, classification_metrics


def all_combos(sizes) -> list[tuple[int, ...]]:
    """Every nonempty subset, smaller subsets first."""
    sizes = sorted(set(int(a) for a in sizes))
    return [c for r in range(1, len(sizes) + 1) for c in combinations(sizes, r)]


def preset_combos(periods: int) -> dict[str, tuple[int, ...]]:
    return {"small": (1,), "medium": (3,), "large": (6 if periods >= 7 else periods - 1,)}


@dataclass
class AblationGrid:
    placements: tuple = ("post_fusion", "pre_fusion")
    combos: list = field(default_factory=lambda: all_combos((1, 3, 5)))
    lambdas: tuple = (0.0, 0.5)

    @classmethod
    def from_config(cls, cfg: RunConfig) -> "AblationGrid":
        return cls(tuple(cfg.ablation_placements), all_combos(cfg.ablation_sizes), tuple(cfg.ablation_lambdas))


@dataclass
class AblationCell:
    placement: str
    combo: tuple
    lam: float
    seed: int
    metrics: MetricsReport | None = None
    error: str | None = None

    def as_dict(self) -> dict:
        return {"placement": self.placement, "window_sizes": list(self.combo), "lambda": self.lam,
                "seed": self.seed, "metrics": self.metrics.as_dict() if self.metrics else None,
                "error": self.error}


@dataclass
class AblationTable:
    cells: list[AblationCell]
    test_size: int

    def _mean_f1(self, keep) -> float | None:
        vals = [c.metrics.f1 for c in self.cells if c.metrics is not None and keep(c)]
        return float(np.mean(vals)) if vals else None

    def combo_size_means(self) -> list[dict]:
        """Mean F1 per (placement, lambda, number of sizes in the combo)."""
        out = []
        keys = sorted({(c.placement, c.lam, len(c.combo)) for c in self.cells},
                      key=lambda k: (self._placement_order(k[0]), k[1], k[2]))
        for placement, lam, r in keys:
            f1 = self._mean_f1(lambda c: (c.placement, c.lam, len(c.combo)) == (placement, lam, r))
            out.append({"placement": placement, "lambda": lam, "combo_size": r, "mean_f1": f1})
        return out

    def placement_means(self) -> dict[str, float | None]:
        seen = list(dict.fromkeys(c.placement for c in self.cells))
        return {p: self._mean_f1(lambda c, p=p: c.placement == p) for p in seen}

    def _placement_order(self, p):
        return [c.placement for c in self.cells].index(p)

    def as_dict(self) -> dict:
        return {"test_size": self.test_size, "cells": [c.as_dict() for c in self.cells],
                "combo_size_means": self.combo_size_means(), "placement_means": self.placement_means()}


def cell_seed(master: int, index: int) -> int:
    return int(np.random.default_rng([master, index]).integers(2**31))


def run_ablation(cohort: Cohort, grid: AblationGrid | None = None, cfg: RunConfig | None = None) -> AblationTable:
    """Train one model per (placement, combo, lambda) cell on a shared split.

    The seed depends on the (placement, combo) position only, so rows that
    differ in lambda start from the same initial parameters. A failing cell
    records its error and the run continues.
    """
    cfg = cfg or RunConfig()
    grid = grid or AblationGrid.from_config(cfg)
    batch = prepare_batch(cohort, cfg)
    tr, te = split_indices(batch.labels, cfg.test_fraction, cfg.seed)
    train, test = batch.take(tr), batch.take(te)
    cells = []
    index = 0
    for placement in grid.placements:
        for combo in grid.combos:
            seed = cell_seed(cfg.seed, index)
            index += 1
            for lam in grid.lambdas:
                cell = AblationCell(placement, tuple(combo), float(lam), seed)
                try:
                    run = cfg.replace(placement=placement, window_sizes=list(combo), **{"lambda": float(lam)})
                    model = fit_dmsw(train, run, seed=seed).model
                    _, pred = predict_batch(model, test)
                    cell.metrics = classification_metrics(pred, test.labels)
                except (ValueError, ArithmeticError) as exc:
                    cell.error = f"{type(exc).__name__}: {exc}"
                cells.append(cell)
    return AblationTable(cells, len(te))
