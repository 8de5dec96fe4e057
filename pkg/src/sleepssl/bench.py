"""Split planners and orchestration for the three label-efficiency
evaluation scenarios, with repetition, aggregation, and results tables."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .datastore import Dataset, stream_windows
from .net import EpochEncoder, NetConfig
from .objectives import Hyperparams, default_hyperparams
from .sigproc import NormStats
from .trainer import (EpochSource, FinetuneConfig, evaluate, finetune,
                      fit_pool_norm, pretrain)

SUPERVISED = "supervised"


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass
class SplitPlan:
    """One reproducible assignment of recordings to roles.

    Roles are disjoint by recording id; splits are always recording-wise.
    """

    scenario: int
    fold: int
    rep_n: int
    rep_m: int
    label_fraction: float
    unlabeled: list[str]
    train: list[str]
    val: list[str]
    test: list[str]
    seed: int

    @property
    def plan_id(self) -> str:
        return (f"s{self.scenario}-n{self.rep_n}-m{self.rep_m}-f{self.fold}"
                f"-p{self.label_fraction:g}-seed{self.seed}")

    def check(self) -> None:
        roles = [self.unlabeled, self.train, self.val, self.test]
        flat = [rid for role in roles for rid in role]
        if len(flat) != len(set(flat)):
            raise ValueError(f"plan {self.plan_id}: roles share recording ids")


def _folds(ids: list[str], k: int, rng: np.random.Generator) -> list[list[str]]:
    order = list(np.array(ids)[rng.permutation(len(ids))])
    return [list(chunk) for chunk in np.array_split(np.array(order), k)]


def _train_val(labeled: list[str], rng: np.random.Generator) -> tuple[list[str], list[str]]:
    """85/15 recording-wise split; a single-recording pool doubles as its
    own validation set."""
    if len(labeled) == 1:
        return list(labeled), list(labeled)
    order = list(np.array(labeled)[rng.permutation(len(labeled))])
    n_val = max(1, _round_half_up(0.15 * len(order)))
    n_val = min(n_val, len(order) - 1)
    return order[n_val:], order[:n_val]


def _labeled_subset(pool: list[str], fraction: float, rng: np.random.Generator) -> list[str]:
    """First k of a fixed permutation, so smaller fractions nest in larger
    ones for the same (seed, repetition, fold)."""
    if not 0 < fraction <= 1:
        raise ValueError(f"label fraction must be in (0, 1], got {fraction}")
    k = _round_half_up(fraction * len(pool))
    if k < 1:
        raise ValueError(
            f"fraction {fraction} of {len(pool)} recordings selects none; "
            f"minimum usable fraction is {1 / len(pool):.4f}"
        )
    order = list(np.array(pool)[rng.permutation(len(pool))])
    return order[:k]


def plan_scenario1(ids: list[str], label_fraction: float, n_reps: int,
                   seed: int, n_folds: int = 10) -> list[SplitPlan]:
    """N repetitions of recording-wise 10-fold CV; within each fold's
    training side a random label_fraction of recordings is kept, split 85/15
    into train/validation."""
    if len(ids) < n_folds:
        raise ValueError(f"need at least {n_folds} recordings, got {len(ids)}")
    plans = []
    for n in range(n_reps):
        fold_rng = np.random.default_rng([seed, 1, n])
        folds = _folds(ids, n_folds, fold_rng)
        for f, test in enumerate(folds):
            rest = [rid for rid in ids if rid not in set(test)]
            sub_rng = np.random.default_rng([seed, 1, n, f])
            labeled = _labeled_subset(rest, label_fraction, sub_rng)
            train, val = _train_val(labeled, np.random.default_rng([seed, 1, n, f, 1]))
            plan = SplitPlan(scenario=1, fold=f, rep_n=n, rep_m=0,
                             label_fraction=label_fraction, unlabeled=[],
                             train=train, val=val, test=test, seed=seed)
            plan.check()
            plans.append(plan)
    return plans


def plan_scenario2(ids: list[str], label_fraction: float, n_reps: int,
                   m_reps: int, seed: int) -> list[SplitPlan]:
    """N random draws of a constant 50% test set; M labeled-training draws
    each from the remaining half. The test ids do not depend on the fraction
    or on m, so they stay fixed across a whole repetition."""
    plans = []
    for n in range(n_reps):
        test_rng = np.random.default_rng([seed, 2, n])
        order = list(np.array(ids)[test_rng.permutation(len(ids))])
        n_test = len(ids) // 2
        test, rest = order[:n_test], order[n_test:]
        for m in range(m_reps):
            sub_rng = np.random.default_rng([seed, 2, n, m])
            labeled = _labeled_subset(rest, label_fraction, sub_rng)
            train, val = _train_val(labeled, np.random.default_rng([seed, 2, n, m, 1]))
            plan = SplitPlan(scenario=2, fold=0, rep_n=n, rep_m=m,
                             label_fraction=label_fraction, unlabeled=[],
                             train=train, val=val, test=test, seed=seed)
            plan.check()
            plans.append(plan)
    return plans


def plan_scenario3(ids: list[str], unlabeled_fraction: float, n_reps: int,
                   seed: int, n_folds: int = 10) -> list[SplitPlan]:
    """Disjoint unlabeled (SSL) and labeled pools within one dataset; the
    labeled pool runs recording-wise 10-fold CV. Labeled count rounds half
    up, e.g. a 92.5/7.5 split of 128 ids gives (118, 10)."""
    if not 0 < unlabeled_fraction < 1:
        raise ValueError(f"unlabeled fraction must be in (0, 1), got {unlabeled_fraction}")
    n_labeled = _round_half_up((1 - unlabeled_fraction) * len(ids))
    if n_labeled < n_folds:
        raise ValueError(
            f"labeled pool of {n_labeled} recordings supports no {n_folds}-fold CV"
        )
    plans = []
    for n in range(n_reps):
        rng = np.random.default_rng([seed, 3, n])
        order = list(np.array(ids)[rng.permutation(len(ids))])
        labeled_pool, unlabeled = order[:n_labeled], order[n_labeled:]
        folds = _folds(labeled_pool, n_folds, np.random.default_rng([seed, 3, n, 1]))
        for f, test in enumerate(folds):
            rest = [rid for rid in labeled_pool if rid not in set(test)]
            train, val = _train_val(rest, np.random.default_rng([seed, 3, n, f, 2]))
            plan = SplitPlan(scenario=3, fold=f, rep_n=n, rep_m=0,
                             label_fraction=1 - unlabeled_fraction,
                             unlabeled=unlabeled, train=train, val=val,
                             test=test, seed=seed)
            plan.check()
            plans.append(plan)
    return plans


@dataclass
class CellResult:
    method: str
    fraction: float
    accuracies: list[float] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies)) if self.accuracies else float("nan")

    @property
    def std(self) -> float:
        return float(np.std(self.accuracies)) if self.accuracies else float("nan")

    @property
    def valid(self) -> bool:
        return bool(self.accuracies) and not self.errors


@dataclass
class ResultsTable:
    """Rows are methods (supervised baseline plus SSL variants); columns are
    label fractions; cells hold mean and std accuracy over repetitions."""

    scenario: int
    methods: list[str]
    fractions: list[float]
    cells: dict[tuple[str, float], CellResult]
    runs: list[dict] = field(default_factory=list)

    def cell(self, method: str, fraction: float) -> CellResult:
        return self.cells[(method, fraction)]

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "methods": self.methods,
            "fractions": self.fractions,
            "cells": [
                {"method": m, "fraction": f, "mean": c.mean, "std": c.std,
                 "accuracies": c.accuracies, "errors": c.errors}
                for (m, f), c in self.cells.items()
            ],
            "runs": self.runs,
        }


def run_scenario(dataset: Dataset, plans: list[SplitPlan], methods: list[str],
                 net_config: NetConfig, pretrain_dataset: Dataset | None = None,
                 hyper_overrides: dict[str, Hyperparams] | None = None,
                 finetune_config: FinetuneConfig | None = None,
                 pretrain_steps_per_epoch: int | None = None,
                 seed: int = 0) -> ResultsTable:
    """Execute pretrain (unless supervised) + finetune + evaluate for every
    plan and aggregate a results table.

    For scenarios 1 and 2 the SSL pool is the external ``pretrain_dataset``
    (pre-trained once per method and reused). Scenario 3 pretrains per plan
    on that plan's unlabeled recordings. Sub-run failures mark the cell
    invalid instead of being dropped silently.
    """
    scenario = plans[0].scenario
    if any(p.scenario != scenario for p in plans):
        raise ValueError("all plans must belong to one scenario")
    hyper_overrides = hyper_overrides or {}
    fractions = sorted({p.label_fraction for p in plans})
    cells = {(m, f): CellResult(m, f) for m in methods for f in fractions}
    table = ResultsTable(scenario=scenario, methods=list(methods),
                         fractions=fractions, cells=cells)

    # external pretraining is independent of the split plan: do it once
    external_states: dict[str, dict] = {}
    if pretrain_dataset is not None:
        pool = [(rid, pos) for rid in pretrain_dataset.recording_ids
                for pos, _ in pretrain_dataset.epoch_index(rid)]
        stats = fit_pool_norm(pretrain_dataset, pool)
        source = EpochSource(pretrain_dataset, pool, stats)
        for method in methods:
            if method == SUPERVISED:
                continue
            hyper = hyper_overrides.get(method, default_hyperparams(method))
            state, _ = pretrain(method, source, net_config, hyper, seed=seed,
                                max_steps_per_epoch=pretrain_steps_per_epoch)
            external_states[method] = state

    for plan in plans:
        train_w = stream_windows(dataset, net_config.window, plan.train)
        val_w = stream_windows(dataset, net_config.window, plan.val)
        test_w = stream_windows(dataset, net_config.window, plan.test)
        for method in methods:
            cell = cells[(method, plan.label_fraction)]
            try:
                encoder_init = None
                if method != SUPERVISED:
                    if method in external_states:
                        encoder_init = external_states[method]
                    else:
                        if not plan.unlabeled:
                            raise ValueError(
                                f"plan {plan.plan_id} has no unlabeled pool and no "
                                f"external pretraining dataset was given"
                            )
                        pool = [(rid, pos) for rid in plan.unlabeled
                                for pos, _ in dataset.epoch_index(rid)]
                        stats = fit_pool_norm(dataset, pool)
                        source = EpochSource(dataset, pool, stats)
                        hyper = hyper_overrides.get(method, default_hyperparams(method))
                        encoder_init, _ = pretrain(
                            method, source, net_config, hyper, seed=seed,
                            max_steps_per_epoch=pretrain_steps_per_epoch)
                result = finetune(dataset, train_w, val_w, net_config,
                                  encoder_init=encoder_init,
                                  config=finetune_config, seed=seed)
                report = evaluate(result.model, dataset, test_w, result.stats)
                cell.accuracies.append(report.accuracy)
                table.runs.append({
                    "plan": plan.plan_id, "method": method,
                    "fraction": plan.label_fraction,
                    "accuracy": report.accuracy,
                    "best_val_accuracy": result.best_val_accuracy,
                })
            except Exception as exc:  # record, do not drop
                cell.errors.append(f"{plan.plan_id}: {exc}")
    return table


def export_embeddings(encoder: EpochEncoder, dataset: Dataset,
                      stats: NormStats, rec_ids: list[str] | None = None,
                      first_k: int | None = None) -> list[dict]:
    """Rows of (epoch id, feature vector, optional stage label) for external
    projection tools."""
    ids = rec_ids if rec_ids is not None else dataset.recording_ids
    if first_k is not None:
        ids = ids[:first_k]
    encoder.eval()
    rows = []
    from .datastore import epoch_array
    with torch.no_grad():
        for rid in ids:
            for pos, label in dataset.epoch_index(rid):
                x = epoch_array(dataset, rid, pos)
                x = (x - stats.mean[:, None]) / stats.std[:, None]
                h = encoder(torch.as_tensor(x[None], dtype=torch.float32))[0].numpy()
                row = {"epoch_id": f"{rid}:{pos}", "features": h.tolist()}
                if label is not None:
                    row["label"] = int(label)
                rows.append(row)
    return rows


def write_embeddings_csv(rows: list[dict], path: str | Path) -> None:
    if not rows:
        raise ValueError("no embedding rows to write")
    dim = len(rows[0]["features"])
    has_labels = "label" in rows[0]
    header = ["epoch_id"] + [f"f{i}" for i in range(dim)] + (["label"] if has_labels else [])
    lines = [",".join(header)]
    for row in rows:
        cells = [row["epoch_id"]] + [f"{v:.6f}" for v in row["features"]]
        if has_labels:
            cells.append(str(row["label"]))
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")
