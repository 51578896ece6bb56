"""
SleepMeta - Self-Supervised Meta-Learning for Sleep Scoring
--------------------------------------
eval_harness.py file for generalization evaluation
--------------------------------------
Seen/unseen subject splits, confusion matrices and macro-F1, cross-validation
folds, the experiment protocols and the table builders for their reports.
"""

import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from sklearn.metrics import confusion_matrix as sk_confusion_matrix

import meta_train
import sleepnet
from config import STAGE_NAMES
from errors import ConfigError, DataError
from logging_config import get_logger

logger = get_logger(__name__)

N_CLASSES = len(STAGE_NAMES)
PROTOCOLS = ("three_vs_five", "all_vs_all", "one_vs_all", "lambda_sweep")
ORDERING_MARGIN = 0.02


@dataclass
class EvalConfig:
    protocol: str = "three_vs_five"
    folds: int = 4
    fold_limit: Optional[int] = None
    seeds: List[int] = field(default_factory=lambda: [0])
    modes: List[str] = field(default_factory=lambda: ["S2MAML", "MAML", "SL"])
    train_datasets: Optional[List[str]] = None
    split_ratio: float = 0.75
    lambda_values: List[float] = field(default_factory=lambda: [1e-3, 5e-5])
    lambda_modes: List[str] = field(default_factory=lambda: ["S2MAML", "MAML"])
    one_vs_all_updates: int = 5000
    batch_size: int = 64

    def validate(self):
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"eval.protocol must be one of {PROTOCOLS}, got '{self.protocol}'")
        if self.folds < 2:
            raise ConfigError(f"eval.folds must be >= 2, got {self.folds}")
        if self.fold_limit is not None and not 1 <= self.fold_limit <= self.folds:
            raise ConfigError(f"eval.fold_limit must be between 1 and eval.folds ({self.folds})")
        if not self.seeds:
            raise ConfigError("eval.seeds must list at least one seed")
        if not 0.0 < self.split_ratio < 1.0:
            raise ConfigError(f"eval.split_ratio must be in (0, 1), got {self.split_ratio}")
        for mode in list(self.modes) + list(self.lambda_modes):
            if mode not in meta_train.MODES:
                raise ConfigError(f"eval mode '{mode}' is not one of {meta_train.MODES}")
        return self


# --------------------------------
# Splits
# --------------------------------


@dataclass
class DatasetSplit:
    dataset_id: str
    unseen_subjects: List[str]
    train_indices: np.ndarray
    eval_seen_indices: np.ndarray
    unseen_indices: np.ndarray

    def to_dict(self):
        return {
            "dataset_id": self.dataset_id,
            "unseen_subjects": list(self.unseen_subjects),
            "train_indices": self.train_indices.tolist(),
            "eval_seen_indices": self.eval_seen_indices.tolist(),
            "unseen_indices": self.unseen_indices.tolist(),
        }

    @classmethod
    def from_dict(cls, values):
        return cls(
            dataset_id=values["dataset_id"],
            unseen_subjects=list(values["unseen_subjects"]),
            train_indices=np.asarray(values["train_indices"], dtype=np.int64),
            eval_seen_indices=np.asarray(values["eval_seen_indices"], dtype=np.int64),
            unseen_indices=np.asarray(values["unseen_indices"], dtype=np.int64),
        )


@dataclass
class SplitPlan:
    splits: Dict[str, DatasetSplit] = field(default_factory=dict)
    seed: int = 0
    fold: int = 0

    def forbidden_keys(self):
        return {(d, s) for d, split in self.splits.items() for s in split.unseen_subjects}

    def to_dict(self):
        return {"seed": self.seed, "fold": self.fold, "splits": [s.to_dict() for s in self.splits.values()]}

    @classmethod
    def from_dict(cls, values):
        splits = [DatasetSplit.from_dict(v) for v in values.get("splits", [])]
        return cls({s.dataset_id: s for s in splits}, values.get("seed", 0), values.get("fold", 0))


def _round_half_up(value):
    return int(math.floor(value + 0.5))


def subject_split(dataset, ratio=0.75, rng=None, unseen=None):
    """Hold out subjects entirely, then split each seen recording 75/25 into train/eval-seen"""
    rng = rng if rng is not None else np.random.default_rng()
    subjects = dataset.subjects()
    if len(subjects) < 2:
        raise DataError(f"dataset '{dataset.dataset_id}' has {len(subjects)} subject(s); an unseen split needs >= 2")
    if unseen is None:
        n_unseen = min(max(_round_half_up(len(subjects) * (1.0 - ratio)), 1), len(subjects) - 1)
        unseen = sorted(rng.choice(subjects, size=n_unseen, replace=False).tolist())
    unseen = set(unseen)
    index = dataset.by_subject()

    train, eval_seen, held_out = [], [], []
    for subject in subjects:
        idx = index[subject]
        if subject in unseen:
            held_out.append(idx)
            continue
        recordings = dataset.recording_ids[idx]
        for rec in sorted(set(recordings.tolist())):
            rec_idx = rng.permutation(idx[recordings == rec])
            n_eval = _round_half_up(len(rec_idx) * (1.0 - ratio))
            eval_seen.append(rec_idx[:n_eval])
            train.append(rec_idx[n_eval:])

    def _cat(parts):
        return np.sort(np.concatenate(parts)).astype(np.int64) if parts else np.zeros(0, dtype=np.int64)

    return DatasetSplit(
        dataset_id=dataset.dataset_id,
        unseen_subjects=sorted(unseen),
        train_indices=_cat(train),
        eval_seen_indices=_cat(eval_seen),
        unseen_indices=_cat(held_out),
    )


def make_folds(subjects, k, rng):
    """k disjoint unseen-subject sets; every subject is unseen exactly once"""
    subjects = list(subjects)
    if k < 2:
        raise ConfigError(f"cross-validation needs k >= 2, got {k}")
    if len(subjects) < k:
        raise DataError(f"{len(subjects)} subjects cannot fill {k} folds")
    order = rng.permutation(len(subjects))
    return [sorted(subjects[i] for i in part) for part in np.array_split(order, k)]


# --------------------------------
# Metrics
# --------------------------------


def confusion_matrix(y_true, y_pred, n_classes=N_CLASSES):
    """Rows are truth, columns prediction"""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.size == 0:
        return np.zeros((n_classes, n_classes), dtype=np.int64)
    return sk_confusion_matrix(y_true, y_pred, labels=list(range(n_classes))).astype(np.int64)


def macro_f1(cm):
    """Macro F1 and per-class F1; every 0/0 counts as 0"""
    cm = np.asarray(cm, dtype=np.float64)
    tp = np.diag(cm)
    predicted = cm.sum(axis=0)
    actual = cm.sum(axis=1)
    precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)
    recall = np.divide(tp, actual, out=np.zeros_like(tp), where=actual > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
    return float(f1.mean()), f1


def evaluate(bundle, sample_set, batch_size=64):
    """Confusion matrix of the stage head on a SampleSet"""
    if len(sample_set) == 0:
        return confusion_matrix([], [])
    predictions = sleepnet.predict(bundle, sample_set.x, batch_size)
    return confusion_matrix(sample_set.y, predictions)


# --------------------------------
# Reports
# --------------------------------


@dataclass
class MetricsReport:
    """Per-fold metric records plus the protocol's summary tables"""

    protocol: str
    records: pd.DataFrame
    tables: Dict[str, pd.DataFrame] = field(default_factory=dict)

    def fold_means(self):
        keys = ["mode", "train", "inner_lr", "dataset", "split"]
        value_cols = ["mf1"] + [f"f1_{name}" for name in STAGE_NAMES]
        return self.records.groupby(keys, dropna=False)[value_cols].mean().reset_index()


def metric_record(protocol, mode, seed, fold, train_ids, inner_lr, dataset_id, split, cm):
    mf1, per_class = macro_f1(cm)
    row = {
        "protocol": protocol,
        "mode": mode,
        "seed": seed,
        "fold": fold,
        "train": "+".join(train_ids),
        "inner_lr": inner_lr,
        "dataset": dataset_id,
        "split": split,
        "mf1": mf1,
        "n": int(np.asarray(cm).sum()),
    }
    row.update({f"f1_{name}": float(v) for name, v in zip(STAGE_NAMES, per_class)})
    return row


@dataclass
class FoldContext:
    fold: int
    seed: int
    plan: SplitPlan


def cross_validate(run_fold, datasets, k=4, seeds=(0,), ratio=0.75, fold_limit=None):
    """Rotate the unseen-subject set over k folds for every seed.

    run_fold(FoldContext) returns metric records for that fold; the within-seen
    75/25 split is re-drawn per fold from the fold seed.
    """
    records = []
    for seed in seeds:
        rng = np.random.default_rng(seed)
        folds = {ds.dataset_id: make_folds(ds.subjects(), k, rng) for ds in datasets}
        for fold in range(fold_limit or k):
            fold_rng = np.random.default_rng([seed, fold])
            plan = SplitPlan(seed=seed, fold=fold)
            for ds in datasets:
                plan.splits[ds.dataset_id] = subject_split(ds, ratio, fold_rng, unseen=folds[ds.dataset_id][fold])
            logger.info(f"Fold {fold + 1}/{k} (seed {seed})")
            records.extend(run_fold(FoldContext(fold, seed, plan)))
    return pd.DataFrame(records)


def train_and_score(context, datasets, train_ids, mode, meta_cfg, encoder_config, batch_size=64, protocol="", progress=False):
    """Train one model on the train portions of train_ids and score every dataset"""
    by_id = {ds.dataset_id: ds for ds in datasets}
    plan = context.plan
    train_sets = [by_id[d].subset(plan.splits[d].train_indices) for d in train_ids]
    cfg = replace(meta_cfg, mode=mode, seed=int(context.seed * 1000 + context.fold))
    bundle, _ = meta_train.train(
        train_sets,
        cfg,
        encoder_config=encoder_config,
        forbidden=plan.forbidden_keys(),
        progress=progress,
        log_every=0,
    )
    rows = []
    for ds in datasets:
        split = plan.splits[ds.dataset_id]
        if ds.dataset_id in train_ids:
            cm = evaluate(bundle, ds.subset(split.eval_seen_indices), batch_size)
            rows.append(metric_record(protocol, mode, context.seed, context.fold, train_ids, cfg.inner_lr, ds.dataset_id, "seen", cm))
        cm = evaluate(bundle, ds.subset(split.unseen_indices), batch_size)
        rows.append(metric_record(protocol, mode, context.seed, context.fold, train_ids, cfg.inner_lr, ds.dataset_id, "unseen", cm))
    return rows


def evaluate_checkpoint(bundle, datasets, plan=None, batch_size=64, mode="", seed=0):
    """Score a trained bundle per dataset and split.

    With a SplitPlan the eval-seen and unseen portions are scored; a dataset the
    plan does not cover is treated as an entirely new cohort (all unseen).
    """
    expected = (bundle.config.in_channels, bundle.config.input_length)
    rows = []
    for ds in datasets:
        if ds.x.shape[1:] != expected:
            raise DataError(f"dataset '{ds.dataset_id}' has sample shape {ds.x.shape[1:]}, the model expects {expected}")
        split = plan.splits.get(ds.dataset_id) if plan is not None else None
        if split is not None:
            parts = [("seen", split.eval_seen_indices), ("unseen", split.unseen_indices)]
        else:
            parts = [("unseen", np.arange(len(ds)))]
        for name, indices in parts:
            cm = evaluate(bundle, ds.subset(indices), batch_size)
            rows.append(metric_record("eval", mode, seed, 0, [], float("nan"), ds.dataset_id, name, cm))
    records = pd.DataFrame(rows)
    table = records.pivot_table(index="split", columns="dataset", values="mf1", aggfunc="mean")
    table["Avg"] = table.mean(axis=1)
    logger.info(f"Evaluated {len(datasets)} datasets: mean MF1 {records['mf1'].mean():.4f}")
    return MetricsReport("eval", records, {"eval": table})


# --------------------------------
# Table builders
# --------------------------------


def _mean_mf1(means, mode, dataset_id, split, train=None, inner_lr=None):
    rows = means[(means["mode"] == mode) & (means["dataset"] == dataset_id) & (means["split"] == split)]
    if train is not None:
        rows = rows[rows["train"] == train]
    if inner_lr is not None:
        rows = rows[np.isclose(rows["inner_lr"], inner_lr)]
    return float(rows["mf1"].mean()) if len(rows) else float("nan")


def three_vs_five_table(records, train_ids, test_ids, modes):
    """Columns: seen per train set, Avg(S), unseen per train set, Avg(U1), held-out sets, Avg(U2), Avg(U)"""
    means = MetricsReport("three_vs_five", records).fold_means()
    held_out = [d for d in test_ids if d not in train_ids]
    rows = []
    for mode in modes:
        row = {"mode": mode}
        seen = [_mean_mf1(means, mode, d, "seen") for d in train_ids]
        unseen_train = [_mean_mf1(means, mode, d, "unseen") for d in train_ids]
        unseen_held = [_mean_mf1(means, mode, d, "unseen") for d in held_out]
        row.update({f"{d}(S)": v for d, v in zip(train_ids, seen)})
        row["Avg(S)"] = float(np.mean(seen))
        row.update({f"{d}(U)": v for d, v in zip(train_ids, unseen_train)})
        row["Avg(U1)"] = float(np.mean(unseen_train))
        row.update({f"{d}(U)": v for d, v in zip(held_out, unseen_held)})
        row["Avg(U2)"] = float(np.mean(unseen_held)) if unseen_held else float("nan")
        row["Avg(U)"] = float(np.mean(unseen_train + unseen_held))
        rows.append(row)
    return pd.DataFrame(rows).set_index("mode")


def all_vs_all_table(records, dataset_ids, modes):
    """One row per (mode, split), one column per dataset plus Avg"""
    means = MetricsReport("all_vs_all", records).fold_means()
    rows = []
    for mode in modes:
        for split in ("seen", "unseen"):
            values = [_mean_mf1(means, mode, d, split) for d in dataset_ids]
            row = {"mode": mode, "split": split}
            row.update(dict(zip(dataset_ids, values)))
            row["Avg"] = float(np.mean(values))
            rows.append(row)
    return pd.DataFrame(rows).set_index(["mode", "split"])


def one_vs_all_table(records, dataset_ids, modes):
    """Long-form train x test x mode MF1 matrix on unseen subjects"""
    means = MetricsReport("one_vs_all", records).fold_means()
    rows = []
    for mode in modes:
        for train_id in dataset_ids:
            row = {"mode": mode, "train": train_id}
            for test_id in dataset_ids:
                row[test_id] = _mean_mf1(means, mode, test_id, "unseen", train=train_id)
            rows.append(row)
    return pd.DataFrame(rows).set_index(["mode", "train"])


def lambda_sweep_tables(records, train_ids, test_ids, modes, lambda_values):
    """Seen and unseen tables with one row per (mode, inner learning rate)"""
    means = MetricsReport("lambda_sweep", records).fold_means()
    seen_rows, unseen_rows = [], []
    for mode in modes:
        for lam in lambda_values:
            seen = {d: _mean_mf1(means, mode, d, "seen", inner_lr=lam) for d in train_ids}
            unseen = {d: _mean_mf1(means, mode, d, "unseen", inner_lr=lam) for d in test_ids}
            seen_rows.append({"mode": mode, "inner_lr": lam, **seen, "Avg": float(np.mean(list(seen.values())))})
            unseen_rows.append({"mode": mode, "inner_lr": lam, **unseen, "Avg": float(np.mean(list(unseen.values())))})
    return (
        pd.DataFrame(seen_rows).set_index(["mode", "inner_lr"]),
        pd.DataFrame(unseen_rows).set_index(["mode", "inner_lr"]),
    )


# --------------------------------
# Experiment protocols
# --------------------------------


def _check_roster(protocol, datasets, train_ids):
    ids = [ds.dataset_id for ds in datasets]
    if len(set(ids)) != len(ids):
        raise ConfigError(f"{protocol}: duplicate dataset ids in roster {ids}")
    if protocol in ("three_vs_five", "one_vs_all", "lambda_sweep") and len(ids) < 5:
        raise ConfigError(f"{protocol} needs at least 5 datasets, roster has {len(ids)}: {ids}")
    if not ids:
        raise ConfigError(f"{protocol}: empty dataset roster")
    if train_ids is not None:
        unknown = [d for d in train_ids if d not in ids]
        if unknown:
            raise ConfigError(f"{protocol}: training datasets {unknown} not in roster {ids}")
        if protocol in ("three_vs_five", "lambda_sweep") and len(train_ids) != 3:
            raise ConfigError(f"{protocol} trains on exactly 3 datasets, got {train_ids}")


def run_experiment(protocol, datasets, cfg=None, meta_cfg=None, encoder_config=None, progress=False):
    """Run a protocol for every mode and return its MetricsReport"""
    cfg = replace(cfg or EvalConfig(), protocol=protocol).validate()
    meta_cfg = meta_cfg or meta_train.MetaConfig()
    datasets = list(datasets)
    _check_roster(protocol, datasets, cfg.train_datasets)
    ids = [ds.dataset_id for ds in datasets]
    train_ids = list(cfg.train_datasets or ids[:3])

    def cv(run_fold):
        return cross_validate(run_fold, datasets, cfg.folds, cfg.seeds, cfg.split_ratio, cfg.fold_limit)

    def score(context, trained_on, mode, mcfg):
        return train_and_score(context, datasets, trained_on, mode, mcfg, encoder_config, cfg.batch_size, protocol, progress)

    if protocol == "three_vs_five":
        records = cv(lambda ctx: [r for mode in cfg.modes for r in score(ctx, train_ids, mode, meta_cfg)])
    elif protocol == "all_vs_all":
        records = cv(lambda ctx: [r for mode in cfg.modes for r in score(ctx, ids, mode, meta_cfg)])
    elif protocol == "one_vs_all":
        budget = replace(meta_cfg, max_updates=cfg.one_vs_all_updates)
        records = cv(lambda ctx: [r for mode in cfg.modes for d in ids for r in score(ctx, [d], mode, budget)])
    else:
        records = cv(
            lambda ctx: [
                r
                for lam in cfg.lambda_values
                for mode in cfg.lambda_modes
                for r in score(ctx, train_ids, mode, replace(meta_cfg, inner_lr=lam))
            ]
        )

    logger.info(f"Experiment {protocol}: {len(records)} metric records")
    return MetricsReport(protocol, records, build_tables(protocol, records, ids, train_ids, cfg))


def build_tables(protocol, records, ids, train_ids, cfg):
    """Summary tables of a protocol from its metric records"""
    if protocol == "three_vs_five":
        return {"three_vs_five": three_vs_five_table(records, train_ids, ids, cfg.modes)}
    if protocol == "all_vs_all":
        return {"all_vs_all": all_vs_all_table(records, ids, cfg.modes)}
    if protocol == "one_vs_all":
        return {"one_vs_all": one_vs_all_table(records, ids, cfg.modes)}
    seen, unseen = lambda_sweep_tables(records, train_ids, ids, cfg.lambda_modes, cfg.lambda_values)
    return {"lambda_sweep_seen": seen, "lambda_sweep_unseen": unseen}


def merge_reports(reports, ids, cfg):
    """One report over the records of several single-seed runs of the same protocol"""
    reports = list(reports)
    protocol = reports[0].protocol
    records = pd.concat([r.records for r in reports], ignore_index=True)
    train_ids = list(cfg.train_datasets or ids[:3])
    return MetricsReport(protocol, records, build_tables(protocol, records, ids, train_ids, cfg))


def compare_generalization(reports_by_seed, margin=ORDERING_MARGIN):
    """Per-seed held-out-dataset MF1 of S2MAML vs SL, with the ordering verdict.

    Fails only when the S2MAML mean trails the SL mean by more than margin.
    """
    rows = []
    for seed, report in sorted(reports_by_seed.items()):
        table = report.tables["three_vs_five"]
        rows.append({"seed": seed, "S2MAML": float(table.loc["S2MAML", "Avg(U2)"]), "SL": float(table.loc["SL", "Avg(U2)"])})
    frame = pd.DataFrame(rows, columns=["seed", "S2MAML", "SL"])
    frame["difference"] = frame["S2MAML"] - frame["SL"]
    mean_gap = float(frame["difference"].mean()) if len(frame) else float("nan")
    passed = bool(len(frame)) and mean_gap >= -margin
    logger.info(f"Generalization ordering over {len(frame)} seeds: mean S2MAML - SL = {mean_gap:+.4f} ({'pass' if passed else 'fail'})")
    return frame, passed
