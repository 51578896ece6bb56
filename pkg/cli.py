"""
SleepMeta - Self-Supervised Meta-Learning for Sleep Scoring
--------------------------------------
cli.py file for the command line
--------------------------------------
Sub-commands: prep, synth, train, eval, experiment, gradcheck.
Exit codes: 0 success, 1 usage error, 2 data error, 3 internal invariant violation.
"""

import os
import sys

from config import DETERMINISTIC, THREAD_ENV_VARS

# Must run before numpy is imported anywhere
if DETERMINISTIC:
    for _var in THREAD_ENV_VARS:
        os.environ.setdefault(_var, "1")

import argparse
import json
import platform
from dataclasses import asdict, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import pandas as pd
import psutil
import yaml

import eval_harness
import meta_train
from checkpoint_manager import CheckpointManager
from config import APP_NAME, VERSION
from edf_io import load_recording
from errors import ConfigError, DataError, InvariantError, SleepMetaError
from logging_config import get_logger, setup_logging
from report_generator import write_report
from run_config import load_run_config, save_run_config
from signal_prep import preprocess_recordings, read_sample_cache, write_sample_cache
from sleepnet import gradient_suite, load_bundle, save_bundle
from synth import synth_generate, write_corpus

logger = get_logger(__name__)

GRADCHECK_TOLERANCE = 1e-5


class _Parser(argparse.ArgumentParser):
    """argparse with usage errors raised as ConfigError (exit 1)"""

    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


# --------------------------------
# Run bookkeeping
# --------------------------------


def host_snapshot():
    memory = psutil.virtual_memory()
    return {
        "platform": platform.platform(),
        "python": platform.python_version(),
        "cpu_count_logical": psutil.cpu_count(logical=True),
        "cpu_count_physical": psutil.cpu_count(logical=False),
        "memory_total_gb": round(memory.total / (1024 ** 3), 2),
    }


def write_manifest(out_dir, command, argv, cfg, extra=None):
    """manifest.yaml: everything needed to rerun this command"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "argv": list(argv),
        "version": VERSION,
        "seed": cfg.seed,
        "deterministic": DETERMINISTIC,
        "threads": {var: os.environ.get(var) for var in THREAD_ENV_VARS},
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "host": host_snapshot(),
        "config": cfg.to_dict(),
    }
    manifest.update(extra or {})
    path = out_dir / "manifest.yaml"
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(manifest, f, sort_keys=False)
    save_run_config(cfg, out_dir / "config.yaml")
    return manifest


def load_datasets(cfg, required=True):
    """SampleSets from the sample cache, in data.datasets order (all cached datasets by default)"""
    cache_dir = Path(cfg.data.cache_dir)
    if not cache_dir.is_dir():
        raise DataError(f"sample cache directory not found: {cache_dir}")
    ids = list(cfg.data.datasets) or sorted(p.name for p in cache_dir.iterdir() if (p / "samples.bin").is_file())
    if not ids and required:
        raise DataError(f"no sample caches in {cache_dir}; run 'prep' or 'synth' first")
    datasets = []
    for dataset_id in ids:
        ss = read_sample_cache(cache_dir / dataset_id)
        logger.info(f"Dataset {dataset_id}: {len(ss)} samples, {len(ss.subjects())} subjects")
        datasets.append(ss)
    return datasets


# --------------------------------
# Commands
# --------------------------------


def cmd_prep(cfg, args):
    """EDF recordings listed in data.index -> one sample cache per dataset"""
    if not cfg.data.index:
        raise ConfigError("prep needs data.index (a CSV listing dataset_id, edf and optional hypnogram columns)")
    index_path = Path(cfg.data.index)
    if not index_path.is_file():
        raise DataError(f"recording index not found: {index_path}")
    root = Path(cfg.data.root) if cfg.data.root else index_path.parent
    index = pd.read_csv(index_path, dtype=str)
    missing = [c for c in ("dataset_id", "edf") if c not in index.columns]
    if missing:
        raise DataError(f"{index_path}: missing columns {missing}")

    cache_dir = Path(cfg.data.cache_dir)
    usable = failed = 0
    for k, (dataset_id, rows) in enumerate(index.groupby("dataset_id", sort=True)):
        if cfg.data.datasets and dataset_id not in cfg.data.datasets:
            continue
        recordings = []
        for row in rows.to_dict("records"):
            hypnogram = row.get("hypnogram")
            try:
                recordings.append(
                    load_recording(
                        root / row["edf"],
                        root / hypnogram if pd.notna(hypnogram) and hypnogram else None,
                        channels=cfg.data.channels.get(dataset_id),
                        subject_id=row.get("subject_id") if pd.notna(row.get("subject_id")) else None,
                        dataset_id=dataset_id,
                        recording_id=row.get("recording_id") if pd.notna(row.get("recording_id")) else None,
                    )
                )
            except (DataError, OSError) as e:
                failed += 1
                logger.error(f"Skipping {row['edf']}: {e}")
        usable += len(recordings)
        if recordings:
            sample_set = preprocess_recordings(recordings, cfg.seed + k, cfg.prep, dataset_id)
            write_sample_cache(cache_dir / dataset_id, sample_set)
    if usable == 0:
        raise DataError(f"no usable recording in {index_path} ({failed} failed)")
    logger.info(f"Prep finished: {usable} recordings cached, {failed} skipped")
    return {"recordings": usable, "skipped": failed}


def cmd_synth(cfg, args):
    """Synthetic corpus -> EDF/CSV files and sample caches"""
    corpora = synth_generate(cfg.synth, np.random.default_rng(cfg.seed))
    if not args.skip_edf:
        write_corpus(Path(cfg.output.dir) / "corpus", corpora)
    cache_dir = Path(cfg.data.cache_dir)
    ids = cfg.synth.ids()
    for k, recordings in enumerate(corpora):
        sample_set = preprocess_recordings(recordings, cfg.seed + k, cfg.prep, ids[k])
        write_sample_cache(cache_dir / ids[k], sample_set)
    return {"datasets": ids[: len(corpora)], "cache_dir": str(cache_dir)}


def cmd_train(cfg, args):
    """Split every dataset, train on the train portions, save model, history and split plan"""
    out = Path(cfg.output.dir)
    meta_cfg = cfg.meta_for_run()
    if args.mode:
        meta_cfg = replace(meta_cfg, mode=args.mode)
    datasets = load_datasets(cfg)

    rng = np.random.default_rng(cfg.seed)
    plan = eval_harness.SplitPlan(seed=cfg.seed)
    for ds in datasets:
        plan.splits[ds.dataset_id] = eval_harness.subject_split(ds, cfg.eval.split_ratio, rng)
    (out / "split_plan.json").write_text(json.dumps(plan.to_dict()), encoding="utf-8")
    train_sets = [ds.subset(plan.splits[ds.dataset_id].train_indices) for ds in datasets]

    checkpoints = CheckpointManager(out / "checkpoints") if cfg.output.checkpoint_every else None
    bundle, history = meta_train.train(
        train_sets,
        meta_cfg,
        encoder_config=cfg.model,
        forbidden=plan.forbidden_keys(),
        checkpoints=checkpoints,
        checkpoint_every=cfg.output.checkpoint_every,
        log_every=cfg.output.log_every,
        progress=cfg.output.progress,
    )
    save_bundle(out / "model", bundle, metadata={"seed": meta_cfg.seed, "mode": meta_cfg.mode})
    history.write_jsonl(out / "history.jsonl")
    final = history.records[-1] if history.records else {}
    return {"mode": meta_cfg.mode, "iterations": len(history), "final_outer_loss": final.get("outer_loss")}


def cmd_eval(cfg, args):
    """Score a trained model on the cached datasets"""
    source = args.checkpoint or cfg.data.checkpoint
    if not source:
        raise ConfigError("eval needs --checkpoint or data.checkpoint")
    source = Path(source)
    model_dir = source / "model" if (source / "model").is_dir() else source
    if not (model_dir / "manifest.txt").is_file():
        raise DataError(f"no model checkpoint at {model_dir}")
    bundle, _, metadata = load_bundle(model_dir)

    plan = None
    plan_path = Path(args.split_plan) if args.split_plan else source / "split_plan.json"
    if plan_path.is_file():
        plan = eval_harness.SplitPlan.from_dict(json.loads(plan_path.read_text(encoding="utf-8")))
    elif args.split_plan:
        raise DataError(f"split plan not found: {plan_path}")
    else:
        logger.warning(f"No split plan next to {source}; every dataset is scored as unseen")

    datasets = load_datasets(cfg)
    report = eval_harness.evaluate_checkpoint(
        bundle, datasets, plan, cfg.eval.batch_size, mode=metadata.get("mode", ""), seed=metadata.get("seed", 0)
    )
    write_report(report, cfg.output.dir, {"seed": cfg.seed, "deterministic": DETERMINISTIC}, charts=cfg.output.charts)
    print(report.tables["eval"].to_string(float_format=lambda v: f"{v:.4f}"))
    return {"checkpoint": str(model_dir), "mean_mf1": float(report.records["mf1"].mean())}


def cmd_experiment(cfg, args):
    """Run one experiment protocol end to end and write its reports"""
    protocol = args.protocol
    eval_cfg = replace(cfg.eval, protocol=protocol)
    datasets = load_datasets(cfg)
    ids = [ds.dataset_id for ds in datasets]
    meta_cfg = cfg.meta_for_run()
    out = Path(cfg.output.dir)
    extra = {}

    if protocol == "three_vs_five" and len(eval_cfg.seeds) > 1:
        reports = {
            seed: eval_harness.run_experiment(protocol, datasets, replace(eval_cfg, seeds=[seed]), meta_cfg, cfg.model, cfg.output.progress)
            for seed in eval_cfg.seeds
        }
        report = eval_harness.merge_reports(reports.values(), ids, eval_cfg)
        comparison, passed = eval_harness.compare_generalization(reports)
        comparison.to_csv(out / "generalization.csv", index=False)
        if not passed:
            logger.warning("S2MAML trails SL on held-out datasets by more than the allowed margin")
        extra = {"generalization_passed": passed}
    else:
        report = eval_harness.run_experiment(protocol, datasets, eval_cfg, meta_cfg, cfg.model, cfg.output.progress)

    write_report(report, out, {"seeds": list(eval_cfg.seeds), "deterministic": DETERMINISTIC}, charts=cfg.output.charts)
    for name, table in report.tables.items():
        print(f"\n{name}\n{table.to_string(float_format=lambda v: f'{v:.4f}')}")
    return {"protocol": protocol, "records": len(report.records), **extra}


def cmd_gradcheck(cfg, args):
    """Finite-difference suite; fails when any check exceeds the tolerance"""
    records = gradient_suite(
        seeds=range(args.seeds),
        config=cfg.model if args.full_model else None,
        coords_per_tensor=args.coords,
    )
    frame = pd.DataFrame([asdict(r) for r in records])
    out = Path(cfg.output.dir)
    frame.to_csv(out / "gradcheck.csv", index=False)
    worst = float(frame["max_rel_error"].max()) if len(frame) else 0.0
    print(f"max relative error {worst:.3e} over {len(frame)} checks")
    if worst >= args.tolerance:
        failing = frame[frame["max_rel_error"] >= args.tolerance]
        raise InvariantError(
            f"gradient check failed: {len(failing)} checks above {args.tolerance:g} "
            f"(worst {failing.sort_values('max_rel_error').iloc[-1]['check']})"
        )
    return {"max_rel_error": worst, "checks": len(frame)}


COMMANDS = {
    "prep": cmd_prep,
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "experiment": cmd_experiment,
    "gradcheck": cmd_gradcheck,
}


# --------------------------------
# Entry point
# --------------------------------


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override a configuration value (repeatable)")
    common.add_argument("--seed", type=int, help="run seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--log-level", help="DEBUG, INFO, WARNING or ERROR")
    common.add_argument("--no-progress", action="store_true", help="disable progress bars")

    parser = _Parser(prog=APP_NAME, description="Self-supervised meta-learning for sleep scoring")
    parser.add_argument("--version", action="version", version=f"{APP_NAME} {VERSION}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("prep", parents=[common], help="EDF recordings -> sample caches")
    synth = sub.add_parser("synth", parents=[common], help="generate a synthetic corpus")
    synth.add_argument("--skip-edf", action="store_true", help="write only the sample caches")
    train = sub.add_parser("train", parents=[common], help="train one model")
    train.add_argument("--mode", choices=meta_train.MODES)
    evaluate = sub.add_parser("eval", parents=[common], help="score a trained model")
    evaluate.add_argument("--checkpoint", help="run directory or model checkpoint directory")
    evaluate.add_argument("--split-plan", help="split_plan.json written by train")
    experiment = sub.add_parser("experiment", parents=[common], help="run an experiment protocol")
    experiment.add_argument("protocol", choices=eval_harness.PROTOCOLS)
    gradcheck = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    gradcheck.add_argument("--seeds", type=int, default=20)
    gradcheck.add_argument("--coords", type=int, default=8, help="coordinates checked per tensor in the loss checks")
    gradcheck.add_argument("--tolerance", type=float, default=GRADCHECK_TOLERANCE)
    gradcheck.add_argument("--full-model", action="store_true", help="check the loss of the configured model")
    return parser


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    setup_logging(level=args.log_level)

    try:
        cfg = load_run_config(args.config, args.overrides, seed=args.seed, out=args.out)
        if args.no_progress:
            cfg.output.progress = False
        write_manifest(cfg.output.dir, args.command, argv, cfg)
        logger.info(f"{APP_NAME} {VERSION}: {args.command} (seed {cfg.seed}) -> {cfg.output.dir}")
        summary = COMMANDS[args.command](cfg, args)
        write_manifest(cfg.output.dir, args.command, argv, cfg, {"status": "ok", "summary": summary})
        return 0
    except SleepMetaError as e:
        logger.error(f"{args.command} failed: {e}")
        return e.exit_code
    except OSError as e:
        logger.error(f"{args.command} failed: {e}")
        return DataError.exit_code
    except Exception as e:
        logger.exception(f"{args.command} failed with an unexpected error: {e}")
        return InvariantError.exit_code


if __name__ == "__main__":
    sys.exit(main())
