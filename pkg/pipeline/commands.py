"""
Pipeline commands: synth, train, restore and evaluate.

Each command takes a resolved ``RunConfig``, logs it with its digest, writes
its artifacts under ``out_dir`` and returns a short summary dictionary.
"""

import hashlib
import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from agents.bert_pin.checkpoint import load_checkpoint, save_checkpoint
from agents.bert_pin.selection import select_candidates
from agents.bert_pin.trainer import BertPinTrainer
from agents.naive.baselines import copy_prev_day, linear_interp
from core_numerics.errors import DataError
from evaluation.report import WindowRestoration, assemble_report, write_report
from load_data.dataset_io import PreparedDataset, read_dataset, write_dataset
from load_data.fleet import (
    aggregate_fleet,
    generate_synthetic_fleet,
    ingest_load_csv,
    ingest_temperature_csv,
    write_user_csvs,
)
from load_data.windows import MaskedWindow, apply_mask, dequantize, split_dataset, window_profiles
from pipeline.config import RunConfig

logger = logging.getLogger(__name__)

RESTORATION_COLUMNS = ["window_id", "pos", "truth_norm", "top1_norm", "top2_norm", "mask", "method", "e"]
PLOT_COLUMNS = ["window_id", "pos", "truth", "top1", "top2", "mask"]
BASELINES = {"linear_interp": linear_interp, "copy_prev_day": copy_prev_day}
TWO_CANDIDATE_METHODS = ("direct_top2", "iterative_top2")


def file_sha256(path: Union[str, Path]) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_meta(path: Union[str, Path], config: RunConfig, **extra) -> Path:
    """``<file>.meta.json`` next to an output file."""
    path = Path(path)
    meta = {"config_digest": config.digest(), "sha256": file_sha256(path), **extra}
    meta_path = path.with_name(path.name + ".meta.json")
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True), encoding="utf-8")
    return meta_path


def _log_config(command: str, config: RunConfig) -> None:
    logger.info("%s: resolved config (digest %s)\n%s", command, config.digest(), config.to_text())


def _split(dataset: PreparedDataset, which: str) -> List[MaskedWindow]:
    if which == "all":
        return list(dataset.windows)
    ids = dataset.meta.get(f"{which}_ids")
    if ids is None:
        raise DataError(f"dataset has no '{which}' split")
    by_id = {w.window_id: w for w in dataset.windows}
    return [by_id[i] for i in ids]


# -----------------------------------------------------------------------------
# synth
# -----------------------------------------------------------------------------


def cmd_synth(config: RunConfig) -> Dict[str, object]:
    """Generate (or ingest) a fleet, aggregate feeder profiles and write the prepared dataset."""
    _log_config("synth", config)
    seed = config["seed"]
    out_dir = config.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)

    if config["data.load_csv"]:
        users = ingest_load_csv([p.strip() for p in config["data.load_csv"].split(",")])
        temperature = ingest_temperature_csv(config["data.temp_csv"]) if config["data.temp_csv"] else None
        generator = {"source": "csv", "load_csv": config["data.load_csv"], "temp_csv": config["data.temp_csv"]}
    else:
        params = config.fleet_params()
        users, temperature = generate_synthetic_fleet(config["fleet.users"], config["fleet.days"], params, seed)
        generator = {"source": "synthetic", "users": config["fleet.users"], "days": config["fleet.days"], **params.to_dict()}
        if config["fleet.write_users"]:
            for written in write_user_csvs(users, temperature, out_dir / "users"):
                write_meta(written, config)

    draw = min(config["fleet.draw"], len(users))
    if draw < config["fleet.draw"]:
        logger.warning("Pool holds %d users; drawing all of them instead of %d", len(users), config["fleet.draw"])
    spec = config.mask_spec()
    rng = np.random.default_rng(seed)
    profiles, masked = [], []
    for pid in range(config["fleet.profiles"]):
        profile = aggregate_fleet(
            users, draw, seed=seed + pid, temperature=temperature,
            floor=config["fleet.floor"], profile_id=pid,
        )
        profiles.append(profile)
        windows = window_profiles(profile, config["window_len"], config["margin"], first_id=len(masked))
        masked += [apply_mask(w, spec, rng) for w in windows]
        logger.info("Profile %d: p_max %.1f kW, %d windows", pid, profile.p_max, len(windows))

    train, test = split_dataset(masked, config["split_ratio"], seed)
    meta = {
        "seed": seed,
        "generator": generator,
        "mask": spec.to_dict(),
        "draw": draw,
        "train_ids": sorted(w.window_id for w in train),
        "test_ids": sorted(w.window_id for w in test),
        "config_digest": config.digest(),
    }
    path = write_dataset(config.dataset_path, masked, profiles, config["margin"], meta)
    write_meta(path, config)

    print(f"📦 Dataset: {path}")
    print(f"🪟 Windows: {len(masked)} ({len(train)} train / {len(test)} test), {config['window_len']} points each")
    return {"dataset": str(path), "windows": len(masked), "train": len(train), "test": len(test)}


# -----------------------------------------------------------------------------
# train
# -----------------------------------------------------------------------------


def cmd_train(config: RunConfig) -> Dict[str, object]:
    """Fit the encoder on the prepared dataset; write checkpoint, history and report."""
    _log_config("train", config)
    dataset = read_dataset(config.dataset_path)
    model_config = config.model_config()
    if dataset.window_len != model_config.window_len:
        raise DataError(
            f"dataset windows have {dataset.window_len} points but window_len is {model_config.window_len}"
        )
    train_config = config.train_config()
    train_set, test_set = _split(dataset, "train"), _split(dataset, "test")

    trainer = BertPinTrainer(model_config, train_config, mask_spec=config.mask_spec())
    if train_config.epochs > 0:
        trainer.train(train_set, test_set)
    else:
        logger.info("epochs = 0: saving the initial parameters")

    ckpt = save_checkpoint(
        trainer.params, model_config, config.checkpoint_path, train_config,
        step=trainer.step, rng=trainer.rng, config_digest=config.digest(),
    )
    paths = trainer.save_progress(config.out_dir)
    write_meta(paths["history"], config)

    final = trainer.history[-1] if trainer.history else {}
    print("\n🎉 Training Completed!")
    print(f"📊 Epochs: {len(trainer.history)} | Steps: {trainer.step}")
    if final:
        print(f"📉 Final test loss: {final['test_loss']:.4f}")
        print(f"🎯 Final test MPE: {final['test_mpe']:.4f}")
    print(f"💾 Checkpoint saved as: {ckpt}")
    return {
        "checkpoint": str(ckpt),
        "epochs": len(trainer.history),
        "steps": trainer.step,
        "test_loss": final.get("test_loss"),
        "test_mpe": final.get("test_mpe"),
    }


# -----------------------------------------------------------------------------
# restore
# -----------------------------------------------------------------------------


def _restoration_frame(restorations: Sequence[WindowRestoration], method: str, e: Optional[float]) -> pd.DataFrame:
    frames = []
    for r in restorations:
        n = len(r.truth_norm)
        top2 = r.top2_norm if r.top2_norm is not None else r.top1_norm
        frames.append(pd.DataFrame({
            "window_id": np.full(n, r.window_id),
            "pos": np.arange(n),
            "truth_norm": r.truth_norm,
            "top1_norm": r.top1_norm,
            "top2_norm": top2,
            "mask": r.mask,
            "method": method,
            "e": e if e is not None else np.nan,
        }))
    return pd.concat(frames, ignore_index=True)


def _plot_frame(restorations: Sequence[WindowRestoration]) -> pd.DataFrame:
    frames = []
    for r in restorations:
        n = len(r.truth_norm)
        top2 = r.top2_norm if r.top2_norm is not None else r.top1_norm
        frames.append(pd.DataFrame({
            "window_id": np.full(n, r.window_id),
            "pos": np.arange(n),
            "truth": np.asarray(r.truth_norm) * r.p_max,
            "top1": np.asarray(r.top1_norm) * r.p_max,
            "top2": np.asarray(top2) * r.p_max,
            "mask": r.mask,
        }))
    return pd.concat(frames, ignore_index=True)


def restore_windows(
    windows: Sequence[MaskedWindow], dataset: PreparedDataset, config: RunConfig
) -> List[WindowRestoration]:
    method = config.restore_method()
    restorations = []
    if method in BASELINES:
        fill = BASELINES[method]
        for mw in windows:
            if method == "copy_prev_day":
                restored = fill(mw, *dataset.adjacent_loads(mw))
            else:
                restored = fill(mw)
            restorations.append(WindowRestoration(
                mw.window_id, mw.load, restored, mw.mask, dataset.p_max_of(mw), segments=mw.segments(),
            ))
        return restorations

    ckpt = load_checkpoint(config.checkpoint_path)
    model_config = ckpt.model_config
    if model_config.window_len != dataset.window_len:
        raise DataError(
            f"checkpoint expects {model_config.window_len}-point windows, dataset has {dataset.window_len}"
        )
    sel = config.selection_config()
    for mw in windows:
        cands = select_candidates(mw, ckpt.params, model_config, sel)
        top1 = dequantize(cands.top1_classes, model_config.classes)
        top2 = dequantize(cands.top2_classes, model_config.classes)
        restorations.append(WindowRestoration(
            mw.window_id, mw.load, top1, mw.mask, dataset.p_max_of(mw),
            top2_norm=top2 if method in TWO_CANDIDATE_METHODS else None,
            forks=cands.forks if method == "iterative_top2" else [],
            segments=mw.segments(),
        ))
    return restorations


def cmd_restore(config: RunConfig) -> Dict[str, object]:
    """Restore the masked windows, score them and write restoration, plot and metrics files."""
    _log_config("restore", config)
    method = config.restore_method()
    e = config["restore.e"] if method == "iterative_top2" else None
    dataset = read_dataset(config.dataset_path)
    windows = _split(dataset, config["restore.split"])
    if not windows:
        raise DataError(f"split '{config['restore.split']}' holds no windows")

    restorations = restore_windows(windows, dataset, config)
    out_dir = config.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    restoration_path = out_dir / f"restoration_{method}.csv"
    _restoration_frame(restorations, method, e).to_csv(restoration_path, index=False, float_format="%.17g")
    write_meta(restoration_path, config, method=method)
    plot_path = out_dir / f"plot_{method}.csv"
    _plot_frame(restorations).to_csv(plot_path, index=False, float_format="%.10g")
    write_meta(plot_path, config, method=method)

    report = assemble_report(restorations, config.digest(), method, e)
    metrics_path = write_report(report, out_dir / f"metrics_{method}.json")

    agg = report["aggregate"]
    print(f"\n🔧 Restored {len(restorations)} windows ({report['segments']} segments) with {method}")
    print("📏 " + " | ".join(f"{name.upper()}: {agg[name]:.4f}" for name in agg))
    if report.get("pocp") is not None:
        print(f"🔀 PoCP: {report['pocp']:.2f}%")
    print(f"📋 Metrics saved as: {metrics_path}")
    return {"restoration": str(restoration_path), "metrics": str(metrics_path), "aggregate": agg}


# -----------------------------------------------------------------------------
# evaluate
# -----------------------------------------------------------------------------


def read_restorations(path: Union[str, Path], dataset: PreparedDataset) -> List[WindowRestoration]:
    path = Path(path)
    try:
        frame = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DataError(f"cannot read restoration {path}: {exc}") from exc
    missing = set(RESTORATION_COLUMNS) - set(frame.columns)
    if missing:
        raise DataError(f"{path}: missing columns {sorted(missing)}")
    by_id = {w.window_id: w for w in dataset.windows}
    restorations = []
    for wid, group in frame.sort_values(["window_id", "pos"]).groupby("window_id", sort=True):
        if wid not in by_id:
            raise DataError(f"{path}: window {wid} is not in the dataset")
        two = group["method"].iloc[0] in TWO_CANDIDATE_METHODS
        restorations.append(WindowRestoration(
            int(wid),
            group["truth_norm"].to_numpy(np.float64),
            group["top1_norm"].to_numpy(np.float64),
            group["mask"].to_numpy(np.int8),
            dataset.p_max_of(by_id[wid]),
            top2_norm=group["top2_norm"].to_numpy(np.float64) if two else None,
            segments=by_id[wid].segments(),
        ))
    return restorations


def cmd_evaluate(config: RunConfig) -> Dict[str, object]:
    """Recompute metrics from restoration CSVs and compare them side by side."""
    _log_config("evaluate", config)
    dataset = read_dataset(config.dataset_path)
    if config["evaluate.inputs"]:
        inputs = [Path(p.strip()) for p in config["evaluate.inputs"].split(",")]
    else:
        inputs = [config.out_dir / f"restoration_{config.restore_method()}.csv"]

    rows = []
    for path in inputs:
        frame_method = pd.read_csv(path, usecols=["method", "e"], nrows=1) if path.exists() else None
        if frame_method is None or frame_method.empty:
            raise DataError(f"restoration file {path} is missing or empty")
        method = str(frame_method["method"].iloc[0])
        e_value = frame_method["e"].iloc[0]
        e = None if pd.isna(e_value) else float(e_value)
        report = assemble_report(read_restorations(path, dataset), config.digest(), method, e)
        write_report(report, path.with_name(path.stem + ".metrics.json"))
        rows.append({"input": str(path), "method": method, "e": e, **report["aggregate"], "pocp": report.get("pocp")})

    comparison = pd.DataFrame(rows)
    comparison_path = config.out_dir / "comparison.csv"
    comparison_path.parent.mkdir(parents=True, exist_ok=True)
    comparison.to_csv(comparison_path, index=False, float_format="%.10g")
    write_meta(comparison_path, config)

    print("\n📊 Restoration comparison")
    for row in rows:
        print(f"   {row['method']:<15} MPE {row['mpe']:.4f} | RMSE {row['rmse']:.4f} | "
              f"PKE {row['pke']:.4f} | VLE {row['vle']:.4f} | EGYE {row['egye']:.4f} | FCE {row['fce']:.4f}")
    return {"comparison": str(comparison_path), "rows": rows}
