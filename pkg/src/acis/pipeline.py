"""Filesystem-level operations behind the service endpoints and CLI verbs.

Each function takes paths plus options, writes its outputs atomically
under an output directory, and returns a JSON-ready dict describing what
was produced. Per-dataset work runs in a bounded worker pool; failures
either abort (default) or are collected per dataset (continue_on_error).
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import io as io_mod
from . import metrics, model as model_mod, prediction, report as report_mod
from . import summary as summary_mod, training
from .errors import AcisError, ConfigError

REGIONS_FILENAME = "regions.json"


@dataclass(frozen=True)
class ProjectConfig:
    """File-loadable defaults shared by all commands; flags override."""

    data_root: str = None
    manifest: str = None
    output_dir: str = "outputs"
    seed: int = 0
    model: model_mod.ModelConfig = field(default_factory=model_mod.ModelConfig)
    train: training.TrainConfig = field(default_factory=training.TrainConfig)
    predict: prediction.PredictOptions = field(default_factory=prediction.PredictOptions)

    @classmethod
    def from_file(cls, path) -> "ProjectConfig":
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        return cls(
            data_root=data.get("data_root"),
            manifest=data.get("manifest"),
            output_dir=data.get("output_dir", "outputs"),
            seed=data.get("seed", 0),
            model=model_mod.ModelConfig(**data.get("model", {})),
            train=training.TrainConfig(**data.get("train", {})),
            predict=prediction.PredictOptions(**data.get("predict", {})),
        )


def _select_entries(manifest_path, datasets=None, data_root=None, role=None):
    entries = io_mod.load_manifest(manifest_path, data_root=data_root)
    if role is not None:
        entries = [e for e in entries if e.role == role]
    if datasets:
        wanted = set(datasets)
        unknown = wanted - {e.name for e in entries}
        if unknown:
            raise ConfigError(f"unknown dataset names: {sorted(unknown)}")
        entries = [e for e in entries if e.name in wanted]
    if not entries:
        raise ConfigError(f"no datasets selected from {manifest_path}")
    return entries


def _run_per_dataset(entries, work, workers: int, continue_on_error: bool):
    """Run work(entry) for each entry in a bounded pool.

    Returns (results, errors) in manifest order; raises the first error
    unless continue_on_error.
    """
    results = []
    errors = []
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        futures = [(entry, pool.submit(work, entry)) for entry in entries]
        for entry, future in futures:
            try:
                results.append(future.result())
            except Exception as exc:
                if not continue_on_error:
                    raise
                errors.append({"dataset": entry.name, "error": str(exc)})
    return results, errors


def run_summarize(manifest_path, out_dir, kind: str = "mean", radius: int = 1,
                  datasets: Sequence = None, data_root=None,
                  continue_on_error: bool = False, workers: int = 1) -> dict:
    """Write one summary (.npy + sidecar) per dataset plus a stats JSON."""
    if kind not in summary_mod.SUMMARY_KINDS:
        raise ConfigError(
            f"kind must be one of {summary_mod.SUMMARY_KINDS}, got {kind!r}"
        )
    out_dir = Path(out_dir)
    entries = _select_entries(manifest_path, datasets, data_root)

    def work(entry):
        bundle = io_mod.load_bundle(entry)
        if kind in summary_mod.STAT_KINDS:
            summ = summary_mod.stat_summary(bundle.series, kind)
        else:
            metric = "correlation" if kind == "corr" else "cosine"
            summ = summary_mod.neighborhood_similarity_summary(
                bundle.series, metric, radius=radius
            )
        path = out_dir / f"{entry.name}_{kind}.npy"
        summary_mod.save_summary(summ, path)
        stats = io_mod.dataset_statistics(bundle)
        return {"dataset": entry.name, "summary_path": str(path), "stats": stats.to_dict()}

    results, errors = _run_per_dataset(entries, work, workers, continue_on_error)
    stats_path = out_dir / "summary_stats.json"
    io_mod.atomic_write_json(
        {"kind": kind, "datasets": [r["stats"] for r in results]}, stats_path
    )
    return {"kind": kind, "results": results, "errors": errors,
            "stats_path": str(stats_path)}


def run_train(manifest_path, out_dir, train_config: training.TrainConfig = None,
              model_config: model_mod.ModelConfig = None,
              datasets: Sequence = None, data_root=None) -> dict:
    """Train on every manifest dataset with the 'train' role; write the
    best checkpoint plus history as CSV and JSON."""
    train_config = train_config or training.TrainConfig()
    model_config = model_config or model_mod.ModelConfig()
    out_dir = Path(out_dir)
    entries = _select_entries(manifest_path, datasets, data_root, role="train")
    bundles = [io_mod.load_bundle(entry) for entry in entries]

    net = model_mod.build(model_config, seed=train_config.seed)
    checkpoint_path = out_dir / "checkpoint.pt"
    out_dir.mkdir(parents=True, exist_ok=True)
    checkpoint, history = training.train(
        net, bundles, train_config, checkpoint_path=checkpoint_path
    )
    io_mod.atomic_write_text(history.to_csv(), out_dir / "history.csv")
    io_mod.atomic_write_text(history.to_json(), out_dir / "history.json")
    return {
        "checkpoint_path": str(checkpoint_path),
        "history_csv": str(out_dir / "history.csv"),
        "history_json": str(out_dir / "history.json"),
        "best_epoch": checkpoint.metadata["epoch"],
        "best_val_neurofinder_f1": checkpoint.metadata["val_neurofinder_f1"],
        "best_val_pixelwise_f1": checkpoint.metadata["val_pixelwise_f1"],
        "history": history.to_rows(),
    }


def run_predict(manifest_path, checkpoint_path, out_dir,
                options: prediction.PredictOptions = None,
                datasets: Sequence = None, data_root=None,
                continue_on_error: bool = False, workers: int = 1) -> dict:
    """Segment each dataset: regions JSON, probability map, overlay PNG,
    and a timing JSON with end-to-end throughput."""
    options = options or prediction.PredictOptions()
    out_dir = Path(out_dir)
    entries = _select_entries(manifest_path, datasets, data_root)
    # Fail early on a bad checkpoint rather than once per dataset.
    model_mod.load_checkpoint(checkpoint_path)

    def work(entry):
        result = prediction.segment_series(entry.series_path, checkpoint_path, options)
        ds_dir = out_dir / entry.name
        io_mod.write_regions(result.regions, ds_dir / REGIONS_FILENAME)
        ds_dir.mkdir(parents=True, exist_ok=True)
        np.save(ds_dir / "probability.npy", result.probability_map)
        gt = io_mod.load_regions(entry.regions_path) if entry.regions_path else None
        report_mod.save_overlay(result.summary.values, result.regions, gt,
                                ds_dir / "overlay.png")
        io_mod.atomic_write_json(result.timing.to_dict(), ds_dir / "timing.json")
        return {
            "dataset": entry.name,
            "regions_path": str(ds_dir / REGIONS_FILENAME),
            "overlay_path": str(ds_dir / "overlay.png"),
            "region_count": len(result.regions),
            "timing": result.timing.to_dict(),
        }

    results, errors = _run_per_dataset(entries, work, workers, continue_on_error)
    return {"results": results, "errors": errors}


def _format_table(rows: list, mean_row: dict, std_row: dict) -> str:
    columns = ["dataset", "f1", "precision", "recall", "inclusion",
               "exclusion", "pixelwise_f1"]
    header = f"{'Dataset':<16}" + "".join(f"{c.capitalize():>13}" for c in columns[1:])
    lines = [header, "-" * len(header)]
    for row in rows:
        lines.append(
            f"{row['dataset']:<16}" + "".join(f"{row[c]:>13.3f}" for c in columns[1:])
        )
    lines.append("-" * len(header))
    lines.append(
        f"{'Mean +/- SD':<16}"
        + "".join(f"{mean_row[c]:>7.3f}+/-{std_row[c]:.3f}" for c in columns[1:])
    )
    return "\n".join(lines) + "\n"


def run_evaluate(manifest_path, predictions_dir, out_path=None,
                 datasets: Sequence = None, data_root=None,
                 max_dist: float = metrics.DEFAULT_MAX_DIST, workers: int = 1) -> dict:
    """Score predicted regions against ground truth, dataset by dataset,
    plus the across-dataset mean and standard deviation."""
    predictions_dir = Path(predictions_dir)
    entries = _select_entries(manifest_path, datasets, data_root)
    entries = [e for e in entries if e.regions_path is not None]
    if not entries:
        raise ConfigError("no selected dataset has ground-truth regions")

    def work(entry):
        gt = io_mod.load_regions(entry.regions_path)
        pred_path = predictions_dir / entry.name / REGIONS_FILENAME
        if not pred_path.exists():
            pred_path = predictions_dir / f"{entry.name}.json"
        if not pred_path.exists():
            raise AcisError(f"no predictions found for dataset {entry.name!r} "
                            f"under {predictions_dir}")
        pred = io_mod.load_regions(pred_path)
        series = io_mod.load_series(entry.series_path, name=entry.name)
        report = metrics.evaluate_dataset(
            gt, pred, shape=(series.height, series.width), max_dist=max_dist
        )
        return {"dataset": entry.name, **report.to_dict()}

    rows, _ = _run_per_dataset(entries, work, workers, continue_on_error=False)
    score_keys = ["f1", "precision", "recall", "inclusion", "exclusion", "pixelwise_f1"]
    mean_row = {k: float(np.mean([r[k] for r in rows])) for k in score_keys}
    std_row = {k: float(np.std([r[k] for r in rows])) for k in score_keys}
    table = _format_table(rows, mean_row, std_row)
    result = {"datasets": rows, "mean": mean_row, "std": std_row, "table": table}
    if out_path is not None:
        io_mod.atomic_write_json(
            {"datasets": rows, "mean": mean_row, "std": std_row}, out_path
        )
        io_mod.atomic_write_text(table, Path(out_path).with_suffix(".txt"))
        result["out_path"] = str(out_path)
    return result


def run_submit(predictions_dir, out_path) -> dict:
    """Bundle every per-dataset regions file into one submission JSON:
    an array of {"dataset": name, "regions": [...]} entries."""
    predictions_dir = Path(predictions_dir)
    found = sorted(predictions_dir.glob(f"*/{REGIONS_FILENAME}"))
    if not found:
        raise AcisError(f"no {REGIONS_FILENAME} files found under {predictions_dir}")
    payload = []
    for path in found:
        regions = io_mod.load_regions(path)
        payload.append({
            "dataset": path.parent.name,
            "regions": io_mod.regions_to_payload(regions),
        })
    io_mod.atomic_write_json(payload, out_path)
    return {"out_path": str(out_path), "dataset_count": len(payload),
            "datasets": [p["dataset"] for p in payload]}


def run_report(summary_path, pred_regions_path, out_png,
               gt_regions_path=None) -> dict:
    """Render an overlay PNG for one dataset."""
    summ = summary_mod.load_summary(summary_path)
    pred = io_mod.load_regions(pred_regions_path)
    gt = io_mod.load_regions(gt_regions_path) if gt_regions_path else None
    report_mod.save_overlay(summ.values, pred, gt, out_png)
    h, w = summ.values.shape
    return {"out_path": str(out_png), "height": h, "width": w,
            "pred_regions": len(pred), "gt_regions": len(gt) if gt is not None else None}
