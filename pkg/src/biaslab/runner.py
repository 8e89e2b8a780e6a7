"""Experiment orchestration: train every (seed, method) cell, evaluate it,
and emit records, a delimited summary, figures, and plot-ready JSON series.

Layout of an output directory:

    record.json                  full run record (config snapshot, per-cell
                                 results, aggregates over seeds)
    summary.csv                  one row per (method, seed) cell
    figures/summary.png          mean accuracy bars per method
    cells/<method>_seed<seed>/   record.json, trajectory.jsonl,
                                 checkpoint.json, som.json, figures

Completed cells are never recomputed: re-running the same config over an
existing directory only fills in what is missing. Failed cells are recorded
and skipped; the run then exits with a partial-failure status.
"""

from __future__ import annotations

import concurrent.futures
import csv as csvmod
import io
import json
import os
from pathlib import Path

import numpy as np

from biaslab import metrics as M
from biaslab import nn, plots
from biaslab.config import ConfigError, RunConfig, load_config
from biaslab.data import CsvSchema, Dataset, SplitSet, SubgroupSpec, generate, load_csv, split
from biaslab.methods import MethodConfig, extract_representations, train_method
from biaslab.som import purity, som_assign, som_fit

ENV_OUTPUT_ROOT = "BIASLAB_OUTPUT_ROOT"

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_PARTIAL = 2

PLOT_KINDS = ("weights", "losses", "domain_acc", "som")

# summary columns that are lower-is-better when flagging the best cell
_LOWER_BETTER = ("delta_", "purity")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def _dataset_for(cfg: RunConfig, seed: int) -> Dataset:
    if cfg.dataset_kind == "generate":
        gen = cfg.generate
        spec = SubgroupSpec(
            counts=gen.counts,
            core_separation=gen.core_separation,
            spurious_strength=gen.spurious_strength,
            noise_sigma=gen.noise_sigma,
            hard_fraction=gen.hard_fraction,
        )
        return generate(spec, gen.dim_core, gen.dim_spurious, seed)
    return load_csv(cfg.csv.path, CsvSchema(label=cfg.csv.label, attribute=cfg.csv.attribute))


def _conflicting_groups(cfg: RunConfig, ds: Dataset) -> list[int]:
    groups = []
    for y, a in cfg.eval.bias_conflicting:
        if not (0 <= y < ds.num_classes and 0 <= a < ds.num_attributes):
            raise ConfigError(
                f"eval.bias_conflicting: subgroup (y={y}, a={a}) not resolvable "
                f"in a {ds.num_classes}x{ds.num_attributes} dataset")
        groups.append(ds.group_of(y, a))
    return groups


def _class_partition(ds: Dataset) -> dict[int, list[int]]:
    return {c: [ds.group_of(c, a) for a in range(ds.num_attributes)]
            for c in range(ds.num_classes)}


def _auc_enabled(cfg: RunConfig, ds: Dataset) -> bool:
    if cfg.eval.auc == "auto":
        return ds.num_classes > 2
    return bool(cfg.eval.auc)


def _auc_block(scores, ds: Dataset, idx: np.ndarray) -> dict:
    """Per-(class, attribute) one-vs-rest AUC table plus gap metrics."""
    labels, attrs = ds.y[idx], ds.a[idx]
    table: dict[int, float] = {}
    for c in range(ds.num_classes):
        for a in range(ds.num_attributes):
            val = M.subgroup_auc(scores, labels, attrs, c, a)
            if val is not None:
                table[ds.group_of(c, a)] = val
    if not table:
        return {"per_group": {}, "average": None, "worst": None, "disparity": None}
    rep = M.disparity(table, _class_partition(ds))
    values = np.array(list(table.values()))
    return {
        "per_group": {str(k): v for k, v in table.items()},
        "average": float(values.mean()),
        "worst": float(values.min()),
        "disparity": rep.to_json_dict(),
    }


def _cell_dirname(method: str, seed: int) -> str:
    return f"{method}_seed{seed}"


def _summary_row(record: dict) -> dict:
    """Flatten a cell record into the summary CSV row."""
    row = {"method": record["method"], "seed": record["seed"], "status": record["status"]}
    if record["status"] != "ok":
        return row
    metrics = record["metrics"]
    row["acc_avg"] = metrics["average"]
    row["acc_worst"] = metrics["worst"]
    row["worst_group"] = record["group_labels"].get(str(metrics["worst_group"]),
                                                    str(metrics["worst_group"]))
    for g, v in sorted(metrics["per_group"].items(), key=lambda kv: int(kv[0])):
        row[f"acc_{record['group_labels'][g]}"] = v
    if record.get("bias_conflicting") is not None:
        row["acc_conflicting"] = record["bias_conflicting"]["accuracy"]
    disp = record["disparity"]
    row["delta_best_worst"] = disp["delta_best_worst"]
    row["delta_avg_worst"] = disp["delta_avg_worst"]
    if disp.get("per_class_mean") is not None:
        row["delta_class_mean"] = disp["per_class_mean"]
    row["purity"] = record["purity"]["overall_purity"]
    auc = record.get("auc")
    if auc and auc.get("average") is not None:
        row["auc_avg"] = auc["average"]
        row["auc_worst"] = auc["worst"]
        if auc["disparity"].get("per_class_mean") is not None:
            row["auc_delta_class_mean"] = auc["disparity"]["per_class_mean"]
    return row


def run_cell(cfg: RunConfig, mcfg: MethodConfig, seed: int, cell_dir: Path) -> dict:
    """Train and evaluate one (seed, method) cell, writing its artifacts."""
    ds = _dataset_for(cfg, seed)
    splits = split(ds, cfg.fractions, seed, cfg.stratify)
    conflicting = _conflicting_groups(cfg, ds)
    mcfg = MethodConfig(**{**mcfg.__dict__, "seed": seed})

    stack, traj, extras = train_method(mcfg.method, ds, splits, mcfg)

    cell_dir.mkdir(parents=True, exist_ok=True)
    (cell_dir / "trajectory.jsonl").write_text(traj.to_jsonl(), encoding="utf-8")
    nn.save_checkpoint(cell_dir / "checkpoint.json", stack.params(), seed, mcfg.method)

    test = splits.test
    scores = M.predict_scores(stack, ds.X[test])
    preds = scores.argmax(axis=1)
    metrics = M.subgroup_accuracy(preds, ds.y[test], ds.g[test], ds.num_groups)
    disp = M.disparity(metrics.per_group, _class_partition(ds))

    som_split = {"train": splits.train, "val": splits.val, "test": splits.test}[cfg.eval.som.fit_on]
    Z = extract_representations(stack, ds, som_split)
    grid = som_fit(Z, cfg.eval.som.height, cfg.eval.som.width, cfg.eval.som.epochs,
                   cfg.eval.som.alpha0, cfg.eval.som.sigma0, seed)
    occupancy = som_assign(grid, Z, ds.g[som_split], ds.num_groups)
    pur = purity(occupancy, weighted=not cfg.eval.unweighted_purity)
    som_doc = pur.to_json_dict()
    som_doc.update({"height": grid.height, "width": grid.width, "split": cfg.eval.som.fit_on,
                    "group_labels": {str(g): ds.group_label(g) for g in range(ds.num_groups)}})
    _write_json(cell_dir / "som.json", som_doc)

    record: dict = {
        "method": mcfg.method,
        "seed": seed,
        "status": "ok",
        "group_labels": {str(g): ds.group_label(g) for g in range(ds.num_groups)},
        "metrics": metrics.to_json_dict(),
        "disparity": disp.to_json_dict(),
        "purity": {"overall_purity": pur.overall_purity,
                   "weighted": pur.weighted,
                   "per_node_purity": {str(k): v for k, v in pur.per_node_purity.items()}},
        "trajectory_file": "trajectory.jsonl",
        "checkpoint_file": "checkpoint.json",
        "som_file": "som.json",
        "trajectory_meta": traj.meta,
    }

    if conflicting:
        present = [metrics.per_group[g] for g in conflicting if g in metrics.per_group]
        record["bias_conflicting"] = {
            "groups": [ds.group_label(g) for g in conflicting],
            "accuracy": float(np.mean(present)) if present else None,
        }

    if _auc_enabled(cfg, ds):
        record["auc"] = _auc_block(scores, ds, test)

    if stack.domain_head is not None:
        probe = M.domain_probe_accuracy(stack, ds, test)
        record["domain_probe"] = probe.to_json_dict()

    if "error_set" in extras:
        error_set = extras["error_set"]
        record["error_set_size"] = int(len(error_set))
        if len(error_set):
            record["error_set_composition"] = M.error_set_composition(
                error_set, ds.g, conflicting)

    _write_json(cell_dir / "record.json", record)

    if cfg.figures:
        title = f"{mcfg.method} seed {seed}"
        plots.render_trajectory(traj.epochs, record["group_labels"],
                                cell_dir / "trajectory.png", title)
        plots.render_som(som_doc, record["group_labels"], cell_dir / "som.png", title)
    return record


def _cell_task(cfg: RunConfig, mcfg: MethodConfig, seed: int, cell_dir: Path) -> dict:
    try:
        return run_cell(cfg, mcfg, seed, cell_dir)
    except ConfigError:
        raise
    except Exception as exc:  # divergence etc.: record and continue the sweep
        record = {"method": mcfg.method, "seed": seed, "status": "failed",
                  "error": f"{type(exc).__name__}: {exc}"}
        cell_dir.mkdir(parents=True, exist_ok=True)
        _write_json(cell_dir / "record.json", record)
        return record


def resolve_output_dir(output_dir: str) -> Path:
    root = os.environ.get(ENV_OUTPUT_ROOT)
    path = Path(output_dir)
    if root and not path.is_absolute():
        return Path(root) / path
    return path


def _aggregate(cell_records: list[dict]) -> dict:
    """Per-method mean/std (population) over seeds for every numeric column."""
    by_method: dict[str, list[dict]] = {}
    for rec in cell_records:
        if rec["status"] == "ok":
            by_method.setdefault(rec["method"], []).append(_summary_row(rec))
    out: dict[str, dict] = {}
    for method, rows in by_method.items():
        keys = sorted({k for row in rows for k in row
                       if isinstance(row[k], (int, float)) and k != "seed"})
        agg = {}
        for key in keys:
            vals = np.array([row[key] for row in rows if key in row], dtype=float)
            agg[key] = {"mean": float(vals.mean()), "std": float(vals.std()),
                        "n": int(len(vals))}
        out[method] = agg
    return out


def _summary_csv_text(rows: list[dict]) -> str:
    lead = ["method", "seed", "status", "acc_avg", "acc_worst", "worst_group",
            "acc_conflicting", "delta_best_worst", "delta_avg_worst",
            "delta_class_mean", "purity", "auc_avg", "auc_worst",
            "auc_delta_class_mean"]
    extra = sorted({k for row in rows for k in row} - set(lead))
    columns = [c for c in lead if any(c in row for row in rows)] + extra
    buf = io.StringIO()
    writer = csvmod.DictWriter(buf, fieldnames=columns, restval="", lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()


def run(config_path, echo=print) -> int:
    """Execute an experiment sweep; returns the process exit code."""
    try:
        cfg = load_config(config_path)
        out_dir = resolve_output_dir(cfg.output_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        # surface unresolvable subgroup references before any training
        _conflicting_groups(cfg, _dataset_for(cfg, cfg.seeds[0]))
    except (ConfigError, OSError, ValueError) as exc:
        echo(f"config error: {exc}")
        return EXIT_VALIDATION

    cells = [(mcfg, seed) for seed in cfg.seeds for mcfg in cfg.methods]
    pending: list[tuple[MethodConfig, int, Path]] = []
    records: dict[tuple[str, int], dict] = {}
    for mcfg, seed in cells:
        cell_dir = out_dir / "cells" / _cell_dirname(mcfg.method, seed)
        existing = cell_dir / "record.json"
        if existing.exists():
            rec = json.loads(existing.read_text(encoding="utf-8"))
            if rec.get("status") == "ok":
                records[(mcfg.method, seed)] = rec
                echo(f"[skip] {mcfg.method} seed {seed} (already complete)")
                continue
        pending.append((mcfg, seed, cell_dir))

    if cfg.workers > 1 and len(pending) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            futures = {pool.submit(_cell_task, cfg, mcfg, seed, cell_dir): (mcfg, seed)
                       for mcfg, seed, cell_dir in pending}
            for fut in concurrent.futures.as_completed(futures):
                mcfg, seed = futures[fut]
                rec = fut.result()
                records[(mcfg.method, seed)] = rec
                echo(f"[{rec['status']}] {mcfg.method} seed {seed}")
    else:
        for mcfg, seed, cell_dir in pending:
            rec = _cell_task(cfg, mcfg, seed, cell_dir)
            records[(mcfg.method, seed)] = rec
            echo(f"[{rec['status']}] {mcfg.method} seed {seed}")

    ordered = [records[(mcfg.method, seed)] for mcfg, seed in cells]
    rows = [_summary_row(rec) for rec in ordered]
    aggregates = _aggregate(ordered)

    record_doc = {
        "config": cfg.raw,
        "cells": {f"{rec['method']}/seed{rec['seed']}":
                  {**rec, "cell_dir": f"cells/{_cell_dirname(rec['method'], rec['seed'])}"}
                  for rec in ordered},
        "aggregates": aggregates,
    }
    _write_json(out_dir / "record.json", record_doc)

    tmp = out_dir / "summary.csv.tmp"
    tmp.write_text(_summary_csv_text(rows), encoding="utf-8")
    os.replace(tmp, out_dir / "summary.csv")

    if cfg.figures:
        fig_dir = out_dir / "figures"
        fig_dir.mkdir(exist_ok=True)
        plots.render_summary(aggregates, fig_dir / "summary.png")

    failed = [rec for rec in ordered if rec["status"] != "ok"]
    if failed:
        echo(f"{len(failed)} cell(s) failed")
        return EXIT_PARTIAL
    return EXIT_OK


# ---------------------------------------------------------------------------
# post-hoc commands

def load_record(path) -> tuple[dict, Path]:
    path = Path(path)
    if path.is_dir():
        path = path / "record.json"
    return json.loads(path.read_text(encoding="utf-8")), path.parent


def compare(record_paths, include_std: bool = True) -> str:
    """Merge run records into one CSV, one row per (record, method), with a
    marker column flagging the best value per metric column."""
    rows = []
    for rp in record_paths:
        doc, base = load_record(rp)
        for method, agg in doc.get("aggregates", {}).items():
            row: dict = {"source": base.name or str(base), "method": method,
                         "seeds": max((v.get("n", 0) for v in agg.values()), default=0)}
            for key, stats in agg.items():
                row[key] = stats["mean"]
                if include_std:
                    row[f"{key}_std"] = stats["std"]
            rows.append(row)
    if not rows:
        raise ValueError("no aggregates found in the given records")

    metric_cols = sorted({k for row in rows for k in row
                          if k not in ("source", "method", "seeds")
                          and not k.endswith("_std")})
    for col in metric_cols:
        vals = [(i, row[col]) for i, row in enumerate(rows) if col in row]
        if not vals:
            continue
        lower = col.startswith(_LOWER_BETTER)
        best = min(vals, key=lambda iv: iv[1]) if lower else max(vals, key=lambda iv: iv[1])
        markers = rows[best[0]].setdefault("best_in", [])
        markers.append(col)

    columns = ["source", "method", "seeds"]
    for col in metric_cols:
        columns.append(col)
        if include_std:
            columns.append(f"{col}_std")
    columns.append("best_in")
    buf = io.StringIO()
    writer = csvmod.DictWriter(buf, fieldnames=columns, restval="", lineterminator="\n")
    writer.writeheader()
    for row in rows:
        if "best_in" in row:
            row["best_in"] = ";".join(row["best_in"])
        writer.writerow({k: row.get(k, "") for k in columns})
    return buf.getvalue()


def _load_cell_trajectory(base: Path, rec: dict) -> list[dict]:
    traj_path = base / rec["cell_dir"] / rec["trajectory_file"]
    return [json.loads(line) for line in traj_path.read_text(encoding="utf-8").splitlines()]


def emit_plot_data(record_path, kind: str, method: str | None = None,
                   seed: int | None = None) -> dict:
    """Epoch-indexed series (or the SOM node grid) ready for external plotting."""
    if kind not in PLOT_KINDS:
        raise ValueError(f"unknown plot kind '{kind}' (expected one of {', '.join(PLOT_KINDS)})")
    doc, base = load_record(record_path)
    items = []
    for rec in doc["cells"].values():
        if rec["status"] != "ok":
            continue
        if method is not None and rec["method"] != method:
            continue
        if seed is not None and rec["seed"] != seed:
            continue
        labels = rec["group_labels"]

        if kind == "som":
            som_doc = json.loads((base / rec["cell_dir"] / rec["som_file"])
                                 .read_text(encoding="utf-8"))
            width = som_doc["width"]
            occupancy = som_doc["occupancy"]
            nodes = []
            for node, counts in enumerate(occupancy):
                total = int(sum(counts))
                entry = {"node": node, "row": node // width, "col": node % width,
                         "total": total,
                         "counts": {labels[str(g)]: int(c) for g, c in enumerate(counts) if c}}
                if total:
                    gmax = int(np.argmax(counts))
                    entry["majority_group"] = labels[str(gmax)]
                    entry["purity"] = max(counts) / total
                nodes.append(entry)
            items.append({"method": rec["method"], "seed": rec["seed"],
                          "height": som_doc["height"], "width": width,
                          "overall_purity": som_doc["overall_purity"], "nodes": nodes})
            continue

        epochs = _load_cell_trajectory(base, rec)
        if kind == "weights":
            series: dict[str, tuple[list, list]] = {}
            for entry in epochs:
                for gi, val in enumerate(entry.get("q_mean", [])):
                    xs, ys = series.setdefault(str(gi), ([], []))
                    xs.append(entry["epoch"])
                    ys.append(val)
        else:
            key = {"losses": "train_group_loss", "domain_acc": "domain_val_acc_group"}[kind]
            series = {}
            for entry in epochs:
                for grp, val in (entry.get(key) or {}).items():
                    xs, ys = series.setdefault(grp, ([], []))
                    xs.append(entry["epoch"])
                    ys.append(val)
        for grp in sorted(series, key=int):
            xs, ys = series[grp]
            items.append({"method": rec["method"], "seed": rec["seed"],
                          "group": int(grp), "group_label": labels.get(grp, grp),
                          "x": xs, "y": ys})
    return {"kind": kind, "items": items}
