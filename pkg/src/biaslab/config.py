"""Run configuration: a YAML tree describing dataset, splits, methods,
evaluation, seeds, and output. Validation errors name the offending field.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields as dc_fields
from pathlib import Path

import numpy as np
import yaml

from biaslab.methods import MethodConfig


class ConfigError(ValueError):
    """A config field failed validation; the message names the field."""


@dataclass
class GenerateConfig:
    counts: np.ndarray
    dim_core: int = 4
    dim_spurious: int = 4
    core_separation: float = 2.0
    spurious_strength: float = 6.0
    noise_sigma: float = 1.0
    hard_fraction: float = 0.0


@dataclass
class CsvConfig:
    path: str
    label: str = "label"
    attribute: str = "attribute"


@dataclass
class SomParams:
    height: int = 8
    width: int = 8
    epochs: int = 5
    alpha0: float = 0.5
    sigma0: float = 2.0
    fit_on: str = "test"  # which split's representations to cluster


@dataclass
class EvalConfig:
    som: SomParams = field(default_factory=SomParams)
    unweighted_purity: bool = False
    auc: str | bool = "auto"  # auto: enabled for multi-class datasets
    bias_conflicting: list[tuple[int, int]] = field(default_factory=list)


@dataclass
class RunConfig:
    dataset_kind: str  # "generate" | "csv"
    generate: GenerateConfig | None
    csv: CsvConfig | None
    fractions: tuple[float, float, float]
    stratify: bool
    methods: list[MethodConfig]
    eval: EvalConfig
    seeds: list[int]
    output_dir: str
    workers: int = 1
    figures: bool = True
    raw: dict = field(default_factory=dict)


def _require(block: dict, key: str, where: str):
    if key not in block:
        raise ConfigError(f"{where}.{key}: missing required field")
    return block[key]


def _check_keys(block: dict, allowed: set[str], where: str) -> None:
    for key in block:
        if key not in allowed:
            raise ConfigError(f"{where}.{key}: unknown field")


def _parse_generate(block: dict) -> GenerateConfig:
    where = "dataset.generate"
    allowed = {"counts", "percentages", "per_attribute_total", "dim_core",
               "dim_spurious", "core_separation", "spurious_strength",
               "noise_sigma", "hard_fraction"}
    _check_keys(block, allowed, where)

    if "counts" in block:
        counts = np.asarray(block["counts"], dtype=float)
        if counts.ndim != 2:
            raise ConfigError(f"{where}.counts: must be a classes x attributes matrix")
        if not np.allclose(counts, np.round(counts)):
            raise ConfigError(f"{where}.counts: must be integers")
        counts = counts.astype(int)
    elif "percentages" in block:
        # columns are per-attribute percentage splits over classes; the total
        # per attribute converts them to approximate counts
        pct = np.asarray(block["percentages"], dtype=float)
        if pct.ndim != 2:
            raise ConfigError(f"{where}.percentages: must be a classes x attributes matrix")
        if not np.allclose(pct.sum(axis=0), 100.0, atol=0.5):
            raise ConfigError(f"{where}.percentages: columns must sum to ~100")
        total = _require(block, "per_attribute_total", where)
        total = np.broadcast_to(np.asarray(total, dtype=float), (pct.shape[1],))
        counts = np.round(pct / 100.0 * total[None, :]).astype(int)
    else:
        raise ConfigError(f"{where}.counts: missing required field (or percentages)")

    kwargs = {}
    for name in ("dim_core", "dim_spurious"):
        if name in block:
            kwargs[name] = int(block[name])
    for name in ("core_separation", "spurious_strength", "noise_sigma", "hard_fraction"):
        if name in block:
            kwargs[name] = float(block[name])
    return GenerateConfig(counts=counts, **kwargs)


def _parse_methods(entries, defaults: dict) -> list[MethodConfig]:
    if not isinstance(entries, list) or not entries:
        raise ConfigError("methods: at least one method entry is required")
    known = {f.name for f in dc_fields(MethodConfig)} - {"seed"}
    out = []
    for i, entry in enumerate(entries):
        where = f"methods[{i}]"
        if isinstance(entry, str):
            entry = {"method": entry}
        if not isinstance(entry, dict):
            raise ConfigError(f"{where}: must be a method id or a table")
        merged = {**defaults, **entry}
        if "method" not in merged:
            raise ConfigError(f"{where}.method: missing required field")
        for key in merged:
            if key not in known:
                raise ConfigError(f"{where}.{key}: unknown field")
        cfg = MethodConfig(**merged)
        try:
            cfg.validate()
        except ValueError as exc:
            raise ConfigError(f"{where}: {exc}") from None
        out.append(cfg)
    return out


def _parse_eval(block: dict) -> EvalConfig:
    _check_keys(block, {"som", "unweighted_purity", "auc", "bias_conflicting"}, "eval")
    som_block = block.get("som", {})
    _check_keys(som_block, {f.name for f in dc_fields(SomParams)}, "eval.som")
    som = SomParams(**som_block)
    if som.fit_on not in ("test", "train", "val"):
        raise ConfigError("eval.som.fit_on: must be test, train, or val")
    if som.height < 1 or som.width < 1 or som.epochs < 0:
        raise ConfigError("eval.som: bad grid or epoch settings")

    auc = block.get("auc", "auto")
    if auc not in ("auto", True, False):
        raise ConfigError("eval.auc: must be auto, true, or false")

    conflicting = []
    for i, pair in enumerate(block.get("bias_conflicting", [])):
        try:
            y, a = int(pair[0]), int(pair[1])
        except (TypeError, ValueError, IndexError):
            raise ConfigError(f"eval.bias_conflicting[{i}]: must be a [class, attribute] pair") from None
        conflicting.append((y, a))
    return EvalConfig(som=som, unweighted_purity=bool(block.get("unweighted_purity", False)),
                      auc=auc, bias_conflicting=conflicting)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return parse_config(raw)


def parse_config(raw: dict) -> RunConfig:
    _check_keys(raw, {"dataset", "split", "methods", "defaults", "eval", "seeds",
                      "output_dir", "workers", "figures"}, "config")

    ds_block = _require(raw, "dataset", "config")
    generate_cfg = csv_cfg = None
    if "generate" in ds_block and "csv" in ds_block:
        raise ConfigError("dataset: generate and csv are mutually exclusive")
    if "generate" in ds_block:
        kind = "generate"
        generate_cfg = _parse_generate(ds_block["generate"])
    elif "csv" in ds_block:
        kind = "csv"
        block = ds_block["csv"]
        _check_keys(block, {"path", "label", "attribute"}, "dataset.csv")
        csv_cfg = CsvConfig(path=str(_require(block, "path", "dataset.csv")),
                            label=str(block.get("label", "label")),
                            attribute=str(block.get("attribute", "attribute")))
    else:
        raise ConfigError("dataset: needs a generate or csv block")

    split_block = raw.get("split", {})
    _check_keys(split_block, {"fractions", "stratify"}, "split")
    fractions = tuple(float(f) for f in split_block.get("fractions", (0.6, 0.2, 0.2)))
    if len(fractions) != 3:
        raise ConfigError("split.fractions: must be (train, val, test)")
    if any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError("split.fractions: must be nonnegative and sum to 1")

    defaults = raw.get("defaults", {})
    methods = _parse_methods(_require(raw, "methods", "config"), defaults)

    eval_cfg = _parse_eval(raw.get("eval", {}))

    seeds = raw.get("seeds", [0])
    if not isinstance(seeds, list) or not seeds:
        raise ConfigError("seeds: at least one seed is required")
    try:
        seeds = [int(s) for s in seeds]
    except (TypeError, ValueError):
        raise ConfigError("seeds: must be integers") from None

    workers = int(raw.get("workers", 1))
    if workers < 1:
        raise ConfigError("workers: must be >= 1")

    return RunConfig(
        dataset_kind=kind,
        generate=generate_cfg,
        csv=csv_cfg,
        fractions=fractions,  # type: ignore[arg-type]
        stratify=bool(split_block.get("stratify", True)),
        methods=methods,
        eval=eval_cfg,
        seeds=seeds,
        output_dir=str(_require(raw, "output_dir", "config")),
        workers=workers,
        figures=bool(raw.get("figures", True)),
        raw=raw,
    )
