"""Experiment sweeps: dataset generation, multi-seed training and summaries.

An experiment config is a TOML file::

    [experiment]
    name = "noise"
    output_dir = "runs/noise"        # relative paths resolve against the output root
    seeds = [0, 1, 2]
    models = ["JdSNN_NoW", "GCN", "MLPBaseline"]

    [dataset]                        # base DatasetSpec; the sweep overrides fields
    N = 2000
    het = 0.3

    [sweep]
    axis = "noise_rho"               # noise_rho | het_nc | size
    values = [0.0, 0.3, 0.6]         # noise_rho: values; het_nc: het, n_c; size: N, K

    [train]                          # TrainConfig fields except seed
    epochs = 500

    [model]                          # overrides for every preset
    alpha = 1.0

    [model.JdSNN]                    # overrides for one variant
    beta = 2.0

The output root is the working directory unless ``SHEAFDIFF_OUTPUT_ROOT`` is set.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np
import tomli
from scipy import stats

from .synth import DatasetFormatError, DatasetSpec, generate_dataset, load_dataset, save_dataset

OUTPUT_ROOT_ENV = "SHEAFDIFF_OUTPUT_ROOT"
RESULTS_SCHEMA = "sheafdiff-results/1"
SUMMARY_SCHEMA = "sheafdiff-summary/1"
MANIFEST_FORMAT = "sheafdiff-manifest/1"
AXES = ("noise_rho", "het_nc", "size")

RESULT_COLUMNS = (
    "sweep_axis", "sweep_value", "N", "K", "n_c", "het", "noise_rho", "model", "seed", "status",
    "test_acc", "val_acc", "train_acc", "epochs", "best_epoch", "wall_time",
    "params_sheaf", "params_diffusion", "params_io", "params_total", "error",
)
SUMMARY_COLUMNS = (
    "sweep_axis", "sweep_value", "model", "n_ok", "n_failed",
    "mean_test_acc", "std_test_acc", "ci95_halfwidth", "mean_val_acc",
)

PRESET_GRIDS = {
    "noise_rho": {"values": [round(0.1 * i, 1) for i in range(10)]},
    "het_nc": {"het": [0.0, 0.2, 0.4, 0.6, 0.8], "n_c": [2, 3, 5]},
    "size": {"N": [250, 500, 1000, 2000, 4000], "K": [4, 10]},
}


class ConfigError(ValueError):
    """Invalid experiment configuration (CLI exit code 2)."""


@dataclass(frozen=True)
class SweepPoint:
    axis: str
    label: str
    overrides: dict


@dataclass
class ExperimentConfig:
    name: str
    output_dir: Path
    seeds: list
    models: list
    dataset: dict
    axis: str
    grid: dict
    train: dict = field(default_factory=dict)
    model_overrides: dict = field(default_factory=dict)
    source: Optional[Path] = None

    def points(self) -> list:
        if self.axis == "noise_rho":
            return [SweepPoint(self.axis, f"{float(v):g}", {"noise_rho": float(v)}) for v in self.grid["values"]]
        if self.axis == "het_nc":
            return [SweepPoint(self.axis, f"het={float(h):g};n_c={int(c)}", {"het": float(h), "n_c": int(c)})
                    for c in self.grid["n_c"] for h in self.grid["het"]]
        return [SweepPoint(self.axis, f"N={int(n)};K={int(k)}", {"N": int(n), "K": int(k)})
                for k in self.grid["K"] for n in self.grid["N"]]

    def dataset_spec(self, point: SweepPoint, seed: int) -> DatasetSpec:
        data = dict(self.dataset)
        data.update(point.overrides)
        data["seed"] = int(seed)
        try:
            return DatasetSpec.from_dict(data)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"dataset spec at sweep point {point.label}: {exc}") from None

    def model_config(self, variant: str):
        from .nn import preset

        common = {k: v for k, v in self.model_overrides.items() if not isinstance(v, dict)}
        specific = self.model_overrides.get(variant, {})
        try:
            return preset(variant, **{**common, **specific})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"model {variant}: {exc}") from None

    def train_config(self, seed: int):
        from .nn import TrainConfig

        try:
            return TrainConfig(**{**self.train, "seed": int(seed)})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"train: {exc}") from None


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV) or os.getcwd())


def _require(table, key, where):
    if key not in table:
        raise ConfigError(f"{where}.{key}: missing")
    return table[key]


def parse_config(raw: dict, source: Optional[Path] = None) -> ExperimentConfig:
    from .nn import VARIANTS

    exp = raw.get("experiment")
    if not isinstance(exp, dict):
        raise ConfigError("experiment: missing [experiment] table")
    name = str(exp.get("name", "experiment"))
    seeds = _require(exp, "seeds", "experiment")
    models = _require(exp, "models", "experiment")
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
        raise ConfigError("experiment.seeds: need a non-empty list of integers")
    if not isinstance(models, list) or not models:
        raise ConfigError("experiment.models: need a non-empty list of variants")
    for m in models:
        if m not in VARIANTS:
            raise ConfigError(f"experiment.models: unknown variant {m!r}")
    out = Path(exp.get("output_dir", name))
    if not out.is_absolute():
        out = output_root() / out
    sweep = raw.get("sweep")
    if not isinstance(sweep, dict):
        raise ConfigError("sweep: missing [sweep] table (exactly one axis is required)")
    axis = sweep.get("axis")
    if axis not in AXES:
        raise ConfigError(f"sweep.axis: must be one of {AXES}, got {axis!r}")
    keys = {"noise_rho": ("values",), "het_nc": ("het", "n_c"), "size": ("N", "K")}[axis]
    grid = {}
    for k in keys:
        vals = sweep.get(k, PRESET_GRIDS[axis][k])
        if not isinstance(vals, list) or not vals:
            raise ConfigError(f"sweep.{k}: need a non-empty list")
        grid[k] = vals
    extra = set(sweep) - set(keys) - {"axis"}
    if extra:
        raise ConfigError(f"sweep: keys {sorted(extra)} do not belong to axis {axis!r}")
    dataset = dict(raw.get("dataset", {}))
    unknown = set(dataset) - {f.name for f in fields(DatasetSpec)}
    if unknown:
        raise ConfigError(f"dataset: unknown fields {sorted(unknown)}")
    train = dict(raw.get("train", {}))
    if "seed" in train:
        raise ConfigError("train.seed: seeds come from experiment.seeds")
    cfg = ExperimentConfig(name, out, list(seeds), list(models), dataset, axis, grid, train,
                           dict(raw.get("model", {})), source)
    # validate every derived object up front so no job fails on configuration
    for p in cfg.points():
        cfg.dataset_spec(p, seeds[0])
    for m in models:
        cfg.model_config(m)
    cfg.train_config(seeds[0])
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = tomli.loads(path.read_text())
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parse_config(raw, path)


# -- generate ------------------------------------------------------------------------

def dataset_path(cfg: ExperimentConfig, index: int, seed: int) -> Path:
    return cfg.output_dir / "datasets" / f"{cfg.axis}-{index:02d}-seed{seed}.sheafds"


def generate(cfg: ExperimentConfig) -> dict:
    """Write one dataset per sweep point and seed plus ``manifest.json``."""
    (cfg.output_dir / "datasets").mkdir(parents=True, exist_ok=True)
    entries = []
    for i, point in enumerate(cfg.points()):
        for seed in cfg.seeds:
            spec = cfg.dataset_spec(point, seed)
            ds = generate_dataset(spec)
            path = dataset_path(cfg, i, seed)
            digest = save_dataset(ds, path)
            entries.append({"path": str(path.relative_to(cfg.output_dir)), "sweep_axis": cfg.axis,
                            "sweep_value": point.label, "point": i, "seed": seed, "sha256": digest,
                            "spec": spec.to_dict()})
    manifest = {"format": MANIFEST_FORMAT, "experiment": cfg.name, "sweep_axis": cfg.axis,
                "datasets": entries}
    (cfg.output_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


# -- train ---------------------------------------------------------------------------

def _train_job(job: dict) -> dict:
    import torch

    from .nn import GraphData, TrainingDivergence, param_count, train

    torch.set_num_threads(1)
    spec = job["spec"]
    row = {c: "" for c in RESULT_COLUMNS}
    row.update(sweep_axis=job["sweep_axis"], sweep_value=job["sweep_value"], N=spec["N"], K=spec["K"],
               n_c=spec["n_c"], het=spec["het"], noise_rho=spec["noise_rho"], model=job["model"].variant,
               seed=job["seed"])
    ds = load_dataset(job["path"])
    data = GraphData.from_dataset(ds)
    pc = param_count(job["model"], data.x.shape[1], data.n_classes)
    row.update(params_sheaf=pc.sheaf, params_diffusion=pc.diffusion, params_io=pc.io, params_total=pc.total)
    try:
        res = train(job["model"], data, job["train"])
    except (TrainingDivergence, FloatingPointError, RuntimeError) as exc:
        row.update(status="failed", error=str(exc).replace("\n", " "))
        return row
    row.update(status="ok", test_acc=res.test_acc, val_acc=res.val_acc, train_acc=res.train_acc,
               epochs=res.epochs_run, best_epoch=res.best_epoch, wall_time=round(res.wall_time, 4))
    return row


def _read_manifest(cfg: ExperimentConfig) -> dict:
    path = cfg.output_dir / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"{path} not found; run `generate` first")
    return json.loads(path.read_text())


def build_jobs(cfg: ExperimentConfig) -> list:
    manifest = _read_manifest(cfg)
    jobs = []
    for entry in manifest["datasets"]:
        path = cfg.output_dir / entry["path"]
        if not path.exists():
            raise FileNotFoundError(f"missing dataset {path}")
        for variant in cfg.models:
            jobs.append({"path": str(path), "spec": entry["spec"], "sweep_axis": entry["sweep_axis"],
                         "sweep_value": entry["sweep_value"], "point": entry["point"], "seed": entry["seed"],
                         "model": cfg.model_config(variant), "train": cfg.train_config(entry["seed"])})
    return jobs


def run_jobs(jobs: list, n_jobs: int = 1) -> list:
    if n_jobs <= 1:
        return [_train_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(_train_job, jobs, chunksize=1))


def write_rows(path: Path, rows: list, columns) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({c: _fmt(r.get(c, "")) for c in columns})


def _fmt(v):
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return v


def ci_halfwidth(values) -> float:
    """Student-t 95% half-width ``t_{0.975, n-1} * s / sqrt(n)``; NaN for ``n < 2``."""
    a = np.asarray(values, dtype=np.float64)
    if len(a) < 2:
        return float("nan")
    return float(stats.t.ppf(0.975, len(a) - 1) * a.std(ddof=1) / np.sqrt(len(a)))


def summarize(rows: list) -> list:
    """One row per (sweep value, model); failed runs are counted but excluded."""
    groups: dict = {}
    for r in rows:
        groups.setdefault((r["sweep_axis"], r["sweep_value"], r["model"]), []).append(r)
    out = []
    for (axis, value, model), rs in groups.items():
        ok = [r for r in rs if r["status"] == "ok"]
        test = np.array([float(r["test_acc"]) for r in ok])
        val = np.array([float(r["val_acc"]) for r in ok])
        out.append({
            "sweep_axis": axis, "sweep_value": value, "model": model,
            "n_ok": len(ok), "n_failed": len(rs) - len(ok),
            "mean_test_acc": float(test.mean()) if len(ok) else float("nan"),
            "std_test_acc": float(test.std(ddof=1)) if len(ok) > 1 else float("nan"),
            "ci95_halfwidth": ci_halfwidth(test),
            "mean_val_acc": float(val.mean()) if len(ok) else float("nan"),
        })
    return out


def train_sweep(cfg: ExperimentConfig, n_jobs: int = 1) -> tuple:
    jobs = build_jobs(cfg)
    rows = run_jobs(jobs, n_jobs)
    order = {v: i for i, v in enumerate(cfg.models)}
    keyed = sorted(zip(jobs, rows), key=lambda jr: (jr[0]["point"], order[jr[1]["model"]], jr[1]["seed"]))
    rows = [r for _, r in keyed]
    summary = summarize(rows)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    write_rows(cfg.output_dir / "results.csv", rows, RESULT_COLUMNS)
    write_rows(cfg.output_dir / "summary.csv", summary, SUMMARY_COLUMNS)
    meta = {"results_schema": RESULTS_SCHEMA, "summary_schema": SUMMARY_SCHEMA,
            "result_columns": list(RESULT_COLUMNS), "summary_columns": list(SUMMARY_COLUMNS),
            "rows": len(rows), "failed": sum(r["status"] != "ok" for r in rows)}
    (cfg.output_dir / "results.json").write_text(json.dumps(meta, indent=2))
    return rows, summary


def read_rows(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# -- inspect -------------------------------------------------------------------------

def inspect_dataset(path) -> dict:
    from .graph import edge_homophily

    ds = load_dataset(path)
    g, lab = ds.graph, ds.labels
    deg = g.degrees
    values, counts = np.unique(deg, return_counts=True)
    axes = ds.spec.semi_axes()
    x = np.asarray(ds.features)
    surface = np.abs(np.sum((x / axes[lab.labels]) ** 2, axis=1) - 1)
    norms = np.linalg.norm(x, axis=1)
    per_class = []
    for k in range(lab.n_c):
        sel = lab.labels == k
        nk = norms[sel]
        per_class.append({"class": k, "count": int(sel.sum()),
                          "norm_mean": float(nk.mean()) if len(nk) else float("nan"),
                          "norm_std": float(nk.std()) if len(nk) else float("nan"),
                          "norm_min": float(nk.min()) if len(nk) else float("nan"),
                          "norm_max": float(nk.max()) if len(nk) else float("nan")})
    return {
        "path": str(path), "version": ds.version, "n": g.n, "m": g.m, "n_c": lab.n_c,
        "edge_homophily": edge_homophily(g, lab) if g.m else float("nan"),
        "degree_histogram": {int(v): int(c) for v, c in zip(values, counts)},
        "feature_norms": per_class,
        "surface_residual_max": float(surface.max()) if len(surface) else 0.0,
        "noise_rho": ds.spec.noise_rho,
        "splits": {k: int(len(v)) for k, v in ds.splits.items()},
        "spec": ds.spec.to_dict(),
    }


__all__ = [
    "ConfigError", "ExperimentConfig", "SweepPoint", "RESULT_COLUMNS", "SUMMARY_COLUMNS",
    "load_config", "parse_config", "generate", "train_sweep", "summarize", "ci_halfwidth",
    "inspect_dataset", "read_rows", "output_root", "DatasetFormatError",
]
