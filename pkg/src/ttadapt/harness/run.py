"""Experiment execution: build, run, score, compare, sweep, dump."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..adapters import ADAPTERS, GradientAccumulator
from ..classifier import ZeroShotHead
from ..encoders import (
    EmbeddingDataset,
    FrozenSource,
    ToySource,
    augment,
    load_embedding_dataset,
    save_embedding_dataset,
    view_seed,
)
from ..errors import ConfigError, NumericalError, TtadaptError
from ..prototypes import load_prompt_bank, mean_prototype, merge_banks, save_prompt_bank
from ..streams import build_stream, generate_synthetic
from .config import ExperimentConfig

FORMAT_VERSIONS = {"ttap": 1, "ttae": 1}
CSV_HEADER = "batch,domain,errors,size"


@dataclass
class BatchResult:
    index: int
    domain: int
    errors: int
    size: int


@dataclass
class ResultRecord:
    """Per-batch error counts plus the aggregates derived from them."""

    batches: list[BatchResult]
    domain_names: list[str]
    label: str
    config_hash: str
    seed: int
    wall_clock: float = 0.0

    @property
    def total_samples(self) -> int:
        return sum(b.size for b in self.batches)

    @property
    def total_errors(self) -> int:
        return sum(b.errors for b in self.batches)

    def overall_error(self) -> float:
        """Online classification error rate in percent."""
        return 100.0 * self.total_errors / self.total_samples

    def domain_label(self, domain_id: int) -> str:
        return "mixed" if domain_id < 0 else self.domain_names[domain_id]

    def per_domain_error(self) -> dict[str, float]:
        errors: dict[int, int] = {}
        sizes: dict[int, int] = {}
        for b in self.batches:
            errors[b.domain] = errors.get(b.domain, 0) + b.errors
            sizes[b.domain] = sizes.get(b.domain, 0) + b.size
        return {self.domain_label(d): 100.0 * errors[d] / sizes[d] for d in sorted(errors)}

    def to_csv_text(self) -> str:
        lines = [CSV_HEADER]
        lines += [f"{b.index},{b.domain},{b.errors},{b.size}" for b in self.batches]
        return "\n".join(lines) + "\n"


@dataclass
class Experiment:
    """Everything a run needs, already wired together."""

    config: ExperimentConfig
    labels: np.ndarray
    domain_ids: np.ndarray
    class_names: list[str]
    domain_names: list[str]
    source: object
    head: ZeroShotHead
    adapter: object
    stream: list
    raw_inputs: np.ndarray | None = None


def _adapter_kwargs(cfg: ExperimentConfig) -> dict:
    ad = cfg.adapter
    name = ad["name"]
    common = dict(lr=float(ad["lr"]), momentum=float(ad["momentum"]), full_params=bool(ad["full_params"]))
    if name == "source":
        return {}
    if name == "bn1":
        return {}
    if name == "tent":
        return common
    if name == "eta":
        return {**common, "e0_factor": float(ad["e0_factor"]),
                "diversity_delta": float(ad["diversity_delta"])}
    if name == "sar":
        return {**common, "rho_sam": float(ad["rho_sam"]),
                "e0_factor": float(ad["e0_factor"]),
                "reset_threshold": float(ad["reset_threshold"])}
    if name == "deyo":
        return {**common, "entropy_factor": float(ad["entropy_factor"]),
                "tau_plpd": float(ad["tau_plpd"]), "block_size": int(ad["block_size"]),
                "seed": cfg.seed}
    if name == "roid":
        return {**common, "lambda_src": float(ad["lambda_src"]),
                "use_prior_correction": cfg.prior_correction_enabled(),
                "prior_momentum": float(ad["prior_momentum"])}
    if name == "cmf":
        return {**common, "process_noise": float(ad["process_noise"]),
                "observation_noise": float(ad["observation_noise"]),
                "use_prior_correction": cfg.prior_correction_enabled(),
                "prior_momentum": float(ad["prior_momentum"])}
    if name == "tpt":
        return {"n_views": int(ad["n_views"]), "lr": float(ad["tpt_lr"]),
                "n_steps": int(ad["tpt_steps"]),
                "select_fraction": float(ad["select_fraction"]), "seed": cfg.seed}
    if name == "vte":
        return {"n_views": int(ad["n_views"]),
                "select_fraction": float(ad["select_fraction"]), "seed": cfg.seed}
    raise ConfigError(f"unknown adapter {name!r}")


def build_experiment(cfg: ExperimentConfig) -> Experiment:
    if cfg.dataset["kind"] == "synthetic":
        bench = generate_synthetic(cfg.synthetic_spec(), norm=cfg.encoder["norm"])
        labels, domain_ids = bench.dataset.labels, bench.dataset.domain_ids
        class_names, domain_names = bench.dataset.class_names, bench.dataset.domain_names
        enc_cfg = cfg.encoder
        source = ToySource(
            bench.encoder, bench.dataset.inputs,
            aug_sigma=float(enc_cfg["aug_sigma"]), aug_mask=float(enc_cfg["aug_mask"]),
            aug_scale=tuple(float(v) for v in enc_cfg["aug_scale"]),
        )
        raw_inputs = bench.dataset.inputs
        if cfg.prompts["kind"] == "analog":
            prototypes = bench.prototypes
        else:
            prototypes = _load_prototypes(cfg)
            if prototypes.dim != bench.encoder.d_out:
                raise ConfigError(
                    f"prompt dim {prototypes.dim} does not match encoder dim {bench.encoder.d_out}"
                )
            if prototypes.class_names != class_names:
                raise ConfigError("prompt bank class names do not match the synthetic classes")
        stream_dataset = bench.dataset
    else:
        table = load_embedding_dataset(cfg.dataset["path"])
        labels, domain_ids = table.labels, table.domain_ids
        class_names, domain_names = table.class_names, table.domain_names
        source = FrozenSource(table)
        raw_inputs = None
        prototypes = _load_prototypes(cfg)
        if prototypes.dim != table.dim:
            raise ConfigError(
                f"prompt dim {prototypes.dim} does not match embedding dim {table.dim}"
            )
        if prototypes.class_names != class_names:
            raise ConfigError("prompt bank class names do not match the embedding dataset")
        stream_dataset = table

    head = ZeroShotHead(prototypes, inv_temperature=float(cfg.run["inv_temperature"]))
    try:
        adapter = ADAPTERS[cfg.adapter["name"]](source, head, **_adapter_kwargs(cfg))
        every = int(cfg.adapter["accumulate"])
        if every > 1:
            adapter = GradientAccumulator(adapter, every)
    except TtadaptError as exc:
        raise ConfigError(str(exc)) from exc

    stream = build_stream(stream_dataset, cfg.stream_spec())
    return Experiment(cfg, labels, domain_ids, class_names, domain_names,
                      source, head, adapter, stream, raw_inputs)


def _load_prototypes(cfg: ExperimentConfig):
    banks = [load_prompt_bank(p) for p in cfg.prompts["paths"]]
    bank = banks[0]
    for extra in banks[1:]:
        bank = merge_banks(bank, extra)
    return mean_prototype(bank)


def run_experiment(cfg: ExperimentConfig, experiment: Experiment | None = None) -> tuple[ResultRecord, Experiment]:
    exp = experiment if experiment is not None else build_experiment(cfg)
    start = time.perf_counter()
    batches: list[BatchResult] = []
    for i, batch in enumerate(exp.stream):
        try:
            _, preds = exp.adapter.adapt_and_predict(batch)
        except NumericalError as exc:
            raise NumericalError(f"run aborted at batch {i}: {exc}") from exc
        errors = int(np.sum(preds != exp.labels[batch.indices]))
        batches.append(BatchResult(i, batch.domain, errors, batch.size))
    record = ResultRecord(batches, list(exp.domain_names), cfg.label,
                          cfg.config_hash(), cfg.seed, time.perf_counter() - start)
    out = cfg.run["out"]
    if out:
        write_outputs(record, cfg, Path(out))
    return record, exp


def write_outputs(record: ResultRecord, cfg: ExperimentConfig, out_dir: Path) -> None:
    """results.csv, summary.json, manifest.json; contents are seed+config deterministic."""
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "results.csv").write_text(record.to_csv_text(), encoding="utf-8")
    summary = {
        "label": record.label,
        "overall_error_percent": round(record.overall_error(), 10),
        "per_domain_error_percent": {k: round(v, 10) for k, v in record.per_domain_error().items()},
        "total_samples": record.total_samples,
        "total_errors": record.total_errors,
    }
    (out_dir / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    manifest = {
        "config": cfg.canonical(),
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "format_versions": FORMAT_VERSIONS,
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


# ---------------------------------------------------------------------------
# comparison tables


@dataclass
class ComparisonTable:
    columns: list[str]            # domain labels + "avg"
    rows: list[tuple[str, list[float]]]

    def minima(self) -> list[float]:
        return [min(vals[i] for _, vals in self.rows) for i in range(len(self.columns))]

    def to_csv_text(self) -> str:
        lines = ["method," + ",".join(self.columns)]
        for label, vals in self.rows:
            lines.append(label + "," + ",".join(f"{v:.4f}" for v in vals))
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        width = max(len(label) for label, _ in self.rows) + 2
        cols = [f"{c:>12s}" for c in self.columns]
        lines = [" " * width + "".join(cols)]
        minima = self.minima()
        for label, vals in self.rows:
            cells = []
            for v, m in zip(vals, minima):
                mark = "*" if abs(v - m) < 1e-12 else " "
                cells.append(f"{v:>11.2f}{mark}")
            lines.append(f"{label:<{width}s}" + "".join(cells))
        return "\n".join(lines) + "\n"


def load_run_dir(path: Path) -> tuple[dict, ResultRecord]:
    manifest = json.loads((path / "manifest.json").read_text())
    rows = (path / "results.csv").read_text().strip().splitlines()
    if rows[0] != CSV_HEADER:
        raise TtadaptError(f"{path}: unexpected CSV header {rows[0]!r}")
    batches = []
    for line in rows[1:]:
        b, d, e, s = (int(x) for x in line.split(","))
        batches.append(BatchResult(b, d, e, s))
    cfg = manifest["config"]
    if cfg["dataset"]["kind"] == "synthetic":
        domains = cfg["dataset"]["synthetic"]["domains"]
    else:
        top = max((b.domain for b in batches), default=-1)
        domains = [f"domain_{d}" for d in range(top + 1)]
    label = cfg["adapter"].get("label") or cfg["adapter"]["name"]
    record = ResultRecord(batches, list(domains), label, manifest["config_hash"], manifest["seed"])
    return manifest, record


def compare(run_dirs: list[Path]) -> ComparisonTable:
    """Side-by-side per-domain error table; runs must share dataset and stream."""
    loaded = [load_run_dir(Path(p)) for p in run_dirs]
    reference = None
    for manifest, _ in loaded:
        key = json.dumps(
            {"dataset": manifest["config"]["dataset"], "stream": manifest["config"]["stream"],
             "seed": manifest["seed"]},
            sort_keys=True,
        )
        if reference is None:
            reference = key
        elif key != reference:
            raise TtadaptError("compare: runs use different dataset/stream/seed settings")

    columns = list(loaded[0][1].per_domain_error().keys()) + ["avg"]
    rows = []
    for _, record in loaded:
        per = record.per_domain_error()
        rows.append((record.label, [per[c] for c in columns[:-1]] + [record.overall_error()]))
    return ComparisonTable(columns, rows)


def compare_configs(configs: list[ExperimentConfig]) -> ComparisonTable:
    """Run each config (sequentially, isolated state) and tabulate the results."""
    key = None
    records = []
    for cfg in configs:
        this = json.dumps({"dataset": cfg.dataset, "stream": cfg.stream, "seed": cfg.seed},
                          sort_keys=True)
        if key is None:
            key = this
        elif this != key:
            raise TtadaptError("compare: configs use different dataset/stream/seed settings")
        record, _ = run_experiment(cfg)
        records.append(record)
    columns = list(records[0].per_domain_error().keys()) + ["avg"]
    rows = []
    for record in records:
        per = record.per_domain_error()
        rows.append((record.label, [per[c] for c in columns[:-1]] + [record.overall_error()]))
    return ComparisonTable(columns, rows)


# ---------------------------------------------------------------------------
# view-count sweeps


def sweep_views(cfg: ExperimentConfig, counts: list[int]) -> dict:
    """Error rate per view count for an ensembling adapter, plus the source reference."""
    if cfg.adapter["name"] not in ("vte", "tpt"):
        raise ConfigError("sweep-views: adapter must be vte or tpt")
    results = []
    for n in counts:
        sub = ExperimentConfig(json.loads(json.dumps(cfg.raw)))
        sub.raw["adapter"]["n_views"] = int(n)
        sub.raw["run"]["out"] = ""
        record, _ = run_experiment(sub)
        results.append((int(n), record.overall_error()))
    base = ExperimentConfig(json.loads(json.dumps(cfg.raw)))
    base.raw["adapter"]["name"] = "source"
    base.raw["adapter"]["label"] = ""
    base.raw["run"]["out"] = ""
    baseline, _ = run_experiment(base)
    return {
        "adapter": cfg.adapter["name"],
        "view_counts": [n for n, _ in results],
        "errors_percent": [round(e, 10) for _, e in results],
        "source_baseline_percent": round(baseline.overall_error(), 10),
    }


def write_sweep(sweep: dict, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = ["n_views,error_percent"]
    for n, e in zip(sweep["view_counts"], sweep["errors_percent"]):
        lines.append(f"{n},{e:.6f}")
    (out_dir / "sweep.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    (out_dir / "sweep.json").write_text(
        json.dumps(sweep, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


# ---------------------------------------------------------------------------
# embedding dumps and synthetic exports


def dump_embeddings(exp: Experiment, path) -> None:
    """Canonical-view embeddings under the adapter's final parameters, as a one-view TTAE."""
    if isinstance(exp.source, FrozenSource):
        data = exp.source.dataset.data[:, :1, :]
    else:
        exp.source.encoder.eval()
        emb = exp.source.encoder.embed(exp.raw_inputs).data
        data = emb.astype(np.float32)[:, None, :]
    ds = EmbeddingDataset(data, exp.labels, exp.domain_ids,
                          list(exp.class_names), list(exp.domain_names))
    save_embedding_dataset(ds, path)


def export_synthetic(cfg: ExperimentConfig, out_dir: Path, n_views: int = 1) -> dict:
    """Embed the synthetic benchmark and write TTAE + TTAP for the frozen path."""
    bench = generate_synthetic(cfg.synthetic_spec(), norm=cfg.encoder["norm"])
    encoder, dataset = bench.encoder, bench.dataset
    encoder.eval()
    n = dataset.inputs.shape[0]
    blocks = []
    for i in range(n):
        views = augment(dataset.inputs[i][None, :], n_views, view_seed(cfg.seed, i))
        blocks.append(encoder.embed(views).data.astype(np.float32))
    data = np.stack(blocks)
    table = EmbeddingDataset(data, dataset.labels, dataset.domain_ids,
                             list(dataset.class_names), list(dataset.domain_names))
    out_dir.mkdir(parents=True, exist_ok=True)
    ttae_path = out_dir / "synthetic.ttae"
    ttap_path = out_dir / "prototypes.ttap"
    save_embedding_dataset(table, ttae_path)
    save_prompt_bank(bench.prompt_bank, ttap_path)
    return {
        "ttae": str(ttae_path),
        "ttap": str(ttap_path),
        "samples": n,
        "views": n_views,
        "source_train_error": bench.source_train_error,
    }
