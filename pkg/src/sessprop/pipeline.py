"""Pipeline stages. Each stage reads the previous stages' artifacts from the
output directory and writes its own, together with a manifest that records
the resolved config and a SHA-256 of every file written."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import importlib
import json
import logging
import math
import time
from pathlib import Path
from typing import Sequence

import numpy as np

from . import ingest
from .config import RunConfig
from .core import Dataset, Session, SessPropError, actions_from_sessions
from .ensemble import (
    DynamicEnsembleConfig,
    EnsembleUnavailableError,
    FixedEnsembleConfig,
    dynamic_weights,
    estimate_log_stats,
    evaluate_weightings,
    fixed_weights,
    grid_search_alpha,
)
from .evaluation import ActionRecords, curve_rows, evaluate_model, robustness_ratio, stratified_sweep
from .propensity import (
    ItemPropensityTable,
    PowerLawParams,
    action_propensities,
    fit_gamma,
    item_propensity,
    log_histogram,
    nearest_rank_percentile,
    read_table,
    strata_correlation,
    write_histogram,
    write_table,
)
from .recommenders import GRU4Rec, Popularity, SKNN, load_model, save_model

logger = logging.getLogger(__name__)

BUILTIN_MODELS = ("sknn", "gru4rec", "popularity")


class MissingArtifactError(SessPropError):
    def __init__(self, path: Path, command: str):
        self.path = path
        self.command = command
        super().__init__(f"missing {path}; run `sessprop {command}` first")


class MissingInputError(SessPropError):
    pass


@dataclasses.dataclass(frozen=True)
class RunOptions:
    threads: int = 1
    deterministic: bool = True

    @property
    def workers(self) -> int:
        return 1 if self.deterministic else max(1, self.threads)


# -- artifact helpers ---------------------------------------------------------


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


def _clean(obj):
    # JSON has no NaN/inf
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def write_json(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(_clean(obj), indent=2, sort_keys=True, default=_json_default)
    path.write_text(text + "\n", encoding="utf-8")
    return path


def read_json(path: Path) -> dict:
    return json.loads(path.read_text(encoding="utf-8"))


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(stage_dir: Path, cfg: RunConfig, stage: str, files: Sequence[Path]) -> Path:
    entries = {str(p.relative_to(stage_dir)): _sha256(p) for p in sorted(files)}
    return write_json(stage_dir / "manifest.json", {"stage": stage, "config": cfg.resolved(), "files": entries})


def _require(path: Path, command: str) -> Path:
    if not path.exists():
        raise MissingArtifactError(path, command)
    return path


class Layout:
    def __init__(self, root: Path):
        self.root = Path(root)
        self.dataset = self.root / "dataset"
        self.propensity = self.root / "propensity"
        self.models = self.root / "models"
        self.eval = self.root / "eval"
        self.ensemble = self.root / "ensemble"
        self.report = self.root / "report"

    def model_file(self, name: str) -> Path:
        return self.models / f"{name}.model"


# -- stage: preprocess --------------------------------------------------------


def run_preprocess(cfg: RunConfig) -> dict:
    layout = Layout(cfg.output_path)
    if not cfg.dataset.paths:
        raise MissingInputError("dataset.paths is empty; nothing to preprocess")
    mapping = cfg.dataset.mapping()
    events, parse_stats = [], []
    for p in cfg.dataset.paths:
        path = Path(p)
        if not path.is_file():
            raise MissingInputError(f"input file not found: {path}")
        result = ingest.parse_events(path, mapping)
        events.extend(result.events)
        parse_stats.append({
            "path": str(path),
            "rows": result.rows,
            "events": len(result.events),
            "skipped": result.skipped,
            "skip_reasons": dict(sorted(result.skip_reasons.items())),
        })
    dataset = ingest.preprocess(events, cfg.dataset.preprocess)
    dataset.meta["config"] = cfg.resolved()
    ingest.save_snapshot(dataset, layout.dataset)
    stats = ingest.summary_stats(dataset)
    summary = {
        "config": cfg.resolved(),
        "parse": parse_stats,
        "split_time": dataset.meta["split_time"],
        "stats": stats,
    }
    files = [
        layout.dataset / ingest.SNAPSHOT_EVENTS,
        layout.dataset / ingest.SNAPSHOT_ITEMS,
        layout.dataset / ingest.SNAPSHOT_META,
        write_json(layout.dataset / "summary.json", summary),
    ]
    write_manifest(layout.dataset, cfg, "preprocess", files)
    logger.info(
        "preprocess: %d actions, %d sessions, %d items, avg length %.2f",
        stats["actions"], stats["sessions"], stats["items"], stats["avg_session_length"],
    )
    return summary


def load_dataset(cfg: RunConfig) -> Dataset:
    layout = Layout(cfg.output_path)
    _require(layout.dataset / ingest.SNAPSHOT_EVENTS, "preprocess")
    return ingest.load_snapshot(layout.dataset)


# -- stage: propensity --------------------------------------------------------


def resolve_gamma(cfg: RunConfig, item_counts: np.ndarray) -> PowerLawParams:
    g = cfg.propensity.gamma
    if g == "fit":
        return fit_gamma(item_counts)
    return PowerLawParams(float(g), {"source": "fixed"})


def run_propensity(cfg: RunConfig) -> dict:
    layout = Layout(cfg.output_path)
    dataset = load_dataset(cfg)
    params = resolve_gamma(cfg, dataset.item_counts)
    table = item_propensity(dataset.item_counts, params)

    out = layout.propensity
    out.mkdir(parents=True, exist_ok=True)
    write_table(table, dataset.vocabulary, out / "table.tsv")
    hist = log_histogram(table, cfg.propensity.histogram_bins)
    hist["config"] = cfg.resolved()
    write_histogram(hist, out / "histogram.json")

    test_actions = actions_from_sessions(dataset.test_sessions)
    try:
        corr = strata_correlation(test_actions, table)
        corr_info = {"pearson_r": corr.pearson_r, "n_actions": len(test_actions), "error": None}
        with open(out / "correlation_pairs.tsv", "w", encoding="utf-8", newline="\n") as fh:
            fh.write("log10_target_propensity\tlog10_historical_propensity\n")
            for t, h in zip(corr.log_target, corr.log_historical):
                fh.write(f"{float(t)!r}\t{float(h)!r}\n")
    except SessPropError as exc:
        corr_info = {"pearson_r": None, "n_actions": len(test_actions), "error": str(exc)}
        (out / "correlation_pairs.tsv").write_text(
            "log10_target_propensity\tlog10_historical_propensity\n", encoding="utf-8"
        )

    params_doc = {
        "config": cfg.resolved(),
        "gamma": params.gamma,
        "exponent": params.exponent,
        "fit": params.fit_meta,
        "correlation": corr_info,
    }
    files = [
        out / "table.tsv",
        out / "histogram.json",
        out / "correlation_pairs.tsv",
        write_json(out / "params.json", params_doc),
    ]
    write_manifest(out, cfg, "propensity", files)
    logger.info("propensity: gamma=%.4f (%s)", params.gamma, params.fit_meta.get("source"))
    return params_doc


def load_propensity(cfg: RunConfig, dataset: Dataset) -> ItemPropensityTable:
    layout = Layout(cfg.output_path)
    params_path = _require(layout.propensity / "params.json", "propensity")
    doc = read_json(params_path)
    params = PowerLawParams(doc["gamma"], doc["fit"])
    return read_table(_require(layout.propensity / "table.tsv", "propensity"), dataset.vocabulary, params)


# -- stage: train -------------------------------------------------------------


def build_model(cfg: RunConfig, name: str):
    if name == "sknn":
        return SKNN(cfg.models.sknn)
    if name == "gru4rec":
        return GRU4Rec(dataclasses.replace(cfg.models.gru4rec, seed=cfg.seed))
    if name == "popularity":
        return Popularity()
    raise MissingInputError(f"unknown model {name!r}; built-in models: {BUILTIN_MODELS}")


def run_train(cfg: RunConfig, name: str) -> dict:
    layout = Layout(cfg.output_path)
    dataset = load_dataset(cfg)
    model = build_model(cfg, name)
    started = time.perf_counter()
    model.fit(dataset.train_sessions, dataset.n_items)
    logger.info("train %s: %.2fs", name, time.perf_counter() - started)

    info: dict = {"config": cfg.resolved(), "model": name}
    if isinstance(model, GRU4Rec):
        info["loss_history"] = list(model.loss_history)
        info["epochs_trained"] = model.epochs_trained
        info["untrained"] = not model.trained
        for epoch, loss in enumerate(model.loss_history, start=1):
            logger.info("gru4rec epoch %d loss %.6f", epoch, loss)
    elif isinstance(model, SKNN):
        info["index"] = model.index_stats()
        logger.info("sknn index: %s", info["index"])
    layout.models.mkdir(parents=True, exist_ok=True)
    save_model(model, layout.model_file(name), extra={"config": cfg.resolved()})
    write_json(layout.models / f"{name}.train.json", info)
    write_manifest(layout.models, cfg, "train", _existing_model_files(layout))
    return info


def _existing_model_files(layout: Layout) -> list[Path]:
    return sorted(p for p in layout.models.iterdir() if p.suffix in (".model", ".json") and p.name != "manifest.json")


def load_trained(cfg: RunConfig, name: str, dataset: Dataset):
    if ":" in name:
        module_name, attr = name.split(":", 1)
        try:
            factory = getattr(importlib.import_module(module_name), attr)
        except (ImportError, AttributeError) as exc:
            raise MissingInputError(f"cannot load model plugin {name!r}: {exc}") from exc
        return factory(dataset)
    return load_model(_require(Layout(cfg.output_path).model_file(name), f"train --model {name}"))


def _model_label(name: str) -> str:
    return name.rsplit(":", 1)[-1] if ":" in name else name


# -- stage: evaluate ----------------------------------------------------------


def _write_curves(path: Path, rows: list[tuple]) -> Path:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["x", "stratum", "model", "metric", "value"])
        for x, stratum, model, metric, value in rows:
            writer.writerow([repr(float(x)), stratum, model, metric, "null" if value is None else repr(float(value))])
    return path


def run_evaluate(cfg: RunConfig, names: Sequence[str] | None = None, options: RunOptions = RunOptions()) -> dict:
    layout = Layout(cfg.output_path)
    dataset = load_dataset(cfg)
    table = load_propensity(cfg, dataset)
    names = list(names or cfg.evaluation.models)
    n = cfg.evaluation.n
    out = layout.eval
    out.mkdir(parents=True, exist_ok=True)
    files: list[Path] = []

    records: dict[str, ActionRecords] = {}
    overall = {}
    for name in names:
        model = load_trained(cfg, name, dataset)
        label = _model_label(name)
        started = time.perf_counter()
        result = evaluate_model(model, dataset.test_sessions, n, table, options.workers)
        logger.info("evaluate %s: HR@%d=%.4f MRR@%d=%.4f (%.2fs)", label, n, result.metrics.hit_rate,
                    n, result.metrics.mrr, time.perf_counter() - started)
        records[label] = result.records
        overall[label] = dict(result.metrics.as_dict(), uninformative_actions=result.uninformative_actions)
        path = out / f"{label}.records.tsv"
        result.records.write_tsv(path, dataset.vocabulary.ids)
        files.append(path)

    total = len(next(iter(records.values())))
    sweeps, robustness = {}, {}
    for method in cfg.evaluation.methods:
        reports = stratified_sweep(records, method, cfg.evaluation.percentile_grid)
        for rep in reports:
            if rep.q1_count + rep.q2_count != total:
                raise SessPropError(f"stratum counts do not sum to {total} at x={rep.percentile}")
        sweeps[method] = [r.as_dict() for r in reports]
        files.append(_write_curves(out / f"curves_{method}.csv", curve_rows(reports)))
        robustness[method] = {}
        for label, rec in records.items():
            try:
                robustness[method][label] = robustness_ratio(rec, method, cfg.evaluation.robustness_fraction).as_dict()
            except SessPropError as exc:
                robustness[method][label] = {"error": str(exc)}

    params = read_json(layout.propensity / "params.json")
    report = {
        "config": cfg.resolved(),
        "gamma": params["gamma"],
        "gamma_fit": params["fit"],
        "split_time": dataset.meta.get("split_time"),
        "n": n,
        "total_actions": total,
        "overall": overall,
        "sweeps": sweeps,
        "robustness": robustness,
        "notes": {
            "stratum_rule": "Q1: propensity < nearest-rank cutoff; Q2: the rest",
            "empty_stratum": "null",
        },
    }
    files.append(write_json(out / "report.json", report))
    write_manifest(out, cfg, "evaluate", files)
    return report


# -- stage: ensemble ----------------------------------------------------------


def validation_sessions(train: Sequence[Session], fraction: float) -> tuple[Session, ...]:
    ordered = sorted(train, key=lambda s: (s.start_time, s.session_id))
    k = max(1, math.ceil(fraction * len(ordered)))
    return tuple(ordered[-k:])


def run_ensemble(cfg: RunConfig) -> dict:
    layout = Layout(cfg.output_path)
    dataset = load_dataset(cfg)
    table = load_propensity(cfg, dataset)
    knn = load_trained(cfg, "sknn", dataset)
    gru = load_trained(cfg, "gru4rec", dataset)
    ecfg, n = cfg.ensemble, cfg.evaluation.n
    method = ecfg.stratification

    test_actions = actions_from_sessions(dataset.test_sessions)
    test_p = action_propensities(test_actions, table, method)
    if ecfg.threshold is not None:
        threshold, threshold_source = float(ecfg.threshold), "fixed"
    else:
        threshold = nearest_rank_percentile(test_p, ecfg.threshold_percentile)
        threshold_source = f"{ecfg.threshold_percentile}th percentile of test-action {method} propensity"

    weightings = {"sknn": lambda p: (0.0, 1.0), "gru4rec": lambda p: (1.0, 0.0)}
    for w2 in ecfg.w2_grid:
        fc = FixedEnsembleConfig(threshold, float(w2))
        weightings[f"fixed_w2={float(w2)!r}"] = lambda p, fc=fc: fixed_weights(p, fc)

    dynamic: dict = {"available": False}
    try:
        train_p = action_propensities(actions_from_sessions(dataset.train_sessions), table, method)
        p_mean, p_std = estimate_log_stats(train_p)
        val = validation_sessions(dataset.train_sessions, ecfg.validation_fraction)
        search = grid_search_alpha(knn, gru, val, table, p_mean, p_std, ecfg.alpha_grid, n)
        dcfg = DynamicEnsembleConfig(search.alpha, p_mean, p_std)
        weightings["dynamic"] = lambda p: dynamic_weights(p, dcfg)
        dynamic = {
            "available": True,
            "alpha": search.alpha,
            "validation_hit_rate": search.validation_hit_rate,
            "validation_sessions": len(val),
            "alpha_scores": {repr(a): s for a, s in search.scores.items()},
            "p_mean_hat": p_mean,
            "p_std_hat": p_std,
            "log": "natural",
        }
    except EnsembleUnavailableError as exc:
        dynamic["error"] = str(exc)

    results = evaluate_weightings(knn, gru, dataset.test_sessions, weightings, table, n, method)
    low = np.flatnonzero(test_p < threshold)
    high = np.flatnonzero(test_p >= threshold)

    def strata(rec: ActionRecords) -> dict:
        return {
            "low": rec.metrics(low).as_dict() if len(low) else None,
            "high": rec.metrics(high).as_dict() if len(high) else None,
        }

    columns = {}
    for name, res in results.items():
        columns[name] = {"overall": res.metrics.as_dict(), "strata": strata(res.records)}

    checks = {}
    if "fixed_w2=1.0" in results and len(low):
        checks["w2=1.0 low stratum equals gru4rec"] = bool(
            np.array_equal(results["fixed_w2=1.0"].records.rank[low], results["gru4rec"].records.rank[low])
        )
    if "fixed_w2=1.0" in results and len(high):
        checks["w2=1.0 high stratum equals sknn"] = bool(
            np.array_equal(results["fixed_w2=1.0"].records.rank[high], results["sknn"].records.rank[high])
        )

    report = {
        "config": cfg.resolved(),
        "n": n,
        "stratification": method,
        "threshold": threshold,
        "threshold_source": threshold_source,
        "low_count": int(len(low)),
        "high_count": int(len(high)),
        "score_normalization": "per-action min-max of each model's scores (shared by fixed and dynamic)",
        "dynamic": dynamic,
        "columns": columns,
        "checks": checks,
    }
    out = layout.ensemble
    out.mkdir(parents=True, exist_ok=True)
    files = [write_json(out / "report.json", report)]
    with open(out / "table.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        names = list(columns)
        writer.writerow(["metric"] + names)
        writer.writerow([f"HitRate@{n}"] + [repr(columns[c]["overall"]["hit_rate"]) for c in names])
        writer.writerow([f"MRR@{n}"] + [repr(columns[c]["overall"]["mrr"]) for c in names])
    files.append(out / "table.csv")
    write_manifest(out, cfg, "ensemble", files)
    return report


# -- stage: report ------------------------------------------------------------


def _read_curves(path: Path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def run_report(cfg: RunConfig) -> dict:
    layout = Layout(cfg.output_path)
    eval_report = read_json(_require(layout.eval / "report.json", "evaluate"))
    out = layout.report
    out.mkdir(parents=True, exist_ok=True)
    files: list[Path] = []

    for method in cfg.evaluation.methods:
        rows = _read_curves(_require(layout.eval / f"curves_{method}.csv", "evaluate"))
        models = sorted({r["model"] for r in rows})
        wide: dict[tuple, dict] = {}
        for r in rows:
            key = (float(r["x"]), r["stratum"], r["metric"])
            wide.setdefault(key, {})[r["model"]] = r["value"]
        path = out / f"curves_{method}_wide.csv"
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["x", "stratum", "metric"] + models)
            for key in sorted(wide):
                writer.writerow([repr(key[0]), key[1], key[2]] + [wide[key].get(m, "null") for m in models])
        files.append(path)

    n = eval_report["n"]
    lines = [f"# Evaluation summary (N={n})", ""]
    lines.append(f"gamma = {eval_report['gamma']!r} ({eval_report['gamma_fit'].get('source')}), "
                 f"split_time = {eval_report['split_time']!r}, actions = {eval_report['total_actions']}")
    lines += ["", f"| model | HR@{n} | MRR@{n} |", "|---|---|---|"]
    for model, m in eval_report["overall"].items():
        lines.append(f"| {model} | {m['hit_rate']:.4f} | {m['mrr']:.4f} |")
    for method, per_model in eval_report["robustness"].items():
        lines += ["", f"Bottom/top robustness ratio ({method} propensity)", "",
                  "| model | HR ratio | MRR ratio |", "|---|---|---|"]
        for model, r in per_model.items():
            fmt = lambda v: "undefined" if v is None else f"{v:.4f}"  # noqa: E731
            lines.append(f"| {model} | {fmt(r.get('hit_rate'))} | {fmt(r.get('mrr'))} |")
    ens_path = layout.ensemble / "report.json"
    summary = {"config": cfg.resolved(), "evaluation": {k: eval_report[k] for k in ("overall", "robustness")}}
    if ens_path.exists():
        ens = read_json(ens_path)
        names = list(ens["columns"])
        lines += ["", f"Ensemble (threshold {ens['threshold']!r})", "",
                  "| metric | " + " | ".join(names) + " |", "|---" * (len(names) + 1) + "|"]
        for key, label in (("hit_rate", f"HitRate@{n}"), ("mrr", f"MRR@{n}")):
            lines.append(f"| {label} | " + " | ".join(f"{ens['columns'][c]['overall'][key]:.4f}" for c in names) + " |")
        if ens["dynamic"].get("available"):
            lines.append(f"\nDynamic alpha = {ens['dynamic']['alpha']!r} "
                         f"(validation HR@{n} = {ens['dynamic']['validation_hit_rate']:.4f})")
        summary["ensemble"] = {c: ens["columns"][c]["overall"] for c in names}
    (out / "summary.md").write_text("\n".join(lines) + "\n", encoding="utf-8")
    files.append(out / "summary.md")
    files.append(write_json(out / "summary.json", summary))
    write_manifest(out, cfg, "report", files)
    return summary


def run_all(cfg: RunConfig, options: RunOptions = RunOptions()) -> None:
    run_preprocess(cfg)
    run_propensity(cfg)
    for name in ("sknn", "gru4rec"):
        run_train(cfg, name)
    run_evaluate(cfg, None, options)
    run_ensemble(cfg)
    run_report(cfg)
