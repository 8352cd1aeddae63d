"""Run directories: training, checkpoint export/reload, evaluation and cross-run reports."""

from __future__ import annotations

import csv
import json
import logging
import os
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .config import RunConfig, config_from_dict
from .evaluation import EvalReport, diagnostics_report, full_rank_eval, popularity_scores
from .fusion import SemanticTable, load_semantic_table, write_semantic_file
from .graph import PreparedData, assign_degree_groups, prepare
from .hgpo.trainer import Trainer, TrainingAborted
from .model import RecModel

log = logging.getLogger(__name__)


class RunError(RuntimeError):
    pass


class RunLock:
    """Exclusive lock file inside a run directory."""

    def __init__(self, directory):
        self.path = Path(directory) / ".lock"

    def __enter__(self):
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise RunError(f"run directory {self.path.parent} is locked by another writer") from None
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        return self

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)


def load_data(cfg: RunConfig) -> tuple[PreparedData, SemanticTable | None]:
    data = prepare(cfg.data.interactions, cfg.data.k_core, cfg.data.split, cfg.seed)
    table = None
    if cfg.data.semantic and not cfg.ablation.no_semantic:
        table = load_semantic_table(cfg.data.semantic, data.item_ids)
    return data, table


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def save_checkpoint(directory, trainer: Trainer):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    ad.save_parameters(d / "model.csv", trainer.model.snapshot())
    ad.save_parameters(d / "policy.csv", trainer.policy.snapshot())
    trainer.cfg.save(d / "config.json")


def train_run(cfg: RunConfig, out, data=None, table=None) -> dict:
    """Train, evaluate on test, and write every run artifact into ``out``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    with RunLock(out):
        cfg.save(out / "config.json")
        (out / "seed.txt").write_text(f"{cfg.seed}\n", encoding="utf-8")
        if data is None:
            data, table = load_data(cfg)
        data.save(out / "data")
        if table is not None:
            write_semantic_file(out / "data" / "semantic.txt", table, data.item_ids)
        trainer = Trainer(data, table, cfg)
        with open(out / "stats.jsonl", "w", encoding="utf-8") as stats:
            def sink(rec):
                stats.write(json.dumps(rec, sort_keys=True) + "\n")
            try:
                summary = trainer.fit(sink)
            except (TrainingAborted, ad.DivergenceError, FloatingPointError) as exc:
                dump = getattr(exc, "dump", {"iter": trainer.iteration})
                _write_json(out / "abort.json", {"error": str(exc), **dump})
                raise RunError(f"training aborted: {exc} (dump in {out / 'abort.json'})") from exc
        save_checkpoint(out / "checkpoint", trainer)
        report = trainer.evaluate(data.split.test_edges, with_buckets=True)
        (out / "metrics.json").write_text(report.to_json(), encoding="utf-8")
        (out / "report.txt").write_text(report.to_text(), encoding="utf-8")
        diag = trainer.diagnostics()
        records = [json.loads(line) for line in (out / "stats.jsonl").read_text(encoding="utf-8").splitlines()]
        diag.reward_variance_trace = [r["group_reward_variance"] for r in records if r["type"] == "policy"]
        diag.write_csv(out)
        _write_json(out / "diagnostics.json", {**diag.to_dict(), "training": diagnostics_report(records),
                                               "summary": summary})
    return {"report": report, "diagnostics": diag, "summary": summary, "trainer": trainer}


def load_checkpoint(checkpoint, data_dir) -> tuple[RecModel, PreparedData, RunConfig]:
    ck = Path(checkpoint)
    if not (ck / "model.csv").is_file() or not (ck / "config.json").is_file():
        raise RunError(f"missing checkpoint files in {ck}")
    cfg = config_from_dict(json.loads((ck / "config.json").read_text(encoding="utf-8")))
    data = PreparedData.load(data_dir)
    sem = Path(data_dir) / "semantic.txt"
    table = load_semantic_table(sem, data.item_ids) if sem.is_file() else None
    model = RecModel(data.train_graph, table, cfg, np.random.default_rng(0))
    model.load(ad.load_parameters(ck / "model.csv"))
    return model, data, cfg


def evaluate_checkpoint(checkpoint, data_dir, ks=(10, 20)) -> EvalReport:
    model, data, cfg = load_checkpoint(checkpoint, data_dir)
    g = data.train_graph
    z_u, z_i = model.final_embeddings()
    return full_rank_eval(z_u, z_i, g, data.split.test_edges, tuple(ks),
                          user_groups=assign_degree_groups(g.user_degree, cfg.hgpo.num_groups),
                          item_groups=assign_degree_groups(g.item_degree, cfg.hgpo.num_groups))


def popularity_report(data: PreparedData, ks=(10, 20)) -> EvalReport:
    z_u, z_i = popularity_scores(data.train_graph)
    return full_rank_eval(z_u, z_i, data.train_graph, data.split.test_edges, ks)


def write_reports(run_dirs, out) -> tuple[Path, Path]:
    """Per-bucket performance table and per-run policy behaviour table, one row group per run."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    perf_path, policy_path = out / "bucket_performance.csv", out / "policy_behaviour.csv"
    with open(perf_path, "w", newline="", encoding="utf-8") as fp, \
            open(policy_path, "w", newline="", encoding="utf-8") as fq:
        perf, pol = csv.writer(fp), csv.writer(fq)
        perf.writerow(["run", "side", "bucket", "ndcg@20", "bucket_variance"])
        pol.writerow(["run", "quantity", "key", "value"])
        for run in run_dirs:
            run = Path(run)
            path = run / "metrics.json"
            if not path.is_file():
                raise RunError(f"{run}: no metrics.json")
            m = json.loads(path.read_text(encoding="utf-8"))
            name = run.name
            for side in ("user", "item"):
                table = m[f"{side}_bucket_ndcg@20"]
                var = m["bucket_variance"].get(side, "")
                for b in sorted(table, key=int):
                    perf.writerow([name, side, b, f"{table[b]:.9g}", f"{var:.9g}" if var != "" else ""])
            diag_path = run / "diagnostics.json"
            if diag_path.is_file():
                d = json.loads(diag_path.read_text(encoding="utf-8"))
                for side, table in sorted(d["tau_by_bucket"].items()):
                    for b, v in sorted(table.items(), key=lambda kv: int(kv[0])):
                        pol.writerow([name, "mean_tau", f"{side}:{b}", f"{v:.9g}"])
                for which in ("policy_histogram", "random_histogram"):
                    for label, v in d[which].items():
                        pol.writerow([name, which, label, f"{v:.9g}"])
                pol.writerow([name, "mean_group_reward_variance", "",
                              f"{d['training']['mean_group_reward_variance']:.9g}"])
    return perf_path, policy_path
