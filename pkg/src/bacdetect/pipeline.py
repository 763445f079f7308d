"""The mine -> simulate -> train -> detect/eval phases as plain functions
over a PipelineConfig. The CLI is a thin shell around these."""
from __future__ import annotations

import hashlib
import json
import logging
import shutil
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import seqmodel as sm
from .config import PipelineConfig
from .detector import DetectorConfig, GatedEnsembleModel, load_model, save_model, train_detector
from .errors import DegenerateLabelsError, EmptyCorpusError, TransportError
from .evaluation import MetricReport, api_coverage, confusion, emit_report, metrics, split
from .features import FeatureVector, assemble, entropy_features, static_features, write_features
from .miner import (KnowledgeItem, TemplateMatcher, build_knowledge_base, kb_digest, load_kb,
                    mine_templates, save_kb, templates_of)
from .retrieval import LshConfig
from .simulator import (Account, ChatClient, Credentials, GenerationConfig, GenerationReport,
                        HttpExecutor, generate_with_llm, synth_generate)
from .traffic import TrafficSequence, atomic_write_text, read_records, read_traffic, write_traffic

log = logging.getLogger(__name__)


# --- mine ------------------------------------------------------------------

def run_mine(cfg: PipelineConfig) -> tuple[list[KnowledgeItem], float]:
    records = read_records(cfg.logs)
    if not records:
        raise EmptyCorpusError(f"{cfg.logs} contains no records")
    templates = mine_templates(records, cfg.miner.threshold, cfg.miner.depth)
    matcher = TemplateMatcher(templates)
    coverage = sum(matcher(r) is not None for r in records) / len(records)
    items = build_knowledge_base(records, templates)
    save_kb(cfg.kb, items)
    return items, coverage


# --- simulate ----------------------------------------------------------------

def run_simulate(cfg: PipelineConfig, report_path: Optional[str] = None):
    kb = load_kb(cfg.kb)
    sim = cfg.simulator
    start = time.perf_counter()
    if cfg.offline:
        seqs = synth_generate(kb, sim.n, np.random.default_rng(cfg.seed))
        report = GenerationReport(attempts=len(seqs), kept=len(seqs))
    else:
        if not sim.llm_url or not sim.target_url:
            raise TransportError("no LLM endpoint or target configured; pass --offline for the deterministic generator")
        llm = ChatClient(sim.llm_url, sim.model, sim.temperature, max_retries=sim.max_retries,
                         backoff_ms=sim.backoff_ms)
        creds = Credentials(Account(sim.own_cookie, sim.own_account),
                            Account(sim.foreign_cookie, sim.foreign_account))
        gen = GenerationConfig(n=sim.n, seed=cfg.seed, k=sim.k, parallelism=sim.parallelism,
                               max_attempts=sim.max_attempts, max_retries=sim.max_retries,
                               usd_per_1k_tokens=sim.usd_per_1k_tokens)
        seqs, report = generate_with_llm(kb, llm, HttpExecutor(sim.target_url), creds, gen,
                                         LshConfig(seed=cfg.seed))
    report.wall_ms = (time.perf_counter() - start) * 1000.0
    write_traffic(cfg.corpus, seqs)
    atomic_write_text(report_path or f"{cfg.corpus}.report.json", report.to_json())
    return seqs, report


# --- features ----------------------------------------------------------------

def featurize(seqs: Sequence[TrafficSequence], model: sm.NextEventModel) -> list[FeatureVector]:
    return [assemble(static_features(s), entropy_features(s), sm.sequence_deviation(model, s), s.label)
            for s in seqs]


def matrix(vectors: Sequence[FeatureVector]) -> np.ndarray:
    return np.stack([v.values() for v in vectors]) if vectors else np.zeros((0, 24))


# --- bundle --------------------------------------------------------------------

@dataclass
class Bundle:
    model: GatedEnsembleModel
    seqmodel: sm.NextEventModel
    schema: dict

    def score(self, seqs: Sequence[TrafficSequence]) -> np.ndarray:
        if not seqs:
            return np.zeros(0)
        return self.model.predict_proba(matrix(featurize(seqs, self.seqmodel)))


def _replace_dir(tmp: Path, final: Path) -> None:
    if final.exists():
        old = final.with_name(f".{final.name}.old")
        if old.exists():
            shutil.rmtree(old)
        final.rename(old)
        tmp.rename(final)
        shutil.rmtree(old)
    else:
        tmp.rename(final)


def save_bundle(path, model: GatedEnsembleModel, seqmodel: sm.NextEventModel, extra: dict) -> None:
    final = Path(path)
    final.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(dir=final.parent, prefix=f".{final.name}."))
    try:
        save_model(model, tmp, extra)
        seqmodel.save(tmp / "seqmodel")
        _replace_dir(tmp, final)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def load_bundle(path) -> Bundle:
    model, schema = load_model(path)
    return Bundle(model, sm.load(Path(path) / "seqmodel"), schema)


def bundle_digest(path) -> str:
    h = hashlib.sha256()
    root = Path(path)
    for f in sorted(p for p in root.rglob("*") if p.is_file()):
        h.update(str(f.relative_to(root)).encode())
        h.update(f.read_bytes())
    return h.hexdigest()


# --- train -----------------------------------------------------------------------

def _labeled(seqs):
    out = [s for s in seqs if s.label is not None]
    if len(out) < len(seqs):
        log.warning("ignoring %d unlabeled sequences", len(seqs) - len(out))
    return out


def _split_indices(labels, train_frac, seed):
    if train_frac >= 1.0:
        return list(range(len(labels))), []
    return split(list(range(len(labels))), labels, train_frac, seed)


def seq_config(cfg: PipelineConfig) -> sm.SeqModelConfig:
    t = cfg.training
    return sm.SeqModelConfig(backend=t.backend, delta=t.delta, epochs=t.seq_epochs, lr=t.seq_lr, seed=cfg.seed)


def detector_config(cfg: PipelineConfig) -> DetectorConfig:
    t = cfg.training
    return DetectorConfig(tree_iterations=t.tree_iterations, tree_depth=t.tree_depth, tree_lr=t.tree_lr,
                          neural_epochs=t.neural_epochs, gate_epochs=t.gate_epochs, pos_weight=t.pos_weight,
                          threshold=cfg.evaluation.threshold, seed=cfg.seed)


def run_train(cfg: PipelineConfig) -> tuple[Bundle, MetricReport]:
    kb = load_kb(cfg.kb)
    seqs = _labeled(read_traffic(cfg.corpus, cfg.gap_ms))
    labels = [s.label for s in seqs]
    if len(set(labels)) < 2:
        raise DegenerateLabelsError("corpus must contain both benign and violation sequences")
    train_idx, _ = _split_indices(labels, cfg.evaluation.train_frac, cfg.seed)
    train = [seqs[i] for i in train_idx]
    seqmodel = sm.train([s for s in train if s.label is False], templates_of(kb), seq_config(cfg))
    vectors = featurize(train, seqmodel)
    y = np.array([s.label for s in train], dtype=float)
    model = train_detector(matrix(vectors), y, detector_config(cfg))
    extra = {"kb_sha256": kb_digest(kb),
             "split": {"train_frac": cfg.evaluation.train_frac, "seed": cfg.seed}}
    save_bundle(cfg.bundle, model, seqmodel, extra)
    bundle = load_bundle(cfg.bundle)
    p = bundle.model.predict_proba(matrix(vectors))
    return bundle, metrics(confusion(p >= model.threshold, y > 0.5))


def run_featurize(cfg: PipelineConfig, out) -> int:
    bundle = load_bundle(cfg.bundle)
    seqs = read_traffic(cfg.corpus, cfg.gap_ms)
    write_features(out, [s.sequence_id for s in seqs], featurize(seqs, bundle.seqmodel))
    return len(seqs)


# --- detect / eval ---------------------------------------------------------------

def run_detect(cfg: PipelineConfig, input_path, out_path) -> list[dict]:
    bundle = load_bundle(cfg.bundle)
    seqs = read_traffic(input_path, cfg.gap_ms)
    probs = bundle.score(seqs)
    thr = bundle.model.threshold
    verdicts = [{"sequence_id": s.sequence_id, "probability": float(p),
                 "label": "violation" if p >= thr else "benign"} for s, p in zip(seqs, probs)]
    atomic_write_text(out_path, "".join(json.dumps(v) + "\n" for v in verdicts))
    return verdicts


def run_eval(cfg: PipelineConfig, out_dir, test_path=None) -> MetricReport:
    bundle = load_bundle(cfg.bundle)
    kb = load_kb(cfg.kb)
    corpus = _labeled(read_traffic(cfg.corpus, cfg.gap_ms))
    if test_path is not None:
        test = _labeled(read_traffic(test_path, cfg.gap_ms))
    else:
        sp = bundle.schema.get("split", {})
        frac = cfg.evaluation.train_frac if sp.get("train_frac") is None else sp["train_frac"]
        if frac >= 1.0:
            raise ValueError("bundle was trained on the whole corpus; pass --test or retrain with --train-frac < 1")
        _, test_idx = split(list(range(len(corpus))), [s.label for s in corpus], frac, sp.get("seed", cfg.seed))
        test = [corpus[i] for i in test_idx]
    if not test:
        raise EmptyCorpusError("no labeled test sequences")
    probs = bundle.score(test)
    labels = [bool(s.label) for s in test]
    cm = confusion(probs >= bundle.model.threshold, labels)
    report = metrics(cm)
    report.cov_api = api_coverage(corpus, kb)
    gen_report = Path(f"{cfg.corpus}.report.json")
    gen = json.loads(gen_report.read_text()) if gen_report.exists() else {}
    report.wall_ms = float(gen.get("wall_ms", 0.0))
    report.llm_cost_usd = float(gen.get("llm_cost_usd", 0.0))
    report.extra = {"n_test": len(test), "tp": cm.tp, "fp": cm.fp, "tn": cm.tn, "fn": cm.fn}
    emit_report(report, out_dir, scores=probs, labels=labels)
    return report
