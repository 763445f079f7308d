"""Confusion-matrix metrics, endpoint coverage of generated traffic,
stratified splitting and report files."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import EmptyInputError, IoError, ShapeError, StratifyError
from .miner import KnowledgeItem, TemplateMatcher, templates_of
from .traffic import TrafficSequence, atomic_write_text

CV_FLOOR = 1e-6


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass
class MetricReport:
    acc: float
    precision: float
    recall: float
    f1: float
    mcc: float
    cov_api: Optional[float] = None
    wall_ms: Optional[float] = None
    llm_cost_usd: Optional[float] = None
    extra: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "extra" and v is not None}
        d.update(self.extra)
        return d


def confusion(predictions: Sequence, labels: Sequence) -> ConfusionMatrix:
    """Positive class is 'violation' (truthy)."""
    if len(predictions) != len(labels):
        raise ShapeError(f"{len(predictions)} predictions vs {len(labels)} labels")
    if len(labels) == 0:
        raise EmptyInputError("no samples to evaluate")
    p = np.asarray(predictions, dtype=bool)
    t = np.asarray(labels, dtype=bool)
    return ConfusionMatrix(int(np.sum(p & t)), int(np.sum(p & ~t)), int(np.sum(~p & ~t)), int(np.sum(~p & t)))


def _ratio(num, den) -> float:
    return num / den if den else 0.0


def metrics(cm: ConfusionMatrix) -> MetricReport:
    """ACC, precision, recall, F1 and MCC; a zero denominator yields 0."""
    tp, fp, tn, fn = cm.tp, cm.fp, cm.tn, cm.fn
    p = _ratio(tp, tp + fp)
    r = _ratio(tp, tp + fn)
    f1 = _ratio(2 * p * r, p + r)
    den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    mcc = (tp * tn - fp * fn) / math.sqrt(den) if den else 0.0
    return MetricReport(acc=_ratio(tp + tn, cm.total), precision=p, recall=r, f1=f1, mcc=mcc)


def coverage_from_counts(freqs: Sequence[float]) -> float:
    """Used-endpoint fraction divided by the coefficient of variation of
    invocation counts (unused endpoints included as zeros)."""
    f = np.asarray(freqs, dtype=float)
    if f.size == 0:
        raise EmptyInputError("no endpoints")
    if f.sum() == 0:
        return 0.0
    used = np.count_nonzero(f) / f.size
    cv = f.std() / f.mean()
    return float(used / max(cv, CV_FLOOR))


def endpoint_counts(traffic: Sequence[TrafficSequence], kb: Sequence[KnowledgeItem]) -> np.ndarray:
    matcher = TemplateMatcher(templates_of(kb))
    pos = {item.item_id: i for i, item in enumerate(kb)}
    f = np.zeros(len(kb))
    for seq in traffic:
        for rec in seq.records:
            tid = matcher(rec)
            if tid is not None:
                f[pos[tid]] += 1
    return f


def api_coverage(traffic: Sequence[TrafficSequence], kb: Sequence[KnowledgeItem]) -> float:
    if not kb:
        raise EmptyInputError("knowledge base is empty")
    return coverage_from_counts(endpoint_counts(traffic, kb))


def split(dataset: Sequence, labels: Sequence, train_frac: float, seed: int):
    """Stratified, seeded train/test split. Returns two lists of indices into
    ``dataset``, each in original order."""
    if not 0 < train_frac < 1:
        raise ValueError("train_frac must lie strictly between 0 and 1")
    if len(dataset) != len(labels):
        raise ShapeError("dataset and labels differ in length")
    rng = np.random.default_rng(seed)
    train, test = [], []
    for cls in sorted(set(labels), key=repr):
        members = [i for i, lab in enumerate(labels) if lab == cls]
        if len(members) < 2:
            raise StratifyError(f"class {cls!r} has fewer than 2 members")
        members = [members[j] for j in rng.permutation(len(members))]
        k = min(max(int(round(train_frac * len(members))), 1), len(members) - 1)
        train.extend(members[:k])
        test.extend(members[k:])
    return sorted(train), sorted(test)


# --- report files ----------------------------------------------------------

_TABLE = (("acc", "ACC"), ("precision", "P"), ("recall", "R"), ("f1", "F1"), ("mcc", "MCC"))
_OPTIONAL = ("cov_api", "wall_ms", "llm_cost_usd")


def markdown_table(report: MetricReport) -> str:
    d = report.as_dict()
    rest = [k for k in _OPTIONAL if k in d]
    rest += sorted(k for k in d if k not in dict(_TABLE) and k not in _OPTIONAL)
    cols = list(_TABLE) + [(k, k) for k in rest]
    head = "| " + " | ".join(h for _, h in cols) + " |"
    sep = "|" + "|".join("---" for _ in cols) + "|"
    row = "| " + " | ".join(_fmt(d[k]) for k, _ in cols) + " |"
    return "\n".join([head, sep, row]) + "\n"


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (int, float)) else str(v)


def emit_report(report: MetricReport, sink, scores: Optional[Sequence[float]] = None,
                labels: Optional[Sequence] = None) -> list[Path]:
    """Write ``metrics.json`` and ``report.md`` (plus ``scores.png`` when
    scores are given) into the ``sink`` directory."""
    sink = Path(sink)
    try:
        sink.mkdir(parents=True, exist_ok=True)
        files = [sink / "metrics.json", sink / "report.md"]
        atomic_write_text(files[0], json.dumps(report.as_dict(), indent=2, sort_keys=True) + "\n")
        atomic_write_text(files[1], "# Detection metrics\n\n" + markdown_table(report))
        if scores is not None:
            files.append(_histogram(sink / "scores.png", scores, labels))
    except OSError as exc:
        raise IoError(f"cannot write report to {sink}: {exc}") from exc
    return files


def _histogram(path: Path, scores, labels) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    scores = np.asarray(scores, dtype=float)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    bins = np.linspace(0, 1, 21)
    if labels is None:
        ax.hist(scores, bins=bins)
    else:
        lab = np.asarray(labels, dtype=bool)
        ax.hist(scores[~lab], bins=bins, alpha=0.6, label="benign")
        ax.hist(scores[lab], bins=bins, alpha=0.6, label="violation")
        ax.legend()
    ax.set_xlabel("violation probability")
    ax.set_ylabel("sequences")
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def load_report(path) -> MetricReport:
    d = json.loads(Path(path).read_text())
    known = {k: d.pop(k) for k in ("acc", "precision", "recall", "f1", "mcc", "cov_api", "wall_ms", "llm_cost_usd") if k in d}
    return MetricReport(**known, extra=d)
