"""Per-sequence static statistics, attribute entropies and the assembled
24-column feature vector."""
from __future__ import annotations

import csv
import io
import math
from collections import Counter
from dataclasses import astuple, dataclass, fields
from typing import Hashable, Optional, Sequence

import numpy as np

from .errors import EmptyInputError, SchemaError
from .traffic import TrafficSequence, atomic_write_text

TRACKED_STATUSES = (200, 403, 401)


@dataclass(frozen=True)
class StaticFeatureVector:
    unique_paths_count: float
    total_paths_count: float
    unique_params_count: float
    total_params_count: float
    consecutive_repeats: float
    avg_path_length: float
    std_path_length: float
    avg_param_count: float
    std_param_count: float
    avg_path_depth: float
    std_path_depth: float
    uniqueness_ratio: float
    status_code_diversity: float


@dataclass(frozen=True)
class EntropyFeatureVector:
    h_method: float
    h_trans_method: float
    h_status_200: float
    h_status_403: float
    h_status_401: float
    h_status_other: float
    h_sum_status: float
    h_trans_status: float
    h_path: float
    h_trans_path: float


STATIC_NAMES = tuple(f.name for f in fields(StaticFeatureVector))
ENTROPY_NAMES = tuple(f.name for f in fields(EntropyFeatureVector))
FEATURE_NAMES = STATIC_NAMES + ENTROPY_NAMES + ("deviation",)


@dataclass(frozen=True)
class FeatureVector:
    static: StaticFeatureVector
    entropy: EntropyFeatureVector
    deviation: float
    label: Optional[bool] = None

    def values(self) -> np.ndarray:
        return np.array(astuple(self.static) + astuple(self.entropy) + (self.deviation,), dtype=float)

    def __len__(self):
        return len(FEATURE_NAMES)


def _mean_std(xs) -> tuple[float, float]:
    arr = np.asarray(xs, dtype=float)
    return float(arr.mean()), float(arr.std())


def static_features(seq: TrafficSequence) -> StaticFeatureVector:
    recs = seq.records
    paths = [r.path for r in recs]
    n = len(paths)
    param_counts = [len(r.query_params) for r in recs]
    unique_paths = len(set(paths))
    return StaticFeatureVector(
        unique_paths,
        n,
        len({k for r in recs for k in r.query_params}),
        sum(param_counts),
        sum(a == b for a, b in zip(paths, paths[1:])),
        *_mean_std([len(p) for p in paths]),
        *_mean_std(param_counts),
        *_mean_std([p.count("/") for p in paths]),
        unique_paths / n,
        len({r.status for r in recs}),
    )


def shannon_entropy(values: Sequence[Hashable]) -> float:
    """Entropy in bits of the empirical category distribution."""
    if len(values) == 0:
        raise EmptyInputError("entropy of an empty stream")
    n = len(values)
    h = -sum((c / n) * math.log2(c / n) for c in Counter(values).values())
    return h + 0.0  # -0.0 -> 0.0


def transition_entropy(values: Sequence[Hashable]) -> float:
    """Entropy in bits of the empirical distribution of adjacent pairs."""
    if len(values) < 2:
        return 0.0
    return shannon_entropy(list(zip(values, values[1:])))


def entropy_features(seq: TrafficSequence) -> EntropyFeatureVector:
    methods = [r.method for r in seq.records]
    statuses = [r.status for r in seq.records]
    paths = [r.path for r in seq.records]
    return EntropyFeatureVector(
        h_method=shannon_entropy(methods),
        h_trans_method=transition_entropy(methods),
        h_status_200=shannon_entropy([s == 200 for s in statuses]),
        h_status_403=shannon_entropy([s == 403 for s in statuses]),
        h_status_401=shannon_entropy([s == 401 for s in statuses]),
        h_status_other=shannon_entropy([s not in TRACKED_STATUSES for s in statuses]),
        h_sum_status=shannon_entropy(statuses),
        h_trans_status=transition_entropy(statuses),
        h_path=shannon_entropy(paths),
        h_trans_path=transition_entropy(paths),
    )


def assemble(static: StaticFeatureVector, entropy: EntropyFeatureVector, deviation: float,
             label: Optional[bool] = None) -> FeatureVector:
    return FeatureVector(static, entropy, float(deviation), label)


# --- feature matrix file -----------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def features_to_tsv(ids: Sequence[str], vectors: Sequence[FeatureVector]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, delimiter="\t", lineterminator="\n")
    w.writerow(("sequence_id",) + FEATURE_NAMES + ("label",))
    for sid, vec in zip(ids, vectors):
        label = "" if vec.label is None else str(int(vec.label))
        w.writerow([sid] + [_fmt(v) for v in vec.values()] + [label])
    return buf.getvalue()


def write_features(path, ids, vectors) -> None:
    atomic_write_text(path, features_to_tsv(ids, vectors))


def read_features(path) -> tuple[list[str], np.ndarray, list[Optional[bool]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh, delimiter="\t"))
    header = tuple(rows[0])
    if header != ("sequence_id",) + FEATURE_NAMES + ("label",):
        raise SchemaError("header", "feature file columns do not match the expected order")
    ids = [r[0] for r in rows[1:]]
    X = np.array([[float(v) for v in r[1:-1]] for r in rows[1:]], dtype=float).reshape(-1, len(FEATURE_NAMES))
    labels = [None if r[-1] == "" else bool(int(r[-1])) for r in rows[1:]]
    return ids, X, labels
