"""Autoregressive next-event model over endpoint-template tokens and the
position-weighted deviation score derived from it.

Two backends share one interface: an interpolated bigram/unigram model with
additive smoothing (exact, cheap) and a causally masked self-attention
encoder (torch, imported lazily).
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import blob
from .errors import EmptyCorpusError, EmptyInputError, LabelLeakError, SchemaError
from .miner import ApiTemplate, TemplateMatcher
from .traffic import TrafficSequence

SEQMODEL_VERSION = 1


class EventVocabulary:
    """Template tokens occupy [0, m); UNK is m and BOS is m + 1.

    Only the first m + 1 tokens can be predicted, BOS is context-only.
    """

    def __init__(self, templates: Sequence[ApiTemplate]):
        self.templates = [ApiTemplate(t.template_id, t.method, tuple(t.token_pattern), t.support)
                          for t in templates]
        self.tokens = {t.template_id: i for i, t in enumerate(self.templates)}
        self.unk = len(self.templates)
        self.bos = self.unk + 1
        self._matcher = TemplateMatcher(self.templates)

    def __len__(self):
        return self.bos + 1

    @property
    def n_targets(self) -> int:
        return self.unk + 1

    def to_json(self) -> dict:
        return {"templates": [{"template_id": t.template_id, "method": t.method,
                               "pattern": list(t.token_pattern), "support": t.support}
                              for t in self.templates]}

    @classmethod
    def from_json(cls, doc: dict) -> "EventVocabulary":
        return cls([ApiTemplate(d["template_id"], d["method"], tuple(d["pattern"]), d["support"])
                    for d in doc["templates"]])

    def tokenize(self, seq: TrafficSequence) -> list[int]:
        out = [self.bos]
        for rec in seq.records:
            tid = self._matcher(rec)
            out.append(self.unk if tid is None else self.tokens[tid])
        return out


def tokenize(seq: TrafficSequence, vocab: EventVocabulary) -> list[int]:
    return vocab.tokenize(seq)


@dataclass(frozen=True)
class SeqModelConfig:
    backend: str = "ngram"
    delta: float = 0.1
    # attention backend; defaults follow the reported training setup
    embed_dim: int = 128
    heads: int = 4
    layers: int = 2
    ff_dim: int = 512
    epochs: int = 10
    lr: float = 1e-5
    weight_decay: float = 0.01
    batch_size: int = 16
    dropout: float = 0.0
    seed: int = 0
    max_context: int = 256


class NextEventModel:
    backend = "base"

    def __init__(self, vocab: EventVocabulary, config: SeqModelConfig):
        self.vocab = vocab
        self.config = config

    def next_probs(self, context: Sequence[int]) -> np.ndarray:
        """Distribution over the predictable tokens given a context."""
        raise NotImplementedError

    def log_probs(self, tokens: Sequence[int]) -> np.ndarray:
        """ln P(tokens[t] | tokens[:t]) for t = 1 .. len(tokens) - 1."""
        raise NotImplementedError

    def _arrays(self) -> dict:
        raise NotImplementedError

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        meta = {"seqmodel_version": SEQMODEL_VERSION, "backend": self.backend,
                "config": asdict(self.config), "vocabulary": self.vocab.to_json()}
        (directory / "model.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        blob.save(directory / "params.bin", self._arrays(), {"seqmodel_version": SEQMODEL_VERSION})


class NgramModel(NextEventModel):
    """P(b | a) = (c(a, b) + delta * Pu(b)) / (c(a) + delta),
    Pu(b) = (c(b) + delta) / (N + delta * K)

    c(a, b) counts transitions, c(a) counts transitions leaving a, c(b) counts
    b as a target, N is the number of targets and K the number of
    predictable tokens. Every probability is strictly positive for delta > 0.
    """

    backend = "ngram"

    def __init__(self, vocab, config, bigram: np.ndarray, unigram: np.ndarray):
        super().__init__(vocab, config)
        self.bigram = bigram
        self.unigram = unigram
        d = config.delta
        k = vocab.n_targets
        self._pu = (unigram + d) / (unigram.sum() + d * k)
        out = bigram.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            self._table = (bigram + d * self._pu[None, :]) / (out + d)
        # contexts never seen with delta == 0 fall back to the unigram
        empty = (out[:, 0] + d) == 0
        self._table[empty] = self._pu

    def next_probs(self, context):
        return self._table[context[-1]].copy()

    def log_probs(self, tokens):
        tokens = np.asarray(tokens)
        return np.log(self._table[tokens[:-1], tokens[1:]])

    def _arrays(self):
        return {"bigram": self.bigram, "unigram": self.unigram}


def _count_ngrams(corpus: list[list[int]], vocab: EventVocabulary):
    bigram = np.zeros((len(vocab), vocab.n_targets))
    unigram = np.zeros(vocab.n_targets)
    for toks in corpus:
        for a, b in zip(toks, toks[1:]):
            bigram[a, b] += 1
            unigram[b] += 1
    return bigram, unigram


def _check_benign(sequences: Sequence[TrafficSequence]):
    if not sequences:
        raise EmptyCorpusError("no benign sequences to train on")
    for seq in sequences:
        if seq.label is not False:
            raise LabelLeakError(f"sequence {seq.sequence_id} is not labeled benign")


def train(benign_sequences: Sequence[TrafficSequence], templates: Sequence[ApiTemplate],
          config: SeqModelConfig = SeqModelConfig()) -> NextEventModel:
    """Fit the next-event model by maximum likelihood on benign traffic."""
    _check_benign(benign_sequences)
    vocab = EventVocabulary(templates)
    corpus = [vocab.tokenize(s) for s in benign_sequences]
    if config.backend == "ngram":
        return NgramModel(vocab, config, *_count_ngrams(corpus, vocab))
    if config.backend == "attention":
        from .attention import train_attention

        return train_attention(corpus, vocab, config)
    raise ValueError(f"unknown backend {config.backend!r}")


def load(directory) -> NextEventModel:
    directory = Path(directory)
    meta = json.loads((directory / "model.json").read_text())
    if meta.get("seqmodel_version") != SEQMODEL_VERSION:
        raise SchemaError("seqmodel_version", "unsupported sequence model version")
    vocab = EventVocabulary.from_json(meta["vocabulary"])
    config = SeqModelConfig(**meta["config"])
    arrays, _ = blob.load(directory / "params.bin")
    if meta["backend"] == "ngram":
        return NgramModel(vocab, config, arrays["bigram"], arrays["unigram"])
    from .attention import AttentionModel

    return AttentionModel.from_arrays(vocab, config, arrays)


def per_event_scores(model: NextEventModel, seq: TrafficSequence) -> np.ndarray:
    """S_t = -ln P(E_t | E_1..E_{t-1}) for every record, BOS supplying the
    context of the first one."""
    return -model.log_probs(model.vocab.tokenize(seq))


def position_weights(T: int) -> np.ndarray:
    w = np.exp(np.arange(1, T + 1) / T)
    return w / w.sum()


def deviation_score(per_event: Sequence[float]) -> float:
    """Exponentially position-weighted mean of per-event scores; later events
    weigh more."""
    s = np.asarray(per_event, dtype=float)
    if s.size == 0:
        raise EmptyInputError("deviation score of an empty sequence")
    w = np.exp(np.arange(1, s.size + 1) / s.size)
    # offset by the first score so a constant list comes back bit-exact
    return float(s[0] + np.dot(s - s[0], w) / w.sum())


def sequence_deviation(model: NextEventModel, seq: TrafficSequence) -> float:
    return deviation_score(per_event_scores(model, seq))

