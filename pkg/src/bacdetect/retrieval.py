"""MinHash/LSH index over knowledge items for description-to-endpoint lookup."""
from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EmptyIndexError
from .miner import WILDCARD, KnowledgeItem

# Prime just above 2**32: with operands below 2**32, a*x + b stays inside uint64.
_PRIME = np.uint64(4294967311)
_WORD = re.compile(r"[a-z0-9]+")


@dataclass(frozen=True)
class LshConfig:
    num_hashes: int = 128
    bands: int = 32
    rows_per_band: int = 4
    shingle_width: int = 1
    seed: int = 0
    # scan every item when buckets yield fewer than k candidates
    exhaustive_fallback: bool = True

    def __post_init__(self):
        if self.num_hashes != self.bands * self.rows_per_band:
            raise ValueError("num_hashes must equal bands * rows_per_band")
        if min(self.num_hashes, self.bands, self.rows_per_band, self.shingle_width) < 1:
            raise ValueError("LSH parameters must be positive")


def text_tokens(text: str) -> list[str]:
    """Lowercased alphanumeric words with a crude plural fold ("users" -> "user")."""
    words = _WORD.findall(text.lower())
    return [w[:-1] if len(w) > 3 and w.endswith("s") and not w.endswith("ss") else w for w in words]


def item_tokens(item: KnowledgeItem) -> list[str]:
    parts = [t for t in item.template.token_pattern if t != WILDCARD]
    parts.append(item.semantics)
    parts.extend(item.allowed_params)
    return text_tokens(" ".join(parts))


def shingles(tokens: Sequence[str], width: int = 1) -> frozenset:
    if not tokens:
        return frozenset()
    if len(tokens) <= width:
        return frozenset([" ".join(tokens)])
    return frozenset(" ".join(tokens[i:i + width]) for i in range(len(tokens) - width + 1))


def jaccard(a: frozenset, b: frozenset) -> float:
    if not a and not b:
        return 0.0
    return len(a & b) / len(a | b)


def _token_hash(token: str) -> int:
    return int.from_bytes(hashlib.blake2b(token.encode("utf-8"), digest_size=4).digest(), "little")


class LshIndex:
    """Banded MinHash index. Immutable once built."""

    def __init__(self, config: LshConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        self._a = rng.integers(1, 2**32, size=config.num_hashes, dtype=np.uint64)
        self._b = rng.integers(0, 2**32, size=config.num_hashes, dtype=np.uint64)
        self.items: dict[int, KnowledgeItem] = {}
        self.token_sets: dict[int, frozenset] = {}
        self.signatures: dict[int, np.ndarray] = {}
        self.buckets: dict[tuple, set] = {}

    @property
    def num_hashes(self):
        return self.config.num_hashes

    @property
    def bands(self):
        return self.config.bands

    @property
    def rows_per_band(self):
        return self.config.rows_per_band

    def signature(self, shingle_set: frozenset) -> np.ndarray:
        sig = np.full(self.config.num_hashes, np.iinfo(np.uint64).max, dtype=np.uint64)
        for sh in sorted(shingle_set):
            x = np.uint64(_token_hash(sh))
            np.minimum(sig, (self._a * x + self._b) % _PRIME, out=sig)
        return sig

    def band_keys(self, sig: np.ndarray):
        r = self.config.rows_per_band
        for band in range(self.config.bands):
            yield band, sig[band * r:(band + 1) * r].tobytes()

    def _add(self, item: KnowledgeItem):
        iid = item.item_id
        sh = shingles(item_tokens(item), self.config.shingle_width)
        sig = self.signature(sh)
        self.items[iid] = item
        self.token_sets[iid] = sh
        self.signatures[iid] = sig
        for key in self.band_keys(sig):
            self.buckets.setdefault(key, set()).add(iid)

    def estimate_jaccard(self, a: int, b: int) -> float:
        return float(np.mean(self.signatures[a] == self.signatures[b]))


def index(items: Sequence[KnowledgeItem], config: LshConfig = LshConfig()) -> LshIndex:
    if not items:
        raise EmptyIndexError("cannot index an empty knowledge base")
    idx = LshIndex(config)
    for item in items:
        idx._add(item)
    return idx


def retrieve(idx: LshIndex, description: str, k: int = 8) -> list[tuple[int, float]]:
    """Rank indexed items against a free-text description.

    Bucket collisions nominate candidates; candidates are re-ranked by exact
    Jaccard similarity (descending, ties by item id). Zero scores are dropped.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    query = shingles(text_tokens(description), idx.config.shingle_width)
    if not query:
        return []
    sig = idx.signature(query)
    candidates = set()
    for key in idx.band_keys(sig):
        candidates |= idx.buckets.get(key, set())
    if len(candidates) < k and idx.config.exhaustive_fallback:
        candidates = set(idx.items)
    scored = [(iid, jaccard(query, idx.token_sets[iid])) for iid in candidates]
    scored = [s for s in scored if s[1] > 0]
    scored.sort(key=lambda s: (-s[1], s[0]))
    return scored[:k]
