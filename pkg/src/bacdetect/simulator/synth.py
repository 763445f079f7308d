"""Deterministic, LLM-free corpus generator.

Benign sessions walk a sparse workflow graph over the known endpoints with a
single identity. Malicious sessions follow the stolen-cookie pattern: a burst
of probing requests against another account's resources, one access to that
account's data with its session cookie, then ordinary requests with the
attacker's own cookie to blend in.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..demo import identity_token
from ..miner import WILDCARD, KnowledgeItem
from ..traffic import Role, TrafficRecord, TrafficSequence
from .planning import assign_role


@dataclass(frozen=True)
class SynthConfig:
    n_users: int = 60
    benign_len: tuple = (4, 12)
    prefix_len: tuple = (0, 2)
    probe_len: tuple = (2, 6)
    cover_len: tuple = (1, 4)
    probe_block_prob: float = 0.6
    probe_repeat_prob: float = 0.5
    successors: int = 3
    start_ms: int = 1_700_000_000_000
    # the workflow graph belongs to the application, not to one corpus draw
    workflow_seed: int = 0


class _Walker:
    """Sparse Markov chain over knowledge items; fixed per corpus."""

    def __init__(self, m: int, rng: np.random.Generator, successors: int):
        self.entries = rng.choice(m, size=min(3, m), replace=False)
        self.P = np.zeros((m, m))
        for a in range(m):
            nxt = rng.choice(m, size=min(successors, m), replace=False)
            self.P[a, nxt] = rng.dirichlet(np.ones(len(nxt)))

    def walk(self, rng, length, start=None):
        cur = int(rng.choice(self.entries)) if start is None else start
        out = [cur]
        for _ in range(length - 1):
            cur = int(rng.choice(len(self.P), p=self.P[cur]))
            out.append(cur)
        return out


def _fill(item: KnowledgeItem, owner: int, rng) -> str:
    tokens, first = [], True
    for tok in item.template.token_pattern:
        if tok != WILDCARD:
            tokens.append(tok)
        elif first:
            tokens.append(str(owner if rng.random() < 0.5 else owner + 1000 * int(rng.integers(1, 90))))
            first = False
        else:
            tokens.append(str(int(rng.integers(1, 100000))))
    return "/" + "/".join(tokens)


def _query(item: KnowledgeItem, rng) -> dict:
    return {k: vals[int(rng.integers(len(vals)))]
            for k, vals in item.allowed_params.items() if vals and rng.random() < 0.5}


def _rng_range(rng, bounds) -> int:
    return int(rng.integers(bounds[0], bounds[1] + 1))


def synth_generate(knowledge: Sequence[KnowledgeItem], n: int, rng: np.random.Generator,
                   config: SynthConfig = SynthConfig()) -> list[TrafficSequence]:
    if not knowledge:
        raise ValueError("knowledge base is empty")
    if n < 1:
        raise ValueError("n must be >= 1")
    kb = list(knowledge)
    walker = _Walker(len(kb), np.random.default_rng(config.workflow_seed), config.successors)
    scoped = [i for i, it in enumerate(kb) if WILDCARD in it.template.token_pattern] or list(range(len(kb)))
    sensitive = [i for i in scoped if kb[i].auth_indicator in ("authenticated", "privileged")] or scoped
    out = []
    for i in range(n):
        role = assign_role(rng)
        user = int(rng.integers(1, config.n_users + 1))
        own = identity_token(f"cookie-{user}")
        ts = config.start_ms + i * 3_600_000
        steps = []   # (item index, owner account, identity, status)
        if role is Role.BENIGN:
            for j in walker.walk(rng, _rng_range(rng, config.benign_len)):
                steps.append((j, user, own, 200))
        else:
            victim = int(rng.integers(1, config.n_users))
            victim += victim >= user
            stolen = identity_token(f"cookie-{victim}")
            prefix = _rng_range(rng, config.prefix_len)
            if prefix:
                steps.extend((j, user, own, 200) for j in walker.walk(rng, prefix))
            probe = int(rng.choice(scoped))
            for _ in range(_rng_range(rng, config.probe_len)):
                if rng.random() >= config.probe_repeat_prob:
                    probe = int(rng.choice(scoped))
                with_stolen = rng.random() < 0.5
                blocked = rng.random() < config.probe_block_prob
                status = (401 if with_stolen else 403) if blocked else 200
                steps.append((probe, victim, stolen if with_stolen else own, status))
            steps.append((int(rng.choice(sensitive)), victim, stolen, 200))
            steps.extend((j, user, own, 200) for j in walker.walk(rng, _rng_range(rng, config.cover_len)))
        records = []
        for j, owner, ident, status in steps:
            ts += int(rng.integers(200, 5000))
            item = kb[j]
            records.append(TrafficRecord(ts, f"synth-{i:05d}", ident, item.template.method,
                                         _fill(item, owner, rng), _query(item, rng), status))
        malicious = role is Role.MALICIOUS
        exploit = malicious and all(r.status == 200 for r in records)
        out.append(TrafficSequence(f"synth-{i:05d}", tuple(records), role=role,
                                   violation=malicious, exploit=exploit))
    return out
