"""The LLM-driven generation loop and its cost/outcome report."""
from __future__ import annotations

import json
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from typing import Optional, Sequence

import numpy as np

from ..errors import PlanParseError
from ..miner import KnowledgeItem
from ..retrieval import LshConfig, index, retrieve
from ..traffic import TrafficSequence
from .execution import Credentials, HttpExecutor, execute_sequence, filter_hallucinations, resolved_plan
from .planning import assign_role, build_prompt, describe_behavior, generate_plan


@dataclass
class GenerationReport:
    attempts: int = 0
    kept: int = 0
    discarded_hallucination: int = 0
    discarded_parse: int = 0
    incomplete: int = 0
    llm_tokens: int = 0
    llm_cost_usd: float = 0.0
    wall_ms: float = 0.0
    discard_reasons: dict = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def count(self, outcome: str, reason: Optional[str] = None):
        with self._lock:
            self.attempts += 1
            setattr(self, outcome, getattr(self, outcome) + 1)
            if reason:
                self.discard_reasons[reason] = self.discard_reasons.get(reason, 0) + 1

    @property
    def conserved(self) -> bool:
        return self.attempts == self.kept + self.discarded_hallucination + self.discarded_parse + self.incomplete

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self) if not f.name.startswith("_")}

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True) + "\n"


@dataclass(frozen=True)
class GenerationConfig:
    n: int = 500
    seed: int = 0
    k: int = 8
    parallelism: int = 1
    max_attempts: Optional[int] = None   # default 5 * n
    max_retries: int = 2
    usd_per_1k_tokens: float = 0.0


def _attempt(i, kb, lsh, llm, executor, credentials, config, report):
    rng = np.random.default_rng([config.seed, i])
    role = assign_role(rng)
    behavior = describe_behavior(role, rng, kb, llm)
    by_id = {it.item_id: it for it in kb}
    retrieved = [by_id[iid] for iid, _ in retrieve(lsh, behavior, config.k)]
    prompt = build_prompt(role, behavior, retrieved)
    try:
        plan = generate_plan(llm, prompt, role, behavior, config.max_retries)
    except PlanParseError:
        report.count("discarded_parse")
        return None
    seq = execute_sequence(plan, executor, credentials, sequence_id=f"sim-{config.seed}-{i:05d}")
    if not seq.complete:
        report.count("incomplete")
        return None
    verdict = filter_hallucinations(seq, role, resolved_plan(plan, credentials))
    if not verdict.keep:
        report.count("discarded_hallucination", verdict.reason)
        return None
    report.count("kept")
    return seq


def generate_with_llm(kb: Sequence[KnowledgeItem], llm, executor: HttpExecutor, credentials: Credentials,
                      config: GenerationConfig = GenerationConfig(),
                      lsh_config: LshConfig = LshConfig()) -> tuple[list[TrafficSequence], GenerationReport]:
    """Run generation cycles until ``config.n`` sequences survive filtering
    or the attempt budget is spent. Transport failures propagate."""
    start = time.perf_counter()
    report = GenerationReport()
    lsh = index(kb, lsh_config)
    budget = config.max_attempts if config.max_attempts is not None else 5 * config.n
    kept: list[TrafficSequence] = []
    i = 0
    with ThreadPoolExecutor(max_workers=max(1, config.parallelism)) as pool:
        while len(kept) < config.n and i < budget:
            wave = min(config.parallelism, config.n - len(kept), budget - i)
            futures = [pool.submit(_attempt, j, kb, lsh, llm, executor, credentials, config, report)
                       for j in range(i, i + wave)]
            i += wave
            kept.extend(seq for seq in (f.result() for f in futures) if seq is not None)
    report.llm_tokens = llm.tokens_used
    report.llm_cost_usd = report.llm_tokens / 1000.0 * config.usd_per_1k_tokens
    report.wall_ms = (time.perf_counter() - start) * 1000.0
    return kept, report
