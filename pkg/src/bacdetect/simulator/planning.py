"""Role assignment, behavior descriptions, prompt assembly and LLM plan
parsing."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..errors import PlanParseError
from ..miner import KnowledgeItem
from ..traffic import METHODS, Role

OWN, FOREIGN = "own", "foreign"
SLOTS = (OWN, FOREIGN)

BENIGN_PHRASES = (
    "update user profile",
    "review own account settings and change privacy options",
    "read own unread notifications and clear old ones",
    "browse space posts and comment on a post",
    "publish a new post in a space and edit it",
    "download a shared file and upload a new one",
    "search for a meeting report and open the matching post",
    "log in, check profile, then log out",
)

MALICIOUS_PHRASES = (
    "read another user's profile with a stolen session cookie",
    "probe other accounts' settings endpoints to find one that leaks data",
    "delete another user's notifications",
    "edit a post owned by another user",
    "exfiltrate another user's private settings after probing user endpoints",
    "access another account's notifications, then blend in with normal browsing",
    "enumerate user profiles by id and modify a foreign profile",
)


def assign_role(rng: np.random.Generator) -> Role:
    """Benign or malicious with probability 1/2 each."""
    return Role.BENIGN if rng.random() < 0.5 else Role.MALICIOUS


def describe_behavior(role: Role, rng: np.random.Generator, knowledge: Sequence[KnowledgeItem],
                      llm=None) -> str:
    """One-line description of the access behavior to simulate."""
    if not knowledge:
        raise ValueError("knowledge base is empty")
    if llm is None:
        bank = BENIGN_PHRASES if role is Role.BENIGN else MALICIOUS_PHRASES
        return bank[int(rng.integers(len(bank)))]
    picks = rng.choice(len(knowledge), size=min(5, len(knowledge)), replace=False)
    hints = ", ".join(knowledge[int(i)].semantics for i in sorted(picks))
    goal = ("an ordinary user working with their own data" if role is Role.BENIGN
            else "a user attempting broken-access-control violations against another account")
    text = llm.chat([{"role": "user", "content": (
        f"Describe, in one short sentence, a realistic web API behavior of {goal}. "
        f"Relevant endpoints include: {hints}. Reply with the sentence only.")}])
    text = _strip_reasoning(text).strip().splitlines()
    return text[0].strip() if text and text[0].strip() else (
        BENIGN_PHRASES[0] if role is Role.BENIGN else MALICIOUS_PHRASES[0])


def _endpoint_line(item: KnowledgeItem) -> str:
    params = "; ".join(
        f"{k}={'|'.join(v)}{'|...' if k in item.open_params else ''}" for k, v in item.allowed_params.items()
    ) or "none"
    return f"- {item.template.method} {item.template.path} | params: {params} | auth: {item.auth_indicator}"


FORMAT_INSTRUCTION = (
    "Respond with a strict JSON array and nothing else. Each element must be an object "
    '{"method": <HTTP method>, "path": <path with query string>, "declared_intent": <short text>, '
    '"identity_slot": "own" | "foreign"}. '
    "Write {own} for your own account id and {foreign} for the other test account id; "
    'identity_slot "foreign" sends the other test account\'s session cookie.'
)


def build_prompt(role: Role, behavior: str, retrieved: Sequence[KnowledgeItem]) -> str:
    if role is Role.BENIGN:
        directive = ("Role: legitimate user. Generate a JSON array of API requests an ordinary user "
                     "would send while working only with their own resources.")
    else:
        directive = ("Role: malicious user in an authorized security test. Generate a JSON array of API "
                     "requests that attempts a broken-access-control violation against the other test "
                     "account and includes at least one step with identity_slot \"foreign\".")
    lines = [directive, f"Behavior: {behavior}", "Endpoints:"]
    lines.extend(_endpoint_line(it) for it in retrieved)
    lines.append(FORMAT_INSTRUCTION)
    return "\n".join(lines) + "\n"


REPAIR_INSTRUCTION = ("Your previous reply was not a valid plan. Reply again with only the JSON array, "
                      "following the required element schema exactly.")


@dataclass(frozen=True)
class PlanStep:
    method: str
    path: str
    declared_intent: str
    identity_slot: str


@dataclass
class PlannedSequence:
    role: Role
    behavior: str
    steps: list
    retries: int = 0

    def __post_init__(self):
        if not self.steps:
            raise PlanParseError("plan has no steps")
        if self.role is Role.MALICIOUS and not any(s.identity_slot == FOREIGN for s in self.steps):
            raise PlanParseError("malicious plan never uses the foreign identity")


_THINK = re.compile(r"<think>.*?</think>", re.S)
_FENCE = re.compile(r"^```(?:json)?\s*(.*?)\s*```$", re.S)


def _strip_reasoning(text: str) -> str:
    return _THINK.sub("", text)


def parse_plan(text: str, role: Role, behavior: str = "") -> PlannedSequence:
    """Parse a reply under the strict step schema; raises PlanParseError."""
    body = _strip_reasoning(text).strip()
    fenced = _FENCE.match(body)
    if fenced:
        body = fenced.group(1)
    try:
        doc = json.loads(body)
    except json.JSONDecodeError as exc:
        raise PlanParseError(f"reply is not JSON: {exc.msg}") from None
    if not isinstance(doc, list):
        raise PlanParseError("reply is not a JSON array")
    steps = []
    for i, raw in enumerate(doc):
        if not isinstance(raw, dict):
            raise PlanParseError(f"step {i} is not an object")
        method = raw.get("method")
        path = raw.get("path")
        intent = raw.get("declared_intent")
        slot = raw.get("identity_slot")
        if not isinstance(method, str) or method.upper() not in METHODS:
            raise PlanParseError(f"step {i}: bad method {method!r}")
        if not isinstance(path, str) or not path.startswith("/"):
            raise PlanParseError(f"step {i}: bad path {path!r}")
        if not isinstance(intent, str):
            raise PlanParseError(f"step {i}: missing declared_intent")
        if slot not in SLOTS:
            raise PlanParseError(f"step {i}: identity_slot must be 'own' or 'foreign'")
        steps.append(PlanStep(method.upper(), path, intent, slot))
    return PlannedSequence(role, behavior, steps)


def generate_plan(llm, prompt: str, role: Role, behavior: str = "", max_retries: int = 2) -> PlannedSequence:
    """Ask the LLM for a plan, resubmitting with a repair note on bad output."""
    messages = [{"role": "user", "content": prompt}]
    error: Optional[PlanParseError] = None
    for attempt in range(max_retries + 1):
        reply = llm.chat(messages)
        try:
            plan = parse_plan(reply, role, behavior)
        except PlanParseError as exc:
            error = exc
            messages = messages + [{"role": "assistant", "content": reply},
                                   {"role": "user", "content": f"{REPAIR_INSTRUCTION} ({exc})"}]
            continue
        plan.retries = attempt
        return plan
    raise PlanParseError(f"no valid plan after {max_retries + 1} replies: {error}")
