"""Serial execution of planned requests against a target and the
hallucination filter applied to the resulting traffic."""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Optional, Sequence
from urllib.parse import urlsplit

import requests

from ..demo import identity_token
from ..traffic import NO_RESPONSE, Role, TrafficRecord, TrafficSequence, normalize_path
from .planning import FOREIGN, OWN, PlannedSequence

BENIGN_OK = frozenset({200})
MALICIOUS_OK = frozenset({200, 401, 403})
ERROR_CODES = frozenset({400, 404})


@dataclass(frozen=True)
class Account:
    cookie: str
    account_id: str

    @property
    def identity(self) -> str:
        return identity_token(self.cookie)


@dataclass(frozen=True)
class Credentials:
    """The two researcher-controlled test accounts."""

    own: Account
    foreign: Account

    def slot(self, name: str) -> Account:
        return self.own if name == OWN else self.foreign


def resolve_step(path: str, credentials: Credentials) -> str:
    return (path.replace("{own}", credentials.own.account_id)
                .replace("{foreign}", credentials.foreign.account_id))


def resolved_plan(plan: PlannedSequence, credentials: Credentials) -> list[tuple[str, str, str]]:
    """(method, normalized path, identity slot) for every planned step."""
    return [(s.method, normalize_path(resolve_step(s.path, credentials))[0], s.identity_slot)
            for s in plan.steps]


class HttpExecutor:
    """Sends plain HTTP/1.1 requests with the slot's cookie attached."""

    def __init__(self, base_url: str, cookie_name: str = "session", timeout_s: float = 10.0,
                 session: Optional[requests.Session] = None, clock: Callable[[], float] = time.time):
        self.base_url = base_url.rstrip("/")
        self.cookie_name = cookie_name
        self.timeout_s = timeout_s
        self.session = session or requests.Session()
        self.clock = clock

    def send(self, method: str, target: str, cookie: str) -> tuple[int, str]:
        """Return (status, final request target). Status 0 when no response."""
        try:
            resp = self.session.request(method, self.base_url + target, timeout=self.timeout_s,
                                        headers={"Cookie": f"{self.cookie_name}={cookie}"})
        except requests.RequestException:
            return NO_RESPONSE, target
        final = urlsplit(resp.url)
        return resp.status_code, final.path + (f"?{final.query}" if final.query else "")

    def now_ms(self) -> int:
        return int(self.clock() * 1000)


def execute_sequence(plan: PlannedSequence, executor: HttpExecutor, credentials: Credentials,
                     sequence_id: str = "sim") -> TrafficSequence:
    """Run the plan's steps strictly in order, one record per step."""
    records = []
    last_ts = 0
    for step in plan.steps:
        account = credentials.slot(step.identity_slot)
        target = resolve_step(step.path, credentials)
        status, final = executor.send(step.method, target, account.cookie)
        path, query = normalize_path(final)
        last_ts = max(last_ts, executor.now_ms())
        records.append(TrafficRecord(last_ts, sequence_id, account.identity, step.method, path, query, status))
    malicious = plan.role is Role.MALICIOUS
    escaped = all(r.status == 200 for r in records)
    return TrafficSequence(sequence_id, tuple(records), role=plan.role,
                           violation=malicious, exploit=malicious and escaped)


@dataclass(frozen=True)
class Verdict:
    keep: bool
    reason: Optional[str] = None

    def __bool__(self):
        return self.keep


KEEP = Verdict(True)


def filter_hallucinations(sequence: TrafficSequence, role: Role,
                          planned: Optional[Sequence[tuple]] = None) -> Verdict:
    """Decide whether an executed sequence is usable training data.

    Benign traffic must be all 200; malicious traffic may only see 200, 401
    or 403. Any 400/404, missing response, or request that deviates from the
    plan (different method/path, or a benign plan borrowing the foreign
    identity) discards the whole sequence.
    """
    statuses = [r.status for r in sequence.records]
    if NO_RESPONSE in statuses:
        return Verdict(False, "no-response")
    if any(s in ERROR_CODES for s in statuses):
        return Verdict(False, "error-code")
    if planned is not None:
        executed = [(r.method, r.path) for r in sequence.records]
        if len(planned) != len(executed) or any(
                (p[0], p[1]) != e for p, e in zip(planned, executed)):
            return Verdict(False, "intent-contradiction")
        if role is Role.BENIGN and any(len(p) > 2 and p[2] == FOREIGN for p in planned):
            return Verdict(False, "intent-contradiction")
    allowed = BENIGN_OK if role is Role.BENIGN else MALICIOUS_OK
    if not all(s in allowed for s in statuses):
        return Verdict(False, "status-not-accepted")
    return KEEP
