"""A small multi-user web application used as a simulation target and as a
source of access logs with known endpoint ground truth.

Numeric resource ids encode their owner: id % 1000 is the owning account.
"""
from __future__ import annotations

import hashlib
import uuid
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .traffic import TrafficRecord


@dataclass(frozen=True)
class Endpoint:
    method: str
    pattern: tuple          # tokens; variables are written "{name}"
    auth: str = "user"      # open | user | owner | admin
    params: tuple = ()      # (key, candidate values)

    @property
    def template_tokens(self) -> tuple:
        return tuple("<*>" if t.startswith("{") else t for t in self.pattern)


def _ep(method, path, auth="user", params=()):
    return Endpoint(method, tuple(path.strip("/").split("/")), auth, params)


ENDPOINTS = (
    _ep("POST", "/api/auth/login", "open"),
    _ep("POST", "/api/auth/logout"),
    _ep("GET", "/api/users/{uid}/profile", "owner"),
    _ep("PUT", "/api/users/{uid}/profile", "owner"),
    _ep("GET", "/api/users/{uid}/settings", "owner", (("tab", ("general", "privacy", "security")),)),
    _ep("PATCH", "/api/users/{uid}/settings", "owner"),
    _ep("GET", "/api/users/{uid}/notifications", "owner", (("unread", ("true", "false")),)),
    _ep("DELETE", "/api/users/{uid}/notifications/{nid}", "owner"),
    _ep("GET", "/api/spaces", "user", (("page", ("1", "2", "3")),)),
    _ep("GET", "/api/spaces/{sid}/posts", "user", (("page", ("1", "2")), ("sort", ("new", "top")))),
    _ep("POST", "/api/spaces/{sid}/posts"),
    _ep("GET", "/api/posts/{pid}"),
    _ep("PUT", "/api/posts/{pid}", "owner"),
    _ep("DELETE", "/api/posts/{pid}", "owner"),
    _ep("GET", "/api/posts/{pid}/comments", "user", (("page", ("1", "2")),)),
    _ep("POST", "/api/posts/{pid}/comments"),
    _ep("GET", "/api/files/{fid}/download/{name}", "user"),
    _ep("POST", "/api/files/upload"),
    _ep("GET", "/api/admin/users", "admin", (("page", ("1", "2")),)),
    _ep("GET", "/api/search", "open", (("q", ("alice", "report", "meeting", "budget", "holiday")),)),
)

_FILE_WORDS = ("report", "minutes", "invoice", "slides", "notes", "draft", "summary")


def identity_token(secret: str) -> str:
    """Opaque pre-hashed identity derived from a session cookie."""
    return hashlib.sha256(secret.encode("utf-8")).hexdigest()[:16] if secret else ""


@dataclass
class DemoApp:
    """Ownership-enforcing request handler."""

    endpoints: tuple = ENDPOINTS
    sessions: dict = field(default_factory=dict)   # cookie -> account id
    admins: frozenset = frozenset({1})

    def route(self, method: str, path: str) -> Optional[tuple[Endpoint, dict]]:
        tokens = path.strip("/").split("/")
        for ep in self.endpoints:
            if ep.method != method or len(ep.pattern) != len(tokens):
                continue
            bound = {}
            for p, t in zip(ep.pattern, tokens):
                if p.startswith("{"):
                    bound[p[1:-1]] = t
                elif p != t:
                    break
            else:
                return ep, bound
        return None

    def handle(self, method: str, path: str, account: Optional[int]) -> int:
        hit = self.route(method, path)
        if hit is None:
            return 404
        ep, bound = hit
        if ep.auth == "open":
            return 200
        if account is None:
            return 401
        if ep.auth == "admin":
            return 200 if account in self.admins else 403
        if ep.auth == "owner":
            first = next(iter(bound.values()))
            if not first.isdigit():
                return 400
            return 200 if int(first) % 1000 == account else 403
        return 200

    def handle_cookie(self, method: str, path: str, cookie: Optional[str]) -> int:
        return self.handle(method, path, self.sessions.get(cookie) if cookie else None)


def _fill(ep: Endpoint, owner: int, rng: np.random.Generator) -> str:
    out = []
    for tok in ep.pattern:
        if tok == "{fid}":
            out.append(str(uuid.UUID(bytes=rng.bytes(16), version=4)))
        elif tok == "{name}":
            out.append(f"{_FILE_WORDS[rng.integers(len(_FILE_WORDS))]}-{rng.integers(1, 50)}.pdf")
        elif tok in ("{uid}",):
            out.append(str(owner))
        elif tok.startswith("{"):
            out.append(str(owner + 1000 * int(rng.integers(1, 90))))
        else:
            out.append(tok)
    return "/" + "/".join(out)


def generate_log(n_lines: int = 2000, seed: int = 0, n_users: int = 40,
                 start_ms: int = 1_700_000_000_000) -> list[TrafficRecord]:
    """Access-log records that exercise every endpoint with randomized ids.

    Mostly owners acting on their own resources, with a sprinkling of
    foreign-resource and logged-out requests so statuses vary.
    """
    rng = np.random.default_rng(seed)
    app = DemoApp()
    records = []
    ts = start_ms
    for i in range(n_lines):
        ep = ENDPOINTS[i % len(ENDPOINTS)] if i < len(ENDPOINTS) else ENDPOINTS[rng.integers(len(ENDPOINTS))]
        user = int(rng.integers(1, n_users + 1))
        roll = rng.random()
        account: Optional[int] = user if roll > 0.05 else None
        owner = user if roll < 0.9 else int(rng.integers(1, n_users + 1))
        path = _fill(ep, owner, rng)
        query = {k: str(vals[rng.integers(len(vals))]) for k, vals in ep.params if rng.random() < 0.6}
        ts += int(rng.integers(50, 4000))
        records.append(TrafficRecord(
            timestamp=ts,
            session_id=f"sess-{user}",
            identity=identity_token(f"cookie-{account}") if account is not None else "",
            method=ep.method,
            path=path,
            query_params=query,
            status=app.handle(ep.method, path, account),
        ))
    return records
