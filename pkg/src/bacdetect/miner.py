"""Fixed-depth prefix-tree template mining over request paths and the
knowledge base built on top of the mined templates."""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .errors import EmptyCorpusError, InternalConsistencyError, SchemaError
from .traffic import TrafficRecord, atomic_write_text

WILDCARD = "<*>"
PARAM_VALUE_CAP = 64
KB_VERSION = 1

_MASKS = (
    re.compile(r"^\d+$"),
    re.compile(r"^[0-9a-fA-F]{16,}$"),
    re.compile(r"^[0-9a-fA-F]{8}-[0-9a-fA-F]{4}-[0-9a-fA-F]{4}-[0-9a-fA-F]{4}-[0-9a-fA-F]{12}$"),
)

AUTH_LEVELS = ("open", "authenticated", "privileged", "unknown")


def path_tokens(path: str) -> list[str]:
    return path.strip("/").split("/")


def premask(tokens: Iterable[str]) -> list[str]:
    return [WILDCARD if any(m.match(t) for m in _MASKS) else t for t in tokens]


def render(tokens: Sequence[str]) -> str:
    return "/" + "/".join(tokens)


@dataclass
class ApiTemplate:
    template_id: int
    method: str
    token_pattern: tuple
    support: int = 1

    @property
    def path(self) -> str:
        return render(self.token_pattern)

    @property
    def literal_count(self) -> int:
        return sum(t != WILDCARD for t in self.token_pattern)

    def __str__(self):
        return f"{self.method} {self.path}"


def _similarity(pattern: Sequence[str], tokens: Sequence[str]) -> float:
    # wildcard positions are not evidence of similarity
    same = sum(p == t for p, t in zip(pattern, tokens) if p != WILDCARD)
    return same / len(tokens)


def mine_templates(records: Sequence[TrafficRecord], similarity_threshold: float = 0.5,
                   depth: int = 4) -> list[ApiTemplate]:
    """Cluster request paths into endpoint templates.

    Records are routed by (method, token count, first ``depth`` tokens) after
    ID-like tokens are masked; inside a leaf a record joins the most similar
    cluster if the share of equal literal positions reaches the threshold,
    and positions that disagree become wildcards.
    """
    if not records:
        raise EmptyCorpusError("no records to mine")
    if depth < 2:
        raise ValueError("depth must be at least 2")
    if not 0 < similarity_threshold <= 1:
        raise ValueError("similarity_threshold must lie in (0, 1]")

    leaves: dict[tuple, list[ApiTemplate]] = {}
    templates: list[ApiTemplate] = []
    for rec in records:
        tokens = premask(path_tokens(rec.path))
        key = (rec.method, len(tokens), tuple(tokens[:depth]))
        leaf = leaves.setdefault(key, [])
        best, best_sim = None, -1.0
        for tpl in leaf:
            sim = _similarity(tpl.token_pattern, tokens)
            if sim > best_sim:
                best, best_sim = tpl, sim
        if best is not None and best_sim >= similarity_threshold:
            best.token_pattern = tuple(
                p if p == t else WILDCARD for p, t in zip(best.token_pattern, tokens))
            best.support += 1
        else:
            tpl = ApiTemplate(len(templates), rec.method, tuple(tokens))
            leaf.append(tpl)
            templates.append(tpl)
    return templates


class TemplateMatcher:
    """Frozen template set indexed by (method, token count)."""

    def __init__(self, templates: Iterable[ApiTemplate]):
        self.templates = list(templates)
        self._index: dict[tuple, list[ApiTemplate]] = {}
        for tpl in self.templates:
            self._index.setdefault((tpl.method, len(tpl.token_pattern)), []).append(tpl)
        # most specific first, then oldest
        for bucket in self._index.values():
            bucket.sort(key=lambda t: (-t.literal_count, t.template_id))

    def match(self, method: str, path: str) -> Optional[int]:
        tokens = path_tokens(path)
        for tpl in self._index.get((method, len(tokens)), ()):
            if all(p == WILDCARD or p == t for p, t in zip(tpl.token_pattern, tokens)):
                return tpl.template_id
        return None

    def __call__(self, record: TrafficRecord) -> Optional[int]:
        return self.match(record.method, record.path)


def match_template(record: TrafficRecord, templates: Sequence[ApiTemplate]) -> Optional[int]:
    """Return the id of the template covering ``record``, or None.

    If several templates qualify the one with the most literal tokens wins.
    """
    return TemplateMatcher(templates)(record)


# --- knowledge base --------------------------------------------------------

@dataclass
class KnowledgeItem:
    template: ApiTemplate
    semantics: str = ""
    allowed_params: dict = field(default_factory=dict)
    open_params: frozenset = frozenset()
    auth_indicator: str = "unknown"

    @property
    def item_id(self) -> int:
        return self.template.template_id


def _auth_indicator(matches: list[TrafficRecord]) -> str:
    ok = [r for r in matches if r.status == 200]
    ok_ids = {r.identity for r in ok}
    for r in matches:
        if r.status == 403 and ok_ids - {r.identity}:
            return "privileged"
    if any(not r.identity for r in ok):
        return "open"
    if ok:
        return "authenticated"
    return "unknown"


def build_knowledge_base(records: Sequence[TrafficRecord],
                         templates: Sequence[ApiTemplate]) -> list[KnowledgeItem]:
    matcher = TemplateMatcher(templates)
    matched: dict[int, list[TrafficRecord]] = {t.template_id: [] for t in templates}
    for rec in records:
        tid = matcher(rec)
        if tid is not None:
            matched[tid].append(rec)
    items = []
    for tpl in templates:
        recs = matched[tpl.template_id]
        if not recs:
            raise InternalConsistencyError(f"template {tpl.template_id} ({tpl}) matches no record")
        params: dict[str, list] = {}
        open_keys = set()
        for rec in recs:
            for key, value in rec.query_params.items():
                values = params.setdefault(key, [])
                if value in values or key in open_keys:
                    continue
                if len(values) >= PARAM_VALUE_CAP:
                    open_keys.add(key)
                else:
                    values.append(value)
        items.append(KnowledgeItem(
            template=ApiTemplate(tpl.template_id, tpl.method, tuple(tpl.token_pattern), tpl.support),
            semantics=str(tpl),
            allowed_params={k: tuple(v) for k, v in params.items()},
            open_params=frozenset(open_keys),
            auth_indicator=_auth_indicator(recs),
        ))
    return items


def templates_of(items: Iterable[KnowledgeItem]) -> list[ApiTemplate]:
    return [item.template for item in items]


def kb_to_json(items: Sequence[KnowledgeItem]) -> str:
    doc = {
        "kb_version": KB_VERSION,
        "items": [
            {
                "template_id": it.template.template_id,
                "method": it.template.method,
                "pattern": list(it.template.token_pattern),
                "support": it.template.support,
                "semantics": it.semantics,
                "allowed_params": {
                    k: {"values": list(v), "open_ended": k in it.open_params}
                    for k, v in it.allowed_params.items()
                },
                "auth": it.auth_indicator,
            }
            for it in items
        ],
    }
    return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"


def kb_from_json(text: str) -> list[KnowledgeItem]:
    doc = json.loads(text)
    if doc.get("kb_version") != KB_VERSION:
        raise SchemaError("kb_version", f"unsupported knowledge base version {doc.get('kb_version')!r}")
    items = []
    for raw in doc["items"]:
        params = raw.get("allowed_params", {})
        items.append(KnowledgeItem(
            template=ApiTemplate(raw["template_id"], raw["method"], tuple(raw["pattern"]), raw["support"]),
            semantics=raw.get("semantics", ""),
            allowed_params={k: tuple(v["values"]) for k, v in params.items()},
            open_params=frozenset(k for k, v in params.items() if v.get("open_ended")),
            auth_indicator=raw.get("auth", "unknown"),
        ))
    return items


def save_kb(path, items: Sequence[KnowledgeItem]) -> None:
    atomic_write_text(path, kb_to_json(items))


def load_kb(path) -> list[KnowledgeItem]:
    with open(path, encoding="utf-8") as fh:
        return kb_from_json(fh.read())


def kb_digest(items: Sequence[KnowledgeItem]) -> str:
    return hashlib.sha256(kb_to_json(items).encode("utf-8")).hexdigest()
