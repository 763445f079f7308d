"""Request/sequence data model, path normalization, line-delimited I/O and
session windowing."""
from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Optional

from .errors import ParseError, RangeError, SchemaError

METHODS = ("GET", "POST", "PUT", "PATCH", "DELETE", "HEAD", "OPTIONS")
DEFAULT_GAP_MS = 300_000
# Synthetic status for a request that never got a response.
NO_RESPONSE = 0


class Role(str, Enum):
    BENIGN = "benign"
    MALICIOUS = "malicious"
    UNLABELED = "unlabeled"


@dataclass(frozen=True)
class TrafficRecord:
    timestamp: int
    session_id: str
    identity: str
    method: str
    path: str
    query_params: dict = field(default_factory=dict)
    status: int = 200
    template_id: Optional[int] = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise SchemaError("m", f"unknown HTTP method {self.method!r}")
        if not self.path.startswith("/") or "?" in self.path or "#" in self.path:
            raise SchemaError("path", f"path is not normalized: {self.path!r}")
        if self.status != NO_RESPONSE and not 100 <= self.status <= 599:
            raise RangeError(f"status {self.status} outside [100, 599]")

    @property
    def target(self) -> str:
        """Path plus query string, as it would appear on the request line."""
        if not self.query_params:
            return self.path
        return self.path + "?" + "&".join(f"{k}={v}" for k, v in self.query_params.items())


@dataclass(frozen=True)
class TrafficSequence:
    sequence_id: str
    records: tuple
    role: Role = Role.UNLABELED
    violation: Optional[bool] = None
    exploit: Optional[bool] = None

    def __post_init__(self):
        if not self.records:
            raise SchemaError("records", "a sequence needs at least one record")
        # sorted() is stable, so equal timestamps keep input order
        object.__setattr__(self, "records", tuple(sorted(self.records, key=lambda r: r.timestamp)))
        object.__setattr__(self, "role", Role(self.role))
        if self.exploit and not self.violation:
            raise SchemaError("exploit", "exploit=true requires violation=true")

    def __len__(self):
        return len(self.records)

    @property
    def label(self) -> Optional[bool]:
        """Binary detection target: violation flag, falling back to the role."""
        if self.violation is not None:
            return bool(self.violation)
        if self.role is Role.UNLABELED:
            return None
        return self.role is Role.MALICIOUS

    @property
    def complete(self) -> bool:
        return all(r.status != NO_RESPONSE for r in self.records)

    def relabel(self, **changes) -> "TrafficSequence":
        return replace(self, **changes)


def normalize_path(raw: str) -> tuple[str, dict]:
    """Split a request target into a normalized path and ordered query map.

    Paths are compared byte-wise, so nothing is percent-decoded. A trailing
    slash is stripped unless the path is the root. Later duplicate query keys
    overwrite earlier values but keep the first key position.
    """
    if not raw:
        raise ParseError("empty request target")
    raw = raw.split("#", 1)[0]
    path, _, query = raw.partition("?")
    if "://" in path:
        # absolute-form target: drop scheme and authority
        after = path.split("://", 1)[1]
        slash = after.find("/")
        path = after[slash:] if slash >= 0 else "/"
    if not path.startswith("/"):
        path = "/" + path
    path = path.rstrip("/") or "/"
    params: dict = {}
    if query:
        for pair in query.split("&"):
            if not pair:
                continue
            key, _, value = pair.partition("=")
            params[key] = value
    return path, params


# --- line-delimited persistence -------------------------------------------

_REQUIRED = ("ts", "sid", "id", "m", "path", "q", "st")


def _require(obj: dict, key: str, kind):
    if key not in obj:
        raise SchemaError(key)
    value = obj[key]
    if kind is int and (isinstance(value, bool) or not isinstance(value, int)):
        raise SchemaError(key, f"field {key!r} must be an integer")
    if kind is not int and not isinstance(value, kind):
        raise SchemaError(key, f"field {key!r} must be {kind.__name__}")
    return value


def _record_from_obj(obj) -> TrafficRecord:
    if not isinstance(obj, dict):
        raise ParseError("record line is not a JSON object", 0)
    for key in _REQUIRED:
        _require(obj, key, {"ts": int, "st": int, "q": dict}.get(key, str))
    q = obj["q"]
    if not all(isinstance(k, str) and isinstance(v, str) for k, v in q.items()):
        raise SchemaError("q", "query values must be strings")
    status = obj["st"]
    if not 100 <= status <= 599:
        raise RangeError(f"status {status} outside [100, 599]")
    return TrafficRecord(
        timestamp=obj["ts"],
        session_id=obj["sid"],
        identity=obj["id"],
        method=obj["m"],
        path=obj["path"],
        query_params=dict(q),
        status=status,
    )


def _load_line(line) -> dict:
    if isinstance(line, bytes):
        text = line.decode("utf-8")
    else:
        text = line
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed record: {exc.msg}", len(text[: exc.pos].encode("utf-8"))) from None


def parse_record(line) -> TrafficRecord:
    return _record_from_obj(_load_line(line))


def serialize_record(record: TrafficRecord, seq: Optional[TrafficSequence] = None) -> str:
    obj = {
        "ts": record.timestamp,
        "sid": record.session_id,
        "id": record.identity,
        "m": record.method,
        "path": record.path,
        "q": record.query_params,
        "st": record.status,
    }
    if seq is not None:
        obj["seq"] = seq.sequence_id
        if seq.role is not Role.UNLABELED:
            obj["role"] = seq.role.value
        if seq.violation is not None:
            obj["violation"] = seq.violation
        if seq.exploit is not None:
            obj["exploit"] = seq.exploit
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False)


def iter_lines(path) -> Iterator[tuple[int, str]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if line:
                yield lineno, line


def read_records(path) -> list[TrafficRecord]:
    out = []
    for lineno, line in iter_lines(path):
        try:
            out.append(parse_record(line))
        except ParseError as exc:
            raise ParseError(f"line {lineno}: {exc}") from None
    return out


def read_traffic(path, gap: int = DEFAULT_GAP_MS) -> list[TrafficSequence]:
    """Load a traffic file into sequences.

    Lines carrying a ``seq`` field are grouped by it, keeping their labels;
    lines without one are windowed into unlabeled sessions.
    """
    grouped: dict[str, list] = {}
    labels: dict[str, dict] = {}
    loose = []
    for lineno, line in iter_lines(path):
        obj = _load_line(line)
        try:
            rec = _record_from_obj(obj)
        except ParseError as exc:
            raise ParseError(f"line {lineno}: {exc}") from None
        sid = obj.get("seq")
        if sid is None:
            loose.append(rec)
            continue
        grouped.setdefault(sid, []).append(rec)
        labels.setdefault(sid, {
            "role": obj.get("role", Role.UNLABELED.value),
            "violation": obj.get("violation"),
            "exploit": obj.get("exploit"),
        })
    seqs = [TrafficSequence(sid, tuple(recs), **labels[sid]) for sid, recs in grouped.items()]
    return seqs + window_sessions(loose, gap)


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_traffic(path, sequences: Iterable[TrafficSequence]) -> None:
    lines = [serialize_record(r, seq) for seq in sequences for r in seq.records]
    atomic_write_text(path, "".join(line + "\n" for line in lines))


def window_sessions(records: Iterable[TrafficRecord], gap: int = DEFAULT_GAP_MS) -> list[TrafficSequence]:
    """Group records by session and cut a new window whenever two consecutive
    records are more than ``gap`` milliseconds apart."""
    if gap <= 0:
        raise ValueError("gap must be positive")
    by_session: dict[str, list] = {}
    for rec in records:
        by_session.setdefault(rec.session_id, []).append(rec)
    out = []
    for sid, recs in by_session.items():
        recs = sorted(recs, key=lambda r: r.timestamp)
        windows = [[recs[0]]]
        for prev, cur in zip(recs, recs[1:]):
            if cur.timestamp - prev.timestamp > gap:
                windows.append([])
            windows[-1].append(cur)
        out.extend(TrafficSequence(f"{sid}:{k}", tuple(w)) for k, w in enumerate(windows))
    return out
