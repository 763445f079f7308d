"""Random sequence generators shared by several test modules."""
import random

from bacdetect.traffic import Role, TrafficRecord, TrafficSequence

STATUSES = (200, 200, 200, 201, 401, 403, 404, 500)
PATHS = ("/a", "/a/b", "/api/users/7", "/api/users/7/profile", "/c", "/api/files/3/download/9")
KEYS = ("id", "page", "q", "sort")


def random_sequence(rng: random.Random, max_len=12, role=Role.UNLABELED) -> TrafficSequence:
    recs = []
    for t in range(rng.randint(1, max_len)):
        q = {k: str(rng.randint(0, 3)) for k in rng.sample(KEYS, rng.randint(0, 3))}
        recs.append(TrafficRecord(t, "s", "u", rng.choice(("GET", "POST", "DELETE")),
                                  rng.choice(PATHS), q, rng.choice(STATUSES)))
    return TrafficSequence(f"r{rng.random()}", tuple(recs), role=role)


def path_sequence(paths, role=Role.BENIGN, method="GET", statuses=None) -> TrafficSequence:
    statuses = statuses or [200] * len(paths)
    recs = tuple(TrafficRecord(t, "s", "u", method, p, {}, st) for t, (p, st) in enumerate(zip(paths, statuses)))
    return TrafficSequence("p", recs, role=role)


def llm_sim_config(tmp_path, llm_url, target_url, n=10):
    """Config file for an LLM-path simulate run against the in-process mocks."""
    import json

    cfg = {"simulator": {"n": n, "llm_url": llm_url, "target_url": target_url,
                         "own_cookie": "own-session", "own_account": "7",
                         "foreign_cookie": "foreign-session", "foreign_account": "8",
                         "backoff_ms": 1.0}}
    path = tmp_path / "sim.json"
    path.write_text(json.dumps(cfg))
    return path


def demo_target_app():
    from bacdetect.demo import DemoApp

    return DemoApp(sessions={"own-session": 7, "foreign-session": 8})


def filter_invariant_holds(seq) -> bool:
    statuses = {r.status for r in seq.records}
    allowed = {200} if seq.role is Role.BENIGN else {200, 401, 403}
    return statuses <= allowed


def random_path_corpus(seed, n=200):
    """Records drawn from a random set of path shapes with variable slots."""
    rng = random.Random(seed)
    words = ["api", "users", "files", "spaces", "posts", "admin", "edit", "view", "a", "b"]
    shapes = []
    for _ in range(rng.randint(1, 12)):
        shape = [rng.choice(words) if rng.random() < 0.7 else None for _ in range(rng.randint(1, 7))]
        shapes.append((rng.choice(["GET", "POST", "DELETE"]), shape))
    out = []
    for _ in range(n):
        method, shape = rng.choice(shapes)
        toks = [t if t is not None else rng.choice([str(rng.randint(0, 999)), rng.choice(words)]) for t in shape]
        out.append(TrafficRecord(0, "s", "u", method, "/" + "/".join(toks)))
    return out
