import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from bacdetect.cli import main
from bacdetect.demo import ENDPOINTS, generate_log
from bacdetect.miner import load_kb
from bacdetect.pipeline import bundle_digest
from bacdetect.simulator import synth_generate
from bacdetect.traffic import Role, read_traffic, serialize_record, write_traffic


def run(*argv) -> int:
    try:
        return main([str(a) for a in argv])
    except SystemExit as exc:
        return exc.code


def write_log(path, records):
    path.write_text("".join(serialize_record(r) + "\n" for r in records))
    return path


def unlabeled(path, seqs):
    # drop the seq/role fields so detect has to window the sessions itself
    write_log(path, [r for s in seqs for r in s.records])
    return path


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    w = tmp_path_factory.mktemp("cli")
    write_log(w / "access.jsonl", generate_log(2000, seed=5))
    assert run("mine", "--logs", w / "access.jsonl", "--kb", w / "kb.json") == 0
    assert run("simulate", "--offline", "--kb", w / "kb.json", "--out", w / "corpus.jsonl",
               "--n", 500, "--seed", 7) == 0
    assert run("train", "--corpus", w / "corpus.jsonl", "--kb", w / "kb.json", "--bundle", w / "bundle",
               "--seed", 7) == 0
    return w


def test_mine_recovers_endpoints(work):
    items = load_kb(work / "kb.json")
    assert len(items) == len(ENDPOINTS) == 20
    assert {(i.template.method, i.template.token_pattern) for i in items} == \
        {(e.method, e.template_tokens) for e in ENDPOINTS}


def test_mine_is_idempotent(work, tmp_path):
    assert run("mine", "--logs", work / "access.jsonl", "--kb", tmp_path / "kb.json") == 0
    assert (tmp_path / "kb.json").read_bytes() == (work / "kb.json").read_bytes()


def test_mine_empty_log(tmp_path, capsys):
    (tmp_path / "empty.jsonl").write_text("")
    assert run("mine", "--logs", tmp_path / "empty.jsonl", "--kb", tmp_path / "kb.json") == 2
    assert "EmptyCorpusError" in capsys.readouterr().err
    assert not (tmp_path / "kb.json").exists()


def test_mine_malformed_and_missing(tmp_path):
    (tmp_path / "bad.jsonl").write_text('{"ts": 1}\n')
    assert run("mine", "--logs", tmp_path / "bad.jsonl", "--kb", tmp_path / "kb.json") == 2
    assert run("mine", "--logs", tmp_path / "nope.jsonl", "--kb", tmp_path / "kb.json") == 2


def test_usage_errors(work, tmp_path):
    assert run("simulate", "--offline", "--kb", work / "kb.json", "--out", tmp_path / "c", "--n", 0) == 64
    assert run("bogus") == 64
    assert run("mine") == 64
    assert run("eval", "--corpus", work / "corpus.jsonl", "--kb", work / "kb.json",
               "--bundle", work / "bundle", "--train-frac", 1.0, "--out-dir", tmp_path) == 64


def test_simulate_without_llm(work, tmp_path):
    assert run("simulate", "--kb", work / "kb.json", "--out", tmp_path / "c.jsonl", "--n", 5) == 3


def test_simulate_unreachable_llm(work, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"simulator": {"backoff_ms": 1, "max_retries": 0}}))
    assert run("simulate", "--config", cfg, "--kb", work / "kb.json", "--out", tmp_path / "c.jsonl", "--n", 2,
               "--llm-url", "http://127.0.0.1:9", "--target-url", "http://127.0.0.1:9") == 3


def test_simulate_offline_reproducible(work, tmp_path):
    assert run("simulate", "--offline", "--kb", work / "kb.json", "--out", tmp_path / "c.jsonl",
               "--n", 500, "--seed", 7) == 0
    assert (tmp_path / "c.jsonl").read_bytes() == (work / "corpus.jsonl").read_bytes()
    seqs = read_traffic(work / "corpus.jsonl")
    assert len(seqs) == 500 and all(s.label is not None for s in seqs)
    report = json.loads((work / "corpus.jsonl.report.json").read_text())
    assert report["kept"] == report["attempts"] == 500


def test_train_metrics_and_determinism(work, tmp_path, capsys):
    assert run("train", "--corpus", work / "corpus.jsonl", "--kb", work / "kb.json", "--bundle",
               tmp_path / "b", "--seed", 7) == 0
    out = capsys.readouterr().out
    row = [l for l in out.splitlines() if l.startswith("| ") and "ACC" not in l][0]
    f1 = float(row.strip("| ").split(" | ")[3])
    assert f1 >= 0.95
    assert bundle_digest(tmp_path / "b") == bundle_digest(work / "bundle")


def test_train_single_class(work, tmp_path, capsys):
    seqs = [s for s in read_traffic(work / "corpus.jsonl") if s.role is Role.BENIGN]
    write_traffic(tmp_path / "benign.jsonl", seqs)
    assert run("train", "--corpus", tmp_path / "benign.jsonl", "--kb", work / "kb.json",
               "--bundle", tmp_path / "b") == 4
    assert "DegenerateLabelsError" in capsys.readouterr().err
    assert not (tmp_path / "b").exists()


def test_detect_empty_input(work, tmp_path):
    (tmp_path / "in.jsonl").write_text("")
    assert run("detect", "--bundle", work / "bundle", "--input", tmp_path / "in.jsonl",
               "--out", tmp_path / "v.jsonl") == 0
    assert (tmp_path / "v.jsonl").read_text() == ""


@pytest.fixture(scope="module")
def fresh(work):
    kb = load_kb(work / "kb.json")
    return synth_generate(kb, 200, np.random.default_rng(99))


def verdicts(path):
    return [json.loads(l) for l in Path(path).read_text().splitlines()]


def test_detect_benign_traffic(work, fresh, tmp_path):
    benign = [s for s in fresh if s.role is Role.BENIGN]
    unlabeled(tmp_path / "in.jsonl", benign)
    assert run("detect", "--bundle", work / "bundle", "--input", tmp_path / "in.jsonl",
               "--out", tmp_path / "v.jsonl") == 0
    v = verdicts(tmp_path / "v.jsonl")
    assert len(v) == len(benign)
    assert set(v[0]) == {"sequence_id", "probability", "label"}
    assert sum(x["label"] == "benign" for x in v) >= 0.95 * len(v)


def test_detect_cookie_switch(work, tmp_path):
    from bacdetect.demo import identity_token
    from bacdetect.traffic import TrafficRecord

    own, stolen = identity_token("cookie-3"), identity_token("cookie-4")
    t = 1_800_000_000_000
    steps = [("GET", "/api/spaces", own, 200), ("GET", "/api/users/4/settings", own, 403),
             ("GET", "/api/users/4/profile", own, 403), ("GET", "/api/users/4/notifications", stolen, 401),
             ("GET", "/api/users/4/settings", stolen, 200), ("GET", "/api/spaces", own, 200)]
    recs = [TrafficRecord(t + 1000 * i, "attacker", who, m, p, {}, st) for i, (m, p, who, st) in enumerate(steps)]
    write_log(tmp_path / "in.jsonl", recs)
    assert run("detect", "--bundle", work / "bundle", "--input", tmp_path / "in.jsonl",
               "--out", tmp_path / "v.jsonl") == 0
    [v] = verdicts(tmp_path / "v.jsonl")
    assert v["label"] == "violation"


def test_detect_malicious_majority(work, fresh, tmp_path):
    bad = [s for s in fresh if s.role is Role.MALICIOUS]
    unlabeled(tmp_path / "in.jsonl", bad)
    run("detect", "--bundle", work / "bundle", "--input", tmp_path / "in.jsonl", "--out", tmp_path / "v.jsonl")
    v = verdicts(tmp_path / "v.jsonl")
    assert sum(x["label"] == "violation" for x in v) >= 0.9 * len(v)


def test_detect_schema_mismatch(work, tmp_path):
    import shutil

    shutil.copytree(work / "bundle", tmp_path / "b")
    schema = json.loads((tmp_path / "b" / "schema.json").read_text())
    schema["feature_schema"] = schema["feature_schema"][::-1]
    (tmp_path / "b" / "schema.json").write_text(json.dumps(schema))
    (tmp_path / "in.jsonl").write_text("")
    assert run("detect", "--bundle", tmp_path / "b", "--input", tmp_path / "in.jsonl",
               "--out", tmp_path / "v.jsonl") == 5


def test_eval_and_report(work, tmp_path):
    assert run("eval", "--corpus", work / "corpus.jsonl", "--kb", work / "kb.json", "--bundle", work / "bundle",
               "--out-dir", tmp_path / "ev") == 0
    doc = json.loads((tmp_path / "ev" / "metrics.json").read_text())
    for key in ("acc", "precision", "recall", "f1", "mcc", "cov_api", "wall_ms", "llm_cost_usd"):
        assert key in doc
    assert doc["n_test"] == 100
    md = (tmp_path / "ev" / "report.md").read_text().strip().splitlines()
    head, row = md[-3].strip("| ").split(" | "), md[-1].strip("| ").split(" | ")
    key = {"ACC": "acc", "P": "precision", "R": "recall", "F1": "f1", "MCC": "mcc"}
    assert {key.get(h, h): float(v) for h, v in zip(head, row)} == doc
    assert (tmp_path / "ev" / "scores.png").stat().st_size > 0
    assert run("report", "--metrics", tmp_path / "ev" / "metrics.json", "--out", tmp_path / "r.md") == 0
    assert (tmp_path / "r.md").read_text().strip() == "\n".join(md[-3:])


def test_eval_with_test_file(work, fresh, tmp_path):
    write_traffic(tmp_path / "test.jsonl", fresh)
    assert run("eval", "--corpus", work / "corpus.jsonl", "--kb", work / "kb.json", "--bundle", work / "bundle",
               "--test", tmp_path / "test.jsonl", "--out-dir", tmp_path / "ev") == 0
    doc = json.loads((tmp_path / "ev" / "metrics.json").read_text())
    assert doc["n_test"] == 200 and doc["f1"] >= 0.9


def test_featurize(work, tmp_path):
    from bacdetect.features import FEATURE_NAMES, read_features

    assert run("featurize", "--corpus", work / "corpus.jsonl", "--bundle", work / "bundle",
               "--out", tmp_path / "f.tsv") == 0
    ids, X, labels = read_features(tmp_path / "f.tsv")
    assert X.shape == (500, len(FEATURE_NAMES)) and np.isfinite(X).all()
    assert all(lab is not None for lab in labels)


def test_config_file_and_flag_override(work, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"kb": str(work / "kb.json"), "seed": 1, "simulator": {"n": 30}}))
    assert run("simulate", "--config", cfg, "--offline", "--out", tmp_path / "c.jsonl", "--n", 12) == 0
    assert len(read_traffic(tmp_path / "c.jsonl")) == 12
    cfg.write_text(json.dumps({"simulator": {"bogus": 1}}))
    assert run("simulate", "--config", cfg, "--offline", "--out", tmp_path / "c.jsonl") == 2


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "bacdetect.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "simulate" in out.stdout


def test_attention_backend_bundle(work, fresh, tmp_path):
    assert run("train", "--corpus", work / "corpus.jsonl", "--kb", work / "kb.json", "--bundle", tmp_path / "b",
               "--backend", "attention", "--seed", 7) == 0
    schema = json.loads((tmp_path / "b" / "seqmodel" / "model.json").read_text())
    assert schema["backend"] == "attention" and schema["config"]["embed_dim"] == 128
    unlabeled(tmp_path / "in.jsonl", fresh[:20])
    assert run("detect", "--bundle", tmp_path / "b", "--input", tmp_path / "in.jsonl",
               "--out", tmp_path / "v.jsonl") == 0
    assert len(verdicts(tmp_path / "v.jsonl")) == 20
