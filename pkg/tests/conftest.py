import numpy as np
import pytest
from hypothesis import strategies as st

from bacdetect.demo import generate_log
from bacdetect.miner import build_knowledge_base, mine_templates
from bacdetect.simulator import synth_generate
from bacdetect.traffic import METHODS, TrafficRecord

SEGMENT = st.text(alphabet="abcdefghijklmnopqrstuvwxyz0123456789-_.", min_size=1, max_size=8)
PATHS = st.lists(SEGMENT, min_size=0, max_size=5).map(lambda segs: "/" + "/".join(segs))
QUERY = st.dictionaries(st.text(min_size=1, max_size=6), st.text(max_size=8), max_size=3)

records_st = st.builds(
    TrafficRecord,
    timestamp=st.integers(0, 2**53),
    session_id=st.text(max_size=10),
    identity=st.text(max_size=10),
    method=st.sampled_from(METHODS),
    path=PATHS,
    query_params=QUERY,
    status=st.integers(100, 599),
)


@pytest.fixture(scope="session")
def demo_records():
    return generate_log(2000, seed=0)


@pytest.fixture(scope="session")
def demo_templates(demo_records):
    return mine_templates(demo_records)


@pytest.fixture(scope="session")
def demo_kb(demo_records, demo_templates):
    return build_knowledge_base(demo_records, demo_templates)


@pytest.fixture(scope="session")
def synth_corpus(demo_kb):
    return synth_generate(demo_kb, 300, np.random.default_rng(3))


_ACCEPTANCE: list = []


def record_acceptance(number, description, passed, detail=""):
    _ACCEPTANCE.append((number, description, passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, description, passed, detail in sorted(_ACCEPTANCE, key=lambda r: r[0]):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] {number:>2}. {description}" + (f"  ({detail})" if detail else ""))
