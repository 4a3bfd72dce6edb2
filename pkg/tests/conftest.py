import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from quotus.corpus import Segment, Transcript

FIXTURE_DIR = Path(__file__).parent / "fixtures" / "mini_corpus"


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    # One visible pass/fail line per acceptance criterion.
    if report.when == "call" and item.module.__name__ == "test_acceptance":
        status = "PASS" if report.passed else "FAIL"
        print(f"\n[acceptance] {item.name}: {status}", file=sys.stderr)


@pytest.fixture(scope="session")
def mini_corpus_dir() -> Path:
    return FIXTURE_DIR


def make_transcript(tokens, ts=0, tid="tr", speaker="S") -> Transcript:
    tokens = tuple(tokens)
    seg = Segment(speaker, " ".join(tokens), tokens, 0, len(tokens))
    return Transcript(tid, ts, (seg,), tokens)
