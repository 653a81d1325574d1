import random
from dataclasses import dataclass

import pytest

from echoshow.cloud import AuthState, CloudClient
from echoshow.mockcloud import MockClock, MockCloud
from echoshow.synth import build_corpus

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    return build_corpus(tmp_path_factory.mktemp("corpus"), seed=7)


@pytest.fixture
def rng():
    return random.Random(1234)


@dataclass
class CloudRig:
    mock: MockCloud
    clock: MockClock
    state: AuthState
    client: CloudClient


def make_rig(corpus, log_dir=None, **mock_kw) -> CloudRig:
    clock = MockClock()
    mock = MockCloud(f"{corpus.root}/mock", [corpus.refresh_token], clock, **mock_kw)
    state = AuthState(corpus.refresh_token, directed_id=corpus.ids.directed_id)
    client = CloudClient(state, mock.transport(), log_dir, clock=clock.now)
    return CloudRig(mock, clock, state, client)


@pytest.fixture
def rig(corpus, tmp_path):
    return make_rig(corpus, tmp_path / "acq")
