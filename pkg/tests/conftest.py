import numpy as np
import pytest

from privrec.feature_store import make_catalog
from privrec.fusion import FusionWeights
from privrec.synthetic import SynthSpec, synthesize

_ACCEPTANCE: list[tuple[str, str]] = []
_DETAILS: dict[str, list[str]] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _ACCEPTANCE.append((report.nodeid, "PASS" if report.passed else "FAIL"))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid, outcome in _ACCEPTANCE:
        details = "; ".join(_DETAILS.get(nodeid, []))
        name = nodeid.split("::")[-1]
        terminalreporter.write_line(f"{outcome}  {name}" + (f"  [{details}]" if details else ""))


@pytest.fixture
def measured(request):
    """Record a measured value for the acceptance summary line."""
    lines = _DETAILS.setdefault(request.node.nodeid, [])
    return lines.append


@pytest.fixture
def uniform():
    return FusionWeights.uniform()


@pytest.fixture
def visual_only():
    return FusionWeights(1.0, 0.0, 0.0)


@pytest.fixture
def tiny_catalog():
    """Three 2-d videos with identical modalities, one user who liked v1."""
    return make_catalog(
        [
            ("v1", [1, 0], [1, 0], [1, 0]),
            ("v2", [0.8, 0.6], [0.8, 0.6], [0.8, 0.6]),
            ("v3", [0, 1], [0, 1], [0, 1]),
        ],
        [("alice", "v1", "like", 1)],
    )


@pytest.fixture(scope="session")
def small_synth():
    return synthesize(SynthSpec(users=20, videos=80, dim=8, topics=3, interactions_per_user=40, seed=3))


def random_catalog(rng: np.random.Generator, n_videos: int, n_users: int, dim: int = 3,
                   like_prob: float = 0.3, same_modalities: bool = True, dup_prob: float = 0.2):
    """Small random catalog with generic vectors and some exact duplicates.

    Ids are zero-padded so string order equals numeric order. Duplicated
    videos create exact ties that must fall to the id tie-break.
    """
    videos = []
    for i in range(n_videos):
        if videos and rng.random() < dup_prob:
            src = videos[int(rng.integers(len(videos)))]
            videos.append((f"v{i:02d}", *src[1:]))
            continue
        x = rng.standard_normal(dim)
        if same_modalities:
            videos.append((f"v{i:02d}", x, x, x))
        else:
            videos.append((f"v{i:02d}", x, rng.standard_normal(dim), rng.standard_normal(dim)))
    events = []
    t = 0
    for u in range(n_users):
        for i in range(n_videos):
            if rng.random() < like_prob:
                t += 1
                events.append((f"u{u:02d}", f"v{i:02d}", "like", t))
    users = [f"u{u:02d}" for u in range(n_users)]
    return make_catalog(videos, events, users)
