import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

from emoq.data import DEFAULT_TAXONOMY, EmbeddingSet, Level, SoftLabel, Utterance  # noqa: E402
from emoq.synth import SynthSpec, generate  # noqa: E402

settings.register_profile(
    "default",
    deadline=None,
    max_examples=60,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def make_set(vectors, labels, frames=None, soft=None, level=None, taxonomy=None):
    """Build an EmbeddingSet from raw arrays; one row per utterance unless frames are given."""
    vectors = np.asarray(vectors, dtype=np.float32)
    if frames is None:
        frames = [(i, i + 1) for i in range(len(labels))]
        level = level or Level.UTTERANCE
    utts = tuple(
        Utterance(f"u{i:05d}", int(lab), tuple(fr), "test", None if soft is None else SoftLabel(soft[i]))
        for i, (lab, fr) in enumerate(zip(labels, frames))
    )
    return EmbeddingSet(vectors, utts, level or Level.FRAME, taxonomy or DEFAULT_TAXONOMY)


@pytest.fixture(scope="session")
def small_synth():
    return generate(SynthSpec(dim=16, per_class=60, separation=4.0, ambiguity=0.3, frames=(2, 4), seed=11))


@pytest.fixture(scope="session")
def blobs():
    """Utterance-level 4-class Gaussian blobs, 80 per class, D=8."""
    rng = np.random.default_rng(5)
    means = np.eye(4, 8) * 6.0
    labels = np.repeat(np.arange(4), 80)
    x = means[labels] + rng.standard_normal((labels.size, 8))
    return make_set(x, labels)


# one line per acceptance criterion, filled in by tests/test_acceptance.py
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
