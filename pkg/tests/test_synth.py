import numpy as np
import pytest

from emoq.data import Stratum, ambiguity_stratum, argmax_lowest, pool_utterance
from emoq.errors import ValidationError
from emoq.probe import probe_predict, probe_train
from emoq.synth import SynthSpec, generate, simplex_means


def test_simplex_means_are_equidistant():
    means = simplex_means(4, 8, separation=3.0, sigma=2.0)
    d = [np.linalg.norm(means[i] - means[j]) for i in range(4) for j in range(i + 1, 4)]
    assert np.allclose(d, 6.0)
    assert np.allclose(means.mean(axis=0), 0.0, atol=1e-12)


def test_reproducible():
    spec = SynthSpec(dim=8, per_class=30, seed=3)
    a, b = generate(spec), generate(spec)
    assert a.vectors.tobytes() == b.vectors.tobytes()
    assert a.utterances == b.utterances
    assert generate(SynthSpec(dim=8, per_class=30, seed=4)).vectors.tobytes() != a.vectors.tobytes()


def test_hard_label_is_argmax_of_soft():
    eset = generate(SynthSpec(dim=8, per_class=100, ambiguity=0.5, seed=1))
    assert all(u.label == argmax_lowest(u.soft.probs) for u in eset.utterances)


def test_zero_ambiguity_gives_one_hot():
    eset = generate(SynthSpec(dim=8, per_class=40, ambiguity=0.0, seed=1))
    assert all(u.soft.max_share == 1.0 for u in eset.utterances)


def test_ambiguous_items_mix_two_classes():
    eset = generate(SynthSpec(dim=8, per_class=100, ambiguity=1.0, seed=2))
    support = [np.count_nonzero(u.soft.probs) for u in eset.utterances]
    assert set(support) == {2}
    sixty = [u for u in eset.utterances if np.isclose(u.soft.max_share, 0.6)]
    assert sixty and all(ambiguity_stratum(u.soft) is Stratum.LOW for u in sixty)
    even = [u for u in eset.utterances if np.isclose(u.soft.max_share, 0.5)]
    assert even and all(ambiguity_stratum(u.soft) is Stratum.HIGH for u in even)


def test_class_means_statistically_sane():
    spec = SynthSpec(dim=12, per_class=200, ambiguity=0.0, separation=4.0, frames=(1, 1), seed=5)
    eset = generate(spec)
    means = simplex_means(4, 12, 4.0)
    labels = eset.row_labels()
    for c in range(4):
        rows = eset.vectors[labels == c].astype(np.float64)
        assert np.all(np.abs(rows.mean(axis=0) - means[c]) <= 4 / np.sqrt(len(rows)))


def test_huge_separation_is_perfectly_probeable():
    eset = pool_utterance(generate(SynthSpec(dim=8, per_class=50, ambiguity=0.0, separation=100.0, seed=0)))
    probe = probe_train(eset)
    pred, _ = probe_predict(probe, eset.vectors)
    assert np.array_equal(pred, eset.labels())


def test_synth_parameter_validation():
    with pytest.raises(ValidationError, match="simplex"):
        SynthSpec(n_classes=4, dim=2)
    with pytest.raises(ValidationError):
        SynthSpec(separation=0)
    with pytest.raises(ValidationError):
        SynthSpec(ambiguity=1.5)
    with pytest.raises(ValidationError):
        SynthSpec(frames=(3, 2))
