import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from conftest import make_set
from oracles import mean_rows
from emoq.data import (
    DEFAULT_TAXONOMY,
    EmbeddingSet,
    Level,
    SoftLabel,
    Stratum,
    Taxonomy,
    Utterance,
    ambiguity_stratum,
    argmax_lowest,
    infer_level,
    pool_utterance,
    pooled_rows,
    read_manifest,
    renormalize,
    stratify,
    write_manifest,
)
from emoq.errors import ManifestError, PreconditionError, ValidationError


def test_taxonomy_names_are_case_normalized():
    tax = Taxonomy((" Angry", "HAPPY", "neutral", "Sad"))
    assert tax.names == ("angry", "happy", "neutral", "sad")
    assert tax.id_of("Happy") == 1
    assert tax.name_of(3) == "sad"


def test_taxonomy_rejects_duplicates_and_unknowns():
    with pytest.raises(ValidationError):
        Taxonomy(("angry", "ANGRY"))
    with pytest.raises(ManifestError):
        DEFAULT_TAXONOMY.id_of("disgust")
    with pytest.raises(ValidationError):
        DEFAULT_TAXONOMY.name_of(4)


def test_soft_label_from_votes_sums_to_one():
    s = SoftLabel.from_votes([3, 1, 0, 1])
    assert abs(s.probs.sum() - 1) <= 1e-9
    assert np.allclose(s.probs, [0.6, 0.2, 0.0, 0.2])
    with pytest.raises(ValidationError):
        SoftLabel([1, -1, 0, 0])
    with pytest.raises(ValidationError):
        SoftLabel([0, 0, 0, 0])


votes = hnp.arrays(np.float64, st.integers(2, 6), elements=st.floats(0, 1e6, allow_nan=False)).filter(lambda v: v.sum() > 0)


@given(votes)
def test_renormalize_is_idempotent(v):
    once = renormalize(v)
    assert np.array_equal(renormalize(once), once)
    assert abs(once.sum() - 1) <= 1e-9
    assert np.all(once >= 0)


def test_argmax_ties_to_lowest():
    assert argmax_lowest([0.3, 0.3, 0.4, 0.4]) == 2
    assert argmax_lowest([1, 1, 1, 1]) == 0


@pytest.mark.parametrize(
    "probs,expected",
    [
        ((0.6, 0.3, 0.1, 0.0), Stratum.LOW),
        ((0.5, 0.5, 0.0, 0.0), Stratum.HIGH),
        ((1.0, 0.0, 0.0, 0.0), Stratum.LOW),
    ],
)
def test_stratum_examples(probs, expected):
    assert ambiguity_stratum(SoftLabel(probs)) is expected


@given(st.lists(hnp.arrays(np.float64, 4, elements=st.floats(0, 10, allow_nan=False)).filter(lambda v: v.sum() > 0), min_size=1, max_size=30))
def test_stratify_partitions(softs):
    labels = [argmax_lowest(s) for s in softs]
    eset = make_set(np.ones((len(softs), 2)), labels, soft=softs)
    low, high = stratify(eset)
    low_ids = {u.uid for u in low.utterances}
    high_ids = {u.uid for u in high.utterances}
    assert not low_ids & high_ids
    assert low_ids | high_ids == {u.uid for u in eset.utterances}
    assert all(u.soft.max_share > 0.5 for u in low.utterances)
    assert all(u.soft.max_share <= 0.5 for u in high.utterances)


def test_stratify_requires_soft_labels():
    eset = make_set(np.ones((2, 2)), [0, 1])
    with pytest.raises(PreconditionError, match="u00000"):
        stratify(eset)


def test_pool_two_frames():
    eset = make_set([[1, 0], [3, 0]], [0], frames=[(0, 2)])
    pooled = pool_utterance(eset)
    assert pooled.level is Level.UTTERANCE
    assert pooled.vectors.tolist() == [[2.0, 0.0]]
    assert pooled.utterances[0].uid == "u00000"


def test_pool_single_frame_is_identity():
    v = np.array([[0.125, -7.5, 3.0]], dtype=np.float32)
    pooled = pool_utterance(make_set(v, [2], frames=[(0, 1)], level=Level.FRAME))
    assert np.array_equal(pooled.vectors, v)


def test_pool_matches_high_precision_mean():
    rng = np.random.default_rng(0)
    mu = rng.standard_normal(16) * 3
    frames = (mu + rng.standard_normal((3, 16))).astype(np.float32)
    pooled = pool_utterance(make_set(frames, [0], frames=[(0, 3)]))
    assert np.max(np.abs(pooled.vectors[0] - mean_rows(frames))) <= 1e-6


def test_pool_requires_frame_level():
    with pytest.raises(PreconditionError):
        pool_utterance(make_set(np.ones((1, 2)), [0]))


@given(
    hnp.arrays(np.float64, (6, 3), elements=st.floats(-100, 100)),
    st.floats(-1e3, 1e3).filter(lambda a: abs(a) > 1e-3),
)
def test_pooling_is_linear(x, alpha):
    eset = make_set(x, [0, 1], frames=[(0, 2), (2, 6)])
    a = pooled_rows(eset, x)
    b = pooled_rows(eset, alpha * x)
    scale = max(1e-300, np.abs(alpha * a).max(), np.abs(alpha * x).max())
    assert np.max(np.abs(b - alpha * a)) <= 1e-9 * scale


def test_embedding_set_validation():
    with pytest.raises(ValidationError):
        make_set([[np.nan, 0.0]], [0])
    with pytest.raises(ManifestError):
        make_set(np.ones((3, 2)), [0, 1], frames=[(0, 2), (1, 3)])  # overlap
    with pytest.raises(ManifestError):
        make_set(np.ones((3, 2)), [0], frames=[(1, 1)])  # empty
    with pytest.raises(ManifestError):
        make_set(np.ones((3, 2)), [0], frames=[(2, 4)])  # out of bounds
    with pytest.raises(ManifestError):
        make_set(np.ones((3, 2)), [0], frames=[(0, 2)], level=Level.UTTERANCE)
    with pytest.raises(ManifestError):
        make_set(np.ones((1, 2)), [4])


def test_embedding_set_is_read_only():
    eset = make_set(np.ones((2, 2)), [0, 1])
    with pytest.raises(ValueError):
        eset.vectors[0, 0] = 5


def test_ambiguous_soft_label_may_disagree_with_hard_label():
    eset = make_set(np.ones((1, 2)), [3], soft=[[0.5, 0.5, 0, 0]])
    assert eset.utterances[0].label == 3


def test_subset_repacks_rows(small_synth):
    sub = small_synth.subset([5, 2])
    assert sub.utterances[0].uid == small_synth.utterances[5].uid
    u = small_synth.utterances[5]
    assert np.array_equal(sub.vectors[: u.n_frames], small_synth.vectors[u.frames[0] : u.frames[1]])
    assert sub.utterances[1].frames[0] == u.n_frames


def test_manifest_roundtrip(tmp_path, small_synth):
    path = tmp_path / "m.jsonl"
    write_manifest(small_synth, path)
    utts = read_manifest(path)
    assert [u.uid for u in utts] == [u.uid for u in small_synth.utterances]
    assert all(a.soft == b.soft and a.frames == b.frames and a.label == b.label for a, b in zip(utts, small_synth.utterances))
    rec = json.loads(path.read_text().splitlines()[0])
    assert set(rec) == {"uid", "label", "soft", "frames", "corpus"}
    assert infer_level(utts, small_synth.n_rows) is Level.FRAME


def test_manifest_errors_carry_line_numbers(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"uid": "a", "label": "angry", "soft": null, "frames": [0, 1], "corpus": ""}\n{"uid": "b", "label": "bored", "frames": [1, 2]}\n')
    with pytest.raises(ManifestError, match="bad.jsonl:2"):
        read_manifest(path)
    path.write_text('{"uid": "a"}\n')
    with pytest.raises(ManifestError, match="bad.jsonl:1"):
        read_manifest(path)


def test_utterance_level_inferred():
    utts = [Utterance("a", 0, (0, 1)), Utterance("b", 1, (1, 2))]
    assert infer_level(utts, 2) is Level.UTTERANCE
    assert isinstance(EmbeddingSet(np.zeros((2, 1)), tuple(utts), Level.UTTERANCE), EmbeddingSet)
