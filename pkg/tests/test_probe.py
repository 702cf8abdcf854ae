import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from conftest import make_set
from oracles import central_difference, perceptron_separable
from emoq.data import Taxonomy
from emoq.errors import ClassCoverageError, PreconditionError, ShapeError, ValidationError
from emoq.probe import (
    LinearProbe,
    ProbeConfig,
    loss_and_grad,
    probe_predict,
    probe_train,
    read_probe,
    softmax,
    write_probe,
)


def toy_problem(seed=0):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((5, 3))
    y = np.eye(4)[[0, 1, 2, 3, 1]]
    return x, y


def relative_error(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12)


@pytest.mark.parametrize("at_init", [True, False])
def test_gradient_matches_finite_differences(at_init):
    x, y = toy_problem()
    rng = np.random.default_rng(1)
    w = np.zeros((4, 3)) if at_init else rng.standard_normal((4, 3))
    b = np.zeros(4) if at_init else rng.standard_normal(4)
    l2 = 1e-2
    _, gw, gb = loss_and_grad(w, b, x, y, l2)
    fd_w = central_difference(lambda t: loss_and_grad(t, b, x, y, l2)[0], w)
    fd_b = central_difference(lambda t: loss_and_grad(w, t, x, y, l2)[0], b)
    assert relative_error(gw, fd_w) <= 1e-5
    assert relative_error(gb, fd_b) <= 1e-5


def separable_blobs(seed=3, n=100):
    rng = np.random.default_rng(seed)
    y = np.repeat([0, 1], n)
    x = rng.standard_normal((2 * n, 5)) + np.where(y[:, None] == 1, 4.0, -4.0) * np.array([1, 0, 0, 0, 0])
    return x, y


def test_separable_blobs_fit():
    x, y = separable_blobs()
    assert perceptron_separable(x, y)
    probe = probe_train(make_set(x, y, taxonomy=Taxonomy(("neg", "pos"))), ProbeConfig())
    pred, _ = probe_predict(probe, x)
    assert np.mean(pred == y) >= 0.99
    losses = probe.meta["losses"]
    assert all(b <= a for a, b in zip(losses, losses[1:]))
    assert losses[-1] < losses[0]


def test_constant_inputs_predict_prior():
    x = np.ones((6, 3))
    y = np.array([0, 0, 0, 1, 2, 3])
    probe = probe_train(make_set(x, y), ProbeConfig(l2=1e-2))
    assert np.abs(probe.weights).max() < 1e-3
    _, soft = probe_predict(probe, x[:1])
    assert np.allclose(soft[0], [0.5, 1 / 6, 1 / 6, 1 / 6], atol=1e-2)


def test_zero_probe_is_uniform_and_tie_goes_low():
    probe = LinearProbe(np.zeros((4, 2)), np.zeros(4))
    hard, soft = probe_predict(probe, np.ones((1, 2)))
    assert hard[0] == 0
    assert np.allclose(soft[0], 0.25)


def test_saturated_logits():
    probe = LinearProbe(np.zeros((4, 1)), np.array([10.0, -10.0, -10.0, -10.0]))
    _, soft = probe_predict(probe, np.zeros((1, 1)))
    assert np.max(np.abs(soft[0] - [1, 0, 0, 0])) <= 1e-8


@given(hnp.arrays(np.float64, (3, 4), elements=st.floats(-30, 30)), st.floats(-100, 100))
def test_softmax_shift_invariance_and_normalization(logits, c):
    a = softmax(logits)
    assert np.allclose(a, softmax(logits + c), atol=1e-12)
    assert np.all(np.abs(a.sum(axis=1) - 1) <= 1e-9)


def test_training_errors(small_synth):
    with pytest.raises(PreconditionError):
        probe_train(small_synth)
    with pytest.raises(ClassCoverageError, match="sad"):
        probe_train(make_set(np.ones((3, 2)), [0, 1, 2]))


def test_dimension_mismatch():
    probe = LinearProbe(np.zeros((4, 2)), np.zeros(4))
    with pytest.raises(ShapeError):
        probe_predict(probe, np.zeros((1, 3)))


def test_deterministic_and_roundtrip(tmp_path, blobs):
    a = probe_train(blobs)
    b = probe_train(blobs)
    assert a == b
    write_probe(a, tmp_path / "p.prbe")
    assert read_probe(tmp_path / "p.prbe") == a
    assert a.meta["final_loss"] == a.meta["losses"][-1]


def test_probe_taxonomy_must_match():
    with pytest.raises(ValidationError):
        LinearProbe(np.zeros((3, 2)), np.zeros(3), Taxonomy())
