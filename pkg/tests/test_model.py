import numpy as np
import pytest

from charcnn.errors import ConfigError, InputError, ShapeError, StateError
from charcnn.model import HEAD_INIT_GAIN, FULL_CONFIG, ModelConfig, build, forward
from charcnn.training import cross_entropy, gradient_check, one_hot
from oracles import central_difference, max_relative_error

TINY = ModelConfig((1, 8, 8), ((2, 3),), (4,), 0.5, 3)


def test_full_size_shape_algebra():
    # 32 -> 28 -> 14 -> 12 -> 6 -> 4 -> 2
    assert [s[1] for s in FULL_CONFIG.block_shapes()] == [14, 6, 2]
    assert FULL_CONFIG.flatten_width() == 2 * 2 * 256 == 1024


def test_full_size_model_forward_produces_flatten_width_1024():
    model = build(FULL_CONFIG, seed=0)
    x = np.random.default_rng(0).random((1, 1, 32, 32), dtype=np.float32)
    probs = forward(model, x)
    flatten = next(layer for layer in model.layers if type(layer).__name__ == "Flatten")
    assert flatten._shape[1:] == (256, 2, 2)
    assert probs.shape == (1, 47)


def test_degenerate_stack_is_logistic_regression():
    cfg = ModelConfig((1, 32, 32), (), (), 0.5, 10)
    assert cfg.flatten_width() == 1024
    model = build(cfg)
    assert [name for name, _ in model.parametric()] == ["dense0"]
    assert model.parameters()["dense0.weight"].shape == (10, 1024)


def test_two_block_model_outputs_probabilities(rng):
    model = build(ModelConfig((1, 32, 32), ((8, 5), (16, 3)), (), 0.5, 12), seed=3)
    probs = forward(model, rng.random((3, 1, 32, 32)))
    assert probs.shape == (3, 12)
    np.testing.assert_allclose(probs.sum(axis=1), 1, atol=1e-6)


@pytest.mark.parametrize(
    "cfg",
    [
        ModelConfig((1, 8, 8), ((4, 9),), (), 0.5, 3),
        ModelConfig((1, 8, 8), ((4, 3), (4, 3)), (), 0.5, 3),
        ModelConfig((1, 8, 8), (), (), 0.5, 1),
        ModelConfig((1, 8, 8), (), (0,), 0.5, 3),
        ModelConfig((1, 8, 8), (), (), 1.0, 3),
    ],
)
def test_bad_configs_are_rejected(cfg):
    with pytest.raises(ConfigError):
        build(cfg)


def test_config_error_names_the_block():
    with pytest.raises(ConfigError, match="conv block 1"):
        ModelConfig((1, 8, 8), ((4, 3), (4, 3)), (), 0.5, 3).validate()


def test_batch_independence_and_determinism(rng):
    model = build(TINY, seed=4)
    x = rng.random((4, 1, 8, 8)).astype(np.float32)
    batch = forward(model, x).copy()
    single = forward(model, x[2:3])
    np.testing.assert_allclose(single[0], batch[2], atol=1e-6)
    again = forward(model, x).copy()
    assert batch.tobytes() == again.tobytes()


def test_same_seed_same_weights():
    a = build(TINY, seed=9).parameters()
    b = build(TINY, seed=9).parameters()
    c = build(TINY, seed=10).parameters()
    assert all(a[k].tobytes() == b[k].tobytes() for k in a)
    assert any(a[k].tobytes() != c[k].tobytes() for k in a if k.endswith("weight"))


def test_he_init_statistics():
    model = build(ModelConfig((1, 32, 32), ((64, 5),), (256,), 0.5, 10), seed=0)
    w = model.parameters()["dense0.weight"]
    assert abs(w.std() - np.sqrt(2 / w.shape[1])) < 0.02 * np.sqrt(2 / w.shape[1])
    assert not model.parameters()["dense0.bias"].any()
    head = model.parameters()["dense1.weight"]
    expected = HEAD_INIT_GAIN * np.sqrt(2 / head.shape[1])
    assert abs(head.std() - expected) < 0.05 * expected


def test_forward_rejects_wrong_shape():
    with pytest.raises(ShapeError):
        forward(build(TINY), np.zeros((2, 1, 9, 8)))


def test_backward_requires_forward_cache():
    model = build(TINY)
    with pytest.raises(StateError):
        model.backward(one_hot([0], 3))


def test_backward_rejects_non_one_hot(rng):
    model = build(TINY)
    forward(model, rng.random((2, 1, 8, 8)))
    with pytest.raises(InputError):
        model.backward(2 * one_hot([0, 1], 3))


def test_logit_gradient_is_prob_minus_target(rng):
    """d(loss)/d(logits) = (p - y) / B, checked against finite differences of the loss."""
    model = build(TINY, seed=2).astype(np.float64)
    x = rng.random((3, 1, 8, 8))
    targets = one_hot([0, 2, 1], 3, np.float64)
    probs = forward(model, x).copy()

    # the bias of the output layer sees the logit gradient summed over the batch
    forward(model, x)
    grads = model.backward(targets)
    np.testing.assert_allclose(grads["dense1.bias"], ((probs - targets) / 3).sum(axis=0), atol=1e-6)

    bias = model.parameters()["dense1.bias"]

    def loss(b):
        bias[...] = b
        return cross_entropy(forward(model, x), targets)

    numeric = central_difference(loss, bias.copy())
    assert max_relative_error(grads["dense1.bias"], numeric) <= 1e-6


def test_perfect_prediction_has_vanishing_gradient():
    model = build(ModelConfig((1, 8, 8), (), (), 0.0, 3), seed=0).astype(np.float64)
    w = model.parameters()["dense0.weight"]
    w[...] = 0
    w[1, :] = 1.0  # huge logit for class 1 on a bright image
    x = np.ones((1, 1, 8, 8))
    forward(model, x)
    grads = model.backward(one_hot([1], 3, np.float64))
    assert max(np.abs(g).max() for g in grads.values()) < 1e-20


@pytest.mark.parametrize("seed", range(5))
def test_tiny_model_end_to_end_gradient_check(seed):
    r = np.random.default_rng(seed)
    model = build(TINY, seed=seed)
    report = gradient_check(model, r.standard_normal((4, 1, 8, 8)), r.integers(0, 3, 4))
    assert report.passed, str(report)
