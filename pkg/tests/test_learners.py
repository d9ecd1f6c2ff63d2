import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpstream.errors import ConfigurationError, InvalidInputError, InvalidParameterError
from dpstream.learners import (
    DPLearner,
    LearnerSpec,
    TrainedModel,
    TransferLearner,
    available_backends,
    clip_gradient,
    finetune_dp,
    get_backend,
    n_steps,
    noise_multiplier,
    pretrain_public,
    set_backend,
    step_noise_std,
    train_dp,
)
from dpstream.learners import _reference as ref
from dpstream.learners.backend import clipped_grad_sum


def _toy(n=60, d=4, seed=0, regression=False):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    if regression:
        y = 1.0 / (1.0 + np.exp(-X[:, 0]))
    else:
        y = (X[:, 0] + 0.5 * X[:, 1] > 0).astype(np.int64)
    return X, y


def test_clip_gradient_bounds_norm():
    g = np.array([3.0, 4.0])
    np.testing.assert_allclose(clip_gradient(g, 1.0), [0.6, 0.8])
    np.testing.assert_array_equal(clip_gradient(g, 10.0), g)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=8), st.floats(1e-3, 1e3))
def test_clip_gradient_never_exceeds_clip_norm(values, c):
    assert np.linalg.norm(clip_gradient(values, c)) <= c * (1 + 1e-12)


def test_n_steps_counts_partial_batches():
    assert n_steps(700, LearnerSpec(epochs=30, minibatch_size=100)) == 210
    assert n_steps(701, LearnerSpec(epochs=2, minibatch_size=100)) == 16


def test_noise_multiplier_formula():
    steps = 7
    expected = math.sqrt(2 * math.log(1.25 / (1e-4 / steps))) / (0.5 / steps)
    assert noise_multiplier(0.5, 1e-4, steps) == expected
    assert noise_multiplier(math.inf, 0.0, steps) == 0.0
    assert step_noise_std(0.5, 1e-4, steps, 2.0, 50) == expected * 2.0 / 50


def test_noise_multiplier_needs_delta():
    with pytest.raises(ConfigurationError):
        noise_multiplier(1.0, 0.0, 10)


def test_learner_spec_validation():
    with pytest.raises(InvalidParameterError):
        LearnerSpec(clip_norm=0.0)
    with pytest.raises(InvalidParameterError):
        LearnerSpec(hidden_layers=(4,), freeze_prefix=2)
    with pytest.raises(InvalidParameterError):
        LearnerSpec(learning_rate=-1.0)
    assert LearnerSpec(hidden_layers=(20, 10)).sizes(20, 2) == (20, 20, 10, 2)


@pytest.mark.parametrize("kind", [ref.CLASSIFIER, ref.REGRESSOR])
@pytest.mark.parametrize("sizes", [(3, 2), (3, 5, 2), (4, 6, 3, 3)])
def test_gradient_matches_finite_differences(kind, sizes):
    if kind == ref.REGRESSOR:
        sizes = sizes[:-1] + (1,)
    rng = np.random.default_rng(sum(sizes))
    params = rng.normal(scale=0.5, size=ref.n_params(sizes))
    x = rng.normal(size=sizes[0])
    y = rng.integers(sizes[-1]) if kind == ref.CLASSIFIER else rng.random()
    grad = ref.example_gradient(params, sizes, x, y, kind)
    h = 1e-6
    for i in range(len(params)):
        e = np.zeros_like(params)
        e[i] = h
        up = ref.example_losses(params + e, sizes, x[None], np.atleast_1d(y), kind)[0]
        down = ref.example_losses(params - e, sizes, x[None], np.atleast_1d(y), kind)[0]
        assert grad[i] == pytest.approx((up - down) / (2 * h), rel=1e-4, abs=1e-7)


@pytest.mark.skipif("native" not in available_backends(), reason="compiled kernel not built")
@pytest.mark.parametrize("first", [0, 1, 2])
@pytest.mark.parametrize("clip", [0.05, 1.0, np.inf])
def test_native_kernel_matches_reference(first, clip):
    sizes = (5, 7, 4, 3)
    rng = np.random.default_rng(first)
    params = rng.normal(size=ref.n_params(sizes))
    X, y = rng.normal(size=(40, 5)), rng.integers(3, size=40)
    previous = set_backend("native")
    try:
        g_native, n_native = clipped_grad_sum(params, sizes, X, y, ref.CLASSIFIER, clip, first)
    finally:
        set_backend(previous)
    g_ref, n_ref = ref.clipped_grad_sum(params, sizes, X, y, ref.CLASSIFIER, clip, first)
    np.testing.assert_allclose(g_native, g_ref, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(n_native, n_ref, rtol=1e-10)


def test_set_backend_rejects_unknown():
    with pytest.raises(ValueError):
        set_backend("gpu")
    assert get_backend() in available_backends()


def test_per_example_norm_matches_explicit_gradient():
    sizes = (4, 5, 3)
    rng = np.random.default_rng(2)
    params = rng.normal(size=ref.n_params(sizes))
    X, y = rng.normal(size=(6, 4)), rng.integers(3, size=6)
    _, norms = ref.clipped_grad_sum(params, sizes, X, y, ref.CLASSIFIER, 1.0)
    for i in range(6):
        assert norms[i] == pytest.approx(np.linalg.norm(ref.example_gradient(params, sizes, X[i], y[i], ref.CLASSIFIER)))


def test_clipped_sum_bounds_each_contribution():
    sizes = (4, 3)
    rng = np.random.default_rng(5)
    params = rng.normal(scale=3.0, size=ref.n_params(sizes))
    X = rng.normal(scale=5.0, size=(1, 4))
    y = np.argmin(ref.forward(params, sizes, X, ref.CLASSIFIER), axis=1)
    g, norms = ref.clipped_grad_sum(params, sizes, X, y, ref.CLASSIFIER, 0.3)
    assert norms[0] > 0.3
    assert np.linalg.norm(g) == pytest.approx(0.3)


def test_infinite_epsilon_is_noiseless_descent():
    X, y = _toy()
    spec = LearnerSpec(hidden_layers=(3,), epochs=2, minibatch_size=16)
    a = train_dp((X, y), spec, math.inf, 0.0, np.random.default_rng(1))
    b = train_dp((X, y), spec, math.inf, 0.0, np.random.default_rng(1), noise_rng=np.random.default_rng(99))
    np.testing.assert_array_equal(a.params, b.params)
    assert math.isinf(a.certified_epsilon) and a.certified_delta == 0.0


def test_noise_changes_only_through_noise_rng():
    X, y = _toy()
    spec = LearnerSpec(hidden_layers=(), epochs=1, minibatch_size=60)
    a = train_dp((X, y), spec, 1.0, 1e-4, np.random.default_rng(1), noise_rng=np.random.default_rng(5))
    b = train_dp((X, y), spec, 1.0, 1e-4, np.random.default_rng(1), noise_rng=np.random.default_rng(5))
    c = train_dp((X, y), spec, 1.0, 1e-4, np.random.default_rng(1), noise_rng=np.random.default_rng(6))
    np.testing.assert_array_equal(a.params, b.params)
    assert not np.array_equal(a.params, c.params)


def test_single_step_noise_has_calibrated_std():
    # one full-batch step from zero init: params = -lr * (grad / B + noise)
    X, y = _toy(n=50, d=3)
    spec = LearnerSpec(hidden_layers=(), epochs=1, minibatch_size=50, learning_rate=1.0)
    init = np.zeros(ref.n_params((3, 2)))
    grad, _ = ref.clipped_grad_sum(init, (3, 2), X, y, ref.CLASSIFIER, 1.0)
    std = step_noise_std(1.0, 1e-4, 1, 1.0, 50)
    noise_rng = np.random.default_rng(8)
    expected_noise = np.random.default_rng(8).normal(0.0, std, size=len(init))
    model = train_dp((X, y), spec, 1.0, 1e-4, np.random.default_rng(0), noise_rng=noise_rng, init=init)
    np.testing.assert_allclose(model.params, -(grad / 50 + expected_noise), rtol=1e-12, atol=1e-12)


def test_dp_training_learns_separable_data():
    X, y = _toy(n=400, d=4)
    spec = LearnerSpec(hidden_layers=(), epochs=20, minibatch_size=50, learning_rate=0.5)
    model = train_dp((X, y), spec, math.inf, 0.0, np.random.default_rng(0))
    assert np.mean(np.argmax(model.predict(X), axis=1) == y) > 0.9


def test_regressor_outputs_in_unit_interval():
    X, y = _toy(regression=True)
    model = train_dp((X, y), LearnerSpec(hidden_layers=(4,), epochs=3, minibatch_size=20), 2.0, 1e-4,
                     np.random.default_rng(0), kind="regressor")
    out = model.predict(X)
    assert out.shape == (len(X),)
    assert np.all((out >= 0) & (out <= 1))


def test_train_rejects_empty_and_mismatched():
    spec = LearnerSpec(hidden_layers=())
    with pytest.raises(InvalidInputError):
        train_dp((np.zeros((0, 3)), np.zeros(0)), spec, 1.0, 1e-4, np.random.default_rng(0))
    with pytest.raises(InvalidInputError):
        train_dp((np.zeros((4, 3)), np.zeros(3)), spec, 1.0, 1e-4, np.random.default_rng(0))


def test_pretrain_requires_public_flag():
    X, y = _toy()
    with pytest.raises(ConfigurationError):
        pretrain_public((X, y), LearnerSpec(hidden_layers=(3,)), np.random.default_rng(0))


def test_finetune_leaves_frozen_prefix_bit_identical():
    X, y = _toy(n=80)
    base = LearnerSpec(hidden_layers=(6, 5), epochs=2, minibatch_size=20)
    pre = pretrain_public((X, y), base, np.random.default_rng(0), public=True)
    spec = LearnerSpec(hidden_layers=(6, 5), epochs=2, minibatch_size=20, freeze_prefix=2)
    tuned = finetune_dp(pre, (X, y), spec, 1.0, 1e-4, np.random.default_rng(1))
    frozen_end = tuned.layer_slice(1).stop
    np.testing.assert_array_equal(tuned.params[:frozen_end], pre.params[:frozen_end])
    assert not np.array_equal(tuned.params[frozen_end:], pre.params[frozen_end:])


def test_transfer_learner_contract():
    X, y = _toy()
    pre = pretrain_public((X, y), LearnerSpec(hidden_layers=(3,), epochs=1), np.random.default_rng(0), public=True)
    with pytest.raises(ConfigurationError):
        TransferLearner(pre, LearnerSpec(hidden_layers=(3,), freeze_prefix=0))
    with pytest.raises(ConfigurationError):
        finetune_dp(pre, (X, y), LearnerSpec(hidden_layers=(4,), freeze_prefix=1), 1.0, 1e-4, np.random.default_rng(0))
    learner = TransferLearner(pre, LearnerSpec(hidden_layers=(3,), epochs=1, freeze_prefix=1))
    assert learner.kind == "classifier"
    assert learner.fit((X, y), 1.0, 1e-4, np.random.default_rng(0)).sizes == pre.sizes


def test_model_json_roundtrip():
    X, y = _toy()
    model = DPLearner(LearnerSpec(hidden_layers=(3,), epochs=1)).fit((X, y), 1.0, 1e-4, np.random.default_rng(0))
    back = TrainedModel.from_json(model.to_json())
    np.testing.assert_array_equal(back.params, model.params)
    assert back.sizes == model.sizes and back.certified_epsilon == 1.0
    inf_model = train_dp((X, y), LearnerSpec(hidden_layers=(), epochs=1), math.inf, 0.0, np.random.default_rng(0))
    assert math.isinf(TrainedModel.from_json(inf_model.to_json()).certified_epsilon)


def test_model_is_immutable():
    X, y = _toy()
    model = train_dp((X, y), LearnerSpec(hidden_layers=(), epochs=1), math.inf, 0.0, np.random.default_rng(0))
    with pytest.raises(ValueError):
        model.params[0] = 1.0
