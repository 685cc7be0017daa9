from __future__ import annotations

import numpy as np
import pytest

from chfnet.errors import ShapeMismatchError, TrainingDivergedError, ValidationError
from chfnet.nn import layers as L
from chfnet.nn.gradcheck import gradient_check
from chfnet.nn.network import (
    NetworkModel,
    backward,
    build_dcnn,
    build_sequential,
    forward,
    loss_and_gradients,
    mse_loss,
    predict,
)
from chfnet.nn.optim import AdamState, adam_step
from chfnet.nn.training import TrainConfig, evaluate_loss, train


def linear_problem(n: int = 64, seed: int = 0):
    rng = np.random.default_rng(seed)
    features = rng.uniform(-1, 1, size=(n, 2))
    return features, 2.0 * features[:, 0] - features[:, 1] + 0.5


def test_conv1d_is_same_padded_cross_correlation():
    model = build_sequential([L.conv1d(1, 1, kernel_size=3)], input_shape=(6, 1))
    model.parameters[0]["weight"] = np.array([1.0, -2.0, 0.5]).reshape(3, 1, 1)
    model.parameters[0]["bias"] = np.array([0.25])
    x = np.array([1.0, 2.0, 3.0, -1.0, 0.0, 4.0])
    out = forward(model, x.reshape(1, 6, 1)).reshape(-1)
    expected = np.correlate(np.pad(x, 1), [1.0, -2.0, 0.5], mode="valid") + 0.25
    np.testing.assert_allclose(out, expected)


@pytest.mark.parametrize("length", [3, 4, 5, 6])
def test_dcnn_shapes(length):
    model = build_dcnn(length, seed=1)
    assert model.output_shape == (1,)
    assert len([spec for spec in model.layers if spec.has_parameters]) == 8
    assert forward(model, np.zeros((5, length, 1))).shape == (5, 1)
    assert predict(model, np.zeros((7, length))).shape == (7,)


def test_dcnn_parameter_count():
    assert build_dcnn(3).parameter_count == 33633
    # only the first dense layer depends on the input length
    assert build_dcnn(4).parameter_count - build_dcnn(3).parameter_count == 32 * 64


def test_dcnn_rejects_unsupported_length():
    with pytest.raises(ValidationError):
        build_dcnn(7)


def test_forward_rejects_wrong_batch_shape():
    model = build_dcnn(3)
    with pytest.raises(ShapeMismatchError):
        forward(model, np.zeros((2, 4, 1)))


def test_initialisation_is_seeded():
    first, second, other = build_dcnn(3, seed=5), build_dcnn(3, seed=5), build_dcnn(3, seed=6)
    for a, b in zip(first.flat_parameters(), second.flat_parameters()):
        np.testing.assert_array_equal(a, b)
    assert not np.array_equal(first.flat_parameters()[0], other.flat_parameters()[0])


def test_parameter_shapes_are_checked():
    with pytest.raises(ShapeMismatchError):
        NetworkModel(layers=(L.dense(2, 1),), input_shape=(2,), parameters=[{"weight": np.ones((3, 1)), "bias": np.zeros(1)}])


def test_mse_loss():
    assert mse_loss(np.array([1.0, 2.0]), np.array([1.0, 4.0])) == 2.0
    with pytest.raises(ShapeMismatchError):
        mse_loss(np.ones(2), np.ones(3))


def test_dense_gradients_match_finite_differences():
    model = build_sequential([L.dense(3, 2)], input_shape=(3,), seed=2)
    rng = np.random.default_rng(0)
    assert gradient_check(model, rng.normal(size=(4, 3)), rng.normal(size=(4, 2))) < 1e-7


def test_small_relu_network_gradients():
    model = build_sequential(
        [L.conv1d(1, 2, 3), L.activation("relu"), L.flatten(), L.dense(8, 3), L.activation("relu"), L.dense(3, 1)],
        input_shape=(4, 1),
        seed=3,
    )
    rng = np.random.default_rng(1)
    assert gradient_check(model, rng.normal(size=(3, 4, 1)), rng.normal(size=(3, 1))) < 1e-4


def test_dcnn_gradients_match_finite_differences():
    model = build_dcnn(3, seed=4, activation="tanh")
    rng = np.random.default_rng(2)
    batch, target = rng.normal(size=(4, 3, 1)), rng.normal(size=(4, 1))
    assert gradient_check(model, batch, target, sample=200) < 1e-4


def test_gradient_check_detects_corrupted_gradients():
    model = build_sequential([L.dense(3, 4), L.activation("tanh"), L.dense(4, 1)], input_shape=(3,), seed=7)
    rng = np.random.default_rng(3)
    batch, target = rng.normal(size=(5, 3)), rng.normal(size=(5, 1))
    grads = backward(model, batch, target)
    corrupted = [{name: array * 1.1 for name, array in layer.items()} for layer in grads]
    assert gradient_check(model, batch, target, gradients=corrupted) > 1e-2


def test_loss_and_gradients_agree_with_backward():
    model = build_dcnn(3, seed=8)
    rng = np.random.default_rng(4)
    batch, target = rng.normal(size=(3, 3, 1)), rng.normal(size=(3, 1))
    loss, grads = loss_and_gradients(model, batch, target)
    assert loss == mse_loss(forward(model, batch), target)
    for a, b in zip(grads, backward(model, batch, target)):
        for name in a:
            np.testing.assert_array_equal(a[name], b[name])


def test_adam_first_step():
    params = [{"weight": np.array([[1.0]]), "bias": np.array([0.0])}]
    grads = [{"weight": np.array([[0.5]]), "bias": np.array([-2.0])}]
    cfg = TrainConfig(learning_rate=0.1)
    new_params, state = adam_step(params, grads, AdamState.zeros_like(params), cfg)
    # bias-corrected first step moves every entry by ~lr against the gradient sign
    assert new_params[0]["weight"][0, 0] == pytest.approx(0.9, rel=1e-6)
    assert new_params[0]["bias"][0] == pytest.approx(0.1, rel=1e-6)
    assert state.step == 1
    assert state.first_moment[0]["weight"][0, 0] == pytest.approx(0.05)
    assert params[0]["weight"][0, 0] == 1.0


def test_adam_rejects_mismatched_gradients():
    params = [{"weight": np.ones((2, 1)), "bias": np.zeros(1)}]
    grads = [{"weight": np.ones((1, 2)), "bias": np.zeros(1)}]
    with pytest.raises(ShapeMismatchError):
        adam_step(params, grads, AdamState.zeros_like(params), TrainConfig())


def test_train_config_validation():
    with pytest.raises(ValidationError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValidationError):
        TrainConfig(learning_rate=0.0)
    cfg = TrainConfig(seed=3)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.with_seed(9).seed == 9


def test_train_fits_linear_target():
    features, targets = linear_problem()
    model = build_sequential([L.dense(2, 1)], input_shape=(2,), seed=0)
    cfg = TrainConfig(batch_size=16, epochs=200, learning_rate=0.02, seed=1)
    result = train(model, (features, targets), None, cfg)
    assert len(result.history.train_loss) == 200
    assert result.history.valid_loss == [None] * 200
    assert result.final_train_loss < 1e-3
    assert result.history.train_loss[-1] < result.history.train_loss[0]
    assert evaluate_loss(model, (features, targets)) > result.final_train_loss


def test_train_is_deterministic_and_leaves_input_untouched():
    features, targets = linear_problem(40)
    model = build_sequential([L.dense(2, 3), L.activation("tanh"), L.dense(3, 1)], input_shape=(2,), seed=2)
    before = [array.copy() for array in model.flat_parameters()]
    cfg = TrainConfig(batch_size=8, epochs=5, seed=4)
    first = train(model, (features, targets), (features[:10], targets[:10]), cfg)
    second = train(model, (features, targets), (features[:10], targets[:10]), cfg)
    for a, b in zip(first.model.flat_parameters(), second.model.flat_parameters()):
        np.testing.assert_array_equal(a, b)
    for a, b in zip(before, model.flat_parameters()):
        np.testing.assert_array_equal(a, b)
    assert first.history.valid_loss == second.history.valid_loss
    assert all(loss is not None for loss in first.history.valid_loss)


def test_warm_start_sets_output_bias():
    features, targets = linear_problem(20)
    targets = targets + 1000.0
    model = build_sequential([L.dense(2, 1)], input_shape=(2,), seed=0)
    cfg = TrainConfig(epochs=1, learning_rate=1e-12, warm_start_output_bias=True)
    result = train(model, (features, targets), None, cfg)
    assert result.model.parameters[-1]["bias"][0] == pytest.approx(targets.mean(), rel=1e-9)


def test_divergence_is_reported():
    features, _ = linear_problem(8)
    model = build_sequential([L.dense(2, 1)], input_shape=(2,), seed=0)
    with pytest.raises(TrainingDivergedError) as info:
        train(model, (features, np.full(8, 1e200)), None, TrainConfig(batch_size=4, epochs=2))
    assert info.value.epoch == 1
    assert info.value.batch == 0


def naive_forward(model: NetworkModel, sample: np.ndarray) -> np.ndarray:
    values = [list(row) for row in sample]
    for spec, params in zip(model.layers, model.parameters):
        if spec.kind == "conv1d":
            length, pad = len(values), spec.kernel_size // 2
            out = []
            for i in range(length):
                row = []
                for c_out in range(spec.out_channels):
                    total = params["bias"][c_out]
                    for k in range(spec.kernel_size):
                        j = i + k - pad
                        if 0 <= j < length:
                            for c_in in range(spec.in_channels):
                                total += params["weight"][k, c_in, c_out] * values[j][c_in]
                    row.append(total)
                out.append(row)
            values = out
        elif spec.kind == "flatten":
            values = [v for row in values for v in row]
        elif spec.kind == "dense":
            values = [params["bias"][o] + sum(params["weight"][i, o] * values[i] for i in range(spec.in_features))
                      for o in range(spec.out_features)]
        elif spec.activation == "relu":
            values = [[max(v, 0.0) for v in row] for row in values] if isinstance(values[0], list) else [max(v, 0.0) for v in values]
        elif spec.activation == "tanh":
            values = [[np.tanh(v) for v in row] for row in values] if isinstance(values[0], list) else [np.tanh(v) for v in values]
    return np.array(values)


def test_forward_matches_naive_loops():
    model = build_sequential(
        [L.conv1d(1, 3, 3), L.activation("relu"), L.conv1d(3, 2, 3), L.activation("tanh"), L.flatten(),
         L.dense(10, 4), L.activation("relu"), L.dense(4, 1)],
        input_shape=(5, 1),
        seed=11,
    )
    batch = np.random.default_rng(5).normal(size=(4, 5, 1))
    out = forward(model, batch)
    for sample, row in zip(batch, out):
        np.testing.assert_allclose(row, naive_forward(model, sample), rtol=1e-12, atol=1e-12)


def test_identity_dense_layer():
    model = build_sequential([L.dense(3, 3)], input_shape=(3,))
    model.parameters[0]["weight"] = np.eye(3)
    batch = np.random.default_rng(0).normal(size=(4, 3))
    np.testing.assert_array_equal(forward(model, batch), batch)


def test_zero_kernel_conv_emits_bias():
    model = build_sequential([L.conv1d(1, 2, 3)], input_shape=(4, 1))
    model.parameters[0]["weight"] = np.zeros((3, 1, 2))
    model.parameters[0]["bias"] = np.array([1.5, -2.0])
    out = forward(model, np.random.default_rng(0).normal(size=(3, 4, 1)))
    np.testing.assert_array_equal(out, np.broadcast_to([1.5, -2.0], (3, 4, 2)))


def test_mse_loss_matches_term_by_term_sum():
    assert mse_loss(np.zeros(2), np.ones(2)) == 1.0
    rng = np.random.default_rng(6)
    pred, target = rng.normal(size=50), rng.normal(size=50)
    total = 0.0
    for p, t in zip(pred, target):
        total += (p - t) ** 2
    assert mse_loss(pred, target) == pytest.approx(total / 50, rel=1e-12)


def test_zero_problem_has_zero_gradients():
    model = build_sequential([L.dense(3, 1)], input_shape=(3,))
    model.parameters[0]["weight"] = np.zeros((3, 1))
    grads = backward(model, np.zeros((4, 3)), np.zeros((4, 1)))
    assert all(not np.any(array) for array in grads[0].values())


def test_duplicated_batch_keeps_gradients():
    model = build_dcnn(3, seed=9)
    rng = np.random.default_rng(7)
    batch, target = rng.normal(size=(3, 3, 1)), rng.normal(size=(3, 1))
    single = backward(model, batch, target)
    doubled = backward(model, np.concatenate([batch, batch]), np.concatenate([target, target]))
    for a, b in zip(single, doubled):
        for name in a:
            np.testing.assert_allclose(a[name], b[name], rtol=1e-10, atol=1e-14)


@pytest.mark.parametrize("length", [4, 5, 6])
def test_dcnn_gradients_for_augmented_lengths(length):
    model = build_dcnn(length, seed=length, activation="tanh")
    rng = np.random.default_rng(length)
    batch, target = rng.normal(size=(3, length, 1)), rng.normal(size=(3, 1))
    assert gradient_check(model, batch, target, sample=100, seed=length) < 1e-4


def test_adam_zero_gradients_leave_everything_unchanged():
    params = [{"weight": np.array([[1.5, -2.0]]), "bias": np.array([0.25])}]
    grads = [{name: np.zeros_like(array) for name, array in params[0].items()}]
    new_params, state = adam_step(params, grads, AdamState.zeros_like(params), TrainConfig())
    for name in params[0]:
        np.testing.assert_array_equal(new_params[0][name], params[0][name])
        np.testing.assert_array_equal(state.first_moment[0][name], 0.0)
        np.testing.assert_array_equal(state.second_moment[0][name], 0.0)


def test_adam_first_step_from_zero():
    params = [{"bias": np.array([0.0])}]
    grads = [{"bias": np.array([1.0])}]
    new_params, _ = adam_step(params, grads, AdamState.zeros_like(params), TrainConfig(learning_rate=1e-3))
    assert new_params[0]["bias"][0] == pytest.approx(-1e-3 / (1.0 + 1e-8), rel=1e-12)


def test_adam_moves_monotonically_under_constant_gradient():
    params = [{"bias": np.array([0.0])}]
    grads = [{"bias": np.array([0.3])}]
    cfg = TrainConfig(learning_rate=1e-2)
    state = AdamState.zeros_like(params)
    trajectory = [0.0]
    for _ in range(2):
        params, state = adam_step(params, grads, state, cfg)
        trajectory.append(float(params[0]["bias"][0]))
    assert trajectory[0] > trajectory[1] > trajectory[2]
    assert state.step == 2


def test_gradient_check_flags_single_corrupted_entry():
    model = build_sequential([L.dense(3, 4), L.activation("tanh"), L.dense(4, 1)], input_shape=(3,), seed=7)
    rng = np.random.default_rng(3)
    batch, target = rng.normal(size=(5, 3)), rng.normal(size=(5, 1))
    grads = backward(model, batch, target)
    corrupted = [{name: array.copy() for name, array in layer.items()} for layer in grads]
    corrupted[0]["weight"][0, 0] += 1.0
    assert gradient_check(model, batch, target, gradients=corrupted) > 1e-2
