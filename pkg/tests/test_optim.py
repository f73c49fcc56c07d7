import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import adam_trajectory
from paee.errors import EmptyTrainingSet, InvalidConfig, ShapeMismatch
from paee.nn import ModelConfig, init_params, mse_loss, predict
from paee.optim import AdamState, History, TrainConfig, adam_step, train
from paee.sequencing import Batch

# theta after each of three Adam steps on f = theta^2 from theta0 = 1, lr = 0.1,
# frozen from a hand-stepped evaluation (step 2: m = 0.36, v = 0.007236)
FROZEN_QUADRATIC = [0.9000000005, 0.8004122286917928, 0.7015862729460303]


def run_adam(theta0, grad_fn, steps, **kw):
    st_ = AdamState(**kw)
    p = {"theta": np.array([theta0], dtype=np.float64)}
    out = []
    for _ in range(steps):
        adam_step(st_, p, {"theta": np.array([grad_fn(p["theta"][0])])})
        out.append(float(p["theta"][0]))
    return out


def test_adam_quadratic_three_steps():
    traj = run_adam(1.0, lambda th: 2 * th, 3, lr=0.1)
    oracle = adam_trajectory(1.0, lambda th: 2 * th, 3, lr=0.1)
    assert np.allclose(traj, oracle, atol=1e-12, rtol=0)
    assert np.allclose(traj, FROZEN_QUADRATIC, atol=1e-12, rtol=0)


def test_adam_first_step_sign():
    st_ = AdamState(lr=0.01)
    p = {"a": np.array([1.0, 1.0, 1.0])}
    adam_step(st_, p, {"a": np.array([3.0, -0.5, 200.0])})
    assert np.allclose(p["a"], [0.99, 1.01, 0.99], atol=1e-8)


def test_adam_zero_grad():
    st_ = AdamState()
    p = {"a": np.array([1.5, -2.0])}
    adam_step(st_, p, {"a": np.zeros(2)})
    assert p["a"].tolist() == [1.5, -2.0] and st_.t == 1


def test_adam_shape_errors():
    with pytest.raises(ShapeMismatch):
        adam_step(AdamState(), {"a": np.zeros(2)}, {"a": np.zeros(3)})
    with pytest.raises(ShapeMismatch):
        adam_step(AdamState(), {"a": np.zeros(2)}, {"b": np.zeros(2)})


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=10), st.floats(1e-5, 1.0))
def test_adam_first_step_bounded(g, lr):
    st_ = AdamState(lr=lr)
    p0 = np.zeros(len(g))
    p = {"a": p0.copy()}
    adam_step(st_, p, {"a": np.array(g)})
    assert np.all(np.abs(p["a"] - p0) <= lr * (1 + 1e-6))


def test_train_config_validation():
    with pytest.raises(InvalidConfig):
        TrainConfig(epochs=0)
    with pytest.raises(InvalidConfig):
        TrainConfig(beta1=1.0)
    assert TrainConfig().batch_size == 512 and TrainConfig().epochs == 50


def linear_task(n=200, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 1, size=(n, 1, 1))
    return Batch(x, 2.0 * x[:, 0, 0], t=np.arange(n, dtype=np.float64))


def test_train_linear_converges():
    data = linear_task()
    model = init_params(ModelConfig(input_dim=1, gru_sizes=(8,), head_sizes=(8,), dropout=0.0), 0)
    _, hist = train(model, data, data, TrainConfig(epochs=50, batch_size=16, lr=1e-2))
    assert len(hist.train_mse) == 50 and all(math.isfinite(v) for v in hist.train_mse)
    assert hist.train_mse[-1] <= hist.train_mse[0] / 100


def test_train_deterministic_and_val_untouched():
    data, val = linear_task(seed=1), linear_task(60, seed=2)
    before = (val.x.tobytes(), val.y.tobytes())
    cfg = TrainConfig(epochs=5, batch_size=32, seed=3)
    mk = lambda: init_params(ModelConfig(input_dim=1, gru_sizes=(4,), head_sizes=(4,)), 0)
    _, h1 = train(mk(), data, val, cfg)
    _, h2 = train(mk(), data, val, cfg)
    assert h1.train_mse == h2.train_mse and h1.val_mse == h2.val_mse
    assert (val.x.tobytes(), val.y.tobytes()) == before


def test_train_returns_best_checkpoint():
    data, val = linear_task(seed=1), linear_task(60, seed=2)
    model = init_params(ModelConfig(input_dim=1, gru_sizes=(4,), head_sizes=(4,)), 0)
    model, hist = train(model, data, val, TrainConfig(epochs=8, batch_size=32, lr=3e-2))
    assert hist.best_epoch == int(np.argmin(hist.val_mse))
    assert mse_loss(predict(model, val), val.y)[0] == pytest.approx(min(hist.val_mse), rel=1e-12)


def test_train_large_batch_and_empty():
    data = linear_task(20)
    model = init_params(ModelConfig(input_dim=1, gru_sizes=(4,), head_sizes=()), 0)
    _, hist = train(model, data, None, TrainConfig(epochs=3, batch_size=1000))
    assert len(hist.train_mse) == 3 and hist.val_mse == []
    with pytest.raises(EmptyTrainingSet):
        train(model, data.take(slice(0, 0)), None, TrainConfig(epochs=1))


def test_history_csv(tmp_path):
    h = History([1.0, 0.5], [2.0, 1.5], 1)
    h.write_csv(tmp_path / "log.csv")
    assert (tmp_path / "log.csv").read_text().splitlines() == ["epoch,train_mse,val_mse", "1,1.0,2.0", "2,0.5,1.5"]
