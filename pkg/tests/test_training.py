import numpy as np
import pytest

from hybrid_ens.blocks import ConfigurationError
from hybrid_ens.tensor import ops
from hybrid_ens.tensor.core import Tensor
from hybrid_ens.tensor.nn import Module
from hybrid_ens.training import TrainingError, TrainSchedule, evaluate, restore, train
from hybrid_ens.unet import init_library


class PerPixelBias(Module):
    """x + B with a free bias per pixel: able to memorise one pair exactly."""

    def __init__(self, shape):
        self.bias = Tensor(np.zeros(shape), requires_grad=True)

    def __call__(self, x):
        return ops.add(x, self.bias)


class Exploding(Module):
    def __init__(self):
        self.w = Tensor(np.ones((1, 1, 1, 1)), requires_grad=True)

    def __call__(self, x):
        return ops.hadamard(x, ops.exp(ops.scale(self.w, 1000.0)))


def test_schedule_validation():
    with pytest.raises(ConfigurationError):
        TrainSchedule(((16, 4, 10), (12, 4, 10)))
    with pytest.raises(ConfigurationError):
        TrainSchedule(((32, 4, 10), (16, 4, 10)))
    with pytest.raises(ConfigurationError):
        TrainSchedule(((16, 0, 10),))
    with pytest.raises(ConfigurationError):
        TrainSchedule(lr=-1.0)


def test_schedule_steps():
    s = TrainSchedule()
    assert s.total_steps == 5000
    assert [p[0] for p in s.phases] == [16, 24, 32]
    assert s.scaled(0.01).total_steps == 50


def test_memorises_single_pair():
    rng = np.random.default_rng(0)
    clean = rng.uniform(size=(1, 3, 8, 8))
    deg = clean + 0.1 * rng.standard_normal(clean.shape)
    net = PerPixelBias((1, 3, 8, 8))
    curve = train(net, deg, clean, TrainSchedule(((8, 1, 400),), lr=1e-2), rng)
    assert len(curve) == 400
    assert curve[-1] < 1e-3


def test_zero_learning_rate_leaves_parameters():
    lib = init_library(2, seed=0, surrogates=False)
    net = lib.teacher_network()
    before = net.state_dict()
    rng = np.random.default_rng(1)
    deg = rng.uniform(size=(2, 3, 16, 16))
    train(net, deg, deg, TrainSchedule(((8, 2, 2), (16, 1, 1)), lr=0.0), rng)
    after = net.state_dict()
    assert all(np.array_equal(before[k], after[k]) for k in before)


def test_training_reduces_loss_on_real_network():
    lib = init_library(4, seed=1, surrogates=False)
    net = lib.teacher_network()
    rng = np.random.default_rng(2)
    clean = rng.uniform(0.3, 0.7, size=(4, 3, 8, 8))
    deg = clean + 0.1 * rng.standard_normal(clean.shape)
    curve = train(net, deg, clean, TrainSchedule(((8, 4, 40),), lr=3e-3), rng)
    assert np.mean(curve[-5:]) < np.mean(curve[:5])


def test_nan_loss_raises_with_last_finite_state():
    net = Exploding()
    x = np.ones((1, 1, 8, 8))
    with pytest.raises(TrainingError) as info:
        train(net, x, x, TrainSchedule(((8, 1, 5),)), np.random.default_rng(0))
    err = info.value
    assert err.step == 0 and "w" in err.state
    assert np.array_equal(net.w.data, np.ones((1, 1, 1, 1)))


def test_restore_and_evaluate_batches(rng):
    net = PerPixelBias((1, 3, 8, 8))
    x = rng.uniform(size=(5, 3, 8, 8))
    assert np.array_equal(restore(net, x, batch=2), x)
    m = evaluate(net, x, x)
    assert m == {"psnr": 99.0, "ssim": 1.0}
