"""Feed-forward nets: forward-pass equivalences, batch-norm statistics and
bit-exact JSON checkpoints."""

import numpy as np
import pytest

from derm_lab.errors import ContractError, DimensionError
from derm_lab.nn import MLP, gradcheck


def test_train_and_eval_forward_agree_without_batch_norm():
    rng = np.random.default_rng(0)
    net = MLP([3, 8, 8, 1], activation="tanh", rng=rng)
    x = rng.normal(size=(16, 3))
    assert np.allclose(net.forward(x).data, net.forward_eval(x), atol=0.0)


def test_batch_norm_train_statistics():
    from derm_lab.nn.net import BatchNorm
    from derm_lab.nn import Tensor

    rng = np.random.default_rng(1)
    bn = BatchNorm(4)
    x = Tensor(rng.normal(2.0, 3.0, (64, 4)))
    y = bn.forward_train(x).data
    # gamma=1, beta=0: output is exactly centred, scaled by the biased
    # batch std (up to the eps regulariser)
    assert np.allclose(y.mean(axis=0), 0.0, atol=1e-12)
    assert np.allclose(y.std(axis=0), 1.0, atol=1e-4)


def test_batch_norm_running_update_uses_unbiased_variance():
    rng = np.random.default_rng(2)
    net = MLP([2, 3, 1], batch_norm=True, rng=rng)
    norm = net.norms[0]
    x = rng.normal(size=(32, 2))
    pre = x @ net.weights[0].data + net.biases[0].data
    net.forward(x, train=True)
    m = pre.shape[0]
    assert np.allclose(norm.running_mean, 0.1 * pre.mean(axis=0))
    assert np.allclose(norm.running_var,
                       0.9 * 1.0 + 0.1 * pre.var(axis=0) * m / (m - 1))


def test_batch_norm_eval_uses_running_statistics():
    rng = np.random.default_rng(3)
    net = MLP([2, 4, 1], batch_norm=True, rng=rng)
    x = rng.normal(size=(32, 2))
    net.forward(x, train=True)
    y_eval = net.forward_eval(x)
    y_train = net.forward(x, train=True).data
    assert not np.allclose(y_eval, y_train)


def test_gradients_flow_through_batch_norm():
    rng = np.random.default_rng(4)
    net = MLP([2, 4, 1], activation="tanh", batch_norm=True, rng=rng)
    x = rng.normal(size=(8, 2))

    def fn(params):
        return (net.forward(x, train=True) ** 2.0).mean()

    assert gradcheck(fn, net.parameters()) < 1e-5


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(5)
    net = MLP([3, 8, 2], activation="relu", batch_norm=True, rng=rng)
    net.forward(rng.normal(size=(16, 3)), train=True)  # move running stats
    path = tmp_path / "net.json"
    net.save(path)
    clone = MLP.load(path)
    x = rng.normal(size=(4, 3))
    assert np.array_equal(net.forward_eval(x), clone.forward_eval(x))
    assert np.array_equal(net.param_vector(), clone.param_vector())


def test_param_vector_round_trip():
    net = MLP([2, 4, 1], rng=np.random.default_rng(6))
    vec = net.param_vector()
    net.set_param_vector(np.zeros_like(vec))
    assert np.array_equal(net.param_vector(), np.zeros_like(vec))
    net.set_param_vector(vec)
    assert np.array_equal(net.param_vector(), vec)
    with pytest.raises(DimensionError):
        net.set_param_vector(vec[:-1])


def test_same_rng_same_init():
    a = MLP([3, 5, 1], rng=np.random.default_rng(7))
    b = MLP([3, 5, 1], rng=np.random.default_rng(7))
    assert np.array_equal(a.param_vector(), b.param_vector())


def test_input_validation():
    net = MLP([3, 4, 1])
    with pytest.raises(DimensionError):
        net.forward_eval(np.ones((5, 2)))
    with pytest.raises(DimensionError):
        net.forward_eval(np.ones(3))
    with pytest.raises(ContractError):
        MLP([3])
    with pytest.raises(ContractError):
        MLP([3, 4, 1], activation="softplus")
    with pytest.raises(ContractError):
        MLP([3, 4, 4, 1], batch_norm=[True])


def test_per_layer_batch_norm_flags():
    net = MLP([3, 4, 5, 1], batch_norm=[True, False])
    assert net.norms[0] is not None
    assert net.norms[1] is None
    assert net.norms[2] is None  # output layer never normalised
