import numpy as np
import pytest

from dialogsep.nn import (MLP, ModelFileError, SgdMomentum, UNet, conv3x3, load_model, numeric_gradient,
                          pool2, save_model, up2)


def _rel_err(a, n):
    return abs(a - n) / max(abs(a), abs(n), 1e-7)


def test_unet_gradient_check_every_parameter():
    rng = np.random.default_rng(0)
    net = UNet.init((2, 3, 4), seed=1)
    # nonzero biases so their gradients are exercised away from symmetric points
    for k, v in net.params.items():
        v += rng.normal(0, 0.1, v.shape)
    x = rng.standard_normal((2, 8, 8))
    target = rng.uniform(0, 1, (2, 8, 8))
    _, grads = net.loss_and_grads(x, target)
    worst = 0.0
    for key, p in net.params.items():
        for idx in np.ndindex(p.shape):
            num = numeric_gradient(lambda: net.loss_and_grads(x, target)[0], net.params, key, idx)
            worst = max(worst, _rel_err(grads[key][idx], num))
    assert worst < 1e-4


def test_mlp_gradient_check():
    rng = np.random.default_rng(2)
    net = MLP.init(6, 5, seed=3)
    x = rng.standard_normal((20, 6))
    y = (rng.uniform(size=20) > 0.5).astype(float)
    _, grads = net.loss_and_grads(x, y)
    for key, p in net.params.items():
        for idx in np.ndindex(p.shape):
            num = numeric_gradient(lambda: net.loss_and_grads(x, y)[0], net.params, key, idx)
            assert _rel_err(grads[key][idx], num) < 1e-5


def test_conv_matches_direct_sum():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((1, 5, 6, 2))
    w = rng.standard_normal((2, 3, 3, 3))
    b = rng.standard_normal(3)
    y, _ = conv3x3(x, w, b)
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    ref = np.zeros((1, 5, 6, 3))
    for i in range(5):
        for j in range(6):
            for o in range(3):
                ref[0, i, j, o] = b[o] + sum(xp[0, i + di, j + dj, c] * w[c, di, dj, o]
                                             for c in range(2) for di in range(3) for dj in range(3))
    assert np.allclose(y, ref)


def test_pool_and_upsample_shapes():
    x = np.arange(32, dtype=float).reshape(1, 4, 4, 2)
    p = pool2(x)
    assert p.shape == (1, 2, 2, 2)
    assert p[0, 0, 0, 0] == np.mean([x[0, 0, 0, 0], x[0, 0, 1, 0], x[0, 1, 0, 0], x[0, 1, 1, 0]])
    assert up2(p).shape == x.shape


def test_unet_output_range_and_shape():
    net = UNet.init(seed=0)
    x = np.random.default_rng(1).standard_normal((3, 64, 64)) * 50
    y, _ = net.forward(x)
    assert y.shape == x.shape and np.all((y >= 0) & (y <= 1))
    with pytest.raises(ValueError):
        net.forward(np.zeros((1, 6, 8)))


def test_sgd_momentum_descends_quadratic():
    p = {"w": np.array([5.0])}
    opt = SgdMomentum(p, lr=0.1, momentum=0.5)
    for _ in range(100):
        opt.step(p, {"w": 2 * p["w"]})
    assert abs(p["w"][0]) < 1e-6


def test_model_container_round_trip(tmp_path):
    net = UNet.init((2, 3, 4), seed=5)
    save_model(tmp_path / "m.npz", "band-mask-unet", {"note": "x"}, net.params)
    kind, meta, params = load_model(tmp_path / "m.npz", "band-mask-unet")
    assert kind == "band-mask-unet" and meta == {"note": "x"}
    assert params.keys() == net.params.keys()
    assert all(np.array_equal(params[k], net.params[k]) for k in params)
    save_model(tmp_path / "n.npz", "band-mask-unet", {"note": "x"}, net.params)
    assert (tmp_path / "m.npz").read_bytes() == (tmp_path / "n.npz").read_bytes()


def test_model_container_errors(tmp_path):
    net = MLP.init(3, 2)
    save_model(tmp_path / "m.npz", "dialog-classifier", {}, net.params)
    with pytest.raises(ModelFileError, match="expected a band-mask-unet"):
        load_model(tmp_path / "m.npz", "band-mask-unet")
    (tmp_path / "junk.npz").write_bytes(b"not a model")
    with pytest.raises(ModelFileError):
        load_model(tmp_path / "junk.npz")
    np.savez(tmp_path / "plain.npz", a=np.zeros(3))
    with pytest.raises(ModelFileError):
        load_model(tmp_path / "plain.npz")
