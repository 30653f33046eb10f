"""Small numpy networks with hand-written backprop, and the model container.

Tensors are channel-last: (batch, time, band, channels).
"""
from __future__ import annotations

import io
import json
import zipfile

import numpy as np

MODEL_FORMAT_VERSION = 1


class ModelFileError(ValueError):
    pass


# ------------------------------------------------------------------- primitives

def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def conv3x3(x, w, b):
    """'same' 3x3 convolution. x: (N,H,W,C), w: (C,3,3,O), b: (O,)."""
    N, H, W, C = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(1, 2))
    cols = cols.reshape(N * H * W, C * 9)
    y = cols @ w.reshape(C * 9, -1) + b
    return y.reshape(N, H, W, -1), cols


def conv3x3_backward(g, cols, w):
    N, H, W, O = g.shape
    C = w.shape[0]
    g2 = g.reshape(-1, O)
    dw = (cols.T @ g2).reshape(w.shape)
    db = g2.sum(axis=0)
    gp = np.pad(g, ((0, 0), (1, 1), (1, 1), (0, 0)))
    gcols = np.lib.stride_tricks.sliding_window_view(gp, (3, 3), axis=(1, 2)).reshape(N * H * W, O * 9)
    wf = w[:, ::-1, ::-1, :].transpose(3, 1, 2, 0).reshape(O * 9, C)
    dx = (gcols @ wf).reshape(N, H, W, C)
    return dx, dw, db


def pool2(x):
    N, H, W, C = x.shape
    return x.reshape(N, H // 2, 2, W // 2, 2, C).mean(axis=(2, 4))


def pool2_backward(g):
    return np.repeat(np.repeat(g, 2, axis=1), 2, axis=2) * 0.25


def up2(x):
    return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)


def up2_backward(g):
    N, H, W, C = g.shape
    return g.reshape(N, H // 2, 2, W // 2, 2, C).sum(axis=(2, 4))


# ---------------------------------------------------------------------- U-Net

class UNet:
    """Three-level encoder/decoder over (time x band) with skip connections.

    Hidden activations are tanh so the finite-difference check stays smooth;
    the output is a sigmoid band mask.
    """

    def __init__(self, params: dict):
        self.params = params

    @classmethod
    def init(cls, channels=(8, 16, 32), seed=0) -> "UNet":
        rng = np.random.default_rng(seed)
        c1, c2, c3 = channels

        def he(cin, cout):
            return rng.normal(0.0, np.sqrt(1.0 / (9 * cin)), (cin, 3, 3, cout))

        p = {
            "enc1.w": he(1, c1), "enc1.b": np.zeros(c1),
            "enc2.w": he(c1, c2), "enc2.b": np.zeros(c2),
            "mid.w": he(c2, c3), "mid.b": np.zeros(c3),
            "dec2.w": he(c3 + c2, c2), "dec2.b": np.zeros(c2),
            "dec1.w": he(c2 + c1, c1), "dec1.b": np.zeros(c1),
            "out.w": rng.normal(0.0, np.sqrt(1.0 / c1), (c1, 1)), "out.b": np.zeros(1),
        }
        return cls(p)

    @property
    def channels(self):
        return (self.params["enc1.w"].shape[3], self.params["enc2.w"].shape[3], self.params["mid.w"].shape[3])

    def forward(self, x):
        """x: (N, T, B) standardized features -> mask (N, T, B), cache."""
        p = self.params
        if x.shape[1] % 4 or x.shape[2] % 4:
            raise ValueError("U-Net input dims must be divisible by 4")
        h0 = x[..., np.newaxis]
        z1, c1 = conv3x3(h0, p["enc1.w"], p["enc1.b"]); e1 = np.tanh(z1)
        p1 = pool2(e1)
        z2, c2 = conv3x3(p1, p["enc2.w"], p["enc2.b"]); e2 = np.tanh(z2)
        p2 = pool2(e2)
        z3, c3 = conv3x3(p2, p["mid.w"], p["mid.b"]); m = np.tanh(z3)
        u2 = np.concatenate([up2(m), e2], axis=-1)
        z4, c4 = conv3x3(u2, p["dec2.w"], p["dec2.b"]); d2 = np.tanh(z4)
        u1 = np.concatenate([up2(d2), e1], axis=-1)
        z5, c5 = conv3x3(u1, p["dec1.w"], p["dec1.b"]); d1 = np.tanh(z5)
        zo = d1 @ p["out.w"] + p["out.b"]
        y = sigmoid(zo)[..., 0]
        cache = (c1, e1, c2, e2, c3, m, c4, d2, c5, d1, y)
        return y, cache

    def backward(self, dy, cache):
        p = self.params
        c1, e1, c2, e2, c3, m, c4, d2, c5, d1, y = cache
        g = {}
        dzo = (dy * y * (1.0 - y))[..., np.newaxis]
        g["out.w"] = d1.reshape(-1, d1.shape[-1]).T @ dzo.reshape(-1, 1)
        g["out.b"] = dzo.sum(axis=(0, 1, 2))
        dd1 = dzo @ p["out.w"].T
        du1, g["dec1.w"], g["dec1.b"] = conv3x3_backward(dd1 * (1 - d1 ** 2), c5, p["dec1.w"])
        cd2 = d2.shape[-1]
        dd2 = up2_backward(du1[..., :cd2])
        de1 = du1[..., cd2:]
        du2, g["dec2.w"], g["dec2.b"] = conv3x3_backward(dd2 * (1 - d2 ** 2), c4, p["dec2.w"])
        cm = m.shape[-1]
        dm = up2_backward(du2[..., :cm])
        de2 = du2[..., cm:]
        dp2, g["mid.w"], g["mid.b"] = conv3x3_backward(dm * (1 - m ** 2), c3, p["mid.w"])
        de2 = de2 + pool2_backward(dp2)
        dp1, g["enc2.w"], g["enc2.b"] = conv3x3_backward(de2 * (1 - e2 ** 2), c2, p["enc2.w"])
        de1 = de1 + pool2_backward(dp1)
        _, g["enc1.w"], g["enc1.b"] = conv3x3_backward(de1 * (1 - e1 ** 2), c1, p["enc1.w"])
        return g

    def loss_and_grads(self, x, target):
        y, cache = self.forward(x)
        diff = y - target
        loss = float(np.mean(diff ** 2))
        grads = self.backward(2.0 * diff / diff.size, cache)
        return loss, grads


# ------------------------------------------------------------------------- MLP

class MLP:
    """One tanh hidden layer, sigmoid output; binary cross-entropy."""

    def __init__(self, params: dict):
        self.params = params

    @classmethod
    def init(cls, n_in, n_hidden=16, seed=0) -> "MLP":
        rng = np.random.default_rng(seed)
        return cls({
            "w1": rng.normal(0.0, np.sqrt(1.0 / n_in), (n_in, n_hidden)), "b1": np.zeros(n_hidden),
            "w2": rng.normal(0.0, np.sqrt(1.0 / n_hidden), (n_hidden, 1)), "b2": np.zeros(1),
        })

    def forward(self, x):
        p = self.params
        h = np.tanh(x @ p["w1"] + p["b1"])
        return sigmoid(h @ p["w2"] + p["b2"])[:, 0], h

    def loss_and_grads(self, x, labels):
        p = self.params
        y, h = self.forward(x)
        yc = np.clip(y, 1e-12, 1 - 1e-12)
        loss = float(-np.mean(labels * np.log(yc) + (1 - labels) * np.log(1 - yc)))
        dz = ((y - labels) / len(y))[:, np.newaxis]
        dh = (dz @ p["w2"].T) * (1 - h ** 2)
        return loss, {"w2": h.T @ dz, "b2": dz.sum(axis=0), "w1": x.T @ dh, "b1": dh.sum(axis=0)}


# ------------------------------------------------------------------- training

class SgdMomentum:
    def __init__(self, params, lr=0.05, momentum=0.9):
        self.lr = lr
        self.momentum = momentum
        self.velocity = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads):
        for k, g in grads.items():
            v = self.velocity[k]
            v *= self.momentum
            v -= self.lr * g
            params[k] += v


class TrainingDiverged(RuntimeError):
    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


def numeric_gradient(f, params, key, index, eps=1e-6):
    """Central finite difference of scalar ``f()`` w.r.t. params[key][index]."""
    old = params[key][index]
    params[key][index] = old + eps
    up = f()
    params[key][index] = old - eps
    down = f()
    params[key][index] = old
    return (up - down) / (2 * eps)


# ------------------------------------------------------------- model container

def save_model(path, kind: str, meta: dict, params: dict) -> None:
    """Write a versioned ``.npz`` holding JSON metadata and float64 arrays."""
    header = {"format": "dialogsep-model", "version": MODEL_FORMAT_VERSION, "kind": kind,
              "meta": meta, "shapes": {k: list(v.shape) for k, v in params.items()}}
    arrays = {"__header__": np.array(json.dumps(header, sort_keys=True))}
    arrays.update({f"param/{k}": np.asarray(v, dtype=np.float64) for k, v in sorted(params.items())})
    # np.savez stamps the wall clock into every member; fixed dates keep files byte-identical
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            buf = io.BytesIO()
            np.lib.format.write_array(buf, arr, allow_pickle=False)
            zf.writestr(info, buf.getvalue())


def load_model(path, kind: str | None = None):
    """Returns (kind, meta, params)."""
    try:
        with np.load(path, allow_pickle=False) as z:
            header = json.loads(str(z["__header__"]))
            params = {k[len("param/"):]: z[k] for k in z.files if k.startswith("param/")}
    except (OSError, KeyError, ValueError, zipfile.BadZipFile) as exc:
        raise ModelFileError(f"cannot read model {path}: {exc}") from exc
    if header.get("format") != "dialogsep-model" or header.get("version") != MODEL_FORMAT_VERSION:
        raise ModelFileError(f"{path}: not a version {MODEL_FORMAT_VERSION} model file")
    if kind is not None and header["kind"] != kind:
        raise ModelFileError(f"{path}: expected a {kind} model, found {header['kind']}")
    for k, shape in header["shapes"].items():
        if k not in params:
            raise ModelFileError(f"{path}: parameter {k} is missing")
        if list(params[k].shape) != shape:
            raise ModelFileError(f"{path}: parameter {k} has shape {params[k].shape}, header says {shape}")
    return header["kind"], header["meta"], params
