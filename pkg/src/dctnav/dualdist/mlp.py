"""Small fully connected network with hand-written backprop.

Hidden blocks are ``Linear -> LayerNorm -> ReLU`` (the first block skips the
norm so the network can still see the input scale); the head is ``Linear ->
tanh``. Trained with minibatch SGD with momentum on mean squared error.
"""
from __future__ import annotations

import json
import logging
import math

import numpy as np

from ..errors import TrainingError, ValidationError

log = logging.getLogger(__name__)

MODEL_FORMAT = "dctnav-dual-mlp"
MODEL_VERSION = 1
LN_EPS = 1e-5


class MlpNet:
    def __init__(self, layer_dims, layer_norm, rng=None):
        self.layer_dims = list(layer_dims)
        self.layer_norm = list(layer_norm)
        if len(self.layer_norm) != len(self.layer_dims) - 2:
            raise ValidationError("one layer-norm flag per hidden layer")
        rng = np.random.default_rng(0) if rng is None else rng
        self.W, self.b, self.gain, self.bias = [], [], [], []
        for fan_in, fan_out in zip(self.layer_dims[:-1], self.layer_dims[1:]):
            self.W.append(rng.normal(0.0, math.sqrt(2.0 / fan_in), (fan_in, fan_out)))
            self.b.append(np.zeros(fan_out))
        for width in self.layer_dims[1:-1]:
            self.gain.append(np.ones(width))
            self.bias.append(np.zeros(width))

    @property
    def n_hidden(self):
        return len(self.layer_dims) - 2

    def params(self):
        return self.W + self.b + self.gain + self.bias

    def forward(self, x, cache=False):
        a = x
        saved = []
        for i in range(self.n_hidden):
            z = a @ self.W[i] + self.b[i]
            if self.layer_norm[i]:
                mean = z.mean(axis=1, keepdims=True)
                var = z.var(axis=1, keepdims=True)
                inv = 1.0 / np.sqrt(var + LN_EPS)
                zhat = (z - mean) * inv
                z2 = zhat * self.gain[i] + self.bias[i]
            else:
                zhat = inv = None
                z2 = z
            out = np.maximum(z2, 0.0)
            if cache:
                saved.append((a, zhat, inv, z2))
            a = out
        h = np.tanh(a @ self.W[-1] + self.b[-1])
        if cache:
            saved.append((a, None, None, None))
            return h, saved
        return h

    def backward(self, dh, h, saved):
        """Gradients of the loss given ``dL/dh`` at the tanh output."""
        n_hidden = self.n_hidden
        gW = [None] * len(self.W)
        gb = [None] * len(self.b)
        gg = [None] * n_hidden
        gbeta = [None] * n_hidden
        dz = dh * (1.0 - h**2)
        a_prev = saved[-1][0]
        gW[-1] = a_prev.T @ dz
        gb[-1] = dz.sum(axis=0)
        da = dz @ self.W[-1].T
        for i in reversed(range(n_hidden)):
            a_in, zhat, inv, z2 = saved[i]
            dz2 = da * (z2 > 0)
            if self.layer_norm[i]:
                gg[i] = (dz2 * zhat).sum(axis=0)
                gbeta[i] = dz2.sum(axis=0)
                dzhat = dz2 * self.gain[i]
                width = zhat.shape[1]
                dz = inv / width * (width * dzhat - dzhat.sum(axis=1, keepdims=True)
                                    - zhat * (dzhat * zhat).sum(axis=1, keepdims=True))
            else:
                gg[i] = np.zeros_like(self.gain[i])
                gbeta[i] = np.zeros_like(self.bias[i])
                dz = dz2
            gW[i] = a_in.T @ dz
            gb[i] = dz.sum(axis=0)
            if i:
                da = dz @ self.W[i].T
        return gW + gb + gg + gbeta

    def to_dict(self):
        layers = []
        for i, (W, b) in enumerate(zip(self.W, self.b)):
            entry = {"W": W.tolist(), "b": b.tolist()}
            if i < self.n_hidden and self.layer_norm[i]:
                entry["ln_gain"] = self.gain[i].tolist()
                entry["ln_bias"] = self.bias[i].tolist()
            layers.append(entry)
        return layers

    @classmethod
    def from_dict(cls, layer_dims, layer_norm, layers):
        net = cls(layer_dims, layer_norm)
        if len(layers) != len(net.W):
            raise ValidationError("layer count does not match header")
        for i, entry in enumerate(layers):
            W = np.asarray(entry["W"], dtype=float)
            b = np.asarray(entry["b"], dtype=float)
            if W.shape != net.W[i].shape or b.shape != net.b[i].shape:
                raise ValidationError(f"layer {i} shape mismatch")
            if not (np.isfinite(W).all() and np.isfinite(b).all()):
                raise ValidationError(f"layer {i} has non-finite weights")
            net.W[i], net.b[i] = W, b
            if i < net.n_hidden and layer_norm[i]:
                net.gain[i] = np.asarray(entry["ln_gain"], dtype=float)
                net.bias[i] = np.asarray(entry["ln_bias"], dtype=float)
        return net


def sgd_train(net, X, Y, epochs, learning_rate, batch_size, momentum, rng,
              decode, final_lr_fraction=0.01, callback=None):
    """Minimise mean squared error of ``decode(net(X))`` against ``Y``.

    ``decode(h)`` maps tanh outputs to target space and returns
    ``(pred, dpred_dh)`` for the elementwise chain rule. The learning rate
    follows a cosine decay. Returns the per-epoch mean training loss.
    """
    n = len(X)
    velocity = [np.zeros_like(p) for p in net.params()]
    steps_per_epoch = max(1, math.ceil(n / batch_size))
    total = epochs * steps_per_epoch
    losses = []
    step = 0
    for epoch in range(epochs):
        order = rng.permutation(n)
        running = 0.0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            frac = step / max(total - 1, 1)
            lr = learning_rate * (final_lr_fraction + (1 - final_lr_fraction) * 0.5 * (1 + math.cos(math.pi * frac)))
            h, saved = net.forward(X[idx], cache=True)
            pred, dpred = decode(h)
            err = pred - Y[idx]
            running += float(np.sum(err**2))
            dh = (2.0 / (len(idx) * Y.shape[1])) * err * dpred
            grads = net.backward(dh, h, saved)
            for p, g, v in zip(net.params(), grads, velocity):
                v *= momentum
                v -= lr * g
                p += v
            step += 1
        loss = running / (n * Y.shape[1])
        if not math.isfinite(loss):
            raise TrainingError(f"training diverged at epoch {epoch + 1}", epoch=epoch + 1)
        losses.append(loss)
        log.info("epoch %d loss %.3e", epoch + 1, loss)
        if callback is not None:
            callback(epoch, loss)
    return losses


def write_model_file(path, header, layers):
    with open(path, "w") as fh:
        json.dump({"header": header, "layers": layers}, fh)


def read_model_file(path):
    with open(path) as fh:
        blob = json.load(fh)
    header = blob.get("header", {})
    if header.get("format") != MODEL_FORMAT or header.get("version") != MODEL_VERSION:
        raise ValidationError(
            f"unsupported model file: format={header.get('format')!r} version={header.get('version')!r}")
    return header, blob["layers"]
