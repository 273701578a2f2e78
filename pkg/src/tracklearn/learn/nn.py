"""Dense tanh networks with hand-written reverse mode, and Adam."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import UsageError

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class MlpCache:
    activations: list  # input followed by every hidden activation
    version: int
    squeeze: bool


class Mlp:
    """Affine layers with tanh between them and a linear output.

    ``sizes`` lists the width of every layer, input first, so
    ``(16, 64, 64, 64, 64, 1)`` is a six-layer net with five weight matrices.
    Weights are stored ``(out, in)``.
    """

    def __init__(self, sizes, rng: np.random.Generator | None = None):
        self.sizes = tuple(int(s) for s in sizes)
        if len(self.sizes) < 2:
            raise UsageError("an Mlp needs at least input and output sizes")
        rng = np.random.default_rng(0) if rng is None else rng
        self.W, self.b = [], []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.W.append(rng.uniform(-bound, bound, (fan_out, fan_in)))
            self.b.append(rng.uniform(-bound, bound, fan_out))
        self.version = 0

    @property
    def n_layers(self) -> int:
        return len(self.sizes)

    @property
    def params(self) -> list:
        out = []
        for W, b in zip(self.W, self.b):
            out += [W, b]
        return out

    def touch(self):
        """Mark parameters as modified; outstanding caches become stale."""
        self.version += 1

    def load_params(self, arrays):
        for dst, src in zip(self.params, arrays):
            dst[...] = src
        self.touch()

    def forward(self, x):
        x = np.asarray(x, dtype=float)
        squeeze = x.ndim == 1
        h = x[None, :] if squeeze else x
        if h.shape[-1] != self.sizes[0]:
            raise UsageError(f"expected input width {self.sizes[0]}, got {h.shape[-1]}")
        acts = [h]
        last = len(self.W) - 1
        for i, (W, b) in enumerate(zip(self.W, self.b)):
            z = h @ W.T + b
            h = z if i == last else np.tanh(z)
            if i != last:
                acts.append(h)
        y = h[0] if squeeze else h
        return y, MlpCache(acts, self.version, squeeze)

    def __call__(self, x):
        return self.forward(x)[0]

    def last_hidden(self, cache: MlpCache):
        return cache.activations[-1]

    def backward(self, cache: MlpCache, dy, d_last_hidden=None, param_grads: bool = True):
        """Gradients of a scalar loss given ``dL/dy``.

        ``d_last_hidden`` adds an extra gradient arriving at the last hidden
        activation from a side branch. Returns ``(grads, dx)`` with grads
        ordered like :attr:`params` (``None`` entries when ``param_grads`` is
        false and only the input gradient is wanted).
        """
        if cache.version != self.version:
            raise UsageError("stale forward cache: parameters changed since forward()")
        dy = np.asarray(dy, dtype=float)
        g = dy[None, :] if cache.squeeze else dy
        acts = cache.activations
        grads = [None] * (2 * len(self.W))
        for i in range(len(self.W) - 1, -1, -1):
            h_in = acts[i]
            if param_grads:
                grads[2 * i] = g.T @ h_in
                grads[2 * i + 1] = g.sum(axis=0)
            dh = g @ self.W[i]
            if i == 0:
                break
            if i == len(self.W) - 1 and d_last_hidden is not None:
                dh = dh + (d_last_hidden[None, :] if cache.squeeze else d_last_hidden)
            g = dh * (1.0 - h_in * h_in)
        dx = dh[0] if cache.squeeze else dh
        return grads, dx


def adam_step(params, grads, moments, lr: float, t: int):
    """In-place bias-corrected Adam update of every array in ``params``.

    ``moments`` is a pair of lists ``(m, v)`` shaped like ``params``.
    """
    if t < 1:
        raise UsageError("Adam step counter starts at 1")
    m, v = moments
    c1 = 1.0 - ADAM_BETA1 ** t
    c2 = 1.0 - ADAM_BETA2 ** t
    for p, g, mi, vi in zip(params, grads, m, v):
        mi *= ADAM_BETA1
        mi += (1.0 - ADAM_BETA1) * g
        vi *= ADAM_BETA2
        vi += (1.0 - ADAM_BETA2) * (g * g)
        p -= lr * (mi / c1) / (np.sqrt(vi / c2) + ADAM_EPS)
    return params


class Adam:
    def __init__(self, params):
        self.params = list(params)
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]
        self.t = 0

    def step(self, grads, lr: float):
        self.t += 1
        adam_step(self.params, grads, (self.m, self.v), lr, self.t)

    def state_arrays(self) -> list:
        return self.m + self.v

    def load_state(self, arrays, t: int):
        if len(arrays) != 2 * len(self.params):
            raise UsageError("optimizer state does not match parameter count")
        for dst, src in zip(self.m + self.v, arrays):
            dst[...] = src
        self.t = int(t)
