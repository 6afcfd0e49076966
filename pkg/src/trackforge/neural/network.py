"""Stacked (Bi-)LSTM networks with a per-step dense head."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeMismatch
from .layers import (glorot, lstm_layer_backward, lstm_layer_forward, softmax)


@dataclass
class NetCache:
    layer_caches: list = field(default_factory=list)
    top: np.ndarray | None = None
    xs: np.ndarray | None = None


class RecurrentNet:
    """Stacked LSTM (optionally bidirectional) followed by a dense head per step.

    Parameters live in ``self.params`` in declaration order; layer names are
    the key prefixes before the first dot (``lstm0``, ``lstm0f``, ``head``...).
    """

    def __init__(self, input_dim: int, hidden: int, layers: int, out_dim: int,
                 bidirectional: bool = False, rng: np.random.Generator | None = None,
                 forget_bias: float = 1.0):
        if hidden <= 0 or layers < 1:
            raise ValueError("hidden must be > 0 and layers >= 1")
        self.input_dim = input_dim
        self.hidden = hidden
        self.layers = layers
        self.out_dim = out_dim
        self.bidirectional = bidirectional
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params: dict[str, np.ndarray] = {}
        d = input_dim
        for l in range(layers):
            for name in self._dir_names(l):
                b = np.zeros(4 * hidden)
                b[hidden:2 * hidden] = forget_bias
                self.params[f"{name}.W"] = glorot(rng, (4 * hidden, d))
                self.params[f"{name}.U"] = glorot(rng, (4 * hidden, hidden))
                self.params[f"{name}.b"] = b
            d = hidden * (2 if bidirectional else 1)
        self.params["head.W"] = glorot(rng, (out_dim, d))
        self.params["head.b"] = np.zeros(out_dim)

    def _dir_names(self, l: int) -> list[str]:
        return [f"lstm{l}f", f"lstm{l}b"] if self.bidirectional else [f"lstm{l}"]

    def zero_state(self, batch: int) -> list[tuple[np.ndarray, np.ndarray]]:
        return [(np.zeros((batch, self.hidden)), np.zeros((batch, self.hidden)))
                for _ in range(self.layers)]

    def _lw(self, name):
        p = self.params
        return p[f"{name}.W"], p[f"{name}.U"], p[f"{name}.b"]

    def forward(self, xs: np.ndarray, state=None):
        """Run over ``xs`` (B, T, D).

        ``state`` carries ``(h, c)`` per layer between calls and is only
        meaningful for the unidirectional network. Returns
        ``(ys, new_state, cache)``.
        """
        if xs.ndim != 3 or xs.shape[2] != self.input_dim:
            raise ShapeMismatch(f"expected (B, T, {self.input_dim}) input, got {xs.shape}")
        if state is not None and self.bidirectional:
            raise ValueError("carried state is not defined for a bidirectional network")
        cache = NetCache(xs=xs)
        new_state = []
        h = xs
        for l in range(self.layers):
            if self.bidirectional:
                fw, bw = self._dir_names(l)
                hf, _, cf = lstm_layer_forward(h, *self._lw(fw))
                hb, _, cb = lstm_layer_forward(h[:, ::-1], *self._lw(bw))
                cache.layer_caches.append((cf, cb))
                h = np.concatenate([hf, hb[:, ::-1]], axis=2)
            else:
                h0, c0 = state[l] if state is not None else (None, None)
                h, hc, c = lstm_layer_forward(h, *self._lw(f"lstm{l}"), h0, c0)
                cache.layer_caches.append(c)
                new_state.append(hc)
        cache.top = h
        ys = h @ self.params["head.W"].T + self.params["head.b"]
        return ys, new_state, cache

    def backward(self, dys: np.ndarray, cache: NetCache):
        """Gradients of a scalar loss given ``dL/dys``. Returns ``(grads, dxs)``."""
        p = self.params
        grads: dict[str, np.ndarray] = {}
        top = cache.top
        B, T, Dh = top.shape
        grads["head.W"] = dys.reshape(B * T, -1).T @ top.reshape(B * T, Dh)
        grads["head.b"] = dys.reshape(B * T, -1).sum(axis=0)
        dh = dys @ p["head.W"]
        H = self.hidden
        for l in range(self.layers - 1, -1, -1):
            if self.bidirectional:
                fw, bw = self._dir_names(l)
                cf, cb = cache.layer_caches[l]
                Wf, Uf, _ = self._lw(fw)
                Wb, Ub, _ = self._lw(bw)
                dxf, grads[f"{fw}.W"], grads[f"{fw}.U"], grads[f"{fw}.b"], _, _ = \
                    lstm_layer_backward(dh[:, :, :H], cf, Wf, Uf)
                dxb, grads[f"{bw}.W"], grads[f"{bw}.U"], grads[f"{bw}.b"], _, _ = \
                    lstm_layer_backward(dh[:, ::-1, H:], cb, Wb, Ub)
                dh = dxf + dxb[:, ::-1]
            else:
                name = f"lstm{l}"
                W, U, _ = self._lw(name)
                dh, grads[f"{name}.W"], grads[f"{name}.U"], grads[f"{name}.b"], _, _ = \
                    lstm_layer_backward(dh, cache.layer_caches[l], W, U)
        return {k: grads[k] for k in p if k in grads}, dh


class AssocNet:
    """Scores n measurements plus a NONE option for each track.

    A learned sentinel feature vector is prepended as step 0; per-step scalar
    logits are normalized by a softmax over the n + 1 steps.
    """

    def __init__(self, variant: str = "bilstm", layers: int = 2, hidden: int | None = None,
                 input_dim: int = 6, rng: np.random.Generator | None = None):
        if variant not in ("bilstm", "lstm"):
            raise ValueError(f"unknown association variant {variant!r}")
        if hidden is None:
            hidden = 128 if variant == "bilstm" else 256
        rng = rng if rng is not None else np.random.default_rng(0)
        self.variant = variant
        self.rnn = RecurrentNet(input_dim, hidden, layers, 1, bidirectional=(variant == "bilstm"), rng=rng)
        self.params = self.rnn.params
        self.params["sentinel.e"] = rng.uniform(-0.5, 0.5, size=input_dim)
        self.input_dim = input_dim

    @property
    def architecture(self) -> str:
        return f"assoc-{self.variant}-{self.rnn.layers}x{self.rnn.hidden}"

    def logits(self, feats: np.ndarray):
        """``feats`` (B, n, D) -> logits (B, n + 1) and a cache for backward."""
        B = feats.shape[0]
        sent = np.broadcast_to(self.params["sentinel.e"], (B, 1, self.input_dim))
        xs = np.concatenate([sent, feats], axis=1)
        ys, _, cache = self.rnn.forward(xs)
        return ys[:, :, 0], cache

    def scores(self, feats: np.ndarray) -> np.ndarray:
        lg, _ = self.logits(feats)
        return softmax(lg, axis=1)

    def backward(self, dlogits: np.ndarray, cache: NetCache):
        grads, dxs = self.rnn.backward(dlogits[:, :, None], cache)
        grads["sentinel.e"] = dxs[:, 0].sum(axis=0)
        return grads
