"""Layers built from the primitive ops: dense maps and an LSTM cell."""
from __future__ import annotations

import json
from typing import Iterator, Mapping, MutableMapping

import numpy as np

from .tensor import (ShapeError, Tensor, _make, as_tensor, concat, matmul, sigmoid, stack,
                     tanh)

CHECKPOINT_VERSION = 1


class ParamStore(dict):
    """Ordered ``name -> Tensor`` mapping of trainable leaves."""

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(value, requires_grad=True, name=name)
        self[name] = t
        return t

    def zero_grad(self) -> None:
        for p in self.values():
            p.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        return {k: (np.zeros_like(p.data) if p.grad is None else p.grad)
                for k, p in self.items()}

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.items()}

    def load(self, values: Mapping[str, np.ndarray]) -> None:
        for k, p in self.items():
            v = np.asarray(values[k], dtype=np.float64)
            if v.shape != p.shape:
                raise ShapeError(f"{k}: checkpoint shape {v.shape} != {p.shape}")
            p.data = v.copy()

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.values()))


def uniform_fan_in(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_linear(store: ParamStore, rng, prefix: str, n_in: int, n_out: int) -> None:
    store.add(f"{prefix}.W", uniform_fan_in(rng, n_in, (n_in, n_out)))
    store.add(f"{prefix}.b", uniform_fan_in(rng, n_in, (n_out,)))


def linear(x: Tensor, store: Mapping[str, Tensor], prefix: str) -> Tensor:
    return matmul(x, store[f"{prefix}.W"]) + store[f"{prefix}.b"]


def init_lstm(store: ParamStore, rng, prefix: str, n_in: int, hidden: int,
              forget_bias: float = 1.0) -> None:
    """Gate order in the fused weight is (input, forget, candidate, output)."""
    fan_in = n_in + hidden
    W = uniform_fan_in(rng, fan_in, (fan_in, 4 * hidden))
    b = uniform_fan_in(rng, fan_in, (4 * hidden,))
    b[hidden:2 * hidden] = forget_bias
    store.add(f"{prefix}.W", W)
    store.add(f"{prefix}.b", b)


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, W: Tensor, b: Tensor) -> tuple[Tensor, Tensor]:
    """One step of a standard LSTM (no peepholes).

    ``x`` is ``(B, n_in)``, ``h`` and ``c`` are ``(B, H)``, ``W`` is
    ``(n_in + H, 4H)``.
    """
    H = h.shape[-1]
    if c.shape != h.shape or W.shape != (x.shape[-1] + H, 4 * H) or b.shape != (4 * H,):
        raise ShapeError(f"lstm_cell shapes x={x.shape} h={h.shape} c={c.shape} "
                         f"W={W.shape} b={b.shape}")
    z = matmul(concat([x, h], axis=-1), W) + b
    i = sigmoid(z[..., :H])
    f = sigmoid(z[..., H:2 * H])
    g = tanh(z[..., 2 * H:3 * H])
    o = sigmoid(z[..., 3 * H:])
    c_new = f * c + i * g
    h_new = o * tanh(c_new)
    return h_new, c_new


def run_lstm_cells(xs: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """Unroll :func:`lstm_cell` over ``(B, T, n_in)`` from a zero state.

    Reference path: one graph node per gate per step. :func:`lstm_sequence`
    computes the same thing as a single node.
    """
    B, T = xs.shape[:2]
    H = W.shape[1] // 4
    h = Tensor(np.zeros((B, H)))
    c = Tensor(np.zeros((B, H)))
    out = []
    for t in range(T):
        h, c = lstm_cell(xs[:, t], h, c, W, b)
        out.append(h)
    return stack(out, axis=1)


def _sig(x):
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def lstm_sequence(xs, W: Tensor, b: Tensor) -> Tensor:
    """Hidden states ``(B, T, H)`` of an LSTM run over ``(B, T, n_in)`` from a zero state."""
    xs = as_tensor(xs)
    B, T, n_in = xs.shape
    H = W.shape[1] // 4
    if W.shape != (n_in + H, 4 * H) or b.shape != (4 * H,):
        raise ShapeError(f"lstm_sequence shapes x={xs.shape} W={W.shape} b={b.shape}")
    Wx, Wh = W.data[:n_in], W.data[n_in:]
    xz = xs.data @ Wx + b.data
    gates = np.empty((B, T, 4 * H))
    cs = np.empty((B, T + 1, H))
    hs = np.empty((B, T + 1, H))
    tcs = np.empty((B, T, H))
    cs[:, 0] = 0.0
    hs[:, 0] = 0.0
    for t in range(T):
        z = xz[:, t] + hs[:, t] @ Wh
        a = gates[:, t]
        a[:, :2 * H] = _sig(z[:, :2 * H])
        a[:, 2 * H:3 * H] = np.tanh(z[:, 2 * H:3 * H])
        a[:, 3 * H:] = _sig(z[:, 3 * H:])
        i, f, g, o = a[:, :H], a[:, H:2 * H], a[:, 2 * H:3 * H], a[:, 3 * H:]
        cs[:, t + 1] = f * cs[:, t] + i * g
        tcs[:, t] = np.tanh(cs[:, t + 1])
        hs[:, t + 1] = o * tcs[:, t]

    def backward(dH):
        dz_all = np.empty((B, T, 4 * H))
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        for t in range(T - 1, -1, -1):
            a = gates[:, t]
            i, f, g, o = a[:, :H], a[:, H:2 * H], a[:, 2 * H:3 * H], a[:, 3 * H:]
            dh = dH[:, t] + dh_next
            tc = tcs[:, t]
            dc = dc_next + dh * o * (1.0 - tc * tc)
            dz = dz_all[:, t]
            dz[:, :H] = dc * g * i * (1.0 - i)
            dz[:, H:2 * H] = dc * cs[:, t] * f * (1.0 - f)
            dz[:, 2 * H:3 * H] = dc * i * (1.0 - g * g)
            dz[:, 3 * H:] = dh * tc * o * (1.0 - o)
            dc_next = dc * f
            dh_next = dz @ Wh.T
        flat = dz_all.reshape(B * T, 4 * H)
        if W.requires_grad:
            gW = np.empty_like(W.data)
            gW[:n_in] = xs.data.reshape(B * T, n_in).T @ flat
            gW[n_in:] = hs[:, :T].reshape(B * T, H).T @ flat
            W._accumulate(gW)
        if b.requires_grad:
            b._accumulate(flat.sum(axis=0))
        if xs.requires_grad:
            xs._accumulate((flat @ Wx.T).reshape(B, T, n_in))
    return _make(hs[:, 1:].copy(), (xs, W, b), backward)


def run_lstm(xs, store: Mapping[str, Tensor], prefix: str) -> Tensor:
    """Hidden states of the LSTM stored under ``prefix`` over ``(B, T, n_in)``."""
    return lstm_sequence(xs, store[f"{prefix}.W"], store[f"{prefix}.b"])


def save_checkpoint(path, store: Mapping[str, Tensor], meta: Mapping | None = None) -> None:
    doc = {
        "version": CHECKPOINT_VERSION,
        "meta": dict(meta or {}),
        "tensors": {k: {"shape": list(p.shape), "values": p.data.ravel().tolist()}
                    for k, p in store.items()},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"checkpoint version {doc.get('version')} != {CHECKPOINT_VERSION}")
    tensors = {k: np.asarray(v["values"], dtype=np.float64).reshape(v["shape"])
               for k, v in doc["tensors"].items()}
    return tensors, doc.get("meta", {})
