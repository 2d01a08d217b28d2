"""OPNet, its ablations and baselines over ``(B, T, K, 5)`` observation batches.

Learned variants share one output convention: the last layer emits
``(cx, cy, w, h)`` and the width/height pass through softplus, so every
predicted box satisfies ``x1 <= x2`` and ``y1 <= y2`` by construction.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor


class ModelVariant(str, enum.Enum):
    OPNET = "opnet"                 # who-to-track LSTM + where-is-it LSTM
    OPNET_MLP = "opnet-mlp"         # second LSTM replaced by a per-frame perceptron
    BASELINE_LSTM = "baseline-lstm"
    NONLINEAR_LSTM = "nonlinear-lstm"
    HEURISTIC = "heuristic"
    STATIC = "static"

    @property
    def learned(self) -> bool:
        return self not in (ModelVariant.HEURISTIC, ModelVariant.STATIC)

    @classmethod
    def parse(cls, name: str) -> "ModelVariant":
        aliases = {"opnet-lstm-lstm": cls.OPNET, "lstm-lstm": cls.OPNET,
                   "opnet-lstm-mlp": cls.OPNET_MLP, "lstm-mlp": cls.OPNET_MLP,
                   "baseline": cls.BASELINE_LSTM, "static-last-known": cls.STATIC}
        key = name.lower().replace("_", "-")
        if key in aliases:
            return aliases[key]
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown model variant {name!r}") from None


@dataclass(frozen=True)
class ModelConfig:
    variant: ModelVariant = ModelVariant.OPNET
    slots: int = 6
    hidden: int = 256
    baseline_hidden: int = 512
    embed: int = 256
    mlp_hidden: int = 64
    seed: int = 0
    input_scale: float = 10.0

    def to_dict(self) -> dict:
        d = self.__dict__.copy()
        d["variant"] = self.variant.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["variant"] = ModelVariant.parse(d["variant"])
        return cls(**d)


# the head starts out predicting a small box in the middle of the image
_INIT_BOX = np.array([0.5, 0.5, np.log(np.expm1(0.1)), np.log(np.expm1(0.1))])


def init_params(config: ModelConfig) -> ParamStore:
    if not config.variant.learned:
        raise ValueError(f"{config.variant.value} has no parameters")
    rng = np.random.default_rng(config.seed)
    K, H = config.slots, config.hidden
    store = ParamStore()
    v = config.variant
    if v in (ModelVariant.OPNET, ModelVariant.OPNET_MLP):
        ad.init_lstm(store, rng, "who.lstm", 5 * K, H)
        ad.init_linear(store, rng, "who.proj", H, K)
        if v is ModelVariant.OPNET:
            ad.init_lstm(store, rng, "where.lstm", 5, H)
            ad.init_linear(store, rng, "where.proj", H, 4)
            store["where.proj.b"].data[:] = _INIT_BOX
        else:
            ad.init_linear(store, rng, "head.fc1", 5, config.mlp_hidden)
            ad.init_linear(store, rng, "head.fc2", config.mlp_hidden, 4)
            store["head.fc2.b"].data[:] = _INIT_BOX
    elif v is ModelVariant.BASELINE_LSTM:
        ad.init_lstm(store, rng, "base.lstm", 5 * K, config.baseline_hidden)
        ad.init_linear(store, rng, "base.proj", config.baseline_hidden, 4)
        store["base.proj.b"].data[:] = _INIT_BOX
    elif v is ModelVariant.NONLINEAR_LSTM:
        ad.init_linear(store, rng, "embed", 5, config.embed)
        ad.init_lstm(store, rng, "base.lstm", config.embed * K, config.baseline_hidden)
        ad.init_linear(store, rng, "base.proj", config.baseline_hidden, 4)
        store["base.proj.b"].data[:] = _INIT_BOX
    return store


def box_head(raw: Tensor) -> Tensor:
    """``(..., 4)`` raw ``(cx, cy, w, h)`` to corner form with non-negative extent."""
    center = raw[..., :2]
    half = 0.5 * ad.softplus(raw[..., 2:])
    return ad.concat([center - half, center + half], axis=-1)


def _check_obs(obs: np.ndarray, K: Optional[int] = None) -> np.ndarray:
    obs = np.asarray(obs, dtype=np.float64)
    if obs.ndim == 3:
        obs = obs[None]
    if obs.ndim != 4 or obs.shape[-1] != 5:
        raise ad.ShapeError(f"observations must be (B, T, K, 5), got {obs.shape}")
    if K is not None and obs.shape[2] != K:
        raise ad.ShapeError(f"observations have K={obs.shape[2]}, model expects {K}")
    return obs


def normalize_inputs(obs: np.ndarray, scale: float) -> np.ndarray:
    """Fixed affine map of observation rows fed to the learned variants.

    Coordinates are centred on the image and multiplied by ``scale``; the
    visibility flag goes to -1/+1.  A scale of 0 leaves the rows untouched.
    Since attention weights sum to one, the weighted average of mapped rows is
    the mapped average, so the attention stage is unaffected in meaning.
    """
    if not scale:
        return obs
    out = np.empty_like(obs)
    out[..., :4] = (obs[..., :4] - 0.5) * scale
    out[..., 4] = 2.0 * obs[..., 4] - 1.0
    return out


def who_to_track(obs: np.ndarray, params) -> Tensor:
    """Attention over slots, ``(B, T, K)``; rows sum to one."""
    W = params["who.lstm.W"]
    K = params["who.proj.W"].shape[1]
    obs = _check_obs(obs, K)
    if W.shape[0] - W.shape[1] // 4 != 5 * K:
        raise ad.ShapeError(f"who-to-track LSTM input {W.shape} incompatible with K={K}")
    B, T = obs.shape[:2]
    flat = obs.reshape(B, T, 5 * K)
    hs = ad.run_lstm(Tensor(flat), params, "who.lstm")
    logits = ad.linear(hs, params, "who.proj")
    return ad.softmax(logits, axis=-1)


def reduce_by_attention(obs, attn) -> Tensor:
    """Attention-weighted average of the slot rows: ``(..., K, 5) x (..., K) -> (..., 5)``."""
    attn = ad.as_tensor(attn)
    if np.any(attn.data < 0):
        raise ValueError("attention weights must be non-negative")
    obs = ad.as_tensor(obs)
    if obs.shape[:-1] != attn.shape:
        raise ad.ShapeError(f"observation {obs.shape} and attention {attn.shape} disagree")
    weighted = ad.mul(ad.reshape(attn, attn.shape + (1,)), obs)
    return ad.sum_(weighted, axis=-2)


def where_is_it(reduced: Tensor, params) -> Tensor:
    """Second LSTM over ``(B, T, 5)`` summaries, projected to boxes ``(B, T, 4)``."""
    hs = ad.run_lstm(reduced, params, "where.lstm")
    return box_head(ad.linear(hs, params, "where.proj"))


def mlp_head(reduced: Tensor, params) -> Tensor:
    hidden = ad.relu(ad.linear(reduced, params, "head.fc1"))
    return box_head(ad.linear(hidden, params, "head.fc2"))


def forward(variant: ModelVariant, obs: np.ndarray, params,
            input_scale: float = 10.0) -> tuple[Tensor, Optional[Tensor]]:
    """Predicted boxes ``(B, T, 4)`` and, for OPNet variants, attention ``(B, T, K)``."""
    variant = ModelVariant.parse(variant) if isinstance(variant, str) else variant
    if variant.learned:
        obs = normalize_inputs(_check_obs(obs), input_scale)
    if variant in (ModelVariant.OPNET, ModelVariant.OPNET_MLP):
        attn = who_to_track(obs, params)
        reduced = reduce_by_attention(Tensor(obs), attn)
        if variant is ModelVariant.OPNET:
            return where_is_it(reduced, params), attn
        return mlp_head(reduced, params), attn
    if variant in (ModelVariant.BASELINE_LSTM, ModelVariant.NONLINEAR_LSTM):
        obs = _check_obs(obs)
        B, T, K, _ = obs.shape
        if variant is ModelVariant.BASELINE_LSTM:
            xs = Tensor(obs.reshape(B, T, 5 * K))
        else:
            emb = ad.relu(ad.linear(Tensor(obs), params, "embed"))  # (B, T, K, E)
            xs = ad.reshape(emb, (B, T, K * emb.shape[-1]))
        hs = ad.run_lstm(xs, params, "base.lstm")
        return box_head(ad.linear(hs, params, "base.proj")), None
    if variant is ModelVariant.HEURISTIC:
        obs = _check_obs(obs)
        return Tensor(np.stack([heuristic_baseline(v) for v in obs])), None
    if variant is ModelVariant.STATIC:
        obs = _check_obs(obs)
        return Tensor(np.stack([static_last_known(v) for v in obs])), None
    raise ValueError(f"unknown variant {variant!r}")


class Model:
    """A variant plus its parameters (if any)."""

    def __init__(self, config: ModelConfig, params: Optional[ParamStore] = None):
        self.config = config
        self.variant = config.variant
        if params is None and config.variant.learned:
            params = init_params(config)
        self.params = params if params is not None else ParamStore()

    def __call__(self, obs) -> tuple[Tensor, Optional[Tensor]]:
        return forward(self.variant, obs, self.params, self.config.input_scale)

    def predict(self, obs: np.ndarray, batch_size: int = 64) -> tuple[np.ndarray, Optional[np.ndarray]]:
        """Boxes ``(N, T, 4)`` and attention ``(N, T, K)`` without building a graph."""
        obs = _check_obs(obs)
        frozen = {k: Tensor(p.data) for k, p in self.params.items()}
        boxes, attns = [], []
        for lo in range(0, obs.shape[0], batch_size):
            b, a = forward(self.variant, obs[lo:lo + batch_size], frozen, self.config.input_scale)
            boxes.append(b.data)
            if a is not None:
                attns.append(a.data)
        return np.concatenate(boxes), (np.concatenate(attns) if attns else None)

    def save(self, path, meta: Optional[dict] = None) -> None:
        ad.save_checkpoint(path, self.params, {"model": self.config.to_dict(), **(meta or {})})

    @classmethod
    def load(cls, path) -> "Model":
        tensors, meta = ad.load_checkpoint(path)
        config = ModelConfig.from_dict(meta["model"])
        model = cls(config)
        model.params.load(tensors)
        return model


# ---------------------------------------------------------------------------
# programmed baselines (single video, numpy)
# ---------------------------------------------------------------------------

def _center(box: np.ndarray) -> np.ndarray:
    return np.array([0.5 * (box[0] + box[2]), 0.5 * (box[1] + box[3])])


def heuristic_baseline(obs: np.ndarray, target_slot: int = 0) -> np.ndarray:
    """Follow the target; when it vanishes follow whatever is nearest to it.

    While the target row is visible its box is emitted. Once it disappears
    the visible object whose center is closest to the last estimate is
    adopted (lowest slot on ties) and the remembered target-sized box is
    re-centered on it every frame. If nothing is visible the last box is held.
    """
    T, K, _ = obs.shape
    out = np.zeros((T, 4))
    last: Optional[np.ndarray] = None
    tracked: Optional[int] = None
    for t in range(T):
        rows = obs[t]
        if rows[target_slot, 4] > 0.5:
            last = rows[target_slot, :4].copy()
            tracked = None
            out[t] = last
            continue
        if last is None:
            continue
        if tracked is None or rows[tracked, 4] <= 0.5:
            tracked = None
            here = _center(last)
            best = np.inf
            for k in range(K):
                if k == target_slot or rows[k, 4] <= 0.5:
                    continue
                d = np.linalg.norm(_center(rows[k, :4]) - here)
                if d < best:
                    best, tracked = d, k
        if tracked is not None:
            cx, cy = _center(rows[tracked, :4])
            hw, hh = 0.5 * (last[2] - last[0]), 0.5 * (last[3] - last[1])
            last = np.array([cx - hw, cy - hh, cx + hw, cy + hh])
        out[t] = last
    return out


def static_last_known(obs: np.ndarray, target_slot: int = 0) -> np.ndarray:
    """Emit the target's box while visible, then freeze it."""
    T = obs.shape[0]
    out = np.zeros((T, 4))
    last = np.zeros(4)
    for t in range(T):
        if obs[t, target_slot, 4] > 0.5:
            last = obs[t, target_slot, :4].copy()
        out[t] = last
    return out
