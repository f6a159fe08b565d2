"""Recursive 1D U-Net built from repeatable items.

Each depth runs `repeats` items on the way down, hands off to the nested
inner block through a strided conv, comes back up through a
nearest-repeat + conv, merges the skip with a 1x1 conv, and runs `repeats`
items on the way up. An item is: residual conv unit, noise-level
modulation, then optional channel injection (decoder side of one depth),
self-attention and cross-attention.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, ShapeStore, Tensor
from .layers import (Conv1d, CrossAttention, GroupNorm, Modulation,
                     SelfAttention, SigmaMLP)


@dataclass
class UNetConfig:
    in_channels: int
    channels: list[int]
    factors: list[int]
    repeats: list[int]
    attention: list[bool] = field(default_factory=list)
    cross_attention: list[bool] = field(default_factory=list)
    inject_depth: int | None = None
    inject_channels: int = 0
    heads: int = 8
    head_features: int = 32
    context_features: int = 0
    modulation_features: int = 64

    def __post_init__(self):
        d = len(self.channels)
        if not self.attention:
            self.attention = [False] * d
        if not self.cross_attention:
            self.cross_attention = [False] * d
        self.attention = [bool(v) for v in self.attention]
        self.cross_attention = [bool(v) for v in self.cross_attention]

    @property
    def depth(self) -> int:
        return len(self.channels)

    @property
    def total_factor(self) -> int:
        return int(np.prod(self.factors))

    def validate(self):
        problems = []
        d = self.depth
        if d < 1:
            problems.append("channels list is empty")
        for fname in ("factors", "repeats", "attention", "cross_attention"):
            if len(getattr(self, fname)) != d:
                problems.append(f"{fname} has {len(getattr(self, fname))} entries, expected {d}")
        if any(f < 1 for f in self.factors):
            problems.append(f"factors must be >= 1, got {self.factors}")
        if any(r < 1 for r in self.repeats):
            problems.append(f"repeats must be >= 1, got {self.repeats}")
        if self.inject_depth is not None:
            if not (0 <= self.inject_depth < d):
                problems.append(f"inject_depth {self.inject_depth} outside depth range 0..{d - 1}")
            if self.inject_channels < 1:
                problems.append("inject_depth set but inject_channels < 1")
        elif self.inject_channels:
            problems.append("inject_channels set without inject_depth")
        if any(self.cross_attention) and self.context_features < 1:
            problems.append("cross-attention enabled but context_features < 1")
        if problems:
            raise ValueError("invalid U-Net config: " + "; ".join(problems))


def _resample_conv(store, name, c_in, c_out, factor):
    """Strided conv whose output length is exactly length/factor."""
    if factor == 1:
        return Conv1d(store, name, c_in, c_out, k=3)
    if factor % 2 == 0:
        return Conv1d(store, name, c_in, c_out, k=2 * factor, stride=factor, padding=factor // 2)
    return Conv1d(store, name, c_in, c_out, k=2 * factor - 1, stride=factor, padding=(factor - 1) // 2)


class _Item:
    def __init__(self, store, name, cfg: UNetConfig, depth: int, with_inject: bool):
        ch = cfg.channels[depth]
        self.c1 = Conv1d(store, f"{name}.res.c1", ch, ch, k=3)
        self.gn = GroupNorm(store, f"{name}.res.gn", ch)
        self.c2 = Conv1d(store, f"{name}.res.c2", ch, ch, k=3, init="zeros")
        self.mod = Modulation(store, f"{name}.mod", cfg.modulation_features, ch)
        self.inject_merge = None
        if with_inject:
            self.inject_merge = Conv1d(store, f"{name}.inj", ch + cfg.inject_channels, ch, k=1)
        self.attn = None
        if cfg.attention[depth]:
            self.attn_gn = GroupNorm(store, f"{name}.attn.gn", ch)
            self.attn = SelfAttention(store, f"{name}.attn", ch, cfg.heads, cfg.head_features)
        self.cross = None
        if cfg.cross_attention[depth]:
            self.cross_gn = GroupNorm(store, f"{name}.cross.gn", ch)
            self.cross = CrossAttention(store, f"{name}.cross", ch, cfg.context_features,
                                        cfg.heads, cfg.head_features)

    def __call__(self, h, feat, context, context_mask, inject):
        h = h + self.c2(ad.silu(self.gn(self.c1(h))))
        h = self.mod(h, feat)
        if inject is not None:
            if self.inject_merge is None:
                raise ValueError("inject tensor routed to an item without an inject unit")
            h = self.inject_merge(ad.concat([h, inject], axis=1))
        if self.attn is not None:
            h = h + self.attn(self.attn_gn(h))
        if self.cross is not None:
            h = h + self.cross(self.cross_gn(h), context, context_mask)
        return h


class UNet1d:
    """Shape-preserving denoiser: forward(x, sigma, inject?, context?) -> v-hat."""

    def __init__(self, config: UNetConfig, store: ParamStore, prefix=""):
        config.validate()
        self.config = config
        self.store = store
        p = prefix
        cfg = config
        D = cfg.depth

        self.sigma_mlp = SigmaMLP(store, f"{p}sigma_mlp", cfg.modulation_features)
        self.entry = _resample_conv(store, f"{p}in", cfg.in_channels, cfg.channels[0], cfg.factors[0])

        self.down_items, self.to_inner = [], []
        for d in range(D):
            items = [_Item(store, f"{p}d{d}.down{i}", cfg, d, with_inject=False)
                     for i in range(cfg.repeats[d])]
            self.down_items.append(items)
            if d < D - 1:
                self.to_inner.append(
                    _resample_conv(store, f"{p}d{d}.inner", cfg.channels[d], cfg.channels[d + 1],
                                   cfg.factors[d + 1]))

        self.up_items, self.from_inner, self.merge = [], [], []
        for d in range(D - 1, -1, -1):
            if d < D - 1:
                self.from_inner.insert(0, Conv1d(store, f"{p}d{d}.outer",
                                                 cfg.channels[d + 1], cfg.channels[d], k=3))
                self.merge.insert(0, Conv1d(store, f"{p}d{d}.merge",
                                            2 * cfg.channels[d], cfg.channels[d], k=1))
            items = [_Item(store, f"{p}d{d}.up{i}", cfg, d,
                           with_inject=(cfg.inject_depth == d and i == 0))
                     for i in range(cfg.repeats[d])]
            self.up_items.insert(0, items)

        if cfg.factors[0] > 1:
            self.tail = Conv1d(store, f"{p}tail", cfg.channels[0], cfg.channels[0], k=3)
        else:
            self.tail = None
        self.out = Conv1d(store, f"{p}out", cfg.channels[0], cfg.in_channels, k=3, init="zeros")

    # -- forward -------------------------------------------------------

    def _check_inputs(self, x, inject, context, context_mask):
        cfg = self.config
        B, C, L = x.shape
        if C != cfg.in_channels:
            raise ValueError(f"input has {C} channels, model expects {cfg.in_channels}")
        if L % cfg.total_factor:
            raise ValueError(f"input length {L} not divisible by total factor {cfg.total_factor}")
        if (inject is not None) != (cfg.inject_depth is not None):
            raise ValueError("inject tensor must be given exactly when the config declares inject_depth")
        if inject is not None and inject.shape[1] != cfg.inject_channels:
            raise ValueError(f"inject has {inject.shape[1]} channels, config says {cfg.inject_channels}")
        needs_ctx = any(cfg.cross_attention)
        if needs_ctx and (context is None or context_mask is None):
            raise ValueError("cross-attention items need a context and a context mask")
        if not needs_ctx and context is not None:
            raise ValueError("context given but the config has no cross-attention items")

    def _inject_at(self, inject, length):
        lz = inject.shape[2]
        if length % lz:
            raise ValueError(
                f"inject length {lz} is not an integer divisor of depth length {length}")
        return ad.repeat(ad.as_tensor(inject), length // lz, axis=2)

    def forward(self, x, sigma, inject=None, context=None, context_mask=None):
        x = ad.as_tensor(x)
        self._check_inputs(x, inject, context, context_mask)
        cfg = self.config
        feat = self.sigma_mlp(sigma, x.shape[0], dtype=x.dtype)
        h = self.entry(x)
        h = self._block(0, h, feat, context, context_mask, inject)
        if self.tail is not None:
            h = self.tail(ad.repeat(h, cfg.factors[0], axis=2))
        return self.out(h)

    __call__ = forward

    def _block(self, d, h, feat, context, context_mask, inject):
        cfg = self.config
        ctx = context if cfg.cross_attention[d] else None
        for item in self.down_items[d]:
            h = item(h, feat, ctx, context_mask, None)
        if d < cfg.depth - 1:
            skip = h
            inner = self.to_inner[d](h)
            inner = self._block(d + 1, inner, feat, context, context_mask, inject)
            up = self.from_inner[d](ad.repeat(inner, cfg.factors[d + 1], axis=2))
            h = self.merge[d](ad.concat([up, skip], axis=1))
        for i, item in enumerate(self.up_items[d]):
            inj = None
            if cfg.inject_depth == d and i == 0:
                inj = self._inject_at(inject, h.shape[2])
            h = item(h, feat, ctx, context_mask, inj)
        return h

    def param_count(self) -> int:
        return self.store.count()


def build(config: UNetConfig, seed: int, dtype=np.float32) -> UNet1d:
    """Deterministically initialized model: same seed, same parameters."""
    store = ParamStore(rng=np.random.default_rng(seed), dtype=dtype)
    return UNet1d(config, store)


def config_param_count(config: UNetConfig) -> int:
    """Parameter total for a config without allocating any arrays."""
    store = ShapeStore()
    UNet1d(config, store)
    return store.count()
