"""Learnable 1D building blocks: convolutions, attention, modulation.

Every layer registers its parameters in a ParamStore under a hierarchical
name at construction time, so parameter order (and therefore seeded
initialization) is a pure function of the model structure.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class Conv1d:
    """k-tap 1D convolution; default padding keeps stride-1 lengths."""

    def __init__(self, store, name, c_in, c_out, k, stride=1, padding=None, init="fan_in_uniform"):
        self.stride = stride
        self.padding = (k - 1) // 2 if padding is None else padding
        fan_in = c_in * k
        self.w = store.add(f"{name}.w", (c_out, c_in, k), init, fan_in=fan_in)
        self.b = store.add(f"{name}.b", (c_out,),
                           "zeros" if init == "zeros" else "fan_in_uniform", fan_in=fan_in)

    def __call__(self, x):
        return ad.conv1d(x, self.w, self.b, self.stride, self.padding)


class Linear:
    def __init__(self, store, name, f_in, f_out, init="fan_in_uniform"):
        self.w = store.add(f"{name}.w", (f_in, f_out), init, fan_in=f_in)
        self.b = store.add(f"{name}.b", (f_out,),
                           "zeros" if init == "zeros" else "fan_in_uniform", fan_in=f_in)

    def __call__(self, x):
        return ad.matmul(x, self.w) + self.b


def norm_groups(channels: int) -> int:
    """8 groups, or the channel count when smaller; must divide channels."""
    g = 8 if channels >= 8 else channels
    while channels % g:
        g = math.gcd(channels, g)
    return max(g, 1)


class GroupNorm:
    def __init__(self, store, name, channels, eps=1e-5):
        self.groups = norm_groups(channels)
        self.eps = eps
        self.gamma = store.add(f"{name}.g", (channels,), "ones")
        self.beta = store.add(f"{name}.b", (channels,), "zeros")

    def __call__(self, x):
        return ad.group_norm(x, self.gamma, self.beta, self.groups, self.eps)


class Modulation:
    """Per-channel affine x*(1+scale) + shift, scale/shift from a feature vector.

    The map is zero-initialized, so the unit is an exact identity at step 0.
    """

    def __init__(self, store, name, feat_dim, channels):
        self.channels = channels
        self.map = Linear(store, f"{name}.map", feat_dim, 2 * channels, init="zeros")

    def __call__(self, x, feat):
        if feat.shape[0] != x.shape[0]:
            raise ValueError(f"modulation batch mismatch: x {x.shape[0]}, features {feat.shape[0]}")
        sb = self.map(feat)  # [B, 2C]
        sc = ad.reshape(slice_cols(sb, 0, self.channels), (x.shape[0], self.channels, 1))
        sh = ad.reshape(slice_cols(sb, self.channels, 2 * self.channels), (x.shape[0], self.channels, 1))
        return x * (sc + 1.0) + sh


def slice_cols(t, start, stop):
    """Differentiable slice along the last axis."""
    t = ad.as_tensor(t)
    idx = (slice(None),) * (t.ndim - 1) + (slice(start, stop),)
    out_data = t.data[idx]

    def bwd(g):
        full = np.zeros_like(t.data)
        full[idx] = g
        return (full,)

    return ad._make(out_data, (t,), bwd)


def _split_heads(t, heads, head_dim):
    # [B, L, H*D] -> [B, H, L, D]
    B, L, _ = t.shape
    return ad.transpose(ad.reshape(t, (B, L, heads, head_dim)), (0, 2, 1, 3))


def _merge_heads(t):
    # [B, H, L, D] -> [B, L, H*D]
    B, H, L, D = t.shape
    return ad.reshape(ad.transpose(t, (0, 2, 1, 3)), (B, L, H * D))


class SelfAttention:
    """Multi-head softmax(QK^T/sqrt(d))V over time positions, with out-projection.

    No positional encoding: permuting time positions permutes outputs.
    The out-projection starts at zero so a residual wrapper is an identity
    at initialization.
    """

    def __init__(self, store, name, channels, heads, head_features):
        self.heads = heads
        self.head_features = head_features
        inner = heads * head_features
        self.q = Linear(store, f"{name}.q", channels, inner)
        self.k = Linear(store, f"{name}.k", channels, inner)
        self.v = Linear(store, f"{name}.v", channels, inner)
        self.out = Linear(store, f"{name}.o", inner, channels, init="zeros")

    def __call__(self, x):
        # x: [B, C, L] conv layout
        xt = ad.transpose(x, (0, 2, 1))
        q = _split_heads(self.q(xt), self.heads, self.head_features)
        k = _split_heads(self.k(xt), self.heads, self.head_features)
        v = _split_heads(self.v(xt), self.heads, self.head_features)
        scale = 1.0 / math.sqrt(self.head_features)
        scores = ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))) * scale
        attn = ad.softmax(scores, axis=-1)
        ctx = _merge_heads(ad.matmul(attn, v))
        return ad.transpose(self.out(ctx), (0, 2, 1))


MASK_OFF = -1e9  # additive score for masked keys; exp underflows to exactly 0


class CrossAttention:
    """Attention from time positions onto an external token sequence.

    A learned null key/value token is enabled per batch row exactly when that
    row's context is fully masked, so fully-masked rows produce a
    context-independent output instead of a degenerate softmax.
    """

    def __init__(self, store, name, channels, context_features, heads, head_features):
        self.heads = heads
        self.head_features = head_features
        inner = heads * head_features
        self.q = Linear(store, f"{name}.q", channels, inner)
        self.k = Linear(store, f"{name}.k", context_features, inner)
        self.v = Linear(store, f"{name}.v", context_features, inner)
        self.out = Linear(store, f"{name}.o", inner, channels, init="zeros")
        self.null_token = store.add(f"{name}.null", (1, 1, context_features), "normal")

    def __call__(self, x, context, mask):
        # x: [B, C, L]; context: [B, T, F]; mask: bool [B, T]
        B, _, L = x.shape
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != context.shape[:2]:
            raise ValueError(f"context mask shape {mask.shape} != context tokens {context.shape[:2]}")
        null = ad.as_tensor(self.null_token) * np.ones((B, 1, 1), dtype=x.dtype)
        full = ad.concat([null, ad.as_tensor(context)], axis=1)
        null_valid = ~mask.any(axis=1)
        full_mask = np.concatenate([null_valid[:, None], mask], axis=1)  # [B, T+1]

        xt = ad.transpose(x, (0, 2, 1))
        q = _split_heads(self.q(xt), self.heads, self.head_features)
        k = _split_heads(self.k(full), self.heads, self.head_features)
        v = _split_heads(self.v(full), self.heads, self.head_features)
        scale = 1.0 / math.sqrt(self.head_features)
        scores = ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))) * scale
        bias = np.where(full_mask, 0.0, MASK_OFF).astype(x.dtype)[:, None, None, :]
        attn = ad.softmax(scores + bias, axis=-1)
        ctx = _merge_heads(ad.matmul(attn, v))
        return ad.transpose(self.out(ctx), (0, 2, 1))


# -- noise-level featurization ------------------------------------------------

SIGMA_FEATURES = 64
_HALF = SIGMA_FEATURES // 2
_FREQS = np.exp(np.linspace(np.log(1.0), np.log(1000.0), _HALF)).astype(np.float32)


def sigma_features(sigma, dtype=np.float32):
    """Sinusoidal features of the noise level, log-spaced frequencies.

    sigma: scalar or [B]; returns a constant [B, 64] array (no gradient path).
    """
    s = np.atleast_1d(np.asarray(sigma, dtype=dtype))
    ang = s[:, None] * _FREQS.astype(dtype)
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


class SigmaMLP:
    """Two-layer MLP turning sinusoidal noise-level features into a vector."""

    def __init__(self, store, name, out_features):
        self.l1 = Linear(store, f"{name}.l1", SIGMA_FEATURES, out_features)
        self.l2 = Linear(store, f"{name}.l2", out_features, out_features)

    def __call__(self, sigma, batch, dtype=np.float32):
        feats = sigma_features(sigma, dtype)
        if feats.shape[0] == 1 and batch > 1:
            feats = np.repeat(feats, batch, axis=0)
        h = ad.silu(self.l1(Tensor(feats)))
        return ad.silu(self.l2(h))
