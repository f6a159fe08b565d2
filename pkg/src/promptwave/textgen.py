"""Stage 2: text-conditioned latent diffusion.

A frozen embedder maps a prompt to token vectors; the generator denoises in
latent space with cross-attention on those vectors. Training drops the text
per batch element with probability 0.1, substituting a single learned null
row, and inference extrapolates between the null and conditional branches
(classifier-free guidance).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import diffusion as df
from .audio import Waveform
from .autodiff import ParamStore, Tensor, no_grad
from .codec import LatentCodec
from .unet import UNet1d, UNetConfig


@dataclass
class TextEmbedding:
    """vectors [tokens, d]; mask marks valid tokens (at least one row)."""

    vectors: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float32)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.vectors.ndim != 2 or self.vectors.shape[0] < 1:
            raise ValueError(f"embedding needs [tokens, d] with >= 1 row, got {self.vectors.shape}")
        if self.mask.shape != (self.vectors.shape[0],):
            raise ValueError(f"mask shape {self.mask.shape} != token count {self.vectors.shape[0]}")

    @property
    def tokens(self) -> int:
        return self.vectors.shape[0]

    @property
    def dims(self) -> int:
        return self.vectors.shape[1]


class ByteTableEmbedder:
    """Deterministic stand-in for a frozen pretrained text embedder.

    Each byte of the UTF-8 prompt indexes a fixed row of a seed-generated
    table; the empty prompt maps to a dedicated null row. The table is a
    plain array: nothing here ever carries gradients.
    """

    def __init__(self, dims: int, seed: int = 0):
        if dims < 1:
            raise ValueError(f"embedder dims must be positive, got {dims}")
        self.dims = dims
        self.seed = seed
        self.table = np.random.default_rng(seed).standard_normal((257, dims)).astype(np.float32)

    def embed(self, prompt: str) -> TextEmbedding:
        raw = prompt.encode("utf-8")
        if not raw:
            return TextEmbedding(self.table[256:257].copy(), np.ones(1, dtype=bool))
        idx = np.frombuffer(raw, dtype=np.uint8)
        return TextEmbedding(self.table[idx].copy(), np.ones(len(raw), dtype=bool))


def pad_embeddings(embeddings: list[TextEmbedding]):
    """Stack variable-length embeddings into [B, T, d] + mask [B, T]."""
    t_max = max(e.tokens for e in embeddings)
    d = embeddings[0].dims
    ctx = np.zeros((len(embeddings), t_max, d), dtype=np.float32)
    mask = np.zeros((len(embeddings), t_max), dtype=bool)
    for i, e in enumerate(embeddings):
        if e.dims != d:
            raise ValueError(f"embedding width mismatch: {e.dims} != {d}")
        ctx[i, :e.tokens] = e.vectors
        mask[i, :e.tokens] = e.mask
    return ctx, mask


class LatentGenerator:
    """Latent-domain denoiser with a learned null embedding row (stage 2)."""

    def __init__(self, config: UNetConfig, cfg_drop: float, cfg_scale: float,
                 seed: int, dtype=np.float32):
        if not any(config.cross_attention):
            raise ValueError("stage-2 generator needs cross-attention somewhere")
        self.store = ParamStore(rng=np.random.default_rng(seed), dtype=dtype)
        self.unet = UNet1d(config, self.store, prefix="gen.")
        self.null_row = self.store.add("null_ctx", (config.context_features,), "zeros")
        self.cfg_drop = cfg_drop
        self.cfg_scale = cfg_scale

    @property
    def config(self) -> UNetConfig:
        return self.unet.config

    def null_embedding(self) -> TextEmbedding:
        return TextEmbedding(self.null_row.data.reshape(1, -1), np.ones(1, dtype=bool))

    # -- training ---------------------------------------------------------

    def _dropped_context(self, ctx: np.ndarray, mask: np.ndarray, drops: np.ndarray):
        """Replace dropped rows by the learned null token (gradient flows to it)."""
        kept = ctx.copy()
        kept[drops] = 0.0
        token0 = np.zeros(ctx.shape[:2] + (1,), dtype=ctx.dtype)
        token0[drops, 0, 0] = 1.0
        full = Tensor(kept) + ad.reshape(self.null_row, (1, 1, -1)) * Tensor(token0)
        new_mask = mask.copy()
        new_mask[drops] = False
        new_mask[drops, 0] = True
        return full, new_mask

    def loss(self, latents: np.ndarray, embeddings: list[TextEmbedding],
             rng: np.random.Generator, drop_prob=None):
        """v-objective loss; rng draws: drops, then sigma, then eps."""
        b = latents.shape[0]
        if len(embeddings) != b:
            raise ValueError(f"{len(embeddings)} embeddings for batch of {b}")
        p = self.cfg_drop if drop_prob is None else drop_prob
        drops = rng.random(b) < p
        ctx_np, mask_np = pad_embeddings(embeddings)
        ctx, mask = self._dropped_context(ctx_np, mask_np, drops)
        sigma = rng.random(b, dtype=np.float32)
        eps = rng.standard_normal(latents.shape, dtype=np.float32)

        def fn(x, s, cond):
            return self.unet.forward(x, s, context=cond[0], context_mask=cond[1])

        return df.v_loss(fn, latents, eps, sigma, cond=(ctx, mask))

    # -- inference ----------------------------------------------------------

    def _denoise(self, x, sigma, ctx, mask):
        with no_grad():
            return self.unet.forward(x, sigma, context=ctx, context_mask=mask).data

    def cond_denoise(self, x, sigma, e: TextEmbedding):
        ctx = np.broadcast_to(e.vectors[None], (x.shape[0],) + e.vectors.shape)
        mask = np.broadcast_to(e.mask[None], (x.shape[0], e.tokens))
        return self._denoise(x, sigma, ctx, mask)

    def uncond_denoise(self, x, sigma):
        return self.cond_denoise(x, sigma, self.null_embedding())

    def cfg_denoise(self, x, sigma, e: TextEmbedding, scale: float):
        """v_uncond + scale*(v_cond - v_uncond); scale 1 and 0 short-circuit
        to the bare branches so they are bit-exact."""
        if scale < 0:
            raise ValueError(f"guidance scale must be >= 0, got {scale}")
        if scale == 1.0:
            return self.cond_denoise(x, sigma, e)
        v_u = self.uncond_denoise(x, sigma)
        if scale == 0.0:
            return v_u
        v_c = self.cond_denoise(x, sigma, e)
        return v_u + scale * (v_c - v_u)

    def generate(self, e: TextEmbedding, noise: np.ndarray, steps: int, scale=None) -> np.ndarray:
        """DDIM sampling of a latent from text; pure in (e, noise, scale)."""
        s = self.cfg_scale if scale is None else scale
        sched = df.SamplerSchedule.linear(steps)

        def fn(x, sigma, _cond):
            return self.cfg_denoise(x, sigma, e, s)

        return df.sample(fn, noise, sched)


def spawn_noise(seed: int, gen_shape, dec_shape):
    """Two independent noise draws derived from one seed (generation, decode)."""
    child_g, child_d = np.random.SeedSequence(seed).spawn(2)
    eps_g = np.random.default_rng(child_g).standard_normal(gen_shape, dtype=np.float32)
    eps_d = np.random.default_rng(child_d).standard_normal(dec_shape, dtype=np.float32)
    return eps_g, eps_d


def generate_waveform(gen: LatentGenerator, codec: LatentCodec, e: TextEmbedding,
                      seed: int, latent_length: int, steps_gen: int, steps_dec: int,
                      scale=None, clamp_latent=True):
    """Full stack: text -> latent via the generator, latent -> audio via the
    codec decoder. Bit-identical to composing the two calls manually with the
    same derived noises. Returns (Waveform, latent)."""
    ccfg = codec.config
    if gen.config.in_channels != ccfg.latent_channels:
        raise ValueError(
            f"latent width mismatch: generator works on {gen.config.in_channels} channels, "
            f"codec produces {ccfg.latent_channels}")
    t = ccfg.waveform_length(latent_length)
    eps_g, eps_d = spawn_noise(seed, (1, ccfg.latent_channels, latent_length),
                               (1, ccfg.channels, t))
    z = gen.generate(e, eps_g, steps_gen, scale)
    z_dec = np.clip(z, -1.0, 1.0) if clamp_latent else z
    wav = codec.decode_batch(z_dec, eps_d, steps_dec)
    return Waveform(wav[0], ccfg.sample_rate), z
