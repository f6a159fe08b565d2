"""Stage 1: spectrogram-latent diffusion codec.

The encoder turns the flattened magnitude spectrogram into a bounded latent
(tanh bottleneck, phase discarded); the decoder is a diffusion denoiser over
the raw waveform, conditioned on the noise level and on the latent injected
at one depth. Decoding doubles as a vocoder: phase is re-synthesized, never
stored.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import diffusion as df
from .audio import Waveform
from .autodiff import ParamStore, Tensor, no_grad
from .layers import Conv1d, GroupNorm
from .spectral import flatten_freq, stft
from .unet import UNet1d, UNetConfig, _resample_conv


@dataclass
class CodecConfig:
    sample_rate: int
    channels: int
    n_fft: int
    hop: int
    mag_scale: float
    latent_channels: int
    compression: int
    encoder_channels: list[int]
    encoder_strides: list[int]
    decoder: UNetConfig = field(default=None)

    @property
    def encoder_factor(self) -> int:
        return int(np.prod(self.encoder_strides))

    @property
    def spectrogram_rows(self) -> int:
        return self.channels * (self.n_fft // 2 + 1)

    def validate(self):
        problems = []
        if len(self.encoder_channels) != len(self.encoder_strides):
            problems.append(
                f"encoder_channels ({len(self.encoder_channels)}) and encoder_strides "
                f"({len(self.encoder_strides)}) differ in length")
        # compression accounting must hold for every valid length:
        # c*t / (latent_channels * L) with L = t/(hop*encoder_factor)
        implied = self.channels * self.hop * self.encoder_factor
        if implied != self.latent_channels * self.compression:
            problems.append(
                f"compression accounting broken: channels*hop*encoder_factor = {implied} "
                f"but latent_channels*compression = {self.latent_channels * self.compression}")
        if self.decoder is None:
            problems.append("decoder config missing")
        elif self.decoder.inject_channels != self.latent_channels:
            problems.append(
                f"decoder inject_channels {self.decoder.inject_channels} != "
                f"latent_channels {self.latent_channels}")
        if problems:
            raise ValueError("invalid codec config: " + "; ".join(problems))

    def latent_length(self, t: int) -> int:
        step = self.hop * self.encoder_factor
        if t % step:
            raise ValueError(f"waveform length {t} not divisible by hop*encoder_factor = {step}")
        return t // step

    def waveform_length(self, latent_len: int) -> int:
        return latent_len * self.latent_channels * self.compression // self.channels


class MagnitudeEncoder:
    """Strided conv stack over [c*bins, frames] magnitudes, tanh bottleneck."""

    def __init__(self, store: ParamStore, prefix: str, cfg: CodecConfig):
        ec, strides = cfg.encoder_channels, cfg.encoder_strides
        self.conv_in = Conv1d(store, f"{prefix}in", cfg.spectrogram_rows, ec[0], k=3)
        self.stages = []
        for i, s in enumerate(strides):
            c_in = ec[i]
            c_out = ec[i + 1] if i + 1 < len(ec) else ec[-1]
            gn = GroupNorm(store, f"{prefix}s{i}.gn", c_in)
            conv = _resample_conv(store, f"{prefix}s{i}.conv", c_in, c_out, s)
            self.stages.append((gn, conv))
        self.gn_out = GroupNorm(store, f"{prefix}out.gn", ec[-1])
        self.conv_out = Conv1d(store, f"{prefix}out.conv", ec[-1], cfg.latent_channels, k=3)

    def __call__(self, x):
        h = self.conv_in(x)
        for gn, conv in self.stages:
            h = conv(ad.silu(gn(h)))
        return ad.tanh(self.conv_out(ad.silu(self.gn_out(h))))


class LatentCodec:
    """Encoder + diffusion decoder trained jointly (stage 1)."""

    def __init__(self, config: CodecConfig, seed: int, dtype=np.float32):
        config.validate()
        self.config = config
        self.store = ParamStore(rng=np.random.default_rng(seed), dtype=dtype)
        self.encoder = MagnitudeEncoder(self.store, "enc.", config)
        self.decoder = UNet1d(config.decoder, self.store, prefix="dec.")

    # -- encoding --------------------------------------------------------

    def _magnitudes(self, batch: np.ndarray) -> np.ndarray:
        """[B, c, t] waveforms -> [B, c*bins, frames] scaled magnitudes."""
        cfg = self.config
        rows = []
        for b in range(batch.shape[0]):
            spec = stft(Waveform(batch[b], cfg.sample_rate), cfg.n_fft, cfg.hop)
            rows.append(flatten_freq(spec))
        mags = np.stack(rows).astype(batch.dtype)
        return np.log1p(mags * np.asarray(cfg.mag_scale, dtype=batch.dtype))

    def encode_batch(self, batch: np.ndarray):
        """Differentiable path: returns a Tensor latent [B, latent_ch, L]."""
        cfg = self.config
        cfg.latent_length(batch.shape[2])  # raises on indivisible lengths
        return self.encoder(Tensor(self._magnitudes(batch)))

    def encode(self, w: Waveform) -> np.ndarray:
        """Latent [latent_ch, L] for a single waveform; deterministic."""
        if w.channels != self.config.channels:
            raise ValueError(f"waveform has {w.channels} channels, codec expects {self.config.channels}")
        with no_grad():
            return self.encode_batch(w.samples[None].astype(np.float32)).data[0]

    # -- decoding ---------------------------------------------------------

    def denoise_fn(self):
        """DenoiseFn closure over frozen weights: arrays in, arrays out."""

        def fn(x, sigma, z):
            with no_grad():
                return self.decoder.forward(x, sigma, inject=z).data

        return fn

    def decode_batch(self, z: np.ndarray, noise: np.ndarray, steps: int) -> np.ndarray:
        if z.shape[1] != self.config.latent_channels:
            raise ValueError(
                f"latent has {z.shape[1]} channels, codec expects {self.config.latent_channels}")
        expect = self.config.waveform_length(z.shape[2])
        if noise.shape[2] != expect or noise.shape[1] != self.config.channels:
            raise ValueError(
                f"noise shape {noise.shape} does not match decoded shape "
                f"[{z.shape[0]}, {self.config.channels}, {expect}]")
        sched = df.SamplerSchedule.linear(steps)
        return df.sample(self.denoise_fn(), noise, sched, cond=z)

    def decode(self, z: np.ndarray, noise: np.ndarray, steps: int) -> Waveform:
        out = self.decode_batch(z[None], noise[None], steps)
        return Waveform(out[0], self.config.sample_rate)

    # -- training -----------------------------------------------------------

    def loss(self, batch: np.ndarray, rng: np.random.Generator, denoise_fn=None):
        """v-objective loss on a crop batch; draws sigma then eps from rng.

        Gradients flow into both the decoder and, through the injected
        latent, the encoder. denoise_fn is a test seam (oracle decoders).
        """
        z = self.encode_batch(batch)
        sigma = rng.random(batch.shape[0], dtype=np.float32)
        eps = rng.standard_normal(batch.shape, dtype=np.float32)
        if denoise_fn is None:
            def denoise_fn(x, s, cond):
                return self.decoder.forward(x, s, inject=cond)
        return df.v_loss(denoise_fn, batch, eps, sigma, cond=z)
