"""Short-time Fourier analysis: waveform <-> magnitude/phase frames.

Hann window of length n with hop h = n/4 satisfies constant overlap-add, so
istft is an exact (least-squares) inverse away from the first/last n samples.
All n/2+1 unique rfft bins are kept; anything lossy belongs to the encoder,
not the transform.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio import Waveform


@dataclass
class Spectrogram:
    """magnitude, phase: [channels, bins, frames]; phase in (-pi, pi]."""

    magnitude: np.ndarray
    phase: np.ndarray
    n_fft: int
    hop: int

    def __post_init__(self):
        if self.magnitude.shape != self.phase.shape:
            raise ValueError(
                f"magnitude shape {self.magnitude.shape} != phase shape {self.phase.shape}")

    @property
    def channels(self):
        return self.magnitude.shape[0]

    @property
    def bins(self):
        return self.magnitude.shape[1]

    @property
    def frames(self):
        return self.magnitude.shape[2]


def hann_window(n: int, dtype=np.float64) -> np.ndarray:
    # periodic Hann: exact COLA at hop n/4
    k = np.arange(n, dtype=dtype)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * k / n)


def _check_params(t, n, h):
    if n < 2 or (n & (n - 1)) != 0:
        raise ValueError(f"fft size must be a power of two, got {n}")
    if h < 1 or n % h != 0:
        raise ValueError(f"hop {h} must divide fft size {n}")
    if t < n:
        raise ValueError(f"waveform length {t} shorter than fft size {n}")


def frame_count(t: int, h: int) -> int:
    return t // h


def stft_complex(w: Waveform, n: int, h: int) -> np.ndarray:
    """Complex frames [channels, n/2+1, frames]; frames start at multiples of h.

    The tail is zero-padded so the last frames are complete.
    """
    x = w.samples
    c, t = x.shape
    _check_params(t, n, h)
    frames = frame_count(t, h)
    pad = (frames - 1) * h + n - t
    if pad > 0:
        x = np.pad(x, ((0, 0), (0, pad)))
    win = hann_window(n, dtype=x.dtype if x.dtype in (np.float32, np.float64) else np.float64)
    idx = np.arange(frames)[:, None] * h + np.arange(n)[None, :]
    segs = x[:, idx] * win  # [c, frames, n]
    spec = np.fft.rfft(segs, axis=2)  # [c, frames, n/2+1]
    return spec.transpose(0, 2, 1)


def stft(w: Waveform, n: int, h: int) -> Spectrogram:
    spec = stft_complex(w, n, h)
    mag = np.abs(spec)
    phase = np.angle(spec)
    phase = np.where(phase <= -np.pi, np.pi, phase)  # keep phase in (-pi, pi]
    return Spectrogram(mag, phase, n, h)


def istft_array(s: Spectrogram, length: int | None = None) -> np.ndarray:
    """Weighted overlap-add inverse; pass length to crop to the source size."""
    n, h = s.n_fft, s.hop
    c, bins, frames = s.magnitude.shape
    if bins != n // 2 + 1:
        raise ValueError(f"spectrogram has {bins} bins, expected {n // 2 + 1} for n={n}")
    spec = (s.magnitude * np.exp(1j * s.phase)).transpose(0, 2, 1)  # [c, frames, bins]
    segs = np.fft.irfft(spec, n=n, axis=2)
    dtype = segs.dtype
    win = hann_window(n, dtype=dtype)
    total = (frames - 1) * h + n
    num = np.zeros((c, total), dtype=dtype)
    den = np.zeros(total, dtype=dtype)
    wsq = win * win
    for m in range(frames):
        num[:, m * h:m * h + n] += segs[:, m] * win
        den[m * h:m * h + n] += wsq
    out = num / np.maximum(den, np.finfo(dtype).tiny)
    if length is not None:
        out = out[:, :length]
    return out


def istft(s: Spectrogram, sample_rate: int, length: int | None = None) -> Waveform:
    return Waveform(istft_array(s, length), sample_rate)


def flatten_freq(s: Spectrogram) -> np.ndarray:
    """Stack frequency bins as channels: [c, bins, frames] -> [c*bins, frames].

    Channel-major: rows [i*bins:(i+1)*bins] hold channel i's bins.
    """
    c, bins, frames = s.magnitude.shape
    return s.magnitude.reshape(c * bins, frames)


def unflatten_freq(m: np.ndarray, channels: int) -> np.ndarray:
    rows, frames = m.shape
    if rows % channels:
        raise ValueError(f"{rows} rows not divisible by {channels} channels")
    return m.reshape(channels, rows // channels, frames)
