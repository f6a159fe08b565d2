"""Waveforms and RIFF/WAVE file I/O.

Supported WAV flavours: PCM 16-bit and IEEE-float 32-bit, little-endian,
interleaved channels. PCM16 samples are normalized by 1/32768 on read.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np


class AudioFormatError(ValueError):
    """Malformed or unsupported WAV data."""


@dataclass
class Waveform:
    """Multichannel audio: samples [channels, timesteps], nominal range [-1, 1]."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples))
        if self.samples.ndim != 2:
            raise AudioFormatError(f"samples must be [channels, timesteps], got ndim {self.samples.ndim}")
        if self.samples.shape[0] < 1 or self.samples.shape[1] < 1:
            raise AudioFormatError(f"empty waveform shape {self.samples.shape}")
        if self.sample_rate <= 0:
            raise AudioFormatError(f"sample rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise AudioFormatError("waveform contains non-finite samples")

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    @property
    def length(self) -> int:
        return self.samples.shape[1]


_FMT_PCM = 1
_FMT_FLOAT = 3


def write_wav(path, w: Waveform, fmt="float32"):
    """Write a waveform as RIFF/WAVE; fmt is 'float32' or 'pcm16'."""
    data = np.asarray(w.samples)
    c, t = data.shape
    if fmt == "float32":
        payload = data.T.astype("<f4").tobytes()
        audio_format, bits = _FMT_FLOAT, 32
    elif fmt == "pcm16":
        scaled = np.clip(np.round(data * 32768.0), -32768, 32767)
        payload = scaled.T.astype("<i2").tobytes()
        audio_format, bits = _FMT_PCM, 16
    else:
        raise ValueError(f"unknown wav format '{fmt}'")

    block_align = c * bits // 8
    fmt_chunk = struct.pack("<HHIIHH", audio_format, c, w.sample_rate,
                            w.sample_rate * block_align, block_align, bits)
    chunks = [(b"fmt ", fmt_chunk)]
    if audio_format == _FMT_FLOAT:
        chunks.append((b"fact", struct.pack("<I", t)))
    chunks.append((b"data", payload))

    body = b"WAVE"
    for cid, cdata in chunks:
        body += cid + struct.pack("<I", len(cdata)) + cdata
        if len(cdata) % 2:
            body += b"\x00"
    with open(path, "wb") as f:
        f.write(b"RIFF" + struct.pack("<I", len(body)) + body)


def _scan_chunks(blob: bytes):
    if len(blob) < 12 or blob[:4] != b"RIFF" or blob[8:12] != b"WAVE":
        raise AudioFormatError("not a RIFF/WAVE file")
    pos = 12
    while pos + 8 <= len(blob):
        cid = blob[pos:pos + 4]
        size = struct.unpack_from("<I", blob, pos + 4)[0]
        start = pos + 8
        if start + size > len(blob):
            raise AudioFormatError(f"truncated '{cid.decode('ascii', 'replace')}' chunk")
        yield cid, blob[start:start + size]
        pos = start + size + (size % 2)


def _parse_header(blob: bytes):
    fmt = None
    data = None
    for cid, chunk in _scan_chunks(blob):
        if cid == b"fmt ":
            if len(chunk) < 16:
                raise AudioFormatError("fmt chunk too short")
            fmt = struct.unpack_from("<HHIIHH", chunk, 0)
        elif cid == b"data":
            data = chunk
            break  # fmt always precedes data in files we accept
    if fmt is None:
        raise AudioFormatError("missing fmt chunk")
    if data is None:
        raise AudioFormatError("missing data chunk")
    audio_format, channels, rate, _, _, bits = fmt
    if channels < 1:
        raise AudioFormatError("fmt chunk declares zero channels")
    if (audio_format, bits) not in ((_FMT_PCM, 16), (_FMT_FLOAT, 32)):
        raise AudioFormatError(f"unsupported WAV format {audio_format}/{bits}-bit "
                               "(PCM 16-bit and float 32-bit only)")
    return audio_format, channels, rate, bits, data


def read_wav(path) -> Waveform:
    with open(path, "rb") as f:
        blob = f.read()
    audio_format, channels, rate, bits, data = _parse_header(blob)
    if audio_format == _FMT_PCM:
        raw = np.frombuffer(data, dtype="<i2")
        samples = raw.astype(np.float32) / 32768.0
    else:
        samples = np.frombuffer(data, dtype="<f4").astype(np.float32)
    frames = samples.size // channels
    if frames < 1:
        raise AudioFormatError("empty data chunk")
    samples = samples[:frames * channels].reshape(frames, channels).T
    return Waveform(np.ascontiguousarray(samples), rate)


def wav_info(path):
    """(channels, sample_rate, n_samples) from the header, payload untouched."""
    with open(path, "rb") as f:
        blob = f.read()
    _, channels, rate, bits, data = _parse_header(blob)
    return channels, rate, len(data) // (channels * bits // 8)
