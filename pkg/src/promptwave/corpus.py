"""Dataset ingestion and prompt construction.

Manifest: UTF-8, one track per line, tab-separated
audio_path / title / artist / album / genre / year (commas appear inside
titles, so tabs). Prompts are the shuffled metadata fields, each dropped
independently with probability 0.1, joined by ", " half the time and " "
otherwise, with a trailing chunk tag "k of N" that is never dropped.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .audio import read_wav, wav_info
from .training import chunk_count, crop_samples

log = logging.getLogger(__name__)

MANIFEST_FIELDS = ("audio_path", "title", "artist", "album", "genre", "year")


class ManifestError(ValueError):
    pass


@dataclass
class TrackRecord:
    audio_path: str
    title: str = ""
    artist: str = ""
    album: str = ""
    genre: str = ""
    year: str = ""
    chunk_total: int = 1

    def metadata(self) -> list[str]:
        return [v for v in (self.title, self.artist, self.album, self.genre, self.year) if v]


@dataclass
class PromptSpec:
    drop_prob: float = 0.1
    comma_prob: float = 0.5
    shuffle: bool = True

    def __post_init__(self):
        for name in ("drop_prob", "comma_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")


def build_prompt(rec: TrackRecord, chunk_index: int, spec: PromptSpec,
                 rng: np.random.Generator) -> str:
    """Prompt for one chunk; rng draws: permutation (if shuffling), one
    uniform per field (drops), one uniform (separator)."""
    if not 1 <= chunk_index <= rec.chunk_total:
        raise ValueError(f"chunk {chunk_index} outside 1..{rec.chunk_total}")
    fields = rec.metadata()
    if spec.shuffle and len(fields) > 1:
        order = rng.permutation(len(fields))
        fields = [fields[i] for i in order]
    kept = [f for f in fields if rng.random() >= spec.drop_prob]
    kept.append(f"{chunk_index} of {rec.chunk_total}")
    sep = ", " if rng.random() < spec.comma_prob else " "
    return sep.join(kept)


def load_manifest(path, crop_length: int):
    """(records, errors): errors are (line_number, message) for bad lines.

    chunk_total comes from each file's header duration and the crop length.
    """
    try:
        with open(path, encoding="utf-8") as f:
            lines = f.read().splitlines()
    except OSError as e:
        raise ManifestError(f"cannot read manifest {path}: {e}") from e

    records, errors = [], []
    for no, line in enumerate(lines, start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != len(MANIFEST_FIELDS):
            errors.append((no, f"expected {len(MANIFEST_FIELDS)} tab-separated fields, got {len(parts)}"))
            continue
        parts = [p.strip() for p in parts]
        if not parts[0]:
            errors.append((no, "missing audio_path"))
            continue
        try:
            _, _, n_samples = wav_info(parts[0])
        except (OSError, ValueError) as e:
            errors.append((no, f"cannot read audio '{parts[0]}': {e}"))
            continue
        rec = TrackRecord(*parts, chunk_total=chunk_count(n_samples, crop_length))
        records.append(rec)
    if not lines or (not records and not errors):
        raise ManifestError(f"manifest {path} is empty")
    return records, errors


class _AudioCache:
    def __init__(self):
        self._store = {}

    def get(self, path):
        if path not in self._store:
            self._store[path] = read_wav(path)
        return self._store[path]


def make_pairs(records: list[TrackRecord], crop_length: int, stage: int,
               rng: np.random.Generator, prompt_spec: PromptSpec = None):
    """Endless stream of (crop [c, t], prompt-or-None) training pairs.

    Stage 1 takes random crops and no prompt; stage 2 takes the fixed chunk
    k and a prompt carrying the matching "k of N" tag. Draw order per pair:
    record index, then chunk/offset, then (stage 2) the prompt's draws.
    """
    if not records:
        raise ManifestError("no records to sample from")
    if stage not in (1, 2):
        raise ValueError(f"stage must be 1 or 2, got {stage}")
    spec = prompt_spec or PromptSpec()
    cache = _AudioCache()
    while True:
        rec = records[int(rng.integers(len(records)))]
        wav = cache.get(rec.audio_path)
        if stage == 1:
            crop = crop_samples(wav.samples, crop_length, "random", rng)
            yield crop, None
        else:
            k = int(rng.integers(1, rec.chunk_total + 1))
            crop = crop_samples(wav.samples, crop_length, "fixed", chunk_index=k - 1)
            yield crop, build_prompt(rec, k, spec, rng)
