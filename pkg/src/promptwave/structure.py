"""Amplitude/variation profile across song segments.

Files tagged "..._k_of_N.wav" are grouped by segment index k; per segment we
report the mean over files of mean|x| and the mean over files of the
standard deviation of per-second RMS ("variation": std of the RMS taken
over one-second windows; files shorter than a second count as one window).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import read_wav

_TAG = re.compile(r"_(\d+)_of_(\d+)$")


def parse_segment_tag(filename) -> tuple[int, int] | None:
    stem = Path(filename).stem
    m = _TAG.search(stem)
    if not m:
        return None
    k, n = int(m.group(1)), int(m.group(2))
    if not 1 <= k <= n:
        return None
    return k, n


def segment_filename(base: str, prompt: str) -> str:
    """Append the prompt's chunk tag to a .wav filename, when one is present."""
    m = re.search(r"(\d+)\s+of\s+(\d+)\s*$", prompt)
    if not m:
        return base
    p = Path(base)
    return str(p.with_name(f"{p.stem}_{m.group(1)}_of_{m.group(2)}{p.suffix}"))


def file_stats(path) -> tuple[float, float]:
    """(mean|x|, std of per-second RMS) for one file, channels pooled."""
    w = read_wav(path)
    x = w.samples.astype(np.float64)
    mean_abs = float(np.abs(x).mean())
    sr = w.sample_rate
    t = x.shape[1]
    if t < sr:
        windows = [x]
    else:
        windows = [x[:, i * sr:(i + 1) * sr] for i in range(t // sr)]
    rms = np.array([np.sqrt((win ** 2).mean()) for win in windows])
    return mean_abs, float(rms.std())


@dataclass
class SegmentRow:
    segment: int
    files: int
    mean_abs: float
    rms_std: float


def profile_directory(directory):
    """(rows sorted by segment, skipped-file names)."""
    rows: dict[int, list[tuple[float, float]]] = {}
    skipped = []
    paths = sorted(Path(directory).glob("*.wav"))
    for p in paths:
        tag = parse_segment_tag(p.name)
        if tag is None:
            skipped.append(p.name)
            continue
        rows.setdefault(tag[0], []).append(file_stats(p))
    out = []
    for seg in sorted(rows):
        stats = np.array(rows[seg])
        out.append(SegmentRow(seg, len(stats), float(stats[:, 0].mean()), float(stats[:, 1].mean())))
    return out, skipped


TABLE_HEADER = ("segment  files  mean_abs   variation\n"
                "# mean_abs: mean over files of mean(|x|)\n"
                "# variation: mean over files of std(per-second RMS)")


def format_table(rows: list[SegmentRow]) -> str:
    lines = [TABLE_HEADER]
    for r in rows:
        lines.append(f"{r.segment:7d}  {r.files:5d}  {r.mean_abs:.6f}  {r.rms_std:.6f}")
    return "\n".join(lines)


def format_csv(rows: list[SegmentRow]) -> str:
    lines = ["segment,files,mean_abs,rms_std"]
    for r in rows:
        lines.append(f"{r.segment},{r.files},{r.mean_abs:.6f},{r.rms_std:.6f}")
    return "\n".join(lines) + "\n"
