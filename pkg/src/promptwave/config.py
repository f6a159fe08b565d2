"""Run configuration: a flat sectioned key-value document.

Defaults are the full-scale training constants; `--preset tiny` rescales to
a desk-size setup that keeps every structural relation intact. Unknown
sections or keys are rejected, and dump() output re-loads to an identical
configuration.
"""

from __future__ import annotations

from types import SimpleNamespace

import numpy as np

from .codec import CodecConfig
from .unet import UNetConfig


class ConfigError(ValueError):
    pass


# section -> key -> (type, default). Types: int, float, bool, intlist.
SCHEMA = {
    "run": {
        "seed": ("int", 0),
    },
    "audio": {
        "sample_rate": ("int", 48000),
        "channels": ("int", 2),
    },
    "stft": {
        "n_fft": ("int", 1024),
        "hop": ("int", 256),
        "mag_scale": ("float", 1.0),
    },
    "latent": {
        "channels": ("int", 32),
        "compression": ("int", 64),
    },
    "stage1": {
        "crop": ("int", 2 ** 18),
        "channels": ("intlist", [256, 512, 512, 512, 1024, 1024, 1024]),
        "factors": ("intlist", [1, 2, 2, 2, 2, 2, 2]),
        "repeats": ("intlist", [1, 2, 2, 2, 2, 2, 2]),
        "inject_depth": ("int", 4),
        "encoder_channels": ("intlist", [512, 512]),
        "encoder_strides": ("intlist", [2, 2]),
        "modulation_features": ("int", 256),
    },
    "stage2": {
        "crop": ("int", 2 ** 21),
        "channels": ("intlist", [128, 256, 512, 512, 1024, 1024]),
        "factors": ("intlist", [1, 2, 2, 2, 2, 2]),
        "repeats": ("intlist", [2, 2, 2, 4, 8, 8]),
        "attention": ("intlist", [0, 0, 1, 1, 1, 1]),
        "cross_attention": ("intlist", [1, 1, 1, 1, 1, 1]),
        "heads": ("int", 12),
        "head_features": ("int", 64),
        "context_features": ("int", 768),
        "modulation_features": ("int", 256),
        "cfg_drop": ("float", 0.1),
        "embedder_seed": ("int", 0),
    },
    "optim": {
        "lr": ("float", 1e-4),
        "beta1": ("float", 0.95),
        "beta2": ("float", 0.999),
        "eps": ("float", 1e-6),
        "weight_decay": ("float", 1e-3),
        "grad_clip": ("float", 1.0),
        "batch_size": ("int", 32),
    },
    "ema": {
        "beta": ("float", 0.995),
        "power": ("float", 0.7),
    },
    "train": {
        "steps": ("int", 1_000_000),
        "checkpoint_every": ("int", 10_000),
    },
    "sample": {
        "steps_gen": ("int", 100),
        "steps_dec": ("int", 100),
        "cfg_scale": ("float", 3.0),
        "clamp_latent": ("bool", True),
    },
}

PRESETS = {
    "tiny": {
        "audio": {"sample_rate": 8000, "channels": 1},
        "stft": {"n_fft": 256, "hop": 64},
        "latent": {"channels": 8, "compression": 16},
        "stage1": {
            "crop": 2 ** 14,
            "channels": [8, 16, 32],
            "factors": [4, 4, 2],
            "repeats": [1, 1, 1],
            "inject_depth": 2,
            "encoder_channels": [64],
            "encoder_strides": [2],
            "modulation_features": 32,
        },
        "stage2": {
            "crop": 2 ** 14,
            "channels": [32, 64, 64],
            "factors": [1, 2, 2],
            "repeats": [1, 1, 2],
            "attention": [0, 1, 1],
            "cross_attention": [1, 1, 1],
            "heads": 4,
            "head_features": 16,
            "context_features": 32,
            "modulation_features": 32,
        },
        "optim": {"batch_size": 8, "lr": 3e-4},
        "train": {"steps": 2000, "checkpoint_every": 500},
    },
}


class RunConfig:
    def __init__(self, values: dict[str, dict]):
        self._values = values

    def __getattr__(self, section):
        try:
            return SimpleNamespace(**self._values[section])
        except KeyError:
            raise AttributeError(section) from None

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self._values == other._values

    def as_dict(self):
        return {s: dict(kv) for s, kv in self._values.items()}

    def set(self, section, key, value):
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError(f"unknown config key {section}.{key}")
        self._values[section][key] = value


def default_config(preset: str | None = None) -> RunConfig:
    values = {s: {k: (list(d) if isinstance(d, list) else d) for k, (_, d) in kv.items()}
              for s, kv in SCHEMA.items()}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset '{preset}' (have: {', '.join(PRESETS)})")
        for s, kv in PRESETS[preset].items():
            for k, v in kv.items():
                values[s][k] = list(v) if isinstance(v, list) else v
    return RunConfig(values)


def _parse_value(kind, raw, where):
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            if raw.lower() in ("true", "false"):
                return raw.lower() == "true"
            raise ValueError(raw)
        if kind == "intlist":
            return [int(p) for p in raw.split(",") if p.strip() != ""]
    except ValueError:
        raise ConfigError(f"{where}: cannot parse '{raw}' as {kind}") from None
    raise ConfigError(f"{where}: unknown type {kind}")


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """Apply a config document on top of base (defaults if None).

    Collects every problem and reports them all at once.
    """
    values = (base or default_config()).as_dict()
    problems = []
    section = None
    for no, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if stripped.startswith("[") and stripped.endswith("]"):
            section = stripped[1:-1].strip()
            if section not in SCHEMA:
                problems.append(f"line {no}: unknown section [{section}]")
                section = None
            continue
        if "=" not in stripped:
            problems.append(f"line {no}: expected 'key = value', got '{stripped}'")
            continue
        if section is None:
            problems.append(f"line {no}: key outside any known section")
            continue
        key, raw = (p.strip() for p in stripped.split("=", 1))
        if key not in SCHEMA[section]:
            problems.append(f"line {no}: unknown key '{key}' in section [{section}]")
            continue
        try:
            values[section][key] = _parse_value(SCHEMA[section][key][0], raw, f"line {no}: {section}.{key}")
        except ConfigError as e:
            problems.append(str(e))
    if problems:
        raise ConfigError("config errors: " + "; ".join(problems))
    return RunConfig(values)


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    with open(path, encoding="utf-8") as f:
        return parse_config(f.read(), base)


def _format_value(kind, v):
    if kind == "intlist":
        return ",".join(str(i) for i in v)
    if kind == "bool":
        return "true" if v else "false"
    return repr(v) if kind == "float" else str(v)


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for s, kv in SCHEMA.items():
        lines.append(f"[{s}]")
        for k, (kind, _) in kv.items():
            lines.append(f"{k} = {_format_value(kind, cfg.as_dict()[s][k])}")
        lines.append("")
    return "\n".join(lines)


# -- derived model configs ---------------------------------------------------


def stage1_unet_config(cfg: RunConfig) -> UNetConfig:
    s1 = cfg.stage1
    return UNetConfig(
        in_channels=cfg.audio.channels,
        channels=list(s1.channels),
        factors=list(s1.factors),
        repeats=list(s1.repeats),
        inject_depth=s1.inject_depth,
        inject_channels=cfg.latent.channels,
        modulation_features=s1.modulation_features,
    )


def stage2_unet_config(cfg: RunConfig) -> UNetConfig:
    s2 = cfg.stage2
    return UNetConfig(
        in_channels=cfg.latent.channels,
        channels=list(s2.channels),
        factors=list(s2.factors),
        repeats=list(s2.repeats),
        attention=[bool(v) for v in s2.attention],
        cross_attention=[bool(v) for v in s2.cross_attention],
        heads=s2.heads,
        head_features=s2.head_features,
        context_features=s2.context_features,
        modulation_features=s2.modulation_features,
    )


def codec_config(cfg: RunConfig) -> CodecConfig:
    return CodecConfig(
        sample_rate=cfg.audio.sample_rate,
        channels=cfg.audio.channels,
        n_fft=cfg.stft.n_fft,
        hop=cfg.stft.hop,
        mag_scale=cfg.stft.mag_scale,
        latent_channels=cfg.latent.channels,
        compression=cfg.latent.compression,
        encoder_channels=list(cfg.stage1.encoder_channels),
        encoder_strides=list(cfg.stage1.encoder_strides),
        decoder=stage1_unet_config(cfg),
    )


def stage2_latent_length(cfg: RunConfig) -> int:
    return codec_config(cfg).latent_length(cfg.stage2.crop)


def validate_config(cfg: RunConfig):
    """Cross-field checks; raises ConfigError listing every problem."""
    problems = []
    ccfg = codec_config(cfg)
    try:
        ccfg.validate()
    except ValueError as e:
        problems.append(str(e))
    try:
        stage1_unet_config(cfg).validate()
    except ValueError as e:
        problems.append(str(e))
    try:
        s2cfg = stage2_unet_config(cfg)
        s2cfg.validate()
    except ValueError as e:
        problems.append(str(e))
        s2cfg = None

    s1 = cfg.stage1
    crop = s1.crop
    step = cfg.stft.hop * int(np.prod(s1.encoder_strides))
    if crop % step:
        problems.append(f"stage1 crop {crop} not divisible by hop*encoder stride product {step}")
    tot = int(np.prod(s1.factors))
    if crop % tot:
        problems.append(f"stage1 crop {crop} not divisible by decoder factor product {tot}")
    if not problems:
        # injection resolution must be an integer multiple of the latent length
        depth_len = crop // int(np.prod(s1.factors[:s1.inject_depth + 1]))
        latent_len = crop // step
        if depth_len % latent_len:
            problems.append(
                f"latent length {latent_len} does not divide depth-{s1.inject_depth} "
                f"resolution {depth_len}")
        l2 = stage2_latent_length(cfg)
        if s2cfg is not None and l2 % s2cfg.total_factor:
            problems.append(
                f"stage2 latent length {l2} not divisible by its factor product {s2cfg.total_factor}")
    if problems:
        raise ConfigError("config errors: " + "; ".join(problems))
