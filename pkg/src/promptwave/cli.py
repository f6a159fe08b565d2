"""Command-line surface: train, generate, codec, profile, inspect.

Exit codes: 0 success, 1 usage, 2 data/format, 3 numeric failure. Errors
print a single machine-parseable line `error[<class>]: message` to stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import checkpoint as cp
from . import config as cf
from . import pipeline as pl
from . import structure as st
from .audio import AudioFormatError, read_wav, write_wav
from .corpus import ManifestError, load_manifest
from .diffusion import NumericError
from .textgen import ByteTableEmbedder, generate_waveform

log = logging.getLogger("promptwave")

EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _load_run_config(args) -> cf.RunConfig:
    cfg = cf.default_config(getattr(args, "preset", None))
    if getattr(args, "config", None):
        cfg = cf.load_config(args.config, base=cfg)
    if getattr(args, "seed", None) is not None:
        cfg.set("run", "seed", args.seed)
    return cfg


# -- commands -------------------------------------------------------------------


def cmd_dump_config(args):
    cfg = _load_run_config(args)
    cf.validate_config(cfg)
    sys.stdout.write(cf.dump_config(cfg))
    return 0


def cmd_train(args):
    cfg = _load_run_config(args)
    cf.validate_config(cfg)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = out_dir / f"stage{args.stage}.ckpt"

    frozen_codec = None
    if args.stage == 2:
        if not args.stage1:
            raise UsageError("--stage 2 requires --stage1 CKPT (frozen encoder)")
        codec_model, _ = pl.load_model(cp.load(args.stage1))
        frozen_codec = codec_model

    crop = cfg.stage1.crop if args.stage == 1 else cfg.stage2.crop
    records, errors = load_manifest(args.manifest, crop)
    for no, msg in errors:
        log.warning("manifest line %d skipped: %s", no, msg)
    if not records:
        raise ManifestError(f"no usable records in {args.manifest}")

    if args.resume:
        run = pl.resume_run(cp.load(args.resume), frozen_codec=frozen_codec)
    else:
        run = pl.new_run(cfg, args.stage, frozen_codec=frozen_codec)
    steps = args.steps if args.steps is not None else cfg.train.steps

    mode = "a" if args.resume else "w"
    with open(out_dir / "loss_log.csv", mode, encoding="utf-8") as log_file:
        t0 = time.time()
        trace = pl.train_loop(run, records, steps, log_file=log_file, ckpt_path=str(ckpt_path),
                              checkpoint_every=args.checkpoint_every)
    log.info("trained %d steps in %.1fs; final loss %.6f; checkpoint %s",
             steps, time.time() - t0, trace[-1] if trace else float("nan"), ckpt_path)
    print(ckpt_path)
    return 0


def cmd_generate(args):
    ck1 = cp.load(args.stage1)
    ck2 = cp.load(args.stage2)
    codec_model, cfg1 = pl.load_model(ck1, use_ema=not args.raw_weights)
    gen_model, cfg2 = pl.load_model(ck2, use_ema=not args.raw_weights)
    if gen_model.config.in_channels != codec_model.config.latent_channels:
        raise cp.CheckpointError(
            f"incompatible checkpoints: generator latent width {gen_model.config.in_channels} "
            f"vs codec {codec_model.config.latent_channels}")
    embedder = ByteTableEmbedder(cfg2.stage2.context_features, cfg2.stage2.embedder_seed)
    e = embedder.embed(args.prompt)
    latent_length = args.latent_length or cf.stage2_latent_length(cfg2)

    t0 = time.time()
    wav, z = generate_waveform(gen_model, codec_model, e, seed=args.seed,
                               latent_length=latent_length, steps_gen=args.steps_gen,
                               steps_dec=args.steps_dec, scale=args.cfg_scale,
                               clamp_latent=cfg2.sample.clamp_latent)
    out = st.segment_filename(args.out, args.prompt)
    write_wav(out, wav)
    sha = hashlib.sha256(Path(out).read_bytes()).hexdigest()
    print(f"latent shape: {z.shape[1]}x{z.shape[2]}")
    print(f"steps: generation {args.steps_gen}, decode {args.steps_dec}, cfg scale {args.cfg_scale}")
    print(f"elapsed: {time.time() - t0:.1f}s")
    print(f"wrote {out} ({wav.length} samples @ {wav.sample_rate} Hz, sha256 {sha[:16]})")
    return 0


def cmd_codec(args):
    ck = cp.load(args.stage1)
    codec_model, cfg = pl.load_model(ck, use_ema=not args.raw_weights)
    if args.action == "encode":
        w = read_wav(args.infile)
        if w.sample_rate != codec_model.config.sample_rate:
            raise AudioFormatError(
                f"sample rate {w.sample_rate} != model rate {codec_model.config.sample_rate}")
        z = codec_model.encode(w)
        blob, _ = pl.split_state_blob(ck.config_text)
        cp.save(args.outfile, cp.Checkpoint("latent", blob, {"latent": z}))
        print(f"encoded {w.length} samples -> latent {z.shape[0]}x{z.shape[1]} ({args.outfile})")
    else:
        lat = cp.load(args.infile)
        if lat.kind != "latent":
            raise cp.CheckpointError(f"expected a latent file, got kind '{lat.kind}'")
        if "latent" not in lat.tensors:
            raise cp.CheckpointError("latent file has no 'latent' tensor")
        z = lat.tensors["latent"]
        if z.ndim != 2 or z.shape[0] != codec_model.config.latent_channels:
            raise cp.CheckpointError(
                f"latent shape {z.shape} incompatible with codec "
                f"({codec_model.config.latent_channels} channels)")
        t = codec_model.config.waveform_length(z.shape[1])
        noise = np.random.default_rng(args.seed).standard_normal(
            (codec_model.config.channels, t), dtype=np.float32)
        wav = codec_model.decode(z, noise, args.steps_dec)
        write_wav(args.outfile, wav)
        print(f"decoded latent {z.shape[0]}x{z.shape[1]} -> {wav.length} samples ({args.outfile})")
    return 0


def cmd_profile(args):
    rows, skipped = st.profile_directory(args.dir)
    for name in skipped:
        log.warning("skipped (no _k_of_N tag): %s", name)
    if not rows:
        raise ManifestError(f"no profileable files in {args.dir}")
    print(st.format_table(rows))
    if args.csv:
        Path(args.csv).write_text(st.format_csv(rows), encoding="utf-8")
        print(f"wrote {args.csv}")
    return 0


def cmd_inspect(args):
    ck = cp.load(args.ckpt)
    cfg_text, state = pl.split_state_blob(ck.config_text)
    n_params = sum(int(np.prod(a.shape)) for k, a in ck.tensors.items() if k.startswith("model."))
    print(f"kind: {ck.kind}")
    if state:
        print(f"step: {state.get('step', '?')}")
    print(f"tensors: {len(ck.tensors)}")
    if ck.kind in ("stage1", "stage2"):
        print(f"model parameters: {n_params}")
    for line in cfg_text.strip().splitlines():
        print(f"  {line}")
    return 0


# -- argument wiring --------------------------------------------------------------


def build_parser() -> _Parser:
    p = _Parser(prog="promptwave", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def add_config_args(sp):
        sp.add_argument("--config", help="config file (overrides preset/defaults)")
        sp.add_argument("--preset", choices=sorted(cf.PRESETS), help="named scale preset")
        sp.add_argument("--seed", type=int, help="run seed override")

    sp = sub.add_parser("train", help="train stage 1 or stage 2")
    sp.add_argument("--stage", type=int, choices=(1, 2), required=True)
    sp.add_argument("--manifest", required=True, help="TSV track manifest")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--steps", type=int, help="step count (default from config)")
    sp.add_argument("--stage1", help="stage-1 checkpoint (required for --stage 2)")
    sp.add_argument("--resume", help="checkpoint to resume from")
    sp.add_argument("--checkpoint-every", type=int, dest="checkpoint_every")
    add_config_args(sp)
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("generate", help="text prompt -> WAV")
    sp.add_argument("--prompt", required=True)
    sp.add_argument("--stage1", required=True, help="stage-1 checkpoint")
    sp.add_argument("--stage2", required=True, help="stage-2 checkpoint")
    sp.add_argument("--out", required=True, help="output .wav path")
    sp.add_argument("--steps-gen", type=int, default=100, dest="steps_gen")
    sp.add_argument("--steps-dec", type=int, default=100, dest="steps_dec")
    sp.add_argument("--cfg-scale", type=float, default=3.0, dest="cfg_scale")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--latent-length", type=int, dest="latent_length")
    sp.add_argument("--raw-weights", action="store_true", help="use live instead of EMA weights")
    sp.set_defaults(fn=cmd_generate)

    sp = sub.add_parser("codec", help="encode WAV to latent / decode latent to WAV")
    sp.add_argument("action", choices=("encode", "decode"))
    sp.add_argument("--stage1", required=True, help="stage-1 checkpoint")
    sp.add_argument("--in", required=True, dest="infile")
    sp.add_argument("--out", required=True, dest="outfile")
    sp.add_argument("--steps-dec", type=int, default=100, dest="steps_dec")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--raw-weights", action="store_true")
    sp.set_defaults(fn=cmd_codec)

    sp = sub.add_parser("profile", help="segment amplitude/variation table")
    sp.add_argument("--dir", required=True, help="directory of *_k_of_N.wav files")
    sp.add_argument("--csv", help="also write CSV here")
    sp.set_defaults(fn=cmd_profile)

    sp = sub.add_parser("inspect", help="describe a checkpoint")
    sp.add_argument("ckpt")
    sp.set_defaults(fn=cmd_inspect)

    sp = sub.add_parser("dump-config", help="print the resolved config document")
    add_config_args(sp)
    sp.set_defaults(fn=cmd_dump_config)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)
    try:
        args = build_parser().parse_args(argv)
        return args.fn(args)
    except UsageError as e:
        print(f"error[usage]: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (cf.ConfigError, ManifestError, AudioFormatError, cp.CheckpointError,
            OSError, ValueError) as e:
        print(f"error[data]: {e}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as e:
        print(f"error[numeric]: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
