"""Training runs and checkpoint state for both stages.

A run owns one rng that every stochastic draw flows through in a fixed
order (data sampling, conditioning dropout, noise levels, noise), so a
fixed seed gives a bit-identical loss trace and a restored checkpoint
continues it exactly.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np

from . import checkpoint as cp
from . import config as cf
from .autodiff import backward, no_grad
from .codec import LatentCodec
from .corpus import make_pairs
from .textgen import ByteTableEmbedder, LatentGenerator, pad_embeddings
from .training import AdamW, PowerEma

log = logging.getLogger(__name__)

LOG_HEADER = "step,loss,wall_ms"


# -- rng/state serialization ---------------------------------------------------


def rng_state_lines(rng: np.random.Generator) -> list[str]:
    st = rng.bit_generator.state
    if st["bit_generator"] != "PCG64":
        raise ValueError(f"unsupported rng {st['bit_generator']}")
    return [
        f"rng_state = {st['state']['state']:#x}",
        f"rng_inc = {st['state']['inc']:#x}",
        f"rng_has_uint32 = {st['has_uint32']}",
        f"rng_uinteger = {st['uinteger']}",
    ]


def restore_rng(fields: dict[str, str]) -> np.random.Generator:
    rng = np.random.default_rng(0)
    rng.bit_generator.state = {
        "bit_generator": "PCG64",
        "state": {"state": int(fields["rng_state"], 0), "inc": int(fields["rng_inc"], 0)},
        "has_uint32": int(fields["rng_has_uint32"]),
        "uinteger": int(fields["rng_uinteger"]),
    }
    return rng


def split_state_blob(text: str):
    """Checkpoint config blob -> (config text, state fields dict)."""
    if "[state]" not in text:
        return text, {}
    head, tail = text.split("[state]", 1)
    fields = {}
    for line in tail.splitlines():
        line = line.strip()
        if not line or line.startswith("["):
            continue
        if "=" in line:
            k, v = (p.strip() for p in line.split("=", 1))
            fields[k] = v
    return head, fields


# -- run construction ----------------------------------------------------------


@dataclass
class TrainRun:
    stage: int
    cfg: cf.RunConfig
    model: object            # LatentCodec or LatentGenerator
    opt: AdamW
    ema: PowerEma
    rng: np.random.Generator
    step: int = 0
    frozen_codec: LatentCodec | None = None   # stage 2 only
    embedder: ByteTableEmbedder | None = None


def build_stage1(cfg: cf.RunConfig, seed: int) -> LatentCodec:
    return LatentCodec(cf.codec_config(cfg), seed=seed)


def build_stage2(cfg: cf.RunConfig, seed: int) -> LatentGenerator:
    return LatentGenerator(cf.stage2_unet_config(cfg), cfg_drop=cfg.stage2.cfg_drop,
                           cfg_scale=cfg.sample.cfg_scale, seed=seed)


def _new_optimizer(cfg, store):
    o = cfg.optim
    return AdamW(store, lr=o.lr, beta1=o.beta1, beta2=o.beta2, eps=o.eps,
                 weight_decay=o.weight_decay, grad_clip=o.grad_clip)


def new_run(cfg: cf.RunConfig, stage: int, frozen_codec=None) -> TrainRun:
    cf.validate_config(cfg)
    seed = cfg.run.seed
    if stage == 1:
        model = build_stage1(cfg, seed)
    elif stage == 2:
        model = build_stage2(cfg, seed)
    else:
        raise ValueError(f"stage must be 1 or 2, got {stage}")
    opt = _new_optimizer(cfg, model.store)
    ema = PowerEma(model.store, beta=cfg.ema.beta, power=cfg.ema.power)
    rng = np.random.default_rng(seed)
    embedder = ByteTableEmbedder(cfg.stage2.context_features, cfg.stage2.embedder_seed) \
        if stage == 2 else None
    return TrainRun(stage, cfg, model, opt, ema, rng, 0, frozen_codec, embedder)


# -- checkpoint round trip -------------------------------------------------------


def run_checkpoint(run: TrainRun) -> cp.Checkpoint:
    blob = cf.dump_config(run.cfg) + "\n[state]\n" + "\n".join(
        [f"step = {run.step}", f"opt_step = {run.opt.step_count}"] + rng_state_lines(run.rng)) + "\n"
    tensors: dict[str, np.ndarray] = {}
    for name, t in run.model.store.items():
        tensors[f"model.{name}"] = t.data
    m, v, _ = run.opt.state_dict()
    for name in m:
        tensors[f"opt.m.{name}"] = m[name]
    for name in v:
        tensors[f"opt.v.{name}"] = v[name]
    for name, s in run.ema.state_dict().items():
        tensors[f"ema.{name}"] = s
    return cp.Checkpoint(f"stage{run.stage}", blob, tensors)


def _grouped(tensors: dict[str, np.ndarray], prefix: str) -> dict[str, np.ndarray]:
    n = len(prefix)
    return {k[n:]: v for k, v in tensors.items() if k.startswith(prefix)}


def resume_run(ckpt: cp.Checkpoint, frozen_codec=None) -> TrainRun:
    if ckpt.kind not in ("stage1", "stage2"):
        raise cp.CheckpointError(f"cannot resume training from a '{ckpt.kind}' checkpoint")
    stage = int(ckpt.kind[-1])
    cfg_text, state = split_state_blob(ckpt.config_text)
    cfg = cf.parse_config(cfg_text)
    run = new_run(cfg, stage, frozen_codec=frozen_codec)
    run.model.store.load_state(_grouped(ckpt.tensors, "model."))
    run.opt.load_state(_grouped(ckpt.tensors, "opt.m."), _grouped(ckpt.tensors, "opt.v."),
                       int(state["opt_step"]))
    run.ema.load_state(_grouped(ckpt.tensors, "ema."))
    run.rng = restore_rng(state)
    run.step = int(state["step"])
    return run


def load_model(ckpt: cp.Checkpoint, use_ema=True):
    """(model, cfg) for inference; EMA weights by default."""
    cfg_text, _ = split_state_blob(ckpt.config_text)
    cfg = cf.parse_config(cfg_text)
    if ckpt.kind == "stage1":
        model = build_stage1(cfg, seed=cfg.run.seed)
    elif ckpt.kind == "stage2":
        model = build_stage2(cfg, seed=cfg.run.seed)
    else:
        raise cp.CheckpointError(f"'{ckpt.kind}' checkpoint holds no model")
    prefix = "ema." if use_ema else "model."
    model.store.load_state(_grouped(ckpt.tensors, prefix))
    return model, cfg


# -- batching and the step loop ---------------------------------------------------


def batch_stage1(run: TrainRun, pairs) -> np.ndarray:
    b = run.cfg.optim.batch_size
    return np.stack([next(pairs)[0] for _ in range(b)]).astype(np.float32)


def batch_stage2(run: TrainRun, pairs):
    b = run.cfg.optim.batch_size
    crops, prompts = [], []
    for _ in range(b):
        crop, prompt = next(pairs)
        crops.append(crop)
        prompts.append(prompt)
    wavs = np.stack(crops).astype(np.float32)
    with no_grad():
        latents = run.frozen_codec.encode_batch(wavs).data
    embeddings = [run.embedder.embed(p) for p in prompts]
    return latents, embeddings


def train_step(run: TrainRun, pairs) -> float:
    """One optimization step; returns the loss value."""
    if run.stage == 1:
        batch = batch_stage1(run, pairs)
        loss = run.model.loss(batch, run.rng)
    else:
        latents, embeddings = batch_stage2(run, pairs)
        loss = run.model.loss(latents, embeddings, run.rng)
    backward(loss)
    run.opt.step()
    run.step += 1
    run.ema.update(run.step)
    return float(loss.data)


def data_stream(run: TrainRun, records):
    crop = run.cfg.stage1.crop if run.stage == 1 else run.cfg.stage2.crop
    return make_pairs(records, crop, run.stage, run.rng)


def train_loop(run: TrainRun, records, steps: int, log_file=None, ckpt_path=None,
               checkpoint_every=None) -> list[float]:
    """Run `steps` optimization steps; returns the loss trace.

    Writes one CSV line per step (step,loss,wall_ms) and saves the full run
    state every checkpoint_every steps and at the end.
    """
    pairs = data_stream(run, records)
    every = checkpoint_every or run.cfg.train.checkpoint_every
    trace = []
    if log_file is not None and run.step == 0:
        log_file.write(LOG_HEADER + "\n")
    for _ in range(steps):
        t0 = time.perf_counter()
        loss = train_step(run, pairs)
        ms = (time.perf_counter() - t0) * 1e3
        trace.append(loss)
        if log_file is not None:
            log_file.write(f"{run.step},{loss:.6f},{ms:.1f}\n")
        if ckpt_path is not None and every and run.step % every == 0:
            cp.save(ckpt_path, run_checkpoint(run))
            log.info("checkpoint at step %d -> %s", run.step, ckpt_path)
    if ckpt_path is not None:
        cp.save(ckpt_path, run_checkpoint(run))
    return trace
