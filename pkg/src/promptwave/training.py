"""Optimization shared by both stages: AdamW, power-warmup EMA, crops."""

from __future__ import annotations

import logging

import numpy as np

from .audio import Waveform
from .autodiff import ParamStore
from .diffusion import NumericError

log = logging.getLogger(__name__)


class AdamW:
    """Decoupled-weight-decay Adam with bias correction and global-norm clipping.

    step() consumes and clears the gradients; a non-finite gradient aborts
    the step naming the offending parameter.
    """

    def __init__(self, store: ParamStore, lr=1e-4, beta1=0.95, beta2=0.999,
                 eps=1e-6, weight_decay=1e-3, grad_clip=1.0):
        self.store = store
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.grad_clip = grad_clip
        self.step_count = 0
        self.m = {name: np.zeros_like(t.data) for name, t in store.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in store.items()}

    def step(self):
        grads = {}
        sq_sum = 0.0
        for name, t in self.store.items():
            g = t.grad if t.grad is not None else np.zeros_like(t.data)
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for parameter '{name}'")
            grads[name] = g
            sq_sum += float((g.astype(np.float64) ** 2).sum())
        gnorm = np.sqrt(sq_sum)
        if self.grad_clip and gnorm > self.grad_clip:
            scale = self.grad_clip / gnorm
            log.info("gradient clip active: norm %.4g scaled by %.4g", gnorm, scale)
            for name in grads:
                grads[name] = grads[name] * scale

        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for name, p in self.store.items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data = p.data - self.lr * update.astype(p.data.dtype) - self.lr * self.weight_decay * p.data
        self.store.zero_grad()
        return gnorm

    def state_dict(self):
        return ({k: a.copy() for k, a in self.m.items()},
                {k: a.copy() for k, a in self.v.items()}, self.step_count)

    def load_state(self, m, v, step_count):
        for name in self.m:
            if name not in m or name not in v:
                raise KeyError(f"optimizer state missing moments for '{name}'")
            self.m[name] = m[name].astype(self.m[name].dtype).copy()
            self.v[name] = v[name].astype(self.v[name].dtype).copy()
        self.step_count = int(step_count)


class PowerEma:
    """Shadow parameters with decay min(beta, (1 - 1/(step+1))**power).

    The shadow accumulates in float64: a float32 recurrence stalls at a fixed
    point ~1e-5 away from frozen parameters, above the convergence contract.
    """

    def __init__(self, store: ParamStore, beta=0.995, power=0.7):
        self.store = store
        self.beta = beta
        self.power = power
        self.shadow = {name: t.data.astype(np.float64) for name, t in store.items()}

    def decay_at(self, step: int) -> float:
        if step < 1:
            raise ValueError(f"EMA update needs step >= 1, got {step}")
        return min(self.beta, (1.0 - 1.0 / (step + 1)) ** self.power)

    def update(self, step: int) -> float:
        d = self.decay_at(step)
        for name, t in self.store.items():
            s = self.shadow[name]
            s *= d
            s += (1.0 - d) * t.data
        return d

    def copy_to_store(self):
        """Overwrite live parameters with the shadow (inference weights)."""
        for name, t in self.store.items():
            t.data = self.shadow[name].astype(t.data.dtype)

    def state_dict(self):
        return {k: a.copy() for k, a in self.shadow.items()}

    def load_state(self, state):
        for name in self.shadow:
            if name not in state:
                raise KeyError(f"EMA state missing '{name}'")
            self.shadow[name] = state[name].astype(np.float64)


def chunk_count(t: int, length: int) -> int:
    """Fixed-mode chunks covering a source of t samples (last one padded)."""
    return max(1, -(-t // length))


def crop_samples(samples: np.ndarray, length: int, mode: str,
                 rng: np.random.Generator = None, chunk_index: int = None) -> np.ndarray:
    """Crop [c, t] samples to [c, length]; shorter sources zero-pad right.

    random mode draws a uniform start offset from rng; fixed mode takes
    non-overlapping chunk chunk_index (0-based).
    """
    c, t = samples.shape
    if mode == "random":
        if t <= length:
            start = 0
        else:
            start = int(rng.integers(0, t - length + 1))
    elif mode == "fixed":
        if chunk_index is None or chunk_index < 0:
            raise ValueError("fixed mode needs a non-negative chunk_index")
        start = chunk_index * length
        if start >= t and t > 0 and chunk_index >= chunk_count(t, length):
            raise ValueError(f"chunk {chunk_index} out of range for {t} samples")
    else:
        raise ValueError(f"unknown crop mode '{mode}'")
    out = samples[:, start:start + length]
    if out.shape[1] < length:
        out = np.pad(out, ((0, 0), (0, length - out.shape[1])))
    return out


def crop_sampler(w: Waveform, length: int, mode: str,
                 rng: np.random.Generator = None, chunk_index: int = None) -> Waveform:
    return Waveform(crop_samples(w.samples, length, mode, rng, chunk_index), w.sample_rate)
