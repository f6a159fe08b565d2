"""Diffusion math: trigonometric noise schedule, v-target, loss, DDIM.

A noise level sigma in [0, 1] maps to an angle phi = (pi/2)*sigma with
mixing weights alpha = cos(phi), beta = sin(phi). A noisy point is
alpha*x0 + beta*eps and the training target is v = alpha*eps - beta*x0
(the derivative of the noisy point with respect to phi).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class NumericError(ArithmeticError):
    """Non-finite value where a finite one is required (diverged training)."""


def _check_sigma(sigma):
    s = np.asarray(sigma)
    if np.any(s < 0) or np.any(s > 1):
        raise ValueError(f"sigma must lie in [0, 1], got {sigma}")


def coeffs(sigma):
    """(alpha, beta) = (cos, sin) of (pi/2)*sigma; alpha^2 + beta^2 = 1.

    alpha is evaluated as sin((pi/2)*(1 - sigma)) — identical in exact math,
    but exactly 0 at sigma = 1 and exactly 1 at sigma = 0, which the
    endpoint contracts (pure noise in, pure data out) rely on.
    """
    _check_sigma(sigma)
    s = np.asarray(sigma)
    half_pi = np.pi / 2
    return np.sin(half_pi * (1.0 - s)), np.sin(half_pi * s)


def _bcast(a, like):
    """Broadcast per-batch scalars [B] against [B, ...] tensors."""
    a = np.asarray(a)
    if a.ndim == 0:
        return a
    return a.reshape(a.shape + (1,) * (np.ndim(like) - a.ndim))


def add_noise(x0, eps, sigma):
    """alpha*x0 + beta*eps elementwise; sigma scalar or per batch element."""
    x0, eps = np.asarray(x0), np.asarray(eps)
    if x0.shape != eps.shape:
        raise ValueError(f"x0 shape {x0.shape} != eps shape {eps.shape}")
    alpha, beta = coeffs(sigma)
    return _bcast(alpha, x0) * x0 + _bcast(beta, x0) * eps


def v_target(x0, eps, sigma):
    """alpha*eps - beta*x0 elementwise."""
    x0, eps = np.asarray(x0), np.asarray(eps)
    if x0.shape != eps.shape:
        raise ValueError(f"x0 shape {x0.shape} != eps shape {eps.shape}")
    alpha, beta = coeffs(sigma)
    return _bcast(alpha, x0) * eps - _bcast(beta, x0) * x0


def v_loss(model, x0, eps, sigma, cond=None):
    """Mean squared error between model(noisy, sigma, cond) and the v target.

    Returns whatever the model's arithmetic produces: an autodiff Tensor for
    trainable models, a float for plain-array oracles. Non-finite loss raises.
    """
    x_sigma = add_noise(x0, eps, sigma)
    target = v_target(x0, eps, sigma)
    v_hat = model(x_sigma, sigma, cond)
    diff = v_hat - target
    loss = (diff * diff).mean()
    value = loss.data if hasattr(loss, "data") else loss
    if not np.all(np.isfinite(value)):
        raise NumericError(f"non-finite diffusion loss: {value}")
    return loss


@dataclass
class SamplerSchedule:
    """Noise levels sigma_T .. sigma_0, strictly decreasing from 1 to 0."""

    sigmas: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.sigmas, dtype=np.float64)
        if s.ndim != 1 or s.size < 2:
            raise ValueError("schedule needs at least two noise levels")
        if s[0] != 1.0 or s[-1] != 0.0:
            raise ValueError(f"schedule endpoints must be exactly 1 and 0, got {s[0]}, {s[-1]}")
        if np.any(np.diff(s) >= 0):
            raise ValueError("schedule must be strictly decreasing")
        self.sigmas = s

    @property
    def steps(self) -> int:
        return self.sigmas.size - 1

    @classmethod
    def linear(cls, steps: int) -> "SamplerSchedule":
        if steps < 1:
            raise ValueError(f"need at least one step, got {steps}")
        return cls(np.linspace(1.0, 0.0, steps + 1))


def ddim_step(model, x_t, sigma_t, sigma_prev, cond=None):
    """One deterministic denoising step from sigma_t down to sigma_prev.

    Estimates v, splits the state into clean/noise parts, and re-mixes them
    at the lower noise level. sigma_prev == sigma_t is an exact identity.
    """
    if not (0.0 <= sigma_prev <= sigma_t <= 1.0):
        raise ValueError(f"need 0 <= sigma_prev <= sigma_t <= 1, got {sigma_prev}, {sigma_t}")
    if sigma_prev == sigma_t:
        return x_t
    a_t, b_t = coeffs(sigma_t)
    a_p, b_p = coeffs(sigma_prev)
    v = model(x_t, sigma_t, cond)
    x0_hat = a_t * x_t - b_t * v
    eps_hat = b_t * x_t + a_t * v
    return a_p * x0_hat + b_p * eps_hat


def sample(model, noise, schedule: SamplerSchedule, cond=None):
    """Fold ddim_step over the schedule; pure in (noise, schedule, cond, params)."""
    x = noise
    s = schedule.sigmas
    for i in range(schedule.steps):
        x = ddim_step(model, x, s[i], s[i + 1], cond)
    return x
