"""Langevin and plain stochastic-gradient baselines.

Both walk the log-joint ln p(theta) + (N/B) sum_batch ln p(x_i|theta) with
minibatch rescaling; the Langevin chain adds N(0, lambda(i) I) per step.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericError
from .rng import STREAM_BATCH, STREAM_SGLD_NOISE, derive_key, normals, permutation_prefix
from .samples import SampleSet


@dataclass(frozen=True)
class SgldSchedule:
    """Step sizes lambda(i) = a / (i + b)**gamma_exp, positive decreasing."""

    a: float
    b: float
    gamma_exp: float

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ConfigError("schedule a and b must be positive")
        if not (0.5 < self.gamma_exp <= 1.0):
            raise ConfigError("schedule exponent must lie in (0.5, 1]")

    def lam(self, i: int) -> float:
        return self.a / (i + self.b) ** self.gamma_exp


def _batch_indices(seed: int, i: int, N: int, B: int) -> np.ndarray:
    if B == N:
        return np.arange(N)
    return permutation_prefix(derive_key(seed, STREAM_BATCH, i + 1), N, B)


def _log_joint_grad(model, theta: np.ndarray, idx: np.ndarray,
                    coeff: float, i: int) -> np.ndarray:
    g = (model.grad_log_prior_batch(theta[None, :])[0]
         + coeff * model.grad_log_lik_sum_batch(theta[None, :], idx)[0])
    if not np.all(np.isfinite(g)):
        raise NumericError(f"non-finite gradient at iteration {i}")
    return g


def sgld_run(model, schedule: SgldSchedule, iterations: int, batch_size: int,
             burn_in: int, thin: int, seed: int,
             inject_noise: bool = True) -> SampleSet:
    """Stochastic-gradient Langevin chain from the origin; keeps every
    `thin`-th iterate after `burn_in`. With inject_noise=False and a full
    batch this is exactly gradient ascent with step lambda(i)/2."""
    if iterations < burn_in:
        raise ConfigError("iterations must be >= burn_in")
    if not 1 <= batch_size <= model.N:
        raise ConfigError(f"batch size {batch_size} outside 1..{model.N}")
    if thin < 1:
        raise ConfigError("thin must be >= 1")
    t0 = time.time()
    d = model.dim
    coeff = model.N / batch_size
    noise_key = derive_key(seed, STREAM_SGLD_NOISE)
    theta = np.zeros(d)
    kept = []
    for i in range(iterations):
        lam = schedule.lam(i)
        idx = _batch_indices(seed, i, model.N, batch_size)
        g = _log_joint_grad(model, theta, idx, coeff, i)
        theta = theta + 0.5 * lam * g
        if inject_noise:
            xi = normals(noise_key, i * d, d)
            theta = theta + np.sqrt(lam) * xi
        if i >= burn_in and (i - burn_in) % thin == 0:
            kept.append(theta.copy())
    return SampleSet(np.array(kept), meta={
        "method": "sgld",
        "seed": int(seed),
        "iterations": int(iterations),
        "burn_in": int(burn_in),
        "thin": int(thin),
        "batch_size": int(batch_size),
        "schedule_a": schedule.a,
        "schedule_b": schedule.b,
        "schedule_gamma_exp": schedule.gamma_exp,
        "inject_noise": bool(inject_noise),
        "wall_time": time.time() - t0,
    })


def sgd_run(model, step_size, iterations: int, batch_size: int,
            seed: int) -> np.ndarray:
    """Minibatch gradient ascent on the log-joint; returns the final
    iterate. step_size may be a constant or a callable of the iteration."""
    if iterations < 1:
        raise ConfigError("iterations must be >= 1")
    if not 1 <= batch_size <= model.N:
        raise ConfigError(f"batch size {batch_size} outside 1..{model.N}")
    step_fn = step_size if callable(step_size) else (lambda i: step_size)
    coeff = model.N / batch_size
    theta = np.zeros(model.dim)
    for i in range(iterations):
        idx = _batch_indices(seed, i, model.N, batch_size)
        g = _log_joint_grad(model, theta, idx, coeff, i)
        theta = theta + step_fn(i) * g
    return theta
