"""Training-free sampler: Monte Carlo heat-semigroup drift and its oracles.

The optimal drift at process time t is gamma * grad_x ln E[g(x + sqrt(gamma*
(1-t)) Z)] with g = target / N(0, gamma I) and Z standard normal. The MC
estimator is the self-normalized ratio E[g * grad log g] / E[g] computed in
log space under a max shift; a Gauss-Hermite oracle (d <= 2) serves as ground
truth in tests. 1D analytic targets dispatch to the compiled kernels.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import kernels
from .errors import ConfigError, NumericError
from .rng import (
    GOLDEN,
    MASK64,
    STREAM_EM_NOISE,
    STREAM_SFS_DRIFT,
    derive_key,
    mix64,
    normals,
)
from .samples import SampleSet


@dataclass
class TargetRatio:
    """log f and grad log f for f = target / N(0, gamma I), up to a constant.

    kernel_kind/kernel_params tag targets the compiled kernels understand
    (1D Gaussian, 1D two-component mixture); everything else runs through the
    python callables.
    """

    dim: int
    gamma: float
    log_f: Callable[[np.ndarray], np.ndarray]
    grad_log_f: Callable[[np.ndarray], np.ndarray]
    kernel_kind: int | None = None
    kernel_params: np.ndarray | None = None


def gaussian_target_ratio(mu: float, var: float, gamma: float) -> TargetRatio:
    if var <= 0 or gamma <= 0:
        raise ConfigError("variances must be positive")

    def log_f(x):
        x0 = x[:, 0]
        return -0.5 * (x0 - mu) ** 2 / var + 0.5 * x0 ** 2 / gamma

    def grad_log_f(x):
        return -(x - mu) / var + x / gamma

    return TargetRatio(1, gamma, log_f, grad_log_f,
                       kernel_kind=kernels.TARGET_GAUSSIAN,
                       kernel_params=np.array([mu, var], dtype=np.float64))


def mixture_target_ratio(weights, means, variances, gamma: float) -> TargetRatio:
    w = np.asarray(weights, dtype=np.float64)
    m = np.asarray(means, dtype=np.float64)
    v = np.asarray(variances, dtype=np.float64)
    if w.shape != m.shape or w.shape != v.shape or w.ndim != 1:
        raise ConfigError("weights, means, variances must be equal-length vectors")
    if np.any(w <= 0) or np.any(v <= 0) or gamma <= 0:
        raise ConfigError("mixture weights and variances must be positive")
    w = w / w.sum()
    logw = np.log(w)

    def comp_logs(x0):
        # (n, C) per-component log densities, constants dropped uniformly
        return logw - 0.5 * np.log(v) - 0.5 * (x0[:, None] - m) ** 2 / v

    def log_f(x):
        x0 = x[:, 0]
        lc = comp_logs(x0)
        hi = lc.max(axis=1)
        return hi + np.log(np.exp(lc - hi[:, None]).sum(axis=1)) \
            + 0.5 * x0 ** 2 / gamma

    def grad_log_f(x):
        x0 = x[:, 0]
        lc = comp_logs(x0)
        hi = lc.max(axis=1, keepdims=True)
        r = np.exp(lc - hi)
        r /= r.sum(axis=1, keepdims=True)
        g = (r * (-(x0[:, None] - m) / v)).sum(axis=1) + x0 / gamma
        return g[:, None]

    kind = None
    params = None
    if w.size == 2:
        kind = kernels.TARGET_MIXTURE2
        params = np.array([logw[0], m[0], v[0], logw[1], m[1], v[1]])
    return TargetRatio(1, gamma, log_f, grad_log_f,
                       kernel_kind=kind, kernel_params=params)


def constant_ratio(dim: int, gamma: float) -> TargetRatio:
    """f = 1: the target IS the reference N(0, gamma I); drift vanishes."""
    return TargetRatio(dim, gamma,
                       lambda x: np.zeros(x.shape[0]),
                       lambda x: np.zeros_like(x))


def model_target_ratio(model, gamma: float) -> TargetRatio:
    """Posterior target: f = p(X|theta) p(theta) / N(theta|0, gamma I)."""

    def log_f(x):
        out = np.empty(x.shape[0])
        for i in range(x.shape[0]):
            th = x[i]
            out[i] = (model.log_prior(th) + model.log_likelihood_sum(th)
                      + 0.5 * float(th @ th) / gamma)
        return out

    def grad_log_f(x):
        out = np.empty_like(x)
        for i in range(x.shape[0]):
            th = x[i]
            out[i] = (model.grad_log_prior(th)
                      + model.grad_log_likelihood_sum(th) + th / gamma)
        return out

    return TargetRatio(model.dim, gamma, log_f, grad_log_f)


def _ratio_terms(ratio: TargetRatio, Y: np.ndarray):
    lw = ratio.log_f(Y)
    if lw.shape != (Y.shape[0],):
        raise ConfigError(f"log_f returned shape {lw.shape}")
    shift = lw.max()
    if not np.isfinite(shift):
        raise NumericError(
            "all importance weights vanished; increase M or adjust gamma")
    w = np.exp(lw - shift)
    return w, ratio.grad_log_f(Y)


def heat_semigroup_drift_mc(ratio: TargetRatio, t: float, x: np.ndarray,
                            M: int, seed: int) -> np.ndarray:
    """Self-normalized MC estimate of the optimal drift at (t, x)."""
    if not 0.0 <= t < 1.0:
        raise ConfigError(f"t must lie in [0, 1), got {t}")
    if M < 2:
        raise ConfigError(f"M must be >= 2, got {M}")
    x = np.asarray(x, dtype=np.float64).reshape(ratio.dim)
    scale = np.sqrt(ratio.gamma * (1.0 - t))
    z = normals(derive_key(seed, STREAM_SFS_DRIFT), 0,
                M * ratio.dim).reshape(M, ratio.dim)
    Y = x[None, :] + scale * z
    w, g = _ratio_terms(ratio, Y)
    den = w.sum()
    if den == 0.0 or not np.isfinite(den):
        raise NumericError(
            "all importance weights vanished; increase M or adjust gamma")
    return ratio.gamma * (w[:, None] * g).sum(axis=0) / den


def semigroup_quadrature_oracle(ratio: TargetRatio, t: float, x: np.ndarray,
                                n_nodes: int = 160) -> np.ndarray:
    """Gauss-Hermite evaluation of the drift; test oracle for dim <= 2."""
    if ratio.dim > 2:
        raise ConfigError("quadrature oracle supports dim <= 2 only")
    if not 0.0 <= t <= 1.0:
        raise ConfigError(f"t must lie in [0, 1], got {t}")
    if n_nodes < 128:
        raise ConfigError("oracle needs at least 128 nodes per dimension")
    x = np.asarray(x, dtype=np.float64).reshape(ratio.dim)
    tau = 1.0 - t
    if tau == 0.0:
        g = ratio.grad_log_f(x[None, :])[0]
        return ratio.gamma * g
    nodes, weights = np.polynomial.hermite.hermgauss(n_nodes)
    scale = np.sqrt(2.0 * ratio.gamma * tau)
    if ratio.dim == 1:
        Y = x[None, :] + scale * nodes[:, None]
        logw = np.log(weights)
    else:
        zi, zj = np.meshgrid(nodes, nodes, indexing="ij")
        Y = x[None, :] + scale * np.column_stack([zi.ravel(), zj.ravel()])
        logw = (np.log(weights)[:, None] + np.log(weights)[None, :]).ravel()
    lf = ratio.log_f(Y) + logw
    shift = lf.max()
    w = np.exp(lf - shift)
    g = ratio.grad_log_f(Y)
    return ratio.gamma * (w[:, None] * g).sum(axis=0) / w.sum()


def _oracle_drift_rows(ratio: TargetRatio, t: float, X: np.ndarray,
                       n_nodes: int = 160) -> np.ndarray:
    """Row-batched 1D quadrature drift; test helper, identical math to the
    scalar oracle."""
    if ratio.dim != 1:
        raise ConfigError("row-batched oracle is 1D only")
    tau = 1.0 - t
    if tau == 0.0:
        return ratio.gamma * ratio.grad_log_f(X)
    nodes, weights = np.polynomial.hermite.hermgauss(n_nodes)
    scale = np.sqrt(2.0 * ratio.gamma * tau)
    S = X.shape[0]
    Y = (X[:, 0][:, None] + scale * nodes[None, :]).reshape(-1, 1)
    lf = ratio.log_f(Y).reshape(S, -1) + np.log(weights)[None, :]
    hi = lf.max(axis=1, keepdims=True)
    w = np.exp(lf - hi)
    g = ratio.grad_log_f(Y)[:, 0].reshape(S, -1)
    return (ratio.gamma * (w * g).sum(axis=1) / w.sum(axis=1))[:, None]


def _sfs_python(ratio: TargetRatio, S: int, k: int, M: int, seed: int,
                path_offset: int, chunk: int) -> np.ndarray:
    gamma = ratio.gamma
    dt = 1.0 / k
    sig = np.sqrt(gamma * dt)
    root_noise = derive_key(seed, STREAM_EM_NOISE)
    drift_base = derive_key(seed, STREAM_SFS_DRIFT)
    out = np.empty((S, ratio.dim))
    for lo in range(0, S, chunk):
        hi = min(lo + chunk, S)
        n = hi - lo
        s_abs = np.arange(lo, hi) + path_offset
        path_keys = [mix64((drift_base + GOLDEN + int(s)) & MASK64) for s in s_abs]
        X = np.zeros((n, ratio.dim))
        noise = kernels.noise_tensor(root_noise, n, k, ratio.dim,
                                     path_offset=lo + path_offset)
        for j in range(k):
            tau = 1.0 - j * dt
            scale = np.sqrt(gamma * tau)
            U = np.empty_like(X)
            for p in range(n):
                kj = mix64((path_keys[p] + GOLDEN + j) & MASK64)
                z = normals(kj, 0, M * ratio.dim).reshape(M, ratio.dim)
                Y = X[p][None, :] + scale * z
                w, g = _ratio_terms(ratio, Y)
                den = w.sum()
                if den == 0.0 or not np.isfinite(den):
                    raise NumericError(
                        "all importance weights vanished; increase M or adjust gamma")
                U[p] = gamma * (w[:, None] * g).sum(axis=0) / den
            X = X + U * dt + sig * noise[:, j, :]
        out[lo:hi] = X
    return out


def sfs_sample(ratio: TargetRatio, S: int, k: int, M: int, seed: int,
               path_offset: int = 0, chunk: int = 256) -> SampleSet:
    """Training-free sampler: EM with a fresh MC drift estimate per (path, step).

    Drift randomness is keyed by (seed, path, step); the compiled kernels and
    the python fallback draw from identical streams.
    """
    if M < 2:
        raise ConfigError(f"M must be >= 2, got {M}")
    t0 = time.perf_counter()
    if ratio.kernel_kind is not None and ratio.dim == 1:
        x = kernels.sfs_terminal_1d(ratio.kernel_kind, ratio.kernel_params,
                                    ratio.gamma, S, k, M, seed,
                                    path_offset=path_offset)
        samples = x[:, None]
    else:
        samples = _sfs_python(ratio, S, k, M, seed, path_offset, chunk)
    wall = time.perf_counter() - t0
    return SampleSet(samples, meta={
        "method": "sfs", "seed": seed, "gamma": ratio.gamma,
        "dt": 1.0 / k, "k": k, "M": M, "S": S, "wall_time": wall,
        "backend": kernels.BACKEND,
    })
