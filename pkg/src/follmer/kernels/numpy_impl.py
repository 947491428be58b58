"""Vectorized numpy implementations of the hot kernels.

Fallback backend: same stream indexing and arithmetic as the numba kernels,
so outputs agree bit-for-bit on elementwise work (noise tensors) and to
summation-order rounding (~1e-13 relative) on Monte-Carlo reductions.
"""

from __future__ import annotations

import numpy as np

from ..rng import GOLDEN, MASK64, STREAM_EM_NOISE, STREAM_SFS_DRIFT, _mix_array, extend_key, seed_root

_U1 = np.uint64(1)
_UGOLD = np.uint64(GOLDEN)

# analytic 1D target ids understood by the fast path
TARGET_GAUSSIAN = 1
TARGET_MIXTURE2 = 2

_ROW_BLOCK = 64


def _uniforms_at(keys: np.ndarray, idx: np.ndarray) -> np.ndarray:
    bits = _mix_array(keys + (idx + _U1) * _UGOLD)
    return ((bits >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0 ** -53


def _normals_at(keys: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Standard normals at broadcastable (keys, draw index) pairs."""
    base = (idx >> _U1) << _U1
    u1 = _uniforms_at(keys, base)
    u2 = _uniforms_at(keys, base + _U1)
    r = np.sqrt(-2.0 * np.log(u1))
    ang = (2.0 * np.pi) * u2
    return np.where((idx & _U1) == 0, r * np.cos(ang), r * np.sin(ang))


def noise_tensor(key: int, S: int, k: int, d: int, path_offset: int = 0) -> np.ndarray:
    """Standard-normal tensor xi[s, j, dim] at flat counter ((s+off)*k + j)*d + dim."""
    s_idx = (np.arange(S, dtype=np.uint64) + np.uint64(path_offset))[:, None, None]
    j_idx = np.arange(k, dtype=np.uint64)[None, :, None]
    d_idx = np.arange(d, dtype=np.uint64)[None, None, :]
    flat = (s_idx * np.uint64(k) + j_idx) * np.uint64(d) + d_idx
    return _normals_at(np.uint64(key), flat)


def _log_f_and_grad(kind: int, params: np.ndarray, gamma: float, y: np.ndarray):
    """log f = log target(y) - log N(y|0, gamma) up to constants, and its gradient."""
    if kind == TARGET_GAUSSIAN:
        mu, var = params[0], params[1]
        lt = -0.5 * (y - mu) ** 2 / var
        gt = -(y - mu) / var
    elif kind == TARGET_MIXTURE2:
        lw1, m1, v1, lw2, m2, v2 = params[:6]
        la = lw1 - 0.5 * np.log(v1) - 0.5 * (y - m1) ** 2 / v1
        lb = lw2 - 0.5 * np.log(v2) - 0.5 * (y - m2) ** 2 / v2
        hi = np.maximum(la, lb)
        ea = np.exp(la - hi)
        eb = np.exp(lb - hi)
        lt = hi + np.log(ea + eb)
        wa = ea / (ea + eb)
        gt = wa * (-(y - m1) / v1) + (1.0 - wa) * (-(y - m2) / v2)
    else:
        raise ValueError(f"unknown analytic target kind {kind}")
    return lt + 0.5 * y * y / gamma, gt + y / gamma


def semigroup_mc_drift_1d(
    kind: int,
    params: np.ndarray,
    gamma: float,
    tau: float,
    x: np.ndarray,
    M: int,
    keys: np.ndarray,
) -> np.ndarray:
    """Self-normalized MC estimate of the smoothed-density drift at each x row.

    tau is the remaining time 1-t; draws m=0..M-1 come from the per-row keys.
    Rows whose weights all degenerate come back NaN for the caller to diagnose.
    """
    n = x.shape[0]
    out = np.empty(n, dtype=np.float64)
    scale = np.sqrt(tau * gamma)
    m_idx = np.arange(M, dtype=np.uint64)[None, :]
    for lo in range(0, n, _ROW_BLOCK):
        hi = min(lo + _ROW_BLOCK, n)
        kk = keys[lo:hi].astype(np.uint64)[:, None]
        z = _normals_at(kk, m_idx)
        y = x[lo:hi, None] + scale * z
        lf, gf = _log_f_and_grad(kind, params, gamma, y)
        shift = np.max(lf, axis=1)
        w = np.exp(lf - shift[:, None])
        den = np.sum(w, axis=1)
        num = np.sum(w * gf, axis=1)
        blk = gamma * num / den
        blk[~np.isfinite(shift)] = np.nan
        out[lo:hi] = blk
    return out


def sfs_terminal_1d(
    kind: int,
    params: np.ndarray,
    gamma: float,
    S: int,
    k: int,
    M: int,
    seed: int,
    path_offset: int = 0,
) -> np.ndarray:
    """Terminal samples of the MC-drift sampler for a 1D analytic target."""
    root = seed_root(seed)
    noise_key = extend_key(root, STREAM_EM_NOISE)
    drift_base = extend_key(root, STREAM_SFS_DRIFT)
    dt = 1.0 / k
    sig = np.sqrt(gamma * dt)

    s_abs = np.arange(S, dtype=np.uint64) + np.uint64(path_offset)
    # scalar uint64 adds warn on wraparound, so fold the constants in python ints
    base_plus_gold = np.uint64((drift_base + GOLDEN) & MASK64)
    path_keys = _mix_array(base_plus_gold + s_abs)
    xi = noise_tensor(noise_key, S, k, 1, path_offset)[:, :, 0]

    x = np.zeros(S, dtype=np.float64)
    for j in range(k):
        keys_j = _mix_array(path_keys + _UGOLD + np.uint64(j))
        u = semigroup_mc_drift_1d(kind, params, gamma, 1.0 - j * dt, x, M, keys_j)
        x = x + u * dt + sig * xi[:, j]
    return x
