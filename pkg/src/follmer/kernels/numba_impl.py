"""numba-compiled hot kernels: counter RNG, MC drift, full 1D MC-drift sampler.

Kept in lockstep with numpy_impl; per-path reductions run sequentially inside
each parallel iteration so the output never depends on the thread schedule.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

from ..rng import GOLDEN, STREAM_EM_NOISE, STREAM_SFS_DRIFT, extend_key, seed_root

_U1 = np.uint64(1)
_U11 = np.uint64(11)
_U27 = np.uint64(27)
_U30 = np.uint64(30)
_U31 = np.uint64(31)
_UGOLD = np.uint64(GOLDEN)
_C1 = np.uint64(0xBF58476D1CE4E5B9)
_C2 = np.uint64(0x94D049BB133111EB)
_TWO_PI = 6.283185307179586476925287

TARGET_GAUSSIAN = 1
TARGET_MIXTURE2 = 2


@njit(cache=True, inline="always")
def _mix(z):
    z = (z ^ (z >> _U30)) * _C1
    z = (z ^ (z >> _U27)) * _C2
    return z ^ (z >> _U31)


@njit(cache=True, inline="always")
def _extend(key, sid):
    return _mix(key + _UGOLD + np.uint64(sid))


@njit(cache=True, inline="always")
def _u_at(key, i):
    bits = _mix(key + (i + _U1) * _UGOLD)
    return (np.float64(bits >> _U11) + 1.0) * 2.0 ** -53


@njit(cache=True, inline="always")
def _n_at(key, i):
    base = (i >> _U1) << _U1
    u1 = _u_at(key, base)
    u2 = _u_at(key, base + _U1)
    r = np.sqrt(-2.0 * np.log(u1))
    ang = _TWO_PI * u2
    if (i & _U1) == np.uint64(0):
        return r * np.cos(ang)
    return r * np.sin(ang)


@njit(cache=True, parallel=True)
def _noise_tensor(key, S, k, d, path_offset):
    out = np.empty((S, k, d), dtype=np.float64)
    for s in prange(S):
        su = np.uint64(s + path_offset)
        for j in range(k):
            row = (su * np.uint64(k) + np.uint64(j)) * np.uint64(d)
            for dim in range(d):
                out[s, j, dim] = _n_at(key, row + np.uint64(dim))
    return out


def noise_tensor(key: int, S: int, k: int, d: int, path_offset: int = 0) -> np.ndarray:
    return _noise_tensor(np.uint64(key), S, k, d, path_offset)


@njit(cache=True, inline="always")
def _logf_grad(kind, params, gamma, y):
    if kind == TARGET_GAUSSIAN:
        mu = params[0]
        var = params[1]
        lt = -0.5 * (y - mu) * (y - mu) / var
        gt = -(y - mu) / var
    else:
        la = params[0] - 0.5 * np.log(params[2]) - 0.5 * (y - params[1]) * (y - params[1]) / params[2]
        lb = params[3] - 0.5 * np.log(params[5]) - 0.5 * (y - params[4]) * (y - params[4]) / params[5]
        hi = la if la > lb else lb
        ea = np.exp(la - hi)
        eb = np.exp(lb - hi)
        lt = hi + np.log(ea + eb)
        wa = ea / (ea + eb)
        gt = wa * (-(y - params[1]) / params[2]) + (1.0 - wa) * (-(y - params[4]) / params[5])
    return lt + 0.5 * y * y / gamma, gt + y / gamma


@njit(cache=True, inline="always")
def _mc_drift_point(kind, params, gamma, tau, x, M, key):
    scale = np.sqrt(tau * gamma)
    shift = -np.inf
    den = 0.0
    num = 0.0
    n_pairs = (M + 1) // 2
    for p in range(n_pairs):
        i0 = np.uint64(2 * p)
        u1 = _u_at(key, i0)
        u2 = _u_at(key, i0 + _U1)
        r = np.sqrt(-2.0 * np.log(u1))
        ang = _TWO_PI * u2
        for branch in range(2):
            m = 2 * p + branch
            if m >= M:
                break
            z = r * np.cos(ang) if branch == 0 else r * np.sin(ang)
            y = x + scale * z
            lf, gf = _logf_grad(kind, params, gamma, y)
            if lf > shift:
                f = np.exp(shift - lf) if shift > -np.inf else 0.0
                den = den * f + 1.0
                num = num * f + gf
                shift = lf
            else:
                w = np.exp(lf - shift)
                den += w
                num += w * gf
    if not np.isfinite(shift):
        return np.nan
    return gamma * num / den


@njit(cache=True, parallel=True)
def _mc_drift_rows(kind, params, gamma, tau, x, M, keys):
    n = x.shape[0]
    out = np.empty(n, dtype=np.float64)
    for r in prange(n):
        out[r] = _mc_drift_point(kind, params, gamma, tau, x[r], M, keys[r])
    return out


def semigroup_mc_drift_1d(kind, params, gamma, tau, x, M, keys) -> np.ndarray:
    return _mc_drift_rows(kind, np.asarray(params, dtype=np.float64), gamma, tau,
                          np.ascontiguousarray(x, dtype=np.float64), M,
                          np.ascontiguousarray(keys, dtype=np.uint64))


@njit(cache=True, parallel=True)
def _sfs_terminal(kind, params, gamma, S, k, M, noise_key, drift_base, path_offset):
    dt = 1.0 / k
    sig = np.sqrt(gamma * dt)
    out = np.empty(S, dtype=np.float64)
    for s in prange(S):
        su = s + path_offset
        pkey = _extend(drift_base, su)
        x = 0.0
        for j in range(k):
            kj = _extend(pkey, j)
            u = _mc_drift_point(kind, params, gamma, 1.0 - j * dt, x, M, kj)
            xi = _n_at(noise_key, np.uint64(su * k + j))
            x = x + u * dt + sig * xi
        out[s] = x
    return out


def sfs_terminal_1d(kind, params, gamma, S, k, M, seed, path_offset=0) -> np.ndarray:
    root = seed_root(seed)
    noise_key = np.uint64(extend_key(root, STREAM_EM_NOISE))
    drift_base = np.uint64(extend_key(root, STREAM_SFS_DRIFT))
    return _sfs_terminal(kind, np.asarray(params, dtype=np.float64), gamma,
                         S, k, M, noise_key, drift_base, path_offset)
