"""Counter-based random number generation.

Every random quantity in the package is a pure function of (master seed,
stream ids, draw index), so results never depend on execution order, thread
count, or how work is chunked. The generator is the splitmix64 finalizer used
as a counter hash: draw i from key K reads mix64(K + (i+1)*GOLDEN). Keys are
derived from the master seed by chained mixing over integer stream ids.

Standard normals come from Box-Muller pairs: uniforms at indices (2p, 2p+1)
produce normals 2p (cos branch) and 2p+1 (sin branch). The first uniform is
mapped into (0, 1] so the log never sees zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MASK64 = 0xFFFFFFFFFFFFFFFF
GOLDEN = 0x9E3779B97F4A7C15
_SEED_DOMAIN = 0xA0761D6478BD642F

# stream tags; single place so python and kernel paths can never disagree
STREAM_EM_NOISE = 1
STREAM_SFS_DRIFT = 2
STREAM_INIT = 3
STREAM_BATCH = 4
STREAM_SGLD_NOISE = 5
STREAM_DATA = 6


def mix64(z: int) -> int:
    """splitmix64 finalizer on a 64-bit integer (python int in, python int out)."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def seed_root(seed: int) -> int:
    return mix64((int(seed) ^ _SEED_DOMAIN) & MASK64)


def extend_key(key: int, stream_id: int) -> int:
    return mix64((int(key) + GOLDEN + int(stream_id)) & MASK64)


def derive_key(seed: int, *stream_ids: int) -> int:
    """Key for a (seed, id_0, id_1, ...) stream. Pure, order-sensitive."""
    key = seed_root(seed)
    for sid in stream_ids:
        key = extend_key(key, sid)
    return key


def _mix_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def uniforms(key: int, start: int, n: int) -> np.ndarray:
    """n uniforms in (0, 1] at stream indices start..start+n-1."""
    idx = np.arange(start, start + n, dtype=np.uint64)
    bits = _mix_array(np.uint64(key) + (idx + np.uint64(1)) * np.uint64(GOLDEN))
    return ((bits >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0 ** -53


def normals(key: int, start: int, n: int) -> np.ndarray:
    """n standard normals at stream indices start..start+n-1 (Box-Muller)."""
    idx = np.arange(start, start + n, dtype=np.uint64)
    pair = idx >> np.uint64(1)
    u1 = uniforms_at(key, np.asarray(pair << np.uint64(1), dtype=np.uint64))
    u2 = uniforms_at(key, np.asarray((pair << np.uint64(1)) + np.uint64(1), dtype=np.uint64))
    r = np.sqrt(-2.0 * np.log(u1))
    ang = (2.0 * np.pi) * u2
    return np.where((idx & np.uint64(1)) == 0, r * np.cos(ang), r * np.sin(ang))


def uniforms_at(key: int, idx: np.ndarray) -> np.ndarray:
    """Uniforms in (0, 1] at explicit uint64 stream indices."""
    bits = _mix_array(np.uint64(key) + (idx + np.uint64(1)) * np.uint64(GOLDEN))
    return ((bits >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0 ** -53


def permutation_prefix(key: int, n: int, size: int) -> np.ndarray:
    """First `size` entries of a seeded permutation of range(n), sorted.

    Used for distinct minibatch index draws; argsort of counter uniforms is a
    uniformly random permutation because the uniforms are i.i.d. and ties have
    probability ~0.
    """
    if not (1 <= size <= n):
        raise ValueError(f"need 1 <= size <= n, got size={size} n={n}")
    u = uniforms(key, 0, n)
    return np.sort(np.argsort(u, kind="stable")[:size])


@dataclass(frozen=True)
class RngStream:
    """Named handle over the (seed, path, step) splitting rule."""

    seed: int

    def key(self, *stream_ids: int) -> int:
        return derive_key(self.seed, *stream_ids)

    def path_step_normals(self, stream: int, path: int, step: int, n: int) -> np.ndarray:
        return normals(derive_key(self.seed, stream, path, step), 0, n)
