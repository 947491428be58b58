"""Euler-Maruyama simulation of dX = u(t, X) dt + sqrt(gamma) dB from X_0 = 0.

Noise comes from the counter RNG keyed by (seed, path, step), so a batch is
reproducible for any chunking (path_offset) and any thread count. The linear
covariance oracle integrates the matrix ODE solution by Gauss-Legendre
quadrature; it exists for tests and is not on the hot path.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .errors import ConfigError, NumericError, StateError
from .kernels import noise_tensor
from .rng import STREAM_EM_NOISE, derive_key


@dataclass(frozen=True)
class TrajectoryBatch:
    """States on the uniform grid t_j = j/k plus the noise that produced them.

    states[s, j+1] = states[s, j] + drift_values[s, j]*dt + sqrt(gamma*dt)*noises[s, j]
    holds bit-exactly when drift_values are retained.
    """

    S: int
    k: int
    dt: float
    gamma: float
    seed: int
    states: np.ndarray          # (S, k+1, d)
    noises: np.ndarray | None   # (S, k, d)
    drift_values: np.ndarray | None  # (S, k, d)

    @property
    def d(self) -> int:
        return self.states.shape[2]

    @property
    def terminal(self) -> np.ndarray:
        # states has k+1 slices normally, 2 when only endpoints were kept
        return self.states[:, -1, :]


def _freeze(a: np.ndarray | None) -> np.ndarray | None:
    if a is not None:
        a.setflags(write=False)
    return a


def em_integrate(drift_fn, S: int, k: int, gamma: float, seed: int, d: int,
                 record_noise: bool = True, record_drift: bool = True,
                 record_states: bool = True, path_offset: int = 0,
                 noises: np.ndarray | None = None) -> TrajectoryBatch:
    """Simulate S paths over k uniform steps on [0, 1].

    drift_fn(j, t, X) receives the step index, the left grid time, and the
    (S, d) state block, and returns the (S, d) drift. Passing `noises`
    overrides the stream draws (used by refinement tests); its shape must be
    (S, k, d). With record_states=False only the terminal slice is kept (the
    states array then has shape (S, 2, d): initial and terminal).
    """
    if S < 1 or k < 1:
        raise ConfigError(f"need S >= 1 and k >= 1, got S={S} k={k}")
    if gamma <= 0:
        raise ConfigError(f"gamma must be positive, got {gamma}")
    dt = 1.0 / k
    if noises is None:
        noises = noise_tensor(derive_key(seed, STREAM_EM_NOISE), S, k, d, path_offset)
    else:
        noises = np.asarray(noises, dtype=np.float64)
        if noises.shape != (S, k, d):
            raise ConfigError(f"noises shape {noises.shape} != {(S, k, d)}")
    sig = np.sqrt(gamma * dt)

    X = np.zeros((S, d), dtype=np.float64)
    states = np.zeros((S, k + 1 if record_states else 2, d), dtype=np.float64)
    drifts = np.empty((S, k, d), dtype=np.float64) if record_drift else None
    for j in range(k):
        U = np.asarray(drift_fn(j, j * dt, X), dtype=np.float64)
        if U.shape != (S, d):
            raise StateError(f"drift returned shape {U.shape}, expected {(S, d)}")
        if not np.all(np.isfinite(U)):
            bad = np.argwhere(~np.isfinite(U))[0]
            raise NumericError(
                f"non-finite drift at path {int(bad[0]) + path_offset}, step {j}")
        if record_drift:
            drifts[:, j, :] = U
        X = X + U * dt + sig * noises[:, j, :]
        if record_states:
            states[:, j + 1, :] = X
    if not record_states:
        states[:, 1, :] = X

    return TrajectoryBatch(
        S=S, k=k, dt=dt, gamma=gamma, seed=seed,
        states=_freeze(states),
        noises=_freeze(noises if record_noise else None),
        drift_values=_freeze(drifts),
    )


def replay(traj: TrajectoryBatch, drift_fn) -> TrajectoryBatch:
    """Re-walk the stored noise under a (possibly different) drift."""
    if traj.noises is None:
        raise StateError("replay needs a TrajectoryBatch with retained noises")
    return em_integrate(drift_fn, traj.S, traj.k, traj.gamma, traj.seed,
                        traj.d, noises=np.array(traj.noises))


def linear_sde_covariance(A: np.ndarray, gamma: float, t: float,
                          n_nodes: int = 96) -> np.ndarray:
    """Covariance of X_t for dX = A X dt + sqrt(gamma) dB, X_0 = 0.

    Cov(X_t) = gamma * int_0^t exp(A s) exp(A^T s) ds, by the variation-of-
    constants representation; evaluated with Gauss-Legendre quadrature.
    """
    if not 0.0 <= t <= 1.0:
        raise ConfigError(f"t must lie in [0, 1], got {t}")
    A = np.asarray(A, dtype=np.float64)
    d = A.shape[0]
    if A.shape != (d, d):
        raise ConfigError(f"A must be square, got {A.shape}")
    if t == 0.0:
        return np.zeros((d, d))
    nodes, weights = np.polynomial.legendre.leggauss(n_nodes)
    s = 0.5 * t * (nodes + 1.0)
    w = 0.5 * t * weights
    out = np.zeros((d, d))
    for si, wi in zip(s, w):
        E = expm(A * si)
        out += wi * (E @ E.T)
    out *= gamma
    return 0.5 * (out + out.T)


def dump_trajectories(traj: TrajectoryBatch, csv_path: str) -> None:
    """CSV (path, step, t, dim, value) plus a JSON sidecar with run metadata."""
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path", "step", "t", "dim", "value"])
        for s in range(traj.S):
            for j in range(traj.states.shape[1]):
                for dim in range(traj.d):
                    w.writerow([s, j, j * traj.dt, dim,
                                repr(float(traj.states[s, j, dim]))])
    with open(csv_path + ".json", "w") as fh:
        json.dump({"seed": traj.seed, "S": traj.S, "k": traj.k,
                   "gamma": traj.gamma}, fh, indent=1)
