"""EM integrator: replay identity, marginals, refinement order, covariance oracle."""

import numpy as np
import pytest
from scipy.linalg import expm

from follmer.errors import ConfigError, NumericError, StateError
from follmer.kernels import noise_tensor
from follmer.rng import STREAM_EM_NOISE, derive_key
from follmer.sde import (
    TrajectoryBatch,
    dump_trajectories,
    em_integrate,
    linear_sde_covariance,
    replay,
)


def zero_drift(j, t, X):
    return np.zeros_like(X)


def test_single_pure_noise_step():
    traj = em_integrate(zero_drift, S=16, k=1, gamma=1.0, seed=4, d=2)
    xi = noise_tensor(derive_key(4, STREAM_EM_NOISE), 16, 1, 2)
    assert np.array_equal(traj.terminal, xi[:, 0, :])
    assert np.all(traj.states[:, 0, :] == 0.0)


def test_noise_free_constant_drift():
    c = np.array([0.7, -1.2])
    traj = em_integrate(lambda j, t, X: np.broadcast_to(c, X.shape), S=3, k=17,
                        gamma=1e-300, seed=0, d=2)
    # gamma -> 0 limit: deterministic Euler of dX = c dt
    assert np.allclose(traj.terminal, c, atol=1e-12)


def test_replay_identity_and_zero_drift_replay():
    def drift(j, t, X):
        return np.sin(X) + t
    traj = em_integrate(drift, S=5, k=9, gamma=0.5, seed=8, d=3)
    again = replay(traj, drift)
    assert np.array_equal(traj.states, again.states)
    zeroed = replay(traj, zero_drift)
    want = np.sqrt(0.5 / 9) * np.cumsum(traj.noises, axis=1)
    assert np.allclose(zeroed.states[:, 1:, :], want, rtol=0, atol=1e-15)


def test_replay_requires_noise():
    traj = em_integrate(zero_drift, S=2, k=2, gamma=1.0, seed=1, d=1,
                        record_noise=False)
    with pytest.raises(StateError):
        replay(traj, zero_drift)


def test_replay_identity_is_bit_exact():
    # the documented recursion on retained arrays
    def drift(j, t, X):
        return -0.5 * X + np.cos(3 * t)
    traj = em_integrate(drift, S=4, k=25, gamma=0.3, seed=2, d=2)
    sig = np.sqrt(traj.gamma * traj.dt)
    for j in range(traj.k):
        step = (traj.states[:, j, :] + traj.drift_values[:, j, :] * traj.dt
                + sig * traj.noises[:, j, :])
        assert np.array_equal(traj.states[:, j + 1, :], step)


def test_nonfinite_drift_reports_path_and_step():
    def bad(j, t, X):
        U = np.zeros_like(X)
        if j == 3:
            U[2, 0] = np.inf
        return U
    with pytest.raises(NumericError, match=r"path 2, step 3"):
        em_integrate(bad, S=4, k=5, gamma=1.0, seed=0, d=1)


def test_argument_validation():
    with pytest.raises(ConfigError):
        em_integrate(zero_drift, S=0, k=1, gamma=1.0, seed=0, d=1)
    with pytest.raises(ConfigError):
        em_integrate(zero_drift, S=1, k=1, gamma=-1.0, seed=0, d=1)
    with pytest.raises(ConfigError):
        em_integrate(zero_drift, S=2, k=2, gamma=1.0, seed=0, d=1,
                     noises=np.zeros((2, 3, 1)))


def test_path_offset_chunking():
    full = em_integrate(zero_drift, S=10, k=4, gamma=1.0, seed=3, d=2)
    head = em_integrate(zero_drift, S=6, k=4, gamma=1.0, seed=3, d=2)
    tail = em_integrate(zero_drift, S=4, k=4, gamma=1.0, seed=3, d=2,
                        path_offset=6)
    assert np.array_equal(full.states,
                          np.concatenate([head.states, tail.states], axis=0))


def test_terminal_only_retention():
    def drift(j, t, X):
        return -X
    full = em_integrate(drift, S=3, k=7, gamma=1.0, seed=5, d=2)
    thin = em_integrate(drift, S=3, k=7, gamma=1.0, seed=5, d=2,
                        record_states=False, record_drift=False)
    assert thin.states.shape == (3, 2, 2)
    assert np.array_equal(thin.terminal, full.terminal)


def test_brownian_marginals_zero_drift():
    gamma = 0.8
    traj = em_integrate(zero_drift, S=10_000, k=8, gamma=gamma, seed=11, d=1)
    for j in (2, 5, 8):
        t = j / 8
        v = traj.states[:, j, 0].var()
        se = gamma * t * np.sqrt(2.0 / traj.S)
        assert abs(v - gamma * t) < 3 * se


def test_strong_convergence_sqrt_dt():
    # common Brownian refinement: coarse increment = sum of fine pair / sqrt(2)
    # (kept as standard normals; the sqrt(gamma dt) scaling supplies the rest)
    def drift(j, t, X):
        return np.sin(X) - 0.3 * X

    k_fine = 256
    xi = noise_tensor(derive_key(21, STREAM_EM_NOISE), 400, k_fine, 1)
    sols = {}
    for k in (16, 32, 64, 128, 256):
        ratio = k_fine // k
        agg = xi.reshape(400, k, ratio, 1).sum(axis=2) / np.sqrt(ratio)
        sols[k] = em_integrate(drift, S=400, k=k, gamma=0.6, seed=21, d=1,
                               noises=agg).terminal[:, 0]
    errs = [np.sqrt(np.mean((sols[k] - sols[2 * k]) ** 2))
            for k in (16, 32, 64, 128)]
    for a, b in zip(errs, errs[1:]):
        ratio = a / b
        assert np.sqrt(2) / 2 < ratio < np.sqrt(2) * 2


def test_covariance_oracle_brownian_and_scalar():
    assert np.allclose(linear_sde_covariance(np.zeros((3, 3)), 1.0, 0.37),
                       0.37 * np.eye(3), atol=1e-14)
    lam = -0.9
    got = linear_sde_covariance(lam * np.eye(2), 1.0, 1.0)
    want = (np.exp(2 * lam) - 1) / (2 * lam) * np.eye(2)
    assert np.allclose(got, want, rtol=1e-12)
    assert np.array_equal(linear_sde_covariance(np.eye(2), 2.0, 0.0),
                          np.zeros((2, 2)))


def test_covariance_oracle_gamma_scaling_and_symmetry():
    A = np.array([[2.0, 0, 0], [2, 1, 0], [3, 0, 1]])
    s1 = linear_sde_covariance(A, 1.0, 1.0)
    s3 = linear_sde_covariance(A, 3.0, 1.0)
    assert np.allclose(s3, 3 * s1, rtol=1e-13)
    assert np.array_equal(s1, s1.T)
    ev = np.linalg.eigvalsh(s1)
    assert ev.min() > 0


def test_covariance_oracle_vs_riemann():
    # independent cross-check with a dumb fine Riemann sum
    A = np.array([[0.5, -1.0], [0.3, -0.2]])
    t, gamma = 0.8, 0.7
    acc = np.zeros((2, 2))
    grid = (np.arange(2000) + 0.5) * (t / 2000)
    for si in grid:
        E = expm(A * si)
        acc += E @ E.T
    acc *= gamma * t / 2000
    got = linear_sde_covariance(A, gamma, t)
    assert np.allclose(got, acc, rtol=5e-7)


def test_empirical_covariance_matches_oracle_small():
    # scaled-down version of the dense-coupling check
    A = np.array([[2.0, 0, 0], [2, 1, 0], [3, 0, 1]])
    S = 20_000
    traj = em_integrate(lambda j, t, X: X @ A.T, S=S, k=128, gamma=1.0,
                        seed=13, d=3)
    emp = np.cov(traj.terminal.T)
    want = linear_sde_covariance(A, 1.0, 1.0)
    # EM bias at k=128 is visible, so compare loosely here; the acceptance
    # run uses k=256 and proper MC standard errors
    assert np.allclose(emp, want, rtol=0.12, atol=0.05)
    off = want[np.triu_indices(3, k=1)]
    assert np.all(np.abs(off) > 0)


def test_dump_roundtrip(tmp_path):
    traj = em_integrate(zero_drift, S=2, k=3, gamma=1.0, seed=9, d=2)
    p = tmp_path / "traj.csv"
    dump_trajectories(traj, str(p))
    import csv as csvmod
    import json
    rows = list(csvmod.reader(open(p)))
    assert rows[0] == ["path", "step", "t", "dim", "value"]
    assert len(rows) == 1 + 2 * 4 * 2
    vals = [float(r[4]) for r in rows[1:]]
    assert vals[0] == 0.0
    meta = json.load(open(str(p) + ".json"))
    assert meta == {"seed": 9, "S": 2, "k": 3, "gamma": 1.0}
