"""Control objectives and gradient estimators for drift training.

The loss per simulated path is

    (1/2g) sum_j ||u_j||^2 dt  +  sqrt(dt) sum_j u_j . xi_j
        - ln[ p(X|T_k) p(T_k) / N(T_k | 0, g I) ]

with g the diffusion scale, u_j the drift at step j, xi_j the standard
normal step noise, and T_k the terminal state. Its minimum over drifts is
-ln Z, the negative log marginal likelihood. Gradients are exact
reverse-mode through the Euler-Maruyama recursion (pathwise; no
score-function terms).

Two estimators are exposed. "relative_entropy" differentiates everything.
"stl" detaches the direct weight-dependence of the drift inside the
stochastic-integral term while keeping its dependence through the visited
states; at the optimal drift its gradient variance vanishes as dt -> 0.

The stochastic-integral term is mean zero and is included by default; it
can be dropped (include_ito=False) which changes gradient variance but not
the objective's expectation.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .drifts import Drift, PerturbedDrift
from .errors import ConfigError, NumericError
from .kernels import noise_tensor
from .optim import Adam
from .rng import (
    STREAM_BATCH,
    STREAM_EM_NOISE,
    derive_key,
    extend_key,
    permutation_prefix,
    seed_root,
)
from .samples import SampleSet
from .sde import em_integrate

LOG_DENSITY_FLOOR = -1e10

ESTIMATORS = ("relative_entropy", "stl")


@dataclass
class ObjectiveEstimate:
    value: float
    gradient: np.ndarray
    estimator: str
    batch_info: dict
    value_paths: np.ndarray = field(repr=False, default=None)


def _validate_common(drift, model, S, k, gamma, estimator):
    if not isinstance(S, (int, np.integer)) or S < 1:
        raise ConfigError(f"S must be a positive integer, got {S}")
    if not isinstance(k, (int, np.integer)) or k < 1:
        raise ConfigError(f"k must be a positive integer, got {k}")
    if not (gamma > 0):
        raise ConfigError(f"gamma must be positive, got {gamma}")
    if estimator not in ESTIMATORS:
        raise ConfigError(f"estimator must be one of {ESTIMATORS}")
    if drift.d != model.dim:
        raise ConfigError(
            f"drift dimension {drift.d} != model dimension {model.dim}")


def _degenerate_terminal(logdens, X):
    bad = ~np.isfinite(logdens) | (logdens < LOG_DENSITY_FLOOR)
    if np.any(bad):
        s = int(np.argmax(bad))
        err = NumericError(
            f"terminal log-density degenerate at path {s}: "
            f"logdens={logdens[s]!r}, theta={X[s]!r}")
        err.terminal = X[s].copy()
        raise err


def _objective_core(drift, model, S, k, gamma, seed, estimator, idx, coeff,
                    reference, include_ito):
    """Forward EM simulation plus exact adjoint sweep; returns the per-path
    values, the mean weight gradient, and the terminal states."""
    d = drift.d
    dt = 1.0 / k
    sq_dt = np.sqrt(dt)
    sig = np.sqrt(gamma * dt)
    noise = noise_tensor(derive_key(seed, STREAM_EM_NOISE), S, k, d)

    X = np.zeros((S, d))
    A = np.zeros(S)
    ito = np.zeros(S)
    steps = []
    for j in range(k):
        t = j * dt
        U, tape = drift.forward_train(t, X)
        if not np.all(np.isfinite(U)):
            raise NumericError(f"non-finite drift value at step {j}")
        if reference is not None:
            U0, tape0 = reference.forward_train(t, X)
            R = U - U0
        else:
            tape0 = None
            R = U
        xi = noise[:, j, :]
        A += (0.5 * dt / gamma) * np.einsum("sd,sd->s", R, R)
        if include_ito:
            ito += sq_dt * np.einsum("sd,sd->s", R, xi)
        steps.append((tape, tape0, R))
        X = X + U * dt + sig * xi

    ll = model.log_lik_sum_batch(X, idx)
    gll = model.grad_log_lik_sum_batch(X, idx)
    if reference is None:
        lp = model.log_prior_batch(X)
        _degenerate_terminal(lp + coeff * ll, X)
        T = (-(lp + coeff * ll)
             - 0.5 * np.einsum("sd,sd->s", X, X) / gamma
             - 0.5 * d * np.log(2.0 * np.pi * gamma))
        lam = -(model.grad_log_prior_batch(X) + coeff * gll) - X / gamma
    else:
        _degenerate_terminal(coeff * ll, X)
        T = -coeff * ll
        lam = -coeff * gll

    value_paths = A + ito + T

    gw = np.zeros(drift.n_weights)
    for j in range(k - 1, -1, -1):
        tape, tape0, R = steps[j]
        xi = noise[:, j, :]
        base = (dt / gamma) * R
        ito_up = sq_dt * xi if include_ito else 0.0
        Gx = base + lam * dt + ito_up
        if estimator == "stl" and include_ito:
            # weight path drops the stochastic-integral upstream
            gw_j, _ = drift.backward(tape, base + lam * dt,
                                     need_weight_grad=True,
                                     need_input_grad=False)
            _, gx = drift.backward(tape, Gx, need_weight_grad=False,
                                   need_input_grad=True)
        else:
            gw_j, gx = drift.backward(tape, Gx, need_weight_grad=True,
                                      need_input_grad=True)
        new_lam = lam + gx
        if reference is not None:
            _, gx0 = reference.backward(tape0, -(base + ito_up),
                                        need_weight_grad=False,
                                        need_input_grad=True)
            new_lam = new_lam + gx0
        gw += gw_j
        lam = new_lam

    return value_paths, gw / S, X


def _wrap(value_paths, grad, estimator, B, N, S):
    return ObjectiveEstimate(
        value=float(value_paths.mean()),
        gradient=grad,
        estimator=estimator,
        batch_info={"B": int(B), "N": int(N), "S": int(S)},
        value_paths=value_paths,
    )


def objective_full(drift: Drift, model, S: int, k: int, gamma: float,
                   seed: int, estimator: str = "relative_entropy",
                   include_ito: bool = True) -> ObjectiveEstimate:
    """Full-data objective and its exact pathwise weight gradient."""
    _validate_common(drift, model, S, k, gamma, estimator)
    idx = model.all_indices()
    vp, g, _ = _objective_core(drift, model, S, k, gamma, seed, estimator,
                               idx, 1.0, None, include_ito)
    return _wrap(vp, g, estimator, model.N, model.N, S)


def objective_minibatch(drift: Drift, model, S: int, k: int, gamma: float,
                        seed: int, batch, estimator: str = "relative_entropy",
                        include_ito: bool = True) -> ObjectiveEstimate:
    """Objective with the likelihood term estimated from a data subsample,
    rescaled by N/B; unbiased over uniform batches."""
    _validate_common(drift, model, S, k, gamma, estimator)
    idx = np.asarray(batch, dtype=np.int64).reshape(-1)
    B = idx.size
    if B < 1 or B > model.N:
        raise ConfigError(f"batch size {B} outside 1..{model.N}")
    if np.unique(idx).size != B:
        raise ConfigError("batch indices must be distinct")
    if idx.min() < 0 or idx.max() >= model.N:
        raise ConfigError("batch indices out of range")
    coeff = model.N / B
    vp, g, _ = _objective_core(drift, model, S, k, gamma, seed, estimator,
                               idx, coeff, None, include_ito)
    return _wrap(vp, g, estimator, B, model.N, S)


def objective_reference_drift(drift: Drift, model, reference: Drift, S: int,
                              k: int, gamma: float, seed: int,
                              estimator: str = "relative_entropy",
                              include_ito: bool = True) -> ObjectiveEstimate:
    """Objective measured against a fixed reference drift: running cost and
    stochastic-integral term use (u - u0) and the terminal term keeps only
    the data log-likelihood. With u0 the exact zero-data drift of the prior,
    the optimum is again -ln Z."""
    _validate_common(drift, model, S, k, gamma, estimator)
    if reference.d != drift.d:
        raise ConfigError("reference drift dimension mismatch")
    idx = model.all_indices()
    vp, g, _ = _objective_core(drift, model, S, k, gamma, seed, estimator,
                               idx, 1.0, reference, include_ito)
    return _wrap(vp, g, estimator, model.N, model.N, S)


def estimator_variance_probe(drift: Drift, model, S: int, k: int,
                             gamma: float, seeds) -> dict:
    """Gradient spread of both estimators on common noise, seed by seed.

    A weightless drift (an analytic optimum) is wrapped in a 4-feature
    perturbation family so there is a weight gradient to measure; the
    wrapper's weights start at zero, leaving the drift values unchanged.
    """
    if drift.n_weights == 0:
        if drift.d != 1:
            raise ConfigError(
                "variance probe needs a parametrized drift when d > 1")
        drift = PerturbedDrift(drift)
    grads = {name: [] for name in ESTIMATORS}
    for s in seeds:
        for name in ESTIMATORS:
            est = objective_full(drift, model, S, k, gamma, int(s),
                                 estimator=name)
            grads[name].append(est.gradient)
    out = {}
    var = {}
    for name in ESTIMATORS:
        G = np.array(grads[name])
        out[f"{name}_gradients"] = G
        out[f"{name}_grad_norms"] = np.linalg.norm(G, axis=1)
        var[name] = float(((G - G.mean(axis=0)) ** 2).sum(axis=1).mean())
    out["relative_entropy_grad_variance"] = var["relative_entropy"]
    out["stl_grad_variance"] = var["stl"]
    out["variance_ratio"] = var["stl"] / var["relative_entropy"]
    return out


def decoupled_drift_forward(comp, t: float, state: np.ndarray) -> np.ndarray:
    """Evaluate a decoupled (global + shared per-datum) drift composition."""
    return comp.forward_eval(t, np.atleast_2d(state))


def train_nsfs(drift: Drift, model, iterations: int, S: int, k: int,
               gamma: float, seed: int, batch_size: int | None = None,
               estimator: str = "stl", include_ito: bool = True,
               reference: Drift | None = None, lr: float = 1e-3,
               callback=None) -> dict:
    """Adam loop over the chosen objective; fresh noise and fresh batch per
    iteration, both reproducible from the seed. Returns the loss curve."""
    if drift.n_weights == 0:
        raise ConfigError("cannot train a drift with no weights")
    if reference is not None and batch_size is not None:
        raise ConfigError("reference-drift training uses the full dataset")
    if batch_size is not None and not 1 <= batch_size <= model.N:
        raise ConfigError(f"batch size {batch_size} outside 1..{model.N}")
    opt = Adam(drift.n_weights, lr=lr)
    w = drift.get_weights()
    root = seed_root(seed)
    history = []
    t0 = time.time()
    for i in range(iterations):
        it_seed = int(extend_key(root, 7_000_003 + i))
        try:
            if batch_size is not None and batch_size < model.N:
                bkey = derive_key(seed, STREAM_BATCH, i + 1)
                idx = permutation_prefix(bkey, model.N, batch_size)
                est = objective_minibatch(drift, model, S, k, gamma, it_seed,
                                          idx, estimator, include_ito)
            elif reference is not None:
                est = objective_reference_drift(drift, model, reference, S, k,
                                                gamma, it_seed, estimator,
                                                include_ito)
            else:
                est = objective_full(drift, model, S, k, gamma, it_seed,
                                     estimator, include_ito)
        except NumericError as e:
            raise NumericError(f"iteration {i}: {e}") from e
        opt.step(w, est.gradient)
        drift.set_weights(w)
        history.append({
            "iteration": i,
            "value": est.value,
            "grad_norm": float(np.linalg.norm(est.gradient)),
        })
        if callback is not None:
            callback(i, est)
    return {"history": history, "wall_time": time.time() - t0}


def nsfs_sample(drift: Drift, S: int, k: int, gamma: float,
                seed: int) -> SampleSet:
    """Terminal states of the controlled SDE under a trained drift."""
    t0 = time.time()
    traj = em_integrate(lambda j, t, X: drift.forward_eval(t, X), S, k,
                        gamma, seed, drift.d, record_noise=False,
                        record_drift=False, record_states=False)
    return SampleSet(traj.terminal.copy(), meta={
        "method": "nsfs",
        "seed": int(seed),
        "gamma": float(gamma),
        "k": int(k),
        "S": int(S),
        "wall_time": time.time() - t0,
    })
