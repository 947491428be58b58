"""Drift parametrizations for the controlled SDE.

A Drift exposes a taped train-mode forward and a VJP-style backward so the
training objectives can run exact reverse mode through the whole simulation.
forward_eval is the deterministic variant used for sampling. All drifts share
the calling convention u = drift(t, X) with X of shape (S, d).

Network-backed drifts normalize hidden activations over the simulated
ensemble by default when sampling (sample_stats="batch"), reproducing the
statistics the weights were trained under; batch normalization makes the
per-step time input batch-constant, so the stored running statistics never
calibrate it and a running-stat forward would inject the untrained time
column. The running-stat mode stays available via sample_stats="running"
and is the automatic fallback for single-row queries, where an ensemble
does not exist. Neither mode mutates the stored running statistics.
"""

from __future__ import annotations

import numpy as np

from .errors import StateError
from .nn import MLP

__all__ = [
    "Drift", "ZeroDrift", "AnalyticDrift", "GaussianTargetDrift",
    "PerturbedDrift", "NetDrift", "DecoupledDrift", "as_step_fn",
]


class Drift:
    """Interface: d, n_weights, weights view, taped forward, backward."""

    d: int
    n_weights: int = 0

    @property
    def weights(self) -> np.ndarray:
        return np.zeros(0)

    def get_weights(self) -> np.ndarray:
        return self.weights.copy()

    def set_weights(self, w: np.ndarray) -> None:
        if self.n_weights == 0 and w.size == 0:
            return
        raise StateError("drift has no writable weights")

    def forward_train(self, t: float, X: np.ndarray):
        raise NotImplementedError

    def forward_eval(self, t: float, X: np.ndarray) -> np.ndarray:
        U, _ = self.forward_train(t, X)
        return U

    def backward(self, tape, G: np.ndarray,
                 need_weight_grad: bool = True, need_input_grad: bool = True):
        """VJP of one taped forward. Returns (weight grad, input grad)."""
        raise NotImplementedError


class ZeroDrift(Drift):
    def __init__(self, d: int):
        self.d = d

    def forward_train(self, t, X):
        return np.zeros_like(X), None

    def backward(self, tape, G, need_weight_grad=True, need_input_grad=True):
        gw = np.zeros(0) if need_weight_grad else None
        gx = np.zeros_like(G) if need_input_grad else None
        return gw, gx


class AnalyticDrift(Drift):
    """Weightless drift from a closed-form map u(t, x).

    fn_dx(t, X) must return the elementwise Jacobian diagonal du_i/dx_i when
    state gradients are needed (sufficient for the separable closed forms this
    package uses); omit it for simulation-only use.
    """

    def __init__(self, d: int, fn, fn_dx=None):
        self.d = d
        self.fn = fn
        self.fn_dx = fn_dx

    def forward_train(self, t, X):
        return np.asarray(self.fn(t, X), dtype=np.float64), (t, X)

    def backward(self, tape, G, need_weight_grad=True, need_input_grad=True):
        gw = np.zeros(0) if need_weight_grad else None
        gx = None
        if need_input_grad:
            if self.fn_dx is None:
                raise StateError("analytic drift has no state derivative")
            t, X = tape
            gx = G * np.asarray(self.fn_dx(t, X), dtype=np.float64)
        return gw, gx


class GaussianTargetDrift(AnalyticDrift):
    """Exact optimal drift for a 1D Gaussian target N(mu, var) at diffusion
    coefficient gamma: affine in x with coefficients depending on t through
    c(t) = t + (1 - t) * gamma / var. At t=1 it reduces to
    gamma * grad log(target/reference) evaluated pointwise."""

    def __init__(self, mu: float, var: float, gamma: float):
        self.mu = float(mu)
        self.var = float(var)
        self.gamma = float(gamma)
        super().__init__(1, self._u, self._du_dx)

    def _coeffs(self, t: float):
        c = t + (1.0 - t) * self.gamma / self.var
        a = self.gamma * self.mu / (self.var * c)
        b = (self.var - self.gamma) / (self.var * c)
        return a, b

    def _u(self, t, X):
        a, b = self._coeffs(t)
        return a + b * X

    def _du_dx(self, t, X):
        _, b = self._coeffs(t)
        return np.full_like(X, b)


class PerturbedDrift(Drift):
    """base(t, x) + sum_i w_i * psi_i(t, x) with psi = (1, x, t, x*t).

    The weights parametrize smooth perturbations around a fixed base drift;
    gradients with respect to them at w = 0 probe estimator variance at the
    base. 1D only.
    """

    N_FEATURES = 4

    def __init__(self, base: Drift, weights: np.ndarray | None = None):
        if base.d != 1:
            raise StateError("perturbation features are 1D")
        self.d = 1
        self.base = base
        self.n_weights = self.N_FEATURES
        self._w = np.zeros(self.N_FEATURES) if weights is None else \
            np.asarray(weights, dtype=np.float64).copy()

    @property
    def weights(self) -> np.ndarray:
        return self._w

    def set_weights(self, w: np.ndarray) -> None:
        self._w[:] = w

    @staticmethod
    def _features(t: float, X: np.ndarray) -> np.ndarray:
        ones = np.ones_like(X)
        return np.concatenate([ones, X, t * ones, t * X], axis=1)  # (S, 4)

    def forward_train(self, t, X):
        U_base, base_tape = self.base.forward_train(t, X)
        F = self._features(t, X)
        U = U_base + (F @ self._w)[:, None]
        return U, (base_tape, F, t)

    def backward(self, tape, G, need_weight_grad=True, need_input_grad=True):
        base_tape, F, t = tape
        gw = F.T @ G[:, 0] if need_weight_grad else None
        gx = None
        if need_input_grad:
            _, gx = self.base.backward(base_tape, G, need_weight_grad=False)
            gx = gx + G * (self._w[1] + self._w[3] * t)
        return gw, gx


SAMPLE_STATS = ("batch", "running")


def _check_sample_stats(mode: str) -> str:
    if mode not in SAMPLE_STATS:
        raise StateError(f"sample_stats must be one of {SAMPLE_STATS}, got {mode!r}")
    return mode


class NetDrift(Drift):
    """MLP drift on the concatenated input (theta, t)."""

    def __init__(self, net: MLP, train: bool = True, sample_stats: str = "batch"):
        if net.in_dim != net.out_dim + 1:
            raise StateError(
                f"drift net must map (d+1) -> d, got {net.in_dim} -> {net.out_dim}")
        self.net = net
        self.d = net.out_dim
        self.n_weights = net.n_params
        self.train = train
        self.sample_stats = _check_sample_stats(sample_stats)

    @property
    def weights(self) -> np.ndarray:
        return self.net.params

    def set_weights(self, w: np.ndarray) -> None:
        self.net.params[:] = w

    def _inputs(self, t, X):
        return np.concatenate([X, np.full((X.shape[0], 1), t)], axis=1)

    def forward_train(self, t, X):
        U, tape = self.net.forward(self._inputs(t, X), train=self.train)
        return U, tape

    def forward_eval(self, t, X):
        inp = self._inputs(t, X)
        if self.sample_stats == "batch" and X.shape[0] >= 2:
            U, _ = self.net.forward(inp, train=True, update_stats=False)
        else:
            U, _ = self.net.forward(inp, train=False)
        return U

    def backward(self, tape, G, need_weight_grad=True, need_input_grad=True):
        gw, gin = self.net.backward(tape, G, need_weight_grad=need_weight_grad,
                                    need_input_grad=need_input_grad)
        gx = gin[:, : self.d] if need_input_grad else None
        return gw, gx


class DecoupledDrift(Drift):
    """Local/global drift for hierarchical states (Phi, theta_1..theta_N).

    The global slice moves by u_g(Phi, t); every local slice by a shared
    network u_l(theta_i, Phi, x_i, t). All N per-datum slices are evaluated
    in one stacked (S*N)-row forward: weight sharing plus union statistics
    make the map equivariant under datum permutations, and the datum column
    x_i varies within the stacked batch, so batch normalization calibrates
    it instead of erasing it (per-datum forwards would make x_i
    batch-constant, zeroing its gradient exactly like the time column's).
    """

    def __init__(self, global_net: MLP, local_net: MLP, data: np.ndarray,
                 d_phi: int = 1, d_theta: int = 1, train: bool = True,
                 sample_stats: str = "batch"):
        data = np.asarray(data, dtype=np.float64)
        if data.ndim == 1:
            data = data[:, None]
        self.N = data.shape[0]
        self.m = data.shape[1]
        self.d_phi = d_phi
        self.d_theta = d_theta
        self.d = d_phi + self.N * d_theta
        if global_net.in_dim != d_phi + 1 or global_net.out_dim != d_phi:
            raise StateError("global net must map (d_phi+1) -> d_phi")
        want_in = d_theta + d_phi + self.m + 1
        if local_net.in_dim != want_in or local_net.out_dim != d_theta:
            raise StateError(f"local net must map {want_in} -> {d_theta}")
        self.global_net = global_net
        self.local_net = local_net
        self.data = data
        self.n_weights = global_net.n_params + local_net.n_params
        self.train = train
        self.sample_stats = _check_sample_stats(sample_stats)

    @property
    def weights(self) -> np.ndarray:
        # a concatenated *copy*; training writes back through set_weights
        return np.concatenate([self.global_net.params, self.local_net.params])

    def set_weights(self, w: np.ndarray) -> None:
        ng = self.global_net.n_params
        self.global_net.params[:] = w[:ng]
        self.local_net.params[:] = w[ng:]

    def _split(self, X):
        phi = X[:, : self.d_phi]
        thetas = X[:, self.d_phi:]
        return phi, thetas

    def _local_inputs(self, t, X):
        """Stacked (N*S, d_theta + d_phi + m + 1) rows, datum-major."""
        S = X.shape[0]
        phi, thetas = self._split(X)
        th = thetas.reshape(S, self.N, self.d_theta).transpose(1, 0, 2)
        cols = np.empty((self.N, S, self.local_net.in_dim))
        cols[:, :, : self.d_theta] = th
        cols[:, :, self.d_theta: self.d_theta + self.d_phi] = phi[None, :, :]
        cols[:, :, self.d_theta + self.d_phi: -1] = self.data[:, None, :]
        cols[:, :, -1] = t
        return cols.reshape(self.N * S, self.local_net.in_dim)

    def _assemble(self, t, X, train, update_stats):
        S = X.shape[0]
        phi, _ = self._split(X)
        tcol = np.full((S, 1), t)
        U = np.empty_like(X)
        g_in = np.concatenate([phi, tcol], axis=1)
        Ug, g_tape = self.global_net.forward(g_in, train, update_stats)
        U[:, : self.d_phi] = Ug
        Ul, l_tape = self.local_net.forward(self._local_inputs(t, X), train,
                                            update_stats)
        U[:, self.d_phi:] = Ul.reshape(self.N, S, self.d_theta) \
            .transpose(1, 0, 2).reshape(S, self.N * self.d_theta)
        return U, (g_tape, l_tape, S)

    def forward_train(self, t, X):
        return self._assemble(t, X, self.train, None)

    def forward_eval(self, t, X):
        use_batch = self.sample_stats == "batch" and X.shape[0] >= 2
        U, _ = self._assemble(t, X, use_batch, False)
        return U

    def backward(self, tape, G, need_weight_grad=True, need_input_grad=True):
        g_tape, l_tape, S = tape
        ng = self.global_net.n_params
        gw = np.zeros(self.n_weights) if need_weight_grad else None
        gx = np.zeros_like(G) if need_input_grad else None

        gwg, ging = self.global_net.backward(
            g_tape, G[:, : self.d_phi],
            need_weight_grad=need_weight_grad, need_input_grad=need_input_grad)
        if need_weight_grad:
            gw[:ng] = gwg
        if need_input_grad:
            gx[:, : self.d_phi] += ging[:, : self.d_phi]

        Gl = G[:, self.d_phi:].reshape(S, self.N, self.d_theta) \
            .transpose(1, 0, 2).reshape(self.N * S, self.d_theta)
        gwl, ginl = self.local_net.backward(
            l_tape, Gl, need_weight_grad=need_weight_grad,
            need_input_grad=need_input_grad)
        if need_weight_grad:
            gw[ng:] = gwl
        if need_input_grad:
            per = ginl.reshape(self.N, S, self.local_net.in_dim)
            gth = per[:, :, : self.d_theta].transpose(1, 0, 2)
            gx[:, self.d_phi:] += gth.reshape(S, self.N * self.d_theta)
            gx[:, : self.d_phi] += per[:, :, self.d_theta:
                                       self.d_theta + self.d_phi].sum(axis=0)
        return gw, gx


def as_step_fn(drift: Drift, train: bool = False):
    """Adapt a Drift to the em_integrate calling convention."""
    if train:
        def fn(j, t, X):
            U, _ = drift.forward_train(t, X)
            return U
    else:
        def fn(j, t, X):
            return drift.forward_eval(t, X)
    return fn
