"""Bayesian models: log-priors, per-datum log-likelihoods, exact gradients.

Every model works on flat parameter vectors and exposes batched evaluation
over a set of parameter samples (rows of Theta), which is what the control
objectives and the predictive metrics consume. Gradients are exact and are
checked against central finite differences in the test battery.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataFormatError, NumericError
from .rng import STREAM_DATA, derive_key, normals, uniforms

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class Dataset:
    """Dense feature matrix with targets and a train/test split tag per row."""

    features: np.ndarray  # (N, m)
    targets: np.ndarray   # (N,)
    split: np.ndarray     # (N,) array of "train"/"test" tags

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        self.targets = np.asarray(self.targets, dtype=np.float64)
        self.split = np.asarray(self.split)
        if self.features.shape[0] != self.targets.shape[0]:
            raise DataFormatError("features and targets disagree on N")
        if self.split.shape[0] != self.targets.shape[0]:
            raise DataFormatError("split tags must cover every row")

    def part(self, tag: str):
        m = self.split == tag
        return self.features[m], self.targets[m]

    @property
    def train(self):
        return self.part("train")

    @property
    def test(self):
        return self.part("test")


class BayesModel:
    """Interface: dim, N, log densities and gradients, batched over samples."""

    dim: int
    N: int

    # scalar forms (tests, SGLD chains)
    def log_prior(self, theta: np.ndarray) -> float:
        return float(self.log_prior_batch(theta[None, :])[0])

    def grad_log_prior(self, theta: np.ndarray) -> np.ndarray:
        return self.grad_log_prior_batch(theta[None, :])[0]

    def log_lik(self, theta: np.ndarray, i: int) -> float:
        return float(self.log_lik_sum_batch(theta[None, :], np.array([i]))[0])

    def grad_log_lik(self, theta: np.ndarray, i: int) -> np.ndarray:
        return self.grad_log_lik_sum_batch(theta[None, :], np.array([i]))[0]

    def log_likelihood_sum(self, theta: np.ndarray) -> float:
        return float(self.log_lik_sum_batch(theta[None, :], self.all_indices())[0])

    def grad_log_likelihood_sum(self, theta: np.ndarray) -> np.ndarray:
        return self.grad_log_lik_sum_batch(theta[None, :], self.all_indices())[0]

    def all_indices(self) -> np.ndarray:
        return np.arange(self.N)

    # batched forms (objectives); subclasses implement these
    def log_prior_batch(self, Theta: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def grad_log_prior_batch(self, Theta: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def log_lik_sum_batch(self, Theta: np.ndarray, idx: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def grad_log_lik_sum_batch(self, Theta: np.ndarray, idx: np.ndarray) -> np.ndarray:
        raise NotImplementedError


# ---------------------------------------------------------------- conjugate

class ConjugateGaussian(BayesModel):
    """1D Gaussian prior + Gaussian likelihood; closed-form posterior."""

    def __init__(self, prior_mean: float, prior_var: float, noise_var: float,
                 data: np.ndarray):
        if prior_var <= 0 or noise_var <= 0:
            raise ConfigError("variances must be positive")
        self.dim = 1
        self.m0 = float(prior_mean)
        self.v0 = float(prior_var)
        self.nv = float(noise_var)
        self.data = np.asarray(data, dtype=np.float64).reshape(-1)
        self.N = self.data.size
        prec = 1.0 / self.v0 + self.N / self.nv
        self.posterior_var = 1.0 / prec
        self.posterior_mean = self.posterior_var * (
            self.m0 / self.v0 + self.data.sum() / self.nv)

    def posterior_cdf(self, x: np.ndarray) -> np.ndarray:
        from scipy.stats import norm
        return norm.cdf(x, loc=self.posterior_mean,
                        scale=np.sqrt(self.posterior_var))

    def log_prior_batch(self, Theta):
        th = Theta[:, 0]
        return -0.5 * (th - self.m0) ** 2 / self.v0 - 0.5 * (LOG_2PI + np.log(self.v0))

    def grad_log_prior_batch(self, Theta):
        return -(Theta - self.m0) / self.v0

    def log_lik_sum_batch(self, Theta, idx):
        th = Theta[:, 0][:, None]
        y = self.data[idx][None, :]
        ll = -0.5 * (y - th) ** 2 / self.nv - 0.5 * (LOG_2PI + np.log(self.nv))
        return ll.sum(axis=1)

    def grad_log_lik_sum_batch(self, Theta, idx):
        th = Theta[:, 0][:, None]
        y = self.data[idx][None, :]
        return ((y - th) / self.nv).sum(axis=1)[:, None]


def make_conjugate_gaussian(prior_mean: float, prior_var: float,
                            noise_var: float, data) -> ConjugateGaussian:
    return ConjugateGaussian(prior_mean, prior_var, noise_var, np.asarray(data))


def make_conjugate_dataset(n: int, seed: int, true_theta: float = 1.0,
                           noise_sd: float = 1.0) -> np.ndarray:
    z = normals(derive_key(seed, STREAM_DATA, 1), 0, n)
    return true_theta + noise_sd * z


# ------------------------------------------------------------ step dataset

def make_step_dataset(seed: int) -> Dataset:
    """y = 1_{x >= 0} + noise, sd 0.1; 100 train x in (-3.5, 3.5),
    100 test x in (-10, 10)."""
    key_tr = derive_key(seed, STREAM_DATA, 1)
    key_te = derive_key(seed, STREAM_DATA, 2)
    key_ntr = derive_key(seed, STREAM_DATA, 3)
    key_nte = derive_key(seed, STREAM_DATA, 4)
    x_tr = -3.5 + 7.0 * uniforms(key_tr, 0, 100)
    x_te = -10.0 + 20.0 * uniforms(key_te, 0, 100)
    y_tr = (x_tr >= 0).astype(np.float64) + 0.1 * normals(key_ntr, 0, 100)
    y_te = (x_te >= 0).astype(np.float64) + 0.1 * normals(key_nte, 0, 100)
    feats = np.concatenate([x_tr, x_te])[:, None]
    targs = np.concatenate([y_tr, y_te])
    split = np.array(["train"] * 100 + ["test"] * 100)
    return Dataset(feats, targs, split)


# ---------------------------------------------------------------- BNN

class BnnRegression(BayesModel):
    """Feed-forward ReLU regression net whose flat weight vector is the
    sampled parameter; Gaussian prior and observation noise."""

    def __init__(self, widths, prior_sd: float, noise_sd: float,
                 dataset: Dataset):
        widths = tuple(int(w) for w in widths)
        if len(widths) < 2:
            raise ConfigError("need at least input and output widths")
        self.widths = widths
        self.prior_sd = float(prior_sd)
        self.noise_sd = float(noise_sd)
        self.dataset = dataset
        x, y = dataset.train
        self.x = x[:, 0]
        self.y = y
        self.N = self.y.size
        self._shapes = [(widths[i + 1], widths[i]) for i in range(len(widths) - 1)]
        self._offsets = []
        pos = 0
        for out_d, in_d in self._shapes:
            self._offsets.append((pos, pos + out_d * in_d, pos + out_d * in_d + out_d))
            pos += out_d * in_d + out_d
        self.dim = pos

    def _views(self, Theta: np.ndarray):
        S = Theta.shape[0]
        out = []
        for (a, b, c), (o, i) in zip(self._offsets, self._shapes):
            out.append((Theta[:, a:b].reshape(S, o, i), Theta[:, b:c]))
        return out

    def predict_f(self, Theta: np.ndarray, x: np.ndarray) -> np.ndarray:
        """f_theta(x) for each parameter row; returns (S, n)."""
        H, _ = self._forward(Theta, np.asarray(x, dtype=np.float64))
        return H[-1][:, :, 0]

    def _forward(self, Theta, x):
        layers = self._views(Theta)
        S = Theta.shape[0]
        n = x.size
        h = np.broadcast_to(x[None, :, None], (S, n, 1))
        acts = [h]
        for li, (W, b) in enumerate(layers):
            z = h @ W.transpose(0, 2, 1) + b[:, None, :]
            h = np.maximum(z, 0.0) if li < len(layers) - 1 else z
            acts.append(h)
        return acts, layers

    def log_prior_batch(self, Theta):
        v = self.prior_sd ** 2
        return -0.5 * (Theta ** 2).sum(axis=1) / v \
            - 0.5 * self.dim * (LOG_2PI + np.log(v))

    def grad_log_prior_batch(self, Theta):
        return -Theta / self.prior_sd ** 2

    def log_lik_sum_batch(self, Theta, idx):
        f = self.predict_f(Theta, self.x[idx])
        r = self.y[idx][None, :] - f
        v = self.noise_sd ** 2
        return (-0.5 * r ** 2 / v - 0.5 * (LOG_2PI + np.log(v))).sum(axis=1)

    def grad_log_lik_sum_batch(self, Theta, idx):
        x = self.x[idx]
        y = self.y[idx]
        acts, layers = self._forward(Theta, x)
        S = Theta.shape[0]
        v = self.noise_sd ** 2
        up = ((y[None, :] - acts[-1][:, :, 0]) / v)[:, :, None]  # (S, n, 1)
        grad = np.empty((S, self.dim))
        for li in range(len(layers) - 1, -1, -1):
            a, b, c = self._offsets[li]
            W, _ = layers[li]
            h_in = acts[li]
            gW = up.transpose(0, 2, 1) @ h_in          # (S, out, in)
            gb = up.sum(axis=1)                        # (S, out)
            grad[:, a:b] = gW.reshape(S, -1)
            grad[:, b:c] = gb
            if li > 0:
                up = (up @ W) * (acts[li] > 0.0)
        return grad


def make_bnn_regression(widths, prior_sd: float, noise_sd: float,
                        dataset: Dataset) -> BnnRegression:
    return BnnRegression(widths, prior_sd, noise_sd, dataset)


# ---------------------------------------------------------------- logistic

def load_a9a(path: str, n_features: int = 123) -> tuple[np.ndarray, np.ndarray]:
    """Sparse 'label idx:val ...' text (1-based indices) to dense arrays."""
    try:
        fh = open(path)
    except OSError as e:
        raise DataFormatError(f"cannot open dataset file {path}: {e}") from e
    rows, labels = [], []
    with fh:
        for ln, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            try:
                lab = float(parts[0])
                if lab not in (-1.0, 1.0):
                    raise ValueError(f"label {lab} is not +-1")
                row = np.zeros(n_features)
                prev = 0
                for p in parts[1:]:
                    idx_s, val_s = p.split(":")
                    j = int(idx_s)
                    if not 1 <= j <= n_features:
                        raise ValueError(f"feature index {j} out of range")
                    if j <= prev:
                        raise ValueError("feature indices must increase")
                    prev = j
                    row[j - 1] = float(val_s)
            except (ValueError, IndexError) as e:
                raise DataFormatError(f"{path}:{ln}: malformed line: {e}") from e
            rows.append(row)
            labels.append(lab)
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    return np.array(rows), np.array(labels)


class LogisticRegression(BayesModel):
    """Binary logistic likelihood on bias-augmented features, Laplace prior."""

    def __init__(self, prior_scale: float, features: np.ndarray,
                 labels: np.ndarray):
        if prior_scale <= 0:
            raise ConfigError("prior scale must be positive")
        labels = np.asarray(labels, dtype=np.float64)
        if not np.all(np.isin(labels, (-1.0, 1.0))):
            raise DataFormatError("labels must be +-1")
        self.b = float(prior_scale)
        X = np.asarray(features, dtype=np.float64)
        self.X = np.concatenate([X, np.ones((X.shape[0], 1))], axis=1)
        self.y = labels
        self.N = labels.size
        self.dim = self.X.shape[1]

    def log_prior_batch(self, Theta):
        return -np.abs(Theta).sum(axis=1) / self.b \
            - self.dim * np.log(2.0 * self.b)

    def grad_log_prior_batch(self, Theta):
        # subgradient at a kink fixed to 0 via sign(0) = 0
        return -np.sign(Theta) / self.b

    def _margins(self, Theta, idx):
        return (Theta @ self.X[idx].T) * self.y[idx][None, :]  # (S, B)

    def log_lik_sum_batch(self, Theta, idx):
        m = self._margins(Theta, idx)
        return -np.logaddexp(0.0, -m).sum(axis=1)

    def grad_log_lik_sum_batch(self, Theta, idx):
        from scipy.special import expit
        m = self._margins(Theta, idx)
        w = expit(-m) * self.y[idx][None, :]     # (S, B)
        return w @ self.X[idx]

    def prob_positive(self, Theta, features) -> np.ndarray:
        """P(y=+1 | x, theta) rows per sample; features unaugmented."""
        from scipy.special import expit
        X = np.asarray(features, dtype=np.float64)
        Xa = np.concatenate([X, np.ones((X.shape[0], 1))], axis=1)
        return expit(Theta @ Xa.T)


def make_logreg(prior_scale: float, features, labels) -> LogisticRegression:
    return LogisticRegression(prior_scale, features, labels)


# ---------------------------------------------------------------- ICA

class BayesianIca(BayesModel):
    """Square ICA: rows of the unmixing matrix filter the data; sources have
    the logistic-shaped density 1/(4 cosh^2(s/2)). The log|det W| term makes
    the likelihood a proper density in x; include_det=False drops it."""

    def __init__(self, d: int, data: np.ndarray, prior_sd: float = 1.0,
                 include_det: bool = True):
        self.d_side = int(d)
        self.dim = d * d
        self.data = np.atleast_2d(np.asarray(data, dtype=np.float64))
        if self.data.shape[1] != d:
            raise ConfigError(f"data must be (N, {d})")
        self.N = self.data.shape[0]
        self.prior_sd = float(prior_sd)
        self.include_det = include_det

    def log_prior_batch(self, Theta):
        v = self.prior_sd ** 2
        return -0.5 * (Theta ** 2).sum(axis=1) / v \
            - 0.5 * self.dim * (LOG_2PI + np.log(v))

    def grad_log_prior_batch(self, Theta):
        return -Theta / self.prior_sd ** 2

    def _dets(self, W):
        sign, logabs = np.linalg.slogdet(W)
        if np.any(sign == 0) or np.any(logabs < -690.0):
            raise NumericError("unmixing matrix is numerically singular")
        return logabs

    def log_lik_sum_batch(self, Theta, idx):
        d = self.d_side
        S = Theta.shape[0]
        W = Theta.reshape(S, d, d)
        X = self.data[idx]                       # (B, d)
        s = W @ X.T                              # (S, d, B)
        ll = (-np.log(4.0) - 2.0 * np.log(np.cosh(0.5 * s))).sum(axis=(1, 2))
        if self.include_det:
            ll = ll + idx.size * self._dets(W)
        return ll

    def grad_log_lik_sum_batch(self, Theta, idx):
        d = self.d_side
        S = Theta.shape[0]
        W = Theta.reshape(S, d, d)
        X = self.data[idx]
        s = W @ X.T                              # (S, d, B)
        g = -np.tanh(0.5 * s) @ X                # (S, d, d)
        if self.include_det:
            self._dets(W)
            g = g + idx.size * np.linalg.inv(W).transpose(0, 2, 1)
        return g.reshape(S, self.dim)


def make_ica(d: int, data, prior_sd: float = 1.0,
             include_det: bool = True) -> BayesianIca:
    return BayesianIca(d, np.asarray(data), prior_sd, include_det)


def make_ica_synthetic(d: int, N: int, seed: int) -> np.ndarray:
    """Unit-scale Laplace sources mixed through a random well-conditioned
    matrix (orthogonal-diagonal-orthogonal with singular values in [1, 2])."""
    key_u = derive_key(seed, STREAM_DATA, 1)
    key_m = derive_key(seed, STREAM_DATA, 2)
    u = uniforms(key_u, 0, N * d).reshape(N, d) - 0.5
    sources = -np.sign(u) * np.log1p(-2.0 * np.abs(u))
    z = normals(key_m, 0, 2 * d * d + d)
    q1, _ = np.linalg.qr(z[: d * d].reshape(d, d))
    q2, _ = np.linalg.qr(z[d * d: 2 * d * d].reshape(d, d))
    sv = 1.0 + 0.5 * (1.0 + np.tanh(z[2 * d * d:]))  # in (1, 2)
    mixing = q1 @ np.diag(sv) @ q2
    return sources @ mixing.T


# ---------------------------------------------------------------- hierarchical

class HierarchicalGaussian(BayesModel):
    """Global mean with per-datum latents: Phi ~ N(0,1), theta_i ~ N(Phi,1),
    x_i ~ N(theta_i, sigma_x^2). State vector is (Phi, theta_1..theta_N);
    the joint is Gaussian so the posterior oracle is a linear solve."""

    def __init__(self, sigma_x: float, data: np.ndarray):
        if sigma_x <= 0:
            raise ConfigError("sigma_x must be positive")
        self.sigma_x = float(sigma_x)
        self.data = np.asarray(data, dtype=np.float64).reshape(-1)
        self.N = self.data.size
        if self.N < 1:
            raise ConfigError("need at least one datum")
        self.dim = self.N + 1
        n, v = self.N, self.sigma_x ** 2
        P = np.zeros((n + 1, n + 1))
        P[0, 0] = 1.0 + n
        P[0, 1:] = -1.0
        P[1:, 0] = -1.0
        P[np.arange(1, n + 1), np.arange(1, n + 1)] = 1.0 + 1.0 / v
        self.posterior_cov = np.linalg.inv(P)
        rhs = np.concatenate([[0.0], self.data / v])
        self.posterior_mean = self.posterior_cov @ rhs

    def log_prior_batch(self, Theta):
        phi = Theta[:, 0]
        th = Theta[:, 1:]
        return -0.5 * phi ** 2 - 0.5 * ((th - phi[:, None]) ** 2).sum(axis=1) \
            - 0.5 * (self.N + 1) * LOG_2PI

    def grad_log_prior_batch(self, Theta):
        phi = Theta[:, 0]
        th = Theta[:, 1:]
        g = np.empty_like(Theta)
        g[:, 0] = -phi + (th - phi[:, None]).sum(axis=1)
        g[:, 1:] = -(th - phi[:, None])
        return g

    def log_lik_sum_batch(self, Theta, idx):
        v = self.sigma_x ** 2
        th = Theta[:, 1 + idx]
        r = self.data[idx][None, :] - th
        return (-0.5 * r ** 2 / v - 0.5 * (LOG_2PI + np.log(v))).sum(axis=1)

    def grad_log_lik_sum_batch(self, Theta, idx):
        v = self.sigma_x ** 2
        g = np.zeros_like(Theta)
        th = Theta[:, 1 + idx]
        g[:, 1 + idx] = (self.data[idx][None, :] - th) / v
        return g


def make_hierarchical(sigma_x: float, N: int, seed: int) -> HierarchicalGaussian:
    """Data drawn from the generative model itself."""
    z = normals(derive_key(seed, STREAM_DATA, 1), 0, 2 * N + 1)
    phi = z[0]
    thetas = phi + z[1: N + 1]
    data = thetas + sigma_x * z[N + 1:]
    return HierarchicalGaussian(sigma_x, data)
