"""Evaluation of posterior sample sets: calibration, predictive scores,
and moment/shape diagnostics against closed-form oracles."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError
from .models import BnnRegression, ConjugateGaussian, LogisticRegression
from .samples import SampleSet

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class PredictiveReport:
    """Metrics that do not apply to a model kind stay None and serialize
    to explicit JSON nulls."""

    accuracy: float | None
    ece: float | None
    avg_log_lik: float | None
    sum_log_lik: float | None
    mse: float | None
    n_test: int
    n_posterior_samples: int

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: (None if v is None else v) for k, v in d.items()}


def ece(confidences, correctness, n_bins: int = 10) -> float:
    """Expected calibration error over equal-width confidence bins:
    sum_b (|B_b|/n) |acc(B_b) - conf(B_b)|; empty bins contribute 0."""
    conf = np.asarray(confidences, dtype=np.float64).reshape(-1)
    corr = np.asarray(correctness, dtype=np.float64).reshape(-1)
    if conf.size != corr.size or conf.size == 0:
        raise ConfigError("confidences and correctness must match, nonempty")
    if np.any(conf < 0) or np.any(conf > 1):
        raise ConfigError("confidences must lie in [0, 1]")
    if n_bins < 1:
        raise ConfigError("n_bins must be >= 1")
    bins = np.minimum((conf * n_bins).astype(np.int64), n_bins - 1)
    total = 0.0
    n = conf.size
    for b in range(n_bins):
        m = bins == b
        cnt = int(m.sum())
        if cnt == 0:
            continue
        total += (cnt / n) * abs(corr[m].mean() - conf[m].mean())
    return float(total)


def _classification_report(P_bar, targets, n_bins):
    """P_bar: predictive probability of the +1 label per test point."""
    y_pos = targets > 0
    predicted_pos = P_bar >= 0.5
    acc = float(np.mean(predicted_pos == y_pos))
    p_true = np.where(y_pos, P_bar, 1.0 - P_bar)
    logs = np.log(np.maximum(p_true, 1e-300))
    conf = np.where(predicted_pos, P_bar, 1.0 - P_bar)
    cal = ece(conf, (predicted_pos == y_pos).astype(float), n_bins)
    return acc, cal, logs


def predictive_eval(samples: SampleSet, model, test_features, test_targets,
                    n_bins: int = 10) -> PredictiveReport:
    """Posterior-averaged predictive metrics on a held-out set.

    The predictive probability/density per test point is the average over
    posterior samples of the per-sample value; accuracy thresholds the
    predictive probability at 1/2; MSE uses the posterior-mean prediction.
    """
    if samples.n < 1:
        raise ConfigError("need at least one posterior sample")
    targets = np.asarray(test_targets, dtype=np.float64).reshape(-1)
    if targets.size == 0:
        raise ConfigError("test set must be nonempty")
    Theta = samples.samples
    if Theta.shape[1] != model.dim:
        raise ConfigError("sample dimension does not match model")

    if isinstance(model, LogisticRegression):
        P = model.prob_positive(Theta, test_features)   # (S, n)
        acc, cal, logs = _classification_report(P.mean(axis=0), targets,
                                                n_bins)
        return PredictiveReport(
            accuracy=acc, ece=cal,
            avg_log_lik=float(logs.mean()), sum_log_lik=float(logs.sum()),
            mse=None, n_test=targets.size, n_posterior_samples=samples.n)

    if isinstance(model, BnnRegression):
        x = np.asarray(test_features, dtype=np.float64).reshape(-1)
        F = model.predict_f(Theta, x)                   # (S, n)
        v = model.noise_sd ** 2
    elif isinstance(model, ConjugateGaussian):
        F = np.broadcast_to(Theta[:, 0][:, None],
                            (samples.n, targets.size))  # constant predictor
        v = model.nv
    else:
        raise ConfigError(
            f"no predictive evaluation for {type(model).__name__}")

    # regression: predictive density = posterior mean of the per-sample
    # Gaussian density, evaluated in log space
    ld = -0.5 * (targets[None, :] - F) ** 2 / v - 0.5 * (LOG_2PI + np.log(v))
    m = ld.max(axis=0)
    logs = m + np.log(np.exp(ld - m[None, :]).mean(axis=0))
    f_bar = F.mean(axis=0)
    return PredictiveReport(
        accuracy=None, ece=None,
        avg_log_lik=float(logs.mean()), sum_log_lik=float(logs.sum()),
        mse=float(np.mean((targets - f_bar) ** 2)),
        n_test=targets.size, n_posterior_samples=samples.n)


def moment_diagnostics(samples, oracle: dict) -> dict:
    """Mean/variance errors with MC z-scores, plus a KS statistic against
    an exact 1D oracle CDF when one is supplied."""
    X = samples.samples if isinstance(samples, SampleSet) else np.atleast_2d(samples)
    n, d = X.shape
    if n < 2:
        raise ConfigError("need at least two samples")
    mu = np.asarray(oracle["mean"], dtype=np.float64).reshape(-1)
    var = np.asarray(oracle["var"], dtype=np.float64).reshape(-1)
    if mu.size != d or var.size != d:
        raise ConfigError("oracle moments do not match sample dimension")
    xbar = X.mean(axis=0)
    c = X - xbar
    s2 = (c ** 2).sum(axis=0) / (n - 1)
    se_mean = np.sqrt(s2 / n)
    m4 = (c ** 4).mean(axis=0)
    se_var = np.sqrt(np.maximum(m4 - s2 ** 2, 1e-300) / n)
    out = {
        "mean_error": xbar - mu,
        "var_error": s2 - var,
        "z_mean": (xbar - mu) / se_mean,
        "z_var": (s2 - var) / se_var,
    }
    cdf = oracle.get("cdf")
    if cdf is not None:
        if d != 1:
            raise ConfigError("KS diagnostic requires 1D samples")
        xs = np.sort(X[:, 0])
        F = np.asarray(cdf(xs), dtype=np.float64).reshape(-1)
        i = np.arange(1, n + 1)
        ks = float(np.max(np.maximum(np.abs(F - i / n),
                                     np.abs(F - (i - 1) / n))))
        out["ks_stat"] = ks
        out["ks_critical_1pct"] = 1.63 / np.sqrt(n)
    return out
