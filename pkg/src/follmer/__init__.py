"""Finite-time diffusion sampler for Bayesian posteriors.

Learns the drift of a controlled SDE started at a point mass so that the
time-1 law matches an unnormalized target, plus a training-free Monte Carlo
drift sampler and stochastic-gradient baselines for comparison.
"""

__version__ = "0.1.0"
