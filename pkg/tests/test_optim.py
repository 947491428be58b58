"""Optimizer step algebra and convergence."""

import numpy as np

from follmer.optim import Adam


def test_first_step_moves_by_lr():
    # with bias correction the very first update is lr * g / (|g| + eps)
    opt = Adam(3, lr=0.01)
    p = np.array([1.0, -2.0, 0.5])
    g = np.array([10.0, -3.0, 0.0])
    opt.step(p, g)
    want = np.array([1.0, -2.0, 0.5]) - 0.01 * np.sign(g) * (
        np.abs(g) / (np.abs(g) + 1e-8))
    assert np.allclose(p, want, rtol=0, atol=1e-12)


def test_matches_longhand_reference():
    lr, b1, b2, eps = 0.05, 0.9, 0.999, 1e-8
    opt = Adam(2, lr=lr, beta1=b1, beta2=b2, eps=eps)
    p = np.array([0.3, -0.7])
    q = p.copy()
    m = np.zeros(2)
    v = np.zeros(2)
    rng = np.random.default_rng(0)
    for t in range(1, 6):
        g = rng.normal(size=2)
        opt.step(p, g.copy())
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        q = q - lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
        assert np.allclose(p, q, rtol=1e-13, atol=0)


def test_converges_on_quadratic():
    opt = Adam(4, lr=0.05)
    target = np.array([1.0, -2.0, 0.0, 3.0])
    p = np.zeros(4)
    for _ in range(2000):
        opt.step(p, p - target)
    assert np.max(np.abs(p - target)) < 1e-3
