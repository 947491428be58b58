"""Flat-parameter MLP with batch normalization and a manual autodiff tape.

The drift network keeps every weight in one contiguous float64 buffer so the
optimizer, the checkpoint writer, and the path-derivative backward pass all
see the same storage. Hidden blocks are Linear -> BatchNorm (no affine) ->
Softplus; the output layer starts at zero so the untrained drift is the
identity-free noise flow.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .errors import DataFormatError, StateError
from .rng import STREAM_INIT, derive_key, uniforms

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
DEFAULT_WIDTH = 20
DEFAULT_BLOCKS = 4

CKPT_MAGIC = b"FLWDRIFT"
CKPT_VERSION = 1


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


class BlockTape:
    __slots__ = ("x_in", "pre", "mu", "inv", "xhat")

    def __init__(self, x_in, pre, mu, inv, xhat):
        self.x_in = x_in
        self.pre = pre
        self.mu = mu
        self.inv = inv
        self.xhat = xhat


class Tape:
    """Per-call forward record; mode is frozen at forward time."""

    __slots__ = ("blocks", "final_in", "train")

    def __init__(self, blocks, final_in, train):
        self.blocks = blocks
        self.final_in = final_in
        self.train = train


class MLP:
    """width-uniform MLP, n_blocks hidden blocks, zero-initialized output layer."""

    def __init__(self, in_dim: int, out_dim: int, width: int = DEFAULT_WIDTH,
                 n_blocks: int = DEFAULT_BLOCKS):
        if in_dim < 1 or out_dim < 1 or width < 1 or n_blocks < 1:
            raise StateError("network dimensions must be positive")
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.width = width
        self.n_blocks = n_blocks

        dims = [in_dim] + [width] * n_blocks + [out_dim]
        self._shapes = [(dims[i + 1], dims[i]) for i in range(len(dims) - 1)]
        self._offsets = []
        pos = 0
        for out_d, in_d in self._shapes:
            self._offsets.append((pos, pos + out_d * in_d, pos + out_d * in_d + out_d))
            pos += out_d * in_d + out_d
        self.n_params = pos
        self.params = np.zeros(self.n_params, dtype=np.float64)
        self.running_mean = np.zeros((n_blocks, width), dtype=np.float64)
        self.running_var = np.ones((n_blocks, width), dtype=np.float64)

    def weight(self, layer: int) -> np.ndarray:
        a, b, _ = self._offsets[layer]
        out_d, in_d = self._shapes[layer]
        return self.params[a:b].reshape(out_d, in_d)

    def bias(self, layer: int) -> np.ndarray:
        _, b, c = self._offsets[layer]
        return self.params[b:c]

    def init_params(self, seed: int) -> None:
        """Uniform(+-sqrt(1/fan_in)) on hidden layers, zeros on the output layer."""
        key = derive_key(seed, STREAM_INIT)
        self.params[:] = 0.0
        self.running_mean[:] = 0.0
        self.running_var[:] = 1.0
        start = 0
        for layer in range(self.n_blocks):
            a, _, c = self._offsets[layer]
            n = c - a
            bound = 1.0 / np.sqrt(self._shapes[layer][1])
            u = uniforms(key, start, n)
            self.params[a:c] = bound * (2.0 * u - 1.0)
            start += n

    def forward(self, X: np.ndarray, train: bool, update_stats: bool | None = None):
        """Returns (Y, tape). Train mode normalizes with batch statistics;
        eval mode with the stored running statistics. update_stats controls
        whether a batch-stat forward also refreshes the running statistics
        (default: yes, matching train); pass False for a pure batch-stat
        evaluation that leaves the module untouched."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.in_dim:
            raise StateError(f"expected input of shape (S, {self.in_dim}), got {X.shape}")
        S = X.shape[0]
        if train and S < 2:
            raise StateError("batch statistics need at least 2 rows")
        if update_stats is None:
            update_stats = train

        h = X
        blocks = []
        for layer in range(self.n_blocks):
            pre = h @ self.weight(layer).T + self.bias(layer)
            if train:
                mu = pre.mean(axis=0)
                var = pre.var(axis=0)
                if update_stats:
                    self.running_mean[layer] *= 1.0 - BN_MOMENTUM
                    self.running_mean[layer] += BN_MOMENTUM * mu
                    self.running_var[layer] *= 1.0 - BN_MOMENTUM
                    self.running_var[layer] += BN_MOMENTUM * var * (S / (S - 1.0))
            else:
                mu = self.running_mean[layer]
                var = self.running_var[layer]
            inv = 1.0 / np.sqrt(var + BN_EPS)
            xhat = (pre - mu) * inv
            blocks.append(BlockTape(h, pre, mu, inv, xhat))
            h = softplus(xhat)
        Y = h @ self.weight(self.n_blocks).T + self.bias(self.n_blocks)
        return Y, Tape(blocks, h, train)

    def backward(self, tape: Tape, G: np.ndarray,
                 need_weight_grad: bool = True, need_input_grad: bool = True):
        """Vector-Jacobian products for one taped forward.

        G is the upstream on the output, shape (S, out_dim). Returns
        (flat weight grad or None, input grad or None). Train-mode tapes
        couple rows through the batch statistics.
        """
        G = np.asarray(G, dtype=np.float64)
        gflat = np.zeros(self.n_params, dtype=np.float64) if need_weight_grad else None

        layer = self.n_blocks
        if need_weight_grad:
            a, b, c = self._offsets[layer]
            gflat[a:b] = (G.T @ tape.final_in).ravel()
            gflat[b:c] = G.sum(axis=0)
        g = G @ self.weight(layer)

        for layer in range(self.n_blocks - 1, -1, -1):
            bt = tape.blocks[layer]
            g = g * expit(bt.xhat)
            if tape.train:
                S = bt.pre.shape[0]
                centered = bt.pre - bt.mu
                gvar = np.sum(g * centered, axis=0) * (-0.5) * bt.inv ** 3
                gmu = -bt.inv * np.sum(g, axis=0)
                g = g * bt.inv + centered * (2.0 / S) * gvar + gmu / S
            else:
                g = g * bt.inv
            if need_weight_grad:
                a, b, c = self._offsets[layer]
                gflat[a:b] = (g.T @ bt.x_in).ravel()
                gflat[b:c] = g.sum(axis=0)
            g = g @ self.weight(layer)

        return gflat, (g if need_input_grad else None)


def save_checkpoint(path: str, net: MLP) -> None:
    header = np.array(
        [CKPT_VERSION, net.in_dim, net.width, net.n_blocks, net.out_dim, net.n_params],
        dtype="<u4",
    )
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(header.tobytes())
        fh.write(net.running_mean.astype("<f8").tobytes())
        fh.write(net.running_var.astype("<f8").tobytes())
        fh.write(net.params.astype("<f8").tobytes())


def load_checkpoint(path: str) -> MLP:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < len(CKPT_MAGIC) + 24 or raw[: len(CKPT_MAGIC)] != CKPT_MAGIC:
        raise DataFormatError(f"{path} is not a drift checkpoint")
    header = np.frombuffer(raw, dtype="<u4", count=6, offset=len(CKPT_MAGIC))
    version, in_dim, width, n_blocks, out_dim, n_params = (int(v) for v in header)
    if version != CKPT_VERSION:
        raise DataFormatError(f"unsupported checkpoint version {version}")
    net = MLP(in_dim, out_dim, width=width, n_blocks=n_blocks)
    if net.n_params != n_params:
        raise DataFormatError("checkpoint header is inconsistent with its topology")
    off = len(CKPT_MAGIC) + 24
    need = off + 8 * (2 * n_blocks * width + n_params)
    if len(raw) != need:
        raise DataFormatError(f"checkpoint is {len(raw)} bytes, expected {need}")
    stats = np.frombuffer(raw, dtype="<f8", count=2 * n_blocks * width, offset=off)
    net.running_mean[:] = stats[: n_blocks * width].reshape(n_blocks, width)
    net.running_var[:] = stats[n_blocks * width:].reshape(n_blocks, width)
    off += 8 * 2 * n_blocks * width
    net.params[:] = np.frombuffer(raw, dtype="<f8", count=n_params, offset=off)
    return net
