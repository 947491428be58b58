"""Posterior sample persistence: .npy matrix + JSON metadata sidecar."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DataFormatError


@dataclass
class SampleSet:
    """n x d sample matrix with run metadata (method, seed, gamma, ...)."""

    samples: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim == 1:
            self.samples = self.samples[:, None]
        if self.samples.ndim != 2:
            raise DataFormatError(f"samples must be 2D, got {self.samples.shape}")

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def d(self) -> int:
        return self.samples.shape[1]

    def save(self, prefix: str) -> None:
        np.save(prefix + ".npy", self.samples)
        with open(prefix + ".json", "w") as fh:
            json.dump(self.meta, fh, indent=1, sort_keys=True)

    @classmethod
    def load(cls, prefix: str) -> "SampleSet":
        npy = prefix + ".npy"
        if not os.path.exists(npy):
            raise DataFormatError(f"missing sample file {npy}")
        samples = np.load(npy)
        meta_path = prefix + ".json"
        meta = {}
        if os.path.exists(meta_path):
            with open(meta_path) as fh:
                meta = json.load(fh)
        return cls(samples=samples, meta=meta)
