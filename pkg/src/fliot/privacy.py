"""Gaussian gradient perturbation with optional L2 clipping (clip, then noise)."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import RandomStream
from .errors import ParameterError


@dataclass(frozen=True)
class DpConfig:
    """Noise std ``sigma`` per gradient coordinate; ``clip_norm`` off by default."""

    sigma: float = 0.0
    clip_norm: Optional[float] = None

    def __post_init__(self):
        if not (math.isfinite(self.sigma) and self.sigma >= 0):
            raise ParameterError(f"sigma must be finite and non-negative, got {self.sigma}")
        if self.clip_norm is not None and not (math.isfinite(self.clip_norm) and self.clip_norm > 0):
            raise ParameterError(f"clip_norm must be positive, got {self.clip_norm}")


def clip_gradient(grad: np.ndarray, clip_norm: float) -> np.ndarray:
    if not clip_norm > 0:
        raise ParameterError(f"clip_norm must be positive, got {clip_norm}")
    grad = np.asarray(grad, dtype=np.float64)
    norm = float(np.linalg.norm(grad))
    if norm <= clip_norm:
        return grad
    return grad * (clip_norm / norm)


def noisy_gradient(grad: np.ndarray, cfg: DpConfig, stream: RandomStream) -> np.ndarray:
    grad = np.asarray(grad, dtype=np.float64)
    if cfg.clip_norm is not None:
        grad = clip_gradient(grad, cfg.clip_norm)
    if cfg.sigma == 0:
        return grad
    return grad + stream.normal(0.0, cfg.sigma, size=grad.shape)
