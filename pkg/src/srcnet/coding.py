"""Static image to spike-train encoders (rate and latency coding).

Spike tensors are time-major: ``(T, features)`` for one image or
``(T, N, features)`` for a stack of images.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, InputError


@dataclass(frozen=True)
class CodingConfig:
    T: int = 200
    gain: float = 0.25
    tau: float = 10.0
    v_th: float = 0.01

    def __post_init__(self):
        if self.T < 2:
            raise ConfigurationError(f"sequence length must be >= 2, got {self.T}")
        if not 0.0 < self.gain <= 1.0:
            raise ConfigurationError(f"gain must lie in (0, 1], got {self.gain}")
        if self.tau <= 0:
            raise ConfigurationError(f"tau must be positive, got {self.tau}")
        if not 0.0 < self.v_th < 1.0:
            raise ConfigurationError(f"v_th must lie in (0, 1), got {self.v_th}")


def _pixels(image):
    p = np.asarray(image, dtype=np.float64)
    if p.size and (np.nanmin(p) < 0.0 or np.nanmax(p) > 1.0 or np.isnan(p).any()):
        raise InputError(f"pixel values must lie in [0, 1], got range [{p.min()}, {p.max()}]")
    return p


def rate_encode(image, cfg, rng):
    """Bernoulli(gain * p) spike at every step, independently per pixel.

    ``image`` may be one flattened image or a (N, features) stack.
    """
    p = _pixels(image)
    prob = cfg.gain * p
    return (rng.random((cfg.T,) + p.shape) < prob).astype(np.float64)


def latency_times(image, cfg):
    """Integer spike step per pixel; ``-1`` marks pixels that never spike.

    Raw times are ``tau * (1 - p)``; pixels darker than ``v_th`` sit at the
    largest raw time. Raw times are min-max scaled per image onto
    ``[0, T-1]`` (floor) and anything landing on the last step is dropped.
    """
    p = _pixels(image)
    flat = p.reshape(-1, p.shape[-1]) if p.ndim > 1 else p[None, :]
    raw = cfg.tau * (1.0 - np.maximum(flat, cfg.v_th))
    lo = raw.min(axis=1, keepdims=True)
    span = raw.max(axis=1, keepdims=True) - lo
    safe = np.where(span > 0, span, 1.0)
    steps = np.floor((raw - lo) / safe * (cfg.T - 1)).astype(np.int64)
    steps = np.where(span > 0, steps, 0)
    steps[(steps >= cfg.T - 1) | (flat < cfg.v_th)] = -1
    return steps.reshape(p.shape)


def latency_encode(image, cfg):
    """At most one spike per pixel, brighter pixels first."""
    steps = latency_times(image, cfg)
    out = np.zeros((cfg.T,) + steps.shape)
    idx = np.nonzero(steps >= 0)
    out[(steps[idx],) + idx] = 1.0
    return out


def encode(images, kind, cfg, rng=None):
    if kind == "rate":
        if rng is None:
            raise ConfigurationError("rate coding needs a random generator")
        return rate_encode(images, cfg, rng)
    if kind == "latency":
        return latency_encode(images, cfg)
    raise ConfigurationError(f"unknown coding {kind!r}; expected 'rate' or 'latency'")
