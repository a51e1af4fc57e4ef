"""Spiking Recurrent Cell layer.

Per step, for input spikes ``s_in``::

    i   = alpha * i + W_s @ s_in                      leaky synaptic integrator
    x   = rho * tanh(i / rho)                         bounded neuron input
    z_s = zs_hyp, or zs_dep when h_prev >= 0.5        slow-gate step function
    h   = tanh(x + r * h_prev + r_s * hs_prev + b_h)  fast state
    h_s = z_s * hs_prev + (1 - z_s) * h_prev          slow state
    s   = relu(h)                                     output spikes

Only ``W_s`` and ``b_h`` are learnable. During training the recurrent inputs
``h_prev``/``hs_prev`` are detached and the output ReLU passes gradients
unchanged, so the integrator ``i`` is the only path carrying gradient
through time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .kernels import src_gate


def xavier_uniform(n_out, n_in, rng):
    bound = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-bound, bound, size=(n_out, n_in))


@dataclass
class SrcParams:
    W_s: np.ndarray
    b_h: np.ndarray
    alpha: float = 0.9
    rho: float = 3.0
    r: float = 2.0
    r_s: float = -7.0
    b_h_max: float = -4.0
    z: float = 0.0
    zs_hyp: float = 0.9
    zs_dep: float = 0.0
    noise_sigma: float = 0.0
    mu_r: float | None = None
    mu_rs: float | None = None

    def __post_init__(self):
        self.W_s = np.asarray(self.W_s, dtype=np.float64)
        self.b_h = np.asarray(self.b_h, dtype=np.float64)
        if self.mu_r is None:
            self.mu_r = self.r
        if self.mu_rs is None:
            self.mu_rs = self.r_s
        if self.W_s.ndim != 2 or self.b_h.shape != (self.W_s.shape[0],):
            raise ConfigurationError(
                f"W_s {self.W_s.shape} and b_h {self.b_h.shape} disagree on layer width"
            )
        if not 0.0 <= self.alpha < 1.0:
            raise ConfigurationError(f"alpha must lie in [0, 1), got {self.alpha}")
        if self.rho <= 0:
            raise ConfigurationError(f"rho must be positive, got {self.rho}")
        if self.z != 0.0:
            raise ConfigurationError("the fast update gate z is fixed to 0")
        if not 0.0 <= self.zs_dep <= self.zs_hyp < 1.0:
            raise ConfigurationError(
                f"need 0 <= zs_dep <= zs_hyp < 1, got zs_dep={self.zs_dep}, zs_hyp={self.zs_hyp}"
            )
        if self.noise_sigma < 0:
            raise ConfigurationError(f"noise_sigma must be >= 0, got {self.noise_sigma}")

    @classmethod
    def create(cls, n_in, n_out, rng, *, b_h_init=-6.0, **constants):
        """Xavier-uniform weights and a constant bias."""
        return cls(W_s=xavier_uniform(n_out, n_in, rng), b_h=np.full(n_out, float(b_h_init)),
                   **constants)

    @property
    def n_in(self):
        return self.W_s.shape[1]

    @property
    def n_out(self):
        return self.W_s.shape[0]

    def constants(self):
        return dict(alpha=self.alpha, rho=self.rho, r=self.r, r_s=self.r_s,
                    zs_hyp=self.zs_hyp, zs_dep=self.zs_dep)


@dataclass
class SrcState:
    i: np.ndarray
    h: np.ndarray
    h_s: np.ndarray
    # intermediates of the step that produced this state
    x: np.ndarray | None = field(default=None, compare=False)
    z_s: np.ndarray | None = field(default=None, compare=False)

    @classmethod
    def zeros(cls, width, batch=None):
        shape = (width,) if batch is None else (batch, width)
        return cls(np.zeros(shape), np.zeros(shape), np.zeros(shape))


def step_gate(h_prev, params):
    return src_gate(h_prev, params.zs_hyp, params.zs_dep)


def _check_widths(params, state, s_in):
    if s_in.shape[-1] != params.n_in:
        raise ConfigurationError(f"input width {s_in.shape[-1]} != layer input width {params.n_in}")
    if state.h.shape[-1] != params.n_out:
        raise ConfigurationError(f"state width {state.h.shape[-1]} != layer width {params.n_out}")


def src_step(params, state, s_in, *, r=None, r_s=None):
    """One numeric SRC step. Returns ``(new_state, s_out)``.

    Written with the general convex update ``h = z*h_prev + (1-z)*h_hat``;
    with ``z = 0`` it reduces to the direct form used by the kernels.
    """
    s_in = np.asarray(s_in, dtype=np.float64)
    _check_widths(params, state, s_in)
    r = params.r if r is None else r
    r_s = params.r_s if r_s is None else r_s
    i = params.alpha * state.i + s_in @ params.W_s.T
    x = params.rho * np.tanh(i * (1.0 / params.rho))
    z_s = step_gate(state.h, params)
    h_hat = np.tanh(x + r * state.h + r_s * state.h_s + params.b_h)
    h = params.z * state.h + (1.0 - params.z) * h_hat
    h_s = z_s * state.h_s + (1.0 - z_s) * state.h
    return SrcState(i, h, h_s, x=x, z_s=z_s), np.maximum(h, 0.0)


def sample_feedback(params, shape, rng):
    """Draw ``(r, r_s)`` gains of ``shape`` around their means."""
    r = rng.normal(params.mu_r, params.noise_sigma, size=shape)
    r_s = rng.normal(params.mu_rs, params.noise_sigma, size=shape)
    return r, r_s


def src_step_noisy(params, state, s_in, rng):
    """SRC step with feedback gains resampled per neuron for this step.

    ``noise_sigma == 0`` draws nothing and is identical to :func:`src_step`.
    """
    if params.noise_sigma == 0:
        return src_step(params, state, s_in)
    r, r_s = sample_feedback(params, state.h.shape, rng)
    return src_step(params, state, s_in, r=r, r_s=r_s)


def clamp_bias(params):
    np.minimum(params.b_h, params.b_h_max, out=params.b_h)


# ---------------------------------------------------------------------------
# differentiable step


@dataclass
class SrcGraphState:
    """Per-step state on a tape: ``i`` and ``h`` are nodes, ``h_s`` a plain array."""

    i: object
    h: object
    h_s: np.ndarray


def src_graph_state(tape, width, batch):
    zeros = np.zeros((batch, width))
    return SrcGraphState(tape.const(zeros), tape.const(zeros), zeros)


def src_step_graph(tape, w_node, b_node, params, state, s_in, *, r=None, r_s=None):
    """Tape version of :func:`src_step` with detached recurrence and ReLU bypass.

    ``s_in`` is a node of shape (B, n_in); ``r``/``r_s`` optionally hold
    sampled gains of shape (B, n_out).
    """
    i = tape.add(tape.scale(state.i, params.alpha), tape.matvec(w_node, s_in))
    x = tape.scale(tape.tanh(tape.scale(i, 1.0 / params.rho)), params.rho)

    h_prev = tape.detach(state.h)
    z_s = step_gate(h_prev.value, params)
    if r is None:
        fast = tape.scale(h_prev, params.r)
        slow = params.r_s * state.h_s
    else:
        fast = tape.mul(h_prev, tape.const(r))
        slow = r_s * state.h_s
    pre = tape.add_row(tape.add(tape.add(x, fast), tape.const(slow)), b_node)
    h = tape.tanh(pre)
    h_s = z_s * state.h_s + (1.0 - z_s) * h_prev.value
    return SrcGraphState(i, h, h_s), tape.relu_bypass(h)
