"""Leaky integrate-and-fire layer with an ATan surrogate gradient."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .src_layer import xavier_uniform


@dataclass
class LifParams:
    W: np.ndarray
    alpha_v: np.ndarray
    v_thresh: np.ndarray
    v_rest: float = 0.0
    surrogate_slope: float = 2.0

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        n = self.W.shape[0]
        self.alpha_v = np.array(np.broadcast_to(self.alpha_v, (n,)), dtype=np.float64)
        self.v_thresh = np.array(np.broadcast_to(self.v_thresh, (n,)), dtype=np.float64)

    @classmethod
    def create(cls, n_in, n_out, rng, *, alpha_v=0.9, v_thresh=1.0, **kw):
        return cls(W=xavier_uniform(n_out, n_in, rng), alpha_v=alpha_v, v_thresh=v_thresh, **kw)

    @property
    def n_in(self):
        return self.W.shape[1]

    @property
    def n_out(self):
        return self.W.shape[0]


@dataclass
class LifState:
    V: np.ndarray

    @classmethod
    def zeros(cls, width, batch=None):
        return cls(np.zeros(width if batch is None else (batch, width)))


def atan_surrogate(u, slope=2.0):
    """d(spike)/dV used in the backward pass, ``u = V - V_thresh``."""
    return (slope / np.pi) / (1.0 + (slope * u) ** 2)


def lif_step(params, state, s_in):
    """One numeric step. Returns ``(new_state, spikes)`` with binary spikes."""
    s_in = np.asarray(s_in, dtype=np.float64)
    if s_in.shape[-1] != params.n_in or state.V.shape[-1] != params.n_out:
        raise ConfigurationError(
            f"LIF layer {params.n_in}->{params.n_out} got input width {s_in.shape[-1]} "
            f"and state width {state.V.shape[-1]}"
        )
    V = params.alpha_v * state.V + s_in @ params.W.T
    s = (V > params.v_thresh).astype(np.float64)
    V = V * (1.0 - s) + params.v_rest * s
    return LifState(V), s


def clamp_leak(params):
    np.clip(params.alpha_v, 0.0, 1.0, out=params.alpha_v)


def lif_graph_state(tape, width, batch):
    return tape.const(np.full((batch, width), 0.0))


def lif_step_graph(tape, w_node, alpha_node, thresh_node, params, V_prev, s_in):
    """Tape step. The membrane carries gradient through time; the reset mask
    uses the detached spike."""
    V = tape.add(tape.mul_row(V_prev, alpha_node), tape.matvec(w_node, s_in))
    u = tape.add_row(V, tape.scale(thresh_node, -1.0))
    s = tape.spike_atan(u, params.surrogate_slope)
    keep = 1.0 - s.value
    V_next = tape.mul(V, tape.const(keep))
    if params.v_rest != 0.0:
        V_next = tape.add(V_next, tape.const(params.v_rest * s.value))
    return V_next, s
