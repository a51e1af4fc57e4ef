"""Single-neuron stimulation protocols and trace analysis.

Protocols describe the neuron input ``x`` (after the rescaled tanh) per
step. Builtins are pinned here so traces are reproducible:

``zero``
    null input for ``steps`` steps (default 300), at ``b_h = -5`` and ``-4``.
``fig1``
    plateaus 0, 0.15, 0.3, 0.15, 0 of 60 steps each, at ``b_h = -5`` (stays
    silent) and ``b_h = -4`` (spikes spontaneously).
``appendixB``
    50 steps of rest, 150 steps at 2.0, 100 steps of rest, at ``b_h = -6``,
    run once with the variable slow gate (0.9/0) and once with it fixed
    at 0.9.
"""

from __future__ import annotations

import csv
import io

import numpy as np

from . import kernels
from .errors import ConfigurationError, UsageError
from .src_layer import sample_feedback, SrcParams

TRACE_COLUMNS = ("variant", "t", "x", "i", "h", "h_s", "s_out", "r_h", "rs_hs", "z_s")


def _plateaus(*segments):
    return np.concatenate([np.full(n, float(v)) for v, n in segments])


PROTOCOLS = {
    "zero": lambda steps: np.zeros(steps or 300),
    "fig1": lambda steps: _plateaus((0.0, 60), (0.15, 60), (0.3, 60), (0.15, 60), (0.0, 60)),
    "appendixB": lambda steps: _plateaus((0.0, 50), (2.0, 150), (0.0, 100)),
}

# per-protocol parameter variants: (label, overrides)
VARIANTS = {
    "zero": [("b_h=-5", {"b_h": -5.0}), ("b_h=-4", {"b_h": -4.0})],
    "fig1": [("b_h=-5", {"b_h": -5.0}), ("b_h=-4", {"b_h": -4.0})],
    "appendixB": [("variable_zs", {"b_h": -6.0, "zs_hyp": 0.9, "zs_dep": 0.0}),
                  ("fixed_zs", {"b_h": -6.0, "zs_hyp": 0.9, "zs_dep": 0.9})],
}


def protocol_input(name, steps=None):
    """Input sequence ``x`` of a builtin protocol, cut or padded to ``steps``."""
    try:
        x = PROTOCOLS[name](steps)
    except KeyError:
        raise UsageError(
            f"unknown protocol {name!r}; builtins: {', '.join(sorted(PROTOCOLS))}"
        ) from None
    return fit_length(x, steps)


def fit_length(x, steps):
    if steps is None or steps == len(x):
        return x
    if steps < len(x):
        return x[:steps]
    return np.concatenate([x, np.full(steps - len(x), x[-1] if len(x) else 0.0)])


def load_protocol_file(path):
    """One input value per line, or a CSV with an ``x`` column."""
    with open(path, newline="") as fh:
        text = fh.read()
    rows = list(csv.reader(io.StringIO(text)))
    if rows and "x" in rows[0]:
        col = rows[0].index("x")
        values = [r[col] for r in rows[1:] if r]
    else:
        values = [r[0] for r in rows if r]
    try:
        return np.array([float(v) for v in values])
    except ValueError as exc:
        raise UsageError(f"{path}: non-numeric input value ({exc})") from None


def simulate_neuron(x, *, b_h=-6.0, alpha=0.9, rho=3.0, r=2.0, r_s=-7.0, zs_hyp=0.9,
                    zs_dep=0.0, noise_sigma=0.0, rng=None, backend=None):
    """Drive one SRC neuron's spike generator with input ``x``.

    The integrator column holds the value ``i`` that maps to ``x`` through
    ``rho * tanh(i / rho)``. Returns a dict of per-step arrays.
    """
    x = np.asarray(x, dtype=np.float64)
    if np.any(np.abs(x) >= rho):
        raise ConfigurationError(f"protocol inputs must satisfy |x| < rho = {rho}")
    params = SrcParams(W_s=np.ones((1, 1)), b_h=np.array([b_h]), alpha=alpha, rho=rho, r=r,
                       r_s=r_s, zs_hyp=zs_hyp, zs_dep=zs_dep, noise_sigma=noise_sigma)
    # feed x through the integrator by choosing currents that land on it exactly
    i_target = rho * np.arctanh(x / rho)
    cur = i_target - alpha * np.concatenate([[0.0], i_target[:-1]])
    cur = cur[:, None, None]
    r_t = rs_t = None
    if noise_sigma > 0:
        r_t, rs_t = sample_feedback(params, cur.shape, rng or np.random.default_rng())
    tr = kernels.src_scan(cur, params.b_h, **params.constants(), r_noise=r_t, rs_noise=rs_t,
                          trace=True, backend=backend)
    out = {k: v[:, 0, 0] for k, v in tr.items()}
    h_prev = np.concatenate([[0.0], out["h"][:-1]])
    hs_prev = np.concatenate([[0.0], out["h_s"][:-1]])
    r_used = r if r_t is None else r_t[:, 0, 0]
    rs_used = r_s if rs_t is None else rs_t[:, 0, 0]
    out["s_out"] = np.maximum(out["h"], 0.0)
    # feedback terms entering h[t]
    out["r_h"] = r_used * h_prev
    out["rs_hs"] = rs_used * hs_prev
    out["t"] = np.arange(len(x))
    return out


def spike_runs(s):
    """``(start, length)`` of each maximal run of strictly positive output."""
    pos = np.concatenate([[False], np.asarray(s) > 0, [False]])
    edges = np.flatnonzero(np.diff(pos.astype(np.int8)))
    starts, ends = edges[::2], edges[1::2]
    return list(zip(starts.tolist(), (ends - starts).tolist()))


def trace_rows(variant, trace):
    for t in range(len(trace["t"])):
        yield [variant, int(trace["t"][t])] + [
            repr(float(trace[k][t])) for k in TRACE_COLUMNS[2:]
        ]


def write_traces(path_or_buf, traces):
    """``traces`` maps variant label to trace dict."""
    close = False
    if isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__"):
        fh = open(path_or_buf, "w", newline="")
        close = True
    else:
        fh = path_or_buf
    try:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(TRACE_COLUMNS)
        for variant, tr in traces.items():
            w.writerows(trace_rows(variant, tr))
    finally:
        if close:
            fh.close()
