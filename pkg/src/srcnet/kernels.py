"""Fused time-loop kernels for inference and tracing.

Each scan walks a whole sequence for a batch of neurons without building a
tape. ``currents`` is the synaptic drive ``W @ s_in[t]`` for every step,
shape ``(T, B, n)``; the input matmul stays in BLAS and only the recurrence
runs in the kernel.

Every kernel has a numba implementation and a vectorised numpy one. The
``backend`` argument picks one explicitly; ``None`` follows
``SRCNET_DISABLE_NUMBA`` (see :mod:`srcnet._numba`).
"""

import numpy as np

from ._numba import njit, resolve_backend

_NO_NOISE = np.zeros((1, 1, 1))


# ---------------------------------------------------------------------------
# SRC


def src_gate(h_prev, zs_hyp, zs_dep):
    """Slow-gate value for the previous fast state; switches at h = 0.5 inclusive."""
    return np.where(h_prev >= 0.5, zs_dep, zs_hyp)


@njit
def _tanh(y):
    # exp form; numba's scalar tanh is several times slower without SVML
    e = np.exp(-2.0 * abs(y))
    v = (1.0 - e) / (1.0 + e)
    return v if y >= 0.0 else -v


@njit
def _src_run_nb(cur, b_h, alpha, rho, r, r_s, zs_hyp, zs_dep, r_t, rs_t, noisy, trace):
    # time outermost so the state rows and the inner loop stay contiguous
    T, B, n = cur.shape
    h_out = np.empty_like(cur)
    shape = cur.shape if trace else (1, 1, 1)
    i_out = np.empty(shape)
    x_out = np.empty(shape)
    hs_out = np.empty(shape)
    zs_out = np.empty(shape)
    i = np.zeros((B, n))
    h = np.zeros((B, n))
    hs = np.zeros((B, n))
    inv_rho = 1.0 / rho
    rr = r
    rrs = r_s
    for t in range(T):
        for b in range(B):
            for k in range(n):
                ik = alpha * i[b, k] + cur[t, b, k]
                x = rho * _tanh(ik * inv_rho)
                hp = h[b, k]
                hsp = hs[b, k]
                zs = zs_dep if hp >= 0.5 else zs_hyp
                if noisy:
                    rr = r_t[t, b, k]
                    rrs = rs_t[t, b, k]
                hk = _tanh(x + rr * hp + rrs * hsp + b_h[k])
                hsk = zs * hsp + (1.0 - zs) * hp
                i[b, k] = ik
                h[b, k] = hk
                hs[b, k] = hsk
                h_out[t, b, k] = hk
                if trace:
                    i_out[t, b, k] = ik
                    x_out[t, b, k] = x
                    hs_out[t, b, k] = hsk
                    zs_out[t, b, k] = zs
    return i_out, x_out, h_out, hs_out, zs_out


def _src_scan_np(cur, b_h, alpha, rho, r, r_s, zs_hyp, zs_dep, r_t, rs_t, noisy, trace):
    T, B, n = cur.shape
    i = np.zeros((B, n))
    h = np.zeros((B, n))
    hs = np.zeros((B, n))
    inv_rho = 1.0 / rho
    names = ("i", "x", "h", "h_s", "z_s") if trace else ("h",)
    out = {k: np.empty_like(cur) for k in names}
    for t in range(T):
        i = alpha * i + cur[t]
        x = rho * np.tanh(i * inv_rho)
        zs = src_gate(h, zs_hyp, zs_dep)
        rr, rrs = (r_t[t], rs_t[t]) if noisy else (r, r_s)
        h_new = np.tanh(x + rr * h + rrs * hs + b_h)
        hs = zs * hs + (1.0 - zs) * h
        h = h_new
        out["h"][t] = h
        if trace:
            out["i"][t] = i
            out["x"][t] = x
            out["h_s"][t] = hs
            out["z_s"][t] = zs
    return out


def src_scan(currents, b_h, *, alpha, rho, r, r_s, zs_hyp, zs_dep,
             r_noise=None, rs_noise=None, trace=False, backend=None):
    """Run SRC dynamics over ``currents`` from a zero state.

    ``r_noise``/``rs_noise``, when given, replace the feedback gains with
    per-step, per-neuron samples of shape ``(T, B, n)``.

    Returns the fast-state sequence ``h`` of shape ``(T, B, n)``, or with
    ``trace=True`` a dict with keys ``i, x, h, h_s, z_s``.
    """
    cur = np.ascontiguousarray(currents, dtype=np.float64)
    if cur.ndim != 3:
        raise ValueError(f"currents must be (T, B, n), got {cur.shape}")
    b_h = np.ascontiguousarray(np.broadcast_to(np.asarray(b_h, dtype=np.float64), cur.shape[2:]))
    noisy = r_noise is not None
    if noisy:
        r_t = np.ascontiguousarray(r_noise, dtype=np.float64)
        rs_t = np.ascontiguousarray(rs_noise, dtype=np.float64)
        if r_t.shape != cur.shape or rs_t.shape != cur.shape:
            raise ValueError("noise arrays must match the currents shape")
    else:
        r_t = rs_t = _NO_NOISE
    args = (cur, b_h, float(alpha), float(rho), float(r), float(r_s),
            float(zs_hyp), float(zs_dep), r_t, rs_t, noisy)
    if resolve_backend(backend) == "numba":
        seqs = _src_run_nb(*args, trace)
        return dict(zip(("i", "x", "h", "h_s", "z_s"), seqs)) if trace else seqs[2]
    out = _src_scan_np(*args, trace)
    return out if trace else out["h"]


# ---------------------------------------------------------------------------
# LIF


@njit
def _lif_scan_nb(cur, alpha_v, v_th, v_rest):
    T, B, n = cur.shape
    s_out = np.zeros_like(cur)
    v_out = np.empty_like(cur)
    v = np.full((B, n), v_rest)
    for t in range(T):
        for b in range(B):
            for k in range(n):
                vk = alpha_v[k] * v[b, k] + cur[t, b, k]
                if vk > v_th[k]:
                    s_out[t, b, k] = 1.0
                    vk = v_rest
                v[b, k] = vk
                v_out[t, b, k] = vk
    return s_out, v_out


def _lif_scan_np(cur, alpha_v, v_th, v_rest):
    T, B, n = cur.shape
    v = np.full((B, n), v_rest)
    s_out = np.empty_like(cur)
    v_out = np.empty_like(cur)
    for t in range(T):
        v = alpha_v * v + cur[t]
        s = (v > v_th).astype(np.float64)
        v = v * (1.0 - s) + v_rest * s
        s_out[t] = s
        v_out[t] = v
    return s_out, v_out


def lif_scan(currents, alpha_v, v_th, v_rest=0.0, *, backend=None):
    """Run hard-reset LIF dynamics from rest. Returns ``(spikes, membrane)``,
    membrane recorded after reset."""
    cur = np.ascontiguousarray(currents, dtype=np.float64)
    if cur.ndim != 3:
        raise ValueError(f"currents must be (T, B, n), got {cur.shape}")
    n = cur.shape[2]
    alpha_v = np.ascontiguousarray(np.broadcast_to(np.asarray(alpha_v, dtype=np.float64), (n,)))
    v_th = np.ascontiguousarray(np.broadcast_to(np.asarray(v_th, dtype=np.float64), (n,)))
    if resolve_backend(backend) == "numba":
        return _lif_scan_nb(cur, alpha_v, v_th, float(v_rest))
    return _lif_scan_np(cur, alpha_v, v_th, float(v_rest))


# ---------------------------------------------------------------------------
# readout


@njit
def _leaky_readout_nb(spikes, w, alpha):
    # spikes are sparse and binary-ish, so skip the zero entries
    T, B, n = spikes.shape
    C = w.shape[0]
    wt = np.ascontiguousarray(w.T)
    u = np.zeros((B, C))
    for t in range(T):
        for b in range(B):
            for c in range(C):
                u[b, c] *= alpha
            for k in range(n):
                sk = spikes[t, b, k]
                if sk != 0.0:
                    for c in range(C):
                        u[b, c] += sk * wt[k, c]
    return u


def leaky_readout(spikes, w, alpha, *, backend=None):
    """Final value of ``u[t] = alpha * u[t-1] + w @ s[t]`` for a (T, B, n) sequence."""
    spikes = np.ascontiguousarray(spikes, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    if resolve_backend(backend) == "numba":
        return _leaky_readout_nb(spikes, w, float(alpha))
    u = np.zeros((spikes.shape[1], w.shape[0]))
    for t in range(spikes.shape[0]):
        u = alpha * u + spikes[t] @ w.T
    return u
