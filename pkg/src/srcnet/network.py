"""Layer stacks with a frozen leaky-integrator readout.

The last spiking layer holds ``group_size`` neurons per class. Integrator
``c`` receives weight ``+1`` from neurons ``[c*group_size, (c+1)*group_size)``
and ``-0.1`` from every other neuron; the prediction is the argmax of the
integrators after the final step.

Checkpoints are ``.npz`` archives: one array per parameter under
``layer{k}/{name}``, the readout under ``readout``, and a JSON document under
``__meta__`` holding the format version, the network config and run metadata.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigurationError, InputError
from .lif_layer import LifParams, clamp_leak, lif_graph_state, lif_step_graph
from .src_layer import (
    SrcParams,
    clamp_bias,
    sample_feedback,
    src_graph_state,
    src_step_graph,
)

CHECKPOINT_VERSION = 1
NEURON_KINDS = ("src", "lif")


@dataclass
class NetworkConfig:
    neuron: str = "src"
    input_size: int = 784
    hidden_sizes: tuple = ()
    num_classes: int = 10
    group_size: int = 10
    readout_alpha: float = 0.99
    readout_excitatory: float = 1.0
    readout_inhibitory: float = -0.1
    # integrator leak for SRC, initial membrane leak for LIF
    alpha: float = 0.9
    # SRC constants
    rho: float = 3.0
    r: float = 2.0
    r_s: float = -7.0
    b_h_init: float = -6.0
    b_h_max: float = -4.0
    zs_hyp: float = 0.9
    zs_dep: float = 0.0
    noise_sigma: float = 0.0
    # LIF constants
    v_thresh: float = 1.0
    v_rest: float = 0.0
    surrogate_slope: float = 2.0

    def __post_init__(self):
        self.hidden_sizes = tuple(int(h) for h in self.hidden_sizes)
        if self.neuron not in NEURON_KINDS:
            raise ConfigurationError(f"unknown neuron kind {self.neuron!r}; expected src or lif")
        if self.input_size <= 0 or self.num_classes <= 0 or self.group_size <= 0:
            raise ConfigurationError("input_size, num_classes and group_size must be positive")
        if any(h <= 0 for h in self.hidden_sizes):
            raise ConfigurationError(f"hidden widths must be positive, got {self.hidden_sizes}")

    @property
    def layer_sizes(self):
        return [self.input_size, *self.hidden_sizes, self.group_size * self.num_classes]

    @property
    def num_layers(self):
        return len(self.hidden_sizes) + 1

    def to_dict(self):
        d = asdict(self)
        d["hidden_sizes"] = list(self.hidden_sizes)
        return d


def readout_matrix(cfg):
    n = cfg.group_size * cfg.num_classes
    w = np.full((cfg.num_classes, n), cfg.readout_inhibitory)
    for c in range(cfg.num_classes):
        w[c, c * cfg.group_size:(c + 1) * cfg.group_size] = cfg.readout_excitatory
    return w


@dataclass
class Network:
    cfg: NetworkConfig
    layers: list
    readout: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.readout = np.array(self.readout, dtype=np.float64)
        self.readout.flags.writeable = False
        sizes = self.cfg.layer_sizes
        if len(self.layers) != len(sizes) - 1:
            raise ConfigurationError(f"{len(self.layers)} layers for sizes {sizes}")
        for k, layer in enumerate(self.layers):
            if (layer.n_in, layer.n_out) != (sizes[k], sizes[k + 1]):
                raise ConfigurationError(
                    f"layer {k} is {layer.n_in}->{layer.n_out}, config wants {sizes[k]}->{sizes[k + 1]}"
                )
        if self.readout.shape != (self.cfg.num_classes, sizes[-1]):
            raise ConfigurationError(f"readout shape {self.readout.shape} does not match config")

    @property
    def input_size(self):
        return self.cfg.input_size

    def parameters(self):
        """Learnable arrays by name. Values are live references."""
        params = {}
        for k, layer in enumerate(self.layers):
            if isinstance(layer, SrcParams):
                params[f"layer{k}/W_s"] = layer.W_s
                params[f"layer{k}/b_h"] = layer.b_h
            else:
                params[f"layer{k}/W"] = layer.W
                params[f"layer{k}/alpha_v"] = layer.alpha_v
                params[f"layer{k}/v_thresh"] = layer.v_thresh
        return params

    def project(self):
        """Re-impose parameter constraints after an optimizer update."""
        for layer in self.layers:
            if isinstance(layer, SrcParams):
                clamp_bias(layer)
            else:
                clamp_leak(layer)

    def copy(self):
        layers = []
        for layer in self.layers:
            kw = {k: (v.copy() if isinstance(v, np.ndarray) else v) for k, v in vars(layer).items()}
            layers.append(type(layer)(**kw))
        return Network(self.cfg, layers, self.readout.copy())

    # -- differentiable forward ---------------------------------------------

    def loss_graph(self, tape, spikes, targets, noise_rng=None):
        """Unroll the network on ``tape`` over a (T, B, input) spike batch.

        Returns ``(loss, logits, activity)`` where ``activity`` is the
        per-layer spiking-time fraction of this batch.
        """
        spikes = _as_batch(spikes, self.input_size)
        T, B, _ = spikes.shape
        leaves = {name: tape.leaf(arr, name=name) for name, arr in self.parameters().items()}
        states = []
        for k, layer in enumerate(self.layers):
            if isinstance(layer, SrcParams):
                states.append(src_graph_state(tape, layer.n_out, B))
            else:
                states.append(lif_graph_state(tape, layer.n_out, B))
        readout = tape.const(self.readout)
        u = tape.const(np.zeros((B, self.cfg.num_classes)))
        active = np.zeros(len(self.layers))

        for t in range(T):
            s = tape.const(spikes[t])
            for k, layer in enumerate(self.layers):
                if isinstance(layer, SrcParams):
                    r = r_s = None
                    if layer.noise_sigma > 0 and noise_rng is not None:
                        r, r_s = sample_feedback(layer, (B, layer.n_out), noise_rng)
                    states[k], s = src_step_graph(
                        tape, leaves[f"layer{k}/W_s"], leaves[f"layer{k}/b_h"], layer,
                        states[k], s, r=r, r_s=r_s,
                    )
                else:
                    states[k], s = lif_step_graph(
                        tape, leaves[f"layer{k}/W"], leaves[f"layer{k}/alpha_v"],
                        leaves[f"layer{k}/v_thresh"], layer, states[k], s,
                    )
                active[k] += np.count_nonzero(s.value > 0)
            u = tape.add(tape.scale(u, self.cfg.readout_alpha), tape.matvec(readout, s))

        loss = tape.softmax_cross_entropy(u, targets)
        widths = np.array([layer.n_out for layer in self.layers])
        return loss, u, list(active / (T * B * widths))

    # -- fast forward ---------------------------------------------------------

    def run(self, spikes, noise_rng=None, backend=None):
        """Tape-free forward of a (T, B, input) batch.

        Returns ``(logits, records)``, records being each layer's (T, B, width)
        output sequence.
        """
        spikes = _as_batch(spikes, self.input_size)
        T, B, _ = spikes.shape
        records = []
        s = spikes
        for layer in self.layers:
            cur = (s.reshape(T * B, -1) @ layer.W_s.T if isinstance(layer, SrcParams)
                   else s.reshape(T * B, -1) @ layer.W.T).reshape(T, B, -1)
            if isinstance(layer, SrcParams):
                r_t = rs_t = None
                if layer.noise_sigma > 0 and noise_rng is not None:
                    r_t, rs_t = sample_feedback(layer, cur.shape, noise_rng)
                h = kernels.src_scan(cur, layer.b_h, **layer.constants(),
                                     r_noise=r_t, rs_noise=rs_t, backend=backend)
                s = np.maximum(h, 0.0)
            else:
                s, _ = kernels.lif_scan(cur, layer.alpha_v, layer.v_thresh, layer.v_rest,
                                        backend=backend)
            records.append(s)
        logits = kernels.leaky_readout(s, self.readout, self.cfg.readout_alpha, backend=backend)
        return logits, records


def _as_batch(spikes, input_size):
    spikes = np.asarray(spikes, dtype=np.float64)
    if spikes.ndim == 2:
        spikes = spikes[:, None, :]
    if spikes.ndim != 3 or spikes.shape[2] != input_size:
        raise InputError(
            f"spike tensor of shape {spikes.shape} does not match network input width {input_size}"
        )
    return spikes


def build_network(cfg, rng):
    sizes = cfg.layer_sizes
    layers = []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        if cfg.neuron == "src":
            layers.append(SrcParams.create(
                n_in, n_out, rng, b_h_init=cfg.b_h_init, alpha=cfg.alpha, rho=cfg.rho,
                r=cfg.r, r_s=cfg.r_s, b_h_max=cfg.b_h_max, zs_hyp=cfg.zs_hyp,
                zs_dep=cfg.zs_dep, noise_sigma=cfg.noise_sigma,
            ))
        else:
            layers.append(LifParams.create(
                n_in, n_out, rng, alpha_v=cfg.alpha, v_thresh=cfg.v_thresh,
                v_rest=cfg.v_rest, surrogate_slope=cfg.surrogate_slope,
            ))
    return Network(cfg, layers, readout_matrix(cfg))


def forward_sequence(net, spikes, noise_rng=None, backend=None):
    """Logits after the last step plus per-layer spike records.

    A (T, input) tensor yields logits of shape (num_classes,).
    """
    single = np.ndim(spikes) == 2
    logits, records = net.run(spikes, noise_rng=noise_rng, backend=backend)
    if single:
        return logits[0], [r[:, 0] for r in records]
    return logits, records


def cross_entropy_loss(logits, targets):
    """Mean softmax cross-entropy; a 1-D logits vector takes a single target."""
    z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    y = np.atleast_1d(np.asarray(targets, dtype=np.intp))
    if y.shape[0] != z.shape[0]:
        raise InputError(f"{y.shape[0]} targets for {z.shape[0]} logit rows")
    if y.min() < 0 or y.max() >= z.shape[1]:
        raise InputError(f"target out of range [0, {z.shape[1]})")
    shift = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shift).sum(axis=1))
    return float(np.mean(lse - shift[np.arange(z.shape[0]), y]))


def predict(logits):
    """Argmax over the last axis; ties go to the lowest index."""
    return np.argmax(np.asarray(logits), axis=-1)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, net, meta=None):
    arrays = {}
    for k, layer in enumerate(net.layers):
        for name, value in vars(layer).items():
            if isinstance(value, np.ndarray):
                arrays[f"layer{k}/{name}"] = value
    arrays["readout"] = np.asarray(net.readout)
    doc = {"format": "srcnet-checkpoint", "version": CHECKPOINT_VERSION,
           "network": net.cfg.to_dict(), "meta": meta or {}}
    arrays["__meta__"] = np.array(json.dumps(doc, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    """Returns ``(network, meta)``."""
    with np.load(path, allow_pickle=False) as z:
        doc = json.loads(str(z["__meta__"]))
        if doc.get("format") != "srcnet-checkpoint":
            raise InputError(f"{path} is not an srcnet checkpoint")
        if doc.get("version") != CHECKPOINT_VERSION:
            raise InputError(f"unsupported checkpoint version {doc.get('version')}")
        cfg = NetworkConfig(**doc["network"])
        net = build_network(cfg, np.random.default_rng(0))
        for k, layer in enumerate(net.layers):
            for name, value in vars(layer).items():
                if isinstance(value, np.ndarray):
                    stored = z[f"layer{k}/{name}"]
                    if stored.shape != value.shape:
                        raise ConfigurationError(
                            f"checkpoint layer{k}/{name} has shape {stored.shape}, expected {value.shape}"
                        )
                    setattr(layer, name, stored.astype(np.float64))
        net = Network(cfg, net.layers, z["readout"])
    return net, doc["meta"]
