"""BPTT training loop: Adam, cosine-annealed learning rate, global-norm
clipping, bias clamping, validation-based checkpoint selection."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import Tape
from .coding import CodingConfig, encode
from .errors import ConfigurationError, InputError, NumericalError
from .metrics import accuracy, confusion_matrix, mean_activity
from .network import cross_entropy_loss, predict, save_checkpoint
from .src_layer import SrcParams

log = logging.getLogger(__name__)

# offsets that derive independent generator streams from one run seed
_SHUFFLE, _ENCODE, _NOISE = 1, 2, 3
_EVAL_ENCODE, _EVAL_NOISE = 11, 12


def stream(seed, tag, *more):
    return np.random.default_rng([int(seed), tag, *more])


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    lr_init: float = 0.005
    clip_norm: float = 1.0
    valid_fraction: float = 0.10
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigurationError("epochs and batch_size must be >= 1")
        if self.clip_norm <= 0:
            raise ConfigurationError(f"clip_norm must be positive, got {self.clip_norm}")
        if not 0.0 < self.valid_fraction < 1.0:
            raise ConfigurationError(f"valid_fraction must lie in (0, 1), got {self.valid_fraction}")


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def split_dataset(data, valid_fraction=0.10, seed=0):
    """Shuffled, disjoint train/validation split."""
    if len(data) == 0:
        raise InputError("cannot split an empty dataset")
    if not 0.0 < valid_fraction < 1.0:
        raise ConfigurationError(f"valid_fraction must lie in (0, 1), got {valid_fraction}")
    n_valid = int(round(len(data) * valid_fraction))
    perm = np.random.default_rng(seed).permutation(len(data))
    return data.subset(np.sort(perm[n_valid:])), data.subset(np.sort(perm[:n_valid]))


def global_norm(grads):
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))


def clip_gradients(grads, clip_norm):
    """Scale all gradients by ``clip_norm / norm`` when the global L2 norm exceeds it."""
    if clip_norm <= 0:
        raise ConfigurationError(f"clip_norm must be positive, got {clip_norm}")
    norm = global_norm(grads)
    if norm <= clip_norm:
        return grads
    scale = clip_norm / norm
    return {k: g * scale for k, g in grads.items()}


def adam_step(state, params, grads, lr):
    """In-place Adam update with bias correction."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ConfigurationError(f"{name}: gradient shape {g.shape} != parameter {p.shape}")
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def cosine_lr(epoch, total_epochs, lr_init):
    if not 0 <= epoch <= total_epochs:
        raise ConfigurationError(f"epoch {epoch} outside [0, {total_epochs}]")
    return lr_init * (1.0 + math.cos(math.pi * epoch / total_epochs)) / 2.0


def max_bias(net):
    return max((float(layer.b_h.max()) for layer in net.layers if isinstance(layer, SrcParams)),
               default=-math.inf)


# ---------------------------------------------------------------------------
# evaluation


def evaluate(net, data, coding, coding_cfg, seed, split="test", chunk=128, backend=None):
    """Tape-free pass over ``data``.

    Encoding and noise draws come from generators derived from ``seed`` and
    ``split`` alone, so repeated evaluations of one model agree exactly.
    """
    tag = {"valid": 1, "test": 2}.get(split, 3)
    enc_rng = stream(seed, _EVAL_ENCODE, tag)
    noise_rng = stream(seed, _EVAL_NOISE, tag)
    x = data.flat()
    if x.shape[1] != net.input_size:
        raise ConfigurationError(
            f"network expects {net.input_size} inputs, dataset has {x.shape[1]} features"
        )
    logits = []
    active = np.zeros(len(net.layers))
    for start in range(0, len(data), chunk):
        spikes = encode(x[start:start + chunk], coding, coding_cfg, enc_rng)
        out, records = net.run(spikes, noise_rng=noise_rng, backend=backend)
        logits.append(out)
        active += np.array(mean_activity(records)) * out.shape[0]
    logits = np.concatenate(logits) if logits else np.zeros((0, net.cfg.num_classes))
    preds = predict(logits)
    n = max(len(data), 1)
    return {
        "loss": cross_entropy_loss(logits, data.labels) if len(data) else float("nan"),
        "accuracy": accuracy(preds, data.labels),
        "mean_activity": list(active / n),
        "predictions": preds,
        "confusion": confusion_matrix(preds, data.labels, net.cfg.num_classes),
    }


# ---------------------------------------------------------------------------
# report


REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["config", "epochs", "train_loss", "train_acc", "valid_loss", "valid_acc",
                 "lr", "epoch_seconds", "mean_spiking_activity", "best_epoch", "final", "best"],
    "properties": {
        "config": {"type": "object"},
        "epochs": {"type": "array", "items": {"type": "integer"}},
        "train_loss": {"type": "array", "items": {"type": "number"}},
        "train_acc": {"type": "array", "items": {"type": "number"}},
        "valid_loss": {"type": "array", "items": {"type": "number"}},
        "valid_acc": {"type": "array", "items": {"type": "number"}},
        "lr": {"type": "array", "items": {"type": "number"}},
        "epoch_seconds": {"type": "array", "items": {"type": "number", "minimum": 0}},
        "mean_spiking_activity": {
            "type": "array",
            "items": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}},
        },
        "best_epoch": {"type": "integer"},
        "final": {"$ref": "#/$defs/test"},
        "best": {"$ref": "#/$defs/test"},
    },
    "$defs": {
        "test": {
            "type": ["object", "null"],
            "required": ["test_accuracy", "test_loss", "mean_activity"],
            "properties": {
                "test_accuracy": {"type": "number", "minimum": 0, "maximum": 1},
                "test_loss": {"type": "number"},
                "mean_activity": {"type": "array", "items": {"type": "number"}},
            },
        }
    },
}


@dataclass
class RunReport:
    config: dict
    epochs: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    train_acc: list = field(default_factory=list)
    valid_loss: list = field(default_factory=list)
    valid_acc: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    epoch_seconds: list = field(default_factory=list)
    mean_spiking_activity: list = field(default_factory=list)  # per epoch, per layer (validation)
    batch_losses: list = field(default_factory=list, repr=False)
    best_epoch: int = -1
    final: dict | None = None
    best: dict | None = None

    def to_dict(self):
        d = asdict(self)
        d.pop("batch_losses")
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self):
        """One row per epoch. Wall-clock timings stay in the JSON only so the
        CSV is reproducible byte for byte."""
        n_layers = len(self.mean_spiking_activity[0]) if self.mean_spiking_activity else 0
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(["epoch", "lr", "train_loss", "train_acc", "valid_loss", "valid_acc"]
                   + [f"activity_layer{k}" for k in range(n_layers)])
        for row in zip(self.epochs, self.lr, self.train_loss, self.train_acc,
                       self.valid_loss, self.valid_acc, self.mean_spiking_activity):
            w.writerow([row[0]] + [repr(float(v)) for v in row[1:6]]
                       + [repr(float(a)) for a in row[6]])
        return buf.getvalue()

    def write(self, json_path=None, csv_path=None):
        if json_path:
            with open(json_path, "w") as fh:
                fh.write(self.to_json())
        if csv_path:
            with open(csv_path, "w", newline="") as fh:
                fh.write(self.to_csv())


def _test_summary(result):
    return {"test_accuracy": result["accuracy"], "test_loss": result["loss"],
            "mean_activity": result["mean_activity"]}


# ---------------------------------------------------------------------------
# training


def train_batch(net, adam, spikes, targets, lr, clip_norm, noise_rng=None):
    """Forward, backward, clip, Adam, project. Returns ``(loss, logits, grad_norm)``."""
    tape = Tape()
    loss, logits, _ = net.loss_graph(tape, spikes, targets, noise_rng=noise_rng)
    if not np.isfinite(loss.value):
        bad = tape.first_nonfinite()
        raise NumericalError(f"non-finite loss {float(loss.value)}; first non-finite tensor: {bad}")
    grads = tape.backward(loss)
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for {name}")
    norm = global_norm(grads)
    grads = clip_gradients(grads, clip_norm)
    adam_step(adam, net.parameters(), grads, lr)
    net.project()
    return float(loss.value), logits.value, norm


def train(net, train_data, cfg, *, test_data=None, coding="rate", coding_cfg=None,
          checkpoint_path=None, final_checkpoint_path=None, on_step=None, lr_override=None,
          checkpoint_meta=None):
    """Train ``net`` in place and return a :class:`RunReport`.

    ``train_data`` is split into train/validation by ``cfg.valid_fraction``.
    ``on_step(net, step)`` runs after every optimizer step.
    """
    coding_cfg = coding_cfg or CodingConfig()
    if train_data.num_features != net.input_size:
        raise ConfigurationError(
            f"network expects {net.input_size} inputs, dataset has {train_data.num_features} features"
        )
    fit, valid = split_dataset(train_data, cfg.valid_fraction, cfg.seed)
    shuffle_rng = stream(cfg.seed, _SHUFFLE)
    enc_rng = stream(cfg.seed, _ENCODE)
    noise_rng = stream(cfg.seed, _NOISE)
    adam = AdamState(cfg.beta1, cfg.beta2, cfg.eps)
    x_fit = fit.flat()

    report = RunReport(config={
        "train": asdict(cfg), "network": net.cfg.to_dict(),
        "coding": {"kind": coding, **asdict(coding_cfg)},
        "n_train": len(fit), "n_valid": len(valid),
        "n_test": len(test_data) if test_data is not None else 0,
    })
    best_key = None
    best_net = None
    step = 0
    for epoch in range(cfg.epochs):
        lr = cosine_lr(epoch, cfg.epochs, cfg.lr_init) if lr_override is None else lr_override
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(len(fit))
        losses, correct = [], 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            spikes = encode(x_fit[idx], coding, coding_cfg, enc_rng)
            loss, logits, _ = train_batch(net, adam, spikes, fit.labels[idx], lr,
                                          cfg.clip_norm, noise_rng)
            step += 1
            assert max_bias(net) <= min(
                (l.b_h_max for l in net.layers if isinstance(l, SrcParams)), default=math.inf
            ), "bias clamp violated"
            if on_step is not None:
                on_step(net, step)
            losses.append(loss * len(idx))
            report.batch_losses.append(loss)
            correct += int(np.sum(predict(logits) == fit.labels[idx]))
        seconds = time.perf_counter() - t0

        val = evaluate(net, valid, coding, coding_cfg, cfg.seed, split="valid")
        report.epochs.append(epoch)
        report.lr.append(lr)
        report.train_loss.append(sum(losses) / len(fit))
        report.train_acc.append(correct / len(fit))
        report.valid_loss.append(val["loss"])
        report.valid_acc.append(val["accuracy"])
        report.epoch_seconds.append(seconds)
        report.mean_spiking_activity.append(val["mean_activity"])
        log.info("epoch %d lr=%.5f train_loss=%.4f valid_acc=%.4f (%.1fs)",
                 epoch, lr, report.train_loss[-1], val["accuracy"], seconds)

        key = (val["accuracy"], -val["loss"])
        if best_key is None or key > best_key:
            best_key = key
            best_net = net.copy()
            report.best_epoch = epoch
            if checkpoint_path:
                save_checkpoint(checkpoint_path, best_net,
                                meta={**(checkpoint_meta or {}), "epoch": epoch})

    if final_checkpoint_path:
        save_checkpoint(final_checkpoint_path, net,
                        meta={**(checkpoint_meta or {}), "epoch": cfg.epochs - 1})
    if test_data is not None:
        report.final = _test_summary(evaluate(net, test_data, coding, coding_cfg, cfg.seed))
        report.best = _test_summary(evaluate(best_net, test_data, coding, coding_cfg, cfg.seed))
    return report
