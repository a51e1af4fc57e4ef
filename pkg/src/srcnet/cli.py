"""Command-line entry point.

Subcommands: ``simulate``, ``encode``, ``train``, ``eval``, ``noise-sweep``.
Exit codes: 0 success, 2 usage/configuration, 3 data, 4 numerical.
Output goes under ``--out``, defaulting to ``$SRCNET_OUTPUT_DIR`` or ``./runs``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import pathlib
import sys
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import dynamics
from .coding import CodingConfig, latency_times, rate_encode
from .data import load_idx, synthetic_dataset
from .errors import ConfigurationError, InputError, SrcNetError, UsageError
from .metrics import spiking_time_fraction
from .network import NetworkConfig, build_network, load_checkpoint
from .trainer import TrainConfig, evaluate, stream, train

log = logging.getLogger("srcnet")

_INIT = 21


def default_output_dir():
    return pathlib.Path(os.environ.get("SRCNET_OUTPUT_DIR", "runs"))


@dataclass
class RunConfig:
    command: str = "train"
    dataset: str = "mnist"
    data_dir: str | None = None
    train_limit: int | None = None
    test_limit: int | None = None
    synthetic_samples: int = 200
    synthetic_classes: int = 2
    image_size: int = 8
    coding: str = "rate"
    neuron: str = "src"
    layers: int = 1
    hidden: int = 512
    alpha: float | None = None
    noise_sigma: float = 0.0
    timesteps: int = 200
    gain: float = 0.25
    tau: float = 10.0
    v_th: float = 0.01
    train: TrainConfig = field(default_factory=TrainConfig)
    out: str = "runs"
    seed: int = 0

    def leak(self):
        # slower integrators for the sparse latency code
        if self.alpha is not None:
            return self.alpha
        return 0.99 if self.coding == "latency" else 0.9

    def coding_config(self):
        return CodingConfig(T=self.timesteps, gain=self.gain, tau=self.tau, v_th=self.v_th)

    def network_config(self, input_size, num_classes):
        if self.layers < 1:
            raise ConfigurationError(f"need at least one layer, got {self.layers}")
        return NetworkConfig(neuron=self.neuron, input_size=input_size,
                             hidden_sizes=(self.hidden,) * (self.layers - 1),
                             num_classes=num_classes, alpha=self.leak(),
                             noise_sigma=self.noise_sigma)


# ---------------------------------------------------------------------------
# data


def _find(directory, stem):
    for name in (stem, stem + ".gz"):
        p = pathlib.Path(directory) / name
        if p.exists():
            return p
    raise InputError(f"{stem}[.gz] not found in {directory}")


def load_datasets(rc):
    """Returns ``(train, test)`` as described by the run config."""
    if rc.dataset == "synthetic":
        size = (rc.image_size, rc.image_size)
        train_ds = synthetic_dataset(rc.synthetic_samples, rc.synthetic_classes, size, rc.seed)
        n_test = max(rc.synthetic_samples // 4, rc.synthetic_classes)
        test_ds = synthetic_dataset(n_test, rc.synthetic_classes, size, rc.seed + 1)
    elif rc.dataset in ("mnist", "fashion-mnist"):
        if not rc.data_dir:
            raise UsageError("--data-dir is required for IDX datasets")
        train_ds = load_idx(_find(rc.data_dir, "train-images-idx3-ubyte"),
                            _find(rc.data_dir, "train-labels-idx1-ubyte"))
        test_ds = load_idx(_find(rc.data_dir, "t10k-images-idx3-ubyte"),
                           _find(rc.data_dir, "t10k-labels-idx1-ubyte"))
    else:
        raise UsageError(f"unknown dataset {rc.dataset!r}; expected mnist, fashion-mnist or synthetic")
    if rc.train_limit is not None:
        train_ds = train_ds.subset(slice(0, rc.train_limit))
    if rc.test_limit is not None:
        test_ds = test_ds.subset(slice(0, rc.test_limit))
    return train_ds, test_ds


# ---------------------------------------------------------------------------
# commands


def run_training(rc, out_dir, log_progress=True):
    """Shared by ``train`` and ``noise-sweep``. Returns the report."""
    train_ds, test_ds = load_datasets(rc)
    coding_cfg = rc.coding_config()
    net_cfg = rc.network_config(train_ds.num_features, train_ds.num_classes)
    if rc.coding not in ("rate", "latency"):
        raise ConfigurationError(f"unknown coding {rc.coding!r}")
    net = build_network(net_cfg, stream(rc.seed, _INIT))
    out_dir.mkdir(parents=True, exist_ok=True)
    meta = {"coding": rc.coding, "coding_config": asdict(coding_cfg), "seed": rc.train.seed}
    report = train(net, train_ds, rc.train, test_data=test_ds, coding=rc.coding,
                   coding_cfg=coding_cfg, checkpoint_path=out_dir / "checkpoint.npz",
                   final_checkpoint_path=out_dir / "final.npz", checkpoint_meta=meta)
    report.write(out_dir / "report.json", out_dir / "report.csv")
    return report


def cmd_train(rc):
    out_dir = pathlib.Path(rc.out)
    report = run_training(rc, out_dir)
    print(json.dumps({
        "final_test_accuracy": report.final["test_accuracy"],
        "best_test_accuracy": report.best["test_accuracy"],
        "mean_activity": report.final["mean_activity"],
        "out": str(out_dir),
    }))
    return 0


def cmd_eval(rc, checkpoint, overrides):
    net, meta = load_checkpoint(checkpoint)
    coding = overrides.get("coding") or meta.get("coding", "rate")
    ccfg = CodingConfig(**meta.get("coding_config", {}))
    if overrides.get("timesteps"):
        ccfg = replace(ccfg, T=overrides["timesteps"])
    seed = overrides["seed"] if overrides.get("seed") is not None else meta.get("seed", 0)
    _, test_ds = load_datasets(replace(rc, seed=seed))
    if test_ds.num_features != net.input_size:
        raise ConfigurationError(
            f"checkpoint expects {net.input_size} inputs, dataset has {test_ds.num_features}"
        )
    result = evaluate(net, test_ds, coding, ccfg, seed)
    doc = {"accuracy": result["accuracy"], "loss": result["loss"],
           "mean_activity": result["mean_activity"],
           "confusion_matrix": result["confusion"].tolist(),
           "checkpoint": str(checkpoint), "coding": coding, "timesteps": ccfg.T, "seed": seed}
    text = json.dumps(doc, indent=2)
    if overrides.get("out_file"):
        pathlib.Path(overrides["out_file"]).write_text(text)
    print(text)
    return 0


def cmd_noise_sweep(rc, sigmas):
    if any(s < 0 for s in sigmas):
        raise ConfigurationError("noise levels must be >= 0")
    out_dir = pathlib.Path(rc.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for sigma in sigmas:
        report = run_training(replace(rc, noise_sigma=sigma), out_dir / f"sigma_{sigma:g}")
        rows.append([repr(float(sigma)), repr(report.final["test_accuracy"]),
                     repr(report.final["test_loss"]), repr(report.best["test_accuracy"]),
                     repr(float(np.mean(report.final["mean_activity"])))])
        print(f"sigma={sigma:g} test_accuracy={report.final['test_accuracy']:.4f}")
    with open(out_dir / "noise_sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(["sigma", "test_accuracy", "test_loss", "best_test_accuracy", "mean_activity"])
        w.writerows(rows)
    return 0


def cmd_simulate(args):
    if args.protocol_file:
        x = dynamics.fit_length(dynamics.load_protocol_file(args.protocol_file), args.steps)
        variants = [("file", {})]
        name = pathlib.Path(args.protocol_file).stem
    else:
        x = dynamics.protocol_input(args.protocol, args.steps)
        variants = dynamics.VARIANTS[args.protocol]
        name = args.protocol
    user = {k: v for k, v in {"b_h": args.bias, "alpha": args.alpha, "rho": args.rho,
                              "r": args.r, "r_s": args.rs, "zs_hyp": args.zs_hyp,
                              "zs_dep": args.zs_dep}.items() if v is not None}
    if "b_h" in user and len(variants) > 1 and all("zs_dep" not in v for _, v in variants):
        variants = [(f"b_h={user['b_h']:g}", {})]
    traces = {}
    rng = np.random.default_rng(args.seed)
    for label, params in variants:
        kw = {**params, **user}
        traces[label] = dynamics.simulate_neuron(x, noise_sigma=args.noise_sigma, rng=rng, **kw)
    out = pathlib.Path(args.out) if args.out else default_output_dir() / f"simulate_{name}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    dynamics.write_traces(out, traces)
    summary = {}
    for label, tr in traces.items():
        runs = dynamics.spike_runs(tr["s_out"])
        summary[label] = {"spiking_fraction": spiking_time_fraction(tr["s_out"]),
                          "spikes": len(runs),
                          "mean_spike_width": float(np.mean([n for _, n in runs])) if runs else 0.0}
    print(json.dumps({"trace": str(out), "variants": summary}))
    return 0


def cmd_encode(rc, index, out):
    train_ds, _ = load_datasets(rc)
    if not 0 <= index < len(train_ds):
        raise InputError(f"index {index} outside dataset of {len(train_ds)} images")
    image = train_ds.flat()[index]
    cfg = rc.coding_config()
    if rc.coding == "rate":
        spikes = rate_encode(image, cfg, np.random.default_rng(rc.seed))
    else:
        steps = latency_times(image, cfg)
        spikes = np.zeros((cfg.T, image.size))
        fired = np.flatnonzero(steps >= 0)
        spikes[steps[fired], fired] = 1.0
    out = pathlib.Path(out) if out else default_output_dir() / f"encode_{rc.coding}_{index}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    t_idx, f_idx = np.nonzero(spikes)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(["t", "feature"])
        w.writerows(zip(t_idx.tolist(), f_idx.tolist()))
    print(json.dumps({"events": int(t_idx.size), "label": int(train_ds.labels[index]),
                      "out": str(out)}))
    return 0


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_data_args(p):
    g = p.add_argument_group("data")
    g.add_argument("--dataset", default="mnist", choices=["mnist", "fashion-mnist", "synthetic"])
    g.add_argument("--data-dir", help="directory with train-/t10k- IDX files (optionally .gz)")
    g.add_argument("--train-limit", type=int, help="use only the first N training images")
    g.add_argument("--test-limit", type=int, help="use only the first N test images")
    g.add_argument("--synthetic-samples", type=int, default=200)
    g.add_argument("--synthetic-classes", type=int, default=2)
    g.add_argument("--image-size", type=int, default=8)


def _add_coding_args(p, defaults=True):
    g = p.add_argument_group("coding")
    g.add_argument("--coding", choices=["rate", "latency"], default="rate" if defaults else None)
    g.add_argument("--timesteps", type=int, default=200 if defaults else None)
    g.add_argument("--gain", type=float, default=0.25)
    g.add_argument("--tau", type=float, default=10.0)
    g.add_argument("--v-th", type=float, default=0.01)


def _add_model_args(p):
    g = p.add_argument_group("network")
    g.add_argument("--neuron", choices=["src", "lif"], default="src")
    g.add_argument("--layers", type=int, default=1, help="number of spiking layers")
    g.add_argument("--hidden", type=int, default=512, help="width of hidden layers")
    g.add_argument("--alpha", type=float, help="integrator leak (default 0.9, 0.99 for latency)")
    g.add_argument("--noise-sigma", type=float, default=0.0)
    t = p.add_argument_group("training")
    t.add_argument("--epochs", type=int, default=100)
    t.add_argument("--batch-size", type=int, default=64)
    t.add_argument("--lr", type=float, default=0.005)
    t.add_argument("--clip-norm", type=float, default=1.0)
    t.add_argument("--valid-fraction", type=float, default=0.10)


def build_parser():
    ap = _Parser(prog="srcnet", description="Spiking recurrent cell networks.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="single-neuron dynamics trace")
    src = s.add_mutually_exclusive_group()
    src.add_argument("--protocol", default="fig1",
                     help=f"builtin protocol: {', '.join(sorted(dynamics.PROTOCOLS))}")
    src.add_argument("--protocol-file", help="file with one input value per line or an x column")
    s.add_argument("--steps", type=int)
    s.add_argument("--bias", type=float)
    s.add_argument("--alpha", type=float)
    s.add_argument("--rho", type=float)
    s.add_argument("--r", type=float)
    s.add_argument("--rs", type=float)
    s.add_argument("--zs-hyp", type=float)
    s.add_argument("--zs-dep", type=float)
    s.add_argument("--noise-sigma", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", help="trace CSV path")

    e = sub.add_parser("encode", help="encode one training image into a spike-event CSV")
    _add_data_args(e)
    _add_coding_args(e)
    e.add_argument("--index", type=int, default=0)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out")

    for name in ("train", "noise-sweep"):
        t = sub.add_parser(name, help="train a network" if name == "train"
                           else "train one network per noise level")
        _add_data_args(t)
        _add_coding_args(t)
        _add_model_args(t)
        t.add_argument("--seed", type=int, default=0)
        t.add_argument("--out", help="output directory")
        if name == "noise-sweep":
            t.add_argument("--sigmas", type=float, nargs="+", default=[0.0, 0.2])

    v = sub.add_parser("eval", help="evaluate a checkpoint on a test set")
    v.add_argument("--checkpoint", required=True)
    _add_data_args(v)
    _add_coding_args(v, defaults=False)
    v.add_argument("--seed", type=int)
    v.add_argument("--out", help="metrics JSON path")
    return ap


def run_config_from_args(args):
    out = args.out or str(default_output_dir() / args.command)
    tc = TrainConfig()
    if hasattr(args, "epochs"):
        tc = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, lr_init=args.lr,
                         clip_norm=args.clip_norm, valid_fraction=args.valid_fraction,
                         seed=args.seed)
    return RunConfig(
        command=args.command, dataset=args.dataset, data_dir=args.data_dir,
        train_limit=args.train_limit, test_limit=args.test_limit,
        synthetic_samples=args.synthetic_samples, synthetic_classes=args.synthetic_classes,
        image_size=args.image_size, coding=args.coding or "rate",
        neuron=getattr(args, "neuron", "src"), layers=getattr(args, "layers", 1),
        hidden=getattr(args, "hidden", 512), alpha=getattr(args, "alpha", None),
        noise_sigma=getattr(args, "noise_sigma", 0.0), timesteps=args.timesteps or 200,
        gain=args.gain, tau=args.tau, v_th=args.v_th, train=tc, out=out,
        seed=args.seed if args.seed is not None else 0,
    )


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.command == "simulate":
            return cmd_simulate(args)
        rc = run_config_from_args(args)
        if args.command == "encode":
            return cmd_encode(rc, args.index, args.out)
        if args.command == "train":
            return cmd_train(rc)
        if args.command == "noise-sweep":
            return cmd_noise_sweep(rc, args.sigmas)
        return cmd_eval(rc, args.checkpoint, {"coding": args.coding, "timesteps": args.timesteps,
                                              "seed": args.seed, "out_file": args.out})
    except SrcNetError as exc:
        print(f"srcnet: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"srcnet: error: {exc}", file=sys.stderr)
        return InputError.exit_code


if __name__ == "__main__":
    sys.exit(main())
