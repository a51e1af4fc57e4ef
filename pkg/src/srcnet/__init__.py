"""Spiking Recurrent Cell networks: a differentiable spiking neuron derived
from GRU, a LIF baseline, spike encoders and a BPTT trainer."""

from .autodiff import Node, Tape
from .coding import CodingConfig, latency_encode, rate_encode
from .data import ImageDataset, load_idx, save_idx, synthetic_dataset
from .lif_layer import LifParams, LifState, lif_step
from .metrics import accuracy, mean_activity, spiking_time_fraction
from .network import (
    Network,
    NetworkConfig,
    build_network,
    cross_entropy_loss,
    forward_sequence,
    load_checkpoint,
    predict,
    save_checkpoint,
)
from .src_layer import SrcParams, SrcState, clamp_bias, src_step, src_step_noisy
from .trainer import RunReport, TrainConfig, train

__version__ = "0.1.0"
