"""Spiking activity, accuracy and confusion matrices."""

import numpy as np

from .errors import InputError


def spiking_time_fraction(s):
    """Fraction of timesteps where the output is strictly positive.

    For binary spike trains this is the spike count divided by T.
    """
    s = np.asarray(s, dtype=np.float64)
    if s.shape[0] == 0:
        raise InputError("spiking_time_fraction needs at least one timestep")
    return float(np.mean(s > 0.0, axis=0)) if s.ndim == 1 else np.mean(s > 0.0, axis=0)


def mean_activity(records):
    """Per-layer mean spiking-time fraction.

    ``records`` is one array per layer with time on the first axis, e.g.
    ``(T, samples, width)``; the mean runs over neurons and samples.
    """
    return [float(np.mean(np.asarray(r) > 0.0)) if np.size(r) else 0.0 for r in records]


def accuracy(predictions, labels):
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise InputError(f"{predictions.shape[0]} predictions for {labels.shape[0]} labels")
    if predictions.size == 0:
        return 0.0
    return float(np.mean(predictions == labels))


def confusion_matrix(predictions, labels, num_classes):
    """Rows are true classes, columns predictions."""
    m = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(m, (np.asarray(labels), np.asarray(predictions)), 1)
    return m
