"""Disaggregation accuracy and on/off precision, recall, and F-score."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class MetricError(ValueError):
    """Undefined metric (e.g. zero total aggregate) or shape mismatch."""


@dataclass
class DeviceConfusion:
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float
    recall: float
    f_score: float


@dataclass
class MetricSet:
    acc: float
    per_device: list[DeviceConfusion]
    precision: float  # unweighted mean over devices
    recall: float
    f_score: float


def disagg_accuracy(estimates: np.ndarray, truths: np.ndarray,
                    aggregates: np.ndarray) -> float:
    """Percent accuracy: 100 * (1 - sum |est - truth| / (2 * sum |aggregate|)).

    The factor two in the denominator compensates for every misassigned watt
    being counted once as a miss and once as a false attribution.
    """
    estimates = np.asarray(estimates, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.float64)
    aggregates = np.asarray(aggregates, dtype=np.float64)
    if estimates.shape != truths.shape:
        raise MetricError("estimate and truth shapes differ: %s vs %s"
                          % (estimates.shape, truths.shape))
    if np.any(aggregates < 0):
        raise MetricError("aggregate snippets must be nonnegative")
    denom = 2.0 * float(np.sum(np.abs(aggregates)))
    if denom == 0.0:
        raise MetricError("total aggregate power is zero; accuracy undefined")
    err = float(np.sum(np.abs(estimates - truths)))
    return (1.0 - err / denom) * 100.0


def precision_recall(est_flags: np.ndarray, truth_flags: np.ndarray) -> DeviceConfusion:
    """Window-level on/off precision and recall for one device.

    A device that is never on and never predicted on scores 100% on both; a
    device with an empty denominator on one side only scores 0% there.
    """
    est = np.asarray(est_flags, dtype=bool)
    truth = np.asarray(truth_flags, dtype=bool)
    if est.shape != truth.shape:
        raise MetricError("flag sequences have different lengths")
    tp = int(np.sum(est & truth))
    fp = int(np.sum(est & ~truth))
    fn = int(np.sum(~est & truth))
    tn = int(np.sum(~est & ~truth))
    if tp + fp > 0:
        p = 100.0 * tp / (tp + fp)
    else:
        p = 100.0 if tp + fn == 0 else 0.0
    if tp + fn > 0:
        r = 100.0 * tp / (tp + fn)
    else:
        r = 100.0 if tp + fp == 0 else 0.0
    return DeviceConfusion(tp, fp, fn, tn, p, r, f_score(p, r))


def f_score(p: float, r: float) -> float:
    """Harmonic mean of precision and recall (percent); zero when both are zero."""
    if p < 0 or r < 0:
        raise MetricError("precision and recall must be nonnegative")
    if p + r == 0:
        return 0.0
    return 2.0 * p * r / (p + r)


def metric_set(estimates: np.ndarray, truths: np.ndarray, aggregates: np.ndarray,
               est_flags: np.ndarray, truth_flags: np.ndarray) -> MetricSet:
    """Bundle accuracy and per-device on/off metrics for a test horizon.

    ``estimates``/``truths`` are (K, L, omega) watts, ``aggregates`` (K, omega),
    flags (K, L). Device averages are unweighted means.
    """
    acc = disagg_accuracy(estimates, truths, aggregates)
    est_flags = np.asarray(est_flags, dtype=bool)
    truth_flags = np.asarray(truth_flags, dtype=bool)
    per_device = [precision_recall(est_flags[:, i], truth_flags[:, i])
                  for i in range(est_flags.shape[1])]
    p = float(np.mean([c.precision for c in per_device]))
    r = float(np.mean([c.recall for c in per_device]))
    f = float(np.mean([c.f_score for c in per_device]))
    return MetricSet(acc, per_device, p, r, f)
