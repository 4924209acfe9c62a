"""Test-time pipeline: encode an aggregate window, sparse-code it against the
trained dictionary, and decode per-device estimates.

Each window is handled independently: the aggregate snippet is normalized and
encoded, coded over the full dictionary (every device block active), and each
device's code block is decoded through the auto-encoder's decoder from the
feature-space estimate D_i a^i(k). Devices with an exactly zero code block
contribute exactly zero watts; negative decoded samples are clamped to zero.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .lstm_ae import decode, encode
from .metrics import MetricSet, metric_set
from .signal_data import WindowedDataset
from .sparse_coder import lasso_code


@dataclass
class WindowResult:
    codes: np.ndarray      # (N,) full code vector
    estimates: np.ndarray  # (L, omega) watts, clamped at zero
    flags: np.ndarray      # (L,) on/off
    tau: float             # threshold used for the flags


@dataclass
class DisaggregationReport:
    omega: int
    device_names: list[str]
    windows: list[WindowResult]
    totals: np.ndarray     # (L,) watt-samples over the horizon

    @property
    def window_count(self) -> int:
        return len(self.windows)

    def estimates_array(self) -> np.ndarray:
        return np.stack([w.estimates for w in self.windows], axis=0)

    def flags_array(self) -> np.ndarray:
        return np.stack([w.flags for w in self.windows], axis=0)


def on_off(code_block: np.ndarray, tau: float) -> bool:
    """A device is on when its code block's l1 mass exceeds tau."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    return bool(np.sum(np.abs(code_block)) > tau)


def default_tau(codes: np.ndarray) -> float:
    """Relative on/off threshold: exact zero is numerically meaningless after
    iterative coding, so scale with the full code mass."""
    return 1e-4 * max(1.0, float(np.sum(np.abs(codes))))


def disaggregate_window(model, window_watts: np.ndarray) -> WindowResult:
    """Code one aggregate window and decode per-device snippet estimates."""
    window_watts = np.asarray(window_watts, dtype=np.float64)
    normalized = model.scaler.normalize(window_watts)
    feature, _ = encode(model.lstm, normalized)
    codes = lasso_code(feature, model.dictionary, model.hyper.lambda1)
    tau = default_tau(codes)
    L = model.dictionary.device_count
    omega = window_watts.shape[0]
    estimates = np.zeros((L, omega))
    flags = np.zeros(L, dtype=bool)
    for i in range(L):
        block = codes[model.dictionary.block_slice(i)]
        flags[i] = on_off(block, tau)
        if np.any(block != 0.0):
            device_feature = model.dictionary.block(i) @ block
            recon, _ = decode(model.lstm, device_feature, omega)
            estimates[i] = np.clip(model.scaler.denormalize(recon), 0.0, None)
    return WindowResult(codes, estimates, flags, tau)


def disaggregate_windows(model, windows: np.ndarray, device_names=None,
                         threads: int = 1) -> DisaggregationReport:
    """Disaggregate pre-cut aggregate windows (K, omega).

    Windows are independent; with ``threads`` > 1 they are processed in a
    thread pool and reassembled by index, so results do not depend on
    scheduling.
    """
    windows = np.asarray(windows, dtype=np.float64)
    if device_names is None:
        device_names = list(getattr(model, "device_names", [])) or [
            "device_%d" % (i + 1) for i in range(model.dictionary.device_count)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda w: disaggregate_window(model, w), windows))
    else:
        results = [disaggregate_window(model, w) for w in windows]
    totals = np.sum([w.estimates.sum(axis=1) for w in results], axis=0) \
        if results else np.zeros(model.dictionary.device_count)
    return DisaggregationReport(windows.shape[1] if windows.size else model.hyper.omega,
                                device_names, results, totals)


def disaggregate_signal(model, aggregate_watts: np.ndarray, device_names=None,
                        threads: int = 1) -> DisaggregationReport:
    """Window a full aggregate signal and disaggregate every window."""
    aggregate_watts = np.asarray(aggregate_watts, dtype=np.float64)
    omega = model.hyper.omega
    if aggregate_watts.shape[0] < omega:
        raise ValueError("signal of %d samples is shorter than one window (%d)"
                         % (aggregate_watts.shape[0], omega))
    k = aggregate_watts.shape[0] // omega
    windows = aggregate_watts[: k * omega].reshape(k, omega)
    return disaggregate_windows(model, windows, device_names, threads)


def threshold_flags(device_snippets: np.ndarray, on_watts: float) -> np.ndarray:
    """Fallback ground-truth on/off flags: window mean power above a threshold."""
    return device_snippets.mean(axis=2) > on_watts


def evaluate_on_dataset(model, ds: WindowedDataset, truth_flags: np.ndarray | None = None,
                        on_watts: float = 5.0, threads: int = 1) -> MetricSet:
    """Disaggregate a dataset's aggregate snippets and score against its
    device snippets. Truth flags default to the mean-power threshold rule."""
    report = disaggregate_windows(model, ds.aggregate_snippets, threads=threads)
    if truth_flags is None:
        truth_flags = threshold_flags(ds.device_snippets, on_watts)
    return metric_set(report.estimates_array(), ds.device_snippets,
                      ds.aggregate_snippets, report.flags_array(), truth_flags)
