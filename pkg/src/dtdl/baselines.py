"""Comparison methods: classic signal-space dictionary learning and simple
mean prediction.

Classic dictionary learning (CDL) codes each window with at most one unit-norm
atom per device, binary coefficients, and trains by alternating exact
per-device coding with the constrained least-squares dictionary update reused
from the feature-space learner, applied to raw normalized snippets. Simple
mean prediction (SMP) predicts each device's training-mean snippet in every
window.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dictionary_learner import Dictionary, dual_ascent, project_columns
from .signal_data import Scaler, WindowedDataset


@dataclass
class CdlModel:
    """Signal-space dictionary (omega x N, unit-ball columns) with device blocks."""

    omega: int
    per_device_atoms: list[int]
    D_signal: np.ndarray
    scaler: Scaler
    lam1: float

    @property
    def device_count(self) -> int:
        return len(self.per_device_atoms)

    def block_slice(self, device: int) -> slice:
        start = int(sum(self.per_device_atoms[:device]))
        return slice(start, start + self.per_device_atoms[device])

    def block(self, device: int) -> np.ndarray:
        return self.D_signal[:, self.block_slice(device)]


@dataclass
class SmpModel:
    """Per-device training-mean snippets (watts) and on-fractions."""

    omega: int
    mean_snippets: np.ndarray  # (L, omega)
    on_fraction: np.ndarray    # (L,)


def cdl_code(window: np.ndarray, model: CdlModel, lam1: float | None = None) -> np.ndarray:
    """Greedy binary coding of one normalized window.

    Repeatedly adds the (device, atom) pair that most reduces the squared
    residual plus a lam1 activation penalty per selected atom, at most one
    atom per device, stopping when no addition helps. Returns the 0/1
    indicator over all N atoms.
    """
    if lam1 is None:
        lam1 = model.lam1
    window = np.asarray(window, dtype=np.float64)
    code = np.zeros(model.D_signal.shape[1])
    residual = window.copy()
    available = set(range(model.device_count))
    current = float(residual @ residual)
    while available:
        best = None
        best_cost = current
        for dev in available:
            block = model.block(dev)
            for j in range(block.shape[1]):
                r = residual - block[:, j]
                cost = float(r @ r) + lam1
                if cost < best_cost - 1e-12:
                    best_cost = cost
                    best = (dev, j)
        if best is None:
            break
        dev, j = best
        sl = model.block_slice(dev)
        code[sl.start + j] = 1.0
        residual = residual - model.block(dev)[:, j]
        current = float(residual @ residual)
        available.discard(dev)
    return code


def _best_single_atom(snippet: np.ndarray, block: np.ndarray, lam1: float) -> int:
    """Exact at-most-one-atom code for a device-pure snippet; -1 means none."""
    base = float(snippet @ snippet)
    best, best_cost = -1, base
    for j in range(block.shape[1]):
        r = snippet - block[:, j]
        cost = float(r @ r) + lam1
        if cost < best_cost - 1e-12:
            best_cost = cost
            best = j
    return best


def cdl_train(ds: WindowedDataset, lam1: float, iters: int,
              per_device_atoms: list[int], rng: np.random.Generator) -> CdlModel:
    """Alternate exact per-device coding with the dual-ascent dictionary update.

    Operates on scaler-normalized device snippets; the dictionary update is
    the signal-space analogue of the feature-space one, with raw snippets in
    place of encodings.
    """
    K, L, omega = ds.device_snippets.shape
    snippets = np.stack([
        ds.scaler.normalize(ds.device_snippets[k, i])
        for k in range(K) for i in range(L)
    ], axis=1)  # (omega, K*L), column k*L + i
    n_atoms = int(sum(per_device_atoms))

    cols = []
    for i in range(L):
        picks = rng.integers(0, K, size=per_device_atoms[i])
        cols.extend(ds.scaler.normalize(ds.device_snippets[int(k), i]) for k in picks)
    dictionary = project_columns(Dictionary(omega, list(per_device_atoms), np.array(cols).T))

    for _ in range(iters):
        codes = np.zeros((n_atoms, K * L))
        for k in range(K):
            for i in range(L):
                col = k * L + i
                sl = dictionary.block_slice(i)
                j = _best_single_atom(snippets[:, col], dictionary.block(i), lam1)
                if j >= 0:
                    codes[sl.start + j, col] = 1.0
        result = dual_ascent(snippets, codes, list(per_device_atoms))
        # dual ascent stops at its KKT tolerance; projection restores the
        # strict unit bound without moving any atom's direction
        dictionary = project_columns(result.dictionary)
    return CdlModel(omega, list(per_device_atoms), dictionary.D, ds.scaler, lam1)


def cdl_estimate_window(window_watts: np.ndarray, model: CdlModel):
    """Per-device watt estimates and on-flags for one aggregate window."""
    normalized = model.scaler.normalize(window_watts)
    code = cdl_code(normalized, model)
    L = model.device_count
    estimates = np.zeros((L, model.omega))
    flags = np.zeros(L, dtype=bool)
    for i in range(L):
        block_code = code[model.block_slice(i)]
        if np.any(block_code != 0):
            flags[i] = True
            estimates[i] = np.clip(model.scaler.denormalize(model.block(i) @ block_code), 0, None)
    return estimates, flags


def smp_train(ds: WindowedDataset, on_watts: float = 5.0) -> SmpModel:
    """Mean snippet per device plus the fraction of training windows on.

    A window counts as on when its mean power exceeds ``on_watts``.
    """
    means = ds.device_snippets.mean(axis=0)  # (L, omega)
    window_power = ds.device_snippets.mean(axis=2)  # (K, L)
    on_fraction = (window_power > on_watts).mean(axis=0)
    return SmpModel(ds.omega, means, on_fraction)


def smp_predict(model: SmpModel, window_count: int):
    """Constant per-window prediction: the training-mean snippet per device.

    Flags are on for devices on in more than half the training windows.
    Returns (estimates (K, L, omega), flags (K, L)).
    """
    L = model.mean_snippets.shape[0]
    estimates = np.broadcast_to(model.mean_snippets,
                                (window_count, L, model.omega)).copy()
    flags = np.broadcast_to(model.on_fraction > 0.5, (window_count, L)).copy()
    return estimates, flags
