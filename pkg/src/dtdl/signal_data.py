"""Loading, resampling, windowing, splitting, and synthesis of appliance power signals.

Power values are watts, timestamps are seconds. A house is a mains channel
plus one channel per device; training operates on fixed-length windows
("snippets") cut from the device signals, with each aggregate window defined
as the elementwise sum of the device windows.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .seeding import spawn_rng

# Relative tolerance for the aggregate-consistency check on a windowed dataset.
AGGREGATE_RTOL = 1e-6


class SignalError(ValueError):
    """Malformed channel data, manifest, or windowing request."""


@dataclass
class RawChannel:
    """One metered channel: strictly increasing timestamps and nonnegative watts.

    ``device_id`` 0 is the mains (whole-house) channel; devices are 1..L.
    """

    device_id: int
    timestamps: np.ndarray
    watts: np.ndarray

    def __post_init__(self) -> None:
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        self.watts = np.asarray(self.watts, dtype=np.float64)
        if self.timestamps.shape != self.watts.shape or self.timestamps.ndim != 1:
            raise SignalError("timestamps and watts must be 1-D arrays of equal length")
        if not np.all(np.isfinite(self.timestamps)):
            raise SignalError("non-finite timestamp in channel %d" % self.device_id)
        if self.timestamps.size > 1 and not np.all(np.diff(self.timestamps) > 0):
            raise SignalError("timestamps not strictly increasing in channel %d" % self.device_id)
        if not np.all(np.isfinite(self.watts)):
            raise SignalError("non-finite power value in channel %d" % self.device_id)
        if np.any(self.watts < 0):
            bad = int(np.argmax(self.watts < 0))
            raise SignalError(
                "negative power %.6g at row %d of channel %d (rejected, not clamped)"
                % (self.watts[bad], bad, self.device_id)
            )


@dataclass
class Scaler:
    """Affine normalization y_norm = (y - offset) / scale, stored with the model."""

    scale: float
    offset: float = 0.0

    def __post_init__(self) -> None:
        if not (self.scale > 0):
            raise SignalError("scaler scale must be positive")

    def normalize(self, watts: np.ndarray) -> np.ndarray:
        return (np.asarray(watts, dtype=np.float64) - self.offset) / self.scale

    def denormalize(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values, dtype=np.float64) * self.scale + self.offset


@dataclass
class WindowedDataset:
    """Device and aggregate snippets of length ``omega``.

    ``device_snippets`` has shape (K, L, omega) and ``aggregate_snippets``
    (K, omega); window k of device i covers samples [k*omega, (k+1)*omega).
    """

    omega: int
    device_snippets: np.ndarray
    aggregate_snippets: np.ndarray
    scaler: Scaler

    @property
    def window_count(self) -> int:
        return self.device_snippets.shape[0]

    @property
    def device_count(self) -> int:
        return self.device_snippets.shape[1]

    def validate(self) -> None:
        """Check shape and aggregate-consistency invariants."""
        k, _, omega = self.device_snippets.shape
        if self.aggregate_snippets.shape != (k, omega) or omega != self.omega:
            raise SignalError("snippet arrays have inconsistent shapes")
        total = self.device_snippets.sum(axis=1)
        denom = np.maximum(np.abs(self.aggregate_snippets), 1.0)
        if not np.all(np.abs(total - self.aggregate_snippets) <= AGGREGATE_RTOL * denom):
            raise SignalError("aggregate snippets do not equal the sum of device snippets")


@dataclass
class ApplianceState:
    power_watts: float
    mean_dwell: float  # samples; dwell is geometric with this mean


@dataclass
class ApplianceModel:
    name: str
    states: list[ApplianceState]


@dataclass
class SyntheticSpec:
    """Finite-state appliance descriptions plus noise and duration for synthesis."""

    device_models: list[ApplianceModel]
    duration: int
    noise_std: float
    seed: int

    def __post_init__(self) -> None:
        if self.duration < 1:
            raise SignalError("duration must be at least 1 sample")
        if self.noise_std < 0:
            raise SignalError("noise_std must be nonnegative")
        for model in self.device_models:
            if not model.states:
                raise SignalError("appliance %r has no states" % model.name)
            for st in model.states:
                if st.power_watts < 0:
                    raise SignalError("appliance %r has a negative power level" % model.name)
                if st.mean_dwell < 1:
                    raise SignalError("appliance %r has a dwell time below 1 sample" % model.name)

    @classmethod
    def from_json_dict(cls, payload: dict) -> "SyntheticSpec":
        known = {"device_models", "duration", "noise_std", "seed"}
        unknown = set(payload) - known
        if unknown:
            raise SignalError("unknown synthetic spec keys: %s" % sorted(unknown))
        models = []
        for entry in payload["device_models"]:
            states = [ApplianceState(float(s["power_watts"]), float(s["mean_dwell"]))
                      for s in entry["states"]]
            models.append(ApplianceModel(str(entry["name"]), states))
        return cls(models, int(payload["duration"]), float(payload["noise_std"]),
                   int(payload["seed"]))

    def to_json_dict(self) -> dict:
        return {
            "device_models": [
                {"name": m.name,
                 "states": [{"power_watts": s.power_watts, "mean_dwell": s.mean_dwell}
                            for s in m.states]}
                for m in self.device_models
            ],
            "duration": self.duration,
            "noise_std": self.noise_std,
            "seed": self.seed,
        }


def aggregate(device_signals) -> np.ndarray:
    """Elementwise sum of per-device signals of equal length."""
    signals = [np.asarray(s, dtype=np.float64) for s in device_signals]
    if not signals:
        raise SignalError("no device signals to aggregate")
    length = signals[0].shape[0]
    for i, s in enumerate(signals):
        if s.ndim != 1:
            raise SignalError("device %d signal is not 1-D" % i)
        if s.shape[0] != length:
            raise SignalError(
                "device %d has length %d, expected %d" % (i, s.shape[0], length)
            )
        if not np.all(np.isfinite(s)):
            raise SignalError("device %d signal contains non-finite values" % i)
    return np.sum(signals, axis=0)


def resample_to_1hz(channel: RawChannel, source_rate: float) -> RawChannel:
    """Mean-decimate a channel sampled at an integer rate down to 1 Hz.

    Every output sample is the arithmetic mean of the source samples falling
    in its 1-second bin, which preserves total energy over complete bins.
    A trailing bin with fewer than ``source_rate`` samples is dropped.
    """
    if source_rate < 1 or abs(source_rate - round(source_rate)) > 1e-9:
        raise SignalError("source rate %r is not an integer multiple of 1 Hz" % source_rate)
    rate = int(round(source_rate))
    t = channel.timestamps
    if t.size == 0:
        return RawChannel(channel.device_id, t.copy(), channel.watts.copy())
    gaps = np.diff(t)
    bad = np.nonzero(gaps > 1.0 + 1e-9)[0]
    if bad.size:
        extents = ", ".join("[%.6g, %.6g]" % (t[i], t[i + 1]) for i in bad)
        raise SignalError("gaps longer than one 1-second bin in channel %d: %s"
                          % (channel.device_id, extents))
    if rate == 1:
        return RawChannel(channel.device_id, t.copy(), channel.watts.copy())
    bins = np.floor(t - t[0]).astype(np.int64)
    counts = np.bincount(bins)
    sums = np.bincount(bins, weights=channel.watts)
    if counts[-1] < rate:  # trailing partial second
        counts = counts[:-1]
        sums = sums[:-1]
    if counts.size == 0:
        raise SignalError("channel %d too short to resample" % channel.device_id)
    means = sums / counts
    out_t = t[0] + np.arange(counts.size, dtype=np.float64)
    return RawChannel(channel.device_id, out_t, means)


def make_windows(device_signals, omega: int, scaler_windows: int | None = None) -> WindowedDataset:
    """Cut L equal-length device signals into K = floor(T/omega) snippets.

    The trailing ``T mod omega`` samples are dropped. The scaler is the max
    aggregate sample over the first ``scaler_windows`` windows (all windows
    when None); `split_dataset` recomputes it from the training partition.
    """
    if omega < 2:
        raise SignalError("window length must be at least 2 samples")
    signals = np.asarray([np.asarray(s, dtype=np.float64) for s in device_signals])
    if signals.ndim != 2:
        raise SignalError("device signals must share one length")
    n_devices, total = signals.shape
    if total < omega:
        raise SignalError("signal length %d is shorter than one window (%d)" % (total, omega))
    k = total // omega
    used = signals[:, : k * omega]
    device_snippets = used.reshape(n_devices, k, omega).transpose(1, 0, 2).copy()
    agg = aggregate(used).reshape(k, omega)
    limit = k if scaler_windows is None else int(scaler_windows)
    if not (0 < limit <= k):
        raise SignalError("scaler_windows out of range")
    peak = float(agg[:limit].max()) if agg[:limit].size else 0.0
    scaler = Scaler(scale=peak if peak > 0 else 1.0)
    ds = WindowedDataset(omega, device_snippets, agg, scaler)
    ds.validate()
    return ds


def _slice_windows(ds: WindowedDataset, start: int, stop: int, scaler: Scaler) -> WindowedDataset:
    return WindowedDataset(
        ds.omega,
        ds.device_snippets[start:stop].copy(),
        ds.aggregate_snippets[start:stop].copy(),
        scaler,
    )


def split_dataset(ds: WindowedDataset, boundary: int):
    """Split into (train, validation, test) at a window boundary.

    Windows before ``boundary`` are divided 80/20 in chronological order into
    train and validation; windows from ``boundary`` on become the test set.
    All three parts share a scaler computed from the training windows only.
    """
    k = ds.window_count
    if not (0 < boundary < k):
        raise SignalError("boundary %d does not leave both a pre-test and a test partition"
                          % boundary)
    n_train = (4 * boundary) // 5
    n_val = boundary - n_train
    if n_train == 0 or n_val == 0:
        raise SignalError("80/20 split of %d windows leaves an empty partition" % boundary)
    peak = float(ds.aggregate_snippets[:n_train].max())
    scaler = Scaler(scale=peak if peak > 0 else 1.0)
    train = _slice_windows(ds, 0, n_train, scaler)
    val = _slice_windows(ds, n_train, boundary, scaler)
    test = _slice_windows(ds, boundary, k, scaler)
    return train, val, test


def synth_household(spec: SyntheticSpec, omega: int):
    """Simulate a house of finite-state appliances.

    Returns ``(signals, on_truth)`` where ``signals`` is (L, T) watts with
    clipped Gaussian noise and ``on_truth`` is (K, L) booleans marking windows
    in which any state with positive power was active. Deterministic in the
    spec seed. Dwell times are geometric with each state's mean.
    """
    if omega < 2:
        raise SignalError("window length must be at least 2 samples")
    total = spec.duration
    n_devices = len(spec.device_models)
    state_power = np.zeros((n_devices, total))
    for i, model in enumerate(spec.device_models):
        rng = spawn_rng(spec.seed, "synth", "device", str(i))
        pos = 0
        idx = 0
        while pos < total:
            st = model.states[idx]
            dwell = int(rng.geometric(1.0 / st.mean_dwell))
            state_power[i, pos : pos + dwell] = st.power_watts
            pos += dwell
            idx = (idx + 1) % len(model.states)
    signals = state_power.copy()
    if spec.noise_std > 0:
        noise_rng = spawn_rng(spec.seed, "synth", "noise")
        signals = np.clip(signals + noise_rng.normal(0.0, spec.noise_std, signals.shape), 0.0, None)
    k = total // omega
    on_truth = np.zeros((k, n_devices), dtype=bool)
    for w in range(k):
        seg = state_power[:, w * omega : (w + 1) * omega]
        on_truth[w] = (seg > 0).any(axis=1)
    return signals, on_truth


def load_channel_csv(path, device_id: int) -> RawChannel:
    """Parse a header-less ``timestamp_s,watts`` CSV into a channel."""
    path = Path(path)
    if not path.exists():
        raise SignalError("channel file not found: %s" % path)
    times: list[float] = []
    watts: list[float] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise SignalError("%s:%d: expected 'timestamp_s,watts', got %r"
                                  % (path, lineno, line))
            try:
                times.append(float(parts[0]))
                watts.append(float(parts[1]))
            except ValueError:
                raise SignalError("%s:%d: non-numeric field in %r" % (path, lineno, line)) from None
    return RawChannel(device_id, np.array(times), np.array(watts))


def write_channel_csv(path, channel: RawChannel) -> None:
    """Write a channel as header-less ``timestamp_s,watts`` rows (round-trip exact)."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for t, w in zip(channel.timestamps, channel.watts):
            fh.write("%r,%r\n" % (float(t), float(w)))


def load_house_csv(manifest_path) -> list[RawChannel]:
    """Load all channels named by a house manifest.

    The manifest is JSON ``{"house_id": str, "mains": path, "devices":
    [{"name": str, "path": path}]}`` with channel paths relative to the
    manifest file. Returns the mains channel (device_id 0) followed by the
    device channels in manifest order (device_id 1..L).
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise SignalError("manifest not found: %s" % manifest_path)
    with manifest_path.open("r", encoding="utf-8") as fh:
        try:
            manifest = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SignalError("manifest %s is not valid JSON: %s" % (manifest_path, exc)) from None
    required = {"house_id", "mains", "devices"}
    if set(manifest) != required:
        raise SignalError("manifest keys must be exactly %s" % sorted(required))
    base = manifest_path.parent
    channels = [load_channel_csv(base / manifest["mains"], 0)]
    for i, entry in enumerate(manifest["devices"], start=1):
        if set(entry) != {"name", "path"}:
            raise SignalError("device entry %d must have exactly 'name' and 'path'" % i)
        channels.append(load_channel_csv(base / entry["path"], i))
    return channels


def manifest_device_names(manifest_path) -> list[str]:
    """Device names in manifest order (companion to `load_house_csv`)."""
    with Path(manifest_path).open("r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    return [str(entry["name"]) for entry in manifest["devices"]]
