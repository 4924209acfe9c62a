"""Command-line entry point.

Commands: synth, train, disaggregate, eval, sweep, gradcheck. Configuration
comes from a JSON file (--config), overridable key by key with --set
dotted.path=value flags; precedence is flag > file > built-in default. Exit
codes: 0 success, 2 configuration error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import baselines, disaggregator, gradcheck, model_io
from .dictionary_learner import DictionaryError
from .metrics import MetricError, metric_set
from .seeding import spawn_rng
from .signal_data import (
    SignalError,
    SyntheticSpec,
    aggregate,
    load_house_csv,
    make_windows,
    manifest_device_names,
    resample_to_1hz,
    split_dataset,
    synth_household,
    write_channel_csv,
    RawChannel,
)
from .sparse_coder import AdmmOptions, SparseCodingError
from .trainer import HyperParams, NumericAbort, train, validate_grid

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


class ConfigError(ValueError):
    pass


def default_config() -> dict:
    hp = HyperParams()
    admm = AdmmOptions()
    return {
        "seed": 0,
        "out_dir": ".",
        "threads": 1,
        "method": "dtdl",
        "model": None,
        "synth": None,
        "data": {
            "manifest": None,
            "truth": None,
            "boundary": None,
            "source_rate_hz": 1,
        },
        "hyper": {
            "lambda1": hp.lambda1, "lambda2": hp.lambda2, "lambda3": hp.lambda3,
            "lambda4": hp.lambda4, "eta": hp.eta, "epsilon": hp.epsilon,
            "omega": hp.omega, "m": hp.m, "atoms_per_device": hp.atoms_per_device,
            "max_outer_iters": hp.max_outer_iters, "epochs_per_block": hp.epochs_per_block,
            "smoothness_mode": hp.smoothness_mode, "penalty_weight": hp.penalty_weight,
            "dict_step": hp.dict_step, "warmup_epochs": hp.warmup_epochs,
        },
        "admm": {
            "rho": admm.rho, "prox_weight": admm.prox_weight, "max_iters": admm.max_iters,
            "primal_tol": admm.primal_tol, "dual_tol": admm.dual_tol,
        },
        "cdl": {"iters": 5, "lam1": 0.1},
        "eval": {"partition": "test", "on_watts": 5.0},
        "sweep": {
            "m": None, "omega": None, "lambdas": None, "boundary_fraction": 0.5,
        },
        "gradcheck": {"trials": 10, "tolerance": 1e-4},
    }


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = "%s.%s" % (path, key) if path else key
        if key not in base:
            raise ConfigError("unknown config key: %s" % where)
        if isinstance(base[key], dict) and base[key] is not None:
            if not isinstance(value, dict):
                raise ConfigError("config key %s must be an object" % where)
            out[key] = _merge(base[key], value, where)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _apply_set(config: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError("--set expects key=value, got %r" % assignment)
    key, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = config
    parts = key.split(".")
    for part in parts[:-1]:
        if not isinstance(node, dict) or part not in node:
            raise ConfigError("unknown config key: %s" % key)
        if node[part] is None:
            node[part] = {}
        node = node[part]
    leaf = parts[-1]
    if not isinstance(node, dict) or (leaf not in node and parts[0] != "synth"):
        raise ConfigError("unknown config key: %s" % key)
    node[leaf] = value


def load_config(path: str | None, overrides: list[str]) -> dict:
    config = default_config()
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError("config file not found: %s" % p)
        try:
            file_cfg = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError("config file is not valid JSON: %s" % exc) from None
        if not isinstance(file_cfg, dict):
            raise ConfigError("config file must hold a JSON object")
        if "synth" in file_cfg and file_cfg["synth"] is not None:
            synth = file_cfg.pop("synth")
            config = _merge(config, file_cfg)
            config["synth"] = synth
        else:
            config = _merge(config, file_cfg)
    for assignment in overrides:
        _apply_set(config, assignment)
    if config["method"] not in ("dtdl", "cdl", "smp"):
        raise ConfigError("method must be one of dtdl, cdl, smp")
    if not isinstance(config["seed"], int) or config["seed"] < 0:
        raise ConfigError("seed must be a nonnegative integer")
    if not isinstance(config["threads"], int) or config["threads"] < 1:
        raise ConfigError("threads must be a positive integer")
    return config


def _hyper_from_config(config: dict) -> HyperParams:
    try:
        return HyperParams(seed=config["seed"], **config["hyper"])
    except (TypeError, ValueError) as exc:
        raise ConfigError("invalid hyper section: %s" % exc) from None


def _admm_from_config(config: dict) -> AdmmOptions:
    try:
        return AdmmOptions(**config["admm"])
    except (TypeError, ValueError) as exc:
        raise ConfigError("invalid admm section: %s" % exc) from None


def _out_dir(config: dict) -> Path:
    out = Path(config["out_dir"])
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError("cannot create output directory %s: %s" % (out, exc)) from None
    return out


def _meta() -> dict:
    return {"timestamp": datetime.now(timezone.utc).isoformat()}


def _load_signals(config: dict):
    """Channels -> (device_signals (L, T), mains (T,), device_names)."""
    manifest = config["data"]["manifest"]
    if not manifest:
        raise ConfigError("data.manifest is required for this command")
    channels = load_house_csv(manifest)
    names = manifest_device_names(manifest)
    rate = config["data"]["source_rate_hz"]
    if rate != 1:
        channels = [resample_to_1hz(ch, rate) for ch in channels]
    length = min(ch.watts.shape[0] for ch in channels)
    mains = channels[0].watts[:length]
    devices = np.stack([ch.watts[:length] for ch in channels[1:]], axis=0)
    return devices, mains, names


def _windowed_splits(config: dict, devices: np.ndarray, omega: int):
    full = make_windows(devices, omega)
    boundary = config["data"]["boundary"]
    if boundary is None:
        boundary = full.window_count // 2
    boundary = int(boundary)
    train_ds, val_ds, test_ds = split_dataset(full, boundary)
    return full, train_ds, val_ds, test_ds, boundary


def _load_truth_flags(config: dict, omega: int, window_count: int) -> np.ndarray | None:
    path = config["data"]["truth"]
    if not path:
        return None
    p = Path(path)
    if not p.exists():
        raise ConfigError("truth file not found: %s" % p)
    payload = json.loads(p.read_text(encoding="utf-8"))
    if int(payload["omega"]) != omega:
        raise ConfigError("truth file was written for omega=%s, run uses omega=%d"
                          % (payload["omega"], omega))
    flags = np.asarray(payload["flags"], dtype=bool)
    if flags.shape[0] < window_count:
        raise ConfigError("truth file covers %d windows, need %d"
                          % (flags.shape[0], window_count))
    return flags


def cmd_synth(config: dict) -> int:
    if not config["synth"]:
        raise ConfigError("synth section is required")
    spec_dict = dict(config["synth"])
    spec_dict.setdefault("seed", config["seed"])
    try:
        spec = SyntheticSpec.from_json_dict(spec_dict)
    except (KeyError, TypeError, SignalError) as exc:
        raise ConfigError("invalid synth section: %s" % exc) from None
    omega = int(config["hyper"]["omega"])
    out = _out_dir(config)
    signals, on_truth = synth_household(spec, omega)
    timestamps = np.arange(spec.duration, dtype=np.float64)
    names = [m.name for m in spec.device_models]

    entries = []
    for i, name in enumerate(names):
        filename = "device_%d.csv" % (i + 1)
        write_channel_csv(out / filename, RawChannel(i + 1, timestamps, signals[i]))
        entries.append({"name": name, "path": filename})
    mains = aggregate(signals) if len(signals) else np.zeros(spec.duration)
    write_channel_csv(out / "mains.csv", RawChannel(0, timestamps, mains))
    manifest = {"house_id": "synthetic-%d" % spec.seed, "mains": "mains.csv",
                "devices": entries}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n",
                                       encoding="utf-8")
    truth = {"omega": omega, "device_names": names,
             "flags": [[bool(x) for x in row] for row in on_truth]}
    (out / "truth.json").write_text(json.dumps(truth, indent=2) + "\n", encoding="utf-8")
    print("synth: wrote %d device channels, mains, manifest, truth to %s"
          % (len(names), out))
    return EXIT_OK


def _write_training_log(path: Path, log: list[dict]) -> None:
    columns = ["iter", "J", "J1", "J2", "J3", "J4", "smoothness_residual", "dict_delta"]
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in log:
            writer.writerow([row[c] if c == "iter" else repr(float(row[c]))
                             for c in columns])


def cmd_train(config: dict) -> int:
    devices, _, names = _load_signals(config)
    hp = _hyper_from_config(config)
    admm = _admm_from_config(config)
    out = _out_dir(config)
    _, train_ds, _, _, _ = _windowed_splits(config, devices, hp.omega)

    method = config["method"]
    if method == "dtdl":
        model = train(train_ds, hp, device_names=names, admm=admm)
        model_io.save_model(model, out / "model.json")
        _write_training_log(out / "training_log.csv", model.training_log)
        status = "converged" if model.converged else "max_iters"
        print("train: dtdl finished (%s) after %d outer iterations"
              % (status, len(model.training_log)))
    elif method == "cdl":
        rng = spawn_rng(config["seed"], "cdl-init")
        model = baselines.cdl_train(train_ds, config["cdl"]["lam1"], config["cdl"]["iters"],
                                    [hp.atoms_per_device] * train_ds.device_count, rng)
        model_io.save_model(model, out / "model.json", device_names=names)
        _write_training_log(out / "training_log.csv", [])
        print("train: cdl finished (%d alternations)" % config["cdl"]["iters"])
    else:
        model = baselines.smp_train(train_ds, config["eval"]["on_watts"])
        model_io.save_model(model, out / "model.json", device_names=names)
        _write_training_log(out / "training_log.csv", [])
        print("train: smp finished")
    return EXIT_OK


def _estimates_for_windows(bundle: model_io.ModelBundle, windows: np.ndarray,
                           threads: int):
    """(estimates (K, L, omega), flags (K, L), codes list or None)."""
    if bundle.kind == "dtdl":
        report = disaggregator.disaggregate_windows(bundle.model, windows, threads=threads)
        return report.estimates_array(), report.flags_array(), [w.codes for w in report.windows]
    if bundle.kind == "cdl":
        rows = [baselines.cdl_estimate_window(w, bundle.model) for w in windows]
        estimates = np.stack([r[0] for r in rows], axis=0)
        flags = np.stack([r[1] for r in rows], axis=0)
        return estimates, flags, None
    estimates, flags = baselines.smp_predict(bundle.model, windows.shape[0])
    return estimates, flags, None


def cmd_disaggregate(config: dict) -> int:
    if not config["model"]:
        raise ConfigError("model path is required")
    bundle = model_io.load_model(config["model"])
    devices, mains, names = _load_signals(config)
    omega = (bundle.model.hyper.omega if bundle.kind == "dtdl" else bundle.model.omega)
    k = mains.shape[0] // omega
    if k < 1:
        raise ConfigError("aggregate signal shorter than one window")
    windows = mains[: k * omega].reshape(k, omega)
    truth_snippets = devices[:, : k * omega].reshape(devices.shape[0], k, omega)
    truth_snippets = truth_snippets.transpose(1, 0, 2)
    truth_flags = _load_truth_flags(config, omega, k)
    if truth_flags is None:
        truth_flags = disaggregator.threshold_flags(truth_snippets,
                                                    config["eval"]["on_watts"])
    else:
        truth_flags = truth_flags[:k]

    estimates, flags, codes = _estimates_for_windows(bundle, windows, config["threads"])
    out = _out_dir(config)
    windows_payload = []
    for w in range(k):
        windows_payload.append({
            "window": w,
            "codes": None if codes is None else [float(x) for x in codes[w]],
            "estimate_watt_samples": [float(estimates[w, i].sum())
                                      for i in range(estimates.shape[1])],
            "on": [bool(x) for x in flags[w]],
        })
    report = {
        "meta": _meta(),
        "device_names": names,
        "omega": omega,
        "window_count": k,
        "totals_watt_samples": [float(estimates[:, i].sum())
                                for i in range(estimates.shape[1])],
        "windows": windows_payload,
    }
    (out / "report.json").write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    with (out / "report.csv").open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["window", "device", "estimate_watt_samples",
                         "truth_watt_samples", "on_est", "on_truth"])
        for w in range(k):
            for i, name in enumerate(names):
                writer.writerow([w, name,
                                 repr(float(estimates[w, i].sum())),
                                 repr(float(truth_snippets[w, i].sum())),
                                 int(flags[w, i]), int(truth_flags[w, i])])
    print("disaggregate: %d windows, %d devices -> %s" % (k, len(names), out))
    return EXIT_OK


def cmd_eval(config: dict) -> int:
    if not config["model"]:
        raise ConfigError("model path is required")
    bundle = model_io.load_model(config["model"])
    devices, _, names = _load_signals(config)
    omega = (bundle.model.hyper.omega if bundle.kind == "dtdl" else bundle.model.omega)
    full, train_ds, val_ds, test_ds, boundary = _windowed_splits(config, devices, omega)
    partition = config["eval"]["partition"]
    parts = {"train": train_ds, "validation": val_ds, "test": test_ds, "all": full}
    if partition not in parts:
        raise ConfigError("eval.partition must be one of %s" % sorted(parts))
    ds = parts[partition]

    truth_flags_full = _load_truth_flags(config, omega, full.window_count)
    offsets = {"train": 0, "validation": (4 * boundary) // 5, "test": boundary, "all": 0}
    if truth_flags_full is not None:
        start = offsets[partition]
        truth_flags = truth_flags_full[start : start + ds.window_count]
    else:
        truth_flags = disaggregator.threshold_flags(ds.device_snippets,
                                                    config["eval"]["on_watts"])

    estimates, flags, _ = _estimates_for_windows(bundle, ds.aggregate_snippets,
                                                 config["threads"])
    result = metric_set(estimates, ds.device_snippets, ds.aggregate_snippets,
                        flags, truth_flags)
    out = _out_dir(config)
    payload = {
        "meta": _meta(),
        "config": {k: v for k, v in config.items() if k != "synth"},
        "method": bundle.kind,
        "partition": partition,
        "window_count": ds.window_count,
        "acc": result.acc,
        "precision": result.precision,
        "recall": result.recall,
        "f_score": result.f_score,
        "per_device": [
            {"name": names[i] if i < len(names) else "device_%d" % (i + 1),
             "precision": c.precision, "recall": c.recall, "f_score": c.f_score,
             "tp": c.tp, "fp": c.fp, "fn": c.fn, "tn": c.tn}
            for i, c in enumerate(result.per_device)
        ],
    }
    (out / "metrics.json").write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    print("eval: %s on %s partition -> acc %.2f%%, F %.2f%%"
          % (bundle.kind, partition, result.acc, result.f_score))
    return EXIT_OK


def cmd_sweep(config: dict) -> int:
    devices, _, _ = _load_signals(config)
    hp = _hyper_from_config(config)
    sweep_cfg = config["sweep"]
    lambdas = sweep_cfg["lambdas"]
    if lambdas is not None:
        lambdas = [tuple(float(x) for x in triple) for triple in lambdas]
    rows = validate_grid(devices, hp,
                         m_values=sweep_cfg["m"], omega_values=sweep_cfg["omega"],
                         lambda_values=lambdas,
                         boundary_fraction=sweep_cfg["boundary_fraction"],
                         on_watts=config["eval"]["on_watts"])
    out = _out_dir(config)
    with (out / "sweep.csv").open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["m", "omega", "lambda2", "lambda3", "lambda4",
                         "val_acc", "converged"])
        for row in rows:
            writer.writerow([row["m"], row["omega"], repr(row["lambda2"]),
                             repr(row["lambda3"]), repr(row["lambda4"]),
                             repr(float(row["val_acc"])), int(row["converged"])])
    print("sweep: %d cells -> %s" % (len(rows), out / "sweep.csv"))
    return EXIT_OK


def cmd_gradcheck(config: dict) -> int:
    trials = int(config["gradcheck"]["trials"])
    tolerance = float(config["gradcheck"]["tolerance"])
    results = gradcheck.run_all(config["seed"], trials, tolerance)
    width = max(len(r.name) for r in results)
    print("%-*s  %6s  %12s  %s" % (width, "check", "seed", "max_rel_err", "status"))
    failed = 0
    for r in results:
        print("%-*s  %6d  %12.3e  %s"
              % (width, r.name, r.seed, r.max_rel_err, "pass" if r.passed else "FAIL"))
        failed += 0 if r.passed else 1
    print("gradcheck: %d/%d checks passed (tolerance %g)"
          % (len(results) - failed, len(results), tolerance))
    return EXIT_OK if failed == 0 else EXIT_NUMERIC


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "disaggregate": cmd_disaggregate,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "gradcheck": cmd_gradcheck,
}


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="dtdl",
        description="Energy disaggregation: train an LSTM auto-encoder jointly with a "
                    "nonlinear dictionary and decompose aggregate signals per device.")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override a config value (repeatable)")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker threads for window-parallel stages (default 1)")
    args = parser.parse_args(argv)

    try:
        config = load_config(args.config, args.overrides)
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError("threads must be a positive integer")
            config["threads"] = args.threads
        return COMMANDS[args.command](config)
    except (ConfigError, SignalError, model_io.ModelIoError) as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return EXIT_CONFIG
    except NumericAbort as exc:
        print("numeric failure: %s" % exc, file=sys.stderr)
        return EXIT_NUMERIC
    except (DictionaryError, SparseCodingError, MetricError) as exc:
        print("numeric failure: %s" % exc, file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
