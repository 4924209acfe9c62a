"""Versioned JSON envelopes for trained models.

All three model kinds share one envelope family distinguished by a "kind"
tag. Floats are written in Python's shortest round-trip decimal form (at most
17 significant digits), so loading restores every value bit-exactly and
identical training runs produce byte-identical files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .baselines import CdlModel, SmpModel
from .dictionary_learner import Dictionary
from .lstm_ae import LstmAeParams
from .signal_data import Scaler
from .trainer import DtdlModel, HyperParams

FORMAT_VERSION = 1


class ModelIoError(ValueError):
    """Unreadable or structurally invalid model file."""


@dataclass
class ModelBundle:
    kind: str
    model: object
    device_names: list[str]


def _flat(arr: np.ndarray) -> list[float]:
    return [float(x) for x in np.asarray(arr, dtype=np.float64).ravel()]


def _scaler_dict(scaler: Scaler) -> dict:
    return {"scale": float(scaler.scale), "offset": float(scaler.offset)}


def _hyper_dict(hp: HyperParams) -> dict:
    return {
        "lambda1": hp.lambda1, "lambda2": hp.lambda2, "lambda3": hp.lambda3,
        "lambda4": hp.lambda4, "eta": hp.eta, "epsilon": hp.epsilon,
        "omega": hp.omega, "m": hp.m, "atoms_per_device": hp.atoms_per_device,
        "seed": hp.seed, "max_outer_iters": hp.max_outer_iters,
        "epochs_per_block": hp.epochs_per_block,
        "smoothness_mode": hp.smoothness_mode, "penalty_weight": hp.penalty_weight,
        "dict_step": hp.dict_step, "warmup_epochs": hp.warmup_epochs,
    }


def save_model(bundle_model, path, device_names: list[str] | None = None) -> None:
    """Serialize a DtdlModel, CdlModel, or SmpModel to ``path``."""
    if isinstance(bundle_model, DtdlModel):
        payload = {
            "version": FORMAT_VERSION,
            "kind": "dtdl",
            "hyper": _hyper_dict(bundle_model.hyper),
            "scaler": _scaler_dict(bundle_model.scaler),
            "lstm": {
                "m": bundle_model.lstm.m,
                "block_order": "aifo",
                "W": _flat(bundle_model.lstm.W),
                "U": _flat(bundle_model.lstm.U),
                "b": _flat(bundle_model.lstm.b),
                "readout_v": _flat(bundle_model.lstm.readout_v),
                "readout_c": float(bundle_model.lstm.readout_c),
            },
            "dictionary": {
                "d": bundle_model.dictionary.d,
                "per_device_atoms": list(bundle_model.dictionary.per_device_atoms),
                "data": _flat(bundle_model.dictionary.D),
            },
            "device_names": list(device_names or bundle_model.device_names),
            "converged": bool(bundle_model.converged),
        }
    elif isinstance(bundle_model, CdlModel):
        payload = {
            "version": FORMAT_VERSION,
            "kind": "cdl",
            "omega": bundle_model.omega,
            "lam1": float(bundle_model.lam1),
            "scaler": _scaler_dict(bundle_model.scaler),
            "dictionary": {
                "d": bundle_model.omega,
                "per_device_atoms": list(bundle_model.per_device_atoms),
                "data": _flat(bundle_model.D_signal),
            },
            "device_names": list(device_names or []),
        }
    elif isinstance(bundle_model, SmpModel):
        payload = {
            "version": FORMAT_VERSION,
            "kind": "smp",
            "omega": bundle_model.omega,
            "mean_snippets": _flat(bundle_model.mean_snippets),
            "on_fraction": _flat(bundle_model.on_fraction),
            "device_count": int(bundle_model.mean_snippets.shape[0]),
            "device_names": list(device_names or []),
        }
    else:
        raise ModelIoError("cannot serialize %r" % type(bundle_model).__name__)
    with Path(path).open("w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def load_model(path) -> ModelBundle:
    """Load any model envelope; returns (kind, model, device_names)."""
    path = Path(path)
    if not path.exists():
        raise ModelIoError("model file not found: %s" % path)
    with path.open("r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelIoError("model file %s is not valid JSON: %s" % (path, exc)) from None
    version = payload.get("version")
    if version != FORMAT_VERSION:
        raise ModelIoError("unsupported model format version %r" % version)
    kind = payload.get("kind")
    names = [str(n) for n in payload.get("device_names", [])]
    if kind == "dtdl":
        hyper = HyperParams(**payload["hyper"])
        m = int(payload["lstm"]["m"])
        lstm = LstmAeParams(
            m,
            np.array(payload["lstm"]["W"]),
            np.array(payload["lstm"]["U"]).reshape(4 * m, m),
            np.array(payload["lstm"]["b"]),
            np.array(payload["lstm"]["readout_v"]),
            float(payload["lstm"]["readout_c"]),
        )
        dd = payload["dictionary"]
        atoms = [int(a) for a in dd["per_device_atoms"]]
        dictionary = Dictionary(int(dd["d"]), atoms,
                                np.array(dd["data"]).reshape(int(dd["d"]), sum(atoms)))
        scaler = Scaler(**payload["scaler"])
        model = DtdlModel(lstm, dictionary, scaler, hyper, [], names,
                          bool(payload.get("converged", False)))
        return ModelBundle("dtdl", model, names)
    if kind == "cdl":
        dd = payload["dictionary"]
        atoms = [int(a) for a in dd["per_device_atoms"]]
        omega = int(payload["omega"])
        model = CdlModel(omega, atoms,
                         np.array(dd["data"]).reshape(omega, sum(atoms)),
                         Scaler(**payload["scaler"]), float(payload["lam1"]))
        return ModelBundle("cdl", model, names)
    if kind == "smp":
        omega = int(payload["omega"])
        count = int(payload["device_count"])
        model = SmpModel(omega,
                         np.array(payload["mean_snippets"]).reshape(count, omega),
                         np.array(payload["on_fraction"]))
        return ModelBundle("smp", model, names)
    raise ModelIoError("unknown model kind %r" % kind)
