"""Versioned checkpoint container.

One file: magic, format version, a length-prefixed JSON header (model
hyperparameters, run config snapshot, training step, array directory,
optional RNG/optimizer bookkeeping) followed by the raw little-endian
float64 array blobs in directory order. Writing is a pure function of the
content, so save -> load -> save is byte-identical.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .nets import FlowModel

MAGIC = b"AFLOWCK1"
FORMAT_VERSION = 1


def _collect_arrays(model: FlowModel, training_state: dict | None) -> dict:
    arrays = {f"param/{p.name}": p.data for p in model.all_parameters()}
    if training_state is not None:
        for kind in ("optimizer", "adv_optimizer"):
            for moment in ("m", "v"):
                for name, arr in training_state[kind][moment].items():
                    arrays[f"{kind}/{moment}/{name}"] = np.asarray(arr)
    return arrays


def save_checkpoint(path, model: FlowModel, run_config: dict, step: int,
                    training_state: dict | None = None) -> None:
    arrays = _collect_arrays(model, training_state)
    names = sorted(arrays)
    directory = [{"name": n, "shape": list(arrays[n].shape)} for n in names]
    header = {
        "format_version": FORMAT_VERSION,
        "hyperparams": model.hyperparams(),
        "run_config": run_config,
        "step": int(step),
        "arrays": directory,
    }
    if training_state is not None:
        header["training"] = {
            "step": int(training_state["step"]),
            "rng_state": training_state["rng_state"],
            "optimizer_t": training_state["optimizer"]["t"],
            "adv_optimizer_t": training_state["adv_optimizer"]["t"],
        }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(arrays[n], dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple:
    """Returns (model, run_config, step, training_state-or-None)."""
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + hlen].decode())
    if header["format_version"] != FORMAT_VERSION:
        raise ValueError(
            f"unsupported checkpoint format version {header['format_version']}")
    model = FlowModel.from_hyperparams(header["hyperparams"])
    arrays = {}
    offset = 16 + hlen
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
        arrays[entry["name"]] = arr.reshape(shape).astype(np.float64)
        offset += count * 8
    for p in model.all_parameters():
        key = f"param/{p.name}"
        if key not in arrays or arrays[key].shape != p.data.shape:
            raise ValueError(f"checkpoint missing or mismatched parameter {p.name}")
        p.data[...] = arrays[key]

    training_state = None
    if "training" in header:
        tr = header["training"]
        training_state = {
            "step": tr["step"],
            "rng_state": tr["rng_state"],
            "optimizer": {
                "m": {k[len("optimizer/m/"):]: v for k, v in arrays.items()
                      if k.startswith("optimizer/m/")},
                "v": {k[len("optimizer/v/"):]: v for k, v in arrays.items()
                      if k.startswith("optimizer/v/")},
                "t": tr["optimizer_t"],
            },
            "adv_optimizer": {
                "m": {k[len("adv_optimizer/m/"):]: v for k, v in arrays.items()
                      if k.startswith("adv_optimizer/m/")},
                "v": {k[len("adv_optimizer/v/"):]: v for k, v in arrays.items()
                      if k.startswith("adv_optimizer/v/")},
                "t": tr["adv_optimizer_t"],
            },
        }
    return model, header["run_config"], header["step"], training_state
