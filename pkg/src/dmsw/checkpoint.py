"""Self-describing JSON model checkpoints."""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import numpy as np

from .embed import AutoencoderParams, RefinerParams
from .features import WindowConfig
from .train import ModelParams, TrainConfig

FORMAT_TAG = "dmsw-checkpoint/1"
_AE_KEYS = ("enc_W", "enc_b", "dec_W", "dec_b", "mean", "scale")
_REFINER_KEYS = ("W1", "b1", "W2", "b2")


class CheckpointError(ValueError):
    pass


def _pack(a) -> dict:
    a = np.asarray(a, dtype=float)
    return {"shape": list(a.shape), "data": a.ravel(order="C").tolist()}


def _unpack(entry) -> np.ndarray:
    return np.asarray(entry["data"], dtype=float).reshape(entry["shape"], order="C")


def model_arrays(model: ModelParams) -> dict[str, np.ndarray]:
    out = {f"ae_{k}": getattr(model.ae, k) for k in _AE_KEYS}
    for prefix, r in (("txt", model.text_refiner), ("num", model.num_refiner)):
        out.update({f"{prefix}_{k}": getattr(r, k) for k in _REFINER_KEYS})
    for k in ("clf_W1", "clf_b1", "clf_W2", "clf_b2", "feat_mean", "feat_scale"):
        out[k] = getattr(model, k)
    return out


def checkpoint_document(model: ModelParams, config: dict | None = None) -> dict:
    window = dataclasses.asdict(model.window)
    if window["window_sizes"] is not None:
        window["window_sizes"] = list(window["window_sizes"])
    return {
        "format": FORMAT_TAG,
        "config": config or {},
        "periods": model.periods,
        "window": window,
        "train": dataclasses.asdict(model.cfg),
        "index_map": [ix.column for ix in model.index_map],
        "arrays": {k: _pack(v) for k, v in model_arrays(model).items()},
    }


def save_model(model: ModelParams, path, config: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(checkpoint_document(model, config), indent=1) + "\n", encoding="utf-8")
    return path


def load_model(path) -> tuple[ModelParams, dict]:
    """Return the model and the config echo stored with it."""
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not a JSON checkpoint ({exc})") from None
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_TAG:
        raise CheckpointError(f"{path}: unsupported checkpoint format {doc.get('format') if isinstance(doc, dict) else None!r}")
    try:
        arr = {k: _unpack(v) for k, v in doc["arrays"].items()}
        window = dict(doc["window"])
        if window["window_sizes"] is not None:
            window["window_sizes"] = tuple(window["window_sizes"])
        ae = AutoencoderParams(*(arr[f"ae_{k}"] for k in _AE_KEYS))
        txt = RefinerParams(*(arr[f"txt_{k}"] for k in _REFINER_KEYS))
        num = RefinerParams(*(arr[f"num_{k}"] for k in _REFINER_KEYS))
        model = ModelParams(ae, txt, num, arr["clf_W1"], arr["clf_b1"], arr["clf_W2"], arr["clf_b2"],
                            WindowConfig(**window), int(doc["periods"]), TrainConfig(**doc["train"]),
                            arr["feat_mean"], arr["feat_scale"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: malformed checkpoint ({exc})") from None
    if [ix.column for ix in model.index_map] != doc["index_map"]:
        raise CheckpointError(f"{path}: stored index map does not match the window configuration")
    return model, doc.get("config", {})
