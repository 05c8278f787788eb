"""PFLT1 weight files.

Layout: the 5 magic bytes ``PFLT1``, one UTF-8 JSON header line (sorted
keys, terminated by LF) describing the config and the tensor table, then
little-endian float32 tensor payloads in header order. Offsets are
relative to the first byte after the header line. Writing is atomic
(temp file + rename), and load-then-save round-trips byte for byte.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import asdict
from typing import Sequence

import numpy as np

from ..errors import FormatError, IoError, ShapeMismatch
from ..prompts import Verbalizer
from .logistic import LogisticBagConfig, LogisticModel
from .transformer import TransformerConfig, TransformerModel, tensor_spec

MAGIC = b"PFLT1"


def write_weight_file(path: str, config: dict,
                      tensors: Sequence[tuple[str, np.ndarray]]) -> None:
    table = []
    payloads = []
    offset = 0
    for name, arr in tensors:
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        table.append({"name": name, "shape": list(np.shape(arr)), "offset": offset})
        payloads.append(raw)
        offset += len(raw)
    header = json.dumps({"config": config, "tensors": table},
                        sort_keys=True, separators=(",", ":"))
    blob = MAGIC + header.encode("utf-8") + b"\n" + b"".join(payloads)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)) or ".",
                               prefix=".pflt-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_weight_file(path: str) -> tuple[dict, list[tuple[str, np.ndarray]]]:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read weight file {path}: {exc}") from exc
    if not blob.startswith(MAGIC):
        raise FormatError(f"{path}: bad magic, not a PFLT1 file")
    nl = blob.find(b"\n", len(MAGIC))
    if nl < 0:
        raise FormatError(f"{path}: missing header line")
    try:
        header = json.loads(blob[len(MAGIC):nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: bad header ({exc})") from None
    if not isinstance(header, dict) or "config" not in header or "tensors" not in header:
        raise FormatError(f"{path}: header needs 'config' and 'tensors'")
    payload = blob[nl + 1:]
    tensors = []
    for entry in header["tensors"]:
        try:
            name, shape, offset = entry["name"], entry["shape"], entry["offset"]
        except (TypeError, KeyError):
            raise FormatError(f"{path}: malformed tensor table entry") from None
        size = int(np.prod(shape)) if shape else 1
        end = offset + 4 * size
        if end > len(payload):
            raise FormatError(f"{path}: truncated payload for tensor {name!r}")
        arr = np.frombuffer(payload[offset:end], dtype="<f4").reshape(shape)
        tensors.append((name, arr.copy()))
    return header["config"], tensors


# ----------------------------------------------------------------------
# model-level save / load
# ----------------------------------------------------------------------

def save_model(model, path: str) -> None:
    if isinstance(model, LogisticModel):
        config = {"backend": "logistic_bag", **asdict(model.cfg),
                  "verbalizer": dict(model.verbalizer.entries)}
        write_weight_file(path, config, [("weights", model.weights)])
    elif isinstance(model, TransformerModel):
        config = {"backend": "transformer", **asdict(model.cfg),
                  "verbalizer": dict(model.verbalizer.entries)}
        named = model.tensors()
        write_weight_file(path, config, [(n, named[n]) for n, _ in tensor_spec(model.cfg)])
    else:
        raise ShapeMismatch(f"cannot save model of type {type(model).__name__}")


def save_prefix(prefix: np.ndarray, path: str) -> None:
    config = {"backend": "prefix", "prefix_len": int(prefix.shape[0]),
              "feature_dim": int(prefix.shape[1])}
    write_weight_file(path, config, [("prefix", prefix)])


def load_prefix(path: str) -> np.ndarray:
    config, tensors = read_weight_file(path)
    if config.get("backend") != "prefix" or not tensors or tensors[0][0] != "prefix":
        raise FormatError(f"{path}: not a prefix weight file")
    return tensors[0][1].astype(np.float64)


def _verbalizer_from_config(path: str, config: dict) -> Verbalizer:
    vb = config.get("verbalizer")
    if not isinstance(vb, dict):
        raise FormatError(f"{path}: header config is missing the verbalizer")
    return Verbalizer(dict(vb))


def _assemble_transformer(path: str, cfg: TransformerConfig, config: dict,
                          tensors: list[tuple[str, np.ndarray]]) -> TransformerModel:
    expected = tensor_spec(cfg)
    if [n for n, _ in tensors] != [n for n, _ in expected]:
        raise ShapeMismatch(f"{path}: tensor names do not match the configuration")
    flats = []
    for (name, arr), (_, shape) in zip(tensors, expected):
        if tuple(arr.shape) != shape:
            raise ShapeMismatch(
                f"{path}: tensor {name!r} has shape {arr.shape}, expected {shape}")
        flats.append(arr.ravel())
    params = np.concatenate(flats)
    return TransformerModel(cfg, _verbalizer_from_config(path, config), params=params)


def load_transformer(path: str, cfg: TransformerConfig) -> TransformerModel:
    """Load a transformer, validating the file against an expected config."""
    config, tensors = read_weight_file(path)
    if config.get("backend") != "transformer":
        raise FormatError(f"{path}: not a transformer weight file")
    for field in ("layers", "heads", "d_model", "vocab_size", "max_seq_len"):
        if config.get(field) != getattr(cfg, field):
            raise ShapeMismatch(
                f"{path}: header {field}={config.get(field)} does not match "
                f"requested {field}={getattr(cfg, field)}")
    return _assemble_transformer(path, cfg, config, tensors)


def load_model(path: str):
    """Load whichever backend the file declares."""
    config, tensors = read_weight_file(path)
    backend = config.get("backend")
    if backend == "logistic_bag":
        cfg = LogisticBagConfig(
            vocab_size=config["vocab_size"], l2=config["l2"],
            train_epochs=config["train_epochs"],
            learning_rate=config["learning_rate"], seed=config["seed"],
            grad_tol=config.get("grad_tol"))
        if not tensors or tensors[0][0] != "weights":
            raise FormatError(f"{path}: logistic file must carry a 'weights' tensor")
        vb = _verbalizer_from_config(path, config)
        w = tensors[0][1].astype(np.float64)
        if w.shape != (vb.n_labels, cfg.vocab_size + 1):
            raise ShapeMismatch(f"{path}: weights shape {w.shape} does not match config")
        return LogisticModel(cfg, vb, weights=w)
    if backend == "transformer":
        cfg = TransformerConfig(
            layers=config["layers"], heads=config["heads"],
            d_model=config["d_model"], vocab_size=config["vocab_size"],
            max_seq_len=config["max_seq_len"])
        return _assemble_transformer(path, cfg, config, tensors)
    raise FormatError(f"{path}: unknown backend {backend!r}")
