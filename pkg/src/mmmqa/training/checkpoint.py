"""Binary checkpoints: magic, JSON manifest, then little-endian float64 blocks.

Layout::

    b"MMMCKPT1" | uint64 LE manifest length | manifest (UTF-8 JSON) | blocks

The manifest lists every block's name and shape in payload order and
carries a SHA-256 over the manifest (with an empty checksum field) and the
payload.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from .. import autodiff as ad
from ..data.text import Vocabulary
from ..encoder import EncoderConfig, TransformerEncoder
from ..errors import CheckpointError
from ..man import build_classifier
from ..model import MMMModel

MAGIC = b"MMMCKPT1"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    model: MMMModel
    optimizer: Optional[Dict[str, Dict[str, np.ndarray]]]
    trainer: Optional[dict]
    manifest: dict


def _digest(manifest: dict, payload: bytes) -> str:
    body = dict(manifest, checksum="")
    h = hashlib.sha256(json.dumps(body, sort_keys=True).encode("utf-8"))
    h.update(payload)
    return h.hexdigest()


def save_checkpoint(path, model: MMMModel, optimizer_state=None, trainer: Optional[dict] = None) -> None:
    """Write ``model`` (plus optional optimizer moments and trainer state) atomically.

    ``optimizer_state`` is an :class:`~mmmqa.autodiff.OptimizerState` whose
    moment lists follow ``model.named_parameters()`` order.
    """
    named = model.named_parameters()
    blocks = [(f"param:{k}", v.data) for k, v in named.items()]
    opt_meta = None
    if optimizer_state is not None:
        names = list(named)
        if len(optimizer_state.first_moment) != len(names):
            raise CheckpointError("optimizer state does not match the model's parameters")
        blocks += [(f"adam.m:{n}", m) for n, m in zip(names, optimizer_state.first_moment)]
        blocks += [(f"adam.v:{n}", v) for n, v in zip(names, optimizer_state.second_moment)]
        opt_meta = {"step": optimizer_state.step}
    clf = model.classifier
    manifest = {
        "format_version": FORMAT_VERSION,
        "precision": "f32" if blocks and blocks[0][1].dtype == np.float32 else "f64",
        "encoder": model.encoder.config.to_dict(),
        "classifier": None if clf is None else {"kind": clf.kind, "steps": clf.steps, "dropout": clf.dropout},
        "pair_head": None if model.pair_head is None else {
            "n_classes": int(model.pair_head.params["out_bias"].shape[0]), "dropout": model.pair_head.dropout},
        "vocab": model.vocab.to_list(),
        "model": {"aggregation": model.aggregation, "sliding_window": model.sliding_window,
                  "version": model.version},
        "optimizer": opt_meta,
        "trainer": trainer,
        "blocks": [{"name": n, "shape": list(a.shape)} for n, a in blocks],
        "checksum": "",
    }
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in blocks)
    manifest["checksum"] = _digest(manifest, payload)
    head = json.dumps(manifest, sort_keys=True).encode("utf-8")
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<Q", len(head)))
            fh.write(head)
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path) -> Checkpoint:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except FileNotFoundError:
        raise CheckpointError(f"{path}: no such file") from None
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    if len(raw) < 16:
        raise CheckpointError(f"{path}: truncated header")
    (n,) = struct.unpack("<Q", raw[8:16])
    if 16 + n > len(raw):
        raise CheckpointError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(raw[16:16 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise CheckpointError(f"{path}: manifest is corrupt") from None
    if not isinstance(manifest, dict) or manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {manifest.get('format_version')!r}")
    payload = raw[16 + n:]
    expected = sum(8 * int(np.prod(b["shape"], dtype=np.int64)) for b in manifest["blocks"])
    if len(payload) != expected:
        raise CheckpointError(f"{path}: payload is {len(payload)} bytes, expected {expected}")
    if _digest(manifest, payload) != manifest.get("checksum"):
        raise CheckpointError(f"{path}: checksum mismatch")

    dtype = np.float32 if manifest["precision"] == "f32" else np.float64
    arrays: Dict[str, np.ndarray] = {}
    offset = 0
    for b in manifest["blocks"]:
        count = int(np.prod(b["shape"], dtype=np.int64))
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=offset).reshape(b["shape"])
        arrays[b["name"]] = arr.astype(dtype)
        offset += 8 * count

    model = _rebuild_model(manifest, arrays, dtype)
    optimizer = None
    if manifest["optimizer"] is not None:
        names = list(model.named_parameters())
        optimizer = {
            "step": manifest["optimizer"]["step"],
            "m": [arrays[f"adam.m:{k}"] for k in names],
            "v": [arrays[f"adam.v:{k}"] for k in names],
        }
    return Checkpoint(model, optimizer, manifest["trainer"], manifest)


def _rebuild_model(manifest: dict, arrays: Dict[str, np.ndarray], dtype) -> MMMModel:
    cfg = EncoderConfig(**manifest["encoder"])
    vocab = Vocabulary(manifest["vocab"])
    with ad.precision("f32" if dtype == np.float32 else "f64"):
        model = MMMModel(vocab, TransformerEncoder(cfg), aggregation=manifest["model"]["aggregation"],
                         sliding_window=manifest["model"]["sliding_window"])
        dummy = np.random.default_rng(0)
        clf = manifest["classifier"]
        if clf is not None:
            model.classifier = build_classifier(clf["kind"], cfg.hidden, clf["steps"], dummy, clf["dropout"])
        if manifest["pair_head"] is not None:
            model.new_pair_head(0, manifest["pair_head"]["n_classes"])
            model.pair_head.dropout = manifest["pair_head"]["dropout"]
    model.version = manifest["model"]["version"]
    for name, tensor in model.named_parameters().items():
        key = f"param:{name}"
        if key not in arrays:
            raise CheckpointError(f"checkpoint lacks parameter {name!r}")
        if arrays[key].shape != tensor.shape:
            raise CheckpointError(f"parameter {name!r} has shape {arrays[key].shape}, expected {tensor.shape}")
        tensor.data = arrays[key].copy()
    return model
