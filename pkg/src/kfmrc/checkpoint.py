"""Checkpoint directories: a JSON manifest plus a raw little-endian sidecar.

Layout::

    <dir>/manifest.json   config, parameter table, vocab hash, step, sidecar hash
    <dir>/params.bin      parameter arrays back to back, in manifest order
    <dir>/vocab.txt       optional, one token per line
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .encoder import Vocabulary

__all__ = [
    "FORMAT",
    "CheckpointError",
    "Checkpoint",
    "save_checkpoint",
    "load_checkpoint",
    "save_embeddings",
    "load_embeddings",
]

FORMAT = "kfmrc-checkpoint/1"
MANIFEST, SIDECAR, VOCAB = "manifest.json", "params.bin", "vocab.txt"


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    arrays: dict[str, np.ndarray]
    config: dict[str, Any]
    step: int = 0
    vocab: Vocabulary | None = None
    trainable: dict[str, bool] = field(default_factory=dict)
    extra: dict[str, Any] = field(default_factory=dict)
    manifest: dict[str, Any] = field(default_factory=dict)


def _le(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=a.dtype.newbyteorder("<"))


def save_checkpoint(path, arrays: dict[str, np.ndarray], config: dict[str, Any], step: int = 0,
                    vocab: Vocabulary | None = None, trainable: dict[str, bool] | None = None,
                    extra: dict[str, Any] | None = None) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    table = []
    blobs = []
    offset = 0
    for name, arr in arrays.items():
        a = np.asarray(arr)
        if a.dtype not in (np.float32, np.float64):
            raise CheckpointError(f"parameter {name!r} has unsupported dtype {a.dtype}")
        blob = _le(a).tobytes()
        table.append({
            "name": name,
            "shape": list(a.shape),
            "dtype": "<f4" if a.dtype == np.float32 else "<f8",
            "offset": offset,
            "nbytes": len(blob),
            "trainable": bool((trainable or {}).get(name, True)),
        })
        blobs.append(blob)
        offset += len(blob)
    payload = b"".join(blobs)
    manifest = {
        "format": FORMAT,
        "config": config,
        "step": int(step),
        "params": table,
        "sidecar": {"file": SIDECAR, "bytes": len(payload), "sha256": hashlib.sha256(payload).hexdigest()},
        "vocab_sha256": vocab.digest() if vocab is not None else None,
        "extra": extra or {},
    }
    (out / SIDECAR).write_bytes(payload)
    if vocab is not None:
        vocab.save(out / VOCAB)
    text = json.dumps(manifest, ensure_ascii=False, indent=1, sort_keys=True) + "\n"
    (out / MANIFEST).write_text(text, encoding="utf-8")
    return out


def load_checkpoint(path) -> Checkpoint:
    src = Path(path)
    try:
        manifest = json.loads((src / MANIFEST).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise CheckpointError(f"no manifest in {src}") from exc
    if manifest.get("format") != FORMAT:
        raise CheckpointError(f"unknown checkpoint format {manifest.get('format')!r}")
    payload = (src / manifest["sidecar"]["file"]).read_bytes()
    if len(payload) != manifest["sidecar"]["bytes"]:
        raise CheckpointError(f"sidecar holds {len(payload)} bytes, manifest expects {manifest['sidecar']['bytes']}")
    if hashlib.sha256(payload).hexdigest() != manifest["sidecar"]["sha256"]:
        raise CheckpointError("sidecar hash does not match manifest")
    arrays = {}
    trainable = {}
    for entry in manifest["params"]:
        chunk = payload[entry["offset"]:entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(chunk, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"])
        arrays[entry["name"]] = arr.astype(arr.dtype.newbyteorder("="))
        trainable[entry["name"]] = entry.get("trainable", True)
    vocab = None
    if manifest.get("vocab_sha256") is not None:
        vocab = Vocabulary.load(src / VOCAB)
        if vocab.digest() != manifest["vocab_sha256"]:
            raise CheckpointError("vocabulary file does not match the manifest hash")
    return Checkpoint(arrays, manifest["config"], manifest["step"], vocab, trainable,
                      manifest.get("extra", {}), manifest)


def save_embeddings(path, kb, emb, config: dict[str, Any]) -> Path:
    """Entity/relation tables from kg-embed, with the vocabularies as names."""
    return save_checkpoint(
        path,
        {"entities": emb.entities, "relations": emb.relations},
        config,
        step=len(emb.loss_history),
        extra={"kind": "kg", "norm": emb.norm, "entities": kb.entity_names(),
               "relations": kb.relation_names(), "loss_history": list(emb.loss_history)},
    )


def load_embeddings(path):
    """Returns ``(EntityEmbedding, entity_names, relation_names)``."""
    from .kg import EntityEmbedding

    ckpt = load_checkpoint(path)
    if ckpt.extra.get("kind") != "kg":
        raise CheckpointError(f"{path} is not a KG embedding checkpoint")
    emb = EntityEmbedding(ckpt.arrays["entities"], ckpt.arrays["relations"], ckpt.extra.get("norm", "L1"),
                          list(ckpt.extra.get("loss_history", [])))
    return emb, list(ckpt.extra["entities"]), list(ckpt.extra["relations"])
