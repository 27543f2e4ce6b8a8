"""Structured-text weights files.

A weights file is JSON with a ``version`` tag, free-form ``meta`` and one
entry per leaf layer giving its kind, config, and every parameter/buffer as
``{"shape": [...], "data": [...row-major...]}``. Floats are written with
``repr`` precision, so dump -> load -> dump is byte-identical.
"""

from __future__ import annotations

import json

import numpy as np

from ..errors import ShapeMismatch, WeightsVersionMismatch
from ..fsutil import atomic_write_text, read_text
from .layers import Layer

WEIGHTS_VERSION = "rrburden-weights-v1"


def _arrays(arrs: dict) -> dict:
    return {
        k: {"shape": list(v.shape), "data": np.asarray(v, dtype=np.float64).ravel().tolist()}
        for k, v in arrs.items()
    }


def dumps_weights(model: Layer, meta: dict | None = None) -> str:
    head = json.dumps({"version": WEIGHTS_VERSION, "meta": meta or {}}, sort_keys=True)
    lines = []
    for name, leaf in model.leaves():
        entry = {
            "name": name,
            "kind": leaf.kind,
            "config": leaf.config(),
            "params": _arrays(leaf.params),
            "buffers": _arrays(leaf.buffers),
        }
        lines.append(json.dumps(entry, sort_keys=True))
    return head[:-1] + ', "layers": [\n' + ",\n".join(lines) + "\n]}\n"


def parse_weights(text: str) -> dict:
    doc = json.loads(text)
    version = doc.get("version")
    if version != WEIGHTS_VERSION:
        raise WeightsVersionMismatch(f"weights version {version!r}, expected {WEIGHTS_VERSION!r}")
    return doc


def apply_weights(model: Layer, doc: dict) -> None:
    """Copy the arrays of a parsed weights document into ``model``."""
    entries = {e["name"]: e for e in doc["layers"]}
    leaves = dict(model.leaves())
    if set(entries) != set(leaves):
        missing = sorted(set(leaves) ^ set(entries))
        raise ShapeMismatch(f"weights/model layer names differ: {missing[:5]}")
    for name, leaf in leaves.items():
        entry = entries[name]
        if entry["kind"] != leaf.kind:
            raise ShapeMismatch(f"{name}: file has {entry['kind']}, model has {leaf.kind}")
        for group, target in (("params", leaf.params), ("buffers", leaf.buffers)):
            stored = entry[group]
            if set(stored) != set(target):
                raise ShapeMismatch(f"{name}: {group} keys differ")
            for key, arr in target.items():
                shape = tuple(stored[key]["shape"])
                if shape != arr.shape:
                    raise ShapeMismatch(f"{name}.{key}: file {shape} vs model {arr.shape}")
                arr[...] = np.asarray(stored[key]["data"], dtype=np.float64).reshape(shape)


def save_weights(path, model: Layer, meta: dict | None = None) -> None:
    atomic_write_text(path, dumps_weights(model, meta))


def load_weights(path, model: Layer) -> dict:
    """Load ``path`` into ``model`` and return the file's ``meta`` dict."""
    doc = parse_weights(read_text(path))
    apply_weights(model, doc)
    return doc.get("meta", {})
