"""Versioned JSON checkpoints: name -> {shape, flat data}.

Floats are written with ``repr`` precision, so loading returns the exact
same bits.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from recipe_embed.errors import ParseError

FORMAT = "recipe-embed-checkpoint"
VERSION = 1


def params_to_dict(params):
    return {
        name: {"shape": list(p.data.shape), "data": p.data.ravel().tolist()}
        for name, p in sorted(params.items())
    }


def save_checkpoint(path, params, meta=None):
    doc = {"format": FORMAT, "version": VERSION, "meta": meta or {}, "params": params_to_dict(params)}
    Path(path).write_text(json.dumps(doc, sort_keys=True))


def read_checkpoint(path):
    """Return ``(arrays, meta)`` with arrays keyed by param name."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"not a checkpoint: {exc}", locus=str(path)) from exc
    if doc.get("format") != FORMAT:
        raise ParseError("unknown checkpoint format", locus=str(path))
    if doc.get("version") != VERSION:
        raise ParseError(f"unsupported checkpoint version {doc.get('version')}", locus=str(path))
    arrays = {}
    for name, entry in doc["params"].items():
        shape = tuple(entry["shape"])
        data = np.asarray(entry["data"], dtype=np.float64)
        if data.size != int(np.prod(shape)):
            raise ParseError(f"param {name}: {data.size} values for shape {shape}", locus=str(path))
        arrays[name] = data.reshape(shape)
    return arrays, doc.get("meta", {})


def load_into(params, arrays, strict=True):
    missing = set(params) - set(arrays)
    if strict and missing:
        raise ParseError(f"checkpoint lacks params: {sorted(missing)}")
    for name, p in params.items():
        if name not in arrays:
            continue
        if arrays[name].shape != p.data.shape:
            raise ParseError(f"param {name}: shape {arrays[name].shape} != {p.data.shape}")
        p.data = arrays[name].copy()
