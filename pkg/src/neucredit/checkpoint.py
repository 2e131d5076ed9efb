"""Checkpoints: model config, scaler, and parameters as bit-exact JSON.

Floats are serialized with `float.hex`, so a save/load round trip restores
every parameter and scaler statistic to the identical bit pattern and
predictions after reload match the original run exactly. Files are written
atomically (temp file + rename) so a crash never leaves a half-written
checkpoint or CSV behind.
"""

import json
import os
import tempfile

import numpy as np

from .data import FeatureScaler
from .network import build_model, config_from_dict

FORMAT_VERSION = 1


def write_atomic(path, text):
    """Write text to `path` via a same-directory temp file and rename."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _encode_array(arr):
    arr = np.asarray(arr, dtype=np.float64)
    return {"shape": list(arr.shape), "hex": [float.hex(float(v)) for v in arr.ravel()]}


def _decode_array(obj):
    values = np.array([float.fromhex(s) for s in obj["hex"]], dtype=np.float64)
    return values.reshape(obj["shape"])


def save_checkpoint(path, model, scaler, metadata=None):
    doc = {
        "format_version": FORMAT_VERSION,
        "config": model.config.to_dict(),
        "scaler": {stream: {"mean": _encode_array(mean), "std": _encode_array(std)}
                   for stream, (mean, std) in scaler.to_arrays().items()},
        "params": {name: _encode_array(t.value) for name, t in model.params},
        "metadata": metadata or {},
    }
    write_atomic(path, json.dumps(doc))


def load_checkpoint(path):
    """Rebuild (model, scaler, metadata) from a checkpoint file."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format_version") != FORMAT_VERSION:
        raise ValueError("unsupported checkpoint format %r" % (doc.get("format_version"),))
    config = config_from_dict(doc["config"])
    model = build_model(config, seed=0)
    model.params.load_values({name: _decode_array(obj)
                              for name, obj in doc["params"].items()})
    scaler = FeatureScaler.from_arrays(
        {stream: (_decode_array(entry["mean"]), _decode_array(entry["std"]))
         for stream, entry in doc["scaler"].items()})
    return model, scaler, doc.get("metadata", {})
