"""Model file: architecture descriptor plus bit-exact parameters, as JSON.

Parameter values are stored with :meth:`float.hex`, so a load/save round
trip reproduces every bit.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import ModelFormatError
from .involutive import InvolutiveNetwork, from_descriptor

__all__ = ["FORMAT_VERSION", "encode_parameters", "decode_parameters", "model_to_dict",
           "model_from_dict", "save_model", "load_model"]

FORMAT_VERSION = 1
FORMAT_NAME = "involutive-mcmc-model"


def encode_parameters(params) -> dict:
    return {name: {"shape": list(np.shape(arr)),
                   "hex": [float(v).hex() for v in np.ravel(arr)]}
            for name, arr in params.items()}


def decode_parameters(data: dict) -> ad.Parameters:
    arrays = {}
    for name, seg in data.items():
        values = np.array([float.fromhex(h) for h in seg["hex"]], dtype=np.float64)
        shape = tuple(seg["shape"])
        if values.size != int(np.prod(shape, dtype=np.int64)):
            raise ModelFormatError(f"segment {name!r}: {values.size} values for shape {shape}")
        arrays[name] = values.reshape(shape)
    return ad.Parameters(arrays)


def model_to_dict(net: InvolutiveNetwork, metadata: dict | None = None) -> dict:
    return {"format": FORMAT_NAME, "format_version": FORMAT_VERSION,
            "architecture": net.root.descriptor(),
            "parameters": encode_parameters(net.params),
            "metadata": dict(metadata or {})}


def model_from_dict(data: dict):
    if data.get("format") != FORMAT_NAME:
        raise ModelFormatError("not an involutive-mcmc model file")
    version = data.get("format_version")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"model format version {version!r} is not supported "
                               f"(expected {FORMAT_VERSION})")
    root = from_descriptor(data["architecture"])
    net = InvolutiveNetwork(root, decode_parameters(data["parameters"]))
    return net, data.get("metadata", {})


def save_model(path, net: InvolutiveNetwork, metadata: dict | None = None) -> None:
    path = Path(path)
    path.write_text(json.dumps(model_to_dict(net, metadata), sort_keys=True))


def load_model(path):
    """Returns ``(network, metadata)``."""
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"cannot read model file {path}: {exc}") from exc
    return model_from_dict(data)
