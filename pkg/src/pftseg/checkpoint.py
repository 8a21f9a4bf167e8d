"""Bit-exact decoder checkpoints.

Checkpoints are NumPy .npz containers. Each parameter is stored under the
key "block{resolution}.{stream}.{group}.{name}" (stream is `single` for a
one-branch decoder), and the decoder config travels along as JSON under
"__config__". Loading rebuilds the decoder and restores every array
bit-exactly.
"""

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch

from .errors import InitializationError
from .generator import DecoderConfig, SingleStreamDecoder, TwoStreamDecoder


def _param_keys(decoder):
    """(checkpoint key, parameter) pairs for a decoder."""
    cfg = decoder.config
    pairs = []
    if isinstance(decoder, SingleStreamDecoder):
        groups = [("single", decoder.blocks, 0)]
    else:
        groups = [
            ("shared", decoder.shared, 0),
            ("seg", decoder.seg, decoder.n_shared),
            ("img", decoder.img, decoder.n_shared),
        ]
    for stream, blocks, offset in groups:
        for j, block in enumerate(blocks):
            res = cfg.resolutions[offset + j]
            for pname, param in block.named_parameters():
                group = "toRGB" if "torgb" in pname else "conv"
                pairs.append((f"block{res}.{stream}.{group}.{pname}", param))
    return pairs


def save_decoder(path, decoder):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {key: p.detach().numpy() for key, p in _param_keys(decoder)}
    meta = {
        "kind": "single" if isinstance(decoder, SingleStreamDecoder) else "two",
        "config": asdict(decoder.config),
    }
    arrays["__config__"] = np.array(json.dumps(meta))
    np.savez(path, **arrays)


def load_decoder(path):
    path = Path(path)
    try:
        with np.load(path, allow_pickle=False) as data:
            arrays = {k: data[k] for k in data.files}
    except (OSError, ValueError) as e:
        raise InitializationError(f"cannot read checkpoint {path}: {e}")
    try:
        meta = json.loads(str(arrays.pop("__config__")))
        config = DecoderConfig(**meta["config"])
    except (KeyError, TypeError, json.JSONDecodeError) as e:
        raise InitializationError(f"checkpoint {path} has a malformed config: {e}")

    if meta["kind"] == "single":
        decoder = SingleStreamDecoder(config)
    else:
        decoder = TwoStreamDecoder(config)
    expected = dict(_param_keys(decoder))
    missing = set(expected) - set(arrays)
    extra = set(arrays) - set(expected)
    if missing or extra:
        raise InitializationError(
            f"checkpoint {path} key mismatch: missing {sorted(missing)[:3]}, "
            f"unexpected {sorted(extra)[:3]}"
        )
    with torch.no_grad():
        for key, param in expected.items():
            arr = arrays[key]
            if tuple(arr.shape) != tuple(param.shape):
                raise InitializationError(
                    f"checkpoint {path} entry {key}: expected shape "
                    f"{tuple(param.shape)}, got {tuple(arr.shape)}"
                )
            param.copy_(torch.from_numpy(arr))
    return decoder
