"""Plain-text checkpoints.

Layout::

    3DTI-CKPT v1
    key=value key=value ...          (ModelConfig fields, then meta.* entries)
    <name> <rows> <cols>
    <row-major values, one row per line, 17 significant digits>
    ...

Tensors appear in the order of ``ModelConfig.param_shapes()`` followed by the
model's buffers. 17 significant digits round-trip IEEE doubles exactly.
"""

from __future__ import annotations

import os

import numpy as np

from .exceptions import CheckpointError
from .model import ModelConfig, TINet

__all__ = ["MAGIC", "save_checkpoint", "load_checkpoint", "dumps", "loads"]

MAGIC = "3DTI-CKPT v1"


def _tensor_order(model: TINet) -> list:
    shapes = dict(model.config.param_shapes())
    for name, value in model.buffers.items():
        shapes[name] = (1, value.size)
    return list(shapes.items())


def dumps(model: TINet) -> str:
    flat = model.config.to_flat()
    flat["meta.epoch"] = str(int(model.epoch))
    flat["meta.seed"] = str(int(model.seed))
    lines = [MAGIC, " ".join(f"{k}={v}" for k, v in flat.items())]
    for name, (rows, cols) in _tensor_order(model):
        src = model.params[name] if name in model.params else model.buffers[name]
        data = np.asarray(src, dtype=np.float64).reshape(rows, cols)
        lines.append(f"{name} {rows} {cols}")
        lines.extend(" ".join("%.17g" % v for v in row) for row in data)
    return "\n".join(lines) + "\n"


def loads(text: str, expected_config: ModelConfig | None = None) -> TINet:
    """Rebuild a model from checkpoint text.

    ``expected_config`` makes shape mismatches against a known architecture
    an error that names the first offending tensor.
    """
    lines = text.splitlines()
    if not lines or lines[0].strip() != MAGIC:
        got = lines[0].strip() if lines else ""
        raise CheckpointError(f"version mismatch: expected header {MAGIC!r}, got {got!r}")
    if len(lines) < 2:
        raise CheckpointError("truncated checkpoint: missing config line")
    flat, meta = {}, {}
    for token in lines[1].split():
        key, sep, value = token.partition("=")
        if not sep:
            raise CheckpointError(f"malformed config entry {token!r}")
        (meta if key.startswith("meta.") else flat)[key] = value
    config = ModelConfig.from_flat(flat)
    model = TINet(config, seed=int(meta.get("meta.seed", 0)))
    model.epoch = int(meta.get("meta.epoch", 0))
    reference = dict(_tensor_order(TINet(expected_config))) if expected_config is not None else None
    pos = 2
    for name, (rows, cols) in _tensor_order(model):
        if pos >= len(lines):
            raise CheckpointError(f"truncated checkpoint: tensor {name!r} missing")
        header = lines[pos].split()
        if len(header) != 3 or header[0] != name:
            raise CheckpointError(f"expected tensor {name!r}, found {lines[pos]!r}")
        shape = (int(header[1]), int(header[2]))
        if shape != (rows, cols):
            raise CheckpointError(f"shape mismatch for tensor {name!r}: file {shape}, config {(rows, cols)}")
        if reference is not None and reference.get(name) != shape:
            raise CheckpointError(
                f"shape mismatch for tensor {name!r}: checkpoint {shape}, expected {reference.get(name)}"
            )
        body = lines[pos + 1 : pos + 1 + rows]
        if len(body) != rows:
            raise CheckpointError(f"truncated checkpoint inside tensor {name!r}")
        try:
            data = np.array([[float(v) for v in row.split()] for row in body])
        except ValueError:
            raise CheckpointError(f"non-numeric value in tensor {name!r}") from None
        if data.shape != (rows, cols):
            raise CheckpointError(f"tensor {name!r} rows do not hold {cols} values")
        if name in model.params:
            model.set_tensor(name, data)
        else:
            model.buffers[name] = data.reshape(model.buffers[name].shape)
        pos += 1 + rows
    if reference is not None and set(reference) != {n for n, _ in _tensor_order(model)}:
        missing = sorted(set(reference) ^ {n for n, _ in _tensor_order(model)})
        raise CheckpointError(f"shape mismatch: tensor {missing[0]!r} present in only one architecture")
    return model


def save_checkpoint(model: TINet, path) -> None:
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(dumps(model))
    os.replace(tmp, path)


def load_checkpoint(path, expected_config: ModelConfig | None = None) -> TINet:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return loads(text, expected_config)
