"""Checkpoint persistence: one JSON header line, then raw little-endian
float32 parameter data at the offsets the header declares."""

import json

import numpy as np

from canet.model import CanModel, ModelConfig

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Unreadable, truncated, or incompatible checkpoint file."""


def save_checkpoint(model: CanModel, path, extra: dict | None = None) -> None:
    """``extra`` carries run metadata (normalization stats, sensor names,
    resolved training config); it must be JSON-serializable."""
    entries = []
    blobs = []
    offset = 0
    for name, param in model.named_parameters():
        raw = np.ascontiguousarray(param.data, dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(param.shape), "offset": offset})
        blobs.append(raw)
        offset += len(raw)
    header = {
        "version": FORMAT_VERSION,
        "config": model.config.to_dict(),
        "params": entries,
        "total_bytes": offset,
        "extra": extra or {},
    }
    with open(path, "wb") as handle:
        handle.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        handle.write(b"\n")
        for raw in blobs:
            handle.write(raw)


def load_checkpoint(path) -> tuple[CanModel, dict]:
    """Rebuild the model and return ``(model, extra)``.

    Round-trips every parameter bit-exactly; rejects version mismatches and
    truncated files.
    """
    try:
        with open(path, "rb") as handle:
            header_line = handle.readline()
            blob = handle.read()
    except OSError as exc:
        raise CheckpointError(f"cannot open checkpoint {path}: {exc}") from exc
    try:
        header = json.loads(header_line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header in {path}") from exc

    version = header.get("version")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint version {version} not supported (expected {FORMAT_VERSION})")
    if len(blob) != header.get("total_bytes"):
        raise CheckpointError(
            f"truncated checkpoint {path}: {len(blob)} data bytes, "
            f"header declares {header.get('total_bytes')}")

    model = CanModel(ModelConfig(**header["config"]), seed=0)
    params = dict(model.named_parameters())
    recorded = {entry["name"] for entry in header["params"]}
    if recorded != set(params):
        raise CheckpointError(f"checkpoint parameter set does not match model in {path}")
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        param = params[entry["name"]]
        if shape != param.shape:
            raise CheckpointError(
                f"parameter {entry['name']} has shape {shape}, model expects {param.shape}")
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        raw = blob[start:start + 4 * count]
        if len(raw) != 4 * count:
            raise CheckpointError(f"truncated parameter data for {entry['name']} in {path}")
        param.data = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)
    return model, header.get("extra", {})
