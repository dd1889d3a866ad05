"""Single-file model container: JSON header + raw little-endian float64 payload.

Layout:

    bytes 0..7    magic ``b"SPARSEIQ"``
    bytes 8..11   format version, uint32 LE
    bytes 12..15  header length in bytes, uint32 LE
    ...           header JSON (utf-8)
    ...           payload: the arrays named in the header, concatenated,
                  each C-order float64 little-endian
    last 32 bytes sha256 digest of the payload

The header carries hyperparameters, the whitening epsilon, training
provenance (seed, patch count, corpus digest, effective config) and the
default suppression policy, plus the name/shape list that defines the
payload layout.  Version and declared shapes are validated before any
array bytes are interpreted, and array allocation is capped, so a
corrupt or hostile header cannot trigger a huge allocation.  Saves are
atomic (temp file + rename); round trips are bit-exact.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .decoder import DecoderHyperparams, DecoderModel
from .preprocess import NormalizationStats
from .scorer import SuppressionPolicy

MAGIC = b"SPARSEIQ"
FORMAT_VERSION = 1
_MAX_HEADER_BYTES = 1 << 24
DEFAULT_MAX_ELEMENTS = 50_000_000  # ~400 MB of float64


class ModelIOError(Exception):
    """Base class for model container failures."""


class ModelFormatError(ModelIOError):
    """The file is not a model container at all (bad magic, garbled header)."""


class ModelVersionError(ModelIOError):
    """The container version is not one this reader understands."""


class ModelChecksumError(ModelIOError):
    """The payload bytes do not match their recorded digest."""


class ModelDimensionError(ModelIOError):
    """Declared array dimensions are inconsistent, oversized, or truncated."""


def _array_specs(model: DecoderModel) -> list[tuple[str, np.ndarray]]:
    return [
        ("mean", model.stats.mean),
        ("zca", model.stats.zca),
        ("w1", model.w1),
        ("b1", model.b1),
        ("w2", model.w2),
        ("b2", model.b2),
    ]


def save_model(
    model: DecoderModel,
    path: str | Path,
    provenance: dict | None = None,
    suppression: SuppressionPolicy | None = None,
) -> None:
    """Write the model atomically; refuses non-finite weights or missing stats."""
    if model.stats is None:
        raise ValueError("model has no normalization stats; refusing to save")
    arrays = _array_specs(model)
    for name, arr in arrays:
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"array {name!r} contains non-finite values; refusing to save")

    payload = b"".join(
        np.ascontiguousarray(arr, dtype="<f8").tobytes() for _, arr in arrays
    )
    header = {
        "arrays": [{"name": name, "shape": list(arr.shape)} for name, arr in arrays],
        "hyperparams": asdict(model.hyperparams),
        "epsilon": model.stats.epsilon,
        "provenance": provenance or {},
        "suppression": asdict(suppression or SuppressionPolicy()),
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")

    path = Path(path)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<II", FORMAT_VERSION, len(header_bytes)))
            fh.write(header_bytes)
            fh.write(payload)
            fh.write(hashlib.sha256(payload).digest())
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp_name, path)
    except BaseException:
        try:
            os.unlink(tmp_name)
        except OSError:
            pass
        raise


def load_model(path: str | Path, max_elements: int = DEFAULT_MAX_ELEMENTS) -> DecoderModel:
    """Read and validate a model container.

    Returns the model with its normalization stats attached and the header
    metadata available via `read_metadata`.  Raises ModelVersionError /
    ModelChecksumError / ModelDimensionError for the respective defects.
    """
    model, _ = _load(path, max_elements)
    return model


def read_metadata(path: str | Path) -> dict:
    """Header metadata (hyperparams, provenance, suppression defaults) only."""
    _, header = _load(path, max_elements=DEFAULT_MAX_ELEMENTS, arrays_needed=False)
    return header


def _load(path, max_elements, arrays_needed=True):
    with open(path, "rb") as fh:
        blob = fh.read()

    if len(blob) < len(MAGIC) + 8 or blob[: len(MAGIC)] != MAGIC:
        raise ModelFormatError(f"{path}: not a model container (bad magic)")
    version, header_len = struct.unpack_from("<II", blob, len(MAGIC))
    if version != FORMAT_VERSION:
        raise ModelVersionError(
            f"{path}: container version {version}, this reader supports {FORMAT_VERSION}"
        )
    if header_len > _MAX_HEADER_BYTES:
        raise ModelFormatError(f"{path}: header length {header_len} is implausible")
    start = len(MAGIC) + 8
    if len(blob) < start + header_len:
        raise ModelFormatError(f"{path}: truncated before end of header")
    try:
        header = json.loads(blob[start:start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"{path}: header is not valid JSON: {exc}") from exc

    specs = header.get("arrays")
    if not isinstance(specs, list) or not specs:
        raise ModelFormatError(f"{path}: header lacks an array table")
    total = 0
    shapes: dict[str, tuple] = {}
    for spec in specs:
        shape = spec.get("shape")
        name = spec.get("name")
        if (not isinstance(name, str) or not isinstance(shape, list)
                or not all(isinstance(v, int) and v >= 0 for v in shape)):
            raise ModelDimensionError(f"{path}: malformed array spec {spec!r}")
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        if count > max_elements:
            raise ModelDimensionError(
                f"{path}: array {name!r} declares {count} elements, cap is {max_elements}"
            )
        total += count
        shapes[name] = tuple(shape)
    if total > max_elements:
        raise ModelDimensionError(
            f"{path}: arrays declare {total} total elements, cap is {max_elements}"
        )
    if not arrays_needed:
        return None, header

    payload_start = start + header_len
    payload_len = 8 * total
    if len(blob) < payload_start + payload_len + 32:
        raise ModelDimensionError(
            f"{path}: file too short for declared dimensions "
            f"(need {payload_len} payload bytes plus digest)"
        )
    payload = blob[payload_start:payload_start + payload_len]
    digest = blob[payload_start + payload_len:payload_start + payload_len + 32]
    if hashlib.sha256(payload).digest() != digest:
        raise ModelChecksumError(f"{path}: payload checksum mismatch")
    recorded = header.get("payload_sha256")
    if recorded is not None and recorded != hashlib.sha256(payload).hexdigest():
        raise ModelChecksumError(f"{path}: header checksum disagrees with payload")

    expected = {"mean", "zca", "w1", "b1", "w2", "b2"}
    if set(shapes) != expected:
        raise ModelDimensionError(
            f"{path}: array table names {sorted(shapes)} != expected {sorted(expected)}"
        )

    arrays = {}
    offset = 0
    for spec in specs:
        name = spec["name"]
        shape = shapes[name]
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=offset)
        arrays[name] = arr.reshape(shape).astype(np.float64)  # writable copy
        offset += 8 * count

    d = arrays["mean"].shape[0] if arrays["mean"].ndim == 1 else -1
    n_hidden = arrays["w1"].shape[0] if arrays["w1"].ndim == 2 else -1
    consistent = (
        arrays["mean"].ndim == 1
        and arrays["zca"].shape == (d, d)
        and arrays["w1"].shape == (n_hidden, d)
        and arrays["b1"].shape == (n_hidden,)
        and arrays["w2"].shape == (d, n_hidden)
        and arrays["b2"].shape == (d,)
    )
    if not consistent:
        raise ModelDimensionError(
            f"{path}: array shapes are mutually inconsistent: "
            f"{ {k: v.shape for k, v in arrays.items()} }"
        )

    try:
        hyperparams = DecoderHyperparams(**header.get("hyperparams", {}))
        stats = NormalizationStats(
            mean=arrays["mean"], zca=arrays["zca"], epsilon=float(header["epsilon"])
        )
        model = DecoderModel(
            w1=arrays["w1"], b1=arrays["b1"], w2=arrays["w2"], b2=arrays["b2"],
            hyperparams=hyperparams, stats=stats,
        )
    except (TypeError, KeyError, ValueError) as exc:
        raise ModelDimensionError(f"{path}: model fails validation on load: {exc}") from exc
    return model, header
