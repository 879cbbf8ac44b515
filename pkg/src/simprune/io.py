"""Model interchange format: a JSON manifest plus raw float32 weight blobs.

The manifest carries structure and BN parameters inline; conv and head
weights live in sidecar ``.bin`` files referenced by filename, little-endian
float32 in (out, in, kh, kw) row-major order.  Everything is written
atomically (temp file, then rename) so concurrent readers never see a
half-written model.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .tensor import (
    ActivationKind,
    BnParams,
    ConvKernel,
    DenseHead,
    LayerBlock,
    ModelGraph,
    PoolSpec,
    ShapeError,
)

MANIFEST_VERSION = "1"


class ManifestError(ValueError):
    """Malformed manifest or blob, with a path-qualified message."""


def atomic_write_bytes(path: Path | str, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def atomic_write_text(path: Path | str, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _require(entry: dict, key: str, where: str):
    if key not in entry:
        raise ManifestError(f"{where}.{key}: missing")
    return entry[key]


def _read_blob(directory: Path, filename: str, count: int, where: str) -> np.ndarray:
    blob = directory / filename
    if not blob.is_file():
        raise ManifestError(f"{where}: blob file {filename!r} not found")
    data = blob.read_bytes()
    if len(data) != 4 * count:
        raise ManifestError(
            f"{where}: blob {filename!r} holds {len(data)} bytes, "
            f"expected {4 * count} (4 x {count} float32)"
        )
    return np.frombuffer(data, dtype="<f4").copy()


def _bn_array(entry: dict, key: str, out_channels: int, where: str) -> np.ndarray:
    raw = _require(entry, key, where)
    arr = np.asarray(raw, dtype=np.float32)
    if arr.ndim != 1 or arr.shape[0] != out_channels:
        raise ManifestError(
            f"{where}.{key}: length {arr.size} != out_channels {out_channels}"
        )
    return arr


def load_model(manifest_path: Path | str) -> ModelGraph:
    """Read a manifest and its blobs into a validated ModelGraph."""
    manifest_path = Path(manifest_path)
    try:
        doc = json.loads(manifest_path.read_text())
    except OSError as err:
        raise ManifestError(f"{manifest_path}: unreadable ({err})") from err
    except json.JSONDecodeError as err:
        raise ManifestError(f"{manifest_path}: invalid JSON ({err})") from err
    directory = manifest_path.parent

    version = doc.get("version")
    if version != MANIFEST_VERSION:
        raise ManifestError(f"version: expected {MANIFEST_VERSION!r}, got {version!r}")
    raw_blocks = _require(doc, "blocks", "manifest")
    if not isinstance(raw_blocks, list) or not raw_blocks:
        raise ManifestError("blocks: must be a non-empty list")

    blocks = []
    for idx, entry in enumerate(raw_blocks):
        where = f"blocks[{idx}]"
        kind = _require(entry, "kind", where)
        if kind != "conv_bn_act":
            raise ManifestError(f"{where}.kind: unknown kind {kind!r}")
        c_in = int(_require(entry, "in_channels", where))
        c_out = int(_require(entry, "out_channels", where))
        k = int(_require(entry, "kernel_size", where))
        stride = int(_require(entry, "stride", where))
        padding = int(_require(entry, "padding", where))
        act_name = _require(entry, "activation", where)
        try:
            act = ActivationKind(act_name)
        except ValueError:
            raise ManifestError(
                f"{where}.activation: unknown activation {act_name!r}"
            ) from None
        weights = _read_blob(
            directory,
            _require(entry, "weight_blob", where),
            c_out * c_in * k * k,
            f"{where}.weight_blob",
        ).reshape(c_out, c_in, k, k)
        gamma = _bn_array(entry, "gamma", c_out, where)
        beta = _bn_array(entry, "beta", c_out, where)
        eps = float(_require(entry, "eps", where))
        pool = None
        if entry.get("pool") is not None:
            p = entry["pool"]
            pool = PoolSpec(kind=_require(p, "kind", f"{where}.pool"), size=int(p.get("size", 2)))
        try:
            blocks.append(
                LayerBlock(
                    conv=ConvKernel(weights, stride=stride, padding=padding),
                    bn=BnParams(gamma=gamma, beta=beta, eps=eps),
                    act=act,
                    pool=pool,
                )
            )
        except ShapeError as err:
            raise ManifestError(f"{where}: {err}") from err

    head = None
    if doc.get("head") is not None:
        entry = doc["head"]
        n_in = int(_require(entry, "in_features", "head"))
        n_out = int(_require(entry, "out_features", "head"))
        weights = _read_blob(
            directory,
            _require(entry, "weight_blob", "head"),
            n_out * n_in,
            "head.weight_blob",
        ).reshape(n_out, n_in)
        bias = None
        if entry.get("bias_blob") is not None:
            bias = _read_blob(directory, entry["bias_blob"], n_out, "head.bias_blob")
        head = DenseHead(weights=weights, bias=bias)

    input_size = doc.get("input_size", [8, 8])
    if (
        not isinstance(input_size, list)
        or len(input_size) != 2
        or not all(isinstance(v, int) and v >= 1 for v in input_size)
    ):
        raise ManifestError(f"input_size: expected [H, W] positive integers, got {input_size!r}")

    try:
        return ModelGraph(
            blocks=tuple(blocks),
            head=head,
            input_height=input_size[0],
            input_width=input_size[1],
        )
    except ShapeError as err:
        raise ManifestError(f"manifest: {err}") from err


def save_model(model: ModelGraph, manifest_path: Path | str) -> None:
    """Write a manifest and weight blobs next to it.

    Blob filenames derive from the manifest stem, so several models can
    share one directory.  load_model(save_model(m)) reproduces m exactly:
    float32 values pass through JSON untouched (inline arrays round-trip
    via exact decimal repr) and blobs are raw bytes.
    """
    manifest_path = Path(manifest_path)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    stem = manifest_path.stem

    doc: dict = {"version": MANIFEST_VERSION}
    doc["input_size"] = [model.input_height, model.input_width]
    doc["blocks"] = []
    for idx, block in enumerate(model.blocks):
        blob_name = f"{stem}_block{idx}.bin"
        atomic_write_bytes(
            manifest_path.parent / blob_name,
            np.ascontiguousarray(block.conv.weights, dtype="<f4").tobytes(),
        )
        entry = {
            "kind": "conv_bn_act",
            "in_channels": block.in_channels,
            "out_channels": block.out_channels,
            "kernel_size": block.conv.kernel_size,
            "stride": block.conv.stride,
            "padding": block.conv.padding,
            "activation": block.act.value,
            "weight_blob": blob_name,
            "gamma": [float(v) for v in block.bn.gamma],
            "beta": [float(v) for v in block.bn.beta],
            "eps": block.bn.eps,
        }
        if block.pool is not None:
            entry["pool"] = {"kind": block.pool.kind, "size": block.pool.size}
        doc["blocks"].append(entry)

    if model.head is not None:
        head_blob = f"{stem}_head.bin"
        atomic_write_bytes(
            manifest_path.parent / head_blob,
            np.ascontiguousarray(model.head.weights, dtype="<f4").tobytes(),
        )
        head_entry = {
            "in_features": model.head.in_features,
            "out_features": model.head.out_features,
            "weight_blob": head_blob,
            "bias_blob": None,
        }
        if model.head.bias is not None:
            bias_blob = f"{stem}_head_bias.bin"
            atomic_write_bytes(
                manifest_path.parent / bias_blob,
                np.ascontiguousarray(model.head.bias, dtype="<f4").tobytes(),
            )
            head_entry["bias_blob"] = bias_blob
        doc["head"] = head_entry
    else:
        doc["head"] = None

    atomic_write_text(manifest_path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def models_identical(a: ModelGraph, b: ModelGraph) -> bool:
    """Deep equality: structure, parameters, and exact weight bytes."""
    if len(a.blocks) != len(b.blocks):
        return False
    if (a.input_height, a.input_width) != (b.input_height, b.input_width):
        return False
    for x, y in zip(a.blocks, b.blocks):
        if (
            x.conv.stride != y.conv.stride
            or x.conv.padding != y.conv.padding
            or x.act is not y.act
            or x.pool != y.pool
            or x.bn.eps != y.bn.eps
            or not np.array_equal(x.conv.weights, y.conv.weights)
            or not np.array_equal(x.bn.gamma, y.bn.gamma)
            or not np.array_equal(x.bn.beta, y.bn.beta)
        ):
            return False
    if (a.head is None) != (b.head is None):
        return False
    if a.head is not None:
        if not np.array_equal(a.head.weights, b.head.weights):
            return False
        if (a.head.bias is None) != (b.head.bias is None):
            return False
        if a.head.bias is not None and not np.array_equal(a.head.bias, b.head.bias):
            return False
    return True
