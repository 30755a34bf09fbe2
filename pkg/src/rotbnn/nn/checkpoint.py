"""Checkpoint files: a key=value text manifest plus length-prefixed float32 blobs.

Layout of ``<dir>/weights.bin``: for every blob named in the manifest, in
manifest order, a little-endian ``uint32`` element count followed by that many
little-endian ``float32`` values. The manifest lists ``blob.<name>=<count>``
lines; loading rejects any count that disagrees with the file.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..linalg import polar_maximize_trace
from ..rotation import RotationPair, balanced_factorization
from .network import Network

FORMAT = "rotbnn-checkpoint-1"
MANIFEST = "manifest.txt"
BLOBS = "weights.bin"
_LE_F32 = np.dtype("<f4")


class CheckpointError(ValueError):
    pass


def write_blob(fh, values) -> int:
    arr = np.ascontiguousarray(np.asarray(values, dtype=np.float64).ravel(), dtype=_LE_F32)
    fh.write(struct.pack("<I", arr.size))
    fh.write(arr.tobytes())
    return arr.size


def read_blob(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Decode one blob at ``offset``; returns ``(values, next_offset)``."""
    if offset + 4 > len(buf):
        raise CheckpointError(f"truncated blob length prefix at byte offset {offset}")
    (count,) = struct.unpack_from("<I", buf, offset)
    start, end = offset + 4, offset + 4 + 4 * count
    if end > len(buf):
        raise CheckpointError(f"blob at byte offset {offset} declares {count} values "
                              f"but only {(len(buf) - start) // 4} remain")
    return np.frombuffer(buf, dtype=_LE_F32, count=count, offset=start).astype(np.float64), end


def read_blob_file(path) -> np.ndarray:
    """A standalone weight file holding exactly one blob."""
    buf = Path(path).read_bytes()
    values, end = read_blob(buf)
    if end != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - end} trailing bytes after the blob")
    return values


def _state_blobs(net: Network) -> list[tuple[str, np.ndarray]]:
    out = []
    for layer in net.layers:
        for pname, arr in layer.params.items():
            out.append((f"{layer.name}.{pname}", arr))
        if hasattr(layer, "running_mean"):
            out.append((f"{layer.name}.running_mean", layer.running_mean))
            out.append((f"{layer.name}.running_var", layer.running_var))
        if layer.binarized:
            out.append((f"{layer.name}.init_sign", layer.init_sign))
            if layer.rotation is not None:
                out.append((f"{layer.name}.r1", layer.rotation.r1))
                out.append((f"{layer.name}.r2", layer.rotation.r2))
    return out


def save_checkpoint(net: Network, out_dir) -> Path:
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    lines = [f"format={FORMAT}", f"architecture={net.arch}", f"epoch={net.epoch}",
             f"seed={net.seed}", f"variant={net.variant.name}"]
    with open(d / BLOBS, "wb") as fh:
        for name, arr in _state_blobs(net):
            lines.append(f"blob.{name}={write_blob(fh, arr)}")
    (d / MANIFEST).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return d


def read_manifest(path) -> dict[str, str]:
    out = {}
    for i, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise CheckpointError(f"{path}:{i}: expected key=value, got {line!r}")
        out[key.strip()] = value.strip()
    return out


def read_checkpoint_blobs(ckpt_dir) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    """Manifest and all blobs by name, with counts validated against the manifest."""
    d = Path(ckpt_dir)
    manifest = read_manifest(d / MANIFEST)
    if manifest.get("format") != FORMAT:
        raise CheckpointError(f"unsupported checkpoint format {manifest.get('format')!r}")
    buf = (d / BLOBS).read_bytes()
    blobs, offset = {}, 0
    for key, value in manifest.items():
        if not key.startswith("blob."):
            continue
        name = key[5:]
        arr, nxt = read_blob(buf, offset)
        if arr.size != int(value):
            raise CheckpointError(f"blob {name!r} at byte offset {offset}: manifest says {value} values, "
                                  f"file has {arr.size}")
        blobs[name] = arr
        offset = nxt
    if offset != len(buf):
        raise CheckpointError(f"{len(buf) - offset} unexpected trailing bytes at offset {offset}")
    return manifest, blobs


def load_checkpoint(ckpt_dir) -> Network:
    manifest, blobs = read_checkpoint_blobs(ckpt_dir)
    try:
        net = Network.from_arch(manifest["architecture"], variant=manifest["variant"],
                                seed=int(manifest["seed"]))
        net.epoch = int(manifest["epoch"])
    except KeyError as exc:
        raise CheckpointError(f"manifest lacks {exc.args[0]!r}") from None

    def take(name, like):
        if name not in blobs:
            raise CheckpointError(f"missing blob {name!r}")
        arr = blobs.pop(name)
        if arr.size != np.size(like):
            raise CheckpointError(f"blob {name!r} has {arr.size} values, layer expects {np.size(like)}")
        return arr.reshape(np.shape(like))

    for layer in net.layers:
        for pname, arr in layer.params.items():
            arr[...] = take(f"{layer.name}.{pname}", arr)
        if hasattr(layer, "running_mean"):
            layer.running_mean = take(f"{layer.name}.running_mean", layer.running_mean)
            layer.running_var = take(f"{layer.name}.running_var", layer.running_var)
        if layer.binarized:
            layer.init_sign = take(f"{layer.name}.init_sign", layer.init_sign)
            if f"{layer.name}.r1" in blobs:
                n1, n2 = balanced_factorization(layer.params["weight"].size)
                r1 = take(f"{layer.name}.r1", np.empty((n1, n1)))
                r2 = take(f"{layer.name}.r2", np.empty((n2, n2)))
                # float32 storage drifts ~1e-7 off orthogonal; snap to the nearest orthogonal matrix
                layer.rotation = RotationPair(polar_maximize_trace(r1.T), polar_maximize_trace(r2.T))
    if blobs:
        raise CheckpointError(f"unexpected blobs {sorted(blobs)}")
    return net
