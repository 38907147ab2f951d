"""Manifest+blob file container shared by model and explanation checkpoints.

Layout: one ASCII header line (versioned magic string), one JSON manifest
line, then the raw little-endian float64 blob of all arrays concatenated in
manifest order.  Round-trips are bit-exact.
"""

from __future__ import annotations

import json

import numpy as np

CKPT_HEADER = "GRAPHLEAK-CKPT-1"
DDPM_HEADER = "GRAPHLEAK-DDPM-1"


class ContainerError(ValueError):
    """Malformed container file or header mismatch."""


def write_container(path, header: str, manifest: dict, arrays: dict) -> None:
    """Write named float64 arrays with a JSON manifest under a magic header."""
    names = sorted(arrays)
    manifest = dict(manifest)
    manifest["arrays"] = [
        {"name": name, "shape": list(np.asarray(arrays[name]).shape)}
        for name in names
    ]
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii") + b"\n")
        fh.write(json.dumps(manifest, sort_keys=True).encode("utf-8") + b"\n")
        for name in names:
            arr = np.ascontiguousarray(np.asarray(arrays[name], dtype=np.float64))
            fh.write(arr.astype("<f8").tobytes())


def read_container(path, header: str):
    """Load (manifest, arrays) back; verifies the header and blob length."""
    with open(path, "rb") as fh:
        got = fh.readline().rstrip(b"\n").decode("ascii", errors="replace")
        if got != header:
            raise ContainerError(f"header mismatch: expected {header!r}, got {got!r}")
        try:
            manifest = json.loads(fh.readline().decode("utf-8"))
        except json.JSONDecodeError as exc:
            raise ContainerError(f"bad manifest: {exc}") from exc
        blob = fh.read()
    arrays = {}
    offset = 0
    for entry in manifest.get("arrays", []):
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if offset + nbytes > len(blob):
            raise ContainerError("blob shorter than manifest promises")
        arrays[entry["name"]] = (
            np.frombuffer(blob[offset : offset + nbytes], dtype="<f8")
            .reshape(shape)
            .copy()
        )
        offset += nbytes
    if offset != len(blob):
        raise ContainerError("trailing bytes after declared arrays")
    return manifest, arrays
