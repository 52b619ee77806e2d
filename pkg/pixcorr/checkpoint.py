"""Checkpoint files: a key=value text manifest followed by serialized tensors.

Layout::

    pixcorr-checkpoint 1
    kind=segnet
    ...
    tensors=8
    <blank line>
    PCT1 tensor 0
    PCT1 tensor 1
    ...

Tensors are stored in declaration order; the manifest says how to interpret
them.  Files are written to a temporary sibling and renamed into place so a
crash never leaves a half-written checkpoint behind.
"""

from __future__ import annotations

import io
import os
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import FormatError
from .tensor import read_tensor, write_tensor

HEADER = b"pixcorr-checkpoint 1\n"


def save_checkpoint(
    path: str | os.PathLike[str],
    manifest: Mapping[str, object],
    tensors: Sequence[np.ndarray],
) -> None:
    """Write ``manifest`` and ``tensors`` to ``path`` atomically."""
    path = Path(path)
    buffer = io.BytesIO()
    buffer.write(HEADER)
    for key, value in manifest.items():
        if "=" in key or "\n" in key or "\n" in str(value):
            raise FormatError(f"{path}: manifest entry {key!r} cannot be stored")
        buffer.write(f"{key}={value}\n".encode())
    buffer.write(f"tensors={len(tensors)}\n\n".encode())
    for array in tensors:
        write_tensor(buffer, array)

    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(buffer.getvalue())
    os.replace(tmp, path)


def load_checkpoint(path: str | os.PathLike[str]) -> tuple[dict[str, str], list[np.ndarray]]:
    """Read a checkpoint written by ``save_checkpoint``.

    Returns:
        The manifest (values as strings, without the ``tensors`` count) and
        the tensors in stored order.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"{path}: cannot read checkpoint ({exc.strerror})") from exc
    stream = io.BytesIO(raw)
    if stream.readline() != HEADER:
        raise FormatError(f"{path}: not a pixcorr checkpoint")

    manifest: dict[str, str] = {}
    while True:
        line = stream.readline()
        if not line:
            raise FormatError(f"{path}: truncated manifest")
        if line == b"\n":
            break
        key, sep, value = line.decode("utf-8", errors="replace").rstrip("\n").partition("=")
        if not sep:
            raise FormatError(f"{path}: malformed manifest line {line!r}")
        manifest[key] = value

    try:
        count = int(manifest.pop("tensors"))
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: manifest lacks a tensor count") from exc
    try:
        tensors = [read_tensor(stream) for _ in range(count)]
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if stream.read(1):
        raise FormatError(f"{path}: trailing bytes after {count} tensors")
    return manifest, tensors
