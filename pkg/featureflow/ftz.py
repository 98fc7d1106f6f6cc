"""FTZ v1 tensor files and parameter checkpoints.

A tensor block is the ASCII header "FTZ1 <channels> <height> <width>\\n"
followed by channels * height * width little-endian float64 values in
(c, y, x) order. A checkpoint is a sequence of blocks, each preceded by a
manifest line "<name> <out> <in> <kh> <kw>\\n"; the block stores the weights
as an (out * in) x kh x kw tensor.
"""

from __future__ import annotations
from pathlib import Path
from typing import BinaryIO, Iterable

import numpy as np

from featureflow.exceptions import FormatError
from featureflow.tensor import Param, Tensor, as_tensor


__all__ = [
    "MAGIC",
    "write_tensor",
    "read_tensor",
    "save_tensor",
    "load_tensor",
    "write_checkpoint",
    "read_checkpoint",
    "save_checkpoint",
    "load_checkpoint",
]


MAGIC = b"FTZ1"
DTYPE = np.dtype("<f8")


def _dimensions(line: bytes, count: int, what: str) -> list[int]:
    """Parses the trailing integer fields of a header line."""

    try:
        dims = [int(field) for field in line.split()[-count:]]
    except ValueError as error:
        raise FormatError(f"Invalid {what} line: {line!r}.") from error

    if len(dims) != count or any(dim < 0 for dim in dims):
        raise FormatError(f"Invalid {what} line: {line!r}.")

    return dims


def write_tensor(stream: BinaryIO, tensor: Tensor) -> None:
    """Writes one FTZ block."""

    tensor = as_tensor(tensor)
    stream.write(MAGIC + b" %d %d %d\n" % tensor.shape)
    stream.write(tensor.astype(DTYPE, copy=False).tobytes(order="C"))


def read_tensor(stream: BinaryIO) -> Tensor:
    """Reads one FTZ block."""

    header = stream.readline()

    if not header.startswith(MAGIC + b" ") or not header.endswith(b"\n"):
        raise FormatError(f"Not an FTZ1 header: {header[:32]!r}.")

    if len(header.split()) != 4:
        raise FormatError(f"Invalid FTZ1 header: {header!r}.")

    shape = tuple(_dimensions(header, 3, "FTZ1 header"))
    size = int(np.prod(shape)) * DTYPE.itemsize
    payload = stream.read(size)

    if len(payload) != size:
        raise FormatError(f"FTZ1 payload truncated: {len(payload)} of {size} bytes.")

    return np.frombuffer(payload, dtype=DTYPE).astype(np.float64).reshape(shape)


def save_tensor(tensor: Tensor, path: Path | str) -> None:
    """Writes a tensor to an FTZ file."""

    with Path(path).open("wb") as file:
        write_tensor(file, tensor)


def load_tensor(path: Path | str) -> Tensor:
    """Reads a tensor from an FTZ file."""

    with Path(path).open("rb") as file:
        return read_tensor(file)


def write_checkpoint(stream: BinaryIO, params: Iterable[Param]) -> None:
    """Writes the parameter values as manifest-prefixed FTZ blocks."""

    for param in params:
        out_channels, in_channels, kh, kw = param.value.shape
        stream.write(
            b"%s %d %d %d %d\n"
            % (param.name.encode(), out_channels, in_channels, kh, kw)
        )
        write_tensor(stream, param.value.reshape(out_channels * in_channels, kh, kw))


def read_checkpoint(stream: BinaryIO) -> dict[str, np.ndarray]:
    """Reads all parameter blocks until the end of the stream."""

    state = {}

    while manifest := stream.readline():
        fields = manifest.split()

        if len(fields) != 5:
            raise FormatError(f"Invalid checkpoint manifest line: {manifest!r}.")

        name = fields[0].decode()

        if name in state:
            raise FormatError(f"Duplicate checkpoint parameter: {name}.")

        shape = tuple(_dimensions(manifest, 4, "checkpoint manifest"))
        tensor = read_tensor(stream)

        if tensor.size != np.prod(shape):
            raise FormatError(
                f"Parameter {name} holds {tensor.size} values, manifest says {shape}."
            )

        state[name] = tensor.reshape(shape)

    return state


def save_checkpoint(params: Iterable[Param], path: Path | str) -> None:
    """Writes a checkpoint file."""

    with Path(path).open("wb") as file:
        write_checkpoint(file, params)


def load_checkpoint(path: Path | str) -> dict[str, np.ndarray]:
    """Reads a checkpoint file."""

    with Path(path).open("rb") as file:
        return read_checkpoint(file)
