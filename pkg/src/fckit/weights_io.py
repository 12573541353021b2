"""Binary weight persistence ("FCW1" container).

Layout, all integers little-endian unsigned 32-bit:

    magic "FCW1" | version=1 | record count
    per record: name length | UTF-8 name | ndim | dims... | float32 data

The same container carries optimizer state sidecars (record names suffixed
``.m1`` / ``.m2``).  Round-trips are bit-exact.
"""

import struct

import numpy as np

from .errors import DataFormatError

MAGIC = b"FCW1"
VERSION = 1


def write_records(path, records):
    """Write an ordered {name: float32 array} mapping."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(records)))
        for name, arr in records.items():
            enc = name.encode("utf-8")
            fh.write(struct.pack("<I", len(enc)))
            fh.write(enc)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_records(path):
    """Read a container back into an ordered {name: float32 array} mapping."""
    with open(path, "rb") as fh:
        data = fh.read()
    off = 0

    def take(n, what):
        nonlocal off
        if off + n > len(data):
            raise DataFormatError(f"truncated weights file {path}: short read in {what}")
        chunk = data[off : off + n]
        off += n
        return chunk

    if take(4, "magic") != MAGIC:
        raise DataFormatError(f"bad magic in {path}: not a weights file")
    version, count = struct.unpack("<II", take(8, "header"))
    if version != VERSION:
        raise DataFormatError(f"unsupported weights version {version} in {path}")
    records = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4, "name length"))
        name = take(nlen, "name").decode("utf-8")
        (ndim,) = struct.unpack("<I", take(4, "ndim"))
        dims = struct.unpack(f"<{ndim}I", take(4 * ndim, "dims"))
        size = int(np.prod(dims, dtype=np.int64)) if ndim else 1
        arr = np.frombuffer(take(4 * size, f"data of {name}"), dtype="<f4")
        records[name] = arr.reshape(dims).copy()
    if off != len(data):
        raise DataFormatError(f"trailing bytes after last record in {path}")
    return records


def save_weights(graph, path):
    """Persist every parameter of a model graph."""
    write_records(path, {name: p.value for name, p in graph.params.items()})


def load_weights(graph, path):
    """Load a weights file into a graph, validating names and shapes."""
    records = read_records(path)
    for name, p in graph.params.items():
        if name not in records:
            raise DataFormatError(f"weights file {path} is missing tensor {name}")
        arr = records.pop(name)
        if arr.shape != p.value.shape:
            raise DataFormatError(
                f"shape mismatch for {name}: file has {arr.shape}, graph expects {p.value.shape}"
            )
        p.value[...] = arr
    if records:
        extra = ", ".join(sorted(records))
        raise DataFormatError(f"weights file {path} has unknown tensors: {extra}")
    return graph


def graph_from_weights(path):
    """Rebuild the matching graph (variant, class count, wiring) from a file."""
    from . import model

    records = read_records(path)
    if "head_expression.b" not in records:
        raise DataFormatError(f"{path} has no expression head; not a model file")
    class_count = records["head_expression.b"].shape[0]
    if "lstm.wi" in records:
        seq_mode = (
            "concat"
            if records["seq_dense.w"].shape[0] == model.TRUNK_UNITS
            else "sequential"
        )
        base = model.build_facechannel(class_count=class_count)
        graph = model.build_facechannels(base, seq_mode=seq_mode)
    else:
        graph = model.build_facechannel(class_count=class_count)
    return load_weights(graph, path)
