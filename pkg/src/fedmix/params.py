"""Named, ordered parameter collections and their binary serialization.

A ParamSet is the unit shipped between server and clients: an immutable,
ordered list of (name, array) pairs covering every model state tensor,
including normalization running buffers. Order is the model's construction
order, so two models built from the same config align positionally.

Blob layout (little-endian throughout): magic ``FMPS``, u8 precision code
(1 = float32, 2 = float64), u32 entry count, then per entry a u16 name
length, the UTF-8 name, a u8 rank, u32 per-dimension sizes, and the
row-major payload at the stated precision.
"""

from __future__ import annotations

import struct
from typing import Iterable, Iterator

import numpy as np

from .errors import ContractError, DataError

MAGIC = b"FMPS"
_DTYPE_CODES = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}
_CODE_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}


class ParamSet:
    """Ordered (name, array) pairs; arrays are copied and frozen on entry."""

    __slots__ = ("_names", "_arrays", "_index")

    def __init__(self, items: Iterable[tuple[str, np.ndarray]]):
        names, arrays = [], []
        for name, arr in items:
            a = np.array(arr, copy=True)
            a.flags.writeable = False
            names.append(str(name))
            arrays.append(a)
        if len(set(names)) != len(names):
            raise ContractError("ParamSet: duplicate names")
        self._names = tuple(names)
        self._arrays = tuple(arrays)
        self._index = {n: i for i, n in enumerate(names)}

    @classmethod
    def from_model(cls, model) -> "ParamSet":
        return cls((name, t.data) for name, t in model.named_state())

    def items(self) -> Iterator[tuple[str, np.ndarray]]:
        return iter(zip(self._names, self._arrays))

    @property
    def names(self) -> tuple[str, ...]:
        return self._names

    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[self._index[name]]

    def __len__(self) -> int:
        return len(self._names)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ParamSet):
            return NotImplemented
        return (self._names == other._names
                and all(a.shape == b.shape and a.dtype == b.dtype
                        and np.array_equal(a, b)
                        for a, b in zip(self._arrays, other._arrays)))

    def __repr__(self) -> str:
        return f"ParamSet({len(self)} entries, {count_params(self)} values)"

    def structure_matches(self, other: "ParamSet") -> bool:
        return (self._names == other._names
                and all(a.shape == b.shape
                        for a, b in zip(self._arrays, other._arrays)))

    def load_into(self, model) -> None:
        """Copy values into a model's state tensors, matched by name."""
        state = dict(model.named_state())
        if tuple(state.keys()) != self._names:
            raise ContractError("ParamSet: model structure does not match")
        for name, arr in self.items():
            dst = state[name]
            if dst.data.shape != arr.shape:
                raise ContractError(f"ParamSet: shape mismatch for {name}")
            dst.data[...] = arr


def count_params(p: ParamSet) -> int:
    """Total number of scalar values across all entries."""
    return int(sum(a.size for _, a in p.items()))


def flatten(p: ParamSet) -> np.ndarray:
    """Concatenate all values into one vector, in name order."""
    if len(p) == 0:
        return np.zeros(0)
    return np.concatenate([a.reshape(-1) for _, a in p.items()])


def unflatten(template: ParamSet, vector: np.ndarray) -> ParamSet:
    """Rebuild a ParamSet with the template's names/shapes from a flat vector."""
    vector = np.asarray(vector)
    if vector.ndim != 1 or vector.size != count_params(template):
        raise ContractError(
            f"unflatten: expected vector of length {count_params(template)}, "
            f"got shape {vector.shape}")
    out, pos = [], 0
    for name, a in template.items():
        out.append((name, vector[pos:pos + a.size].reshape(a.shape).astype(a.dtype)))
        pos += a.size
    return ParamSet(out)


def save_bytes(p: ParamSet, precision: str | None = None) -> bytes:
    """Serialize to the FMPS blob format.

    ``precision`` is "f32" or "f64"; by default the entries' own (uniform)
    dtype is used.
    """
    if precision is None:
        dtypes = {a.dtype for _, a in p.items()}
        if len(dtypes) > 1:
            raise ContractError("save_bytes: mixed dtypes; pass precision explicitly")
        dtype = dtypes.pop() if dtypes else np.dtype(np.float64)
    else:
        dtype = {"f32": np.dtype(np.float32), "f64": np.dtype(np.float64)}.get(precision)
        if dtype is None:
            raise ContractError(f"save_bytes: unknown precision {precision!r}")
    code = _DTYPE_CODES[np.dtype(dtype)]
    chunks = [MAGIC, struct.pack("<BI", code, len(p))]
    for name, arr in p.items():
        nb = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(nb)))
        chunks.append(nb)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype=_CODE_DTYPES[code]).tobytes())
    return b"".join(chunks)


def load_bytes(blob: bytes) -> ParamSet:
    """Parse an FMPS blob back into a ParamSet."""
    if blob[:4] != MAGIC:
        raise DataError("load_bytes: bad magic; not a parameter blob")
    try:
        code, count = struct.unpack_from("<BI", blob, 4)
        dtype = _CODE_DTYPES.get(code)
        if dtype is None:
            raise DataError(f"load_bytes: unknown precision code {code}")
        pos = 9
        items = []
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            shape = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            n = int(np.prod(shape, dtype=np.int64)) if rank else 1
            arr = np.frombuffer(blob, dtype=dtype, count=n, offset=pos).reshape(shape)
            pos += n * dtype.itemsize
            items.append((name, arr))
        if pos != len(blob):
            raise DataError("load_bytes: trailing bytes after last entry")
    except (struct.error, ValueError, UnicodeDecodeError) as e:
        raise DataError(f"load_bytes: truncated or corrupt blob ({e})") from e
    return ParamSet(items)


def save_file(p: ParamSet, path, precision: str | None = None) -> int:
    blob = save_bytes(p, precision)
    with open(path, "wb") as f:
        f.write(blob)
    return len(blob)


def load_file(path) -> ParamSet:
    with open(path, "rb") as f:
        return load_bytes(f.read())
