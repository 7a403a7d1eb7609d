"""Dense tensor value type, reverse-mode tape, and the DPNT dump format.

Tensors are thin immutable-by-convention wrappers around contiguous
row-major numpy arrays (float32 by default, float64 for gradient
checking).  4-D feature maps use N x C x H x W layout.

The Tape records primitive ops in execution order; replaying it in
reverse propagates vector-Jacobian products with additive accumulation
over fan-out.  It exists for verification only: ops record onto a tape
only while one is active, so plain inference pays no bookkeeping cost.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class ConfigError(ValueError):
    """A structural constraint (divisibility, dtype, naming) is violated."""


class FormatError(ValueError):
    """A binary or text artifact does not parse as its declared format."""


_ALLOWED_DTYPES = (np.float32, np.float64)


class Tensor:
    """Dense N-dimensional array, rank 0..4, float32 or float64."""

    __slots__ = ("data",)

    def __init__(self, data, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
            arr = arr.astype(np.float32)
        if arr.ndim > 4:
            raise ShapeError(f"tensor rank {arr.ndim} exceeds the supported maximum of 4")
        self.data = np.ascontiguousarray(arr)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype))

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def tolist(self):
        return self.data.tolist()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name})"

    # Arithmetic sugar delegates to the primitive ops so results are
    # recorded on an active tape.  Imported lazily to avoid a cycle.
    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops

        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops

        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops

        return ops.div(other, self)

    def __neg__(self):
        from . import ops

        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, other)

    def reshape(self, shape) -> "Tensor":
        from . import ops

        return ops.reshape(self, shape)

    def detach(self) -> "Tensor":
        """New leaf tensor sharing this value; gradients stop here."""
        return Tensor(self.data)


@dataclass
class _Record:
    inputs: tuple[Tensor, ...]
    output: Tensor
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]


_TAPE_STACK: list["Tape"] = []


class Tape:
    """Ordered record of executed primitive ops for one reverse sweep.

    Single-writer: one tape per evaluation, pushed via ``with Tape() as t``.
    """

    def __init__(self):
        self._records: list[_Record] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        if _TAPE_STACK and _TAPE_STACK[-1] is self:
            _TAPE_STACK.pop()
        return False

    def __len__(self) -> int:
        return len(self._records)

    def gradients(
        self,
        output: Tensor,
        wrt: Iterable[Tensor],
        cotangent: np.ndarray | None = None,
    ) -> list[np.ndarray]:
        """Vector-Jacobian products of ``output`` w.r.t. each tensor in ``wrt``.

        The reverse sweep visits records in exact reverse execution order and
        accumulates gradients additively over fan-out.  ``cotangent`` seeds the
        output gradient (defaults to ones).
        """
        wrt = list(wrt)
        seed = np.ones_like(output.data) if cotangent is None else np.asarray(cotangent)
        if seed.shape != output.data.shape:
            raise ShapeError(
                f"cotangent shape {seed.shape} does not match output shape {output.data.shape}"
            )
        grads: dict[int, np.ndarray] = {id(output): seed.astype(output.data.dtype)}
        for rec in reversed(self._records):
            g = grads.get(id(rec.output))
            if g is None:
                continue
            partials = rec.vjp(g)
            for t, gi in zip(rec.inputs, partials):
                if gi is None:
                    continue
                acc = grads.get(id(t))
                grads[id(t)] = gi if acc is None else acc + gi
        return [grads.get(id(w), np.zeros_like(w.data)) for w in wrt]


def tape_active() -> bool:
    return bool(_TAPE_STACK)


def record(inputs: Sequence[Tensor], output: Tensor, vjp) -> None:
    """Append one primitive-op record to the active tape, if any."""
    if _TAPE_STACK:
        _TAPE_STACK[-1]._records.append(_Record(tuple(inputs), output, vjp))


# ---------------------------------------------------------------------------
# DPNT binary dump format
#
# little-endian: magic "DPNT", u32 version=1, u8 dtype (0=f32, 1=f64),
# u8 ndim, u32 dims[ndim], raw elements row-major.
# ---------------------------------------------------------------------------

_DPNT_MAGIC = b"DPNT"
_DPNT_VERSION = 1
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def tensor_to_bytes(t: Tensor) -> bytes:
    header = _DPNT_MAGIC + struct.pack(
        "<IBB", _DPNT_VERSION, _DTYPE_CODES[t.dtype], t.ndim
    )
    dims = struct.pack(f"<{t.ndim}I", *t.shape)
    payload = np.ascontiguousarray(t.data.astype(t.data.dtype.newbyteorder("<"))).tobytes()
    return header + dims + payload


def tensor_from_bytes(buf: bytes) -> Tensor:
    if len(buf) < 10:
        raise FormatError("tensor dump truncated: header incomplete")
    if buf[:4] != _DPNT_MAGIC:
        raise FormatError(f"bad tensor dump magic {buf[:4]!r}, expected {_DPNT_MAGIC!r}")
    version, code, ndim = struct.unpack_from("<IBB", buf, 4)
    if version != _DPNT_VERSION:
        raise FormatError(f"unsupported tensor dump version {version}")
    if code not in _CODE_DTYPES:
        raise FormatError(f"unknown dtype code {code}")
    if ndim > 4:
        raise FormatError(f"tensor dump rank {ndim} exceeds 4")
    off = 10
    if len(buf) < off + 4 * ndim:
        raise FormatError("tensor dump truncated: dimension list incomplete")
    dims = struct.unpack_from(f"<{ndim}I", buf, off)
    off += 4 * ndim
    dtype = _CODE_DTYPES[code]
    count = int(np.prod(dims, dtype=np.int64)) if ndim else 1
    need = count * dtype.itemsize
    if len(buf) != off + need:
        raise FormatError(
            f"tensor dump payload is {len(buf) - off} bytes, expected {need}"
        )
    arr = np.frombuffer(buf, dtype=dtype, count=count, offset=off).reshape(dims)
    return Tensor(arr.astype(dtype.newbyteorder("=")))


def save_tensor(t: Tensor, path) -> None:
    with open(path, "wb") as f:
        f.write(tensor_to_bytes(t))


def load_tensor(path) -> Tensor:
    with open(path, "rb") as f:
        return tensor_from_bytes(f.read())
