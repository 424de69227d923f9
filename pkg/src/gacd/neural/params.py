"""Named parameter store with Adam state and a binary checkpoint format.

Checkpoint layout (little-endian throughout)::

    magic   4 bytes  b"GACD"
    version u32      currently 1
    records, one per parameter in store order:
        u32 name length, name bytes (UTF-8)
        u32 rank, u32 dims[rank]
        float32 payload, C order

Parameters live as 64-bit arrays in memory and round to 32-bit on disk, so a
deterministic run writes byte-identical checkpoints.
"""

from __future__ import annotations

import struct

import numpy as np

from .tensor import Tensor, default_dtype

CHECKPOINT_MAGIC = b"GACD"
CHECKPOINT_VERSION = 1


class ParamStore:
    def __init__(self) -> None:
        self._params: dict[str, Tensor] = {}
        self._adam_m: dict[str, np.ndarray] = {}
        self._adam_v: dict[str, np.ndarray] = {}
        self._t = 0
        self._frozen: set[str] = set()

    # -- creation and access ----------------------------------------------

    def add(self, name: str, array: np.ndarray) -> Tensor:
        if name in self._params:
            raise KeyError(f"parameter {name!r} already exists")
        t = Tensor(np.asarray(array, dtype=default_dtype()), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def subset(self, prefix: str) -> dict[str, Tensor]:
        return {k: v for k, v in self._params.items() if k.startswith(prefix)}

    def n_parameters(self) -> int:
        return sum(p.data.size for p in self._params.values())

    # -- gradient machinery ------------------------------------------------

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def freeze(self, prefix: str) -> None:
        """Mark every parameter under ``prefix`` as not trainable."""
        self._frozen.add(prefix)

    def is_frozen(self, name: str) -> bool:
        return any(name.startswith(pre) for pre in self._frozen)

    def adam_step(
        self,
        lr: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> None:
        """One Adam update over all unfrozen parameters (missing grads act as 0)."""
        self._t += 1
        t = self._t
        for name, p in self._params.items():
            if self.is_frozen(name):
                continue
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m = self._adam_m.setdefault(name, np.zeros_like(p.data))
            v = self._adam_v.setdefault(name, np.zeros_like(p.data))
            m += (1 - beta1) * (g - m)
            v += (1 - beta2) * (g * g - v)
            mhat = m / (1 - beta1**t)
            vhat = v / (1 - beta2**t)
            p.data -= lr * mhat / (np.sqrt(vhat) + eps)

    def snapshot(self) -> dict:
        """Full optimizer state (parameters plus Adam moments) for rollback."""
        return {
            "params": {k: v.data.copy() for k, v in self._params.items()},
            "m": {k: v.copy() for k, v in self._adam_m.items()},
            "v": {k: v.copy() for k, v in self._adam_v.items()},
            "t": self._t,
        }

    def restore(self, snap: dict) -> None:
        for name, arr in snap["params"].items():
            self._params[name].data = arr.copy()
        self._adam_m = {k: v.copy() for k, v in snap["m"].items()}
        self._adam_v = {k: v.copy() for k, v in snap["v"].items()}
        self._t = snap["t"]

    # -- (de)serialization -------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self._params.items()}

    def load_state(self, arrays: dict[str, np.ndarray], strict: bool = True) -> None:
        missing = set(self._params) - set(arrays)
        extra = set(arrays) - set(self._params)
        if strict and (missing or extra):
            raise ValueError(
                f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}"
            )
        for name, arr in arrays.items():
            if name not in self._params:
                continue
            p = self._params[name]
            if p.data.shape != arr.shape:
                raise ValueError(
                    f"parameter {name!r}: shape {arr.shape} does not match {p.data.shape}"
                )
            p.data = np.asarray(arr, dtype=p.data.dtype).copy()


def save_checkpoint(path, store: ParamStore) -> None:
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        for name, p in store.items():
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            dims = p.data.shape
            f.write(struct.pack("<I", len(dims)))
            for d in dims:
                f.write(struct.pack("<I", d))
            f.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise ValueError("not a checkpoint: bad magic")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    out: dict[str, np.ndarray] = {}
    off = 8
    while off < len(blob):
        (nlen,) = struct.unpack_from("<I", blob, off)
        off += 4
        name = blob[off : off + nlen].decode("utf-8")
        off += nlen
        (rank,) = struct.unpack_from("<I", blob, off)
        off += 4
        dims = struct.unpack_from(f"<{rank}I", blob, off) if rank else ()
        off += 4 * rank
        count = int(np.prod(dims, dtype=np.int64)) if rank else 1
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=off)
        off += 4 * count
        out[name] = arr.reshape(dims).astype(np.float64)
    return out


# ---------------------------------------------------------------------------
# initializers


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def zeros(*shape: int) -> np.ndarray:
    return np.zeros(shape)
