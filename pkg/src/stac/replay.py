"""Fixed-capacity ring buffer of transitions with uniform minibatch sampling."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, UsageError

SNAPSHOT_MAGIC = b"STACRPLY"
SNAPSHOT_VERSION = 1
_HEADER = struct.Struct("<8sIIIqqq")  # magic, version, state_dim, action_dim, capacity, size, cursor


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a: np.ndarray
    r: float
    s_next: np.ndarray
    done: bool  # true termination only; time-limit truncation is stored as False


@dataclass
class Batch:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    done: np.ndarray

    def __len__(self):
        return len(self.r)


class ReplayBuffer:
    def __init__(self, state_dim: int, action_dim: int, capacity: int = 1_000_000):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.capacity = int(capacity)
        self._s = np.zeros((self.capacity, state_dim))
        self._a = np.zeros((self.capacity, action_dim))
        self._r = np.zeros(self.capacity)
        self._s_next = np.zeros((self.capacity, state_dim))
        self._done = np.zeros(self.capacity, dtype=bool)
        self.size = 0
        self._cursor = 0

    def __len__(self):
        return self.size

    def push(self, t: Transition):
        s, a, s_next = (np.asarray(v, dtype=float) for v in (t.s, t.a, t.s_next))
        if s.shape != (self.state_dim,) or s_next.shape != (self.state_dim,) or a.shape != (self.action_dim,):
            raise DimensionError(
                f"transition dims (s={s.shape}, a={a.shape}, s'={s_next.shape}) do not match "
                f"buffer (state_dim={self.state_dim}, action_dim={self.action_dim})")
        if not np.isfinite(t.r):
            raise ValueError(f"non-finite reward {t.r}")
        i = self._cursor
        self._s[i] = s
        self._a[i] = a
        self._r[i] = t.r
        self._s_next[i] = s_next
        self._done[i] = bool(t.done)
        self._cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def add(self, s, a, r, s_next, done):
        self.push(Transition(s, a, r, s_next, done))

    def sample_indices(self, n: int, rng) -> np.ndarray:
        if self.size == 0:
            raise UsageError("cannot sample from an empty replay buffer")
        return rng.integers(0, self.size, size=n)

    def sample(self, n: int, rng) -> Batch:
        """``n`` uniform draws with replacement."""
        return self.gather(self.sample_indices(n, rng))

    def gather(self, idx) -> Batch:
        return Batch(self._s[idx], self._a[idx], self._r[idx], self._s_next[idx], self._done[idx])

    def __getitem__(self, i) -> Transition:
        """Transition by age: 0 is the oldest entry still stored."""
        if not -self.size <= i < self.size:
            raise IndexError(i)
        i %= self.size
        slot = (self._cursor - self.size + i) % self.capacity
        return Transition(self._s[slot].copy(), self._a[slot].copy(), float(self._r[slot]),
                          self._s_next[slot].copy(), bool(self._done[slot]))

    def nbytes(self) -> int:
        return sum(a.nbytes for a in (self._s, self._a, self._r, self._s_next, self._done))

    # snapshots ---------------------------------------------------------------
    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, self.state_dim, self.action_dim,
                                  self.capacity, self.size, self._cursor))
            for arr in (self._s, self._a, self._r, self._s_next, self._done):
                fh.write(np.ascontiguousarray(arr[: self.size] if self.size < self.capacity else arr).tobytes())

    @classmethod
    def load(cls, path) -> "ReplayBuffer":
        raw = Path(path).read_bytes()
        if len(raw) < _HEADER.size:
            raise UsageError(f"{path}: truncated replay snapshot")
        magic, version, ds, da, capacity, size, cursor = _HEADER.unpack_from(raw)
        if magic != SNAPSHOT_MAGIC:
            raise UsageError(f"{path}: not a replay snapshot")
        if version != SNAPSHOT_VERSION:
            raise UsageError(f"{path}: unsupported snapshot version {version}")
        buf = cls(ds, da, capacity)
        rows = size if size < capacity else capacity
        offset = _HEADER.size
        for name, width, dtype in (("_s", ds, np.float64), ("_a", da, np.float64), ("_r", 0, np.float64),
                                   ("_s_next", ds, np.float64), ("_done", 0, np.bool_)):
            count = rows * max(width, 1)
            nbytes = count * np.dtype(dtype).itemsize
            chunk = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
            target = getattr(buf, name)
            target[:rows] = chunk.reshape(target[:rows].shape)
            offset += nbytes
        if offset != len(raw):
            raise UsageError(f"{path}: snapshot size does not match its header")
        buf.size, buf._cursor = size, cursor
        return buf
