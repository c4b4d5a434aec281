"""Wiener increments and the balanced-heterodyne photocurrent record.

Noise is generated counter-style: increment number ``k`` of a stream depends
only on ``(seed, k)``.  Increments are produced in fixed blocks of
``BLOCK`` standard normals; block ``b`` comes from a Philox4x64-10 generator
keyed by the seed with its counter word 1 set to ``b``, so blocks never share
counter space and any block can be regenerated on its own.
"""

from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

BLOCK = 4096
RNG_ALGORITHM = f"philox4x64-10/numpy-standard_normal/block{BLOCK}"
_MAGIC = b"SRCLKREC"
_FORMAT_VERSION = 1


def derive_seed(master_seed: int, index: int) -> int:
    """Seed of trajectory ``index`` in a batch (SeedSequence spawn-key rule)."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(index),))
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class NoiseStream:
    """Gaussian increments with mean 0 and variance ``dt``."""

    seed: int
    dt: float

    def _block(self, b: int) -> np.ndarray:
        bg = np.random.Philox(key=int(self.seed), counter=[0, int(b), 0, 0])
        return np.random.Generator(bg).standard_normal(BLOCK)

    def normals(self, start: int, count: int) -> np.ndarray:
        """Unit normals for counters ``start .. start+count-1``."""
        if count <= 0:
            return np.empty(0)
        first, last = start // BLOCK, (start + count - 1) // BLOCK
        chunks = [self._block(b) for b in range(first, last + 1)]
        buf = np.concatenate(chunks) if len(chunks) > 1 else chunks[0]
        off = start - first * BLOCK
        return buf[off : off + count]

    def increments(self, start: int, count: int) -> np.ndarray:
        return self.normals(start, count) * math.sqrt(self.dt)

    def __getitem__(self, counter: int) -> float:
        return float(self.increments(counter, 1)[0])


def photocurrent_increment(a: complex, t: float, dt: float, dW: float, params) -> float:
    """J*dt over one step: sqrt(eta kappa2) 2 Re[exp(-i Delta t) <a>] dt + dW."""
    c = math.sqrt(params.eta * params.kappa2)
    return c * 2.0 * (np.exp(-1j * params.delta_het * t) * a).real * dt + dW


@dataclass
class TrajectoryRecord:
    """Sampled photocurrent and observables of one run.

    ``channels`` maps names to equal-length arrays; ``times`` and ``current``
    are also available as ``channels['t']`` and ``channels['J']``.
    """

    channels: dict
    meta: dict = field(default_factory=dict)
    final_state: object = None
    final_atoms: object = None

    @property
    def times(self) -> np.ndarray:
        return self.channels["t"]

    @property
    def current(self) -> np.ndarray:
        return self.channels["J"]

    def __len__(self):
        return len(self.channels["t"])

    @property
    def sample_dt(self) -> float:
        return float(self.meta["sample_dt"])

    def names(self) -> list[str]:
        return list(self.channels)

    def validate(self) -> None:
        lens = {len(v) for v in self.channels.values()}
        if len(lens) > 1:
            raise ValueError(f"channel lengths differ: {sorted(lens)}")
        t = self.times
        if len(t) > 1 and not np.allclose(np.diff(t), self.sample_dt, rtol=1e-9, atol=1e-15):
            raise ValueError("non-uniform sample spacing")

    def to_array(self) -> np.ndarray:
        return np.column_stack([np.asarray(v, dtype=float) for v in self.channels.values()]) \
            if self.channels else np.empty((0, 0))

    # --- serialisation -------------------------------------------------

    def write_csv(self, path) -> None:
        """CSV with a ``# {json meta}`` first line; 17 significant digits."""
        names = self.names()
        arr = self.to_array()
        buf = io.StringIO()
        buf.write("# " + json.dumps(self.meta, sort_keys=True) + "\n")
        buf.write(",".join(names) + "\n")
        if arr.size:
            np.savetxt(buf, arr.reshape(len(self), len(names)), delimiter=",", fmt="%.17g")
        Path(path).write_text(buf.getvalue())

    @classmethod
    def read_csv(cls, path) -> "TrajectoryRecord":
        with open(path) as fh:
            first = fh.readline()
            if not first.startswith("# "):
                raise ValueError(f"{path}: missing meta header")
            meta = json.loads(first[2:])
            names = fh.readline().strip().split(",")
            body = fh.read()
        if body.strip():
            data = np.loadtxt(io.StringIO(body), delimiter=",", ndmin=2)
        else:
            data = np.empty((0, len(names)))
        return cls({n: data[:, k].copy() for k, n in enumerate(names)}, meta)

    def write_binary(self, path) -> None:
        """``SRCLKREC`` magic, u32 version, u64 header length, JSON header,
        then little-endian float64 rows (one row per sample)."""
        names = self.names()
        arr = np.ascontiguousarray(self.to_array().reshape(len(self), len(names)), dtype="<f8")
        header = json.dumps({"meta": self.meta, "channels": names, "rows": len(self)},
                            sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<IQ", _FORMAT_VERSION, len(header)))
            fh.write(header)
            fh.write(arr.tobytes())

    @classmethod
    def read_binary(cls, path) -> "TrajectoryRecord":
        raw = Path(path).read_bytes()
        if raw[:8] != _MAGIC:
            raise ValueError(f"{path}: not a record file")
        version, hlen = struct.unpack("<IQ", raw[8:20])
        if version != _FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported record version {version}")
        header = json.loads(raw[20 : 20 + hlen])
        names = header["channels"]
        arr = np.frombuffer(raw[20 + hlen :], dtype="<f8").reshape(header["rows"], len(names))
        return cls({n: arr[:, k].copy() for k, n in enumerate(names)}, header["meta"])
