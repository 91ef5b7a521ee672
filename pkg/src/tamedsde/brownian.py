"""Counter-based Brownian increment grids with exact dyadic coarsening.

Every increment is a deterministic function of ``(seed, path_id, step,
component)``: the Philox4x64 key is ``(seed, path_id)`` and the increment
for ``(step, component)`` is built from raw word ``step * m + component`` of
that stream.  The word is mapped to a uniform in (0, 1) from its top 53 bits
and then to a standard normal through the inverse normal CDF
(``scipy.special.ndtri``).  This transform is frozen; changing it changes
every regression baseline.

Increments are quantized to integer multiples of ``QUANTUM = 2**-36``.  Any
sum of such values stays exactly representable in float64 while its
magnitude is below ``2**17``, so coarsened partial sums agree with fine
partial sums bit for bit, whatever the summation order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

MAX_LEVEL = 26
QUANTUM = 2.0**-36
_UINT53 = 2.0**-53
_HEADER = struct.Struct("<4sIIIdQ")
MAGIC = b"SDEW"


class ResolutionError(ValueError):
    """Requested dyadic level exceeds :data:`MAX_LEVEL`."""


@dataclass(frozen=True, eq=False)
class IncrementGrid:
    """Brownian increments of one path on the uniform mesh ``t_n = n T / 2**level``."""

    m: int
    T: float
    level: int
    increments: np.ndarray = field(repr=False)
    seed: int = 0
    path_id: int = 0

    def __post_init__(self):
        inc = np.asarray(self.increments, dtype=np.float64)
        if inc.shape != (2**self.level, self.m):
            raise ValueError(
                f"increments must have shape {(2**self.level, self.m)}, got {inc.shape}"
            )
        if inc.flags.writeable:
            inc = inc.copy()
            inc.flags.writeable = False
        object.__setattr__(self, "increments", inc)

    @property
    def n_steps(self) -> int:
        return 2**self.level

    @property
    def h(self) -> float:
        return self.T / 2**self.level

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.h

    def brownian_path(self) -> np.ndarray:
        """``W`` at every grid point, starting from ``W_0 = 0``; shape ``(N + 1, m)``."""
        return partial_sums(self.increments)

    def __eq__(self, other):
        if not isinstance(other, IncrementGrid):
            return NotImplemented
        return (
            (self.m, self.T, self.level, self.seed, self.path_id)
            == (other.m, other.T, other.level, other.seed, other.path_id)
            and np.array_equal(self.increments, other.increments)
        )

    def to_bytes(self) -> bytes:
        """Little-endian dump: 32-byte header followed by row-major float64 increments."""
        header = _HEADER.pack(MAGIC, self.m, self.level, self.path_id, self.T, self.seed)
        return header + self.increments.astype("<f8").tobytes(order="C")

    @classmethod
    def from_bytes(cls, data: bytes) -> "IncrementGrid":
        magic, m, level, path_id, T, seed = _HEADER.unpack_from(data)
        if magic != MAGIC:
            raise ValueError(f"bad magic {magic!r}")
        body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
        return cls(m=m, T=T, level=level, increments=body.reshape(2**level, m),
                   seed=seed, path_id=path_id)


def partial_sums(increments: np.ndarray) -> np.ndarray:
    """Left-to-right cumulative sums along the step axis with a leading zero row.

    Works for a single grid ``(N, m)`` or a stack of paths ``(P, N, m)``.
    """
    inc = np.asarray(increments)
    zero = np.zeros(inc.shape[:-2] + (1, inc.shape[-1]))
    return np.concatenate([zero, np.cumsum(inc, axis=-2)], axis=-2)


def _check(m: int, T: float, level: int) -> None:
    if level > MAX_LEVEL:
        raise ResolutionError(f"level {level} exceeds the cap of {MAX_LEVEL}")
    if level < 0:
        raise ValueError("level must be non-negative")
    if m < 1:
        raise ValueError("noise dimension m must be at least 1")
    if not T > 0:
        raise ValueError(f"horizon T must be positive, got {T}")


def standard_normals(seed: int, path_id: int, start: int, count: int) -> np.ndarray:
    """Words ``start .. start + count - 1`` of the ``(seed, path_id)`` stream as N(0, 1)."""
    key = np.array([seed & 0xFFFF_FFFF_FFFF_FFFF, path_id], dtype=np.uint64)
    block, offset = divmod(start, 4)
    raw = np.random.Philox(key=key, counter=block).random_raw(offset + count)[offset:]
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * _UINT53
    return ndtri(u)


def generate_block(seed: int, path_id: int, m: int, T: float, level: int,
                   start: int, stop: int) -> np.ndarray:
    """Increments for steps ``start <= n < stop`` of the level-``level`` grid.

    Identical to the corresponding rows of :func:`generate`; lets long runs
    stream the noise in chunks.
    """
    _check(m, T, level)
    if not 0 <= start <= stop <= 2**level:
        raise ValueError(f"step range [{start}, {stop}) outside [0, {2**level}]")
    z = standard_normals(seed, path_id, start * m, (stop - start) * m)
    scale = np.sqrt(T / 2**level)
    return (np.rint(z * (scale / QUANTUM)) * QUANTUM).reshape(stop - start, m)


def generate(seed: int, path_id: int, m: int, T: float, level: int) -> IncrementGrid:
    _check(m, T, level)
    inc = generate_block(seed, path_id, m, T, level, 0, 2**level)
    return IncrementGrid(m=m, T=float(T), level=level, increments=inc,
                         seed=seed, path_id=path_id)


def generate_paths(seed: int, path_ids, m: int, T: float, level: int,
                   start: int = 0, stop: int | None = None) -> np.ndarray:
    """Stacked increments ``(P, stop - start, m)`` for several paths."""
    stop = 2**level if stop is None else stop
    return np.stack([generate_block(seed, int(p), m, T, level, start, stop)
                     for p in path_ids])


def coarsen_increments(increments: np.ndarray, by: int) -> np.ndarray:
    """Sum consecutive blocks of ``2**by`` steps; accepts ``(N, m)`` or ``(P, N, m)``."""
    if by == 0:
        return increments
    inc = np.asarray(increments)
    n = inc.shape[-2]
    k = 2**by
    if n % k:
        raise ValueError(f"{n} steps cannot be coarsened by 2**{by}")
    blocks = inc.reshape(inc.shape[:-2] + (n // k, k, inc.shape[-1]))
    out = blocks[..., 0, :].copy()
    for j in range(1, k):
        out += blocks[..., j, :]
    return out


def coarsen(grid: IncrementGrid, by: int) -> IncrementGrid:
    if by < 0 or by > grid.level:
        raise ValueError(f"cannot coarsen a level-{grid.level} grid by {by}")
    if by == 0:
        return grid
    return IncrementGrid(m=grid.m, T=grid.T, level=grid.level - by,
                         increments=coarsen_increments(grid.increments, by),
                         seed=grid.seed, path_id=grid.path_id)
