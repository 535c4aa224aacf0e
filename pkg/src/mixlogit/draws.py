"""Quasi-random draw machinery: Sobol points, linear matrix scrambling
with a digital shift, inverse-normal mapping, and per-respondent draw
allocation.

Bit-level conventions (fixed so alternate implementations can replicate
bitwise): points carry W = 32 significant bits. The base sequence is
generated in Gray-code order from the embedded Joe-Kuo direction
numbers and the all-zeros first point is dropped (skip-zero), so
`sobol_points(3, 1)` yields 0.5, 0.75, 0.25. Scrambling draws, per
dimension in order, first the strictly-lower-triangular bits of a unit
lower-triangular W x W bit matrix (row-major) and then a W-bit digital
shift, all from `numpy.random.Generator(PCG64(seed))` via
`integers(0, 2, size=...)` bit arrays; the scrambled integer is
M x XOR shift with bit 1 the most significant.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from . import _sobol_data
from .errors import DimUnsupported
from .modelspec import ModelSpec, ParamLayout

W = 32
_SCALE = float(2 ** W)

DEFAULT_DRAWS = 1024


def _direction_integers(dim: int) -> np.ndarray:
    """Direction integers v_k (k=1..W) for `dim` dimensions, MSB-aligned."""
    V = np.zeros((dim, W), dtype=np.uint64)
    V[0] = [1 << (W - 1 - k) for k in range(W)]
    for d in range(1, dim):
        p = _sobol_data.POLY[d]
        s = p.bit_length() - 1
        m = list(_sobol_data.MINIT[d][:s])
        a = [(p >> (s - 1 - i)) & 1 for i in range(s - 1)]  # interior coefficients
        for k in range(s, W):
            new = m[k - s] ^ (m[k - s] << s)
            for i in range(1, s):
                if a[i - 1]:
                    new ^= m[k - i] << i
            m.append(new)
        V[d] = [np.uint64(m[k] << (W - 1 - k)) for k in range(W)]
    return V


def _sobol_integers(count: int, dim: int, start: int = 1) -> np.ndarray:
    """Sobol points with indices [start, start+count) as W-bit integers."""
    if dim > _sobol_data.MAX_DIM:
        raise DimUnsupported(f"dim {dim} exceeds the embedded table ({_sobol_data.MAX_DIM})")
    if dim < 1 or count < 1:
        raise ValueError("count and dim must be >= 1")
    V = _direction_integers(dim)
    idx = np.arange(start, start + count, dtype=np.uint64)
    gray = idx ^ (idx >> np.uint64(1))
    x = np.zeros((count, dim), dtype=np.uint64)
    for k in range(W):
        on = (gray >> np.uint64(k)) & np.uint64(1) == 1
        if on.any():
            x[on] ^= V[:, k]
    return x


def sobol_points(count: int, dim: int) -> np.ndarray:
    """Unscrambled Sobol points in [0,1)^dim (skip-zero convention)."""
    return _sobol_integers(count, dim).astype(np.float64) / _SCALE


def _base_points_for_allocation(count: int, dim: int) -> np.ndarray:
    """Points with indices [0, count) for scrambled allocation.

    Block alignment matters: indices [n*2^m, (n+1)*2^m) form a digital
    net, so per-respondent blocks of an aligned power-of-two sequence
    keep the low-discrepancy structure. The index-0 point is retained
    here because the digital shift moves it off the origin; the
    public skip-zero convention applies to unscrambled use only.
    """
    return _sobol_integers(count, dim, start=0).astype(np.float64) / _SCALE


def scramble_shift(points: np.ndarray, seed: int) -> np.ndarray:
    """Linear matrix scramble plus digital shift of a point matrix.

    Deterministic in `seed`; preserves the digital-net structure, and the
    shift makes every coordinate marginally uniform across seeds.
    """
    points = np.asarray(points, dtype=np.float64)
    squeeze = points.ndim == 1
    if squeeze:
        points = points[:, None]
    x = (points * _SCALE).astype(np.uint64)
    rng = np.random.default_rng(seed)
    out = np.zeros_like(x)
    for d in range(x.shape[1]):
        lower = rng.integers(0, 2, size=(W, W), dtype=np.uint64)
        rows = np.zeros(W, dtype=np.uint64)
        for i in range(W):
            bits = lower[i].copy()
            bits[i] = 1        # unit diagonal
            bits[i + 1:] = 0   # lower triangular
            rows[i] = np.sum(bits << np.arange(W - 1, -1, -1, dtype=np.uint64), dtype=np.uint64)
        shift_bits = rng.integers(0, 2, size=W, dtype=np.uint64)
        shift = np.sum(shift_bits << np.arange(W - 1, -1, -1, dtype=np.uint64), dtype=np.uint64)
        acc = np.zeros(x.shape[0], dtype=np.uint64)
        col = x[:, d]
        for i in range(W):
            bit = np.bitwise_count(col & rows[i]) & np.uint64(1)
            acc |= bit << np.uint64(W - 1 - i)
        out[:, d] = acc ^ shift
    result = out.astype(np.float64) / _SCALE
    return result[:, 0] if squeeze else result


def normal_draws(u: np.ndarray) -> np.ndarray:
    """Elementwise inverse standard-normal CDF; zeros are nudged inward."""
    u = np.asarray(u, dtype=np.float64)
    tiny = np.finfo(np.float64).tiny
    low = u < tiny
    high = u > 1.0 - 1e-16
    if low.any() or high.any():
        warnings.warn("normal_draws: inputs at the boundary of (0,1) were nudged inward",
                      RuntimeWarning, stacklevel=2)
        u = np.clip(u, tiny, 1.0 - 1e-16)
    return ndtri(u)


@dataclass(frozen=True)
class DrawTensor:
    """Per-respondent standard-normal draws, fixed over an estimation run.

    `values` has shape (n_respondents, n_draws, n_dims) with dimension
    order following the spec: random coefficients in declaration order,
    then error components.
    """

    values: np.ndarray
    seed: int
    scramble: str = "lms32+shift"

    @property
    def n_respondents(self) -> int:
        return self.values.shape[0]

    @property
    def n_draws(self) -> int:
        return self.values.shape[1]

    @property
    def n_dims(self) -> int:
        return self.values.shape[2]


def allocate_draws(spec: ModelSpec, n_respondents: int, n_draws: int = DEFAULT_DRAWS,
                   seed: int = 0) -> DrawTensor:
    """Allocate the fixed draw tensor for an estimation run.

    One scrambled sequence of length n_respondents * n_draws is
    partitioned contiguously: respondent n receives rows
    [n * n_draws, (n+1) * n_draws).
    """
    if n_draws < 1:
        raise ValueError("n_draws must be >= 1")
    dims = ParamLayout(spec).n_draw_dims
    if dims == 0:
        values = np.zeros((n_respondents, n_draws, 0))
    else:
        u = scramble_shift(_base_points_for_allocation(n_respondents * n_draws, dims), seed)
        values = normal_draws(u).reshape(n_respondents, n_draws, dims)
    values.setflags(write=False)
    return DrawTensor(values=values, seed=seed)


_MAGIC = b"MXLDRAWS"


def write_draws(tensor: DrawTensor, path) -> None:
    """Binary dump: magic, u32 version, u64 N/R/D, i64 seed, then the
    values as little-endian float64 in C order."""
    n, r, d = tensor.values.shape
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IQQQq", 1, n, r, d, tensor.seed))
        fh.write(np.ascontiguousarray(tensor.values, dtype="<f8").tobytes())


def read_draws(path) -> DrawTensor:
    with open(path, "rb") as fh:
        if fh.read(8) != _MAGIC:
            raise ValueError(f"{path} is not a draw dump")
        version, n, r, d, seed = struct.unpack("<IQQQq", fh.read(36))
        if version != 1:
            raise ValueError(f"unsupported draw dump version {version}")
        values = np.frombuffer(fh.read(), dtype="<f8").reshape(n, r, d)
    return DrawTensor(values=values, seed=seed)
