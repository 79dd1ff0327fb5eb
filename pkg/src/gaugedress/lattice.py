"""Periodic hypercubic lattice and discrete derivatives.

Array layout is ``(t, x, y, z)`` on the leading four axes.  Coordinates of
site ``n`` along axis ``a`` are ``origin[a] + n * spacing[a]``; the default
origin centres the box so that the coordinate origin is a lattice site.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

__all__ = [
    "Lattice",
    "LatticeError",
    "fd4",
    "fd4_nonperiodic",
    "fd4_symbol",
]


class LatticeError(ValueError):
    """Invalid lattice description."""


@dataclass(frozen=True)
class Lattice:
    """Periodic 4D lattice.

    Parameters
    ----------
    extents : sequence of 4 ints
        Sites per axis ``(Nt, Nx, Ny, Nz)``; each even and at least 8.
    spacings : sequence of 4 floats
        Lattice spacing per axis.
    origin : sequence of 4 floats, optional
        Coordinate of site ``(0, 0, 0, 0)``.  Defaults to ``-N h / 2``.
    """

    extents: tuple
    spacings: tuple
    origin: tuple = field(default=None)

    def __post_init__(self):
        ext = tuple(int(n) for n in self.extents)
        sp = tuple(float(h) for h in self.spacings)
        if len(ext) != 4 or len(sp) != 4:
            raise LatticeError("lattice needs exactly four extents and four spacings")
        for n in ext:
            if n < 8 or n % 2:
                raise LatticeError(f"extent {n} must be even and >= 8")
        for h in sp:
            if not np.isfinite(h) or h <= 0:
                raise LatticeError(f"spacing {h} must be positive")
        if self.origin is None:
            org = tuple(-0.5 * n * h for n, h in zip(ext, sp))
        else:
            org = tuple(float(o) for o in self.origin)
            if len(org) != 4:
                raise LatticeError("origin must have four entries")
        object.__setattr__(self, "extents", ext)
        object.__setattr__(self, "spacings", sp)
        object.__setattr__(self, "origin", org)

    @classmethod
    def cubic(cls, n: int, length: float, nt: int | None = None, lt: float | None = None) -> "Lattice":
        """Centred lattice with ``n`` sites over ``length`` per spatial axis."""
        nt = n if nt is None else nt
        lt = length if lt is None else lt
        return cls((nt, n, n, n), (lt / nt, length / n, length / n, length / n))

    def refined(self, factor: int = 2) -> "Lattice":
        """Same physical box with ``factor`` times as many sites per axis."""
        ext = tuple(n * factor for n in self.extents)
        sp = tuple(h / factor for h in self.spacings)
        return Lattice(ext, sp, self.origin)

    @property
    def shape(self) -> tuple:
        return self.extents

    @property
    def size(self) -> int:
        return int(np.prod(self.extents))

    @property
    def lengths(self) -> tuple:
        return tuple(n * h for n, h in zip(self.extents, self.spacings))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacings))

    @property
    def spatial_volume(self) -> float:
        return float(np.prod(self.lengths[1:]))

    def axis(self, a: int) -> np.ndarray:
        """1D coordinates along axis ``a``."""
        return self.origin[a] + self.spacings[a] * np.arange(self.extents[a])

    def coords(self, t0: int = 0, t1: int | None = None) -> list:
        """Broadcastable coordinate arrays for time slices ``t0:t1``."""
        t1 = self.extents[0] if t1 is None else t1
        out = []
        for a in range(4):
            c = self.axis(a)
            if a == 0:
                c = c[t0:t1]
            shp = [1, 1, 1, 1]
            shp[a] = c.size
            out.append(c.reshape(shp))
        return out

    def momenta(self, a: int) -> np.ndarray:
        """Angular lattice frequencies along axis ``a`` (numpy FFT order)."""
        return 2.0 * np.pi * np.fft.fftfreq(self.extents[a], self.spacings[a])

    def slabs(self, max_sites: int = 1 << 20) -> Iterator[tuple]:
        """Yield ``(t0, t1)`` time slabs holding at most ``max_sites`` sites."""
        per = int(np.prod(self.extents[1:]))
        step = max(1, max_sites // per)
        for t0 in range(0, self.extents[0], step):
            yield t0, min(self.extents[0], t0 + step)

    def index_of(self, point: Sequence[float]) -> tuple:
        """Nearest lattice index to a physical point (no wrapping)."""
        return tuple(int(round((p - o) / h)) for p, o, h in zip(point, self.origin, self.spacings))

    def boundary_faces(self) -> Iterator[tuple]:
        """Yield index tuples selecting each of the eight boundary hyperfaces."""
        for a in range(4):
            for idx in (0, self.extents[a] - 1):
                sl = [slice(None)] * 4
                sl[a] = slice(idx, idx + 1)
                yield tuple(sl)

    def to_dict(self) -> dict:
        return {"extents": list(self.extents), "spacings": list(self.spacings), "origin": list(self.origin)}


_C1 = 8.0 / 12.0
_C2 = -1.0 / 12.0


def fd4(f: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Fourth-order central difference on a periodic axis."""
    fp1 = np.roll(f, -1, axis)
    fm1 = np.roll(f, 1, axis)
    out = _C1 * (fp1 - fm1)
    fp1 = np.roll(f, -2, axis)
    fm1 = np.roll(f, 2, axis)
    out += _C2 * (fp1 - fm1)
    out /= h
    return out


def fd4_symbol(kh: np.ndarray) -> np.ndarray:
    """Effective wavenumber times ``h`` of :func:`fd4` for phase ``e^{i k x}``."""
    return (8.0 * np.sin(kh) - np.sin(2.0 * kh)) / 6.0


def fd4_nonperiodic(f: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Fourth-order difference with one-sided stencils at the two ends."""
    f = np.moveaxis(f, axis, 0)
    n = f.shape[0]
    out = np.empty_like(f)
    out[2 : n - 2] = (_C1 * (f[3 : n - 1] - f[1 : n - 3]) + _C2 * (f[4:n] - f[0 : n - 4]))
    # one-sided fourth-order stencils
    a = np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / 12.0
    b = np.array([-3.0, -10.0, 18.0, -6.0, 1.0]) / 12.0
    out[0] = np.tensordot(a, f[0:5], axes=1)
    out[1] = np.tensordot(b, f[0:5], axes=1)
    out[n - 1] = -np.tensordot(a, f[n - 1 : n - 6 : -1], axes=1)
    out[n - 2] = -np.tensordot(b, f[n - 1 : n - 6 : -1], axes=1)
    out /= h
    return np.moveaxis(out, 0, axis)
