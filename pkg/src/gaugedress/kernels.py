"""Hot loops with a numba implementation and a numpy twin.

The public functions dispatch on :data:`gaugedress._accel.USE_NUMBA`.  Both
paths compute the same quantities; the numpy path exists for environments
without numba and as a cross-check (see ``benchmarks/``).
"""

from __future__ import annotations

import numpy as np

from . import _accel
from ._accel import njit, prange

__all__ = ["spinor_jet_bilinears", "nudft_accumulate", "ray_integral"]


# ---------------------------------------------------------------------------
# sigma, omega, ubar dU, ubar i g5 dU at every site
# ---------------------------------------------------------------------------


@njit(parallel=True)
def _jet_bilinears_nb(U, dU, sigma, omega, A, B, norm2):
    n = U.shape[0]
    for i in prange(n):
        u0 = U[i, 0]
        u1 = U[i, 1]
        u2 = U[i, 2]
        u3 = U[i, 3]
        c0 = u0.conjugate()
        c1 = u1.conjugate()
        c2 = u2.conjugate()
        c3 = u3.conjugate()
        sigma[i] = (c0 * u0 + c1 * u1 - c2 * u2 - c3 * u3).real
        # ubar i g5 u = i (c0 u2 + c1 u3 - c2 u0 - c3 u1)
        omega[i] = (1j * (c0 * u2 + c1 * u3 - c2 * u0 - c3 * u1)).real
        norm2[i] = (c0 * u0 + c1 * u1 + c2 * u2 + c3 * u3).real
        for a in range(4):
            w0 = dU[a, i, 0]
            w1 = dU[a, i, 1]
            w2 = dU[a, i, 2]
            w3 = dU[a, i, 3]
            A[a, i] = c0 * w0 + c1 * w1 - c2 * w2 - c3 * w3
            B[a, i] = 1j * (c0 * w2 + c1 * w3 - c2 * w0 - c3 * w1)


def _jet_bilinears_np(U, dU):
    ub = np.conj(U) * np.array([1.0, 1.0, -1.0, -1.0])
    sigma = np.einsum("na,na->n", ub, U).real
    g5U = U[:, [2, 3, 0, 1]]
    omega = (1j * np.einsum("na,na->n", ub, g5U)).real
    norm2 = np.einsum("na,na->n", np.conj(U), U).real
    A = np.einsum("na,kna->kn", ub, dU)
    B = 1j * np.einsum("na,kna->kn", ub, dU[..., [2, 3, 0, 1]])
    return sigma, omega, A, B, norm2


def spinor_jet_bilinears(U: np.ndarray, dU: np.ndarray):
    """Per-site ``sigma, omega, ubar d_a U, ubar i g5 d_a U, |U|^2``.

    Parameters
    ----------
    U : complex array, shape (n, 4)
    dU : complex array, shape (4, n, 4)
    """
    U = np.ascontiguousarray(U, dtype=complex)
    dU = np.ascontiguousarray(dU, dtype=complex)
    if _accel.USE_NUMBA:
        n = U.shape[0]
        sigma = np.empty(n)
        omega = np.empty(n)
        norm2 = np.empty(n)
        A = np.empty((4, n), dtype=complex)
        B = np.empty((4, n), dtype=complex)
        _jet_bilinears_nb(U, dU, sigma, omega, A, B, norm2)
        return sigma, omega, A, B, norm2
    return _jet_bilinears_np(U, dU)


# ---------------------------------------------------------------------------
# non-uniform time transform, accumulated slab by slab
# ---------------------------------------------------------------------------


@njit(parallel=True)
def _nudft_nb(slab, times, omega, weight, out):
    nt = slab.shape[0]
    m = slab.shape[1]
    nc = slab.shape[2]
    for j in prange(m):
        w = omega[j]
        for t in range(nt):
            ph = np.exp(1j * w * times[t]) * weight
            for c in range(nc):
                out[j, c] += slab[t, j, c] * ph


def _nudft_np(slab, times, omega, weight, out):
    ph = np.exp(1j * np.multiply.outer(times, omega)) * weight
    out += np.einsum("tj,tjc->jc", ph, slab)


def nudft_accumulate(slab, times, omega, weight, out):
    """Add ``sum_t weight exp(i omega_j t) slab[t, j]`` into ``out[j]`` in place.

    Each spatial bin ``j`` has its own frequency ``omega_j``; the time
    samples need not be uniform.

    Parameters
    ----------
    slab : complex array, shape (nt, m, c)
    times : float array, shape (nt,)
    omega : float array, shape (m,)
    weight : float
    out : complex array, shape (m, c)
    """
    slab = np.ascontiguousarray(slab, dtype=complex)
    times = np.ascontiguousarray(times, dtype=float)
    omega = np.ascontiguousarray(omega, dtype=float)
    if _accel.USE_NUMBA:
        _nudft_nb(slab, times, omega, float(weight), out)
    else:
        _nudft_np(slab, times, omega, float(weight), out)


# ---------------------------------------------------------------------------
# half-line integrals with multilinear interpolation
# ---------------------------------------------------------------------------


@njit(parallel=True)
def _ray_nb(f, curv, spacing, direction, ds, nsteps, out):
    # out[site] = sum_j w_j f(x_site + s_j direction) ds, trapezoid weights,
    # f interpolated multilinearly plus the curvature term
    # sum_a fr_a (1 - fr_a) curv[a], zero outside the box.
    N0, N1, N2, N3 = f.shape
    tot = N0 * N1 * N2 * N3
    for idx in prange(tot):
        i3 = idx % N3
        r = idx // N3
        i2 = r % N2
        r = r // N2
        i1 = r % N1
        i0 = r // N1
        acc = 0.0
        for j in range(nsteps + 1):
            s = j * ds
            p0 = i0 + s * direction[0] / spacing[0]
            p1 = i1 + s * direction[1] / spacing[1]
            p2 = i2 + s * direction[2] / spacing[2]
            p3 = i3 + s * direction[3] / spacing[3]
            if p0 < 0 or p1 < 0 or p2 < 0 or p3 < 0:
                break
            if p0 > N0 - 1 or p1 > N1 - 1 or p2 > N2 - 1 or p3 > N3 - 1:
                break
            b0 = min(int(p0), N0 - 2)
            b1 = min(int(p1), N1 - 2)
            b2 = min(int(p2), N2 - 2)
            b3 = min(int(p3), N3 - 2)
            f0 = p0 - b0
            f1 = p1 - b1
            f2 = p2 - b2
            f3 = p3 - b3
            e0 = f0 * (1.0 - f0)
            e1 = f1 * (1.0 - f1)
            e2 = f2 * (1.0 - f2)
            e3 = f3 * (1.0 - f3)
            v = 0.0
            for c0 in range(2):
                w0 = f0 if c0 else 1.0 - f0
                if w0 == 0.0:
                    continue
                for c1 in range(2):
                    w1 = w0 * (f1 if c1 else 1.0 - f1)
                    if w1 == 0.0:
                        continue
                    for c2 in range(2):
                        w2 = w1 * (f2 if c2 else 1.0 - f2)
                        if w2 == 0.0:
                            continue
                        for c3 in range(2):
                            w3 = w2 * (f3 if c3 else 1.0 - f3)
                            if w3 == 0.0:
                                continue
                            j0 = b0 + c0
                            j1 = b1 + c1
                            j2 = b2 + c2
                            j3 = b3 + c3
                            v += w3 * (
                                f[j0, j1, j2, j3]
                                + e0 * curv[0, j0, j1, j2, j3]
                                + e1 * curv[1, j0, j1, j2, j3]
                                + e2 * curv[2, j0, j1, j2, j3]
                                + e3 * curv[3, j0, j1, j2, j3]
                            )
            wt = 0.5 if j == 0 else 1.0
            acc += wt * v
        out[i0, i1, i2, i3] = acc * ds


def _ray_np(f, c2, spacing, direction, ds, nsteps, out):
    shape = np.array(f.shape)
    grids = np.meshgrid(*[np.arange(n, dtype=float) for n in f.shape], indexing="ij")
    acc = np.zeros(f.shape)
    alive = np.ones(f.shape, dtype=bool)
    for j in range(nsteps + 1):
        s = j * ds
        p = [grids[a] + s * direction[a] / spacing[a] for a in range(4)]
        inside = alive.copy()
        for a in range(4):
            inside &= (p[a] >= 0) & (p[a] <= shape[a] - 1)
        alive = inside
        if not np.any(alive):
            break
        b = [np.clip(np.floor(p[a]).astype(int), 0, shape[a] - 2) for a in range(4)]
        fr = [p[a] - b[a] for a in range(4)]
        ex = [fr[a] * (1.0 - fr[a]) for a in range(4)]
        v = np.zeros(f.shape)
        for c in range(16):
            bits = [(c >> a) & 1 for a in range(4)]
            w = np.ones(f.shape)
            idx = []
            for a in range(4):
                w = w * (fr[a] if bits[a] else 1.0 - fr[a])
                idx.append(np.clip(b[a] + bits[a], 0, shape[a] - 1))
            idx = tuple(idx)
            v += w * (f[idx] + sum(ex[a] * c2[a][idx] for a in range(4)))
        acc += np.where(alive, (0.5 if j == 0 else 1.0) * v, 0.0)
    out[...] = acc * ds


def ray_integral(f: np.ndarray, spacing, direction, ds: float, curvature: np.ndarray | None = None) -> np.ndarray:
    """Integrate ``f`` along ``x + s direction`` for ``s >= 0`` from every site.

    Uses trapezoid weights in ``s`` and multilinear interpolation of the
    lattice samples; the ray stops where it leaves the box.

    Parameters
    ----------
    curvature : array of shape ``(4,) + f.shape``, optional
        ``-h_a^2 / 2 * d_a^2 f``.  Adding ``fr (1 - fr)`` times it to the
        multilinear interpolant removes its leading error.
    """
    f = np.ascontiguousarray(f, dtype=float)
    spacing = np.asarray(spacing, dtype=float)
    direction = np.asarray(direction, dtype=float)
    if curvature is None:
        c2 = np.zeros((4,) + f.shape)
    else:
        c2 = np.ascontiguousarray(curvature, dtype=float)
    steps_axis = [
        (f.shape[a] - 1) * spacing[a] / abs(direction[a]) for a in range(4) if abs(direction[a]) > 1e-14
    ]
    nsteps = int(np.ceil(min(steps_axis) / ds)) + 1
    out = np.empty(f.shape)
    if _accel.USE_NUMBA:
        _ray_nb(f, c2, spacing, direction, float(ds), nsteps, out)
    else:
        _ray_np(f, c2, spacing, direction, float(ds), nsteps, out)
    return out
