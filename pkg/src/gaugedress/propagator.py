"""Phase kernels ``Xi^mu`` with ``d_mu Xi^mu = delta^4`` and their action on connections.

Given a connection ``u`` the phase is ``phi(x) = int Xi^mu(x - y) u_mu(y) d^4y``.
For a pure gradient ``u = d theta`` every admissible kernel returns
``theta`` (completeness).

Variants
--------
``grad_retarded`` / ``grad_advanced``
    ``Xi = d G`` with ``G`` the retarded (advanced) Green function of the
    wave operator, so ``phi = G * (d^mu u_mu)``.  The periodic lattice has no
    retarded Green function, so the solve is done in a damped frame: the
    source is multiplied by ``exp(-eps t)``, the time axis is zero padded to
    ``(1 + P) L_t``, the wave equation with ``d_t -> d_t + eps`` is solved
    spectrally, and the result is multiplied by ``exp(eps t)``.  This is
    exact in the continuum.  On the lattice, acausal leakage through the
    time wrap is ``exp(-eps P L_t)`` and roundoff is amplified by at most
    ``exp(eps L_t)``; the defaults ``eps L_t = 5``, ``P = 4`` give
    ``exp(-20)`` and ``exp(5)``.
``affine``
    ``a Xi_ret + b Xi_adv`` with ``a + b = 1``.
``steinmann``
    ``-zhat^mu int_0^inf delta^4(x + s zhat) ds`` along the axial current
    ``zhat = Z / |Z|`` of a reference spinor.
``steinmann_prime``
    ``(sigma^2 / N)`` times the future timelike half-line along ``jhat`` plus
    ``(omega^2 / N)`` times the Steinmann kernel, for a reference spinor
    with ``N = sigma^2 + omega^2``.
``spatial``
    Coulomb-type kernel supported on the hyperplane ``v.x = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.fft as sfft

from .clifford import bilinear, mdot
from .fields import VectorField
from .kernels import ray_integral
from .lattice import Lattice, fd4_nonperiodic

__all__ = [
    "KernelError",
    "XiKernel",
    "GaussianTestFunction",
    "apply_xi",
    "xi_phase",
    "weak_divergence_check",
    "damped_divergence",
    "DEFAULT_DAMPING",
    "DEFAULT_PADDING",
]

#: damping rate times the lattice time extent
DEFAULT_DAMPING = 5.0
#: zero padding of the time axis, in units of the lattice time extent
DEFAULT_PADDING = 4


class KernelError(ValueError):
    """Inadmissible kernel parameters."""


@dataclass(frozen=True)
class XiKernel:
    """Phase kernel description.

    Use the constructors :meth:`grad_retarded`, :meth:`grad_advanced`,
    :meth:`affine`, :meth:`steinmann`, :meth:`steinmann_prime` and
    :meth:`spatial`.
    """

    variant: str
    weights: tuple = (1.0, 0.0)
    spinor: tuple | None = None
    direction: tuple | None = None
    damping: float = DEFAULT_DAMPING
    allow_improper: bool = False
    padding: int = DEFAULT_PADDING

    def __post_init__(self):
        v = self.variant
        if v not in ("grad_retarded", "grad_advanced", "affine", "steinmann", "steinmann_prime", "spatial"):
            raise KernelError(f"unknown kernel variant {v!r}")
        if not (np.isfinite(self.damping) and self.damping > 0):
            raise KernelError("damping must be positive")
        if v == "affine":
            a, b = (float(w) for w in self.weights)
            if not (np.isfinite(a) and np.isfinite(b)):
                raise KernelError("affine weights must be finite")
            if not self.allow_improper and abs(a + b - 1.0) > 1e-12:
                raise KernelError(f"affine weights sum to {a + b!r}, must sum to 1")
            object.__setattr__(self, "weights", (a, b))
        if v in ("steinmann", "steinmann_prime"):
            if self.spinor is None:
                raise KernelError(f"{v} needs a reference spinor")
            z = np.asarray(self.spinor, dtype=complex)
            if z.shape != (4,):
                raise KernelError("reference spinor must have 4 components")
            b = bilinear(z)
            n = b.sigma**2 + b.omega**2
            if not n > 1e-24 * float(np.vdot(z, z).real) ** 2:
                raise KernelError("reference spinor is null (sigma = omega = 0)")
            object.__setattr__(self, "spinor", tuple(z))
        if v == "spatial":
            d = np.asarray(self.direction if self.direction is not None else (1, 0, 0, 0), dtype=float)
            if d.shape != (4,) or not mdot(d, d) > 0:
                raise KernelError("spatial kernel needs a timelike direction")
            if d[0] < 0:
                d = -d
            object.__setattr__(self, "direction", tuple(d / np.sqrt(mdot(d, d))))

    # constructors -----------------------------------------------------
    @classmethod
    def grad_retarded(cls, damping: float = DEFAULT_DAMPING) -> "XiKernel":
        return cls("grad_retarded", damping=damping)

    @classmethod
    def grad_advanced(cls, damping: float = DEFAULT_DAMPING) -> "XiKernel":
        return cls("grad_advanced", damping=damping)

    @classmethod
    def affine(cls, lam: float, damping: float = DEFAULT_DAMPING, weights=None, allow_improper=False) -> "XiKernel":
        w = (lam, 1.0 - lam) if weights is None else tuple(weights)
        return cls("affine", weights=w, damping=damping, allow_improper=allow_improper)

    @classmethod
    def steinmann(cls, spinor) -> "XiKernel":
        return cls("steinmann", spinor=tuple(np.asarray(spinor, dtype=complex)))

    @classmethod
    def steinmann_prime(cls, spinor) -> "XiKernel":
        return cls("steinmann_prime", spinor=tuple(np.asarray(spinor, dtype=complex)))

    @classmethod
    def spatial(cls, direction=(1.0, 0.0, 0.0, 0.0)) -> "XiKernel":
        return cls("spatial", direction=tuple(float(x) for x in direction))

    # helpers ------------------------------------------------------------
    def tetrad(self):
        """Unit ``(jhat, zhat)`` and ``(sigma^2/N, omega^2/N)`` of the reference spinor."""
        b = bilinear(np.asarray(self.spinor))
        n = b.sigma**2 + b.omega**2
        rn = np.sqrt(n)
        return b.J / rn, b.Z / rn, (b.sigma**2 / n, b.omega**2 / n)

    @property
    def is_spectral(self) -> bool:
        return self.variant in ("grad_retarded", "grad_advanced", "affine")

    def to_dict(self) -> dict:
        d = {"variant": self.variant}
        if self.variant == "affine":
            d["weights"] = list(self.weights)
            d["allow_improper"] = self.allow_improper
        if self.is_spectral:
            d["damping"] = self.damping
            d["padding"] = self.padding
        if self.spinor is not None:
            d["spinor"] = [[z.real, z.imag] for z in self.spinor]
        if self.variant == "spatial":
            d["direction"] = list(self.direction)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "XiKernel":
        v = d.get("variant", "grad_retarded")
        damping = float(d.get("damping", DEFAULT_DAMPING))
        padding = int(d.get("padding", DEFAULT_PADDING))
        if v in ("grad_retarded", "grad_advanced"):
            return cls(v, damping=damping, padding=padding)
        if v == "affine":
            if "weights" in d:
                w = tuple(float(x) for x in d["weights"])
                return cls("affine", weights=w, damping=damping, padding=padding,
                           allow_improper=bool(d.get("allow_improper", False)))
            return replace(cls.affine(float(d["lambda"]), damping), padding=padding)
        if v in ("steinmann", "steinmann_prime"):
            sp = [complex(*z) if isinstance(z, (list, tuple)) else complex(z) for z in d["spinor"]]
            return cls(v, spinor=tuple(sp))
        if v == "spatial":
            return cls.spatial(d.get("direction", (1, 0, 0, 0)))
        raise KernelError(f"unknown kernel variant {v!r}")


@dataclass(frozen=True)
class GaussianTestFunction:
    """``f(x) = exp(-|x - c|_E^2 / (2 w^2))`` with its gradient ``d_alpha f``."""

    center: tuple = (0.0, 0.0, 0.0, 0.0)
    width: float = 2.0

    def value(self, x):
        c = self.center
        r2 = sum((x[a] - c[a]) ** 2 for a in range(4))
        return np.exp(-0.5 * r2 / self.width**2)

    def gradient(self, x):
        f = self.value(x)
        return [-(x[a] - self.center[a]) / self.width**2 * f for a in range(4)]


# ---------------------------------------------------------------------------
# damped spectral solve
# ---------------------------------------------------------------------------


def _padded_time(lat: Lattice, padding: int) -> int:
    return lat.extents[0] * (1 + padding)


def _symbols(lat: Lattice, rate: float, nt: int):
    """Damped derivative symbols on the ``rfftn`` grid with ``nt`` time slices."""
    syms = []
    for a in range(4):
        n = nt if a == 0 else lat.extents[a]
        h = lat.spacings[a]
        k = 2 * np.pi * (np.fft.rfftfreq(n, h) if a == 3 else np.fft.fftfreq(n, h))
        k = k.copy()
        k[n // 2] = 0.0  # Nyquist: derivative of a real signal is ambiguous there
        d = 1j * k + (rate if a == 0 else 0.0)
        shp = [1, 1, 1, 1]
        shp[a] = k.size
        syms.append(d.reshape(shp))
    return syms


def _time_layout(lat: Lattice, rate: float, nt: int):
    """Where the lattice data sit on the padded time axis, and their damping weights.

    Retarded data sit at the start (padding in their future), advanced data
    at the end (padding in their past).  The weights
    ``exp(-rate (t - t_ref))`` never exceed one.
    """
    n = lat.extents[0]
    if rate > 0:
        sl, ref = slice(0, n), 0
    else:
        sl, ref = slice(nt - n, nt), nt - 1
    idx = np.arange(sl.start, sl.stop)
    w = np.exp(-rate * lat.spacings[0] * (idx - ref)).reshape(-1, 1, 1, 1)
    return sl, w


#: bytes of complex workspace per chunk of spatial modes on the padded time axis
_CHUNK_BYTES = 64 * 2**20


def _padded_solve(lat: Lattice, u: np.ndarray, rate: float, padding: int, solve: bool, outputs):
    """Damped spectral pipeline on the padded time axis.

    The weighted source is transformed over space once; the padded time
    axis is then handled in chunks of spatial modes, so only a slab of the
    padded spectrum exists at any moment.  The result equals the full 4D
    transform on ``(nt,) + shape[1:]`` restricted to the lattice window.

    ``src = sum_a +-D_a u~_a`` (divided by the damped wave symbol if
    ``solve``).  ``outputs`` lists ``None`` for ``src`` itself or an axis
    ``a`` for ``D_a src``; they come back stacked as real lattice arrays.
    """
    nt = _padded_time(lat, padding)
    sl, w = _time_layout(lat, rate, nt)
    D = _symbols(lat, rate, nt)
    spatial = (1, 2, 3)
    A = [sfft.rfftn(u[a] * w, axes=spatial) for a in range(4)]
    hats = [np.empty_like(A[0]) for _ in outputs]
    per_mode = nt * A[0].shape[2] * A[0].shape[3] * 16
    step = max(1, _CHUNK_BYTES // per_mode)
    pad = np.zeros((nt, min(step, A[0].shape[1])) + A[0].shape[2:], dtype=complex)
    for c0 in range(0, A[0].shape[1], step):
        ch = slice(c0, min(c0 + step, A[0].shape[1]))
        n = ch.stop - ch.start
        Dc = [D[0], D[1][:, ch], D[2], D[3]]
        src = None
        for a in range(4):
            pad[sl, :n] = A[a][:, ch]
            term = sfft.fft(pad[:, :n], axis=0)
            term *= Dc[a]
            if src is None:
                src = term
            elif a == 0:
                src += term
            else:
                src -= term
        if solve:
            src /= Dc[0] * Dc[0] - Dc[1] * Dc[1] - Dc[2] * Dc[2] - Dc[3] * Dc[3]
        for h, out in zip(hats, outputs):
            spec = src if out is None else Dc[out] * src
            h[:, ch] = sfft.ifft(spec, axis=0)[sl]
    del A, pad
    out = np.empty((len(hats),) + lat.shape)
    for i in range(len(hats)):
        out[i] = sfft.irfftn(hats[i], s=lat.shape[1:], axes=spatial)
        hats[i] = None
        out[i] /= w
    return out


def _spectral_phase(lat: Lattice, u: np.ndarray, rate: float, gradient: bool, padding: int):
    if not gradient:
        return _padded_solve(lat, u, rate, padding, True, [None])[0], None
    res = _padded_solve(lat, u, rate, padding, True, [0, 1, 2, 3, None])
    return res[4], res[:4]


def damped_divergence(u: VectorField, kernel: XiKernel | None = None) -> np.ndarray:
    """``d^alpha u_alpha`` computed with the damped spectral symbols of ``kernel``.

    The spectral kernels solve ``box phi = d^alpha u_alpha`` with these
    symbols on the padded time axis.  Restricted to the lattice window the
    dressed connection keeps a small residual divergence from the cut.
    """
    kernel = kernel or XiKernel.grad_retarded()
    lat = u.lattice
    rate = kernel.damping / lat.lengths[0]
    if kernel.variant == "grad_advanced":
        rate = -rate
    return _padded_solve(lat, u.data, rate, kernel.padding, False, [None])[0]


# ---------------------------------------------------------------------------
# measure kernels
# ---------------------------------------------------------------------------


def _ray_phase(lat: Lattice, u: np.ndarray, direction: np.ndarray, coeff: np.ndarray) -> np.ndarray:
    """``int_0^inf coeff^mu u_mu(x + s direction) ds`` at every site.

    Trapezoid sum with the leading Euler-Maclaurin end correction
    ``ds^2 / 12 * g'(0)``; the far end lies where the integrand has decayed.
    """
    g = np.tensordot(coeff, u, axes=1)
    h = np.asarray(lat.spacings)
    nz = np.abs(direction) > 1e-12
    if nz.sum() == 1:
        a = int(np.flatnonzero(nz)[0])
        ds = h[a] / abs(direction[a])
        out = _axis_ray(g, a, direction[a] > 0) * ds
    else:
        ds = 0.5 * float(np.min(h / np.maximum(np.abs(direction), 1e-300)))
        c2 = np.zeros((4,) + g.shape)
        for a in np.flatnonzero(nz):
            c2[a] = -0.5 * h[a] ** 2 * fd4_nonperiodic(fd4_nonperiodic(g, a, h[a]), a, h[a])
        out = ray_integral(g, h, direction, ds, c2)
    dg = sum(direction[a] * fd4_nonperiodic(g, a, h[a]) for a in range(4) if nz[a])
    return out + ds * ds / 12.0 * dg


def _axis_ray(g: np.ndarray, axis: int, forward: bool) -> np.ndarray:
    """Trapezoid sum ``g(x)/2 + sum_{j>=1} g(x + j e)`` to the end of the box."""
    if forward:
        g = np.flip(g, axis)
    c = np.cumsum(g, axis=axis) - 0.5 * g
    return np.flip(c, axis) if forward else c


def _cell_moments(h) -> np.ndarray:
    """``int_cell w_i^2 / (4 pi |w|^3) d^3w`` over the cell centred on the origin."""
    m = 96
    axes = [(np.arange(m) + 0.5) / m - 0.5 for _ in range(3)]
    w = np.meshgrid(*[a * hh for a, hh in zip(axes, h)], indexing="ij")
    r3 = np.sqrt(w[0] ** 2 + w[1] ** 2 + w[2] ** 2) ** 3
    vol = float(np.prod(h)) / m**3
    return np.array([np.sum(wi * wi / r3) * vol / (4 * np.pi) for wi in w])


def _hockney_kernel3d(lat: Lattice) -> np.ndarray:
    """Transforms of ``w^i / (4 pi |w|^3)`` on the doubled spatial grid.

    The singular cell at ``w = 0`` contributes ``-I_i d_i u_i`` with the
    cell moments ``I_i``; it enters as a central-difference stencil on the
    nearest neighbours.
    """
    comps = []
    grids = []
    h = [lat.spacings[a] for a in (1, 2, 3)]
    for a in (1, 2, 3):
        n = lat.extents[a]
        idx = np.arange(2 * n)
        idx = np.where(idx < n, idx, idx - 2 * n)
        grids.append(idx * lat.spacings[a])
    X, Y, Zc = np.meshgrid(*grids, indexing="ij")
    r = np.sqrt(X * X + Y * Y + Zc * Zc)
    r[0, 0, 0] = 1.0
    inv = 1.0 / (4 * np.pi * r**3)
    inv[0, 0, 0] = 0.0
    vol = h[0] * h[1] * h[2]
    moments = _cell_moments(h)
    for i, comp in enumerate((X, Y, Zc)):
        k = comp * inv * vol
        # sum_w K(w) u(x - w): u(x + h e_i) sits at w = -h e_i
        plus = [0, 0, 0]
        plus[i] = 1
        minus = [0, 0, 0]
        minus[i] = -1
        k[tuple(plus)] += moments[i] / (2 * h[i])
        k[tuple(minus)] -= moments[i] / (2 * h[i])
        comps.append(sfft.rfftn(k))
    return comps


def _spatial_rest(lat: Lattice, u: np.ndarray) -> np.ndarray:
    kh = _hockney_kernel3d(lat)
    n = lat.extents[1:]
    out = np.empty(lat.shape)
    pad = tuple(2 * m for m in n)
    for t0, t1 in lat.slabs(1 << 18):
        acc = None
        for i in range(3):
            # covariant u_i contracted with contravariant w^i
            uh = sfft.rfftn(u[i + 1, t0:t1], s=pad, axes=(1, 2, 3))
            term = uh * kh[i]
            acc = term if acc is None else acc + term
        res = sfft.irfftn(acc, s=pad, axes=(1, 2, 3))
        out[t0:t1] = res[:, : n[0], : n[1], : n[2]]
    return out


def _spatial_raster(lat: Lattice, v: np.ndarray) -> np.ndarray:
    """Lattice samples of the hyperplane kernel on the doubled 4D grid.

    ``delta(v.w)`` is distributed onto the two nearest time slices with
    linear weights.  Returns shape ``(4, 2Nt, 2Nx, 2Ny, 2Nz)`` holding
    ``Xi^mu(w) h^4``.
    """
    ext = [2 * n for n in lat.extents]
    h = lat.spacings
    offs = []
    for a in range(4):
        idx = np.arange(ext[a])
        offs.append(np.where(idx < lat.extents[a], idx, idx - ext[a]) * h[a])
    X, Y, Zc = np.meshgrid(offs[1], offs[2], offs[3], indexing="ij")
    ts = (v[1] * X + v[2] * Y + v[3] * Zc) / v[0]
    vv = mdot(v, v)
    wvec = [ts, X, Y, Zc]
    ww = ts * ts - X * X - Y * Y - Zc * Zc
    rad = -vv * ww
    with np.errstate(divide="ignore", invalid="ignore"):
        dens = np.where(rad > 0, 1.0 / (4 * np.pi * np.abs(rad) ** 1.5), 0.0)
    out = np.zeros((4,) + tuple(ext))
    pos = ts / h[0]
    base = np.floor(pos).astype(int)
    frac = pos - base
    cell = np.prod(h)
    for mu in range(4):
        val = vv * wvec[mu] * dens / abs(v[0]) / h[0] * cell
        for shift, wt in ((0, 1.0 - frac), (1, frac)):
            ti = (base + shift) % ext[0]
            ok = np.abs(base + shift) < lat.extents[0]
            ii = np.nonzero(ok)
            np.add.at(out[mu], (ti[ii],) + ii, (wt * val)[ii])
    return out


def _spatial_general(lat: Lattice, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    ker = _spatial_raster(lat, v)
    pad = tuple(2 * n for n in lat.extents)
    acc = None
    for mu in range(4):
        kh = sfft.rfftn(ker[mu])
        term = kh * sfft.rfftn(u[mu], s=pad)
        acc = term if acc is None else acc + term
        del kh
    res = sfft.irfftn(acc, s=pad)
    n = lat.extents
    return res[: n[0], : n[1], : n[2], : n[3]]


def _is_rest(v) -> bool:
    return abs(v[1]) < 1e-14 and abs(v[2]) < 1e-14 and abs(v[3]) < 1e-14


# ---------------------------------------------------------------------------
# public entry points
# ---------------------------------------------------------------------------


def xi_phase(kernel: XiKernel, u: VectorField, gradient: bool = True):
    """Phase ``phi = Xi * u`` and, optionally, its gradient.

    For the spectral variants the gradient uses the same damped symbols as
    the solve, which makes dressing with them exactly idempotent.  For the
    measure kernels the gradient is a fourth-order difference with one-sided
    stencils at the box faces.

    Returns
    -------
    phi : ndarray
    grad : ndarray of shape ``(4,) + lattice.shape`` or None
    """
    lat = u.lattice
    data = u.data
    rate = kernel.damping / lat.lengths[0]
    v = kernel.variant
    pad = kernel.padding
    if v == "grad_retarded":
        return _spectral_phase(lat, data, rate, gradient, pad)
    if v == "grad_advanced":
        return _spectral_phase(lat, data, -rate, gradient, pad)
    if v == "affine":
        a, b = kernel.weights
        p1, g1 = _spectral_phase(lat, data, rate, gradient, pad)
        p2, g2 = _spectral_phase(lat, data, -rate, gradient, pad)
        return a * p1 + b * p2, (None if not gradient else a * g1 + b * g2)
    if v == "steinmann":
        _, zhat, _ = kernel.tetrad()
        phi = -_ray_phase(lat, data, zhat, zhat)
    elif v == "steinmann_prime":
        jhat, zhat, (ws, wo) = kernel.tetrad()
        phi = np.zeros(lat.shape)
        if ws > 0:
            phi += ws * _ray_phase(lat, data, -jhat, jhat)
        if wo > 0:
            phi -= wo * _ray_phase(lat, data, zhat, zhat)
    else:
        d = np.asarray(kernel.direction)
        phi = _spatial_rest(lat, data) if _is_rest(d) else _spatial_general(lat, data, d)
    if not gradient:
        return phi, None
    grad = np.stack([fd4_nonperiodic(phi, a, lat.spacings[a]) for a in range(4)])
    return phi, grad


def apply_xi(kernel: XiKernel, u: VectorField) -> np.ndarray:
    """Real phase ``phi(x) = int Xi^mu(x - y) u_mu(y) d^4y`` on the lattice."""
    return xi_phase(kernel, u, gradient=False)[0]


def weak_divergence_check(kernel: XiKernel, f=None, lattice: Lattice | None = None) -> float:
    """Evaluate ``int Xi^mu(x) d_mu f(x) d^4x`` on the lattice.

    For an admissible kernel the exact value is ``-f(0)``.  The integral
    equals the phase at the origin produced by the connection
    ``u(y) = (d f)(-y)``, so each variant is checked through the same
    discretisation it uses for dressing.

    Parameters
    ----------
    kernel : XiKernel
    f : GaussianTestFunction, optional
    lattice : Lattice
        Must contain the origin as a site.
    """
    if lattice is None:
        raise ValueError("a lattice is required")
    f = f or GaussianTestFunction()
    lat = lattice
    o = lat.index_of((0, 0, 0, 0))
    if any(not (0 <= i < n) for i, n in zip(o, lat.extents)) or any(
        abs(lat.origin[a] + o[a] * lat.spacings[a]) > 1e-9 * lat.spacings[a] for a in range(4)
    ):
        raise ValueError("the origin must be a lattice site")
    x = lat.coords()
    mx = [-c for c in x]
    g = f.gradient(mx)
    u = np.stack([np.broadcast_to(ga, lat.shape) for ga in g])
    return float(apply_xi(kernel, VectorField(lat, np.ascontiguousarray(u)))[o])
