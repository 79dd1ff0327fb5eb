"""Mass-shell inner products, the Maxwell pairing and the deformed VEVs.

Shell quadrature
----------------
``(V, U)_+ = int d^4k/(2 pi)^4 2 pi delta(k.k - m^2) theta(k0) Vbar~(k) (kslash + m) U~(k)``
reduces to a sum over the spatial momentum bins ``p`` of the lattice with
weight ``1 / (2 E L^3)``, ``E = sqrt(p^2 + m^2)``.  The transform
``U~(E, p)`` is evaluated exactly at the shell frequency: a spatial FFT per
time slab followed by a non-uniform sum over time slices at ``+-E(p)``.
Bins whose shell frequency exceeds the time Nyquist frequency are dropped;
if the field has spectral weight there a :class:`ShellRangeError` is raised.

The Maxwell pairing uses the massless shell ``k0 = |p|`` with the ``p = 0``
bin excluded.  For a curvature ``du`` the transform is taken of the
potential ``u`` and the exterior derivative is applied in momentum space,
``(du)~_{a m} = -i (k_a u~_m - k_m u~_a)``.

Every quadrature is repeated on the sub-lattice of even sites (spacing
``2h`` on every axis); ``quad_error`` is the difference of the two
evaluations, the Richardson estimate without an assumed order.  Errors of
composite quantities are propagated to first order by :class:`VevResult`.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft

from .clifford import GAMMA, GAMMA0
from .connection import ConnectionSpec
from .dressing import dress
from .fields import BivectorField, BIVECTOR_PAIRS, ConjugateField, SpinorField, VectorField
from .kernels import nudft_accumulate
from .lattice import Lattice
from .propagator import XiKernel

__all__ = [
    "VevResult",
    "ModelParams",
    "ShellRangeError",
    "VanishingDenominatorError",
    "ShellTransform",
    "MaxwellShell",
    "PreparedField",
    "prepare",
    "ip_shell",
    "ip_maxwell",
    "anticommutator",
    "vev2_xi",
    "vev2_psi",
    "vev3",
    "vev4",
    "free_determinant",
    "prob_2to2",
    "prob_1to2",
    "prob_annihilate",
]

#: relative spectral weight allowed in bins whose shell lies beyond Nyquist
NYQUIST_TOL = 1e-8


class ShellRangeError(ValueError):
    """The mass shell is not resolved by the lattice time step."""


class VanishingDenominatorError(ArithmeticError):
    """A probability denominator is zero within its error estimate."""


# ---------------------------------------------------------------------------
# values with error estimates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VevResult:
    """Complex value with a non-negative quadrature error estimate.

    Arithmetic propagates the error to first order.
    """

    value: complex
    quad_error: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "value", complex(self.value))
        e = float(self.quad_error)
        if not e >= 0:
            raise ValueError("quad_error must be non-negative")
        object.__setattr__(self, "quad_error", e)

    @staticmethod
    def of(x) -> "VevResult":
        return x if isinstance(x, VevResult) else VevResult(complex(x), 0.0)

    def __add__(self, o):
        o = VevResult.of(o)
        return VevResult(self.value + o.value, self.quad_error + o.quad_error)

    __radd__ = __add__

    def __neg__(self):
        return VevResult(-self.value, self.quad_error)

    def __sub__(self, o):
        return self + (-VevResult.of(o))

    def __rsub__(self, o):
        return VevResult.of(o) - self

    def __mul__(self, o):
        o = VevResult.of(o)
        err = abs(self.value) * o.quad_error + abs(o.value) * self.quad_error + self.quad_error * o.quad_error
        return VevResult(self.value * o.value, err)

    __rmul__ = __mul__

    def __truediv__(self, o):
        o = VevResult.of(o)
        if o.value == 0:
            raise ZeroDivisionError("division by an exactly vanishing value")
        q = self.value / o.value
        return VevResult(q, (self.quad_error + abs(q) * o.quad_error) / abs(o.value))

    def __rtruediv__(self, o):
        return VevResult.of(o) / self

    def conj(self) -> "VevResult":
        return VevResult(self.value.conjugate(), self.quad_error)

    def exp(self) -> "VevResult":
        v = cmath.exp(self.value)
        return VevResult(v, abs(v) * math.expm1(self.quad_error))

    def abs2(self) -> "VevResult":
        a = abs(self.value)
        return VevResult(a * a, 2 * a * self.quad_error + self.quad_error**2)

    @property
    def real(self) -> float:
        return self.value.real

    def __complex__(self):
        return self.value

    def __float__(self):
        return self.value.real

    def to_dict(self) -> dict:
        return {"value": [self.value.real, self.value.imag], "quad_error": self.quad_error}


def _det2(a, b, c, d) -> VevResult:
    return VevResult.of(a) * d - VevResult.of(b) * c


# ---------------------------------------------------------------------------
# model parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelParams:
    """Dirac mass, coupling and the dressing choices."""

    m: float = 1.0
    lam: float = 0.0
    connection: ConnectionSpec = field(default_factory=ConnectionSpec)
    kernel: XiKernel = field(default_factory=XiKernel.grad_retarded)

    def __post_init__(self):
        if not (np.isfinite(self.m) and self.m > 0):
            raise ValueError("mass must be positive")
        if not np.isfinite(self.lam):
            raise ValueError("coupling must be finite")

    def dressing_key(self) -> tuple:
        return (repr(self.connection.to_dict()), repr(self.kernel.to_dict()))

    def to_dict(self) -> dict:
        return {"m": self.m, "lambda": self.lam, "connection": self.connection.to_dict(), "kernel": self.kernel.to_dict()}


# ---------------------------------------------------------------------------
# shell transforms
# ---------------------------------------------------------------------------


@dataclass
class _ShellData:
    p: np.ndarray  # (3, M) spatial momenta of the kept bins
    energy: np.ndarray  # (M,)
    pos: np.ndarray  # (M, c) transform at k0 = +E
    neg: np.ndarray | None  # (M, c) transform at k0 = -E
    volume: float  # spatial box volume L^3


class _ShellAccumulator:
    """Streams time slabs ``(nt, Nx, Ny, Nz, c)`` into shell samples.

    ``pad`` zero-pads the spatial transform, refining the momentum grid by
    that factor; the samples vanish outside the box, so this evaluates the
    same transform at more momenta.
    """

    def __init__(self, lat: Lattice, mass: float, ncomp: int, step: int, both: bool, check: bool, pad: int = 1):
        self.lat = lat
        self.step = step
        self.pad = pad
        ht = lat.spacings[0] * step
        nyq = np.pi / ht
        if mass >= nyq:
            raise ShellRangeError(f"shell mass {mass} is not below the time Nyquist frequency {nyq:.4g}")
        self.shape3 = tuple(pad * (lat.extents[a] // step) for a in (1, 2, 3))
        hs = [lat.spacings[a] * step for a in (1, 2, 3)]
        ks = [2 * np.pi * np.fft.fftfreq(n, h) for n, h in zip(self.shape3, hs)]
        px, py, pz = np.meshgrid(*ks, indexing="ij")
        p = np.stack([px.ravel(), py.ravel(), pz.ravel()])
        e = np.sqrt(np.sum(p**2, axis=0) + mass**2)
        keep = e < nyq
        if mass == 0:
            keep &= e > 0
        self.keep = np.flatnonzero(keep)
        # p = 0 on the light cone is a removable point, not lost weight
        self.drop = np.flatnonzero(e >= nyq)
        self.p = p[:, self.keep]
        self.e = e[self.keep]
        # exp(-i p.x) with x measured from the lattice origin
        phase = np.exp(-1j * (p[0] * lat.origin[1] + p[1] * lat.origin[2] + p[2] * lat.origin[3]))
        self.phase = (phase * hs[0] * hs[1] * hs[2])[self.keep]
        self.pos = np.zeros((self.keep.size, ncomp), dtype=complex)
        self.neg = np.zeros((self.keep.size, ncomp), dtype=complex) if both else None
        self.check = check
        self.w_drop = 0.0
        self.w_all = 0.0
        self.ncomp = ncomp
        self.volume = float(np.prod([n * h for n, h in zip(self.shape3, hs)]))

    def add(self, t0: int, slab: np.ndarray):
        s = self.step
        lat = self.lat
        # global time indices divisible by the step
        first = (-t0) % s
        sub = slab[first::s, ::s, ::s, ::s]
        if sub.shape[0] == 0:
            return
        nt = sub.shape[0]
        times = lat.origin[0] + lat.spacings[0] * (t0 + first + s * np.arange(nt))
        f = sfft.fftn(sub, s=self.shape3, axes=(1, 2, 3)).reshape(nt, -1, self.ncomp)
        if self.check:
            pw = np.sum(np.abs(f) ** 2, axis=(0, 2))
            self.w_all += float(np.sum(pw))
            if self.drop.size:
                self.w_drop += float(np.sum(pw[self.drop]))
        f = f[:, self.keep] * self.phase[None, :, None]
        wt = lat.spacings[0] * s
        nudft_accumulate(f, times, self.e, wt, self.pos)
        if self.neg is not None:
            nudft_accumulate(f, times, -self.e, wt, self.neg)

    def result(self) -> _ShellData:
        if self.check and self.w_all > 0 and self.w_drop > NYQUIST_TOL * self.w_all:
            raise ShellRangeError(
                f"{self.w_drop / self.w_all:.2e} of the spectral weight lies in bins whose shell frequency "
                "exceeds the time Nyquist frequency; refine the time step"
            )
        return _ShellData(self.p, self.e, self.pos, self.neg, self.volume)


def _stream(lat: Lattice, slabs, mass: float, ncomp: int, both: bool, check: bool = True, levels=((1, 1), (2, 1))):
    """Shell data for each ``(step, pad)`` level; only the first is range-checked."""
    accs = [_ShellAccumulator(lat, mass, ncomp, st, both, check and i == 0, pad) for i, (st, pad) in enumerate(levels)]
    for t0, slab in slabs:
        for a in accs:
            a.add(t0, slab)
    return [a.result() for a in accs]


@dataclass
class ShellTransform:
    """Transform of a spinor field on the mass shells ``k0 = +-E(p)``.

    ``fine`` uses every lattice site, ``coarse`` the even sub-lattice.
    """

    lattice: Lattice
    mass: float
    fine: _ShellData
    coarse: _ShellData

    @classmethod
    def from_field(cls, field: SpinorField, mass: float) -> "ShellTransform":
        lat = field.lattice
        slabs = ((t0, v) for t0, _, v, _ in field.iter_slabs())
        fine, coarse = _stream(lat, slabs, float(mass), 4, True)
        return cls(lat, float(mass), fine, coarse)


# The light-cone integrand has a |p| cone at p = 0, so its Riemann sum
# converges only algebraically in the momentum spacing; the Maxwell shell is
# evaluated on a doubled momentum grid and compared against the plain one.
_MAXWELL_LEVELS = ((1, 2), (2, 2), (1, 1))


@dataclass
class MaxwellShell:
    """``a_mu(k) = k^alpha f~_{alpha mu}(k)`` on the forward light cone.

    ``levels`` holds ``(a, weight)`` for the fine lattice on the refined
    momentum grid, the even sub-lattice on that grid, and the fine lattice
    on the unrefined grid.
    """

    lattice: Lattice
    levels: tuple

    @staticmethod
    def _kvectors(d: _ShellData):
        # contravariant k^mu = (|p|, p) and covariant k_mu = (|p|, -p)
        kup = np.vstack([d.energy[None, :], d.p])
        kdn = kup * np.array([1.0, -1.0, -1.0, -1.0])[:, None]
        return kup, kdn

    @classmethod
    def _from_potential_data(cls, d: _ShellData):
        kup, kdn = cls._kvectors(d)
        ut = d.pos.T  # (4, M) transform of u_mu
        kk = np.einsum("am,am->m", kup, kdn)
        ku = np.einsum("am,am->m", kup, ut)
        # k^a f_{a m} with f_{a m} = -i (k_a u_m - k_m u_a)
        a = -1j * (kk[None, :] * ut - kdn * ku[None, :])
        return a.T, 1.0 / (2.0 * d.energy * d.volume)

    @classmethod
    def _from_bivector_data(cls, d: _ShellData):
        kup, _ = cls._kvectors(d)
        ft = d.pos.T  # (6, M)
        full = np.zeros((4, 4, ft.shape[1]), dtype=complex)
        for n, (mu, nu) in enumerate(BIVECTOR_PAIRS):
            full[mu, nu] = ft[n]
            full[nu, mu] = -ft[n]
        a = np.einsum("am,anm->nm", kup, full)
        return a.T, 1.0 / (2.0 * d.energy * d.volume)

    @classmethod
    def from_potential(cls, u: VectorField) -> "MaxwellShell":
        """Shell data of the curvature ``du`` built from its potential."""
        lat = u.lattice
        slabs = ((t0, np.moveaxis(u.data[:, t0:t1], 0, -1).astype(complex)) for t0, t1 in lat.slabs(1 << 19))
        # k^mu a_mu = 0 makes every pairing with this data vanish, so truncated
        # light-cone bins cannot bias a result and the range check is skipped
        data = _stream(lat, slabs, 0.0, 4, False, check=False, levels=_MAXWELL_LEVELS)
        return cls(lat, tuple(cls._from_potential_data(d) for d in data))

    @classmethod
    def from_bivector(cls, f: BivectorField, exterior: str = "potential") -> "MaxwellShell":
        """Shell data of a bivector field.

        With ``exterior="potential"`` a curvature that remembers its
        potential is transformed through the potential; otherwise (or when
        no potential is attached) the six sampled components are used.
        """
        if exterior not in ("potential", "samples"):
            raise ValueError(f"unknown exterior mode {exterior!r}")
        if exterior == "potential" and f.potential is not None:
            return cls.from_potential(f.potential)
        lat = f.lattice
        slabs = ((t0, np.moveaxis(f.data[:, t0:t1], 0, -1).astype(complex)) for t0, t1 in lat.slabs(1 << 19))
        data = _stream(lat, slabs, 0.0, 6, False, levels=_MAXWELL_LEVELS)
        return cls(lat, tuple(cls._from_bivector_data(d) for d in data))

    def scaled(self, s: float) -> "MaxwellShell":
        return MaxwellShell(self.lattice, tuple((s * a, w) for a, w in self.levels))

    def __add__(self, o: "MaxwellShell") -> "MaxwellShell":
        if self.lattice != o.lattice:
            raise ValueError("Maxwell shells live on different lattices")
        return MaxwellShell(self.lattice, tuple((a + b, w) for (a, w), (b, _) in zip(self.levels, o.levels)))

    def __sub__(self, o: "MaxwellShell") -> "MaxwellShell":
        return self + o.scaled(-1.0)


# ---------------------------------------------------------------------------
# pairings
# ---------------------------------------------------------------------------

_G0GI = np.einsum("ab,ibc->iac", GAMMA0, GAMMA[1:])  # gamma^0 gamma^i


def _dirac_sum(V: np.ndarray, U: np.ndarray, d: _ShellData, mass: float, k0sign: float) -> complex:
    """``sum_p Vbar (kslash + m) U / (2 E L^3)`` at ``k = (k0sign E, p)``."""
    e = d.energy
    # gamma^0 (k_mu gamma^mu + m) = k0 + sum_i k_i gamma^0 gamma^i + m gamma^0, k_i = -p_i
    w = (k0sign * e)[:, None] * U
    w = w - np.einsum("im,iab,mb->ma", d.p, _G0GI, U)
    w = w + mass * (U @ GAMMA0.T)
    integrand = np.einsum("ma,ma->m", np.conj(V), w) / (2.0 * e * d.volume)
    return complex(np.sum(integrand))


def _shell_pair(V: ShellTransform, U: ShellTransform, sign: int) -> VevResult:
    if V.lattice != U.lattice or V.mass != U.mass:
        raise ValueError("shell transforms live on different lattices or shells")
    out = []
    for dv, du in ((V.fine, U.fine), (V.coarse, U.coarse)):
        if sign > 0:
            out.append(_dirac_sum(dv.pos, du.pos, du, U.mass, 1.0))
        else:
            out.append(-_dirac_sum(dv.neg, du.neg, du, U.mass, -1.0))
    return VevResult(out[0], abs(out[0] - out[1]))


def _maxwell_pair(f: MaxwellShell, g: MaxwellShell) -> VevResult:
    metric = np.array([1.0, -1.0, -1.0, -1.0])
    vals = []
    for (af, w), (ag, _) in zip(f.levels, g.levels):
        vals.append(-complex(np.sum(w * np.einsum("ma,a,ma->m", np.conj(af), metric, ag))))
    # sampling error plus momentum-grid error
    return VevResult(vals[0], abs(vals[0] - vals[1]) + abs(vals[0] - vals[2]))


# ---------------------------------------------------------------------------
# prepared (dressed and transformed) fields
# ---------------------------------------------------------------------------


class PreparedField:
    """A spinor field dressed and transformed once, for repeated pairings.

    Holds the shell transform of the dressed field, of its charge
    conjugate (on request) and the Maxwell shell data of its curvature.
    The dressed field itself is not retained, which keeps large lattices
    within memory.
    """

    def __init__(self, field: SpinorField, params: ModelParams, curvature: bool = True, conjugate: bool = False):
        self.lattice = field.lattice
        self.params = params
        self.key = params.dressing_key() + (params.m,)
        d = dress(field, params.kernel, params.connection)
        self.shell = ShellTransform.from_field(d, params.m)
        self.conj_shell = ShellTransform.from_field(ConjugateField(d), params.m) if conjugate else None
        self.maxwell = MaxwellShell.from_potential(d.connection) if curvature else None
        self.imag_residue = d.provenance.imag_residue

    def require(self, curvature: bool = False, conjugate: bool = False):
        if curvature and self.maxwell is None:
            raise ValueError("prepared field has no curvature data")
        if conjugate and self.conj_shell is None:
            raise ValueError("prepared field has no charge-conjugate data")


def prepare(x, params: ModelParams, curvature: bool | None = None, conjugate: bool = False) -> PreparedField:
    """Dress and transform ``x`` unless it is already prepared for ``params``."""
    if curvature is None:
        curvature = params.lam != 0.0
    if isinstance(x, PreparedField):
        if x.key != params.dressing_key() + (params.m,):
            raise ValueError("prepared field was made with different model parameters")
        x.require(curvature, conjugate)
        return x
    return PreparedField(x, params, curvature=curvature, conjugate=conjugate)


# ---------------------------------------------------------------------------
# public inner products
# ---------------------------------------------------------------------------


def ip_shell(V, U, m: float = 1.0, sign: int | str = +1) -> VevResult:
    """``(V, U)_+`` or ``(V, U)_-`` of two (undressed) spinor fields.

    ``(V, U)_-`` carries the overall minus sign of its definition, so
    ``(V, V)_-`` is non-negative and ``(V, U)_+ + (V, U)_-`` is the
    anticommutator function ``(V, U)``.
    """
    s = _sign(sign)
    sv = V if isinstance(V, ShellTransform) else ShellTransform.from_field(V, m)
    su = U if isinstance(U, ShellTransform) else ShellTransform.from_field(U, m)
    return _shell_pair(sv, su, s)


def anticommutator(V, U, m: float = 1.0) -> VevResult:
    """``(V, U)`` with the sign function ``eps(k0)`` on the full shell."""
    sv = V if isinstance(V, ShellTransform) else ShellTransform.from_field(V, m)
    su = U if isinstance(U, ShellTransform) else ShellTransform.from_field(U, m)
    out = []
    for dv, du in ((sv.fine, su.fine), (sv.coarse, su.coarse)):
        pos = _dirac_sum(dv.pos, du.pos, du, su.mass, 1.0)
        neg = _dirac_sum(dv.neg, du.neg, du, su.mass, -1.0)
        out.append(pos - neg)
    return VevResult(out[0], abs(out[0] - out[1]))


def _sign(sign) -> int:
    if sign in (+1, "+", "plus"):
        return 1
    if sign in (-1, "-", "minus"):
        return -1
    raise ValueError(f"shell sign must be + or -, got {sign!r}")


def _maxwell(x, exterior="potential") -> MaxwellShell:
    if isinstance(x, MaxwellShell):
        return x
    if isinstance(x, PreparedField):
        x.require(curvature=True)
        return x.maxwell
    if isinstance(x, BivectorField):
        return MaxwellShell.from_bivector(x, exterior)
    raise TypeError(f"cannot pair {type(x).__name__} in the Maxwell product")


def ip_maxwell(f, g, exterior: str = "potential") -> VevResult:
    """Maxwell two-point function ``(f, g)_0``.

    ``f`` and ``g`` are bivector fields, :class:`MaxwellShell` data or
    prepared spinor fields (standing for their curvatures).
    """
    return _maxwell_pair(_maxwell(f, exterior), _maxwell(g, exterior))


# ---------------------------------------------------------------------------
# VEVs
# ---------------------------------------------------------------------------


def _plus(a: PreparedField, b: PreparedField) -> VevResult:
    return _shell_pair(a.shell, b.shell, 1)


def vev2_xi(V, U, params: ModelParams) -> VevResult:
    """``<xi_V^dagger xi_U> = (V_u, U_u)_+``."""
    pv = prepare(V, params, curvature=False)
    pu = prepare(U, params, curvature=False)
    return _plus(pv, pu)


def vev2_psi(V, U, params: ModelParams, normal_ordered: bool = False) -> VevResult:
    """Two-point VEV of the deformed field.

    ``(V_u, U_u)_+ exp[-l^2/2 (dV, dV) - l^2/2 (dU, dU) + l^2 (dV, dU)]``;
    ``normal_ordered`` removes the two one-point factors.  At ``lam = 0``
    no curvature is evaluated and the result is :func:`vev2_xi` exactly.
    """
    lam = params.lam
    pv = prepare(V, params)
    pu = prepare(U, params)
    base = _plus(pv, pu)
    if lam == 0.0:
        return base
    l2 = lam * lam
    x = ip_maxwell(pv, pu) * l2
    if not normal_ordered:
        x = x - ip_maxwell(pv, pv) * (0.5 * l2) - ip_maxwell(pu, pu) * (0.5 * l2)
    return base * x.exp()


def vev3(f, V, U, params: ModelParams) -> VevResult:
    """``<F_f^dagger Psi'_V^dagger Psi'_U>`` with normal-ordered ``Psi'``.

    ``(V_u, U_u)_+ i lam [(f, dU)_0 - (f, dV)_0] exp[lam^2 (dV, dU)_0]``.
    """
    lam = params.lam
    if lam == 0.0:
        return VevResult(0.0, 0.0)
    pv = prepare(V, params)
    pu = prepare(U, params)
    fm = _maxwell(f)
    bracket = ip_maxwell(fm, pu) - ip_maxwell(fm, pv)
    return _plus(pv, pu) * (1j * lam) * bracket * (ip_maxwell(pv, pu) * (lam * lam)).exp()


def free_determinant(V1, V2, U2, U1, params: ModelParams) -> VevResult:
    """``det [(V_i u, U_j u)_+]`` for ``i, j = 1, 2``."""
    v1, v2, u2, u1 = (prepare(x, params, curvature=False) for x in (V1, V2, U2, U1))
    return _det2(_plus(v1, u1), _plus(v1, u2), _plus(v2, u1), _plus(v2, u2))


def vev4(V1, V2, U2, U1, params: ModelParams) -> VevResult:
    """Four-point VEV ``<Psi_V1^+ Psi_V2^+ Psi_U2 Psi_U1>`` (argument order as written)."""
    lam = params.lam
    v1, v2, u2, u1 = (prepare(x, params) for x in (V1, V2, U2, U1))
    det = _det2(_plus(v1, u1), _plus(v1, u2), _plus(v2, u1), _plus(v2, u2))
    if lam == 0.0:
        return det
    l2 = lam * lam
    mw = ip_maxwell
    one_point = (mw(v1, v1) + mw(v2, v2) + mw(u2, u2) + mw(u1, u1)) * (-0.5 * l2)
    cross = (
        mw(v1, v2) * (-l2)
        + (mw(v1, u1) + mw(v1, u2) + mw(v2, u1) + mw(v2, u2)) * l2
        - mw(u2, u1) * l2
    )
    return det * (one_point + cross).exp()


# ---------------------------------------------------------------------------
# transition probabilities
# ---------------------------------------------------------------------------


def _nonvanishing(x: VevResult, what: str) -> VevResult:
    if abs(x.value) <= x.quad_error or x.value == 0:
        raise VanishingDenominatorError(f"{what} = {x.value:.3e} is zero within its error {x.quad_error:.1e}")
    return x


def _real_result(x: VevResult) -> VevResult:
    return VevResult(x.value.real, x.quad_error)


def prob_2to2(V1, V2, U1, U2, params: ModelParams) -> VevResult:
    """Probability for ``U1, U2 -> V1, V2``.

    ``|det(V, U)|^2 / (det(V, V) det(U, U)) exp[-lam^2 (D, D)_0]`` with
    ``D = dV1 + dV2 - dU1 - dU2``; the one-point factors cancel.
    """
    lam = params.lam
    v1, v2, u1, u2 = (prepare(x, params) for x in (V1, V2, U1, U2))
    dvu = _det2(_plus(v1, u1), _plus(v1, u2), _plus(v2, u1), _plus(v2, u2))
    duv = _det2(_plus(u1, v1), _plus(u1, v2), _plus(u2, v1), _plus(u2, v2))
    dvv = _nonvanishing(_det2(_plus(v1, v1), _plus(v1, v2), _plus(v2, v1), _plus(v2, v2)), "det (V, V)")
    duu = _nonvanishing(_det2(_plus(u1, u1), _plus(u1, u2), _plus(u2, u1), _plus(u2, u2)), "det (U, U)")
    ratio = dvu * duv / (dvv * duu)
    if lam == 0.0:
        return _real_result(ratio)
    delta = v1.maxwell + v2.maxwell - u1.maxwell - u2.maxwell
    return _real_result(ratio * (ip_maxwell(delta, delta) * (-lam * lam)).exp())


def _em_factor(f, pu: PreparedField, pv: PreparedField, lam: float):
    fm = _maxwell(f)
    bracket = ip_maxwell(fm, pu) - ip_maxwell(fm, pv)
    delta = pv.maxwell - pu.maxwell
    damp = (ip_maxwell(delta, delta) * (-lam * lam)).exp()
    return fm, bracket, damp


def prob_1to2(U, V, f, params: ModelParams) -> VevResult:
    """Probability for ``U -> V, f`` (photon test function ``f``)."""
    lam = params.lam
    pu = prepare(U, params, curvature=True)
    pv = prepare(V, params, curvature=True)
    fm, bracket, damp = _em_factor(f, pu, pv, lam)
    ff = _nonvanishing(ip_maxwell(fm, fm), "(f, f)_0")
    vv = _nonvanishing(_plus(pv, pv), "(V, V)_+")
    uu = _nonvanishing(_plus(pu, pu), "(U, U)_+")
    den = ff + ip_maxwell(fm, pv).abs2() * (lam * lam)
    spinor = _plus(pv, pu).abs2() / (vv * uu)
    em = bracket.abs2() * (lam * lam) / den
    return _real_result(spinor * em * damp)


def prob_annihilate(U, V, f, params: ModelParams) -> VevResult:
    """Probability for ``U, antiparticle(V) -> f``."""
    lam = params.lam
    pu = prepare(U, params, curvature=True)
    pv = prepare(V, params, curvature=True, conjugate=True)
    fm, bracket, damp = _em_factor(f, pu, pv, lam)
    ff = _nonvanishing(ip_maxwell(fm, fm), "(f, f)_0")
    c = pv.conj_shell
    uu = _shell_pair(pu.shell, pu.shell, 1)
    uc = _shell_pair(pu.shell, c, 1)
    cu = _shell_pair(c, pu.shell, 1)
    cc = _shell_pair(c, c, 1)
    det = _nonvanishing(_det2(uu, uc, cu, cc), "det (U, V^c)")
    spinor = _plus(pv, pu).abs2() / det
    em = bracket.abs2() * (lam * lam) / ff
    return _real_result(spinor * em * damp)
