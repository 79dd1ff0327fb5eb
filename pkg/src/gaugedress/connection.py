"""Gauge connections built from a spinor field.

The principal connection is

    u_alpha = -Im[ sigma ubar d_alpha U + omega ubar i g5 d_alpha U ] / (sigma^2 + omega^2)

with ``sigma = ubar U`` and ``omega = ubar i g5 U``.  Under ``U -> e^{-i theta} U``
it shifts by ``d theta``.  Index placement is covariant throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft

from .clifford import GAMMA, P_MINUS, P_PLUS
from .fields import (
    BIVECTOR_PAIRS,
    AnsatzField,
    BivectorField,
    GridField,
    SpinorField,
    VectorField,
)
from .kernels import spinor_jet_bilinears
from .lattice import Lattice, fd4, fd4_nonperiodic

__all__ = [
    "ConnectionError_",
    "VanishingDenominator",
    "ImproperConnection",
    "ConnectionSpec",
    "connection_u",
    "connection_general",
    "chiral_connections",
    "compute_connection",
    "curvature",
    "divergence",
    "codifferential",
    "lattice_derivative",
    "DENOMINATOR_GUARD",
    "ffexample_reference",
    "interior_mask",
    "interior_deviation",
]

DENOMINATOR_GUARD = 1e-24


class ConnectionError_(ArithmeticError):
    """Base class for connection failures."""


class VanishingDenominator(ConnectionError_):
    """A bilinear denominator vanished at some lattice site."""

    def __init__(self, msg, site=None):
        super().__init__(msg)
        self.site = site


class ImproperConnection(ValueError):
    """Connection weights violate ``Re(M1 + M2) = 1``."""


@dataclass(frozen=True)
class ConnectionSpec:
    """Choice of connection.

    ``kind`` is ``"principal"``, ``"general"`` or ``"chiral"``.  For
    ``"general"`` the weights ``M1``, ``M2`` are complex constants or the
    string ``"fierz"`` (pointwise ``sigma^2/N`` and ``omega^2/N``, which
    reproduces the principal connection).
    """

    kind: str = "principal"
    M1: object = 1.0
    M2: object = 0.0
    allow_improper: bool = False

    def __post_init__(self):
        if self.kind not in ("principal", "general", "chiral"):
            raise ValueError(f"unknown connection kind {self.kind!r}")

    def to_dict(self):
        d = {"kind": self.kind}
        if self.kind == "general":
            for name in ("M1", "M2"):
                v = getattr(self, name)
                d[name] = v if isinstance(v, str) else [complex(v).real, complex(v).imag]
            d["allow_improper"] = self.allow_improper
        return d


def lattice_derivative(f: np.ndarray, axis: int, lattice: Lattice, method: str = "fd4") -> np.ndarray:
    """Derivative of a real periodic array along a lattice axis."""
    if method == "fd4":
        return fd4(f, axis, lattice.spacings[axis])
    if method == "spectral":
        n = lattice.extents[axis]
        k = 2 * np.pi * np.fft.rfftfreq(n, lattice.spacings[axis])
        if n % 2 == 0:
            k[-1] = 0.0
        fh = sfft.rfft(f, axis=axis)
        shp = [1] * f.ndim
        shp[axis] = k.size
        return sfft.irfft(fh * (1j * k.reshape(shp)), n=n, axis=axis)
    raise ValueError(f"unknown derivative method {method!r}")


def _sources(field: SpinorField, method: str):
    if method == "jet" and not field.has_jet:
        raise ValueError("field carries no derivative samples")
    if method in ("fd4", "spectral"):
        if isinstance(field, GridField) and not field.has_jet and field.method == method:
            return field
        return GridField(field.lattice, field.values(), method=method)
    if method not in ("auto", "jet"):
        raise ValueError(f"unknown connection method {method!r}")
    return field


def _guard_check(den, norm2, t0, shape, guard):
    bad = ~(den > guard * norm2 * norm2)
    if np.any(bad):
        site = _site(t0, int(np.flatnonzero(bad)[0]), shape)
        raise VanishingDenominator(f"bilinear denominator vanishes at lattice site {site}", site)


def _site(t0, i, shape):
    idx = np.unravel_index(i, shape)
    return (t0 + int(idx[0]),) + tuple(int(j) for j in idx[1:])


def _jet_slabs(field: SpinorField, method: str):
    src = _sources(field, method)
    scale = field.max_abs()
    if not scale > 0:
        raise VanishingDenominator("field vanishes identically")
    for t0, t1, v, d in src.iter_slabs(derivs=True):
        shape = v.shape[:-1]
        n = int(np.prod(shape))
        yield t0, t1, shape, spinor_jet_bilinears(v.reshape(n, 4) / scale, d.reshape(4, n, 4) / scale)


def connection_u(field: SpinorField, method: str = "auto", guard: float = DENOMINATOR_GUARD) -> VectorField:
    """Principal connection of a spinor field.

    Parameters
    ----------
    field : SpinorField
    method : {"auto", "jet", "fd4", "spectral"}
        ``"auto"`` uses the closed form for a single ansatz term, exact
        derivative samples when the field carries them, and fourth-order
        differences otherwise.  ``"fd4"`` and ``"spectral"`` force lattice
        differentiation of the sampled values.
    guard : float
        Sites with ``sigma^2 + omega^2 <= guard |U|^4`` raise
        :class:`VanishingDenominator`.

    Returns
    -------
    VectorField
        ``u_alpha`` with covariant index.
    """
    lat = field.lattice
    if method == "auto" and isinstance(field, AnsatzField) and field.single_term:
        return _single_term_connection(field, guard)
    out = np.empty((4,) + lat.shape)
    for t0, t1, shape, (sigma, omega, A, B, norm2) in _jet_slabs(field, method):
        den = sigma * sigma + omega * omega
        _guard_check(den, norm2, t0, shape, guard)
        num = sigma * A + omega * B
        out[:, t0:t1] = (-num.imag / den).reshape((4,) + shape)
    return VectorField(lat, out)


def _single_term_connection(field: AnsatzField, guard: float) -> VectorField:
    term = field.terms[0]
    u0 = np.asarray(term.spinor)
    sig = float(np.real(np.conj(u0) @ (np.array([1, 1, -1, -1]) * u0)))
    om = float(np.real(1j * np.conj(u0) @ (np.array([1, 1, -1, -1]) * u0[[2, 3, 0, 1]])))
    n2 = float(np.real(np.conj(u0) @ u0))
    if not sig * sig + om * om > guard * n2 * n2:
        raise VanishingDenominator("constant spinor of the ansatz term is null", (0, 0, 0, 0))
    lat = field.lattice
    out = np.empty((4,) + lat.shape)
    for t0, t1 in lat.slabs(field.slab_sites):
        _, g = term.phase_values(lat.coords(t0, t1), True)
        for a in range(4):
            out[a, t0:t1] = np.broadcast_to(g[a], (t1 - t0,) + lat.shape[1:])
    return VectorField(lat, out)


def connection_general(
    field: SpinorField, M1=1.0, M2=0.0, method: str = "auto", guard: float = DENOMINATOR_GUARD,
    allow_improper: bool = False,
) -> VectorField:
    """Connection ``-Im[M1 ubar dU / sigma + M2 ubar i g5 dU / omega]``.

    ``M1`` and ``M2`` are complex constants with ``Re(M1 + M2) = 1``, or the
    string ``"fierz"`` for the pointwise weights that reproduce
    :func:`connection_u`.  Terms with zero weight are dropped, so a field
    with ``omega = 0`` may use ``M2 = 0``.

    Raises
    ------
    ImproperConnection
        If the constant weights violate ``Re(M1 + M2) = 1`` and
        ``allow_improper`` is false.
    """
    if isinstance(M1, str) or isinstance(M2, str):
        if not (M1 == "fierz" and M2 == "fierz"):
            raise ValueError("string weights must both be 'fierz'")
        fierz = True
    else:
        fierz = False
        M1 = complex(M1)
        M2 = complex(M2)
        if not allow_improper and abs((M1 + M2).real - 1.0) > 1e-12:
            raise ImproperConnection(f"Re(M1 + M2) = {(M1 + M2).real!r}, must equal 1")
    lat = field.lattice
    out = np.empty((4,) + lat.shape)
    for t0, t1, shape, (sigma, omega, A, B, norm2) in _jet_slabs(field, method):
        if fierz:
            den = sigma * sigma + omega * omega
            _guard_check(den, norm2, t0, shape, guard)
            X = (sigma * A + omega * B) / den
        else:
            X = np.zeros_like(A)
            if M1 != 0:
                _guard_check(sigma * sigma, norm2, t0, shape, guard)
                X = X + M1 * A / sigma
            if M2 != 0:
                _guard_check(omega * omega, norm2, t0, shape, guard)
                X = X + M2 * B / omega
        out[:, t0:t1] = (-X.imag).reshape((4,) + shape)
    return VectorField(lat, out)


_GP = np.einsum("mab,bc->mac", GAMMA, P_PLUS)
_GM = np.einsum("mab,bc->mac", GAMMA, P_MINUS)
_LOWER = np.array([1.0, -1.0, -1.0, -1.0])


def chiral_connections(field: SpinorField, method: str = "auto", guard: float = DENOMINATOR_GUARD):
    """Chiral connections ``(u_plus, u_minus)``.

    ``u_pm = -Im[(ubar g^mu P_mp U)(ubar g_mu P_pm dU) / D]`` with
    ``D = (ubar g^mu P_+ U)(ubar g_mu P_- U) = (sigma^2 + omega^2)/2``.
    Under ``U -> exp(-i theta1 - i g5 theta2) U`` they shift by
    ``d theta1 +- d theta2``.
    """
    lat = field.lattice
    src = _sources(field, method)
    scale = field.max_abs()
    up = np.empty((4,) + lat.shape)
    um = np.empty((4,) + lat.shape)
    for t0, t1, v, d in src.iter_slabs(derivs=True):
        v = v / scale
        d = d / scale
        ub = np.conj(v) * np.array([1.0, 1.0, -1.0, -1.0])
        Jp = np.einsum("...a,mab,...b->...m", ub, _GP, v).real * _LOWER
        Jm = np.einsum("...a,mab,...b->...m", ub, _GM, v).real * _LOWER
        D = np.einsum("...m,...m->...", Jp, Jm * _LOWER)
        n2 = np.sum(np.abs(v) ** 2, axis=-1)
        shape = v.shape[:-1]
        _guard_check((2 * D).ravel(), n2.ravel(), t0, shape, guard)
        # Jp, Jm hold lower-index currents; contract with ubar g^mu P dU
        for a in range(4):
            cp = np.einsum("...a,mab,...b->...m", ub, _GP, d[a])
            cm = np.einsum("...a,mab,...b->...m", ub, _GM, d[a])
            up[a, t0:t1] = -(np.einsum("...m,...m->...", Jm, cp) / D).imag
            um[a, t0:t1] = -(np.einsum("...m,...m->...", Jp, cm) / D).imag
    return VectorField(lat, up, "chiral+"), VectorField(lat, um, "chiral-")


def compute_connection(field: SpinorField, spec: ConnectionSpec | None = None, method: str = "auto"):
    """Connection selected by ``spec``; chiral specs return a pair."""
    spec = spec or ConnectionSpec()
    if spec.kind == "principal":
        return connection_u(field, method)
    if spec.kind == "general":
        return connection_general(field, spec.M1, spec.M2, method, allow_improper=spec.allow_improper)
    return chiral_connections(field, method)


def curvature(u: VectorField, method: str = "spectral") -> BivectorField:
    """``(du)_{mu alpha} = D_mu u_alpha - D_alpha u_mu`` (no factor 1/2).

    The result remembers ``u`` as its potential.
    """
    lat = u.lattice
    data = np.empty((6,) + lat.shape)
    for n, (mu, al) in enumerate(BIVECTOR_PAIRS):
        data[n] = lattice_derivative(u.data[al], mu, lat, method) - lattice_derivative(u.data[mu], al, lat, method)
    return BivectorField(lat, data, potential=u)


def divergence(u: VectorField, method: str = "fd4", open_time: bool = False) -> np.ndarray:
    """``d^alpha u_alpha = D_0 u_0 - sum_i D_i u_i``.

    With ``open_time`` the time derivative uses one-sided fourth-order
    stencils at the first and last slices instead of wrapping around, which
    suits fields (such as retarded phases) that do not vanish at late times.
    """
    lat = u.lattice
    if open_time:
        out = fd4_nonperiodic(u.data[0], 0, lat.spacings[0])
    else:
        out = lattice_derivative(u.data[0], 0, lat, method)
    for a in range(1, 4):
        out -= lattice_derivative(u.data[a], a, lat, method)
    return out


def codifferential(f: BivectorField, method: str = "fd4") -> VectorField:
    """``(delta f)_alpha = d^mu f_{mu alpha}``."""
    lat = f.lattice
    out = np.zeros((4,) + lat.shape)
    for al in range(4):
        for mu in range(4):
            if mu == al:
                continue
            out[al] += _LOWER[mu] * lattice_derivative(f.full(mu, al), mu, lat, method)
    return VectorField(lat, out, "codifferential")


def ffexample_reference(
    lattice: Lattice, k1=(1.0, 0.3, 0.0, 0.0), k2=(1.0, -0.3, 0.0, 0.0), k3=(0.0, 0.0, 0.0, 0.5),
    theta: float = 0.3, regulator=None,
):
    """Closed-form connection and curvature of the two-term example field.

    With ``a = k3.x + theta`` and ``p_i = d[(k_i.x) Phi]`` the connection is
    ``cos^2(a) p_1 + sin^2(a) p_2`` and the curvature ``sin(2a) k3 ^ (p_2 - p_1)``
    (all vectors lowered).  Without a regulator ``p_i = k_i``, the form that
    holds where ``Phi = 1``.  Arguments match
    :func:`gaugedress.fields.ffexample_terms`.
    """
    g = _LOWER
    x = lattice.coords()
    shape = lattice.shape

    def mdot(k):
        k = np.asarray(k, dtype=float)
        return sum(k[m] * g[m] * x[m] for m in range(4))

    if regulator is None:
        p1 = [np.broadcast_to(k1[m] * g[m], shape) for m in range(4)]
        p2 = [np.broadcast_to(k2[m] * g[m], shape) for m in range(4)]
    else:
        phi, dphi = regulator.evaluate(x, True)
        kx1, kx2 = mdot(k1), mdot(k2)
        p1 = [np.broadcast_to(k1[m] * g[m] * phi + kx1 * dphi[m], shape) for m in range(4)]
        p2 = [np.broadcast_to(k2[m] * g[m] * phi + kx2 * dphi[m], shape) for m in range(4)]
    k3l = np.asarray(k3, dtype=float) * g
    a = np.broadcast_to(mdot(k3) + theta, shape)
    c2, s2, s2a = np.cos(a) ** 2, np.sin(a) ** 2, np.sin(2 * a)
    u = np.stack([c2 * p1[m] + s2 * p2[m] for m in range(4)])
    d = [p2[m] - p1[m] for m in range(4)]
    f = np.stack([s2a * (k3l[mu] * d[al] - k3l[al] * d[mu]) for mu, al in BIVECTOR_PAIRS])
    return VectorField(lattice, u, "ffexample"), BivectorField(lattice, f)


def interior_mask(lattice: Lattice, radius: float, center=(0.0, 0.0, 0.0, 0.0)) -> np.ndarray:
    """Sites within a Euclidean ``radius`` of ``center``."""
    x = lattice.coords()
    r2 = sum((x[a] - center[a]) ** 2 for a in range(4))
    return np.broadcast_to(r2 <= radius**2, lattice.shape)


def interior_deviation(got: np.ndarray, ref: np.ndarray, mask: np.ndarray) -> float:
    """Max over masked sites of ``|got - ref|`` relative to the max of ``|ref|`` there."""
    got = np.asarray(got)
    ref = np.asarray(ref)
    err = np.sqrt(np.sum(np.abs(got - ref) ** 2, axis=0))[mask]
    scale = np.sqrt(np.sum(np.abs(ref) ** 2, axis=0))[mask]
    return float(err.max() / scale.max())
