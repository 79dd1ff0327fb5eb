"""Spinor, vector and bivector fields on a periodic lattice.

Spinor fields are evaluated lazily in time slabs so that large lattices never
need the full derivative jet in memory.  Every spinor field can return, for
a slab of time slices, its values with shape ``(nt, Nx, Ny, Nz, 4)`` and,
optionally, its first derivatives with shape ``(4, nt, Nx, Ny, Nz, 4)``.
Derivatives are with respect to the coordinates ``x^alpha`` (so they carry
a lower index).

Fields sampled from an ansatz carry exact derivative samples ("jets").  Phase
rotations such as gauge transformations and dressing propagate the jet by the
product rule.  Fields built from raw samples have no jet and are
differentiated on the lattice.
"""

from __future__ import annotations

import json
import struct
import sys
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.fft as sfft

from .clifford import CHARGE_CONJ, GAMMA5
from .lattice import Lattice, fd4

__all__ = [
    "FieldError",
    "EnvelopeDecayError",
    "GaussianEnvelope",
    "TrigEnvelope",
    "NoRegulator",
    "GaussianRegulator",
    "SuperGaussianRegulator",
    "AnsatzTerm",
    "SpinorField",
    "AnsatzField",
    "GridField",
    "PhasedField",
    "ModulatedField",
    "ConjugateField",
    "VectorField",
    "BivectorField",
    "BIVECTOR_PAIRS",
    "RandomGaugeFunction",
    "GaussianBivector",
    "sample_ansatz",
    "sample_scalar",
    "fourier",
    "inverse_fourier",
    "momentum_grid",
    "gauge_transform",
    "chiral_gauge_transform",
    "save_snapshot",
    "load_snapshot",
    "terms_to_json",
    "terms_from_json",
    "ffexample_terms",
]

_GDIAG = np.array([1.0, -1.0, -1.0, -1.0])
BIVECTOR_PAIRS = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))
FLOOR_RELATIVE = 1e-30


class FieldError(ValueError):
    """Invalid field construction."""


class EnvelopeDecayError(FieldError):
    """An envelope does not decay at the lattice boundary."""


def _vec4(v, name="vector") -> np.ndarray:
    a = np.asarray(v, dtype=float)
    if a.shape == ():
        a = np.full(4, float(a))
    if a.shape != (4,) or not np.all(np.isfinite(a)):
        raise FieldError(f"{name} must be a finite 4-vector, got {v!r}")
    return a


def _mdot_coords(k: np.ndarray, x: Sequence[np.ndarray]):
    return k[0] * x[0] - k[1] * x[1] - k[2] * x[2] - k[3] * x[3]


# ---------------------------------------------------------------------------
# envelopes and regulators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianEnvelope:
    """``exp(-sum_a (x^a - c^a)^2 / (2 w_a^2))`` with Euclidean distance."""

    center: tuple = (0.0, 0.0, 0.0, 0.0)
    width: tuple | float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(_vec4(self.center, "center")))
        w = _vec4(self.width, "width")
        if np.any(w <= 0):
            raise FieldError("envelope width must be positive")
        object.__setattr__(self, "width", tuple(w))

    def evaluate(self, x, grad=True):
        c = self.center
        w = self.width
        d = [x[a] - c[a] for a in range(4)]
        val = np.exp(-0.5 * (d[0] / w[0]) ** 2)
        for a in range(1, 4):
            val = val * np.exp(-0.5 * (d[a] / w[a]) ** 2)
        if not grad:
            return val, None
        return val, [-d[a] / w[a] ** 2 * val for a in range(4)]

    def to_dict(self):
        return {"kind": "gaussian", "center": list(self.center), "width": list(self.width)}


@dataclass(frozen=True)
class TrigEnvelope:
    """``f(q.x + phase)`` times an optional Gaussian taper, ``f`` = cos or sin.

    ``q`` is contravariant and ``q.x`` is the Minkowski product.
    """

    wavevector: tuple
    phase: float = 0.0
    func: str = "cos"
    taper: GaussianEnvelope | None = None

    def __post_init__(self):
        object.__setattr__(self, "wavevector", tuple(_vec4(self.wavevector, "wavevector")))
        if self.func not in ("cos", "sin"):
            raise FieldError("trig envelope func must be 'cos' or 'sin'")
        object.__setattr__(self, "phase", float(self.phase))

    def evaluate(self, x, grad=True):
        q = np.asarray(self.wavevector)
        arg = _mdot_coords(q, x) + self.phase
        if self.func == "cos":
            f, df = np.cos(arg), -np.sin(arg)
        else:
            f, df = np.sin(arg), np.cos(arg)
        ql = q * _GDIAG
        if self.taper is None:
            if not grad:
                return f, None
            return f, [ql[a] * df for a in range(4)]
        tv, tg = self.taper.evaluate(x, grad)
        val = f * tv
        if not grad:
            return val, None
        return val, [ql[a] * df * tv + f * tg[a] for a in range(4)]

    def to_dict(self):
        d = {"kind": "trig", "wavevector": list(self.wavevector), "phase": self.phase, "func": self.func}
        if self.taper is not None:
            d["taper"] = self.taper.to_dict()
        return d


@dataclass(frozen=True)
class NoRegulator:
    """``Phi = 1``."""

    def evaluate(self, x, grad=True):
        return 1.0, ([0.0, 0.0, 0.0, 0.0] if grad else None)

    def to_dict(self):
        return {"kind": "none"}


@dataclass(frozen=True)
class SuperGaussianRegulator:
    """``Phi = exp(-(r^2 / w^2)^p / 2)``; ``p = 1`` is a plain Gaussian.

    For ``p > 1`` the profile is flat near the centre, so that ``Phi`` is
    close to one over the core of the field while still decaying at the
    boundary.
    """

    center: tuple = (0.0, 0.0, 0.0, 0.0)
    width: float = 4.0
    order: int = 1

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(_vec4(self.center, "center")))
        if not self.width > 0:
            raise FieldError("regulator width must be positive")
        if int(self.order) < 1:
            raise FieldError("regulator order must be >= 1")
        object.__setattr__(self, "order", int(self.order))
        object.__setattr__(self, "width", float(self.width))

    def evaluate(self, x, grad=True):
        c = self.center
        w2 = self.width**2
        d = [x[a] - c[a] for a in range(4)]
        rho = (d[0] ** 2 + d[1] ** 2 + d[2] ** 2 + d[3] ** 2) / w2
        p = self.order
        val = np.exp(-0.5 * rho**p)
        if not grad:
            return val, None
        pref = -p * rho ** (p - 1) * val / w2 if p > 1 else -val / w2
        return val, [pref * d[a] for a in range(4)]

    def to_dict(self):
        return {"kind": "supergaussian", "center": list(self.center), "width": self.width, "order": self.order}


def GaussianRegulator(center=(0.0, 0.0, 0.0, 0.0), width=4.0) -> SuperGaussianRegulator:
    """Plain Gaussian regulator."""
    return SuperGaussianRegulator(center, width, 1)


def _envelope_from_dict(d):
    kind = d.get("kind")
    if kind == "gaussian":
        return GaussianEnvelope(d.get("center", (0, 0, 0, 0)), d.get("width", 1.0))
    if kind == "trig":
        taper = d.get("taper")
        return TrigEnvelope(
            d["wavevector"], d.get("phase", 0.0), d.get("func", "cos"),
            None if taper is None else _envelope_from_dict(taper),
        )
    raise FieldError(f"unknown envelope kind {kind!r}")


def _regulator_from_dict(d):
    if d is None:
        return NoRegulator()
    kind = d.get("kind", "none")
    if kind == "none":
        return NoRegulator()
    if kind == "gaussian":
        return SuperGaussianRegulator(d.get("center", (0, 0, 0, 0)), d["width"], 1)
    if kind == "supergaussian":
        return SuperGaussianRegulator(d.get("center", (0, 0, 0, 0)), d["width"], d.get("order", 3))
    raise FieldError(f"unknown regulator kind {kind!r}")


# ---------------------------------------------------------------------------
# ansatz terms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AnsatzTerm:
    """One term ``E(x) exp(-i (k.x) Phi(x)) u0``.

    Parameters
    ----------
    envelope : envelope or tuple of envelopes
        Real envelope; a tuple is multiplied together.
    wavevector : 4-vector
        Contravariant ``k^mu``; the phase is the Minkowski product ``k.x``.
    regulator : regulator object
        ``Phi(x)``.
    spinor : 4 complex numbers
        Constant spinor ``u0``.
    """

    envelope: tuple
    wavevector: tuple
    regulator: object
    spinor: tuple

    def __post_init__(self):
        env = self.envelope
        if not isinstance(env, (tuple, list)):
            env = (env,)
        if len(env) == 0:
            raise FieldError("ansatz term needs at least one envelope factor")
        object.__setattr__(self, "envelope", tuple(env))
        object.__setattr__(self, "wavevector", tuple(_vec4(self.wavevector, "wavevector")))
        sp = np.asarray(self.spinor, dtype=complex)
        if sp.shape != (4,) or not np.all(np.isfinite(sp)):
            raise FieldError("spinor must be 4 finite complex numbers")
        object.__setattr__(self, "spinor", tuple(sp))
        if self.regulator is None:
            object.__setattr__(self, "regulator", NoRegulator())

    def scaled(self, c: complex) -> "AnsatzTerm":
        return AnsatzTerm(self.envelope, self.wavevector, self.regulator, tuple(np.asarray(self.spinor) * c))

    def envelope_values(self, x, grad=True):
        val, g = self.envelope[0].evaluate(x, grad)
        for e in self.envelope[1:]:
            v2, g2 = e.evaluate(x, grad)
            if grad:
                g = [g[a] * v2 + val * g2[a] for a in range(4)]
            val = val * v2
        return val, g

    def phase_values(self, x, grad=True):
        """Return ``psi = (k.x) Phi`` and its gradient ``d_alpha psi``."""
        k = np.asarray(self.wavevector)
        kx = _mdot_coords(k, x)
        phi, dphi = self.regulator.evaluate(x, grad)
        psi = kx * phi
        if not grad:
            return psi, None
        kl = k * _GDIAG
        return psi, [kl[a] * phi + kx * dphi[a] for a in range(4)]

    def evaluate(self, x, grad=True):
        """Values ``(..., 4)`` and derivatives ``(4, ..., 4)`` on coordinates ``x``."""
        e, de = self.envelope_values(x, grad)
        psi, dpsi = self.phase_values(x, grad)
        shape = np.broadcast_shapes(*(np.shape(c) for c in x))
        ph = np.exp(-1j * psi)
        amp = np.broadcast_to(e * ph, shape)
        u0 = np.asarray(self.spinor)
        val = amp[..., None] * u0
        if not grad:
            return val, None
        d = np.empty((4,) + shape + (4,), dtype=complex)
        for a in range(4):
            coef = np.broadcast_to((de[a] - 1j * e * dpsi[a]) * ph, shape)
            d[a] = coef[..., None] * u0
        return val, d

    def to_dict(self) -> dict:
        env = [e.to_dict() for e in self.envelope]
        return {
            "envelope": env if len(env) > 1 else env[0],
            "wavevector": list(self.wavevector),
            "regulator": self.regulator.to_dict(),
            "spinor": [[float(z.real), float(z.imag)] for z in self.spinor],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AnsatzTerm":
        env = d["envelope"]
        env = [env] if isinstance(env, dict) else env
        sp = [complex(*z) if isinstance(z, (list, tuple)) else complex(z) for z in d["spinor"]]
        return cls(
            tuple(_envelope_from_dict(e) for e in env),
            d.get("wavevector", (0, 0, 0, 0)),
            _regulator_from_dict(d.get("regulator")),
            tuple(sp),
        )


def terms_to_json(terms: Sequence[AnsatzTerm]) -> str:
    return json.dumps({"terms": [t.to_dict() for t in terms]}, sort_keys=True)


def terms_from_json(text: str) -> list:
    d = json.loads(text)
    return [AnsatzTerm.from_dict(t) for t in d["terms"]]


def ffexample_terms(
    k1=(1.0, 0.3, 0.0, 0.0), k2=(1.0, -0.3, 0.0, 0.0), k3=(0.0, 0.0, 0.0, 0.5),
    theta: float = 0.3, taper_width: float = 1.5,
    regulator_width: float = 5.0, regulator_order: int = 3, center=(0.0, 0.0, 0.0, 0.0),
) -> list:
    """Two-term field ``cos(k3.x+theta) e^{-i k1.x Phi} u1 + sin(k3.x+theta) e^{-i k2.x Phi} u2``.

    ``u1`` and ``u2`` are the rest-frame spin-up and spin-down spinors, and
    both terms share a Gaussian taper.  Inside the flat core of the
    regulator the connection is ``cos^2 k1 + sin^2 k2``.
    """
    taper = GaussianEnvelope(center, taper_width)
    reg = SuperGaussianRegulator(center, regulator_width, regulator_order)
    t1 = AnsatzTerm(TrigEnvelope(k3, theta, "cos", taper), k1, reg, (1, 0, 0, 0))
    t2 = AnsatzTerm(TrigEnvelope(k3, theta, "sin", taper), k2, reg, (0, 1, 0, 0))
    return [t1, t2]


# ---------------------------------------------------------------------------
# spinor fields
# ---------------------------------------------------------------------------


class SpinorField:
    """Abstract spinor field on a lattice, evaluated in time slabs."""

    lattice: Lattice
    has_jet: bool = False
    slab_sites: int = 1 << 19

    def slab(self, t0: int, t1: int, derivs: bool = False):
        raise NotImplementedError

    def values(self) -> np.ndarray:
        lat = self.lattice
        out = np.empty(lat.shape + (4,), dtype=complex)
        for t0, t1 in lat.slabs(self.slab_sites):
            out[t0:t1] = self.slab(t0, t1)[0]
        return out

    def derivatives(self) -> np.ndarray:
        lat = self.lattice
        out = np.empty((4,) + lat.shape + (4,), dtype=complex)
        for t0, t1 in lat.slabs(self.slab_sites // 4):
            out[:, t0:t1] = self.slab(t0, t1, True)[1]
        return out

    def iter_slabs(self, derivs: bool = False, max_sites: int | None = None):
        ms = self.slab_sites // (4 if derivs else 1) if max_sites is None else max_sites
        for t0, t1 in self.lattice.slabs(ms):
            v, d = self.slab(t0, t1, derivs)
            yield t0, t1, v, d

    def max_abs(self) -> float:
        m = 0.0
        for _, _, v, _ in self.iter_slabs():
            m = max(m, float(np.sqrt(np.max(np.sum(np.abs(v) ** 2, axis=-1)))))
        return m

    def norm(self) -> float:
        """``sqrt(sum |U|^2 h^4)``."""
        s = 0.0
        for _, _, v, _ in self.iter_slabs():
            s += float(np.sum(np.abs(v) ** 2))
        return float(np.sqrt(s * self.lattice.cell_volume))

    def scaled(self, c: complex) -> "SpinorField":
        return ModulatedField(self, complex(c))

    def conjugate(self) -> "SpinorField":
        return ConjugateField(self)


class AnsatzField(SpinorField):
    """Field sampled from ansatz terms, with exact derivative samples.

    Wherever ``|U| < eps`` with ``eps = 1e-30 max|U|`` the sample is
    rescaled to magnitude ``eps`` (derivatives follow the product rule), so
    the field is nowhere zero and its connection is untouched.  Exact zeros
    are replaced by ``eps u_f exp(-i k_ref.x)``.
    """

    has_jet = True

    def __init__(self, terms, lattice: Lattice, floor_spinor=(1, 0, 0, 0), floor_wavevector=(0.0, 0, 0, 0)):
        self.terms = tuple(terms)
        if not self.terms:
            raise FieldError("ansatz needs at least one term")
        self.lattice = lattice
        self.floor_spinor = np.asarray(floor_spinor, dtype=complex)
        self.floor_wavevector = _vec4(floor_wavevector)
        self._max = None

    @property
    def single_term(self) -> bool:
        return len(self.terms) == 1

    def _raw(self, t0, t1, derivs):
        x = self.lattice.coords(t0, t1)
        val = None
        d = None
        for term in self.terms:
            v, dv = term.evaluate(x, derivs)
            val = v if val is None else val + v
            if derivs:
                d = dv if d is None else d + dv
        return x, val, d

    def max_abs(self) -> float:
        if self._max is None:
            m = 0.0
            for t0, t1 in self.lattice.slabs(self.slab_sites):
                _, v, _ = self._raw(t0, t1, False)
                m = max(m, float(np.sqrt(np.max(np.sum(np.abs(v) ** 2, axis=-1)))))
            self._max = m
        return self._max

    def slab(self, t0, t1, derivs=False):
        x, val, d = self._raw(t0, t1, derivs)
        eps = FLOOR_RELATIVE * self.max_abs()
        mag = np.sqrt(np.sum(np.abs(val) ** 2, axis=-1))
        mask = mag < eps
        if not np.any(mask):
            return val, d
        # Clamp the magnitude to eps, keeping the local spinor direction.
        # A positive rescaling leaves every connection unchanged.
        small = mask & (mag > 0)
        if np.any(small):
            m = mag[small]
            lam = eps / m
            v = val[small]
            if derivs:
                for a in range(4):
                    da = d[a][small]
                    dm = np.sum(np.conj(v) * da, axis=-1).real / m
                    d[a][small] = lam[:, None] * da - (lam * dm / m)[:, None] * v
            val[small] = lam[:, None] * v
        zero = mask & (mag == 0)
        if np.any(zero):
            k = self.floor_wavevector
            ph = np.broadcast_to(np.exp(-1j * _mdot_coords(k, x)), mask.shape)[zero]
            val[zero] = eps * ph[:, None] * self.floor_spinor
            if derivs:
                kl = k * _GDIAG
                for a in range(4):
                    d[a][zero] = (-1j * kl[a] * eps) * ph[:, None] * self.floor_spinor
        return val, d

    def check_decay(self, tol: float = 1e-8) -> None:
        """Raise :class:`EnvelopeDecayError` if an envelope is not small on the boundary."""
        lat = self.lattice
        for n, term in enumerate(self.terms):
            peak = 0.0
            for t0, t1 in lat.slabs(self.slab_sites):
                e, _ = term.envelope_values(lat.coords(t0, t1), False)
                peak = max(peak, float(np.max(np.abs(e))))
            if peak == 0.0:
                raise EnvelopeDecayError(f"term {n}: envelope vanishes on the lattice")
            full = lat.coords()
            for sl in lat.boundary_faces():
                xs = [np.broadcast_to(c, lat.shape)[sl] for c in full]
                e, _ = term.envelope_values(xs, False)
                worst = float(np.max(np.abs(e)))
                if worst > tol * peak:
                    raise EnvelopeDecayError(
                        f"term {n}: envelope reaches {worst / peak:.3e} of its peak on a boundary face"
                    )


def sample_ansatz(terms, lattice: Lattice, check: bool = True, **kw) -> AnsatzField:
    """Sample ansatz terms on a lattice.

    Raises
    ------
    EnvelopeDecayError
        If any envelope exceeds ``1e-8`` of its peak on a boundary face.
    """
    f = AnsatzField(terms, lattice, **kw)
    if check:
        f.check_decay()
    return f


class GridField(SpinorField):
    """Field given by raw samples, optionally with derivative samples.

    Without derivative samples, derivatives are taken on the lattice with
    ``method`` ``"fd4"`` (default) or ``"spectral"``.
    """

    def __init__(self, lattice: Lattice, values: np.ndarray, derivs: np.ndarray | None = None, method: str = "fd4"):
        values = np.asarray(values, dtype=complex)
        if values.shape != lattice.shape + (4,):
            raise FieldError(f"values shape {values.shape} does not match lattice {lattice.shape}")
        if not np.all(np.isfinite(values)):
            raise FieldError("non-finite spinor samples")
        if derivs is not None and derivs.shape != (4,) + values.shape:
            raise FieldError("derivative samples have wrong shape")
        if method not in ("fd4", "spectral"):
            raise FieldError(f"unknown derivative method {method!r}")
        self.lattice = lattice
        self._v = values
        self._d = derivs
        self.method = method
        self.has_jet = derivs is not None
        self._spec = None

    def values(self) -> np.ndarray:
        return self._v

    def _spectral(self):
        if self._spec is None:
            lat = self.lattice
            vh = sfft.fftn(self._v, axes=(0, 1, 2, 3))
            out = np.empty((4,) + self._v.shape, dtype=complex)
            for a in range(4):
                k = lat.momenta(a)
                if lat.extents[a] % 2 == 0:
                    k = k.copy()
                    k[lat.extents[a] // 2] = 0.0
                shp = [1, 1, 1, 1, 1]
                shp[a] = k.size
                out[a] = sfft.ifftn(vh * (1j * k.reshape(shp)), axes=(0, 1, 2, 3))
            self._spec = out
        return self._spec

    def slab(self, t0, t1, derivs=False):
        v = self._v[t0:t1]
        if not derivs:
            return v, None
        if self._d is not None:
            return v, self._d[:, t0:t1]
        if self.method == "spectral":
            return v, self._spectral()[:, t0:t1]
        lat = self.lattice
        nt = lat.extents[0]
        idx = np.arange(t0 - 2, t1 + 2) % nt
        halo = self._v[idx]
        d = np.empty((4,) + v.shape, dtype=complex)
        d[0] = fd4(halo, 0, lat.spacings[0])[2:-2]
        for a in range(1, 4):
            d[a] = fd4(v, a, lat.spacings[a])
        return v, d


class PhasedField(SpinorField):
    """``exp(i (chi + gamma5 chi5)) U`` for real lattice scalars ``chi``, ``chi5``.

    The gradients of the phases must be supplied; derivatives follow the
    product rule ``d(e^{iM}U) = e^{iM}(dU + i dM U)``.
    """

    def __init__(self, base: SpinorField, chi, grad_chi, chi5=None, grad_chi5=None):
        lat = base.lattice
        if isinstance(base, PhasedField):
            chi = base.chi + chi
            grad_chi = base.grad_chi + grad_chi
            if base.chi5 is not None:
                chi5 = base.chi5 if chi5 is None else base.chi5 + chi5
                grad_chi5 = base.grad_chi5 if grad_chi5 is None else base.grad_chi5 + grad_chi5
            base = base.base
        self.base = base
        self.lattice = lat
        self.chi = np.asarray(chi, dtype=float)
        self.grad_chi = np.asarray(grad_chi, dtype=float)
        self.chi5 = None if chi5 is None else np.asarray(chi5, dtype=float)
        self.grad_chi5 = None if grad_chi5 is None else np.asarray(grad_chi5, dtype=float)
        self.has_jet = base.has_jet
        if self.chi.shape != lat.shape or self.grad_chi.shape != (4,) + lat.shape:
            raise FieldError("phase arrays do not match the lattice")

    def _rotate(self, w, c, s5):
        # apply exp(i chi) exp(i g5 chi5) to spinor array w
        if s5 is None:
            return c[..., None] * w
        cos5, sin5 = s5
        g5w = w[..., [2, 3, 0, 1]]
        return c[..., None] * (cos5[..., None] * w + 1j * sin5[..., None] * g5w)

    def slab(self, t0, t1, derivs=False):
        v, d = self.base.slab(t0, t1, derivs)
        c = np.exp(1j * self.chi[t0:t1])
        s5 = None
        if self.chi5 is not None:
            a5 = self.chi5[t0:t1]
            s5 = (np.cos(a5), np.sin(a5))
        out = self._rotate(v, c, s5)
        if not derivs:
            return out, None
        dout = np.empty_like(d)
        g5v = v[..., [2, 3, 0, 1]]
        for a in range(4):
            w = d[a] + 1j * self.grad_chi[a, t0:t1][..., None] * v
            if self.chi5 is not None:
                w = w + 1j * self.grad_chi5[a, t0:t1][..., None] * g5v
            dout[a] = self._rotate(w, c, s5)
        return out, dout


class ModulatedField(SpinorField):
    """``E(x) U`` for a real lattice scalar or a complex constant ``E``."""

    def __init__(self, base: SpinorField, factor, grad=None):
        self.base = base
        self.lattice = base.lattice
        self.has_jet = base.has_jet
        if np.isscalar(factor):
            self.factor = complex(factor)
            self.grad = None
        else:
            self.factor = np.asarray(factor, dtype=float)
            if grad is None:
                h = self.lattice.spacings
                grad = np.stack([fd4(self.factor, a, h[a]) for a in range(4)])
            self.grad = np.asarray(grad, dtype=float)

    def slab(self, t0, t1, derivs=False):
        v, d = self.base.slab(t0, t1, derivs)
        if self.grad is None:
            return self.factor * v, (None if d is None else self.factor * d)
        e = self.factor[t0:t1][..., None]
        out = e * v
        if not derivs:
            return out, None
        return out, np.stack([e * d[a] + self.grad[a, t0:t1][..., None] * v for a in range(4)])


class ConjugateField(SpinorField):
    """Charge conjugate ``C U*`` with ``C = i gamma^2``."""

    def __init__(self, base: SpinorField):
        self.base = base
        self.lattice = base.lattice
        self.has_jet = base.has_jet

    def slab(self, t0, t1, derivs=False):
        v, d = self.base.slab(t0, t1, derivs)
        out = np.conj(v) @ CHARGE_CONJ.T
        if not derivs:
            return out, None
        return out, np.conj(d) @ CHARGE_CONJ.T


# ---------------------------------------------------------------------------
# vector and bivector fields
# ---------------------------------------------------------------------------


@dataclass
class VectorField:
    """Real covector field ``u_alpha`` with shape ``(4, Nt, Nx, Ny, Nz)``."""

    lattice: Lattice
    data: np.ndarray
    kind: str = "connection"

    def __post_init__(self):
        if self.data.shape != (4,) + self.lattice.shape:
            raise FieldError("vector data shape does not match lattice")

    def __getitem__(self, a):
        return self.data[a]

    def __add__(self, other):
        return VectorField(self.lattice, self.data + other.data, self.kind)

    def __sub__(self, other):
        return VectorField(self.lattice, self.data - other.data, self.kind)

    def scaled(self, s: float) -> "VectorField":
        return VectorField(self.lattice, s * self.data, self.kind)


@dataclass
class BivectorField:
    """Real antisymmetric field ``f_{mu nu}`` stored as six components.

    Components are ordered as :data:`BIVECTOR_PAIRS` and carry lower
    indices.  When the field is the curvature of a connection, ``potential``
    holds that connection so that momentum-space evaluations can apply the
    exterior derivative exactly.
    """

    lattice: Lattice
    data: np.ndarray
    potential: VectorField | None = None

    def __post_init__(self):
        if self.data.shape != (6,) + self.lattice.shape:
            raise FieldError("bivector data shape does not match lattice")

    def full(self, mu: int, nu: int) -> np.ndarray:
        if mu == nu:
            return np.zeros(self.lattice.shape)
        if mu < nu:
            return self.data[BIVECTOR_PAIRS.index((mu, nu))]
        return -self.data[BIVECTOR_PAIRS.index((nu, mu))]

    def __sub__(self, other):
        pot = None
        if self.potential is not None and other.potential is not None:
            pot = self.potential - other.potential
        return BivectorField(self.lattice, self.data - other.data, pot)

    def __add__(self, other):
        pot = None
        if self.potential is not None and other.potential is not None:
            pot = self.potential + other.potential
        return BivectorField(self.lattice, self.data + other.data, pot)

    def scaled(self, s: float) -> "BivectorField":
        return BivectorField(self.lattice, s * self.data, None if self.potential is None else self.potential.scaled(s))


@dataclass(frozen=True)
class GaussianBivector:
    """Explicit bivector ``c_{mu nu} G(x) cos(q.x)`` with a Gaussian ``G``.

    Not exact in general, so its Maxwell norm is positive.
    """

    components: tuple
    center: tuple = (0.0, 0.0, 0.0, 0.0)
    width: float = 1.5
    wavevector: tuple = (0.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        c = np.asarray(self.components, dtype=float)
        if c.shape != (6,):
            raise FieldError("bivector needs six components")
        object.__setattr__(self, "components", tuple(c))
        object.__setattr__(self, "center", tuple(_vec4(self.center)))
        object.__setattr__(self, "wavevector", tuple(_vec4(self.wavevector)))

    def sample(self, lattice: Lattice) -> BivectorField:
        x = lattice.coords()
        g, _ = GaussianEnvelope(self.center, self.width).evaluate(x, False)
        prof = g * np.cos(_mdot_coords(np.asarray(self.wavevector), x))
        prof = np.broadcast_to(prof, lattice.shape)
        data = np.stack([c * prof for c in self.components])
        return BivectorField(lattice, np.ascontiguousarray(data))

    def to_dict(self):
        return {
            "components": list(self.components), "center": list(self.center),
            "width": self.width, "wavevector": list(self.wavevector),
        }


# ---------------------------------------------------------------------------
# scalar functions and gauge transformations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RandomGaugeFunction:
    """Smooth random real function defined in the continuum.

    ``theta(x) = A G(x) sum_j a_j cos(q_j . x_E + b_j)`` with Gaussian random
    Euclidean wavevectors ``q_j`` of scale ``1 / correlation_length``,
    Gaussian weights ``a_j`` and a Gaussian window ``G`` of width ``width``.
    The same seed gives the same function on every lattice.
    """

    seed: int
    amplitude: float = 1.0
    correlation_length: float = 2.0
    width: float = 2.0
    center: tuple = (0.0, 0.0, 0.0, 0.0)
    modes: int = 24

    def _params(self):
        rng = np.random.Generator(np.random.PCG64(self.seed))
        q = rng.normal(size=(self.modes, 4)) / self.correlation_length
        a = rng.normal(size=self.modes) / np.sqrt(self.modes)
        b = rng.uniform(0.0, 2.0 * np.pi, size=self.modes)
        return q, a, b

    def __call__(self, x) -> np.ndarray:
        return self.evaluate(x, False)[0]

    def gradient(self, x) -> list:
        """Exact ``d_alpha theta`` on coordinates ``x``."""
        return self.evaluate(x, True)[1]

    def evaluate(self, x, grad=True):
        q, a, b = self._params()
        g, dg = GaussianEnvelope(self.center, self.width).evaluate(x, grad)
        s = 0.0
        ds = [0.0, 0.0, 0.0, 0.0]
        for j in range(self.modes):
            arg = q[j, 0] * x[0] + q[j, 1] * x[1] + q[j, 2] * x[2] + q[j, 3] * x[3] + b[j]
            s = s + a[j] * np.cos(arg)
            if grad:
                sn = np.sin(arg)
                for c in range(4):
                    ds[c] = ds[c] - a[j] * q[j, c] * sn
        val = self.amplitude * g * s
        if not grad:
            return val, None
        return val, [self.amplitude * (dg[c] * s + g * ds[c]) for c in range(4)]


def sample_scalar(f, lattice: Lattice) -> np.ndarray:
    """Sample a callable ``f(coords)`` (or pass through an array)."""
    if callable(f):
        return np.ascontiguousarray(np.broadcast_to(f(lattice.coords()), lattice.shape), dtype=float)
    a = np.asarray(f, dtype=float)
    if a.shape != lattice.shape:
        raise FieldError("scalar samples do not match the lattice")
    return a


def _grad_h(theta: np.ndarray, lattice: Lattice) -> np.ndarray:
    return np.stack([fd4(theta, a, lattice.spacings[a]) for a in range(4)])


def _grad_spectral(theta: np.ndarray, lattice: Lattice) -> np.ndarray:
    out = np.empty((4,) + theta.shape)
    for a in range(4):
        n = lattice.extents[a]
        k = 2 * np.pi * np.fft.rfftfreq(n, lattice.spacings[a])
        k[-1] = 0.0  # the Nyquist mode has no odd part
        shp = [1, 1, 1, 1]
        shp[a] = k.size
        out[a] = sfft.irfft(sfft.rfft(theta, axis=a) * (1j * k.reshape(shp)), n=n, axis=a)
    return out


def _theta_and_grad(theta, lattice: Lattice, gradient: str):
    th = sample_scalar(theta, lattice)
    if gradient == "auto":
        gradient = "exact" if hasattr(theta, "gradient") else "spectral"
    if gradient == "lattice":
        return th, _grad_h(th, lattice)
    if gradient == "spectral":
        return th, _grad_spectral(th, lattice)
    if gradient == "exact":
        if not hasattr(theta, "gradient"):
            raise FieldError("exact gradient needs a function with a gradient method")
        g = theta.gradient(lattice.coords())
        return th, np.stack([np.broadcast_to(c, lattice.shape) for c in g]).astype(float)
    raise FieldError(f"unknown gradient mode {gradient!r}")


def gauge_transform(field: SpinorField, theta, gradient: str = "auto") -> PhasedField:
    """Return ``exp(-i theta) U``.

    ``theta`` is a real array on the lattice or a callable on coordinates.
    The derivative samples of the result need ``d theta``:

    ``"exact"``
        ``theta.gradient`` of a continuum function.
    ``"spectral"``
        Fourier derivative of the samples, the derivative the spectral
        kernels invert.
    ``"lattice"``
        Fourth-order differences of the samples.  Spectral kernels then
        reproduce ``theta`` only up to an ``O(h^4)`` error that is enhanced
        near the light cone.
    ``"auto"``
        ``"exact"`` when available, else ``"spectral"``.
    """
    th, g = _theta_and_grad(theta, field.lattice, gradient)
    return PhasedField(field, -th, -g)


def chiral_gauge_transform(field: SpinorField, theta1, theta2, gradient: str = "auto") -> PhasedField:
    """Return ``exp(-i theta1 - i gamma5 theta2) U``."""
    t1, g1 = _theta_and_grad(theta1, field.lattice, gradient)
    t2, g2 = _theta_and_grad(theta2, field.lattice, gradient)
    return PhasedField(field, -t1, -g1, -t2, -g2)


# ---------------------------------------------------------------------------
# Fourier transforms
# ---------------------------------------------------------------------------


def momentum_grid(lattice: Lattice) -> list:
    """Contravariant momenta ``k^mu`` matching :func:`fourier`, as broadcast arrays.

    ``k^0`` is paired with ``exp(+i k^0 t)`` and ``k^j`` with ``exp(-i k^j x^j)``.
    """
    out = []
    for a in range(4):
        k = lattice.momenta(a)
        if a == 0:
            k = -k
        shp = [1, 1, 1, 1]
        shp[a] = k.size
        out.append(k.reshape(shp))
    return out


def fourier(field, lattice: Lattice | None = None) -> np.ndarray:
    """Lattice transform ``U~(k) = sum_x h^4 exp(i k.x) U(x)``.

    Accepts a spinor field or an array whose leading four axes are the
    lattice axes.  The returned array is indexed by the momenta of
    :func:`momentum_grid`.
    """
    if isinstance(field, SpinorField):
        lattice = field.lattice
        arr = field.values()
    else:
        arr = np.asarray(field)
    k = momentum_grid(lattice)
    out = sfft.fftn(arr, axes=(0, 1, 2, 3))
    # k.x = k0 t - k.x; fftn supplies exp(-i nu n h) on every axis, and the
    # time momentum is defined as k0 = -nu so the time sign comes out right.
    ph = np.exp(1j * (k[0] * lattice.origin[0] - k[1] * lattice.origin[1]
                      - k[2] * lattice.origin[2] - k[3] * lattice.origin[3]))
    if out.ndim > 4:
        ph = ph[..., None]
    out *= ph * lattice.cell_volume
    return out


def inverse_fourier(arr: np.ndarray, lattice: Lattice) -> np.ndarray:
    """Inverse of :func:`fourier`."""
    k = momentum_grid(lattice)
    ph = np.exp(-1j * (k[0] * lattice.origin[0] - k[1] * lattice.origin[1]
                       - k[2] * lattice.origin[2] - k[3] * lattice.origin[3]))
    if arr.ndim > 4:
        ph = ph[..., None]
    return sfft.ifftn(arr * ph, axes=(0, 1, 2, 3)) / lattice.cell_volume


# ---------------------------------------------------------------------------
# snapshots
# ---------------------------------------------------------------------------

_MAGIC = b"GDSNAP01"


def save_snapshot(path, field_or_array, lattice: Lattice | None = None) -> None:
    """Write a binary snapshot.

    Layout: 8-byte magic, 1-byte endianness tag (``<`` or ``>``), 7 pad
    bytes, four uint64 extents, four float64 spacings, four float64 origin
    coordinates, one uint64 component count, then row-major complex128
    samples with the component index last.  Header numbers use the tagged
    byte order.
    """
    if isinstance(field_or_array, SpinorField):
        lattice = field_or_array.lattice
        arr = field_or_array.values()
    else:
        arr = np.asarray(field_or_array, dtype=complex)
    ncomp = 1 if arr.ndim == 4 else int(np.prod(arr.shape[4:]))
    tag = "<" if sys.byteorder == "little" else ">"
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(tag.encode() + b"\0" * 7)
        fh.write(struct.pack(tag + "4Q", *lattice.extents))
        fh.write(struct.pack(tag + "4d", *lattice.spacings))
        fh.write(struct.pack(tag + "4d", *lattice.origin))
        fh.write(struct.pack(tag + "Q", ncomp))
        fh.write(np.ascontiguousarray(arr, dtype=np.dtype(tag + "c16")).tobytes())


def load_snapshot(path):
    """Read a snapshot written by :func:`save_snapshot`.

    Returns
    -------
    lattice : Lattice
    data : ndarray, shape ``(Nt, Nx, Ny, Nz, ncomp)``
    """
    with open(path, "rb") as fh:
        if fh.read(8) != _MAGIC:
            raise FieldError("not a snapshot file")
        tag = fh.read(8)[:1].decode()
        if tag not in "<>":
            raise FieldError("bad endianness tag")
        ext = struct.unpack(tag + "4Q", fh.read(32))
        sp = struct.unpack(tag + "4d", fh.read(32))
        org = struct.unpack(tag + "4d", fh.read(32))
        (ncomp,) = struct.unpack(tag + "Q", fh.read(8))
        data = np.frombuffer(fh.read(), dtype=np.dtype(tag + "c16"))
    lat = Lattice(ext, sp, org)
    expected = lat.size * ncomp
    if data.size != expected:
        raise FieldError(f"snapshot holds {data.size} samples, expected {expected}")
    return lat, data.astype(complex).reshape(lat.shape + (ncomp,))
