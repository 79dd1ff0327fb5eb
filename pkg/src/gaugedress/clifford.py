"""Dirac algebra in the standard (Dirac) representation.

Conventions
-----------
* Metric ``g = diag(+1, -1, -1, -1)``.
* ``gamma^0 = diag(I, -I)``, ``gamma^i = [[0, s_i], [-s_i, 0]]`` with ``s_i`` the
  Pauli matrices.
* ``gamma5 = i gamma^0 gamma^1 gamma^2 gamma^3``, which in this basis is
  ``[[0, I], [I, 0]]``.
* Dirac conjugate ``ubar = u^dagger gamma^0``.
* Charge conjugate ``u^c = C u*`` with ``C = i gamma^2``.  With this phase
  ``(u^c)^c = u``.

All spinor arguments are arrays whose last axis has length 4; leading axes
are broadcast.  Vector-valued bilinears are returned with the Lorentz index
on the *last* axis and upper (contravariant) placement.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "METRIC",
    "GAMMA",
    "GAMMA5",
    "GAMMA0",
    "CHARGE_CONJ",
    "IDENTITY",
    "P_PLUS",
    "P_MINUS",
    "Bilinears",
    "mdot",
    "lower",
    "slash",
    "dirac_conjugate",
    "charge_conjugate",
    "bar_dot",
    "bilinear",
]

IDENTITY = np.eye(4, dtype=complex)
METRIC = np.diag([1.0, -1.0, -1.0, -1.0])

_PAULI = np.array(
    [
        [[0, 1], [1, 0]],
        [[0, -1j], [1j, 0]],
        [[1, 0], [0, -1]],
    ],
    dtype=complex,
)


def _build_gammas() -> np.ndarray:
    g = np.zeros((4, 4, 4), dtype=complex)
    i2 = np.eye(2)
    z2 = np.zeros((2, 2))
    g[0] = np.block([[i2, z2], [z2, -i2]])
    for i in range(3):
        g[i + 1] = np.block([[z2, _PAULI[i]], [-_PAULI[i], z2]])
    return g


GAMMA = _build_gammas()
GAMMA.setflags(write=False)
GAMMA0 = GAMMA[0]
GAMMA5 = 1j * GAMMA[0] @ GAMMA[1] @ GAMMA[2] @ GAMMA[3]
GAMMA5.setflags(write=False)
CHARGE_CONJ = 1j * GAMMA[2]
CHARGE_CONJ.setflags(write=False)
P_PLUS = 0.5 * (IDENTITY + GAMMA5)
P_MINUS = 0.5 * (IDENTITY - GAMMA5)


def mdot(a, b):
    """Minkowski product over the last axis, ``a^mu g_{mu nu} b^nu``."""
    a = np.asarray(a)
    b = np.asarray(b)
    return a[..., 0] * b[..., 0] - a[..., 1] * b[..., 1] - a[..., 2] * b[..., 2] - a[..., 3] * b[..., 3]


def lower(v):
    """Lower (or raise) a Lorentz index on the last axis."""
    v = np.asarray(v)
    return v * np.array([1.0, -1.0, -1.0, -1.0])


def slash(p) -> np.ndarray:
    """``p_mu gamma^mu`` for a contravariant vector ``p`` (last axis 4)."""
    p = np.asarray(p)
    pl = lower(p)
    return np.einsum("...m,mab->...ab", pl.astype(complex), GAMMA)


def dirac_conjugate(u):
    """Row spinor ``u^dagger gamma^0`` (returned with the same shape)."""
    u = np.asarray(u)
    return np.conj(u) * np.array([1.0, 1.0, -1.0, -1.0])


def charge_conjugate(u):
    """``C u*`` with ``C = i gamma^2``."""
    u = np.asarray(u)
    return np.einsum("ab,...b->...a", CHARGE_CONJ, np.conj(u))


def bar_dot(u, m, v):
    """``ubar M v`` for spinors ``u``, ``v`` and a 4x4 matrix ``M``."""
    ub = dirac_conjugate(u)
    return np.einsum("...a,ab,...b->...", ub, m, v)


@dataclass(frozen=True)
class Bilinears:
    """Bilinear covariants of a spinor (or of a spinor pair).

    For a single spinor ``sigma`` and ``omega`` are real and ``J``, ``Z``,
    ``X``, ``Y`` are real contravariant 4-vectors (last axis).  For a pair
    ``(u, v)`` the same names hold the complex mixed bilinears
    ``ubar v``, ``ubar i g5 v``, ``ubar g^mu v``, ``ubar g5 g^mu v`` and the
    real and imaginary parts of ``ubar g^mu v^c``.
    """

    sigma: np.ndarray
    omega: np.ndarray
    J: np.ndarray
    Z: np.ndarray
    X: np.ndarray
    Y: np.ndarray


def bilinear(u, v=None) -> Bilinears:
    """Compute the bilinear covariants.

    Parameters
    ----------
    u : array_like, shape (..., 4)
    v : array_like, shape (..., 4), optional
        Second spinor; defaults to ``u``.

    Returns
    -------
    Bilinears
    """
    u = np.asarray(u, dtype=complex)
    single = v is None
    v = u if single else np.asarray(v, dtype=complex)
    ub = dirac_conjugate(u)
    sigma = np.einsum("...a,...a->...", ub, v)
    omega = np.einsum("...a,ab,...b->...", ub, 1j * GAMMA5, v)
    J = np.einsum("...a,mab,...b->...m", ub, GAMMA, v)
    Z = np.einsum("...a,mab,...b->...m", ub, np.einsum("ab,mbc->mac", GAMMA5, GAMMA), v)
    vc = charge_conjugate(v)
    W = np.einsum("...a,mab,...b->...m", ub, GAMMA, vc)
    if single:
        return Bilinears(sigma.real, omega.real, J.real, Z.real, W.real, W.imag)
    return Bilinears(sigma, omega, J, Z, W.real, W.imag)
