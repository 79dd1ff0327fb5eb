"""Gauge-invariant dressing ``U_u = exp(i phi) U`` with ``phi = Xi * u[U]``.

Under ``U -> exp(-i theta) U`` the connection shifts by ``d theta`` and,
because every admissible kernel reproduces a gradient, ``phi`` shifts by
``theta``; the two phases cancel.  The dressed field is a
:class:`~gaugedress.fields.PhasedField`, so its derivative samples stay
exact and it can be dressed again (idempotence) or fed to the inner
products of :mod:`gaugedress.vev`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .connection import ConnectionSpec, chiral_connections, compute_connection
from .fields import PhasedField, SpinorField, VectorField, fourier
from .propagator import XiKernel, xi_phase

__all__ = ["Provenance", "DressedField", "dress", "dress_chiral", "dress_series", "series_term_norms", "MAX_SERIES_ORDER"]

MAX_SERIES_ORDER = 6


@dataclass(frozen=True)
class Provenance:
    """How a dressed field was made."""

    connection: dict
    kernel: dict
    scale: float = 1.0
    imag_residue: float = 0.0

    def to_dict(self) -> dict:
        return {
            "connection": self.connection, "kernel": self.kernel,
            "scale": self.scale, "imag_residue": self.imag_residue,
        }


class DressedField(PhasedField):
    """Dressed spinor field carrying its phase and a provenance record."""

    def __init__(
        self, base: SpinorField, phi, grad_phi, provenance: Provenance,
        phi5=None, grad_phi5=None, connection: VectorField | None = None,
    ):
        super().__init__(base, phi, grad_phi, phi5, grad_phi5)
        self.phase = np.asarray(phi, dtype=float)
        self.phase5 = None if phi5 is None else np.asarray(phi5, dtype=float)
        self.provenance = provenance
        #: connection of the undressed field (the chiral average for chiral dressing)
        self.connection = connection


def _real_phase(phi):
    # Xi and u are real, so any imaginary part is numerical residue
    phi = np.asarray(phi)
    if np.iscomplexobj(phi):
        return np.ascontiguousarray(phi.real), float(np.max(np.abs(phi.imag)))
    return phi, 0.0


def dress(
    field: SpinorField,
    kernel: XiKernel | None = None,
    connection: ConnectionSpec | None = None,
    scale: float = 1.0,
    method: str = "auto",
) -> DressedField:
    """Return ``U_u = exp(i Xi * u[U]) U``.

    Parameters
    ----------
    field : SpinorField
    kernel : XiKernel, optional
        Defaults to the retarded gradient kernel.
    connection : ConnectionSpec, optional
        Principal connection by default.  A chiral spec dispatches to
        :func:`dress_chiral` with ``kernel`` for both chiralities.
    scale : float
        Multiplies the connection before the kernel is applied.  Values other
        than one break gauge invariance and exist for perturbative studies.
    method : str
        Passed to the connection constructor.
    """
    kernel = kernel or XiKernel.grad_retarded()
    connection = connection or ConnectionSpec()
    if connection.kind == "chiral":
        return dress_chiral(field, (kernel, kernel), scale=scale, method=method)
    u = compute_connection(field, connection, method)
    if scale != 1.0:
        u = u.scaled(scale)
    phi, grad = xi_phase(kernel, u, gradient=True)
    phi, res = _real_phase(phi)
    prov = Provenance(connection.to_dict(), kernel.to_dict(), float(scale), res)
    return DressedField(field, phi, grad, prov, connection=u)


def dress_chiral(
    field: SpinorField,
    kernels: tuple | None = None,
    scale: float = 1.0,
    method: str = "auto",
) -> DressedField:
    """Chiral dressing ``exp(i (phi_+ P_+ + phi_- P_-)) U``.

    ``phi_pm = Xi_pm * u_pm`` with ``P_pm = (1 pm gamma5) / 2``.  The result
    is invariant under ``U -> exp(-i (theta1 + gamma5 theta2)) U``.
    """
    kp, km = kernels or (XiKernel.grad_retarded(), XiKernel.grad_retarded())
    up, um = chiral_connections(field, method)
    if scale != 1.0:
        up, um = up.scaled(scale), um.scaled(scale)
    pp, gp = xi_phase(kp, up, gradient=True)
    pm, gm = xi_phase(km, um, gradient=True)
    pp, r1 = _real_phase(pp)
    pm, r2 = _real_phase(pm)
    prov = Provenance(
        ConnectionSpec("chiral").to_dict(),
        {"plus": kp.to_dict(), "minus": km.to_dict()},
        float(scale),
        max(r1, r2),
    )
    avg = VectorField(field.lattice, 0.5 * (up.data + um.data))
    return DressedField(
        field, 0.5 * (pp + pm), 0.5 * (gp + gm), prov, 0.5 * (pp - pm), 0.5 * (gp - gm), connection=avg
    )


def dress_series(
    field: SpinorField,
    order: int,
    kernel: XiKernel | None = None,
    connection: ConnectionSpec | None = None,
    scale: float = 1.0,
    partial_sums: bool = False,
    max_order: int = MAX_SERIES_ORDER,
):
    """Momentum-space partial sums of the dressing series.

    The ``n``-th term is ``(i^n / n!)`` times the ``n``-fold convolution of
    ``U~`` with ``G~_ret(k) k^mu u~_mu(k)``.  On the periodic lattice a
    convolution of transforms is the transform of a pointwise product, so
    the terms are accumulated as ``U (i phi)^n / n!`` in position space and
    transformed once.

    Parameters
    ----------
    order : int
        Highest order kept, ``0 <= order <= max_order``.
    partial_sums : bool
        If true, return the list of all partial sums ``0..order``.

    Returns
    -------
    ndarray or list of ndarray
        Arrays indexed like :func:`gaugedress.fields.fourier`.
    """
    if not 0 <= int(order) <= max_order:
        raise ValueError(f"series order must lie in [0, {max_order}]")
    kernel = kernel or XiKernel.grad_retarded()
    if kernel.variant != "grad_retarded":
        raise ValueError("the dressing series is defined for the retarded kernel")
    U = field.values()
    if order == 0:
        out = fourier(U, field.lattice)
        return [out] if partial_sums else out
    u = compute_connection(field, connection or ConnectionSpec())
    if scale != 1.0:
        u = u.scaled(scale)
    phi, _ = xi_phase(kernel, u, gradient=False)
    iphi = (1j * phi)[..., None]
    acc = U.astype(complex)
    term = U.astype(complex)
    sums = [fourier(acc, field.lattice)] if partial_sums else None
    for n in range(1, int(order) + 1):
        term = term * iphi / n
        acc = acc + term
        if partial_sums:
            sums.append(fourier(acc, field.lattice))
    if partial_sums:
        return sums
    return fourier(acc, field.lattice)


def series_term_norms(field: SpinorField, order: int, **kw) -> list:
    """Norms of successive partial-sum differences (a convergence report)."""
    sums = dress_series(field, order, partial_sums=True, **kw)
    return [float(np.linalg.norm(b - a)) for a, b in zip(sums[:-1], sums[1:])]

