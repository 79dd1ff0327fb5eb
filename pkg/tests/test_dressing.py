import numpy as np
import pytest
from numpy.testing import assert_allclose

from gaugedress.clifford import bilinear
from gaugedress.connection import ConnectionSpec, connection_u
from gaugedress.dressing import DressedField, dress, dress_chiral, dress_series, series_term_norms
from gaugedress.fields import RandomGaugeFunction, chiral_gauge_transform, fourier, gauge_transform
from gaugedress.propagator import XiKernel, damped_divergence


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


# the envelope must decay inside the box or the periodic derivatives see a jump
THETA = RandomGaugeFunction(21, amplitude=0.8, correlation_length=3.0, width=1.5)


@pytest.fixture(scope="module")
def dressed_up(up32):
    return dress(up32)


@pytest.mark.parametrize(
    "kernel,tol",
    [(XiKernel.grad_retarded(), 1e-9), (XiKernel.affine(0.4), 1e-9), (XiKernel.steinmann((1, 0, 0, 0)), 1e-3)],
    ids=["retarded", "affine", "steinmann"],
)
def test_dressing_is_gauge_invariant(up32, kernel, tol):
    a = dress(up32, kernel).values()
    b = dress(gauge_transform(up32, THETA), kernel).values()
    assert rel(b, a) < tol


def test_undressed_field_is_not_invariant(up32):
    a = up32.values()
    b = gauge_transform(up32, THETA).values()
    assert rel(b, a) > 0.1


def test_rescaled_connection_breaks_invariance(up32):
    a = dress(up32, scale=0.5).values()
    b = dress(gauge_transform(up32, THETA), scale=0.5).values()
    assert rel(b, a) > 1e-2


def test_dressing_preserves_modulus_and_bilinears(up32, dressed_up):
    v0, v1 = up32.values(), dressed_up.values()
    assert_allclose(np.abs(v1), np.abs(v0), rtol=1e-13, atol=0)
    a, b = bilinear(v0), bilinear(v1)
    s = np.max(np.abs(a.J))
    for name in ("sigma", "omega", "J", "Z"):
        assert np.max(np.abs(getattr(b, name) - getattr(a, name))) < 1e-12 * s


def test_dressing_removes_divergence(dressed_up):
    # what is left comes from cutting the padded time axis back to the lattice
    u0 = dressed_up.connection
    before = np.linalg.norm(damped_divergence(u0))
    after = np.linalg.norm(damped_divergence(connection_u(dressed_up)))
    assert after < 1e-2 * before
    assert after < 5e-3 * np.linalg.norm(u0.data)


def test_dressing_is_idempotent(dressed_up):
    again = dress(dressed_up).values()
    assert rel(again, dressed_up.values()) < 1e-4


def test_provenance(dressed_up):
    assert isinstance(dressed_up, DressedField)
    p = dressed_up.provenance.to_dict()
    assert p["kernel"]["variant"] == "grad_retarded"
    assert p["connection"]["kind"] == "principal"
    assert p["scale"] == 1.0
    assert p["imag_residue"] == 0.0


def test_chiral_dressing_invariant(mixed32):
    t2 = RandomGaugeFunction(22, amplitude=0.4, correlation_length=3.0, width=1.5)
    a = dress_chiral(mixed32).values()
    b = dress_chiral(chiral_gauge_transform(mixed32, THETA, t2)).values()
    assert rel(b, a) < 1e-9


def test_chiral_spec_dispatch(mixed32):
    a = dress(mixed32, connection=ConnectionSpec("chiral"))
    assert a.phase5 is not None
    assert_allclose(a.values(), dress_chiral(mixed32).values())


def test_series_order_zero_is_plain_transform(up32):
    assert_allclose(dress_series(up32, 0), fourier(up32.values(), up32.lattice))


def test_series_converges_to_dressed_transform(up32):
    s = 0.02
    target = fourier(dress(up32, scale=s).values(), up32.lattice)
    sums = dress_series(up32, 4, scale=s, partial_sums=True)
    errs = [rel(x, target) for x in sums]
    assert all(b < a for a, b in zip(errs, errs[1:]))
    assert errs[-1] < 1e-8


def test_series_term_norms_decay(up32):
    norms = series_term_norms(up32, 3, scale=0.05)
    assert len(norms) == 3
    assert norms[0] > norms[1] > norms[2]


@pytest.mark.parametrize("order", [-1, 7])
def test_series_order_bounds(up32, order):
    with pytest.raises(ValueError):
        dress_series(up32, order)


def test_series_needs_retarded_kernel(up32):
    with pytest.raises(ValueError, match="retarded"):
        dress_series(up32, 2, kernel=XiKernel.grad_advanced())
