import numpy as np
import pytest
from numpy.testing import assert_allclose

from gaugedress.fields import VectorField
from gaugedress.lattice import Lattice
from gaugedress.propagator import (
    GaussianTestFunction,
    KernelError,
    XiKernel,
    apply_xi,
    weak_divergence_check,
    xi_phase,
)

ALL_KERNELS = [
    XiKernel.grad_retarded(),
    XiKernel.grad_advanced(),
    XiKernel.affine(0.3),
    XiKernel.steinmann((1, 0, 0, 0)),
    XiKernel.steinmann((1, 0, 0.3, 0.2j)),
    XiKernel.steinmann_prime((1, 0, 0.3, 0.2j)),
    XiKernel.spatial(),
    XiKernel.spatial((1, 0.2, 0, 0)),
]

# max |Xi * d theta - theta| at 32^4 with a width-1.5 Gaussian theta
EXACTNESS_TOL = [1e-7, 1e-7, 1e-7, 1e-3, 1e-2, 1e-2, 2e-2, 0.1]


@pytest.fixture(scope="module")
def gradient_pair(lat32):
    tf = GaussianTestFunction((0, 0.5, 0, -0.3), 1.5)
    x = lat32.coords()
    theta = np.broadcast_to(tf.value(x), lat32.shape)
    u = np.stack([np.broadcast_to(g, lat32.shape) for g in tf.gradient(x)])
    return theta, VectorField(lat32, np.ascontiguousarray(u))


@pytest.mark.parametrize("kernel,tol", list(zip(ALL_KERNELS, EXACTNESS_TOL)), ids=lambda k: getattr(k, "variant", ""))
def test_kernel_inverts_gradient(gradient_pair, kernel, tol):
    theta, u = gradient_pair
    assert np.max(np.abs(apply_xi(kernel, u) - theta)) < tol


def test_kernel_is_linear(lat16, rng):
    a = VectorField(lat16, rng.normal(size=(4,) + lat16.shape))
    b = VectorField(lat16, rng.normal(size=(4,) + lat16.shape))
    for k in (XiKernel.grad_retarded(), XiKernel.steinmann((1, 0, 0.3, 0)), XiKernel.spatial()):
        lhs = apply_xi(k, VectorField(lat16, 2.0 * a.data - 0.5 * b.data))
        rhs = 2.0 * apply_xi(k, a) - 0.5 * apply_xi(k, b)
        assert_allclose(lhs, rhs, atol=1e-10 * np.max(np.abs(rhs)))


def test_retarded_phase_is_causal(lat16):
    # a source localised at late times leaves early times untouched;
    # the source is smooth in t so spectral ringing stays below its own tail
    t = lat16.axis(0)
    pulse = np.exp(-0.5 * ((t - 4.0) / 1.5) ** 2)
    data = np.zeros((4,) + lat16.shape)
    data[0] = pulse[:, None, None, None]
    phi = apply_xi(XiKernel.grad_retarded(), VectorField(lat16, data))
    late = np.max(np.abs(phi[t > 0]))
    assert np.max(np.abs(phi[t < -3])) < 1e-4 * late
    adv = apply_xi(XiKernel.grad_advanced(), VectorField(lat16, data))
    assert np.max(np.abs(adv[t < -3])) > 0.1 * late


def test_ray_kernel_sees_one_side(lat16):
    # for the unit rest spinor zhat = -e_z, so only sites at larger z see the slab;
    # the end-point stencil reaches two cells upstream
    data = np.zeros((4,) + lat16.shape)
    data[3, :, :, :, 10] = 1.0
    phi = apply_xi(XiKernel.steinmann((1, 0, 0, 0)), VectorField(lat16, data))
    assert np.all(phi[..., :8] == 0)
    assert_allclose(phi[..., 13:], 1.0, atol=1e-12)


@pytest.mark.parametrize(
    "make",
    [
        lambda: XiKernel.affine(0.2, weights=(0.5, 0.6)),
        lambda: XiKernel("unknown"),
        lambda: XiKernel.grad_retarded(damping=0.0),
        lambda: XiKernel.grad_retarded(damping=float("nan")),
        lambda: XiKernel.steinmann((1, 0, 1, 0)),
        lambda: XiKernel.steinmann((1, 0, 0)),
        lambda: XiKernel("steinmann"),
        lambda: XiKernel.spatial((0, 1, 0, 0)),
        lambda: XiKernel.spatial((1, 1, 0, 0)),
    ],
)
def test_inadmissible_kernels_rejected(make):
    with pytest.raises(KernelError):
        make()


def test_improper_affine_allowed_on_request():
    k = XiKernel.affine(0.2, weights=(0.5, 0.6), allow_improper=True)
    assert k.weights == (0.5, 0.6)


def test_spatial_direction_normalised():
    k = XiKernel.spatial((-2, 0, 0, 0))
    assert k.direction == (1.0, 0.0, 0.0, 0.0)


@pytest.mark.parametrize("kernel", ALL_KERNELS + [XiKernel.affine(0.2, weights=(2, 3), allow_improper=True)],
                         ids=lambda k: k.variant)
def test_kernel_dict_round_trip(kernel):
    assert XiKernel.from_dict(kernel.to_dict()) == kernel


def test_affine_from_lambda():
    assert XiKernel.from_dict({"variant": "affine", "lambda": 0.25}).weights == (0.25, 0.75)


def test_tetrad_is_orthonormal():
    from gaugedress.clifford import mdot

    jhat, zhat, (ws, wo) = XiKernel.steinmann((0.3, 1j, 0.2, 0.5)).tetrad()
    assert_allclose([mdot(jhat, jhat), mdot(zhat, zhat), mdot(jhat, zhat)], [1, -1, 0], atol=1e-12)
    assert_allclose(ws + wo, 1.0)


def test_test_function_gradient():
    f = GaussianTestFunction((0.1, 0.2, 0.3, 0.4), 1.3)
    x = [np.array([0.5]), np.array([-0.2]), np.array([0.7]), np.array([0.0])]
    g = f.gradient(x)
    h = 1e-6
    for a in range(4):
        xp = [c + (h if b == a else 0) for b, c in enumerate(x)]
        xm = [c - (h if b == a else 0) for b, c in enumerate(x)]
        assert_allclose(g[a], (f.value(xp) - f.value(xm)) / (2 * h), rtol=1e-8)


def test_weak_divergence_small_lattice(lat16):
    # exact value is -f(0) = -1
    v = weak_divergence_check(XiKernel.grad_retarded(), GaussianTestFunction(width=2.0), lat16)
    assert abs(v + 1) < 1e-2


def test_weak_divergence_needs_site_at_origin():
    lat = Lattice((16, 16, 16, 16), (1.0,) * 4, (-7.5, -8, -8, -8))
    with pytest.raises(ValueError, match="origin"):
        weak_divergence_check(XiKernel.grad_retarded(), lattice=lat)
    with pytest.raises(ValueError):
        weak_divergence_check(XiKernel.grad_retarded())


def test_measure_kernel_gradient_matches_phase(lat16, rng):
    u = VectorField(lat16, rng.normal(size=(4,) + lat16.shape))
    phi, g = xi_phase(XiKernel.spatial(), u)
    assert g.shape == (4,) + lat16.shape
    assert_allclose(phi, apply_xi(XiKernel.spatial(), u))
