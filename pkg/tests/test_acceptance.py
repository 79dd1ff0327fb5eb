"""Acceptance checks, one test group per numbered criterion.

Each test is tagged ``criterion(n)``; the terminal summary prints one
pass/fail line per criterion.  Tests on 48^4 and 64^4 lattices are tagged
``slow``.
"""

import json
import os
import subprocess
import sys

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from gaugedress.clifford import GAMMA, GAMMA5, IDENTITY, METRIC, bilinear, charge_conjugate, dirac_conjugate, mdot
from gaugedress.cli import gauge_check
from gaugedress.config import load_config
from gaugedress.connection import (
    connection_u,
    curvature,
    divergence,
    ffexample_reference,
    interior_deviation,
    interior_mask,
)
from gaugedress.dressing import dress, dress_series
from gaugedress.fields import (
    AnsatzTerm,
    GaussianBivector,
    GaussianEnvelope,
    NoRegulator,
    RandomGaugeFunction,
    ffexample_terms,
    fourier,
    gauge_transform,
    sample_ansatz,
)
from gaugedress.lattice import Lattice
from gaugedress.propagator import GaussianTestFunction, XiKernel, weak_divergence_check
from gaugedress.vev import (
    MaxwellShell,
    ModelParams,
    anticommutator,
    free_determinant,
    ip_maxwell,
    ip_shell,
    prepare,
    prob_1to2,
    prob_2to2,
    prob_annihilate,
    vev2_xi,
    vev3,
    vev4,
)
from conftest import CONFIGS, ROOT, single_term
from oracles import maxwell_oracle, shell_oracle

crit = pytest.mark.criterion
slow = pytest.mark.slow

N_SPINORS = 10_000


@pytest.fixture(scope="module")
def spinors():
    rng = np.random.default_rng(1)
    shape = (3, N_SPINORS, 4)
    return rng.normal(size=shape) + 1j * rng.normal(size=shape)


# ---------------------------------------------------------------------------
# 1. algebra
# ---------------------------------------------------------------------------


@crit(1)
def test_c1_clifford_relations_exact():
    for m in range(4):
        for n in range(4):
            assert_array_equal(GAMMA[m] @ GAMMA[n] + GAMMA[n] @ GAMMA[m], 2 * METRIC[m, n] * IDENTITY)
    assert_array_equal(GAMMA5, 1j * GAMMA[0] @ GAMMA[1] @ GAMMA[2] @ GAMMA[3])
    assert_array_equal(GAMMA5 @ GAMMA5, IDENTITY)
    for m in range(4):
        assert_array_equal(GAMMA5 @ GAMMA[m] + GAMMA[m] @ GAMMA5, np.zeros((4, 4)))


@crit(1)
def test_c1_charge_conjugation_identities(spinors, record_property):
    A, B = spinors[0], spinors[1]
    Ac, Bc = charge_conjugate(A), charge_conjugate(B)
    lhs_v = np.einsum("na,mab,nb->nm", dirac_conjugate(Ac), GAMMA, Bc)
    rhs_v = np.einsum("na,mab,nb->nm", dirac_conjugate(B), GAMMA, A)
    lhs_s = np.einsum("na,na->n", dirac_conjugate(Ac), Bc)
    rhs_s = -np.einsum("na,na->n", dirac_conjugate(B), A)
    scale = np.linalg.norm(A, axis=1) * np.linalg.norm(B, axis=1)
    ev = np.max(np.abs(lhs_v - rhs_v).max(axis=1) / scale)
    es = np.max(np.abs(lhs_s - rhs_s) / scale)
    record_property("detail", f"vector {ev:.1e}, scalar {es:.1e}")
    assert ev <= 1e-12 and es <= 1e-12


@crit(1)
def test_c1_fierz_identities(spinors, record_property):
    U, W = spinors[0], spinors[2]
    b = bilinear(U)
    scale = np.sum(np.abs(U) ** 2, axis=1) ** 2
    e1 = np.max(np.abs(mdot(b.J, b.J) - (b.sigma**2 + b.omega**2)) / scale)
    # J^mu (Ubar g_mu W) = (Ubar U)(Ubar W) + (Ubar i g5 U)(Ubar i g5 W) for any W
    m = bilinear(U, W)
    lhs = mdot(b.J, m.J)
    rhs = b.sigma * m.sigma + b.omega * m.omega
    scale2 = scale * np.linalg.norm(W, axis=1) / np.linalg.norm(U, axis=1)
    e2 = np.max(np.abs(lhs - rhs) / scale2)
    record_property("detail", f"scalar {e1:.1e}, derivative {e2:.1e}")
    assert e1 <= 1e-12 and e2 <= 1e-12


# ---------------------------------------------------------------------------
# 2. tetrad
# ---------------------------------------------------------------------------


@crit(2)
def test_c2_tetrad(spinors, record_property):
    b = bilinear(spinors[0])
    n = b.sigma**2 + b.omega**2
    scale = np.sum(np.abs(spinors[0]) ** 2, axis=1) ** 2
    vecs = {"J": b.J, "Z": b.Z, "X": b.X, "Y": b.Y}
    signs = {"J": 1, "Z": -1, "X": -1, "Y": -1}
    worst = 0.0
    for k, v in vecs.items():
        worst = max(worst, np.max(np.abs(mdot(v, v) - signs[k] * n) / scale))
    names = list(vecs)
    for i in range(4):
        for j in range(i + 1, 4):
            worst = max(worst, np.max(np.abs(mdot(vecs[names[i]], vecs[names[j]])) / scale))
    record_property("detail", f"max relative {worst:.1e}")
    assert worst <= 1e-12


# ---------------------------------------------------------------------------
# 3. closed-form connection
# ---------------------------------------------------------------------------


def single_term_fd4_deviation(n):
    lat = Lattice.cubic(n, 20.0)
    f = sample_ansatz([single_term()], lat)
    mask = interior_mask(lat, 2.0)
    return interior_deviation(connection_u(f, method="fd4").data, connection_u(f).data, mask)


@slow
@crit(3)
def test_c3_single_term_fd4_order(record_property):
    e32, e48 = single_term_fd4_deviation(32), single_term_fd4_deviation(48)
    order = np.log(e32 / e48) / np.log(48 / 32)
    record_property("detail", f"deviation {e32:.2e} -> {e48:.2e}, order {order:.2f}")
    assert order >= 3.5


def ffexample_deviations(n):
    lat = Lattice.cubic(n, 20.0)
    f = sample_ansatz(ffexample_terms(), lat)
    mask = interior_mask(lat, 2.0)
    u = connection_u(f)
    ref_u, ref_f = ffexample_reference(lat)
    du = interior_deviation(u.data, ref_u.data, mask)
    df = interior_deviation(curvature(u).data, ref_f.data, mask)
    return du, df


@pytest.fixture(scope="module")
def ff_deviations():
    return {32: ffexample_deviations(32), 48: ffexample_deviations(48)}


@slow
@crit(3)
def test_c3_ffexample_connection(ff_deviations, record_property):
    a, b = ff_deviations[32][0], ff_deviations[48][0]
    record_property("detail", f"u deviation {a:.2e} (32), {b:.2e} (48)")
    assert a <= 0.02
    assert b < a


@slow
@crit(3)
def test_c3_ffexample_curvature(ff_deviations, record_property):
    a, b = ff_deviations[32][1], ff_deviations[48][1]
    record_property("detail", f"du deviation {a:.2e} (32), {b:.2e} (48)")
    assert a <= 0.05
    assert b < a


# ---------------------------------------------------------------------------
# 4. gauge invariance
# ---------------------------------------------------------------------------


@crit(4)
def test_c4_gauge_invariance_all_vevs(record_property):
    cfg = load_config(CONFIGS / "invariance.json")
    kinds = {t.kind for t in cfg.tasks}
    processes = {t.options.get("process") for t in cfg.tasks if t.kind == "prob"}
    psi = any(t.kind == "vev2" and t.options["field"] == "psi" for t in cfg.tasks)
    assert {"vev2", "vev3", "vev4", "prob"} <= kinds and psi
    assert processes == {"2to2", "1to2", "annihilate"}
    rep = gauge_check(cfg, 10)
    worst = max(r["max_relative_deviation"] for r in rep["tasks"].values() if np.isfinite(r["max_relative_deviation"]))
    record_property("detail", f"10 samples, worst relative deviation {worst:.1e}")
    assert rep["pass"], rep["tasks"]


def lattice_gradient_deviation(n, seeds):
    # the finite-difference gauge gradient leaves a resolution-dependent residue
    lat = Lattice.cubic(n, 20.0)
    f = sample_ansatz(ffexample_terms(), lat)
    P = ModelParams(m=1.0, lam=0.5)
    pf = prepare(f, P, curvature=False)
    ref = vev2_xi(pf, pf, P)
    devs = []
    for s in seeds:
        th = RandomGaugeFunction(s, amplitude=0.5, correlation_length=4.0, width=2.0)
        pg = prepare(gauge_transform(f, th, gradient="lattice"), P, curvature=False)
        devs.append(abs(vev2_xi(pg, pf, P).value - ref.value) / abs(ref.value))
    return max(devs)


@slow
@crit(4)
def test_c4_deviation_shrinks_under_refinement(record_property):
    seeds = (0, 1)
    d32 = lattice_gradient_deviation(32, seeds)
    d64 = lattice_gradient_deviation(64, seeds)
    record_property("detail", f"lattice-gradient deviation {d32:.2e} -> {d64:.2e} ({d32 / d64:.1f}x)")
    assert d64 * 3 <= d32


# ---------------------------------------------------------------------------
# 5. weak divergence
# ---------------------------------------------------------------------------

KERNELS_5 = {
    "grad_retarded": (XiKernel.grad_retarded(), 0.01, 0.003),
    "steinmann": (XiKernel.steinmann((1, 0, 0, 0)), 0.02, 0.007),
    "steinmann_tilted": (XiKernel.steinmann((1, 0, 0.3, 0.2j)), 0.02, 0.007),
    "spatial": (XiKernel.spatial(), 0.02, 0.007),
}


@crit(5)
@pytest.mark.parametrize("name", list(KERNELS_5))
def test_c5_weak_divergence_32(name, record_property):
    kernel, tol, _ = KERNELS_5[name]
    f = GaussianTestFunction((0, 0, 0, 0), 2.0)
    w = weak_divergence_check(kernel, f, Lattice.cubic(32, 20.0))
    record_property("detail", f"{name} error {abs(w + 1):.1e}")
    assert abs(w + 1) <= tol


@slow
@crit(5)
@pytest.mark.parametrize("name", list(KERNELS_5))
def test_c5_weak_divergence_64(name, record_property):
    kernel, _, tol = KERNELS_5[name]
    f = GaussianTestFunction((0, 0, 0, 0), 2.0)
    w = weak_divergence_check(kernel, f, Lattice.cubic(64, 20.0))
    record_property("detail", f"{name} error {abs(w + 1):.1e}")
    assert abs(w + 1) <= tol


# ---------------------------------------------------------------------------
# 6. idempotence
# ---------------------------------------------------------------------------


def idempotence(n):
    lat = Lattice.cubic(n, 20.0)
    f = sample_ansatz(ffexample_terms(), lat)
    d = dress(f)
    d2 = dress(d)
    # slab-wise norms keep 64^4 within memory
    num = den = 0.0
    for (_, _, v, _), (_, _, v2, _) in zip(d.iter_slabs(), d2.iter_slabs()):
        num += float(np.sum(np.abs(v2 - v) ** 2))
        den += float(np.sum(np.abs(v) ** 2))
    idem = np.sqrt(num / den)
    # d.connection is u[U] and d2.connection is u[U_u]
    div = np.linalg.norm(divergence(d2.connection, open_time=True)) / np.linalg.norm(d.connection.data)
    return idem, div


@crit(6)
def test_c6_idempotence_32(record_property):
    idem, div = idempotence(32)
    record_property("detail", f"idempotence {idem:.1e}, divergence {div:.1e}")
    assert idem <= 1e-2 and div <= 1e-2


@slow
@crit(6)
def test_c6_idempotence_64(record_property):
    idem, div = idempotence(64)
    record_property("detail", f"idempotence {idem:.1e}, divergence {div:.1e}")
    assert idem <= 2.5e-3 and div <= 2.5e-3


# ---------------------------------------------------------------------------
# 7. inner-product oracles
# ---------------------------------------------------------------------------

L7, N7 = 20.0, 32

PAIRS_7 = {
    "rest": ([((0, 0, 0, 0), 1.5, (1.2, 0.3, 0, 0), (1, 0, 0, 0))],) * 2,
    "negative": ([((0, 0, 0, 0), 1.5, (-1.2, 0.3, 0, 0), (0, 0, 1, 0))],) * 2,
    "offset": (
        [((0, 0, 0, 0), 1.5, (1.2, 0.3, 0, 0), (1, 0, 0, 0))],
        [((0.3, 0, 0.2, 0), 1.3, (1.1, 0, 0.2, 0), (0.5, 0.5j, 0.1, 0))],
    ),
    "two-packet": (
        [((0, 0, 0, 0), 1.5, (1.2, 0.3, 0, 0), (1, 0, 0, 0)), ((0.2, 0.3, 0, 0), 1.4, (-1.1, 0, 0.3, 0), (0, 0.2, 1j, 0))],
        [((0, 0.1, 0, 0), 1.5, (1.0, 0.0, 0.3, 0), (0.3, 0, 0, 1))],
    ),
    "boosted": (
        [((0, 0, 0, 0.1), 1.5, (1.5, 0.6, 0.3, 0), (0.7, 0.1j, 0.3, 0.2))],
        [((0.1, 0, 0, 0), 1.5, (1.4, 0.5, 0.2, 0.1), (0.2, 0.9, 0, 0.4j))],
    ),
}

BIVECTORS_7 = {
    "b1": ((1, 0, 0, 0, 0, 0.5), (0, 0, 0, 0), 1.5, (1.0, 0.5, 0, 0)),
    "b2": ((0, 1, 0, 0.3, 0, 0), (0.2, 0, 0.1, 0), 1.4, (0.8, 0, 0.4, 0)),
}


def packets_field(packets, lat):
    return sample_ansatz([AnsatzTerm((GaussianEnvelope(c, w),), k, NoRegulator(), u) for c, w, k, u in packets], lat)


@pytest.fixture(scope="module")
def lat7():
    return Lattice.cubic(N7, L7)


@crit(7)
@pytest.mark.parametrize("pair", list(PAIRS_7))
def test_c7_shell_products_match_oracle(pair, lat7, record_property):
    pv, pu = PAIRS_7[pair]
    V, U = packets_field(pv, lat7), packets_field(pu, lat7)
    details = []
    for sign in (+1, -1):
        r = ip_shell(V, U, 1.0, sign)
        o, oe = shell_oracle(pv, pu, 1.0, sign, L7, N7)
        diff = abs(r.value - o)
        details.append(f"{'+' if sign > 0 else '-'}: {diff:.1e} <= {r.quad_error + oe:.1e}")
        assert diff <= r.quad_error + oe
    a = anticommutator(V, U, 1.0)
    op, e1 = shell_oracle(pv, pu, 1.0, +1, L7, N7)
    om, e2 = shell_oracle(pv, pu, 1.0, -1, L7, N7)
    diff = abs(a.value - (op + om))
    details.append(f"anticommutator {diff:.1e} <= {a.quad_error + e1 + e2:.1e}")
    record_property("detail", "; ".join(details))
    assert diff <= a.quad_error + e1 + e2


@crit(7)
@pytest.mark.parametrize("pair", [("b1", "b1"), ("b1", "b2"), ("b2", "b2")], ids="-".join)
def test_c7_maxwell_pairing_matches_oracle(pair, lat7, record_property):
    f, g = (BIVECTORS_7[p] for p in pair)
    r = ip_maxwell(GaussianBivector(*f).sample(lat7), GaussianBivector(*g).sample(lat7))
    o, oe = maxwell_oracle(f, g, L7, N7)
    diff = abs(r.value - o)
    record_property("detail", f"{diff:.1e} <= {r.quad_error + oe:.1e}")
    assert diff <= r.quad_error + oe


# ---------------------------------------------------------------------------
# 8. VEV structure
# ---------------------------------------------------------------------------

SPECS_8 = {
    "a": dict(k=(1.2, 0.3, 0.0, 0.0), spinor=(1, 0, 0, 0)),
    "b": dict(k=(1.1, 0.0, 0.2, 0.0), spinor=(0.5, 0.5j, 0.1, 0), center=(0.3, 0, 0.2, 0), width=1.3),
    "c": dict(k=(1.3, 0.2, 0.0, 0.3), spinor=(0.7, 0.1j, 0.3, 0.2), center=(0, 0, 0, 0.1)),
}
P8 = ModelParams(m=1.0, lam=0.5)
P8_FREE = ModelParams(m=1.0, lam=0.0)


@pytest.fixture(scope="module")
def fields8(lat32, ff32):
    out = {n: sample_ansatz([single_term(**s)], lat32) for n, s in SPECS_8.items()}
    out["ff"] = ff32
    return out


@pytest.fixture(scope="module")
def prepared8(fields8):
    return {n: prepare(f, P8, curvature=True, conjugate=True) for n, f in fields8.items()}


@crit(8)
def test_c8_free_vev4_is_determinant(fields8):
    args = (fields8["ff"], fields8["a"], fields8["b"], fields8["c"])
    r, d = vev4(*args, P8_FREE), free_determinant(*args, P8_FREE)
    assert r.value == d.value and r.quad_error == d.quad_error


@crit(8)
def test_c8_vev4_antisymmetry(prepared8, record_property):
    p = prepared8
    a = vev4(p["ff"], p["a"], p["b"], p["c"], P8)
    b = vev4(p["ff"], p["a"], p["c"], p["b"], P8)
    c = vev4(p["a"], p["ff"], p["b"], p["c"], P8)
    e = max(abs(a.value + b.value), abs(a.value + c.value)) / abs(a.value)
    record_property("detail", f"relative {e:.1e}")
    assert e <= 1e-12


@crit(8)
@pytest.mark.parametrize("name", ["ff", "b"])
def test_c8_repeated_argument(prepared8, name):
    p = prepared8[name]
    r = vev4(p, p, prepared8["a"], prepared8["c"], P8)
    assert abs(r.value) <= r.quad_error


@crit(8)
def test_c8_identical_states(prepared8):
    p = prepared8
    r = prob_2to2(p["ff"], p["b"], p["ff"], p["b"], P8)
    assert abs(r.value - 1) <= 1e-10


@crit(8)
@pytest.mark.parametrize("slot", range(4))
def test_c8_prob_2to2_rescaling(fields8, prepared8, slot, record_property):
    names = ["ff", "a", "b", "c"]
    base = prob_2to2(*(prepared8[n] for n in names), P8)
    args = [prepared8[n] for n in names]
    args[slot] = prepare(fields8[names[slot]].scaled(-2.7), P8)
    r = prob_2to2(*args, P8)
    e = abs(r.value - base.value) / abs(base.value)
    record_property("detail", f"relative {e:.1e}")
    assert e <= 1e-10


@crit(8)
@pytest.mark.parametrize("prob", [prob_1to2, prob_annihilate], ids=["1to2", "annihilate"])
@pytest.mark.parametrize("slot", ["U", "V", "f"])
def test_c8_em_probability_rescaling(fields8, prepared8, lat32, prob, slot, record_property):
    photon = MaxwellShell.from_bivector(GaussianBivector((1, 0, 0, 0, 0, 0.5), width=1.2, wavevector=(1.0, 0.5, 0, 0)).sample(lat32))
    args = {"U": prepared8["ff"], "V": prepared8["b"], "f": photon}
    base = prob(args["U"], args["V"], args["f"], P8)
    if slot == "f":
        args["f"] = photon.scaled(3.1)
    else:
        name = "ff" if slot == "U" else "b"
        args[slot] = prepare(fields8[name].scaled(0.4), P8, curvature=True, conjugate=True)
    r = prob(args["U"], args["V"], args["f"], P8)
    # both values are roundoff (the curvature pairing vanishes on the light cone),
    # so the bound is absolute, as for any probability
    d = abs(r.value - base.value)
    record_property("detail", f"|{base.value.real:.1e}| -> |{r.value.real:.1e}|, difference {d:.1e}")
    assert d <= 1e-10


# ---------------------------------------------------------------------------
# 9. series
# ---------------------------------------------------------------------------


@crit(9)
def test_c9_series_residual_is_third_order(ff32, record_property):
    def residual(scale):
        approx = dress_series(ff32, 2, scale=scale)
        full = fourier(dress(ff32, scale=scale).values(), ff32.lattice)
        return np.linalg.norm(approx - full) / np.linalg.norm(full)

    r1, r2 = residual(0.01), residual(0.005)
    exponent = np.log2(r1 / r2)
    record_property("detail", f"residual {r1:.2e} -> {r2:.2e}, exponent {exponent:.3f}")
    assert abs(exponent - 3) <= 0.3


# ---------------------------------------------------------------------------
# 10. single-component electromagnetic triviality
# ---------------------------------------------------------------------------


@crit(10)
@pytest.mark.parametrize("pair", [("a", "b"), ("b", "c"), ("c", "a")], ids="-".join)
@pytest.mark.parametrize("photon", ["gaussian", "curvature"])
def test_c10_single_term_em_vanishes(prepared8, lat32, pair, photon, record_property):
    p, q = (prepared8[n] for n in pair)
    if photon == "gaussian":
        f = GaussianBivector((1, 0, 0, 0, 0, 0.5), width=1.2, wavevector=(1.0, 0.5, 0, 0)).sample(lat32)
    else:
        f = prepared8["ff"].maxwell - prepared8["c"].maxwell + MaxwellShell.from_bivector(
            GaussianBivector((0, 1, 0, 0.3, 0, 0), width=1.4, wavevector=(0.8, 0, 0.4, 0)).sample(lat32))
    results = {
        "vev3": vev3(f, p, q, P8),
        "1to2": prob_1to2(p, q, f, P8),
        "annihilate": prob_annihilate(p, q, f, P8),
    }
    record_property("detail", ", ".join(f"{k} {abs(r.value):.1e}/{r.quad_error:.1e}" for k, r in results.items()))
    for r in results.values():
        assert abs(r.value) <= r.quad_error


# ---------------------------------------------------------------------------
# 11. determinism
# ---------------------------------------------------------------------------


@crit(11)
def test_c11_byte_identical_runs(tmp_path, record_property):
    outs = []
    for threads in ("1", "8"):
        out = tmp_path / f"t{threads}"
        cmd = [sys.executable, "-m", "gaugedress", "run", str(CONFIGS / "quickstart.json"),
               "--out", str(out), "--threads", threads, "--csv"]
        res = subprocess.run(cmd, capture_output=True, text=True, cwd=ROOT, env=dict(os.environ))
        assert res.returncode == 0, res.stderr
        outs.append(out)
    names = sorted(p.name for p in outs[0].iterdir() if p.name != "timing.json")
    assert names == sorted(p.name for p in outs[1].iterdir() if p.name != "timing.json")
    for name in names:
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes(), name
    recs = [json.loads(x) for x in (outs[0] / "results.ndjson").read_text().splitlines()]
    record_property("detail", f"{len(names)} files, {len(recs)} records identical")
    assert all("error" not in r for r in recs)
