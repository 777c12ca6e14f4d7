import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad
from scipy.optimize import minimize_scalar
from scipy.spatial.transform import Rotation

from magnetoforge.material import (MU0, NU0, BHCurve, CoenergyLaw, LinearLaw, MaterialError, coenergy_eval,
                                   energy_eval, fenchel_gap, fit_energy, law_summary, load_bh_csv,
                                   random_vectors, saturating_curve, secant_slack, verify_constants)

vec3 = st.lists(st.floats(-3.0, 3.0), min_size=3, max_size=3).map(np.array)


# -- B-H ingestion -----------------------------------------------------------------

def test_load_valid_curve(tmp_path):
    p = tmp_path / "bh.csv"
    p.write_text("# steel\nH,B\n0,0\n100,0.5\n1000,1.2\n10000,1.6\n")
    c = load_bh_csv(p)
    assert len(c) == 4
    np.testing.assert_array_equal(c.H, [0, 100, 1000, 10000])


def test_load_whitespace_and_prepend_origin(tmp_path):
    p = tmp_path / "bh.txt"
    p.write_text("100 0.5\n1000 1.2\n10000 1.6\n")
    c = load_bh_csv(p)
    assert len(c) == 4
    assert (c.H[0], c.B[0]) == (0.0, 0.0)


@pytest.mark.parametrize("body", [
    "0,0\n100,0.5\n200,0.4\n1000,1.2\n",   # B decreasing
    "0,0\n100,0.5\n",                      # too few samples
    "0,0\n-5,0.1\n100,0.5\n1000,1.2\n",    # negative
    "0,0\n100,abc\n",                      # junk after data
])
def test_load_rejects(tmp_path, body):
    p = tmp_path / "bad.csv"
    p.write_text(body)
    with pytest.raises(MaterialError):
        load_bh_csv(p)


# -- fitting --------------------------------------------------------------------------

def test_fit_linear_curve_is_linear():
    H = np.array([0.0, 10.0, 100.0, 1000.0, 1e4])
    law = fit_energy(BHCurve(H=H, B=MU0 * H))
    s = np.linspace(0, 3 * law.b_last, 101)
    np.testing.assert_allclose(law.dW(s), s / MU0, rtol=1e-12, atol=1e-9)
    g, L = verify_constants(law)
    assert g == pytest.approx(NU0, rel=1e-9)
    assert L == pytest.approx(NU0, rel=1e-9)


def test_fit_interpolates_samples(steel):
    c = saturating_curve()
    np.testing.assert_allclose(steel.dW(c.B), c.H, rtol=1e-12, atol=1e-9)


def test_fit_energy_matches_adaptive_quadrature(steel):
    ref, _ = quad(lambda s: float(steel.dW(s)), 0.0, steel.b_last, points=list(steel.knots[1:-1]),
                  epsabs=0, epsrel=1e-13, limit=500)
    assert float(steel.W(steel.b_last)) == pytest.approx(ref, rel=1e-10)


def test_saturation_extension(steel):
    s = steel.b_last + np.array([0.1, 1.0, 5.0])
    np.testing.assert_allclose(np.diff(steel.dW(s)) / np.diff(s), steel.nu_sat, rtol=1e-10)
    assert steel.nu_sat >= 1e-3 * NU0


def test_flat_segment_is_clamped(caplog):
    curve = BHCurve(H=np.array([0, 100, 100.0001, 1000, 1e4]), B=np.array([0, 1.0, 1.5, 1.6, 1.62]))
    with caplog.at_level(logging.WARNING):
        law = fit_energy(curve)
    assert law.clamped
    assert law.gamma == pytest.approx(law.gamma_floor)
    assert "clamped" in caplog.text


def test_constants(steel):
    assert verify_constants(LinearLaw()) == (pytest.approx(NU0), pytest.approx(NU0))
    g, L = verify_constants(steel)
    assert 0 < g < L < np.inf
    mono, lip = secant_slack(steel, n=1000)
    assert mono >= -1e-10
    assert lip >= -1e-10


# -- pointwise evaluation ---------------------------------------------------------

def test_linear_examples():
    w, h, H = energy_eval(LinearLaw(), np.array([MU0, 0.0, 0.0]))
    assert w == pytest.approx(MU0 / 2)
    np.testing.assert_allclose(h, [1.0, 0.0, 0.0])
    np.testing.assert_allclose(H, np.eye(3) / MU0)
    ws, b, Hs = coenergy_eval(CoenergyLaw(LinearLaw()), np.array([1.0, 0.0, 0.0]))
    assert ws == pytest.approx(MU0 / 2)
    np.testing.assert_allclose(b, [MU0, 0.0, 0.0])


def test_zero_field(steel):
    w, h, H = steel.evaluate(np.zeros(3))
    assert w == 0.0
    np.testing.assert_array_equal(h, 0.0)
    np.testing.assert_allclose(H, float(steel.d2W(0.0)) * np.eye(3))
    ws, b, _ = steel.coenergy(np.zeros(3))
    assert ws == 0.0
    np.testing.assert_array_equal(b, 0.0)


def _fd_check(fn_val, fn_der, x, step):
    """Central differences of fn_val compared with fn_der (last axis)."""
    der = fn_der(x)
    fd = np.stack([(fn_val(x + step * e) - fn_val(x - step * e)) / (2 * step) for e in np.eye(3)], axis=-1)
    return np.linalg.norm(fd - der) / max(np.linalg.norm(der), 1e-300)


@pytest.mark.parametrize("law_name", ["air", "steel"])
def test_derivative_oracles(law_name, request):
    law = request.getfixturevalue(law_name)
    rng = np.random.default_rng(10)
    b_max = 2.0 * getattr(law, "b_last", 1.0)
    for b in random_vectors(rng, 100, b_max):
        step = 1e-6 * max(1.0, np.linalg.norm(b))
        assert _fd_check(lambda x: law.evaluate(x)[0], lambda x: law.evaluate(x)[1], b, step) <= 1e-6
        assert _fd_check(lambda x: law.evaluate(x)[1], lambda x: law.evaluate(x)[2], b, step) <= 1e-6
        _, h, _ = law.evaluate(b)
        hstep = 1e-6 * max(1.0, np.linalg.norm(h))
        assert _fd_check(lambda x: law.coenergy(x)[1], lambda x: law.coenergy(x)[2], h, hstep) <= 1e-6


def test_coenergy_is_supremum(steel):
    rng = np.random.default_rng(11)
    for hm in rng.uniform(0, 5e5, 20):
        res = minimize_scalar(lambda s: -(hm * s - float(steel.W(s))), bounds=(0, 10), method="bounded",
                              options={"xatol": 1e-12})
        ws, _, _ = steel.coenergy(np.array([hm, 0.0, 0.0]))
        assert float(ws) == pytest.approx(-res.fun, rel=1e-8, abs=1e-8)


def test_fenchel_and_round_trip(steel):
    rng = np.random.default_rng(12)
    b = random_vectors(rng, 1000, 2 * steel.b_last)
    assert fenchel_gap(steel, b).max() <= 1e-9
    _, h, H = steel.evaluate(b)
    _, b_back, Hs = steel.coenergy(h)
    np.testing.assert_allclose(b_back, b, rtol=1e-9, atol=1e-12)
    prod = np.einsum("nij,njk->nik", Hs, H)
    np.testing.assert_allclose(prod, np.broadcast_to(np.eye(3), prod.shape), atol=1e-8)


@settings(max_examples=60, deadline=None)
@given(vec3, vec3, st.floats(0.01, 0.99))
def test_convexity(steel, b1, b2, lam):
    w = lambda b: float(steel.evaluate(b)[0])
    lhs = w(lam * b1 + (1 - lam) * b2)
    rhs = lam * w(b1) + (1 - lam) * w(b2)
    assert lhs <= rhs + 1e-12 * max(1.0, abs(rhs))


@settings(max_examples=60, deadline=None)
@given(vec3, st.integers(0, 2**31 - 1))
def test_isotropy(steel, b, seed):
    R = Rotation.random(random_state=seed).as_matrix()
    w1, h1, _ = steel.evaluate(b)
    w2, h2, _ = steel.evaluate(R @ b)
    assert float(w2) == pytest.approx(float(w1), rel=1e-12, abs=1e-12)
    np.testing.assert_allclose(h2, R @ h1, rtol=1e-12, atol=1e-9)


@settings(max_examples=60, deadline=None)
@given(vec3)
def test_hessian_spd_within_bounds(steel, b):
    _, _, H = steel.evaluate(b)
    np.testing.assert_allclose(H, H.T, rtol=1e-13, atol=0)
    ev = np.linalg.eigvalsh(H)
    assert ev.min() >= steel.gamma * (1 - 1e-12)
    assert ev.max() <= steel.L * (1 + 1e-12)


def test_law_summary(steel):
    s = law_summary(steel)
    assert s["roundtrip_max_rel_error"] <= 1e-9
    assert s["table"][0]["w_star"] == 0.0
    assert len(s["table"]) == 25
    assert law_summary(LinearLaw())["gamma"] == pytest.approx(NU0)
