import json

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import j0, j1

from emsound import InstrumentSetup, LayeredEarthModel, SoundingData, forward_map, make_heights, residual
from emsound import _kernels
from emsound.forward import (
    MU0,
    characteristic_admittance,
    linear_forward,
    load_data,
    load_model,
    reflection_factor,
    save_data,
    save_model,
    surface_admittance,
)

OMEGA = 2 * np.pi * 14600


def homogeneous(sigma, n=3, d=0.4):
    return LayeredEarthModel(np.full(n, sigma), np.full(n - 1, d))


# ---------------------------------------------------------------------------
# admittances and reflection factor


def test_free_space_admittance():
    model = LayeredEarthModel([0.0], [])
    for lam in (0.1, 1.0, 7.0):
        N = characteristic_admittance(lam, model, 0, OMEGA)
        assert N == pytest.approx(-1j * lam / (MU0 * OMEGA), rel=1e-15)


def test_admittance_matches_high_precision():
    mpmath.mp.dps = 40
    w = mpmath.mpf(2) * mpmath.pi * 14600
    mu = 4e-7 * mpmath.pi
    exact = mpmath.sqrt(1 + 1j * mpmath.mpf("0.1") * mu * w) / (1j * mu * w)
    got = characteristic_admittance(1.0, LayeredEarthModel([0.1], []), 0, OMEGA)
    assert abs(got - complex(exact)) <= 1e-14 * abs(complex(exact))


@given(sigma=st.floats(0, 1e3), lam=st.floats(1e-4, 1e4))
@settings(max_examples=100, deadline=None)
def test_principal_branch(sigma, lam):
    N = characteristic_admittance(lam, LayeredEarthModel([sigma], []), 0, OMEGA)
    u = N * 1j * MU0 * OMEGA
    assert u.real > 0


def test_homogeneous_fixed_point(rng):
    for _ in range(100):
        sigma, lam = rng.uniform(0, 5), 10 ** rng.uniform(-3, 2)
        model = homogeneous(sigma, n=int(rng.integers(2, 8)))
        Y = surface_admittance(lam, model, OMEGA)
        N = characteristic_admittance(lam, model, 0, OMEGA)
        assert abs(Y - N) <= 1e-13 * abs(N)


def test_single_layer_is_its_own_admittance():
    model = LayeredEarthModel([0.3], [])
    assert surface_admittance(2.0, model, OMEGA) == characteristic_admittance(2.0, model, 0, OMEGA)


def test_two_layer_direct_formula_bit_identical(two_layer):
    for lam in (0.01, 0.5, 3.0, 40.0):
        N1 = characteristic_admittance(lam, two_layer, 0, OMEGA)
        N2 = characteristic_admittance(lam, two_layer, 1, OMEGA)
        t = np.tanh(two_layer.d[0] * N1 * 1j * MU0 * OMEGA)
        direct = complex(N1 * (N2 + N1 * t) / (N1 + N2 * t))
        assert surface_admittance(lam, two_layer, OMEGA) == direct
        N0 = lam / (1j * MU0 * OMEGA)
        assert reflection_factor(lam, two_layer, OMEGA) == (N0 - direct) / (N0 + direct)


def test_reflection_vanishes_without_conductivity():
    model = LayeredEarthModel([0.0, 0.0, 0.0], [0.3, 0.3])
    assert abs(reflection_factor(0.7, model, OMEGA)) < 1e-15


def test_homogeneous_reflection_closed_form():
    model = homogeneous(0.05)
    N0 = 1.0 / (1j * MU0 * OMEGA)
    N1 = characteristic_admittance(1.0, model, 0, OMEGA)
    assert reflection_factor(1.0, model, OMEGA) == pytest.approx((N0 - N1) / (N0 + N1), rel=1e-13)


def test_scalar_and_batched_kernels_agree(two_layer, rng):
    model = LayeredEarthModel(rng.uniform(0, 2, 6), rng.uniform(0.1, 0.5, 5))
    lam = np.logspace(-3, 2, 40)
    batched = _kernels.reflection(lam, model.sigma, model.d, model.mu, OMEGA)
    scalar = [reflection_factor(l, model, OMEGA) for l in lam]
    np.testing.assert_allclose(batched, scalar, rtol=1e-13, atol=1e-15)


def test_overflow_guard_keeps_response_finite():
    model = LayeredEarthModel([50.0, 80.0, 1.0], [400.0, 300.0])
    setup = InstrumentSetup((0.0, 0.5))
    assert np.all(np.isfinite(forward_map(model, setup)))
    assert np.isfinite(surface_admittance(500.0, model, OMEGA))


# ---------------------------------------------------------------------------
# forward map


def test_free_space_null(setup10):
    m = forward_map(LayeredEarthModel(np.zeros(5), np.full(4, 0.5)), setup10)
    assert np.max(np.abs(m)) <= 1e-14


def test_low_induction_limit():
    setup = InstrumentSetup((0.0,))
    model = homogeneous(0.02)
    mV = forward_map(model, setup)[0]
    assert mV == pytest.approx(0.02, rel=0.05)
    assert mV == pytest.approx(linear_forward(model, setup)[0], rel=0.05)


def _brute_force(model, setup, npts=1_000_000, lam_max=50.0):
    lam = np.linspace(lam_max / npts, lam_max, npts)
    im_r0 = _kernels.reflection_numpy(lam, model.sigma, model.d, model.mu, setup.omega).imag
    r, scale = setup.r, 4.0 / (MU0 * setup.omega)
    out = []
    for o in setup.orientations:
        for h in setup.heights:
            if o == "V":
                f = -lam * np.exp(-2 * h * lam) * im_r0 * j0(r * lam) * lam * r
            else:
                f = -np.exp(-2 * h * lam) * im_r0 * j1(r * lam) * lam
            out.append(scale * np.trapezoid(f, lam))
    return np.array(out)


def test_two_layer_against_dense_quadrature(two_layer):
    # heights >= 0.5 m make exp(-2 h lam) negligible beyond lam = 50
    setup = InstrumentSetup((0.5, 0.8, 1.2))
    got = forward_map(two_layer, setup)
    ref = _brute_force(two_layer, setup)
    np.testing.assert_allclose(got, ref, rtol=1e-4)


def test_skin_depth_annotations_are_ignored(setup10):
    plain = LayeredEarthModel([0.2, 0.4, 0.1], [0.5, 0.5])
    tagged = LayeredEarthModel([0.2, 0.4, 0.1], [0.5, 0.5], meta={"induction_number": 0.123})
    assert np.array_equal(forward_map(plain, setup10), forward_map(tagged, setup10))


def test_layer_splitting(setup10, rng):
    for _ in range(5):
        sigma = rng.uniform(0, 1, 5)
        d = rng.uniform(0.1, 0.6, 4)
        base = forward_map(LayeredEarthModel(sigma, d), setup10)
        k = int(rng.integers(0, 4))
        d_split = np.insert(d, k, d[k] / 2)
        d_split[k + 1] = d[k] / 2
        split = LayeredEarthModel(np.insert(sigma, k, sigma[k]), d_split)
        np.testing.assert_allclose(forward_map(split, setup10), base, rtol=1e-10)


def test_splitting_the_half_space(setup10):
    base = forward_map(LayeredEarthModel([0.3, 0.1], [0.4]), setup10)
    split = forward_map(LayeredEarthModel([0.3, 0.1, 0.1], [0.4, 2.5]), setup10)
    np.testing.assert_allclose(split, base, rtol=1e-10)


def test_homogeneous_response_decays_with_height():
    setup = InstrumentSetup(tuple(np.round(np.arange(0, 2.01, 0.1), 10)), orientations=("V",))
    for sigma in (0.01, 0.1, 1.0):
        m = np.abs(forward_map(homogeneous(sigma), setup))
        assert np.all(np.diff(m) < 0)


def test_block_ordering(two_layer, setup10):
    both = forward_map(two_layer, setup10)
    v = forward_map(two_layer, setup10.with_orientations(("V",)))
    h = forward_map(two_layer, setup10.with_orientations(("H",)))
    np.testing.assert_allclose(both, np.concatenate([v, h]), rtol=1e-15)


def test_setup_normalizes_orientation_order():
    assert InstrumentSetup((0.0,), orientations=("h", "v")).orientations == ("V", "H")


# ---------------------------------------------------------------------------
# linear model


def test_linear_model_uniform_profile():
    setup = InstrumentSetup((0.0,))
    np.testing.assert_allclose(linear_forward(homogeneous(0.37), setup), [0.37, 0.37], rtol=1e-14)


def test_linear_model_buried_slab():
    setup = InstrumentSetup((0.0,))
    model = LayeredEarthModel([0.0, 1.0, 0.0], [0.5, 0.5])
    assert linear_forward(model, setup)[0] == pytest.approx(1 / np.sqrt(2) - 1 / np.sqrt(5), rel=1e-14)


def test_linear_model_is_the_low_conductivity_limit(setup10):
    base = np.array([0.01, 0.03, 0.02])
    gaps = []
    for scale in (1.0, 0.1, 0.01, 0.001):
        model = LayeredEarthModel(base * scale, [0.5, 0.5])
        gaps.append(np.max(np.abs(forward_map(model, setup10) / linear_forward(model, setup10) - 1)))
    assert np.all(np.diff(gaps) < 0)
    assert gaps[-1] < 0.02


# ---------------------------------------------------------------------------
# residual


def test_residual_examples(two_layer, setup10, rng):
    m = forward_map(two_layer, setup10)
    assert np.all(residual(two_layer, setup10, SoundingData(m, setup10)) == 0)
    np.testing.assert_array_equal(residual(two_layer, setup10, SoundingData(np.zeros_like(m), setup10)), -m)
    e = rng.normal(size=m.size) * 1e-3
    np.testing.assert_allclose(residual(two_layer, setup10, SoundingData(m + e, setup10)), e, atol=1e-17)


def test_residual_shape_mismatch(two_layer, setup10):
    other = setup10.with_orientations(("V",))
    with pytest.raises(ValueError):
        residual(two_layer, setup10, SoundingData(np.zeros(10), other))
    with pytest.raises(ValueError):
        SoundingData(np.zeros(7), setup10)


# ---------------------------------------------------------------------------
# validation and files


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(sigma=[0.1, -0.1], d=[1.0]),
        dict(sigma=[0.1, 0.1], d=[0.0]),
        dict(sigma=[0.1, 0.1], d=[1.0, 1.0]),
        dict(sigma=[0.1, 0.1], d=[1.0], mu=[MU0, 0.0]),
        dict(sigma=[np.nan], d=[]),
    ],
)
def test_invalid_models(kwargs):
    with pytest.raises(ValueError):
        LayeredEarthModel(**kwargs)


@pytest.mark.parametrize(
    "kwargs",
    [dict(heights=(0.2, 0.1)), dict(heights=(-1.0,)), dict(heights=(0.0,), r=0.0), dict(heights=(0.0,), orientations=("X",))],
)
def test_invalid_setups(kwargs):
    with pytest.raises(ValueError):
        InstrumentSetup(**kwargs)


def test_model_file_roundtrip(tmp_path, two_layer):
    path = tmp_path / "m.json"
    save_model(two_layer, path)
    back = load_model(path)
    np.testing.assert_array_equal(back.sigma, two_layer.sigma)
    np.testing.assert_array_equal(back.d, two_layer.d)
    milli = load_model(path, units="mS/m")
    np.testing.assert_allclose(milli.sigma, two_layer.sigma * 1e-3)


def test_malformed_model_file(tmp_path):
    path = tmp_path / "m.json"
    path.write_text(json.dumps({"d": [1.0]}))
    with pytest.raises(ValueError, match="malformed"):
        load_model(path)


def test_data_file_roundtrip(tmp_path, two_layer, setup10):
    data = SoundingData(forward_map(two_layer, setup10), setup10)
    path = tmp_path / "d.csv"
    save_data(data, path, units="mS/m")
    back = load_data(path, units="mS/m")
    np.testing.assert_allclose(back.b, data.b, rtol=1e-15)
    assert back.setup.heights == setup10.heights
    assert back.setup.orientations == ("V", "H")


def test_data_file_errors(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("height_m,orientation\n0,V\n")
    with pytest.raises(ValueError, match="missing columns"):
        load_data(bad)
    bad.write_text("height_m,orientation,apparent_conductivity_S_per_m\n0,V,0.1\n0.5,H,0.1\n")
    with pytest.raises(ValueError, match="different heights"):
        load_data(bad)
    bad.write_text("height_m,orientation,apparent_conductivity_S_per_m\n0,Q,0.1\n")
    with pytest.raises(ValueError, match="orientation"):
        load_data(bad)


def test_default_heights_reach_1_9():
    assert make_heights(10)[-1] == pytest.approx(1.9)
