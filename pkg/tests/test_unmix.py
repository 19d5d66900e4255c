import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from oracles import nnls_enumerate, nnls_objective
from stereohb import forward
from stereohb.errors import IlluminantError, NumericError
from stereohb.inversion import reconstruct_spectrum
from stereohb.unmix import (
    ConcentrationPixel,
    UndefinedRatioError,
    UnmixPolicy,
    absorbance,
    fit_absorbance,
    fnnls,
    fnnls_batch,
    reference_spectrum,
    sato2,
    thb,
    unmix_pixel,
)


def _kkt_ok(gram, cross, x, tol):
    w = cross - gram @ x
    free = x > 0
    return np.all(x >= 0) and np.all(np.abs(w[free]) <= tol) and np.all(w[~free] <= tol)


# ---------------------------------------------------------------- absorbance


def test_absorbance_zero_without_attenuation():
    i0 = np.array([0.5, 1.0, 0.8])
    a = absorbance(i0, i0)
    assert np.all(a.values == 0) and a.valid.all()


def test_absorbance_one_at_i0_over_e():
    i0 = np.ones(4)
    i = i0.copy()
    i[2] = 1 / math.e
    a = absorbance(i, i0)
    assert a.values[2] == pytest.approx(1.0, abs=1e-15)
    assert np.all(a.values[[0, 1, 3]] == 0)


def test_absorbance_floor_flags_reconstruction_dips(op_stereo, bundle):
    # A strongly noisy pixel drives some reconstructed bands negative.
    rgb = np.array([0.02, 0.9, 0.02, 0.9, 0.02, 0.9])
    spec = reconstruct_spectrum(op_stereo, rgb)
    assert np.any(spec <= 0)
    a = absorbance(spec, reference_spectrum(op_stereo, bundle.illuminant))
    assert np.array_equal(a.valid, spec > 1e-6)
    assert np.all(np.isfinite(a.values))
    assert np.all(a.values[~a.valid] == -np.log(1e-6 / reference_spectrum(op_stereo, bundle.illuminant)[~a.valid]))


def test_absorbance_rejects_non_positive_illuminant():
    with pytest.raises(IlluminantError):
        absorbance(np.ones(3), np.array([1.0, 0.0, 1.0]))


# ---------------------------------------------------------------- fnnls


def test_fnnls_identity_interior():
    x, _ = fnnls(np.eye(2), np.array([0.3, 0.7]))
    np.testing.assert_allclose(x, [0.3, 0.7])


def test_fnnls_identity_projection():
    x, _ = fnnls(np.eye(2), np.array([-0.2, 0.5]))
    np.testing.assert_allclose(x, [0.0, 0.5])


def test_fnnls_non_finite():
    with pytest.raises(NumericError):
        fnnls(np.eye(2), np.array([np.nan, 1.0]))
    with pytest.raises(NumericError):
        fnnls_batch(np.eye(2), np.array([[np.inf, 1.0]]))


def test_fnnls_matches_enumeration_on_random_instances(rng):
    for _ in range(500):
        xi = rng.uniform(0, 1, (24, 2))
        a = rng.normal(0, 1, 24)
        gram, cross = xi.T @ xi, xi.T @ a
        tol = 1e-10 * np.trace(gram)
        x, _ = fnnls(gram, cross, tol)
        _, best = nnls_enumerate(gram, cross)
        assert abs(nnls_objective(gram, cross, x) - best) <= 1e-10 * (1 + abs(best))
        assert _kkt_ok(gram, cross, x, tol)


def test_fnnls_three_variables_matches_enumeration(rng):
    # The solver is general; check beyond the two-chromophore case too.
    for _ in range(200):
        X = rng.normal(size=(10, 3))
        y = rng.normal(size=10)
        gram, cross = X.T @ X, X.T @ y
        x, _ = fnnls(gram, cross)
        _, best = nnls_enumerate(gram, cross)
        assert abs(nnls_objective(gram, cross, x) - best) <= 1e-10 * (1 + abs(best))


def test_batch_matches_scalar(rng):
    xi = rng.uniform(0, 1, (24, 2))
    gram = xi.T @ xi
    cross = rng.normal(0, 1, (1000, 24)) @ xi
    xb, ok = fnnls_batch(gram, cross)
    assert ok.all()
    for i in range(0, 1000, 7):
        xs, _ = fnnls(gram, cross[i])
        np.testing.assert_allclose(xb[i], xs, rtol=1e-12, atol=1e-12)


def test_batch_with_per_row_grams(rng):
    xs = rng.uniform(0, 1, (300, 24, 2))
    grams = np.einsum("nbi,nbj->nij", xs, xs)
    cross = np.einsum("nbi,nb->ni", xs, rng.normal(size=(300, 24)))
    xb, ok = fnnls_batch(grams, cross)
    assert ok.all()
    for i in range(300):
        _, best = nnls_enumerate(grams[i], cross[i])
        assert abs(nnls_objective(grams[i], cross[i], xb[i]) - best) <= 1e-10 * (1 + abs(best))


@settings(max_examples=100, deadline=None)
@given(
    hnp.arrays(float, (24, 2), elements=st.floats(0.01, 2.0)),
    hnp.arrays(float, 24, elements=st.floats(-3, 3)),
)
def test_fnnls_kkt_certificate(xi, a):
    gram, cross = xi.T @ xi, xi.T @ a
    tol = 1e-10 * np.trace(gram)
    x, w = fnnls(gram, cross, tol)
    np.testing.assert_allclose(w, cross - gram @ x)
    # Allow rounding in the residual of the passive solve.
    slack = tol + 1e-12 * np.abs(cross).max()
    free = x > 0
    assert np.all(x >= 0)
    assert np.all(np.abs(w[free]) <= slack) and np.all(w[~free] <= slack)


@settings(max_examples=60, deadline=None)
@given(
    hnp.arrays(float, (24, 2), elements=st.floats(0.05, 2.0)),
    hnp.arrays(float, 24, elements=st.floats(-3, 3)),
    st.floats(0.1, 10),
    st.floats(0.1, 10),
)
def test_column_scaling_scales_solution_inversely(xi, a, s1, s2):
    if np.linalg.cond(xi) > 1e6:
        return
    s = np.array([s1, s2])
    x, _ = fnnls(xi.T @ xi, xi.T @ a)
    xs_, _ = fnnls((xi * s).T @ (xi * s), (xi * s).T @ a)
    np.testing.assert_allclose(xs_, x / s, rtol=1e-7, atol=1e-9 * (1 + np.abs(x / s).max()))


# ---------------------------------------------------------------- fit with invalid bands


def test_fit_absorbance_ignores_invalid_bands(rng):
    xi = rng.uniform(0.1, 1, (24, 2))
    alpha = np.array([0.7, 0.2])
    a = xi @ alpha
    a_bad = a.copy()
    a_bad[[3, 10]] = 50.0
    valid = np.ones(24, bool)
    valid[[3, 10]] = False
    got, ok = fit_absorbance(a_bad[:, None], valid[:, None], xi)
    assert ok[0]
    np.testing.assert_allclose(got[0], alpha, rtol=1e-10)


def test_fit_absorbance_too_few_bands():
    xi = np.array([[1.0, 0.5], [0.2, 1.0], [0.3, 0.3]])
    valid = np.array([[True], [False], [False]])
    alpha, ok = fit_absorbance(np.ones((3, 1)), valid, xi)
    assert not ok[0]


# ---------------------------------------------------------------- unmix_pixel


def _render(bundle, response, alpha):
    I = forward.beer_lambert_forward(np.asarray(alpha, float), bundle.basis, bundle.illuminant)
    return forward.project_to_rgb(response, I, bundle.illuminant)


def test_unmix_pixel_noiseless_round_trip(bundle, op_stereo):
    p = unmix_pixel(op_stereo, bundle.basis, bundle.illuminant, _render(bundle, bundle.response, (50, 30)))
    assert p.valid
    assert abs(thb(p) - 80.0) < 0.1 * 80.0


def test_unmix_pixel_saturated(bundle, op_stereo):
    rgb = _render(bundle, bundle.response, (50, 30))
    rgb[4] = 1.0
    p = unmix_pixel(op_stereo, bundle.basis, bundle.illuminant, rgb)
    assert not p.valid and p.reason == "saturated" and math.isnan(p.c_hbo2)


def test_unmix_pixel_unattenuated_reads_zero(bundle, op_stereo):
    # C I0 under white normalisation is exactly 1 in every channel, which the
    # default policy calls over-saturated; relax the threshold for this check.
    rgb = _render(bundle, bundle.response, (0, 0))
    np.testing.assert_allclose(rgb, 1.0)
    p = unmix_pixel(op_stereo, bundle.basis, bundle.illuminant, rgb, UnmixPolicy(over=1.01))
    assert p.valid
    assert thb(p) == pytest.approx(0.0, abs=1e-9)


def test_unmix_pixel_is_pure(bundle, op_stereo):
    rgb = _render(bundle, bundle.response, (20, 10))
    a = unmix_pixel(op_stereo, bundle.basis, bundle.illuminant, rgb)
    b = unmix_pixel(op_stereo, bundle.basis, bundle.illuminant, rgb)
    assert a == b


def test_unmix_pixel_non_negative(bundle, op_stereo, rng):
    for _ in range(200):
        p = unmix_pixel(op_stereo, bundle.basis, bundle.illuminant, rng.uniform(0.05, 0.95, 6))
        if p.valid:
            assert p.c_hbo2 >= 0 and p.c_hb >= 0
            if thb(p) > 0:
                assert 0 <= sato2(p) <= 100


# ---------------------------------------------------------------- THb / SatO2


def test_thb_sato2_half_split():
    p = ConcentrationPixel(72.5, 72.5)
    assert thb(p) == 145.0 and sato2(p) == 50.0


def test_sato2_fully_oxygenated():
    assert sato2(ConcentrationPixel(3.0, 0.0)) == 100.0


def test_sato2_undefined_at_zero():
    p = ConcentrationPixel(0.0, 0.0)
    assert thb(p) == 0.0
    with pytest.raises(UndefinedRatioError):
        sato2(p)
