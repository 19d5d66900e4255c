import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from oracles import r_squared
from stereohb import forward
from stereohb.errors import EmptyComparisonError, ShapeError, ValidationError
from stereohb.forward import NoiseSpec, make_phantom, simulate
from stereohb.metrics import (
    ErrorReport,
    coefficient_of_determination,
    cod_mask,
    evaluate,
    mean_abs_error,
    pooled_concentration_error,
)
from stereohb.pipeline import MASKED, SATURATED, ConcentrationMap, process_frame, stack_stereo
from stereohb.unmix import AbsorbanceSpectrum


def _map(hbo2, hb, reason=None, cod=None):
    return ConcentrationMap(np.atleast_2d(hbo2).astype(float), np.atleast_2d(hb).astype(float), reason, cod)


def test_identical_maps_have_zero_error():
    t = make_phantom()
    for q in ("thb", "hbo2", "hb", "sato2"):
        assert mean_abs_error(t, t, q) == (0.0, 0.0)


def test_constant_thb_offset():
    t = _map([[10.0, 20.0, 30.0]], [[5.0, 5.0, 5.0]])
    e = _map([[11.0, 21.0, 31.0]], [[6.0, 6.0, 6.0]])
    m, s = mean_abs_error(e, t, "thb")
    assert m == pytest.approx(2.0) and s == pytest.approx(0.0, abs=1e-12)


def test_only_jointly_valid_pixels_count():
    t = _map([[1.0, 100.0]], [[0.0, 0.0]])
    e = _map([[2.0, 0.0]], [[0.0, 0.0]], reason=np.array([[0, SATURATED]]))
    assert mean_abs_error(e, t, "hbo2") == (1.0, 0.0)


def test_empty_comparison():
    t = _map([[1.0]], [[1.0]])
    e = _map([[1.0]], [[1.0]], reason=np.array([[SATURATED]]))
    with pytest.raises(EmptyComparisonError):
        mean_abs_error(e, t)


def test_sato2_needs_positive_thb():
    t = _map([[0.0, 1.0]], [[0.0, 1.0]])
    e = _map([[1.0, 2.0]], [[1.0, 0.0]])
    m, _ = mean_abs_error(e, t, "sato2")
    assert m == pytest.approx(50.0)


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        mean_abs_error(_map([[1.0]], [[1.0]]), _map([[1.0, 2.0]], [[1.0, 2.0]]))


def test_unknown_quantity():
    t = _map([[1.0]], [[1.0]])
    with pytest.raises(ValidationError):
        mean_abs_error(t, t, "melanin")


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(float, (3, 4), elements=st.floats(0, 200)), hnp.arrays(float, (3, 4), elements=st.floats(0, 200)),
       hnp.arrays(float, (3, 4), elements=st.floats(0, 200)), hnp.arrays(float, (3, 4), elements=st.floats(0, 200)))
def test_metric_symmetry(a1, a2, b1, b2):
    a, b = _map(a1, a2), _map(b1, b2)
    for q in ("thb", "hbo2", "hb", "sato2"):
        try:
            x = mean_abs_error(a, b, q)
        except EmptyComparisonError:
            with pytest.raises(EmptyComparisonError):
                mean_abs_error(b, a, q)
            continue
        assert x == mean_abs_error(b, a, q)


def test_pooled_combines_both_chromophores():
    t = _map([[0.0, 0.0]], [[0.0, 0.0]])
    e = _map([[1.0, 3.0]], [[5.0, 7.0]])
    m, _ = pooled_concentration_error(e, t)
    assert m == pytest.approx(4.0)


def test_cod_perfect_fit(bundle):
    alpha = np.array([30.0, 10.0])
    a = AbsorbanceSpectrum(bundle.basis.matrix @ alpha, np.ones(24, bool))
    assert coefficient_of_determination(a, alpha, bundle.basis) == pytest.approx(1.0)


def test_cod_zero_alpha_is_non_positive(bundle, rng):
    a = AbsorbanceSpectrum(rng.normal(1, 0.3, 24), np.ones(24, bool))
    assert coefficient_of_determination(a, (0.0, 0.0), bundle.basis) <= 0


def test_cod_matches_direct_formula(bundle, rng):
    y = rng.normal(1, 0.3, 24)
    alpha = np.array([2.0, 1.0])
    a = AbsorbanceSpectrum(y, np.ones(24, bool))
    assert coefficient_of_determination(a, alpha, bundle.basis) == pytest.approx(
        r_squared(y, bundle.basis.matrix @ alpha), rel=1e-12
    )


def test_cod_degenerate_cases(bundle):
    flat = AbsorbanceSpectrum(np.ones(24), np.ones(24, bool))
    assert np.isnan(coefficient_of_determination(flat, (1.0, 1.0), bundle.basis))
    one = np.zeros(24, bool)
    one[0] = True
    assert np.isnan(coefficient_of_determination(AbsorbanceSpectrum(np.arange(24.0), one), (1, 1), bundle.basis))


def test_cod_decreases_with_noise_in_expectation(bundle, rng):
    alpha = np.array([40.0, 20.0])
    clean = bundle.basis.matrix @ alpha
    means = []
    for scale in (0.001, 0.01, 0.05, 0.2):
        vals = []
        for _ in range(300):
            y = clean + scale * rng.standard_normal(24)
            vals.append(r_squared(y, clean))
            got = coefficient_of_determination(AbsorbanceSpectrum(y, np.ones(24, bool)), alpha, bundle.basis)
            assert got == pytest.approx(vals[-1], rel=1e-10, abs=1e-12)
        means.append(np.mean(vals))
    assert all(x > y for x, y in zip(means, means[1:]))


def test_cod_mask_is_strict():
    assert list(cod_mask(np.array([0.6, 0.5, np.nan, 0.5000001]))) == [True, False, False, True]


def test_cod_mask_monotone(rng):
    cod = rng.uniform(-1, 1, 1000)
    prev = cod_mask(cod, -2)
    for t in np.linspace(-1, 1, 21):
        cur = cod_mask(cod, t)
        assert not np.any(cur & ~prev)
        prev = cur


def test_cod_mask_rejects_non_finite_threshold():
    with pytest.raises(ValidationError):
        cod_mask(np.zeros(3), np.nan)


def test_perfect_fit_region_fully_included(bundle):
    ds = simulate(make_phantom(), bundle, NoiseSpec(0.0, 0))
    labels = forward.phantom_labels(forward.PhantomSpec())
    assert cod_mask(ds.truth.cod)[labels > 0].all()


def test_evaluate_identity_report():
    t = make_phantom()
    r = evaluate(t, t, cod_threshold=None)
    assert r.mae_thb == 0 and r.mae_pooled == 0 and r.std_abs_err == 0
    assert r.n_valid == t.hbo2.size and r.n_masked == 0 and r.n_outliers == 0


def test_evaluate_outliers_and_partition():
    t = _map(np.full((2, 3), 50.0), np.full((2, 3), 50.0), cod=np.array([[0.9, 0.9, 0.9], [0.4, 0.9, 0.9]]))
    e_hbo2 = np.array([[50.0, 250.0, 52.0], [50.0, 50.0, 0.0]])
    reason = np.array([[0, 0, 0], [0, 0, SATURATED]])
    e = _map(e_hbo2, np.full((2, 3), 50.0), reason=reason)
    r = evaluate(e, t)
    assert (r.n_valid, r.n_masked, r.n_outliers) == (3, 2, 1)
    assert r.n_total == 6
    # The 300 g/L outlier is not in the statistics.
    assert r.mae_hbo2 == pytest.approx(2.0 / 3.0)
    assert r.cod_source.startswith("truth")


def test_evaluate_falls_back_to_estimate_cod():
    t = _map([[1.0, 1.0]], [[1.0, 1.0]])
    e = _map([[1.0, 2.0]], [[1.0, 1.0]], cod=np.array([[0.9, 0.1]]))
    r = evaluate(e, t)
    assert r.cod_source == "estimate:reconstructed"
    assert r.n_valid == 1 and r.mae_hbo2 == 0


def test_report_serialisation():
    t = make_phantom()
    r = evaluate(t, t, cod_threshold=None, mode="stereo", dataset="x")
    kv = r.to_keyvalue()
    assert "mae_thb = 0\n" in kv and "mode = stereo\n" in kv
    assert len(r.to_row().split(",")) == len(ErrorReport.header().split(","))


def test_stereo_thb_error_below_mono_at_low_noise(bundle, op_stereo, op_mono):
    truth = make_phantom()
    for sigma in (0.01, 0.03, 0.05):
        ds = simulate(truth, bundle, NoiseSpec(sigma, 11))
        s = process_frame(stack_stereo(ds.left, ds.right), bundle, op_stereo)
        m = process_frame(ds.left, bundle, op_mono)
        assert evaluate(s, ds.truth).mae_thb < evaluate(m, ds.truth).mae_thb


def test_masked_reason_excluded():
    t = _map([[1.0, 1.0]], [[0.0, 0.0]])
    e = _map([[1.0, 9.0]], [[0.0, 0.0]], reason=np.array([[0, MASKED]]))
    r = evaluate(e, t, cod_threshold=None)
    assert r.n_masked == 1 and r.mae_hbo2 == 0
