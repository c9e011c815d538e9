import warnings

import numpy as np
import pytest

from cavityrc.readout import (
    BandNorm,
    FourierSelector,
    PCAProjection,
    ReadoutModel,
    apply_band_norms,
    band_bins,
    band_minmax,
    compose_weights,
    feature_transform,
    fit_band_norms,
    fit_linear_svm,
    fit_pca,
    fit_ridge,
    fourier_features,
    load_model,
    realify,
    windowed,
)
from cavityrc.wavefield import ProbeRecord


def recs(*cols, rate=64.0):
    return [ProbeRecord(f"p{k}", np.asarray(c, dtype=float), rate) for k, c in enumerate(cols)]


# ------------------------------------------------------------------ Fourier


def test_dft_of_impulse_is_flat():
    x = np.zeros(64)
    x[0] = 1.0
    sel = FourierSelector(0.0, 64, [0, 5, 31], 64.0)
    z = fourier_features(recs(x), sel)
    assert np.allclose(z[:, 0], 1.0)


def test_dft_of_sinusoid_has_single_line():
    n = 64
    t = np.arange(n)
    x = 3.0 * np.cos(2 * np.pi * 7 * t / n)
    sel = FourierSelector(0.0, n, [3, 7, 11], 64.0)
    z = fourier_features(recs(x), sel)[:, 0]
    assert np.allclose(z, [0.0, 96.0, 0.0], atol=1e-12)


def test_matrix_matches_fft_and_hann_taper():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((80, 3))
    for taper in ("rect", "hann"):
        sel = FourierSelector(10 / 64.0, 64, [3, 7, 11], 64.0, taper)
        z = fourier_features(recs(*x.T), sel)
        direct = sel.matrix() @ x[10:74]
        assert np.max(np.abs(z - direct)) <= 1e-12 * np.max(np.abs(direct))


@pytest.mark.parametrize("bins", [[3, 3], [5, 2], [-1], [64]])
def test_selector_rejects_bad_bins(bins):
    with pytest.raises(ValueError):
        FourierSelector(0.0, 64, bins, 64.0)


def test_windowed_errors():
    sel = FourierSelector(0.5, 64, [1], 64.0)
    with pytest.raises(ValueError, match="outside"):
        windowed(recs(np.zeros(80)), sel)
    with pytest.raises(ValueError, match="lengths"):
        windowed(recs(np.zeros(80), np.zeros(90)), sel)
    with pytest.raises(ValueError, match="rate"):
        windowed(recs(np.zeros(200), rate=32.0), sel)


def test_band_bins_half_open():
    b = band_bins(10, 1000, 4096, 16000)
    assert b[0] == 3 and b[-1] == 255
    assert np.array_equal(band_bins(1000, 3500, 4096, 16000), np.arange(256, 896))


def test_realify_interleaves_column_major():
    z = np.array([[1 + 2j, 3 + 4j], [5 + 6j, 7 + 8j]])
    assert realify(z).tolist() == [1, 2, 5, 6, 3, 4, 7, 8]
    batch = np.stack([z, 2 * z])
    assert np.array_equal(realify(batch)[1], 2 * realify(z))


# ------------------------------------------------------------------ compose


def _complex_model(rng, bins, probes, outputs, n=32, pca_k=None, scaler=False):
    sel = FourierSelector(0.0, n, bins, float(n))
    d = 2 * len(bins) * probes
    pca = scale = None
    if pca_k:
        pca = fit_pca(rng.standard_normal((3 * d, d)), pca_k)
    if scaler:
        scale = (rng.standard_normal(d), rng.uniform(0.5, 2.0, d))
    w = rng.standard_normal((outputs, pca_k or d))
    return ReadoutModel(sel, w, rng.standard_normal(outputs), pca=pca, scaler=scale)


def test_composed_operator_matches_staged_pipeline():
    rng = np.random.default_rng(0)
    worst = 0.0
    for trial in range(100):
        bins = np.sort(rng.choice(np.arange(1, 16), size=int(rng.integers(1, 5)), replace=False))
        probes = int(rng.integers(1, 4))
        model = _complex_model(rng, bins, probes, int(rng.integers(1, 3)), pca_k=2 if trial % 3 == 0 else None,
                               scaler=trial % 2 == 0)
        x = rng.standard_normal((32, probes))
        staged = model.decision(model.raw_features([recs(*x.T, rate=32.0)]))[0]
        a, c = compose_weights(model)
        direct = a @ x.ravel(order="F") + c
        worst = max(worst, np.max(np.abs(staged - direct)) / max(1.0, np.max(np.abs(staged))))
    assert worst <= 1e-10


def test_compose_edge_cases():
    rng = np.random.default_rng(1)
    sel = FourierSelector(0.0, 8, np.arange(8), 8.0)
    # identity-like weights over all bins recover the DFT itself
    m = ReadoutModel(sel, np.eye(16), np.zeros(16))
    a, _ = compose_weights(m)
    f = np.fft.fft(np.eye(8), axis=0)
    assert np.allclose(a[0::2], f.real) and np.allclose(a[1::2], f.imag)
    zero = ReadoutModel(sel, np.zeros((1, 16)), [0.5])
    a0, c0 = compose_weights(zero)
    assert np.all(a0 == 0) and c0[0] == 0.5
    with pytest.raises(ValueError, match="nonlinear"):
        compose_weights(ReadoutModel(sel, rng.standard_normal((1, 8)), [0.0], feature_kind="magnitude"))


def test_intensity_floor():
    z = np.array([[[10.0], [1e-3], [0.5]]])
    ref = np.abs(z) ** 2
    out = feature_transform(z, "intensity", floor_db=60, reference=ref)
    assert out[0, :, 0].tolist() == [100.0, 0.0, 0.25]
    with pytest.raises(ValueError):
        feature_transform(z, "phase")


# -------------------------------------------------------------------- ridge


def test_ridge_orthonormal_columns_closed_form():
    rng = np.random.default_rng(2)
    q, _ = np.linalg.qr(rng.standard_normal((40, 5)))
    y = rng.standard_normal(40)
    lam = 0.3
    fit = fit_ridge(q, y, lam)
    assert np.allclose(fit.weights, q.T @ y / (1 + lam), atol=1e-12)


def test_ridge_recovers_planted_weights_and_shrinks():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((200, 6))
    w = rng.standard_normal(6)
    y = x @ w + 2.5
    fit = fit_ridge(x, y, 1e-9, intercept=True)
    assert np.allclose(fit.weights, w, atol=1e-8) and fit.bias == pytest.approx(2.5)
    assert np.linalg.norm(fit_ridge(x, y, 1e9).weights) < 1e-5


def test_ridge_gradient_vanishes_and_matches_descent():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((50, 8))
    y = rng.standard_normal(50)
    lam = 2.0
    w = fit_ridge(x, y, lam).weights
    grad = x.T @ (x @ w - y) + lam * w
    assert np.max(np.abs(grad)) < 1e-10
    v = np.zeros(8)
    step = 1.0 / (np.linalg.norm(x, 2) ** 2 + lam)
    for _ in range(5000):
        v -= step * (x.T @ (x @ v - y) + lam * v)
    assert np.allclose(v, w, atol=1e-8)


def test_ridge_singular_without_regularization():
    x = np.ones((10, 2))
    with pytest.raises(np.linalg.LinAlgError, match="lam > 0"):
        fit_ridge(x, np.arange(10.0), 0.0)
    with pytest.raises(ValueError):
        fit_ridge(x, np.arange(10.0), -1.0)
    assert np.all(np.isfinite(fit_ridge(x, np.arange(10.0), 1e-3).weights))


# ---------------------------------------------------------------------- SVM


def blobs(rng, n=60, k=3, d=4, spread=0.3):
    centers = rng.standard_normal((k, d)) * 4
    y = np.repeat(np.arange(k), n // k)
    return centers[y] + spread * rng.standard_normal((len(y), d)), y


def test_svm_separates_blobs_and_objective_never_rises():
    rng = np.random.default_rng(5)
    x, y = blobs(rng)
    fit = fit_linear_svm(x, y, c_reg=10, epochs=50)
    assert np.mean(fit.predict(x) == y) == 1.0
    assert np.all(np.diff(fit.objective) <= 0)
    assert fit.objective[-1] < fit.objective[0]


def test_svm_cannot_solve_xor():
    x = np.array([[0, 0], [1, 1], [0, 1], [1, 0]] * 10, dtype=float)
    y = np.array([0, 0, 1, 1] * 10)
    fit = fit_linear_svm(x, y, epochs=50)
    assert np.mean(fit.predict(x) == y) <= 0.75


def test_svm_label_permutation_permutes_outputs():
    rng = np.random.default_rng(6)
    x, y = blobs(rng)
    perm = np.array([2, 0, 1])
    a = fit_linear_svm(x, y, epochs=30, seed=1)
    b = fit_linear_svm(x, perm[y], epochs=30, seed=1)
    assert np.array_equal(perm[a.predict(x)], b.predict(x))


def test_svm_predictions_invariant_to_score_scaling():
    rng = np.random.default_rng(7)
    x, y = blobs(rng)
    fit = fit_linear_svm(x, y, epochs=30)
    scaled = type(fit)(fit.weights * 7.0, fit.bias * 7.0)
    assert np.array_equal(scaled.predict(x), fit.predict(x))


def test_svm_is_seeded_and_needs_two_classes():
    rng = np.random.default_rng(8)
    x, y = blobs(rng)
    a, b = fit_linear_svm(x, y, epochs=10, seed=3), fit_linear_svm(x, y, epochs=10, seed=3)
    assert np.array_equal(a.weights, b.weights)
    with pytest.raises(ValueError, match="two classes"):
        fit_linear_svm(x, np.zeros(len(x), int))


# ---------------------------------------------------------------------- PCA


def test_pca_on_a_line():
    t = np.linspace(-1, 1, 21)
    x = np.outer(t, [3.0, 4.0]) + [1.0, 2.0]
    p = fit_pca(x, 1)
    assert np.allclose(np.abs(p.components[0]), [0.6, 0.8])
    assert p.explained_fraction() == pytest.approx(1.0)
    assert np.allclose(p.inverse_transform(p.transform(x)), x)


def test_pca_full_rank_roundtrip_and_orthonormal():
    rng = np.random.default_rng(9)
    x = rng.standard_normal((30, 6))
    p = fit_pca(x, 6)
    assert np.allclose(p.components @ p.components.T, np.eye(6), atol=1e-12)
    assert np.allclose(p.inverse_transform(p.transform(x)), x)


def test_pca_variance_matches_covariance_eigenvalues():
    x = np.diag([5.0, 3.0, 1.0, 0.5])
    x = np.vstack([x, -x])
    p = fit_pca(x, 2)
    assert p.explained_fraction() == pytest.approx((25 + 9) / (25 + 9 + 1 + 0.25))
    ev = np.sort(np.linalg.eigvalsh(np.cov(x.T, bias=True)))[::-1]
    assert np.allclose(p.singular_values**2 / len(x), ev)


def test_pca_errors():
    with pytest.raises(ValueError):
        fit_pca(np.ones((1, 3)), 1)
    with pytest.raises(ValueError):
        fit_pca(np.ones((5, 3)), 4)


# ----------------------------------------------------------- band min-max


def test_band_minmax_maps_to_unit_interval():
    mags = np.array([2.0, 4.0, 6.0]).reshape(3, 1, 1)
    out, norms = band_minmax(mags + 0j, np.array([100.0]), [(10, 1000)])
    assert out.ravel().tolist() == [0.0, 0.5, 1.0]
    assert norms[0] == BandNorm(10, 1000, 2.0, 6.0)


def test_bands_are_scaled_independently():
    rng = np.random.default_rng(10)
    hz = np.array([100.0, 200.0, 2000.0, 3000.0])
    mags = rng.uniform(0, 1, (20, 4, 2))
    mags[:, 2:] *= 1000
    out, _ = band_minmax(mags, hz, [(10, 1000), (1000, 3500)])
    for sl in (slice(0, 2), slice(2, 4)):
        assert out[:, sl].min() == pytest.approx(0.0) and out[:, sl].max() == pytest.approx(1.0)
    # the high band's scale does not leak into the low band
    mags2 = mags.copy()
    mags2[:, 2:] *= 10
    assert np.allclose(band_minmax(mags2, hz, [(10, 1000), (1000, 3500)])[0][:, :2], out[:, :2])


def test_band_membership_for_vowel_grid():
    sel = FourierSelector(0.0, 4096, band_bins(10, 3500, 4096, 16000), 16000.0)
    norms = fit_band_norms(np.ones((2, sel.selected_bins.size, 1)) * np.arange(2)[:, None, None], sel.bin_hz,
                           [(10, 1000), (1000, 3500)])
    assert len(norms) == 2
    low = (sel.bin_hz >= 10) & (sel.bin_hz < 1000)
    assert sel.selected_bins[low][[0, -1]].tolist() == [3, 255]
    assert sel.selected_bins[~low][[0, -1]].tolist() == [256, 895]


def test_band_errors_and_degenerate_band():
    hz = np.array([100.0, 2000.0])
    with pytest.raises(ValueError, match="overlap"):
        fit_band_norms(np.ones((2, 2, 1)), hz, [(10, 1500), (1000, 3500)])
    with pytest.raises(ValueError, match="no selected bin"):
        fit_band_norms(np.ones((2, 2, 1)), hz, [(10, 50)])
    with pytest.warns(UserWarning, match="constant"):
        out = apply_band_norms(np.ones((2, 2, 1)), hz, [BandNorm(10, 1000, 1.0, 1.0), BandNorm(1000, 3500, 0, 2)])
    assert out[:, 0].ravel().tolist() == [0.5, 0.5]
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        dropped = apply_band_norms(np.ones((1, 2, 1)), hz, [BandNorm(1000, 3500, 0.0, 2.0)])
    assert dropped.shape == (1, 1, 1)


# -------------------------------------------------------------- persistence


def test_model_roundtrip_is_exact(tmp_path):
    rng = np.random.default_rng(11)
    sel = FourierSelector(0.01, 128, [3, 4, 9], 16000.0, "hann")
    pca = fit_pca(rng.standard_normal((20, 6)), 4)
    m = ReadoutModel(sel, rng.standard_normal((3, 4)), rng.standard_normal(3), kind="linear_svm",
                     feature_kind="magnitude", band_norms=[BandNorm(10, 1000, 0.1, 2.0)], pca=pca,
                     scaler=(rng.standard_normal(6), rng.uniform(1, 2, 6)), floor_db=80.0,
                     reference_bins=np.array([3, 4]), classes=["a", "i", "u"], seed=5, meta={"gain": 0.25})
    m.save(tmp_path / "m.bin")
    back = load_model(tmp_path / "m.bin")
    assert np.array_equal(back.weights, m.weights) and np.array_equal(back.bias, m.bias)
    assert np.array_equal(back.pca.components, pca.components)
    assert np.array_equal(back.scaler[1], m.scaler[1])
    assert back.band_norms == m.band_norms and back.classes == m.classes
    assert back.selector.to_dict() == sel.to_dict()
    assert back.reference_bins.tolist() == [3, 4] and back.meta == {"gain": 0.25}
    assert back.n_parameters == m.n_parameters == 15


def test_load_rejects_foreign_file(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"nope" + bytes(20))
    with pytest.raises(ValueError, match="not a readout"):
        load_model(tmp_path / "x.bin")


def test_model_validation():
    sel = FourierSelector(0.0, 8, [1], 8.0)
    with pytest.raises(ValueError, match="bias"):
        ReadoutModel(sel, np.ones((2, 2)), [0.0])
    bad = PCAProjection(np.zeros(2), np.ones((1, 2)), np.ones(2))
    with pytest.raises(ValueError, match="orthonormal"):
        ReadoutModel(sel, np.ones((1, 1)), [0.0], pca=bad)
