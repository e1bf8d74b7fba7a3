import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geosom import dimred
from geosom.dimred import KernelSpec
from geosom.errors import NumericalError, ValidationError
from geosom.synthetic import make_blobs

from conftest import fm

LIN = KernelSpec("linear")


def pca_scores(X, Xnew=None):
    """Classic PCA via the 1/n covariance matrix; independent of the kernel path."""
    mean = X.mean(axis=0)
    Xc = X - mean
    S = Xc.T @ Xc / len(X)
    evals, evecs = np.linalg.eigh(S)
    order = np.argsort(evals)[::-1]
    U = evecs[:, order]
    target = Xc if Xnew is None else Xnew - mean
    return target @ U, evals[order]


def align_signs(A, B):
    """Flip columns of A so they best match B."""
    s = np.sign(np.sum(A * B, axis=0))
    s[s == 0] = 1
    return A * s


class TestKernelValue:
    def test_self(self):
        assert dimred.kernel_value([1.0, 2.0], [1.0, 2.0], KernelSpec("gaussian", 0.7)) == 1.0

    def test_e_inverse(self):
        sigma = 1.3
        # |d|^2 = 2 sigma^2
        xj = np.array([sigma * math.sqrt(2.0), 0.0])
        assert dimred.kernel_value([0.0, 0.0], xj, KernelSpec("gaussian", sigma)) == pytest.approx(math.exp(-1))

    def test_linear(self):
        assert dimred.kernel_value([1, 2], [3, 4], LIN) == 11

    def test_mismatch(self):
        with pytest.raises(ValidationError):
            dimred.kernel_value([1, 2], [1, 2, 3], LIN)

    def test_bad_sigma(self):
        with pytest.raises(ValidationError):
            KernelSpec("gaussian", 0.0)


class TestCenteredKernel:
    def test_duplicate_rows(self):
        X = fm([[1.0, 2.0], [1.0, 2.0]])
        K = dimred.kernel_matrix(X.values, X.values, KernelSpec("gaussian", 1.0))
        np.testing.assert_array_equal(K, np.ones((2, 2)))
        Kc, _ = dimred.build_centered_kernel(X, KernelSpec("gaussian", 1.0))
        np.testing.assert_allclose(Kc, 0, atol=1e-15)

    def test_double_centering_oracle(self, rng):
        X = rng.normal(size=(4, 2))
        spec = KernelSpec("gaussian", 0.9)
        K = np.array([[dimred.kernel_value(a, b, spec) for b in X] for a in X])
        H = np.eye(4) - np.ones((4, 4)) / 4
        Kc, _ = dimred.build_centered_kernel(X, spec)
        np.testing.assert_allclose(Kc, H @ K @ H, atol=1e-10)
        np.testing.assert_allclose(Kc.sum(axis=1), 0, atol=1e-8)
        np.testing.assert_allclose(Kc, Kc.T, atol=1e-10)


class TestFitProject:
    def test_linear_matches_pca(self, rng):
        X = rng.normal(size=(6, 3))
        X -= X.mean(axis=0)
        model = dimred.fit_kpca(X, LIN, 3)
        ours = dimred.project(model, X)
        ref, _ = pca_scores(X)
        np.testing.assert_allclose(align_signs(ours, ref), ref, atol=1e-8)

    def test_linear_matches_pca_new_points(self, rng):
        X = rng.normal(size=(10, 4)) * [3, 2, 1, 0.5]
        Xn = rng.normal(size=(5, 4))
        model = dimred.fit_kpca(X, LIN, 4)
        ref_train, _ = pca_scores(X)
        ref_new, _ = pca_scores(X, Xn)
        # sign fixed on training scores, then applied to new points
        s = np.sign(np.sum(dimred.project(model, X) * ref_train, axis=0))
        np.testing.assert_allclose(dimred.project(model, Xn) * s, ref_new, atol=1e-8)

    def test_duplicate_row_rank_deficient(self, rng):
        X = rng.normal(size=(5, 3))
        X[4] = X[0]
        model = dimred.fit_kpca(X, KernelSpec("gaussian", 1.0), 2)
        assert np.min(np.abs(model.all_eigenvalues)) < 1e-8

    def test_trace_identity(self, rng):
        X = rng.normal(size=(5, 3))
        spec = KernelSpec("gaussian", 1.5)
        model = dimred.fit_kpca(X, spec, 4)
        Kc, _ = dimred.build_centered_kernel(X, spec)
        assert model.eigenvalues.sum() == pytest.approx(np.trace(Kc), abs=1e-8)

    def test_coefficient_normalization(self, rng):
        X = rng.normal(size=(12, 3))
        spec = KernelSpec("gaussian", 1.0)
        model = dimred.fit_kpca(X, spec, 5)
        Kc, _ = dimred.build_centered_kernel(X, spec)
        for a in model.coefficients:
            assert a @ Kc @ a == pytest.approx(1.0, abs=1e-6)
        assert np.all(np.diff(model.eigenvalues) <= 0)

    def test_self_projection_is_scaled_eigenvectors(self, rng):
        X = rng.normal(size=(9, 3))
        spec = KernelSpec("gaussian", 1.2)
        model = dimred.fit_kpca(X, spec, 3)
        Kc, _ = dimred.build_centered_kernel(X, spec)
        evals, evecs = np.linalg.eigh(Kc)
        evals, evecs = evals[::-1][:3], evecs[:, ::-1][:, :3]
        expected = evecs * np.sqrt(evals)
        np.testing.assert_allclose(align_signs(dimred.project(model, X), expected), expected, atol=1e-8)

    def test_duplicate_of_row0(self, rng):
        X = rng.normal(size=(8, 3))
        model = dimred.fit_kpca(X, KernelSpec("gaussian", 1.0), 3)
        s = dimred.project(model, np.vstack([X[0], X[0]]))
        np.testing.assert_allclose(s[0], dimred.project(model, X)[0], atol=1e-8)

    def test_k_too_large(self, rng):
        with pytest.raises(ValidationError):
            dimred.fit_kpca(rng.normal(size=(5, 2)), LIN, 5)

    def test_column_mismatch(self, rng):
        model = dimred.fit_kpca(rng.normal(size=(5, 2)), LIN, 2)
        with pytest.raises(Exception, match="columns"):
            dimred.project(model, rng.normal(size=(3, 3)))

    def test_json_roundtrip(self, rng, tmp_path):
        X = fm(rng.normal(size=(7, 3)), kind="standardized")
        model = dimred.fit_kpca(X, KernelSpec("gaussian", 1.1), 3)
        model.save(tmp_path / "k.json")
        back = dimred.KernelModel.load(tmp_path / "k.json")
        np.testing.assert_array_equal(dimred.project(back, X), dimred.project(model, X))
        assert back.feature_names == X.feature_names


class TestExplainedVariance:
    def model_with(self, evals, full):
        m = dimred.fit_kpca(np.eye(3), LIN, 1)
        return dimred.KernelModel(m.spec, m.feature_names, m.training_rows, m.centering,
                                  np.array(evals, float), np.zeros((len(evals), 3)), np.array(full, float))

    def test_ratio(self):
        np.testing.assert_allclose(dimred.explained_variance_fractions(self.model_with([3, 1], [3, 1])), [0.75, 0.25])

    def test_scale_invariance(self):
        a = dimred.explained_variance_fractions(self.model_with([3, 1], [3, 1, 0.5]))
        b = dimred.explained_variance_fractions(self.model_with([30, 10], [30, 10, 5]))
        np.testing.assert_allclose(a, b)

    def test_rank_one(self):
        X = np.outer(np.arange(6.0), [1.0, 2.0])
        model = dimred.fit_kpca(X, LIN, 1)
        np.testing.assert_allclose(dimred.explained_variance_fractions(model), [1.0])

    def test_all_zero(self):
        with pytest.raises(NumericalError):
            dimred.explained_variance_fractions(self.model_with([0], [0, 0]))


class TestWeightedVariance:
    def test_uniform_weights(self, rng):
        X = rng.normal(size=(20, 3))
        np.testing.assert_allclose(dimred.feature_weighted_variance(X, np.full(20, 2.5)), X.var(axis=0))

    def test_hand(self):
        assert dimred.feature_weighted_variance(np.array([[0.0], [2.0]]), [1, 1])[0] == pytest.approx(1.0)

    def test_constant(self):
        assert dimred.feature_weighted_variance(np.full((4, 1), 3.0), [1, 2, 3, 4])[0] == 0

    def test_nonpositive_weight(self):
        with pytest.raises(ValidationError):
            dimred.feature_weighted_variance(np.ones((2, 1)), [1, 0])


class TestRelevance:
    def test_exact_copy(self, rng):
        a = rng.normal(size=50)
        X = np.column_stack([a, a, rng.normal(size=50)])
        r2 = dimred.relevance_r2(X).r2
        assert r2[0] == pytest.approx(1.0, abs=1e-9)
        assert r2[1] == pytest.approx(1.0, abs=1e-9)

    def test_noise(self):
        rng = np.random.default_rng(99)
        X = rng.normal(size=(500, 5))
        assert np.all(dimred.relevance_r2(X).r2 < 0.1)

    def test_closed_form_ols(self):
        x = [1.0, 2.0, 3.0, 4.0]
        y = [2 * v + e for v, e in zip(x, [0.1, -0.1, 0.1, -0.1])]
        mx, my = sum(x) / 4, sum(y) / 4
        sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
        sxx = sum((a - mx) ** 2 for a in x)
        slope = sxy / sxx
        icpt = my - slope * mx
        sse = sum((b - icpt - slope * a) ** 2 for a, b in zip(x, y))
        sst = sum((b - my) ** 2 for b in y)
        expected = 1 - sse / sst
        r2 = dimred.relevance_r2(np.column_stack([x, y])).r2
        assert r2[1] == pytest.approx(expected, abs=1e-12)

    def test_ridge_flag_for_partition(self, rng):
        p = rng.dirichlet(np.ones(3), size=30) * 100
        X = np.column_stack([p, p[:, :1] * 0.5 + rng.normal(size=(30, 1)), rng.normal(size=(30, 1))])
        res = dimred.relevance_r2(X)
        # the three partition members are exactly collinear with each other
        np.testing.assert_allclose(res.r2[:3], 1.0, atol=1e-6)
        assert res.ridge_flags[3]


class TestHopkins:
    def test_uniform_null(self):
        rng = np.random.default_rng(5)
        X = rng.uniform(size=(500, 5))
        vals = [dimred.hopkins(X, 0.1, s) for s in range(20)]
        assert abs(np.mean(vals) - 0.5) < 0.1

    def test_blobs(self):
        X, _ = make_blobs(n=300, m=5, spread=0.5)
        assert dimred.hopkins(X, 0.1, 0) >= 0.75

    def test_deterministic(self, rng):
        X = rng.normal(size=(50, 3))
        assert dimred.hopkins(X, 0.2, 7) == dimred.hopkins(X, 0.2, 7)

    def test_permutation_distribution(self):
        rng = np.random.default_rng(3)
        X, _ = make_blobs(n=150, m=3, spread=1.0)
        P = X[rng.permutation(len(X))]
        a = np.mean([dimred.hopkins(X, 0.1, s) for s in range(20)])
        b = np.mean([dimred.hopkins(P, 0.1, s) for s in range(20)])
        assert abs(a - b) < 0.05

    @pytest.mark.parametrize("frac", [0.0, 1.0, -0.1])
    def test_fraction_range(self, frac, rng):
        with pytest.raises(ValidationError):
            dimred.hopkins(rng.normal(size=(20, 2)), frac, 0)

    def test_too_few_rows(self, rng):
        with pytest.raises(ValidationError):
            dimred.hopkins(rng.normal(size=(9, 2)), 0.5, 0)


class TestSelect:
    names = ("b", "a", "c", "d")

    def test_select_all(self):
        rep = dimred.select_features(self.names, [1, 2, 3, 4], [0.1, 0.2, 0.3, 0.4], 4)
        assert rep.selected.all()

    def test_dominant_first(self):
        rep = dimred.select_features(self.names, [1, 1, 5, 1], [0.5, 0.5, 0.0, 0.5], 1)
        assert rep.selected_names == ["c"]

    def test_tie_break_by_name(self):
        rep = dimred.select_features(self.names, [1, 1, 1, 1], [0.5] * 4, 2)
        assert rep.selected_names == ["a", "b"]

    def test_count_range(self):
        with pytest.raises(ValidationError):
            dimred.select_features(self.names, [1] * 4, [0] * 4, 5)
        with pytest.raises(ValidationError):
            dimred.select_features(self.names, [1] * 4, [0] * 4, 0)

    def test_default_count_is_21(self):
        names = [f"f{i:02d}" for i in range(30)]
        rep = dimred.select_features(names, np.linspace(1, 2, 30), np.zeros(30))
        assert rep.selected.sum() == 21

    @settings(max_examples=50, deadline=None)
    @given(st.permutations(range(6)), st.integers(1, 6))
    def test_permutation_invariant(self, perm, count):
        names = [f"f{i}" for i in range(6)]
        wv = np.array([1.0, 2.0, 2.0, 0.5, 3.0, 1.0])
        r2 = np.array([0.1, 0.3, 0.3, 0.0, 0.9, 0.1])
        base = set(dimred.select_features(names, wv, r2, count).selected_names)
        p = list(perm)
        permuted = dimred.select_features([names[i] for i in p], wv[p], r2[p], count)
        assert set(permuted.selected_names) == base

    def test_csv_export(self, tmp_path):
        rep = dimred.select_features(self.names, [1, 2, 3, 4], [0.1, 0.2, 0.3, 0.4], 2, fractions=[0.6, 0.4])
        rep.write_csv(tmp_path / "s.csv")
        assert dimred.read_selected_features(tmp_path / "s.csv") == rep.selected_names


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(3, 20), st.integers(1, 8))
def test_gaussian_kernel_psd(seed, n, m):
    X = np.random.default_rng(seed).normal(size=(n, m))
    K = dimred.kernel_matrix(X, X, KernelSpec("gaussian", 1.0))
    assert np.linalg.eigvalsh(K).min() >= -1e-9
    Kc, _ = dimred.center_kernel(K)
    assert np.linalg.eigvalsh(Kc).min() >= -1e-9
