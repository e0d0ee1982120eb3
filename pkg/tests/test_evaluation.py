import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import roi_scores_loops
from pfeddl.dataio import SyntheticSpec, devectorize_lower_triangle, generate_synthetic_federation, triangle_size
from pfeddl.dl_core import ClassifierWeights, Hyperparams, pretrain_local
from pfeddl.errors import ConfigurationError, ShapeError
from pfeddl.evaluation import (
    ExperimentConfig,
    accuracy,
    encode_test_samples,
    kfold_split,
    predict,
    roi_importance,
    run_experiment,
)


class TestKFold:
    def test_even(self):
        split = kfold_split([8], 4, seed=0)
        assert [len(te) for _, te in split.sites[0]] == [2, 2, 2, 2]

    def test_remainder(self):
        split = kfold_split([10], 4, seed=0)
        assert [len(te) for _, te in split.sites[0]] == [3, 3, 2, 2]

    def test_seeded(self):
        a, b = kfold_split([10, 7], 3, seed=4), kfold_split([10, 7], 3, seed=4)
        for sa, sb in zip(a.sites, b.sites):
            for (tra, tea), (trb, teb) in zip(sa, sb):
                np.testing.assert_array_equal(tra, trb)
                np.testing.assert_array_equal(tea, teb)

    @given(st.lists(st.integers(4, 60), min_size=1, max_size=4), st.integers(2, 4), st.integers(0, 1000))
    def test_partition(self, sizes, folds, seed):
        split = kfold_split(sizes, folds, seed)
        for n, site in zip(sizes, split.sites):
            tests = np.concatenate([te for _, te in site])
            np.testing.assert_array_equal(np.sort(tests), np.arange(n))
            for tr, te in site:
                assert np.intersect1d(tr, te).size == 0
                assert tr.size + te.size == n
            lens = [te.size for _, te in site]
            assert max(lens) - min(lens) <= 1

    def test_single_fold_rejected(self):
        with pytest.raises(ConfigurationError):
            kfold_split([10], 1)

    def test_too_few_samples(self):
        with pytest.raises(ConfigurationError):
            kfold_split([3], 4)


class TestEncode:
    def test_single_atom(self, rng):
        D = rng.standard_normal((20, 6))
        D /= np.linalg.norm(D, axis=0)
        S = encode_test_samples(D, D[:, [4]], Hyperparams(eta=0.1, lambda2=0.001, k=6, g=0), max_iter=5000)
        assert int(np.argmax(np.abs(S[:, 0]))) == 4

    def test_total_shrinkage(self, rng):
        D = rng.standard_normal((10, 4))
        D /= np.linalg.norm(D, axis=0)
        S = encode_test_samples(D, rng.standard_normal((10, 5)), Hyperparams(eta=0.1, lambda2=1e6, k=4, g=0))
        np.testing.assert_array_equal(S, np.zeros((4, 5)))

    def test_training_data_consistency(self):
        spec = SyntheticSpec(d=24, k_true=6, g_true=3, n_sites=1, n_per_site=80, sparsity=2, seed=2)
        (X, _), = generate_synthetic_federation(spec)[0]
        hyper = Hyperparams(lambda2=0.02, lambda4=0.1, eta=0.05, k=6, g=3, iters_pretrain=1500)
        D, S_train = pretrain_local(X, hyper, np.random.default_rng(0))
        S = encode_test_samples(D, X, hyper)
        assert np.linalg.norm(X - D @ S) <= 2 * np.linalg.norm(X - D @ S_train)

    def test_dimension_mismatch(self, rng):
        with pytest.raises(ShapeError):
            encode_test_samples(np.zeros((5, 2)), np.zeros((4, 3)), Hyperparams(k=2, g=0))


class TestPredictAccuracy:
    def test_zero_classifier_predicts_one(self):
        np.testing.assert_array_equal(predict(ClassifierWeights.zeros(3), np.ones((3, 4))), [1, 1, 1, 1])

    def test_huge_bias(self, rng):
        clf = ClassifierWeights(rng.standard_normal(3), 1e6)
        np.testing.assert_array_equal(predict(clf, rng.standard_normal((3, 5))), np.ones(5))

    def test_negative_logit(self):
        clf = ClassifierWeights(np.array([1.0, 0.0]), -0.3)
        assert predict(clf, np.array([[0.2], [5.0]]))[0] == 0

    @settings(max_examples=30)
    @given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3))
    def test_positive_rescaling(self, seed, c):
        rng = np.random.default_rng(seed)
        clf = ClassifierWeights(rng.standard_normal(4), float(rng.standard_normal()))
        S = rng.standard_normal((4, 20))
        scaled = ClassifierWeights(clf.w * c, clf.b * c)
        z = clf.w @ S + clf.b
        keep = np.abs(z) > 1e-9
        np.testing.assert_array_equal(predict(scaled, S)[keep], predict(clf, S)[keep])

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            predict(ClassifierWeights.zeros(3), np.ones((2, 4)))

    def test_accuracy_cases(self):
        y = np.array([0, 1, 1, 0])
        assert accuracy(y, y) == 1.0
        assert accuracy(1 - y, y) == 0.0
        assert accuracy(np.array([0, 1, 1, 1]), y) == 0.75

    @given(st.lists(st.integers(0, 1), min_size=1, max_size=30), st.integers(0, 1000))
    def test_accuracy_symmetry(self, a, seed):
        a = np.array(a)
        b = np.random.default_rng(seed).integers(0, 2, a.size)
        assert accuracy(a, b) == accuracy(b, a) == accuracy(1 - a, 1 - b)

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            accuracy(np.zeros(3), np.zeros(4))


class TestRoi:
    def test_single_edge_atom(self):
        m, k = 5, 3
        D = np.zeros((triangle_size(m), k))
        D[5, 1] = 0.8  # pair (3, 1) in column-stacked order
        w = np.array([0.0, -2.0, 0.0])
        res = roi_importance(D, ClassifierWeights(w), m)
        expected = np.zeros(m)
        expected[[1, 3]] = 1.6
        np.testing.assert_array_equal(res.scores, expected)
        assert devectorize_lower_triangle(D[:, 1], m)[3, 1] == 0.8
        assert list(res.top_rois[:2]) == [1, 3]

    def test_zero_weights(self, rng):
        D = rng.standard_normal((10, 4))
        res = roi_importance(D, ClassifierWeights.zeros(4), 5)
        np.testing.assert_array_equal(res.scores, np.zeros(5))
        np.testing.assert_array_equal(res.top_rois, np.arange(5))

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_loop_oracle(self, seed):
        rng = np.random.default_rng(seed)
        D = rng.standard_normal((10, 6))
        w = rng.standard_normal(6)
        res = roi_importance(D, ClassifierWeights(w), 5, top_atoms=3)
        scores, order = roi_scores_loops(D, w, 5, 3)
        np.testing.assert_allclose(res.scores, scores, rtol=1e-14, atol=0)
        assert list(res.top_atoms) == order

    def test_scale_invariance(self, rng):
        D = rng.standard_normal((15, 7))
        w = rng.standard_normal(7)
        base = roi_importance(D, ClassifierWeights(w), 6, top_atoms=4)
        scaled = roi_importance(D, ClassifierWeights(3.0 * w), 6, top_atoms=4)
        np.testing.assert_allclose(scaled.scores, 3.0 * base.scores, rtol=1e-14)
        np.testing.assert_array_equal(scaled.top_rois, base.top_rois)

    def test_unselected_atoms_do_not_matter(self, rng):
        D = rng.standard_normal((10, 6))
        w = np.array([3.0, 0.1, -2.0, 0.2, 0.05, 1.0])
        base = roi_importance(D, ClassifierWeights(w), 5, top_atoms=3)
        D2 = D.copy()
        D2[:, [1, 3, 4]] = D2[:, [4, 1, 3]]
        w2 = w.copy()
        w2[[1, 3, 4]] = w2[[4, 1, 3]]
        np.testing.assert_array_equal(roi_importance(D2, ClassifierWeights(w2), 5, top_atoms=3).scores, base.scores)

    def test_signed_variant_nonnegative(self, rng):
        res = roi_importance(rng.standard_normal((10, 4)), ClassifierWeights(rng.standard_normal(4)), 5, signed=True)
        assert np.all(res.scores >= 0)

    def test_not_triangular(self, rng):
        with pytest.raises(ShapeError):
            roi_importance(rng.standard_normal((8, 3)), ClassifierWeights.zeros(3))


class TestExperiment:
    def test_shuffled_labels_near_chance(self):
        spec = SyntheticSpec(d=20, k_true=6, g_true=3, n_sites=4, n_per_site=100, sparsity=2, seed=11)
        sites, _ = generate_synthetic_federation(spec)
        rng = np.random.default_rng(7)
        shuffled = [(X, rng.permutation(Y)) for X, Y in sites]
        hyper = Hyperparams(lambda2=0.02, lambda3=0.001, lambda4=0.1, eta=0.05, k=6, g=3,
                            iters_local=10, iters_fed=10, iters_pretrain=300)
        report = run_experiment(shuffled, ExperimentConfig(hyper=hyper, retrain_full=False))
        assert abs(report.mean_accuracy - 0.5) <= 0.1
        assert report.accuracy_table.shape == (4, 4)

    def test_roi_attached_for_triangular_features(self):
        spec = SyntheticSpec(d=15, k_true=4, g_true=2, n_sites=2, n_per_site=24, sparsity=1, seed=1)
        sites, _ = generate_synthetic_federation(spec)
        hyper = Hyperparams(lambda2=0.02, lambda3=0.001, lambda4=0.1, eta=0.05, k=4, g=2,
                            iters_local=2, iters_fed=2, iters_pretrain=50)
        report = run_experiment(sites, ExperimentConfig(hyper=hyper, folds=2, top_atoms=2, top_rois=3))
        assert len(report.roi) == 2
        assert all(r.scores.shape == (6,) and r.top_rois.shape == (3,) for r in report.roi)

    def test_non_triangular_features_noted(self):
        spec = SyntheticSpec(d=8, k_true=3, g_true=1, n_sites=2, n_per_site=12, sparsity=1)
        sites, _ = generate_synthetic_federation(spec)
        hyper = Hyperparams(eta=0.05, k=3, g=1, iters_local=1, iters_fed=1, iters_pretrain=10)
        report = run_experiment(sites, ExperimentConfig(hyper=hyper, folds=2))
        assert report.roi is None
        assert any("ROI importance skipped" in n for n in report.notes)

    def test_one_fold_rejected(self):
        sites = [(np.zeros((4, 8)), np.zeros(8, int))]
        with pytest.raises(ConfigurationError):
            run_experiment(sites, ExperimentConfig(hyper=Hyperparams(k=2, g=1), folds=1))
