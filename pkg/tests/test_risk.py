"""Gaussian risk engine: fitting, log densities, posteriors, kNN, persistence."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cytonet import risk
from cytonet.errors import NumericError, ShapeError, ValidationError
from oracles import gaussian_pdf_direct

# closed forms frozen ahead of time:
#   log N(0 | 0, 1)          = -0.5 * log(2*pi)
#   two-class 1-d posterior  = 1 / (1 + exp(-2))
LOG_STD_NORMAL_AT_MEAN = -0.9189385332046727
TWO_CLASS_POSTERIOR = 0.8807970779778823
# -0.5 * (2 log 2pi + log 4 + 2) for x=(1,2), mu=0, cov=diag(1,4)
DIAG_EXAMPLE_LOGPDF = -3.5310242469692907


def two_gaussians(mu0, mu1, var=1.0):
    cfg = risk.RiskConfig()
    classes = [
        risk.ClassStatistics(0, 10, np.atleast_1d(mu0), np.atleast_2d(var)),
        risk.ClassStatistics(1, 10, np.atleast_1d(mu1), np.atleast_2d(var)),
    ]
    return risk.RiskModel(classes=classes, config=cfg)


class TestFit:
    def test_hand_covariance(self):
        """Samples (0,0) and (2,2): mean (1,1), unbiased cov [[2,2],[2,2]]."""
        x = np.array([[0.0, 0.0], [2.0, 2.0]])
        model = risk.fit_class_statistics(x, np.array([0, 0]))
        s = model.classes[0]
        np.testing.assert_allclose(s.mean, [1.0, 1.0])
        ridge_term = model.config.ridge * 2.0 * np.eye(2)  # trace/d = 2
        np.testing.assert_allclose(s.cov - ridge_term, [[2.0, 2.0], [2.0, 2.0]], atol=1e-12)

    def test_identical_samples_pure_ridge(self):
        """Zero spread collapses to exactly ridge * I."""
        x = np.tile([3.0, -4.0], (5, 1))
        model = risk.fit_class_statistics(x, np.zeros(5, dtype=np.int64))
        np.testing.assert_array_equal(model.classes[0].cov, model.config.ridge * np.eye(2))

    def test_covariance_symmetric(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(40, 6))
        model = risk.fit_class_statistics(x, np.zeros(40, dtype=np.int64))
        cov = model.classes[0].cov
        assert np.max(np.abs(cov - cov.T)) == 0.0

    def test_inverse_consistency(self):
        """Cached inverse satisfies cov_inv @ cov = I within 1e-8."""
        rng = np.random.default_rng(1)
        x = rng.normal(size=(60, 8))
        model = risk.fit_class_statistics(x, np.zeros(60, dtype=np.int64))
        s = model.classes[0]
        np.testing.assert_allclose(s.cov_inv @ s.cov, np.eye(8), atol=1e-8)

    def test_log_det_matches_slogdet(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(30, 4))
        model = risk.fit_class_statistics(x, np.zeros(30, dtype=np.int64))
        s = model.classes[0]
        sign, want = np.linalg.slogdet(s.cov)
        assert sign == 1.0
        assert s.log_det == pytest.approx(want, abs=1e-10)

    def test_single_sample_class_rejected(self):
        x = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]])
        with pytest.raises(ValidationError):
            risk.fit_class_statistics(x, np.array([0, 0, 1]))

    def test_non_integer_labels_rejected(self):
        with pytest.raises(ValidationError):
            risk.fit_class_statistics(np.zeros((4, 2)), np.array([0.0, 0.0, 1.0, 1.0]))

    def test_classes_sorted_ascending(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(12, 2))
        labels = np.array([4, 4, 4, 0, 0, 0, 2, 2, 2, 4, 0, 2])
        model = risk.fit_class_statistics(x, labels)
        assert model.class_ids == [0, 2, 4]

    def test_non_positive_definite_rejected(self):
        with pytest.raises(NumericError):
            risk.ClassStatistics(0, 2, np.zeros(2), np.array([[1.0, 2.0], [2.0, 1.0]]))


class TestLogGaussianPdf:
    def test_standard_normal_at_mean(self):
        s = risk.ClassStatistics(0, 2, np.zeros(1), np.eye(1))
        assert risk.log_gaussian_pdf(np.zeros(1), s) == pytest.approx(
            LOG_STD_NORMAL_AT_MEAN, abs=1e-12
        )

    def test_at_mean_mahalanobis_vanishes(self):
        rng = np.random.default_rng(4)
        a = rng.normal(size=(3, 3))
        cov = a @ a.T + 3 * np.eye(3)
        mean = rng.normal(size=3)
        s = risk.ClassStatistics(0, 2, mean, cov)
        want = -0.5 * (3 * risk.LOG_2PI + s.log_det)
        assert risk.log_gaussian_pdf(mean, s) == pytest.approx(want, abs=1e-10)

    def test_diagonal_closed_form(self):
        """x=(1,2), mu=0, cov=diag(1,4) evaluates the frozen closed form."""
        s = risk.ClassStatistics(0, 2, np.zeros(2), np.diag([1.0, 4.0]))
        got = risk.log_gaussian_pdf(np.array([1.0, 2.0]), s)
        assert got == pytest.approx(DIAG_EXAMPLE_LOGPDF, abs=1e-12)

    def test_matches_direct_density(self):
        """exp(log pdf) equals the no-log-space formula within 1e-10 relative."""
        rng = np.random.default_rng(5)
        for d in (1, 2, 3):
            a = rng.normal(size=(d, d))
            cov = a @ a.T + d * np.eye(d)
            mean = rng.normal(size=d)
            s = risk.ClassStatistics(0, 2, mean, cov)
            for _ in range(10):
                x = rng.normal(size=d) * 2
                want = gaussian_pdf_direct(x, mean, cov)
                got = math.exp(risk.log_gaussian_pdf(x, s))
                assert got == pytest.approx(want, rel=1e-10)

    def test_dim_mismatch_rejected(self):
        s = risk.ClassStatistics(0, 2, np.zeros(2), np.eye(2))
        with pytest.raises(ShapeError):
            risk.log_gaussian_pdf(np.zeros(3), s)


class TestPosterior:
    def test_identical_classes_split_evenly(self):
        model = two_gaussians(0.0, 0.0)
        np.testing.assert_allclose(risk.posterior(np.zeros(1), model), [0.5, 0.5], atol=1e-12)

    def test_two_class_closed_form(self):
        """mu = 0 and 2, sigma = 1, x = 0: P(C0) = 1/(1+e^-2)."""
        model = two_gaussians(0.0, 2.0)
        p = risk.posterior(np.zeros(1), model)
        assert p[0] == pytest.approx(TWO_CLASS_POSTERIOR, abs=1e-9)

    def test_sums_to_one(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(40, 3))
        labels = np.repeat(np.arange(4), 10)
        model = risk.fit_class_statistics(x, labels)
        for _ in range(20):
            p = risk.posterior(rng.normal(size=3) * 3, model)
            assert p.sum() == pytest.approx(1.0, abs=1e-9)
            assert (p >= 0).all()

    def test_likelihood_scaling_invariance(self):
        """Adding a constant to all log likelihoods changes nothing."""
        ll = np.array([-3.0, -1.0, -2.0])
        base = risk.posterior_from_log_likelihoods(ll)
        shifted = risk.posterior_from_log_likelihoods(ll + 123.0)
        np.testing.assert_allclose(base, shifted, atol=1e-12)

    def test_empirical_priors_weight_larger_class(self):
        x = np.concatenate([np.zeros((8, 1)), np.ones((2, 1))])
        y = np.array([0] * 8 + [1] * 2)
        cfg = risk.RiskConfig(priors="empirical")
        model = risk.fit_class_statistics(x + 1e-3 * np.arange(10)[:, None], y, cfg)
        lp = model.log_priors()
        np.testing.assert_allclose(np.exp(lp), [0.8, 0.2], atol=1e-12)

    def test_underflow_robustness_far_query(self):
        """d=64, |x - mu| = 50: posteriors stay normalized and finite."""
        rng = np.random.default_rng(7)
        cfg = risk.RiskConfig()
        classes = [
            risk.ClassStatistics(i, 10, rng.normal(size=64), np.eye(64)) for i in range(5)
        ]
        model = risk.RiskModel(classes=classes, config=cfg)
        direction = rng.normal(size=64)
        direction /= np.linalg.norm(direction)
        x = model.classes[0].mean + 50.0 * direction
        p = risk.posterior(x, model)
        assert np.isfinite(p).all()
        assert p.sum() == pytest.approx(1.0, abs=1e-9)

    def test_non_finite_log_likelihood_rejected(self):
        with pytest.raises(NumericError):
            risk.posterior_from_log_likelihoods(np.array([0.0, np.nan]))


class TestPredictClass:
    def test_self_mean_with_separated_classes(self):
        rng = np.random.default_rng(8)
        means = np.eye(4) * 12.0
        classes = [risk.ClassStatistics(i, 5, means[i], np.eye(4)) for i in range(4)]
        model = risk.RiskModel(classes=classes, config=risk.RiskConfig())
        for k in range(4):
            assert risk.predict_class(means[k], model) == k

    def test_identical_classes_tie_to_lowest_id(self):
        model = two_gaussians(1.0, 1.0)
        assert risk.predict_class(np.array([0.3]), model) == 0

    def test_matches_brute_force_argmax(self):
        """Random 2-d problems agree with exhaustive log-likelihood comparison."""
        rng = np.random.default_rng(9)
        for _ in range(30):
            x = rng.normal(size=(24, 2)) + rng.normal(scale=3, size=2)
            labels = np.repeat([0, 1], 12)
            x[12:] += rng.normal(scale=2, size=2)
            model = risk.fit_class_statistics(x, labels)
            q = rng.normal(scale=2.5, size=2)
            want = int(np.argmax([risk.log_gaussian_pdf(q, s) for s in model.classes]))
            assert risk.predict_class(q, model) == model.classes[want].class_id

    def test_identity_covariance_is_nearest_mean(self):
        """With cov = I, prediction equals the closest-mean oracle."""
        rng = np.random.default_rng(10)
        means = rng.normal(scale=4, size=(5, 3))
        classes = [risk.ClassStatistics(i, 5, means[i], np.eye(3)) for i in range(5)]
        model = risk.RiskModel(classes=classes, config=risk.RiskConfig())
        for _ in range(50):
            q = rng.normal(scale=4, size=3)
            want = int(np.argmin(((means - q) ** 2).sum(axis=1)))
            assert risk.predict_class(q, model) == want


class TestCosineSimilarity:
    def test_orthogonal(self):
        assert risk.cosine_similarity([1, 0], [0, 1]) == pytest.approx(0.0, abs=1e-12)

    def test_parallel_scaled(self):
        assert risk.cosine_similarity([1, 1], [2, 2]) == pytest.approx(1.0, abs=1e-12)

    def test_antiparallel(self):
        assert risk.cosine_similarity([1, 0], [-1, 0]) == pytest.approx(-1.0, abs=1e-12)

    def test_zero_vector_rejected(self):
        with pytest.raises(ValidationError):
            risk.cosine_similarity([0.0, 0.0], [1.0, 0.0])

    @given(
        st.floats(min_value=0.1, max_value=50.0),
        st.floats(min_value=0.1, max_value=50.0),
        st.integers(min_value=0, max_value=10_000),
    )
    @settings(max_examples=40, deadline=None)
    def test_scale_invariance_property(self, alpha, beta, seed):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=6) + 0.01
        b = rng.normal(size=6) + 0.01
        plain = risk.cosine_similarity(a, b)
        scaled = risk.cosine_similarity(alpha * a, beta * b)
        assert scaled == pytest.approx(plain, abs=1e-9)
        assert risk.cosine_similarity(a, a) == pytest.approx(1.0, abs=1e-9)
        assert -1.0 - 1e-12 <= plain <= 1.0 + 1e-12


class TestAssessRisk:
    def separated_model(self):
        rng = np.random.default_rng(12)
        means = 10.0 * np.eye(3) + 1.0
        classes = [risk.ClassStatistics(i, 8, means[i], np.eye(3)) for i in range(3)]
        return risk.RiskModel(classes=classes, config=risk.RiskConfig())

    def test_self_mean_report(self):
        model = self.separated_model()
        mu1 = model.classes[1].mean
        report = risk.assess_risk(mu1, model)
        assert report.predicted_class == 1
        assert report.cosines[1] == pytest.approx(1.0, abs=1e-12)
        assert 1 in report.high_risk
        assert sum(report.posteriors.values()) == pytest.approx(1.0, abs=1e-9)

    def test_matches_component_calls(self):
        """The report is exactly the composition of the four component ops."""
        model = self.separated_model()
        rng = np.random.default_rng(13)
        x = rng.normal(size=3) + 4.0
        report = risk.assess_risk(x, model)
        p = risk.posterior(x, model)
        np.testing.assert_allclose([report.posteriors[i] for i in range(3)], p, atol=1e-15)
        assert report.predicted_class == risk.predict_class(x, model)
        for i, s in enumerate(model.classes):
            assert report.cosines[i] == pytest.approx(
                risk.cosine_similarity(x, s.mean), abs=1e-15
            )
        want_high = [
            i for i in range(3) if report.cosines[i] > model.config.cosine_threshold
        ]
        assert report.high_risk == want_high

    def test_high_risk_is_strict_inequality(self):
        """A cosine exactly at the threshold is not flagged."""
        cfg = risk.RiskConfig(cosine_threshold=0.0)
        classes = [
            risk.ClassStatistics(0, 4, np.array([1.0, 0.0]), np.eye(2)),
            risk.ClassStatistics(1, 4, np.array([0.0, 1.0]), np.eye(2)),
        ]
        model = risk.RiskModel(classes=classes, config=cfg)
        report = risk.assess_risk(np.array([1.0, 0.0]), model)
        # cosine to class 1 mean is exactly 0.0: not above the threshold
        assert report.high_risk == [0]

    def test_to_dict_layout(self):
        model = self.separated_model()
        report = risk.assess_risk(model.classes[0].mean, model)
        d = report.to_dict(sample_id="cell_0001")
        assert list(d)[0] == "id"
        assert set(d) == {"id", "predicted", "posteriors", "cosine", "high_risk"}
        assert all(isinstance(k, str) for k in d["posteriors"])


class TestKnn:
    def test_exact_duplicate_k1(self):
        train = np.array([[0.0, 0.0], [5.0, 5.0], [9.0, 0.0]])
        labels = np.array([2, 0, 1])
        assert risk.knn_predict(train, labels, np.array([5.0, 5.0]), 1) == 0

    def test_separated_clusters_perfect(self):
        rng = np.random.default_rng(14)
        train = np.concatenate([rng.normal(size=(20, 2)), rng.normal(size=(20, 2)) + 30])
        test = np.concatenate([rng.normal(size=(8, 2)), rng.normal(size=(8, 2)) + 30])
        train_y = np.repeat([0, 1], 20)
        test_y = np.repeat([0, 1], 8)
        result = risk.knn_feature_eval(train, train_y, test, test_y, k=3)
        assert result.accuracy == 1.0

    def test_k_equals_train_size_votes_majority(self):
        train = np.array([[0.0], [1.0], [2.0], [10.0]])
        labels = np.array([1, 1, 1, 0])
        for q in (-5.0, 0.5, 50.0):
            assert risk.knn_predict(train, labels, np.array([q]), 4) == 1

    def test_vote_tie_breaks_by_nearest_member(self):
        train = np.array([[1.0], [2.0], [3.0], [4.0]])
        labels = np.array([7, 3, 7, 3])
        # k=4: both classes hold two votes; class 7 owns the closest point
        assert risk.knn_predict(train, labels, np.array([0.0]), 4) == 7
        # mirrored query: now class 3 owns the closest point
        assert risk.knn_predict(train, labels, np.array([5.0]), 4) == 3

    def test_k_out_of_range_rejected(self):
        train = np.zeros((3, 2))
        labels = np.array([0, 1, 0])
        with pytest.raises(ValidationError):
            risk.knn_feature_eval(train, labels, np.zeros((1, 2)), np.array([0]), k=4)
        with pytest.raises(ValidationError):
            risk.knn_feature_eval(train, labels, np.zeros((1, 2)), np.array([0]), k=0)


class TestPersistence:
    def test_feature_records_round_trip(self, tmp_path):
        rng = np.random.default_rng(15)
        records = [
            risk.FeatureRecord(id=f"s{i}", label=i % 3, values=rng.normal(size=8))
            for i in range(6)
        ]
        path = tmp_path / "features.jsonl"
        risk.save_feature_records(records, path)
        loaded = risk.load_feature_records(path)
        assert [r.id for r in loaded] == [r.id for r in records]
        assert [r.label for r in loaded] == [r.label for r in records]
        for a, b in zip(loaded, records):
            np.testing.assert_array_equal(a.values, b.values)

    def test_empty_feature_file_rejected(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        with pytest.raises(ValidationError):
            risk.load_feature_records(path)

    def test_inconsistent_dims_rejected(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text(
            '{"id": "a", "label": 0, "features": [1.0, 2.0]}\n'
            '{"id": "b", "label": 1, "features": [1.0]}\n'
        )
        with pytest.raises(ValidationError):
            risk.load_feature_records(path)

    def test_missing_key_rejected(self, tmp_path):
        path = tmp_path / "nokey.jsonl"
        path.write_text('{"id": "a", "label": 0}\n')
        with pytest.raises(ValidationError):
            risk.load_feature_records(path)

    def test_risk_model_round_trip(self, tmp_path):
        rng = np.random.default_rng(16)
        x = rng.normal(size=(30, 4))
        labels = np.repeat([0, 1, 2], 10)
        model = risk.fit_class_statistics(x, labels)
        path = tmp_path / "stats.json"
        risk.save_risk_model(model, path)
        loaded = risk.load_risk_model(path)
        assert loaded.class_ids == model.class_ids
        q = rng.normal(size=4)
        np.testing.assert_allclose(
            risk.posterior(q, loaded), risk.posterior(q, model), atol=1e-12
        )
        for a, b in zip(loaded.classes, model.classes):
            np.testing.assert_array_equal(a.mean, b.mean)
            np.testing.assert_array_equal(a.cov, b.cov)

    def test_version_mismatch_rejected(self, tmp_path):
        path = tmp_path / "v2.json"
        path.write_text('{"format_version": 2}')
        with pytest.raises(ValidationError):
            risk.load_risk_model(path)


class TestRiskConfig:
    def test_defaults_valid(self):
        cfg = risk.RiskConfig().validate()
        assert cfg.ridge == 1e-6
        assert cfg.cosine_threshold == 0.65
        assert cfg.priors == "equal"

    def test_invalid_values_rejected(self):
        with pytest.raises(ValidationError):
            risk.RiskConfig(ridge=0.0).validate()
        with pytest.raises(ValidationError):
            risk.RiskConfig(cosine_threshold=1.0).validate()
        with pytest.raises(ValidationError):
            risk.RiskConfig(priors="uniform").validate()
