"""
Unit tests for metrics module
"""
import numpy as np
import pytest

from src.config import MetricsConfig, PenaltyConfig
from src.metrics import MetricError, MetricsReport, activeness, evaluate, path_length, vp_score
from src.synthetic import BlockCopyGenerator, ConstantGenerator, LinearGenerator
from src.tensor import precision


class TestVariationPredictability:
    """Test cases for the VP score"""

    def test_block_copy_is_predictable(self):
        """Test that a generator copying each z_i into its own band scores near 1"""
        result = vp_score(BlockCopyGenerator(4, 16), n_pairs=1000, epochs=10, seed=0, repeats=1)

        assert result.accuracy > 0.95
        assert len(result.accuracies) == 1

    def test_constant_generator_near_chance(self):
        """Test that identical differences leave the classifier at chance"""
        result = vp_score(ConstantGenerator(4, 16), n_pairs=1000, epochs=2, seed=0, repeats=2)

        assert result.accuracy < 0.4
        assert result.std >= 0.0

    def test_minimum_pairs(self):
        """Test that fewer than 1000 pairs are refused"""
        with pytest.raises(ValueError) as exc_info:
            vp_score(BlockCopyGenerator(4, 16), n_pairs=999, epochs=1, seed=0)

        assert "1000" in str(exc_info.value)

    def test_non_image_generator(self):
        """Test that flat outputs are reported as a metric error"""
        g = LinearGenerator(np.eye(3))

        with pytest.raises(MetricError):
            vp_score(g, n_pairs=1000, epochs=1, seed=0, repeats=1)


class TestActiveness:
    """Test cases for per-dimension activeness"""

    def test_dead_column_scores_zero(self):
        """Test that a dimension with no effect is inactive"""
        weight = np.random.default_rng(0).standard_normal((10, 3))
        weight[:, 1] = 0.0
        scores = activeness(LinearGenerator(weight), 32, 8, np.random.default_rng(1))

        assert scores[1] == 0.0
        assert scores[0] > 0 and scores[2] > 0

    def test_linear_scores_scale_quadratically(self):
        """Test var(values) * mean(w_i^2) for a linear map"""
        base = np.random.default_rng(0).standard_normal(10)
        weight = np.stack([base, 2 * base, 3 * base], axis=1)
        with precision("float64"):
            scores = activeness(LinearGenerator(weight), 32, 16, np.random.default_rng(1))

        expected = np.var(np.linspace(-2.0, 2.0, 16)) * np.mean(base ** 2)
        assert scores[0] == pytest.approx(expected, rel=1e-6)
        assert scores[1] / scores[0] == pytest.approx(4.0, rel=1e-6)
        assert scores[2] / scores[0] == pytest.approx(9.0, rel=1e-6)

    def test_constant_generator_inactive(self):
        """Test that every dimension of a constant generator scores zero"""
        scores = activeness(ConstantGenerator(3, 8), 32, 8, np.random.default_rng(0))

        np.testing.assert_array_equal(scores, np.zeros(3))

    @pytest.mark.parametrize("n_z,n_steps", [(31, 8), (32, 7)])
    def test_minimum_counts(self, n_z, n_steps):
        """Test the sample count floors"""
        with pytest.raises(ValueError):
            activeness(BlockCopyGenerator(2, 8), n_z, n_steps, np.random.default_rng(0))


class TestPathLength:
    """Test cases for the pixel path length"""

    def test_identity_map_measures_latent_distance(self):
        """Test that G(z) = z gives ||z2 - z1||^2 for a fixed pair"""
        z1 = np.array([0.5, -1.0, 2.0])
        z2 = np.array([1.5, 0.0, -1.0])
        with precision("float64"):
            value = path_length(LinearGenerator(np.eye(3)), 16, 1e-3, np.random.default_rng(0), pairs=(z1, z2))

        assert value == pytest.approx(float(np.sum((z2 - z1) ** 2)), rel=1e-6)

    def test_constant_generator_has_zero_length(self):
        """Test that a constant generator has no path length"""
        value = path_length(ConstantGenerator(3, 8), 64, 1e-2, np.random.default_rng(0))

        assert value == 0.0

    def test_outlier_rejection_keeps_bulk(self):
        """Test that filtering leaves a linear generator's value in range"""
        g = LinearGenerator(np.random.default_rng(0).standard_normal((6, 3)))
        with precision("float64"):
            raw = path_length(g, 500, 1e-3, np.random.default_rng(1))
            filtered = path_length(g, 500, 1e-3, np.random.default_rng(1), reject_outliers=True)

        assert filtered > 0
        assert filtered <= raw * 1.5

    def test_epsilon_must_be_positive(self):
        """Test that a zero step is refused"""
        with pytest.raises(ValueError) as exc_info:
            path_length(ConstantGenerator(3, 8), 4, 0.0, np.random.default_rng(0))

        assert "t_epsilon" in str(exc_info.value)


class TestMetricsReport:
    """Test cases for the evaluation summary"""

    def make_report(self, scores):
        return MetricsReport(
            vp_accuracy=0.9,
            vp_std=0.01,
            vp_accuracies=[0.89, 0.91],
            activeness=scores,
            path_length=12.0,
            path_length_filtered=11.0,
            penalty_per_layer=[0.5, 0.25],
        )

    def test_ranking_and_deactivation(self):
        """Test ordering by activeness and the one-tenth threshold"""
        report = self.make_report([1.0, 0.05, 0.5, 0.0])

        assert report.activeness_ranking == [0, 2, 1, 3]
        assert report.deactivated == [1, 3]

    def test_all_zero_has_nothing_deactivated(self):
        """Test that a dead generator does not report every dimension deactivated"""
        assert self.make_report([0.0, 0.0]).deactivated == []

    def test_to_dict_and_summary(self):
        """Test the JSON fields and summary rows"""
        report = self.make_report([1.0, 0.05])
        data = report.to_dict()

        assert data["deactivated_dimensions"] == [1]
        assert data["activeness_ranking"] == [0, 1]
        assert data["path_length_pixel"] == 12.0
        rows = dict(report.summary_rows())
        assert rows["deactivated_count"] == 1
        assert rows["penalty_l2"] == 0.25


class TestEvaluate:
    """Test cases for the combined evaluation"""

    def test_block_copy_report(self):
        """Test every field on a generator with orthogonal bands"""
        config = MetricsConfig(vp_pairs=1000, vp_epochs=2, vp_repeats=1, activeness_nz=32,
                               activeness_steps=8, ppl_paths=50, probe_batch=8)
        report = evaluate(BlockCopyGenerator(4, 16), config, PenaltyConfig(layers=[1]), seed=5)

        assert report.seeds == {"vp": 5, "activeness": 6, "path_length": 7, "probe": 8}
        assert report.sample_counts["vp_pairs"] == 1000
        assert len(report.activeness) == 4
        assert report.deactivated == []
        assert report.penalty_per_layer[0] == pytest.approx(0.0, abs=1e-8)
        assert report.path_length > 0
