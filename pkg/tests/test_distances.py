import numpy as np
import pytest

from twinpuzzle.distances import MEASURES, distance, pairwise, rowwise_with_grad


class TestScalar:
    def test_cosine_identical_vectors(self):
        v = np.array([0.3, -1.2, 4.0])
        assert abs(distance(v, v, "cosine")) < 1e-12

    def test_l2_345(self):
        assert distance([0.0, 0.0], [3.0, 4.0], "l2") == pytest.approx(5.0)

    def test_l1_and_l3(self):
        assert distance([1.0, 2.0], [4.0, 0.0], "l1") == pytest.approx(5.0)
        assert distance([1.0, 2.0], [4.0, 0.0], "l3") == pytest.approx(35.0 ** (1 / 3))

    def test_cosine_zero_vector_rejected(self):
        with pytest.raises(ValueError):
            distance([0.0, 0.0], [1.0, 0.0], "cosine")

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError):
            distance([1.0], [1.0, 2.0], "l2")

    def test_unknown_measure_rejected(self):
        with pytest.raises(ValueError):
            distance([1.0], [1.0], "l7")


class TestProperties:
    @pytest.mark.parametrize("measure", ["l1", "l2", "l3"])
    def test_lp_identity_and_symmetry(self, measure):
        rng = np.random.default_rng(0)
        for _ in range(50):
            a = rng.standard_normal(8)
            b = rng.standard_normal(8)
            assert distance(a, a, measure) == 0.0
            assert distance(a, b, measure) == pytest.approx(distance(b, a, measure))
            assert distance(a, b, measure) >= 0.0

    def test_l2_triangle_inequality(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            a, b, c = rng.standard_normal((3, 6))
            assert distance(a, c, "l2") <= distance(a, b, "l2") + distance(b, c, "l2") + 1e-12

    def test_cosine_scale_invariance(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            a = rng.standard_normal(5)
            b = rng.standard_normal(5)
            alpha, beta = rng.random(2) * 10 + 0.1
            assert distance(a * alpha, b * beta, "cosine") == pytest.approx(
                distance(a, b, "cosine"), abs=1e-6)

    def test_cosine_range(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            a = rng.standard_normal(4)
            d = distance(a, rng.standard_normal(4), "cosine")
            assert -1e-12 <= d <= 2.0 + 1e-12


class TestPairwise:
    @pytest.mark.parametrize("measure", MEASURES)
    def test_matches_scalar(self, measure):
        rng = np.random.default_rng(4)
        left = rng.standard_normal((7, 5))
        right = rng.standard_normal((9, 5))
        mat = pairwise(left, right, measure)
        for i in range(7):
            for j in range(9):
                assert mat[i, j] == pytest.approx(distance(left[i], right[j], measure),
                                                  rel=1e-9, abs=1e-12)


class TestGradients:
    @pytest.mark.parametrize("measure", MEASURES)
    def test_rowwise_matches_fd(self, measure):
        rng = np.random.default_rng(5)
        za = rng.standard_normal((6, 5)).astype(np.float32)
        zb = rng.standard_normal((6, 5)).astype(np.float32)
        d, ga, gb = rowwise_with_grad(za, zb, measure)
        for r in range(6):
            assert d[r] == pytest.approx(distance(za[r], zb[r], measure), abs=1e-4)
        h = 1e-3
        for r in range(0, 6, 2):
            for k in range(5):
                for tensor, grad in ((za, ga), (zb, gb)):
                    orig = tensor[r, k]
                    tensor[r, k] = orig + h
                    up = distance(za[r], zb[r], measure)
                    tensor[r, k] = orig - h
                    down = distance(za[r], zb[r], measure)
                    tensor[r, k] = orig
                    num = (up - down) / (2 * h)
                    assert grad[r, k] == pytest.approx(num, abs=2e-3)

    def test_l2_zero_distance_subgradient(self):
        z = np.ones((1, 4), np.float32)
        d, ga, gb = rowwise_with_grad(z, z.copy(), "l2")
        assert d[0] == 0.0
        assert np.all(ga == 0.0) and np.all(gb == 0.0)
