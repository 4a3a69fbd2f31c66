import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gndv.numeric import RandomSource, ShapeError, elementwise, gaussian_sample, matmul


class TestMatmul:
    def test_identity(self, np_rng):
        M = np_rng.normal(size=(2, 2))
        np.testing.assert_array_equal(matmul(np.eye(2), M), M)

    def test_hand_value(self):
        np.testing.assert_array_equal(matmul([[1, 2], [3, 4]], [[5], [6]]), [[17], [39]])

    def test_zero(self, np_rng):
        np.testing.assert_array_equal(matmul(np.zeros((3, 2)), np_rng.normal(size=(2, 4))), np.zeros((3, 4)))

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            matmul(np.ones((2, 3)), np.ones((2, 3)))

    def test_associativity_and_distributivity(self, np_rng):
        for _ in range(20):
            A, B, C = (np_rng.normal(size=s) for s in [(4, 5), (5, 3), (3, 6)])
            np.testing.assert_allclose(matmul(matmul(A, B), C), matmul(A, matmul(B, C)), rtol=1e-9, atol=1e-12)
            B2 = np_rng.normal(size=(4, 5))
            np.testing.assert_allclose(matmul(A + B2, B), matmul(A, B) + matmul(B2, B), rtol=1e-9, atol=1e-12)


class TestElementwise:
    def test_mul_ones(self, np_rng):
        M = np_rng.normal(size=(3, 4))
        np.testing.assert_array_equal(elementwise(M, np.ones((3, 4)), "mul"), M)

    def test_add(self):
        np.testing.assert_array_equal(elementwise([[1, 2]], [[3, 4]], "add"), [[4, 6]])

    def test_sub_self(self, np_rng):
        M = np_rng.normal(size=(3, 4))
        np.testing.assert_array_equal(elementwise(M, M, "sub"), np.zeros((3, 4)))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            elementwise(np.ones((2, 2)), np.ones((2, 3)), "add")


class TestRandomSource:
    def test_determinism(self):
        a = gaussian_sample(RandomSource(7), 5, 6)
        b = gaussian_sample(RandomSource(7), 5, 6)
        assert a.tobytes() == b.tobytes()

    def test_different_seeds_differ(self):
        assert not np.array_equal(gaussian_sample(RandomSource(1), 4, 4), gaussian_sample(RandomSource(2), 4, 4))

    def test_moments_of_a_million_draws(self):
        z = gaussian_sample(RandomSource(2024), 1000, 1000)
        assert abs(z.mean()) <= 0.01
        assert 0.99 <= z.var() <= 1.01

    def test_rows_cols_validated(self):
        with pytest.raises(ValueError):
            gaussian_sample(RandomSource(0), 0, 3)

    def test_odd_request_uses_stream_prefix(self):
        np.testing.assert_array_equal(RandomSource(5).normal(7), RandomSource(5).normal(8)[:7])

    def test_uniform_range(self):
        u = RandomSource(3).uniform(10000)
        assert u.min() >= 0.0 and u.max() < 1.0

    def test_fork_is_deterministic_and_advances_parent(self):
        parent = RandomSource(11)
        child = parent.fork()
        assert parent.counter == 1
        assert RandomSource(11).fork().next_u64() == child.next_u64()

    @settings(max_examples=30, deadline=None)
    @given(bound=st.integers(1, 2 ** 63))
    def test_integer_below_in_range(self, bound):
        x = RandomSource(bound).integer_below(bound)
        assert 0 <= x < bound

    def test_permutation_uniformity(self):
        # each of the 6 orders of 3 items should appear about 1/6 of the time
        rng = RandomSource(99)
        counts = {}
        for _ in range(6000):
            key = tuple(rng.permutation(3))
            counts[key] = counts.get(key, 0) + 1
        assert len(counts) == 6
        assert all(850 < c < 1150 for c in counts.values())
