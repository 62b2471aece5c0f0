import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from peohoi import numcore as nc
from peohoi.errors import DimensionError
from peohoi.objective import cb_focal_loss, class_balanced_weights, total_loss


@pytest.fixture(autouse=True)
def _f64():
    with nc.precision("f64"):
        yield


def focal_oracle(p, y, counts, beta, gamma):
    """Loop-form focal loss, independent of the vectorised implementation."""
    B, L = p.shape
    total = 0.0
    for i in range(B):
        for l in range(L):
            n = max(counts[l], 1)
            cb = 1.0 if beta == 0 else (1 - beta) / (1 - beta ** n)
            pt = p[i, l] if y[i, l] else 1 - p[i, l]
            total += cb * (1 - pt) ** gamma * math.log(pt)
    return -total / B


class TestClassBalanced:
    @given(st.floats(0.0, 0.9999))
    def test_single_sample_weight_is_one(self, beta):
        assert class_balanced_weights([1], beta)[0] == pytest.approx(1.0, rel=1e-12)

    def test_example(self):
        assert class_balanced_weights([2], 0.5)[0] == pytest.approx(2 / 3, abs=1e-12)

    @given(st.floats(0.01, 0.99), st.integers(1, 500))
    def test_strictly_decreasing(self, beta, n):
        w = class_balanced_weights([n, n + 1], beta)
        # identical in floating point once beta**n underflows below eps
        assert w[0] > w[1] or beta ** n < 1e-15

    @pytest.mark.parametrize("beta", [0.5, 0.9, 0.99])
    def test_limit(self, beta):
        assert class_balanced_weights([10**6], beta)[0] == pytest.approx(1 - beta, rel=1e-9)

    def test_zero_counts_floor(self):
        w = class_balanced_weights([0, 1], 0.9)
        assert w[0] == w[1] == pytest.approx(1.0)


class TestFocal:
    def test_plain_bce(self):
        loss = cb_focal_loss(np.array([[0.5]]), np.array([[1.0]]), [1], beta_cb=0.9, gamma=0.0)
        assert loss.item() == pytest.approx(0.6931, abs=1e-4)

    def test_hand_product(self):
        loss = cb_focal_loss(np.array([[0.5]]), np.array([[1.0]]), [2], beta_cb=0.5, gamma=2.0)
        assert loss.item() == pytest.approx(0.1155, abs=1e-3)
        assert loss.item() == pytest.approx((2 / 3) * 0.25 * math.log(2), rel=1e-12)

    def test_negative_target(self):
        loss = cb_focal_loss(np.array([[0.2]]), np.array([[0.0]]), [1], beta_cb=0.0, gamma=1.0)
        assert loss.item() == pytest.approx(-0.2 * math.log(0.8), rel=1e-12)

    @pytest.mark.parametrize("gamma", [0.0, 0.5, 2.0])
    @pytest.mark.parametrize("beta", [0.0, 0.9, 0.999])
    def test_against_loop_oracle(self, gamma, beta, rng):
        p = rng.uniform(0.02, 0.98, size=(5, 7))
        y = rng.uniform(size=(5, 7)) < 0.3
        counts = rng.integers(0, 40, size=7)
        loss = cb_focal_loss(p, y.astype(float), counts, beta, gamma).item()
        assert loss == pytest.approx(focal_oracle(p, y, counts, beta, gamma), rel=1e-10)

    @given(st.floats(0.01, 0.99), st.floats(0.0, 5.0), st.floats(0.0, 5.0))
    def test_focusing_reduces_loss(self, p, g1, g2):
        lo, hi = sorted((g1, g2))
        a = cb_focal_loss(np.array([[p]]), np.array([[1.0]]), [1], 0.0, lo).item()
        b = cb_focal_loss(np.array([[p]]), np.array([[1.0]]), [1], 0.0, hi).item()
        assert 0 <= b <= a + 1e-15

    def test_saturation_is_finite(self):
        loss = cb_focal_loss(np.array([[0.0, 1.0]]), np.array([[1.0, 0.0]]), [3, 3], 0.9, 2.0)
        assert np.isfinite(loss.item())

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            cb_focal_loss(np.full((2, 3), 0.5), np.zeros((2, 3)), [1, 2], 0.9, 2.0)


class TestTotal:
    def test_arithmetic(self):
        assert total_loss(nc.Tensor(1.0), nc.Tensor(0.5), 0.8).item() == pytest.approx(1.4, abs=1e-12)

    @given(st.floats(0, 100), st.floats(0, 100))
    def test_lambda_zero(self, lf, lp):
        assert total_loss(nc.Tensor(lf), nc.Tensor(lp), 0.0).item() == lf
