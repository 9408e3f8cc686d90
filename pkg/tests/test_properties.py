"""Property-based checks of the algebra the whole rewrite rests on."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lnfold.centering import Family, center_columns, center_grouped_columns, is_centered
from lnfold.graph_ir import NODE_KINDS, NodeClass, classify_node
from lnfold.tensor_math import group_norm, layer_norm, rms_norm

EPS_M = float(np.finfo(np.float64).eps)

finite = st.floats(-2.0, 2.0, allow_nan=False, allow_infinity=False, width=64)


def matrices(max_m=12, max_n=8):
    return st.tuples(st.integers(2, max_m), st.integers(1, max_n)).flatmap(
        lambda mn: arrays(np.float64, mn, elements=finite)
    )


def vectors(min_n=2, max_n=32):
    return st.integers(min_n, max_n).flatmap(
        lambda n: arrays(np.float64, (n,), elements=finite)
    )


class TestCenteringAlgebra:
    @given(matrices())
    def test_idempotent(self, W):
        once = center_columns(W)
        np.testing.assert_allclose(center_columns(once), once, atol=4 * EPS_M)

    @given(matrices())
    def test_constraint_satisfied(self, W):
        assert is_centered(center_columns(W), Family.LINEAR_COLUMNS, tol=1e-9)

    @given(matrices(max_m=12), st.sampled_from([1, 2, 3]))
    def test_grouped_reduces_to_plain(self, W, groups):
        m = W.shape[0] - W.shape[0] % groups
        if m < groups:
            return
        W = W[:m]
        if groups == 1:
            np.testing.assert_allclose(
                center_grouped_columns(W, 1), center_columns(W), atol=1e-12
            )
        else:
            if W.shape[0] == groups:
                return  # one-element groups warn and zero the matrix
            centered = center_grouped_columns(W, groups)
            assert is_centered(centered, Family.GROUPED_COLUMNS, groups, tol=1e-9)


class TestNormalizationAlgebra:
    @given(vectors())
    def test_layer_norm_output_is_zero_mean(self, x):
        # The centering residual is rounding-scale in the input, then gets
        # divided by sqrt(var + eps); near-constant inputs amplify it by
        # 1/sqrt(eps), so the bound carries that factor.
        eps = 1e-5
        y = layer_norm(x, eps=eps)
        scale = max(1.0, float(np.abs(x).max())) / np.sqrt(x.var() + eps)
        assert abs(y.mean()) <= 8 * x.shape[0] * EPS_M * scale

    @given(vectors())
    def test_rms_equals_ln_on_centered_input(self, x):
        x = x - x.mean()
        x = x - x.mean()
        diff = np.abs(layer_norm(x, 1e-5) - rms_norm(x, 1e-5)).max()
        assert diff <= 4 * EPS_M

    @given(vectors())
    def test_group_norm_with_one_group_is_layer_norm(self, x):
        np.testing.assert_array_equal(group_norm(x, 1, eps=1e-5), layer_norm(x, eps=1e-5))

    @given(vectors(), st.floats(0.1, 3.0))
    def test_scalar_scale_invariance_of_ln_with_zero_eps(self, x, a):
        if np.ptp(x) < 1e-3:
            return  # stay away from the zero-variance singularity
        np.testing.assert_allclose(
            layer_norm(a * x, eps=0.0), layer_norm(x, eps=0.0), atol=1e-9
        )


class TestClassification:
    @settings(max_examples=len(NODE_KINDS))
    @given(st.sampled_from(sorted(NODE_KINDS)))
    def test_total_and_single_valued(self, kind):
        assert classify_node(kind) in NodeClass
