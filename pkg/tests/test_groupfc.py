import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import degrofc_loops, group_fc_loops, softmax2
from transdeno.groupfc import (
    DeGroFc,
    GroupFc,
    blend_weights,
    coefficients,
    degrofc_forward,
    group_fc_forward,
    init_degrofc,
    init_group_fc,
    offsets,
)


def make_layer(rng, in_len=16, out_len=16, counts=(2, 4, 8), convention="paper"):
    return init_degrofc(in_len, out_len, counts, rng, convention, np.float64)


def constant_branches(layer, values):
    """Zero weights, biases chosen so branch j outputs values[j] for every input."""
    for br, v in zip(layer.branches, values):
        br.weight[:] = 0
        br.bias[:] = np.asarray(v, dtype=float).reshape(br.bias.shape)


def with_coefficients(layer, K):
    layer.coeff_weight[:] = 0
    layer.coeff_bias[:] = K
    return layer


# -- grouped FC ---------------------------------------------------------------

def test_single_group_is_dense(rng):
    p = init_group_fc(6, 5, 1, rng, np.float64)
    x = rng.normal(size=6)
    np.testing.assert_allclose(group_fc_forward(x, p), p.weight[0] @ x + p.bias[0], atol=1e-14)


def test_identity_blocks():
    p = GroupFc(np.stack([np.eye(2), np.eye(2)]), np.zeros((2, 2)))
    x = np.array([1.0, -2.0, 3.0, 0.5])
    np.testing.assert_array_equal(group_fc_forward(x, p), x)


def test_perturbation_stays_in_group(rng):
    p = init_group_fc(4, 4, 2, rng, np.float64)
    x = rng.normal(size=4)
    y0 = group_fc_forward(x, p)
    x[0] += 1.0
    d = group_fc_forward(x, p) - y0
    assert np.all(d[:2] != 0) and np.all(d[2:] == 0)


def test_matches_loop_oracle(rng):
    p = init_group_fc(12, 6, 3, rng, np.float64)
    x = rng.normal(size=12)
    np.testing.assert_allclose(group_fc_forward(x, p), group_fc_loops(x, p.weight, p.bias), atol=1e-13)


@pytest.mark.parametrize("n", [1, 2, 4, 8, 16])
def test_jacobian_block_diagonal(rng, n):
    p = init_group_fc(32, 16, n, rng, np.float64)
    x = rng.normal(size=32)
    y0 = group_fc_forward(x, p)
    jac = np.empty((16, 32))
    for j in range(32):
        e = np.zeros(32)
        e[j] = 1.0
        jac[:, j] = group_fc_forward(x + e, p) - y0
    mask = np.kron(np.eye(n), np.ones((16 // n, 32 // n))).astype(bool)
    assert np.all(jac[~mask] == 0)
    np.testing.assert_allclose(jac, p.dense(), atol=1e-12)


def test_group_fc_rejects_bad_shapes(rng):
    with pytest.raises(ValueError):
        init_group_fc(6, 4, 4, rng)
    p = init_group_fc(4, 4, 2, rng)
    with pytest.raises(ValueError):
        group_fc_forward(np.zeros(5), p)


# -- coefficients and offsets -------------------------------------------------

def test_coefficients_constant_bias(rng):
    layer = with_coefficients(make_layer(rng), [0.0, 1.3, 2.0])
    for _ in range(3):
        np.testing.assert_array_equal(coefficients(rng.normal(size=16), layer), [0.0, 1.3, 2.0])


def test_coefficients_clamp(rng):
    layer = make_layer(rng, counts=(2, 4, 8, 16))
    with_coefficients(layer, [-3.7, 9.2, 0.5, 3.0])
    np.testing.assert_array_equal(coefficients(np.zeros(16), layer), [0.0, 3.0, 0.5, 3.0])


def test_coefficients_match_loop_oracle(rng):
    layer = make_layer(rng)
    layer.coeff_weight *= 5
    s = rng.normal(size=16)
    expected = []
    for i in range(layer.k):
        raw = layer.coeff_bias[i] + sum(layer.coeff_weight[i, t] * s[t] for t in range(16))
        expected.append(min(max(raw, 0.0), layer.k - 1))
    np.testing.assert_allclose(coefficients(s, layer), expected, atol=1e-13)


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1))
def test_coefficients_in_range(seed):
    r = np.random.default_rng(seed)
    layer = make_layer(r)
    layer.coeff_weight *= r.uniform(0, 50)
    K = coefficients(r.normal(size=16) * 10, layer)
    assert np.all((K >= 0) & (K <= layer.k - 1))


def test_offsets_examples():
    assert offsets(2.0) == (0.5, 0.5)
    op, oq = offsets(1.25)
    ep, eq = softmax2(0.25, 0.75)
    assert math.isclose(op, ep, rel_tol=1e-12) and math.isclose(oq, eq, rel_tol=1e-12)
    assert math.isclose(op, 0.3775, abs_tol=5e-5) and math.isclose(oq, 0.6225, abs_tol=5e-5)


@given(st.floats(0, 15, allow_nan=False))
def test_offsets_sum_to_one(K):
    op, oq = offsets(K)
    assert op >= 0 and oq >= 0
    assert math.isclose(op + oq, 1.0, rel_tol=1e-15)


def test_offsets_reject_out_of_range():
    with pytest.raises(ValueError):
        offsets(-0.1)
    with pytest.raises(ValueError):
        offsets(3.5, k=4)
    with pytest.raises(ValueError):
        offsets(float("nan"))


def test_blend_conventions_swap_weights():
    lo, hi, wl, wh = blend_weights(np.array([1.25]), "paper")
    lo2, hi2, wl2, wh2 = blend_weights(np.array([1.25]), "standard")
    assert (lo[0], hi[0]) == (lo2[0], hi2[0]) == (1, 2)
    assert wl[0] == wh2[0] and wh[0] == wl2[0]
    # standard leans towards the nearer branch (floor at 1.25)
    assert wl2[0] > wh2[0]


# -- deformable layer ---------------------------------------------------------

@pytest.mark.parametrize("convention", ["paper", "standard"])
def test_integer_coefficients_select_single_branch(rng, convention):
    layer = make_layer(rng, counts=(2, 4, 8, 16), convention=convention)
    with_coefficients(layer, [2.0] * 4)
    x = rng.normal(size=16)
    np.testing.assert_allclose(degrofc_forward(x, x, layer), group_fc_forward(x, layer.branches[2]),
                               atol=1e-14)
    assert layer.group_counts[2] == 8


def test_single_candidate(rng):
    layer = make_layer(rng, counts=(4,))
    layer.coeff_weight *= 10
    x = rng.normal(size=16)
    np.testing.assert_allclose(degrofc_forward(x, x, layer), group_fc_forward(x, layer.branches[0]),
                               atol=1e-14)


def test_half_coefficient_averages_neighbours(rng):
    layer = with_coefficients(make_layer(rng, counts=(2, 4)), [0.5, 0.5])
    u, v = rng.normal(size=(2, 16))
    constant_branches(layer, [u, v])
    x = rng.normal(size=16)
    np.testing.assert_allclose(degrofc_forward(x, x, layer), (u + v) / 2, atol=1e-14)


@pytest.mark.parametrize("convention", ["paper", "standard"])
def test_matches_straight_line_oracle(rng, convention):
    layer = make_layer(rng, convention=convention)
    layer.coeff_weight *= 4
    x = rng.normal(size=16)
    s = rng.normal(size=16)
    np.testing.assert_allclose(degrofc_forward(x, s, layer), degrofc_loops(x, s, layer), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_equal_branches_give_that_branch(seed):
    r = np.random.default_rng(seed)
    layer = make_layer(r, counts=(2, 4))
    layer.coeff_weight *= r.uniform(0, 20)
    c = r.normal(size=16)
    constant_branches(layer, [c, c])
    x = r.normal(size=16)
    np.testing.assert_allclose(degrofc_forward(x, x, layer), c, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_each_term_is_convex_combination(seed):
    r = np.random.default_rng(seed)
    layer = make_layer(r, counts=(2, 4, 8, 16))
    with_coefficients(layer, r.uniform(0, 3, size=4))
    u = r.normal(size=(4, 16))
    constant_branches(layer, u)
    x = r.normal(size=16)
    y = degrofc_forward(x, x, layer)
    # a mean of convex combinations stays inside the per-slot hull of branch outputs
    assert np.all(y <= u.max(axis=0) + 1e-12) and np.all(y >= u.min(axis=0) - 1e-12)
    _, _, wl, wh = blend_weights(coefficients(x, layer))
    assert np.all(wl >= 0) and np.all(wh >= 0)
    np.testing.assert_allclose(wl + wh, 1, rtol=1e-15)


@pytest.mark.parametrize("convention", ["paper", "standard"])
def test_jump_at_integer_coefficient(rng, convention):
    """Characterises the blend at an integer crossing.

    The softmax weights tend to (e, 1) / (1 + e) on either side of an integer,
    not to (1, 0), so the output steps when K crosses an integer.
    """
    layer = make_layer(rng, counts=(2, 4, 8), convention=convention)
    u = rng.normal(size=(3, 16))
    constant_branches(layer, u)
    x = np.zeros(16)
    big = math.e / (1 + math.e)
    small = 1 - big

    def at(K):
        return degrofc_forward(x, x, with_coefficients(layer, [K] * 3))

    left, mid, right = at(1 - 1e-9), at(1.0), at(1 + 1e-9)
    if convention == "paper":
        np.testing.assert_allclose(left, big * u[0] + small * u[1], atol=1e-8)
        np.testing.assert_allclose(right, small * u[1] + big * u[2], atol=1e-8)
    else:
        np.testing.assert_allclose(left, small * u[0] + big * u[1], atol=1e-8)
        np.testing.assert_allclose(right, big * u[1] + small * u[2], atol=1e-8)
    np.testing.assert_allclose(mid, u[1], atol=1e-15)


def test_degrofc_validation(rng):
    layer = make_layer(rng)
    with pytest.raises(ValueError):
        degrofc_forward(np.zeros(15), np.zeros(16), layer)
    with pytest.raises(ValueError):
        degrofc_forward(np.zeros(16), np.zeros(3), layer)
    with pytest.raises(ValueError):
        DeGroFc((4, 2), layer.coeff_weight[:2], layer.coeff_bias[:2], layer.branches[:2])
    with pytest.raises(ValueError):
        DeGroFc(layer.group_counts, layer.coeff_weight, layer.coeff_bias, layer.branches, "bilinear")


def test_init_starts_mid_range(rng):
    layer = init_degrofc(64, 16, (2, 4, 8, 16), rng)
    np.testing.assert_array_equal(layer.coeff_bias, 1.5)
    bound = 1 / math.sqrt(64 // 2)
    assert np.all(np.abs(layer.branches[0].weight) <= bound)
