import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal
from scipy.interpolate import BSpline
from scipy.special import comb

from primeplm.errors import (
    InsufficientData,
    InvalidDegree,
    LengthMismatch,
    OutOfDomain,
)
from primeplm.spline import (
    BasisBlock,
    basis_matrix,
    center_block,
    eval_basis,
    make_spec,
)


def bernstein_row(x: float, d: int = 3) -> np.ndarray:
    """With no interior knots the basis reduces to Bernstein polynomials."""
    ls = np.arange(d + 1)
    return comb(d, ls) * x**ls * (1.0 - x) ** (d - ls)


def test_make_spec_default():
    spec = make_spec()
    assert spec.degree == 3
    assert spec.interior_knots == ()
    assert spec.basis_size == 4
    assert_array_equal(spec.knot_vector, [0, 0, 0, 0, 1, 1, 1, 1])


def test_make_spec_uniform_interior():
    spec = make_spec(3, 2)
    assert_allclose(spec.interior_knots, [1 / 3, 2 / 3])
    assert spec.basis_size == 6
    assert len(spec.knot_vector) == 10


def test_make_spec_degree_one():
    spec = make_spec(1, 0)
    assert spec.basis_size == 2
    assert_array_equal(spec.knot_vector, [0, 0, 1, 1])


def test_make_spec_quantile():
    data = np.concatenate([np.linspace(0, 0.2, 50), np.linspace(0.8, 1, 50)])
    spec = make_spec(3, 1, placement="quantile", data=data)
    assert spec.interior_knots == (pytest.approx(np.quantile(data, 0.5)),)
    with pytest.raises(InsufficientData):
        make_spec(3, 1, placement="quantile")
    with pytest.raises(InsufficientData):
        make_spec(3, 3, placement="quantile", data=np.full(50, 0.5))


def test_make_spec_invalid():
    with pytest.raises(InvalidDegree):
        make_spec(0, 0)
    with pytest.raises(InvalidDegree):
        make_spec(3, -1)
    with pytest.raises(InvalidDegree):
        make_spec(3, 0, placement="magic")


def test_bernstein_values_at_half():
    spec = make_spec()
    assert_allclose(eval_basis(spec, 0.5), [0.125, 0.375, 0.375, 0.125], atol=1e-15)
    x = np.linspace(0, 1, 101)
    B = basis_matrix(spec, x)
    expected = np.array([bernstein_row(v) for v in x])
    assert_allclose(B, expected, atol=1e-12)


def test_boundary_rows():
    for degree, interior in [(1, 0), (2, 1), (3, 0), (3, 4)]:
        spec = make_spec(degree, interior)
        first = eval_basis(spec, 0.0)
        last = eval_basis(spec, 1.0)
        assert first[0] == 1.0 and np.all(first[1:] == 0.0)
        assert last[-1] == 1.0 and np.all(last[:-1] == 0.0)


def test_partition_of_unity_bulk():
    rng = np.random.default_rng(11)
    for degree in (1, 2, 3, 4):
        for interior in (0, 1, 3, 7):
            spec = make_spec(degree, interior)
            x = rng.uniform(0, 1, size=2500)
            B = basis_matrix(spec, x)
            assert np.all(B >= 0.0) and np.all(B <= 1.0 + 1e-12)
            assert_allclose(B.sum(axis=1), 1.0, atol=1e-10)


@settings(deadline=None, max_examples=200)
@given(
    x=st.floats(min_value=0.0, max_value=1.0, allow_nan=False),
    degree=st.integers(min_value=1, max_value=5),
    interior=st.integers(min_value=0, max_value=6),
)
def test_partition_of_unity_hypothesis(x, degree, interior):
    spec = make_spec(degree, interior)
    row = eval_basis(spec, x)
    assert row.sum() == pytest.approx(1.0, abs=1e-10)
    assert np.all(row >= 0.0)


def test_matches_scipy_design_matrix():
    rng = np.random.default_rng(5)
    for degree in (1, 2, 3, 4):
        for interior in (0, 2, 5):
            spec = make_spec(degree, interior)
            x = np.concatenate([rng.uniform(0, 1, 400), [0.0, 1.0], spec.interior_knots])
            ours = basis_matrix(spec, x)
            theirs = BSpline.design_matrix(
                x, np.asarray(spec.knot_vector), degree, extrapolate=False
            ).toarray()
            assert_allclose(ours, theirs, atol=1e-12)


def test_local_support():
    spec = make_spec(3, 4)
    t = np.asarray(spec.knot_vector)
    x = np.linspace(0, 1, 801)
    B = basis_matrix(spec, x)
    for l in range(spec.basis_size):
        lo, hi = t[l], t[l + spec.degree + 1]
        outside = (x < lo - 1e-12) | (x > hi + 1e-12)
        assert np.all(B[outside, l] == 0.0)


def test_greville_linear_reproduction():
    for degree in (1, 2, 3, 4):
        for interior in (0, 3, 6):
            spec = make_spec(degree, interior)
            t = np.asarray(spec.knot_vector)
            greville = np.array([
                t[l + 1 : l + degree + 1].mean() for l in range(spec.basis_size)
            ])
            x = np.linspace(0, 1, 257)
            B = basis_matrix(spec, x)
            assert_allclose(B @ greville, x, atol=1e-10)


def test_out_of_domain():
    spec = make_spec()
    with pytest.raises(OutOfDomain):
        eval_basis(spec, -0.1)
    with pytest.raises(OutOfDomain):
        basis_matrix(spec, np.array([0.2, 1.1]))
    with pytest.raises(OutOfDomain):
        basis_matrix(spec, np.array([0.2, np.nan]))


def test_eval_basis_matches_matrix():
    spec = make_spec(2, 3)
    for v in (0.0, 0.31, 0.5, 0.99, 1.0):
        assert_array_equal(eval_basis(spec, v), basis_matrix(spec, np.array([v]))[0])


def test_center_block_two_rows():
    block = BasisBlock(matrix=np.array([[1.0, 0.0], [0.0, 1.0]]))
    centered = center_block(block)
    assert_allclose(centered.matrix, [[0.5, -0.5], [-0.5, 0.5]])
    assert_allclose(centered.column_means, [0.5, 0.5])
    assert centered.centered
    # idempotent: centering a centered block changes nothing
    again = center_block(centered)
    assert_array_equal(again.matrix, centered.matrix)
    assert_array_equal(again.column_means, centered.column_means)


def test_center_block_external_means():
    block = BasisBlock(matrix=np.array([[1.0, 2.0], [3.0, 4.0]]))
    centered = center_block(block, means=np.array([1.0, 1.0]))
    assert_allclose(centered.matrix, [[0.0, 1.0], [2.0, 3.0]])
    with pytest.raises(LengthMismatch):
        center_block(block, means=np.zeros(3))


def test_centered_columns_mean_zero():
    rng = np.random.default_rng(2)
    spec = make_spec(3, 2)
    B = basis_matrix(spec, rng.uniform(0, 1, 50))
    centered = center_block(BasisBlock(matrix=B))
    assert_allclose(centered.matrix.mean(axis=0), 0.0, atol=1e-14)
