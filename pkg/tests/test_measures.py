import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from otcoherent.errors import (
    DegenerateEpsilonError,
    DimensionMismatchError,
    EmptyInputError,
    ParseError,
    ZeroMassError,
)
from otcoherent.measures import (
    DiscreteMeasure,
    cost_matrix,
    epsilon_heuristic,
    load_snapshot,
    mask_zero_atoms,
    normalize,
    save_snapshot,
)


def _write(tmp_path, text, name="m.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_load_uniform_default(tmp_path):
    m = load_snapshot(_write(tmp_path, "x,y\n0,0\n1,0\n"))
    assert m.points.shape == (2, 2)
    np.testing.assert_array_equal(m.weights, [0.5, 0.5])


def test_load_weight_column(tmp_path):
    m = load_snapshot(_write(tmp_path, "x,w\n0,3\n1,1\n"))
    np.testing.assert_array_equal(m.points[:, 0], [0, 1])
    np.testing.assert_array_equal(m.weights, [3, 1])


def test_load_indexed_header(tmp_path):
    m = load_snapshot(_write(tmp_path, "x0,x1,x2,weight\n0,0,0,1\n1,2,3,2\n"))
    assert m.dim == 3
    np.testing.assert_array_equal(m.weights, [1, 2])


def test_load_empty(tmp_path):
    with pytest.raises(EmptyInputError):
        load_snapshot(_write(tmp_path, ""))
    with pytest.raises(EmptyInputError):
        load_snapshot(_write(tmp_path, "x,y\n", "h.csv"))


def test_load_bad_number_reports_line(tmp_path):
    with pytest.raises(ParseError) as exc:
        load_snapshot(_write(tmp_path, "x,y\n0,0\n1,abc\n"))
    assert exc.value.line == 3


def test_load_ragged_row(tmp_path):
    with pytest.raises(DimensionMismatchError):
        load_snapshot(_write(tmp_path, "x,y\n0,0\n1\n"))


def test_load_bad_header(tmp_path):
    with pytest.raises(ParseError):
        load_snapshot(_write(tmp_path, "a,b\n0,0\n"))


def test_save_roundtrip(tmp_path, rng):
    m = DiscreteMeasure(rng.random((5, 2)), rng.random(5))
    save_snapshot(tmp_path / "s.csv", m)
    back = load_snapshot(tmp_path / "s.csv")
    np.testing.assert_array_equal(back.points, m.points)
    np.testing.assert_array_equal(back.weights, m.weights)


def test_negative_weight_rejected():
    with pytest.raises(ValueError):
        DiscreteMeasure(np.zeros((2, 1)), [1.0, -0.5])


def test_normalize_examples():
    m = DiscreteMeasure([[0.0], [1.0]], [3.0, 1.0])
    np.testing.assert_allclose(normalize(m).weights, [0.75, 0.25])
    one = DiscreteMeasure([[0.0]], [1.0])
    np.testing.assert_array_equal(normalize(one).weights, [1.0])
    with pytest.raises(ZeroMassError):
        normalize(DiscreteMeasure([[0.0], [1.0]], [0.0, 0.0]))


def test_mask_zero_atoms():
    m = DiscreteMeasure([[0.0], [1.0], [2.0]], [0.5, 0.0, 0.5])
    k = mask_zero_atoms(m)
    np.testing.assert_array_equal(k.weights, [0.5, 0.5])
    np.testing.assert_array_equal(k.index_map, [0, 2])
    full = DiscreteMeasure([[0.0], [1.0]], [0.2, 0.8])
    kept = mask_zero_atoms(full)
    np.testing.assert_array_equal(kept.weights, full.weights)
    np.testing.assert_array_equal(kept.index_map, [0, 1])
    with pytest.raises(ZeroMassError):
        mask_zero_atoms(DiscreteMeasure([[0.0]], [0.0]))


def test_cost_matrix_examples():
    c = cost_matrix(DiscreteMeasure([[0.0]], [1.0]), DiscreteMeasure([[0.0], [1.0]], [0.5, 0.5]))
    np.testing.assert_array_equal(np.asarray(c), [[0, 1]])
    m = DiscreteMeasure([[0.0, 0.0], [3.0, 4.0]], [0.5, 0.5])
    np.testing.assert_allclose(np.asarray(cost_matrix(m, m)), [[0, 25], [25, 0]])
    with pytest.raises(DimensionMismatchError):
        cost_matrix(DiscreteMeasure(np.zeros((1, 2)), [1.0]), DiscreteMeasure(np.zeros((1, 3)), [1.0]))


def test_epsilon_heuristic_examples():
    two = DiscreteMeasure([[0.0], [3.0]], [0.5, 0.5])
    assert epsilon_heuristic(two) == pytest.approx(2.0)
    three = DiscreteMeasure([[0.0], [1.0], [2.0]], np.full(3, 1 / 3))
    assert epsilon_heuristic(three) == pytest.approx(2 * (4 / 9) ** 2)
    with pytest.raises(DegenerateEpsilonError):
        epsilon_heuristic(DiscreteMeasure([[1.0], [1.0]], [0.5, 0.5]))


weights_st = arrays(np.float64, st.integers(1, 12),
                    elements=st.floats(0.0, 1e3, allow_nan=False, allow_subnormal=False))


@given(weights_st)
@settings(max_examples=200, deadline=None)
def test_normalize_idempotent(w):
    if not w.sum() > 0:
        return
    m = DiscreteMeasure(np.zeros((len(w), 1)), w)
    once = normalize(m)
    twice = normalize(once)
    np.testing.assert_array_equal(once.weights, twice.weights)


@given(weights_st)
@settings(max_examples=100, deadline=None)
def test_mask_preserves_mass(w):
    if not w.sum() > 0:
        return
    m = DiscreteMeasure(np.arange(len(w), dtype=float)[:, None], w)
    assert mask_zero_atoms(m).total_mass == pytest.approx(m.total_mass, rel=1e-15)


@given(st.integers(1, 10), st.integers(1, 3), st.integers(0, 2**32 - 1))
@settings(max_examples=50, deadline=None)
def test_cost_symmetric_and_permutation_equivariant(n, d, seed):
    r = np.random.default_rng(seed)
    m = DiscreteMeasure.uniform(r.normal(size=(n, d)))
    c = np.asarray(cost_matrix(m, m))
    np.testing.assert_array_equal(c, c.T)
    np.testing.assert_array_equal(np.diag(c), 0.0)
    perm = r.permutation(n)
    mp = DiscreteMeasure(m.points[perm], m.weights[perm])
    np.testing.assert_allclose(np.asarray(cost_matrix(mp, m)), c[perm], rtol=0, atol=1e-12)
    np.testing.assert_allclose(np.asarray(cost_matrix(m, mp)), c[:, perm], rtol=0, atol=1e-12)
