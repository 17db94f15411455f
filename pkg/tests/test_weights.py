import logging

import numpy as np
import pytest
from hypothesis import given, strategies as st

from wplap.errors import DegenerateWeight, InvalidField, SingularMatrix
from wplap.grid import Grid
from wplap.rng import make_rng
from wplap.weights import (MatrixWeightField, WeightFamilySpec, build_field, check_hypothesis, derive_w,
                           matrix_power, operator_norm, random_field, read_weight_file,
                           write_weight_file)


def diag_field(grid, d, v=10.0):
    Q = np.broadcast_to(np.diag(d), (grid.n_cells, grid.dim, grid.dim))
    return MatrixWeightField(grid, Q, np.full(grid.n_nodes, v))


def test_identity_family():
    g = Grid.box(5, 0, 1, 3)
    f = build_field(WeightFamilySpec("identity"), g)
    assert np.array_equal(f.Q, np.broadcast_to(np.eye(3), f.Q.shape))
    assert np.all(f.v_nodes == 1) and np.all(derive_w(f, 2.7) == 1)


def test_isotropic_power_midpoint():
    g = Grid.box(5)
    f = build_field(WeightFamilySpec("isotropic-power", {"alpha": 1.0}), g)
    assert f.v_nodes[2] == pytest.approx(0.5)


def test_isotropic_power_rejects_negative_exponent():
    with pytest.raises(InvalidField):
        build_field(WeightFamilySpec("isotropic-power", {"alpha": -0.5}), Grid.box(5))


def test_anisotropic_diagonal_eigenvalues():
    g = Grid.box(3, 0, 1, 2)  # cell centres at 0.25 / 0.75
    f = build_field(WeightFamilySpec("anisotropic-diagonal", {"exponents": (1.0, 0.0)}), g)
    c = np.flatnonzero(np.all(np.isclose(g.cell_centers, [0.25, 0.75]), axis=1))[0]
    assert f.eigvals[c] == pytest.approx([0.25, 1.0])


def test_unknown_family():
    with pytest.raises(InvalidField):
        WeightFamilySpec("checkerboard")


def test_rejects_asymmetric_and_indefinite():
    g = Grid.box(3, 0, 1, 2)
    Q = np.broadcast_to(np.array([[1.0, 0.1], [0.0, 1.0]]), (g.n_cells, 2, 2))
    with pytest.raises(InvalidField, match="symmetric"):
        MatrixWeightField(g, Q, np.ones(g.n_nodes))
    Q = np.broadcast_to(np.diag([1.0, -1e-3]), (g.n_cells, 2, 2))
    with pytest.raises(InvalidField, match="semidefinite"):
        MatrixWeightField(g, Q, np.ones(g.n_nodes))


def test_rejects_nonpositive_interior_v():
    g = Grid.box(5)
    v = np.ones(5)
    v[2] = 0.0
    with pytest.raises(DegenerateWeight):
        MatrixWeightField(g, np.ones((4, 1, 1)), v)
    v = np.ones(5)
    v[0] = 0.0  # boundary node with no mass is allowed
    MatrixWeightField(g, np.ones((4, 1, 1)), v)


def test_rejects_nonfinite():
    g = Grid.box(5)
    with pytest.raises(InvalidField):
        MatrixWeightField(g, np.full((4, 1, 1), np.nan), np.ones(5))


def test_field_is_read_only():
    f = diag_field(Grid.box(3, 0, 1, 2), [4.0, 9.0])
    with pytest.raises(ValueError):
        f.Q[0, 0, 0] = 1.0


def test_matrix_power_examples():
    f = diag_field(Grid.box(3, 0, 1, 2), [4.0, 9.0])
    assert np.allclose(matrix_power(f, 0.5)[0], np.diag([2.0, 3.0]), rtol=1e-14)
    assert np.allclose(matrix_power(f, 1.0), f.Q, rtol=1e-10)


def test_negative_power_of_singular():
    f = diag_field(Grid.box(3, 0, 1, 2), [4.0, 0.0])
    assert f.degenerate_cells.all()
    with pytest.raises(SingularMatrix):
        matrix_power(f, -0.5)


def test_operator_norm_examples():
    assert operator_norm(np.eye(3)) == pytest.approx(1.0)
    assert operator_norm(np.diag([4.0, 9.0])) == pytest.approx(9.0)


def test_operator_norm_matches_sampling():
    rng = make_rng(3)
    B = rng.normal(size=(3, 3))
    A = B @ B.T + 0.1 * np.eye(3)
    xi = rng.normal(size=(10_000, 3))
    xi /= np.linalg.norm(xi, axis=1, keepdims=True)
    sampled = np.linalg.norm(xi @ A, axis=1).max()
    # sampling approaches the max from below
    assert sampled <= operator_norm(A) * (1 + 1e-12)
    assert sampled >= operator_norm(A) * (1 - 1e-2)


def test_derive_w_examples(caplog):
    f = diag_field(Grid.box(3, 0, 1, 2), [4.0, 9.0], v=30.0)
    assert np.allclose(derive_w(f, 2), 4.0) and np.allclose(derive_w(f, 3), 8.0)
    g = diag_field(Grid.box(3, 0, 1, 2), [0.0, 1.0])
    with caplog.at_level(logging.WARNING):
        assert np.all(derive_w(g, 2) == 0)
    assert "degenerate" in caplog.text


def test_hypothesis_identity_passes():
    f = build_field(WeightFamilySpec("identity"), Grid.box(9, 0, 1, 2))
    assert check_hypothesis(f, 2.0).passed


def test_hypothesis_small_v_fails_upper_bound():
    f = build_field(WeightFamilySpec("identity", {"v": 0.5}), Grid.box(9, 0, 1, 2))
    rep = check_hypothesis(f, 2.0)
    assert not rep.upper_bound_ok and not rep.passed


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_hypothesis_power_family_passes(p):
    # v = d^(theta p) and Q = d^(2 theta) I, i.e. |sqrt(Q)|^p = v exactly, theta = 2
    theta = 2.0
    spec = WeightFamilySpec("isotropic-power", {"alpha": theta * p, "kappa": 2 * theta})
    f = build_field(spec, Grid.box(33, 0, 1, 1))
    rep = check_hypothesis(f, p)
    assert rep.passed, rep.lines()


def test_weight_file_roundtrip(tmp_path):
    g = Grid.box(5, 0, (1, 2), 2)
    f = random_field(g, make_rng(4))
    write_weight_file(tmp_path / "w.txt", f)
    fg, Q, v = read_weight_file(tmp_path / "w.txt")
    assert fg == g and np.array_equal(Q, f.Q) and np.array_equal(v, f.v_nodes)
    f2 = build_field(WeightFamilySpec("grid-file", {"path": str(tmp_path / "w.txt")}), g)
    assert np.array_equal(f2.Q, f.Q)


def test_weight_file_grid_mismatch(tmp_path):
    f = random_field(Grid.box(5, 0, 1, 2), make_rng(4))
    write_weight_file(tmp_path / "w.txt", f)
    with pytest.raises(InvalidField):
        build_field(WeightFamilySpec("grid-file", {"path": str(tmp_path / "w.txt")}), Grid.box(7, 0, 1, 2))


seeds = st.integers(0, 10_000)


@given(seeds, st.sampled_from([1, 2, 3]), st.booleans())
def test_random_field_structure(seed, dim, iso):
    g = Grid.box(4, 0, 1, dim)
    f = random_field(g, make_rng(seed), isotropic=iso)
    scale = np.abs(f.Q).max(axis=(1, 2))
    assert np.all(np.abs(f.Q - f.Q.transpose(0, 2, 1)).max(axis=(1, 2)) <= 1e-12 * scale)
    assert np.all(f.eigvals >= 0)
    assert np.allclose(f.reconstruct(), f.Q, rtol=1e-10, atol=1e-12 * scale.max())
    for p in (1.2, 2.0, 4.0):
        assert check_hypothesis(f, p, n_samples=20, rng=make_rng(seed, 1)).sandwich_ok


@given(seeds, st.sampled_from([0.5, 1.0, 2.0]), st.sampled_from([0.5, 1.0, 2.0]))
def test_matrix_power_semigroup(seed, r, s):
    f = random_field(Grid.box(4, 0, 1, 3), make_rng(seed))
    lhs = np.einsum("cij,cjk->cik", matrix_power(f, r), matrix_power(f, s))
    rhs = matrix_power(f, r + s)
    assert np.allclose(lhs, rhs, rtol=1e-9, atol=1e-9 * np.abs(rhs).max())


@given(seeds)
def test_operator_norm_of_square_root(seed):
    f = random_field(Grid.box(4, 0, 1, 2), make_rng(seed))
    assert np.allclose(operator_norm(f.sqrt_Q) ** 2, operator_norm(f.Q), rtol=1e-10)
