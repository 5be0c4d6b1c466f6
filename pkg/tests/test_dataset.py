import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from kmeanslab.dataset import (
    Dataset,
    DatasetError,
    SyntheticSpec,
    describe,
    generate_clusterable,
    load_sparse,
    simplex_centers,
    write_csv,
    write_sparse,
)
from kmeanslab.theory import check_assumptions
from kmeanslab.core import means


@pytest.fixture
def svm_file(tmp_path):
    p = tmp_path / "tiny.svm"
    p.write_text("1 1:0.5 3:2.0\n2 2:1.0\n")
    return p


def test_load_svmlight(svm_file):
    ds = load_sparse(svm_file)
    assert (ds.n, ds.dim) == (2, 3)
    assert ds.is_sparse
    np.testing.assert_array_equal(ds.point(0), [0.5, 0.0, 2.0])
    np.testing.assert_array_equal(ds.point(1), [0.0, 1.0, 0.0])
    idx, val = ds.sparse_point(0)
    assert idx.tolist() == [0, 2] and val.tolist() == [0.5, 2.0]
    assert ds.labels == ("1", "2")


def test_load_svmlight_dim_override(svm_file):
    assert load_sparse(svm_file, dim=5).dim == 5
    with pytest.raises(DatasetError, match="smaller"):
        load_sparse(svm_file, dim=2)


def test_load_empty_file(tmp_path):
    p = tmp_path / "empty.svm"
    p.write_text("")
    with pytest.raises(DatasetError, match="no points"):
        load_sparse(p)


@pytest.mark.parametrize("bad, lineno", [("1 1:0.5\n2 x:1\n", 2), ("1 0:3\n", 1), ("1 2:a\n", 1)])
def test_parse_error_reports_line(tmp_path, bad, lineno):
    p = tmp_path / "bad.svm"
    p.write_text(bad)
    with pytest.raises(DatasetError, match=f":{lineno}:"):
        load_sparse(p)


def test_unsorted_indices_are_sorted(tmp_path):
    p = tmp_path / "u.svm"
    p.write_text("0 3:1.5 1:2.5\n")
    idx, val = load_sparse(p).sparse_point(0)
    assert idx.tolist() == [0, 2] and val.tolist() == [2.5, 1.5]


def test_load_dense_csv(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("1.0,2.0\n3.0,4.0\n")
    ds = load_sparse(p, "csv")
    assert (ds.n, ds.dim) == (2, 2)
    s = describe(ds)
    assert s.density == 1.0
    assert s.bbox_diagonal == pytest.approx(np.sqrt(8.0))


def test_describe_sparse_density(svm_file):
    s = describe(load_sparse(svm_file))
    assert (s.n, s.dim) == (2, 3)
    assert s.density == pytest.approx(0.5)


def test_missing_file():
    with pytest.raises(FileNotFoundError):
        load_sparse("/nonexistent/x.svm")


def test_roundtrip_svmlight(tmp_path, rng):
    X = rng.standard_normal((20, 7))
    X[rng.random(X.shape) < 0.6] = 0.0
    ds = Dataset(X)
    p = tmp_path / "rt.svm"
    write_sparse(ds, p)
    back = load_sparse(p, dim=7)
    np.testing.assert_array_equal(back.dense(), X)


def test_roundtrip_csv(tmp_path, rng):
    X = rng.standard_normal((5, 3))
    p = tmp_path / "rt.csv"
    write_csv(Dataset(X), p)
    np.testing.assert_array_equal(load_sparse(p, "csv").dense(), X)


def test_dataset_is_read_only(rng):
    ds = Dataset(rng.standard_normal((4, 2)))
    with pytest.raises(ValueError):
        ds.X[0, 0] = 1.0


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 30), st.integers(1, 12), st.integers(0, 2**32 - 1))
def test_squared_norm_cache(n, d, seed):
    r = np.random.default_rng(seed)
    X = r.standard_normal((n, d)) * 10.0 ** r.integers(-3, 4)
    for ds in (Dataset(X), Dataset(sp.csr_matrix(X))):
        recomputed = np.array([np.sum(ds.point(i) ** 2) for i in range(n)])
        np.testing.assert_allclose(ds.squared_norms, recomputed, rtol=1e-12)


def test_generator_two_balls():
    spec = SyntheticSpec(((0.0, 0.0), (10.0, 0.0)), (50, 50), 1.0, seed=7)
    ds, centers, A = generate_clusterable(spec)
    assert A.sizes.tolist() == [50, 50]
    X = ds.dense()
    dist = np.linalg.norm(X - centers.centers[A.assignment], axis=1)
    assert np.all(dist <= 1.0)


def test_generator_single_cluster():
    ds, centers, A = generate_clusterable(SyntheticSpec(((1.0, 2.0, 3.0),), (17,), 0.5, seed=1))
    assert A.k == 1 and A.sizes.tolist() == [17]


def test_generator_is_deterministic():
    spec = SyntheticSpec(((0.0,), (5.0,)), (10, 12), 1.0, seed=99)
    a = generate_clusterable(spec)[0].dense()
    b = generate_clusterable(spec)[0].dense()
    assert a.tobytes() == b.tobytes()


def test_generator_three_far_balls_has_margin():
    spec = SyntheticSpec(((0.0, 0.0), (100.0, 0.0), (50.0, 120.0)), (40, 50, 60), 0.1, seed=3)
    ds, _, A = generate_clusterable(spec)
    rep = check_assumptions(ds, A, means(ds, A), alpha=0.01)
    # each margin is the separation minus at most two radii
    assert rep.gamma_achieved >= 1 - 0.2 / 100
    assert rep.b2_holds


@pytest.mark.parametrize("kwargs", [
    dict(centers=((0.0,), (0.0,)), sizes=(1, 1), radius=1.0),
    dict(centers=((0.0,), (1.0,)), sizes=(1, 0), radius=1.0),
    dict(centers=((0.0,), (1.0,)), sizes=(1,), radius=1.0),
])
def test_synthetic_spec_validation(kwargs):
    with pytest.raises(DatasetError):
        SyntheticSpec(**kwargs)


def test_simplex_centers_equidistant():
    C = np.array(simplex_centers(4, 6, 3.0))
    D = np.linalg.norm(C[:, None] - C[None], axis=2)
    np.testing.assert_allclose(D[~np.eye(4, dtype=bool)], 3.0)


def test_normalized_rows(rng):
    ds = Dataset(rng.standard_normal((6, 4)))
    np.testing.assert_allclose(ds.normalized().squared_norms, 1.0)
