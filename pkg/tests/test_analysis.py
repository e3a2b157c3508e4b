import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from eca.analysis import (
    ProjectionHistogram,
    analytic_H,
    as_image,
    assemble_H,
    basis_transform,
    binary_string,
    class_reconstruction,
    cosine_similarity,
    decode_eigenvalue,
    degeneracy_table,
    eigenvalue_encoding,
    expectation_predict,
    is_pure,
    model_stats,
    pe_class_label,
    projection_histogram,
    pure_eigenfeatures,
    read_csv,
    read_pgm,
    round_half_away,
    soft_mapping_stats,
    to_gray8,
    write_csv,
    write_pgm,
)
from eca.core import EcaModel, ecmm_hard
from eca.data import Dataset
from eca.errors import NoPureEigenfeatures, NotPure, SingularMatrix

from conftest import random_orthogonal

# relaxed mapping printed for a VECA model trained on the 1992 breast-cancer data
WIS1992_SOFT = np.array([
    [1.0, 1.2813353e-21],
    [1.544713e-21, 1.0],
    [1.0064267e-20, 9.3284e-21],
    [1.0, 1.7838357e-15],
    [4.8638498e-20, 4.5091693e-19],
    [1.3446889e-13, 4.2358635e-17],
    [2.2195558e-13, 1.1143089e-15],
    [2.4169718e-14, 1.0],
    [0.0019637463, 1.0590642e-09],
])


def hard_model(P, hard):
    return EcaModel(P, np.where(np.asarray(hard) == 1, np.pi / 2, -np.pi / 2), chi=20.0, omega=1.0)


# ---------------------------------------------------------------- eigenvalue encodings

@pytest.mark.parametrize("row,value", [([1, 0], 1), ([0, 1], 2), ([1, 1, 1, 0, 0, 1], 39), ([0, 0, 0], 0)])
def test_encoding_examples(row, value):
    assert eigenvalue_encoding([row])[0] == value


def test_binary_strings():
    assert binary_string(1, 2) == "01"
    assert binary_string(2, 2) == "10"
    assert binary_string(912, 10) == "1110010000"


@settings(max_examples=50)
@given(arrays(np.int64, (5, 7), elements=st.integers(0, 1)))
def test_encoding_round_trip(H):
    enc = eigenvalue_encoding(H)
    for j in range(5):
        np.testing.assert_array_equal(decode_eigenvalue(enc[j], 7), H[j])
        assert enc[j] == int("".join(str(b) for b in H[j][::-1]), 2)


def test_encoding_rejects_non_binary():
    with pytest.raises(ValueError):
        eigenvalue_encoding([[0, 2]])


@pytest.mark.parametrize("value,label", [(1, 0), (2, 1), (256, 8)])
def test_pe_labels(value, label):
    assert is_pure(value) and pe_class_label(value) == label


@pytest.mark.parametrize("value", [0, 3, 39])
def test_not_pure(value):
    assert not is_pure(value)
    with pytest.raises(NotPure):
        pe_class_label(value)


# ---------------------------------------------------------------- statistics

def test_wis1992_degeneracy():
    hard = ecmm_hard(WIS1992_SOFT)
    stats = model_stats(hard)
    assert stats.degeneracy == {0: 5, 1: 2, 2: 2, 3: 0}
    np.testing.assert_array_equal(stats.crowdedness, [2, 2])
    assert stats.overlap_histogram == {0: 5, 1: 4, 2: 0}
    rows = degeneracy_table(hard)
    assert rows == [(0, "00", "", 5), (1, "01", 0, 2), (2, "10", 1, 2), (3, "11", "", 0)]


def test_crowdedness_and_overlap_examples():
    padded = np.vstack([np.eye(3, dtype=int), np.zeros((2, 3), dtype=int)])
    np.testing.assert_array_equal(model_stats(padded).crowdedness, [1, 1, 1])
    np.testing.assert_array_equal(pure_eigenfeatures(padded), [0, 1, 2])
    assert model_stats(np.ones((4, 3), dtype=int)).overlap_histogram == {0: 0, 1: 0, 2: 0, 3: 4}


def test_large_class_counts_list_only_observed():
    H = np.zeros((3, 20), dtype=int)
    H[0, 19] = 1
    assert model_stats(H).degeneracy == {0: 2, 2 ** 19: 1}


@settings(max_examples=30)
@given(arrays(np.int64, (6, 3), elements=st.integers(0, 1)))
def test_stats_totals(H):
    s = model_stats(H)
    assert sum(s.degeneracy.values()) == 6
    assert sum(s.overlap_histogram.values()) == 6
    assert int(s.crowdedness.sum()) == sum(k * c for k, c in s.overlap_histogram.items())


def test_soft_mapping_stats():
    st_ = soft_mapping_stats(WIS1992_SOFT)
    assert st_["max_entry"] == 1.0
    assert st_["fraction_within_0.05"] == 1.0


# ---------------------------------------------------------------- observable

def test_assemble_h_identity():
    np.testing.assert_array_equal(assemble_H(np.eye(2), [1, 2]), np.diag([1.0, 2.0]))


def test_analytic_h_axis_samples():
    np.testing.assert_allclose(analytic_H(np.eye(2), [1, 2]), np.diag([1.0, 2.0]), atol=1e-15)


@settings(max_examples=20)
@given(st.integers(1, 16), st.integers(0, 2**32 - 1))
def test_analytic_h_eigen_equation(m, seed):
    r = np.random.default_rng(seed)
    V = random_orthogonal(m, r)
    y = r.integers(0, 8, size=m)
    H = analytic_H(V.T, y)  # rows of the design matrix are the basis vectors
    for j in range(m):
        np.testing.assert_allclose(H @ V[:, j], y[j] * V[:, j], atol=1e-8)
    # the solver and the expectation predictor agree on every training sample
    np.testing.assert_array_equal(expectation_predict(V.T, H), y)
    # and the observable equals the assembled operator
    np.testing.assert_allclose(H, assemble_H(V, y), atol=1e-8)


def test_analytic_h_rank_deficient():
    with pytest.raises(SingularMatrix):
        analytic_H(np.array([[1.0, 0.0], [2.0, 0.0]]), [1, 2])


def test_expectation_predict_rounding():
    H = np.diag([1.0, 2.0])
    assert expectation_predict([1.0, 0.0], H) == 1
    assert expectation_predict(np.array([1.0, 1.0]) / np.sqrt(2), H) == 2
    np.testing.assert_array_equal(round_half_away([0.5, -0.5, 1.49, -2.5]), [1, -1, 1, -3])


# ---------------------------------------------------------------- reconstruction and histograms

def test_basis_transform_identity(rng):
    X = rng.standard_normal((4, 3))
    np.testing.assert_array_equal(basis_transform(X, np.eye(3)), X)


def test_class_reconstruction_single_pe():
    model = hard_model(np.eye(3), [[1, 0], [0, 1], [0, 0]])
    ds = Dataset(X=np.array([[1.0, 0.0, 0.0]] * 3 + [[0.0, 1.0, 0.0]]), y=np.array([0, 0, 0, 1]), l=2)
    np.testing.assert_allclose(class_reconstruction(ds, model, 0), [1.0, 0.0, 0.0])
    empty = hard_model(np.eye(3), [[1, 1], [0, 0], [0, 0]])
    with pytest.raises(NoPureEigenfeatures):
        class_reconstruction(ds, empty, 1)


def test_cosine_similarity():
    assert cosine_similarity([1, 0], [2, 0]) == pytest.approx(1.0)
    assert cosine_similarity([1, 0], [0, 3]) == pytest.approx(0.0)


def test_histogram_single_bin_when_constant():
    ds = Dataset(X=np.tile([0.6, 0.8], (5, 1)), y=np.array([0, 1, 0, 1, 1]), l=2)
    h = projection_histogram(ds, EcaModel(np.eye(2), np.zeros((2, 2))), 0, bins=10)
    assert np.count_nonzero(h.counts.sum(axis=0)) == 1
    assert h.counts.sum() == 5
    with pytest.raises(ValueError):
        projection_histogram(ds, EcaModel(np.eye(2), np.zeros((2, 2))), 0, bins=1)


def test_histogram_symmetric_data(rng):
    z = rng.standard_normal(40000)
    X = np.column_stack([np.concatenate([z, -z]), np.ones(80000)])
    ds = Dataset(X=X, y=np.zeros(80000, dtype=int), l=1)
    h = projection_histogram(ds, EcaModel(np.eye(2), np.zeros((2, 1))), 0, bins=20)
    np.testing.assert_array_equal(h.counts[0], h.counts[0][::-1])
    assert isinstance(h, ProjectionHistogram)
    assert len(list(h.rows())) == 20


# ---------------------------------------------------------------- export

def test_csv_round_trip(tmp_path):
    p = tmp_path / "t.csv"
    write_csv(p, ["a", "b"], [(1, "01"), (2, "10")])
    assert p.read_text() == "a,b\n1,01\n2,10\n"
    assert read_csv(p) == (["a", "b"], [["1", "01"], ["2", "10"]])


def test_gray8_scaling():
    np.testing.assert_array_equal(to_gray8([[0.0, 0.5, 1.0]]), [[0, 128, 255]])
    np.testing.assert_array_equal(to_gray8(np.full((2, 2), 3.0)), np.zeros((2, 2)))


def test_pgm_round_trip(tmp_path, rng):
    img = rng.standard_normal((28, 28))
    p = tmp_path / "x.pgm"
    write_pgm(p, img)
    assert p.read_bytes().startswith(b"P5\n28 28\n255\n")
    np.testing.assert_array_equal(read_pgm(p), to_gray8(img))
    with pytest.raises(ValueError):
        write_pgm(p, np.zeros(4))


def test_as_image():
    assert as_image(np.arange(784)).shape == (28, 28)
    assert as_image(np.arange(10)) is None
