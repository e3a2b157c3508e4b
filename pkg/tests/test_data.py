import gzip
import hashlib
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eca.data import (
    COV_2D,
    TRAIN,
    VALIDATION,
    Dataset,
    RawDataset,
    gen_2d,
    gen_3d,
    gen_axis_clusters,
    gen_stripes,
    load_idx,
    load_mnist,
    load_raw,
    load_uci_csv,
    preprocess,
    save_raw,
    split,
)
from eca.errors import DegenerateSplit, EmptyAfterFilter, FormatError, MismatchError

from conftest import require_data


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


# ---------------------------------------------------------------- generators

@pytest.mark.parametrize("gen", [gen_2d, gen_3d, gen_axis_clusters, gen_stripes])
def test_generators_byte_identical_under_seed(gen, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    save_raw(gen(50, seed=17), a)
    save_raw(gen(50, seed=17), b)
    assert digest(a) == digest(b)
    save_raw(gen(50, seed=18), b)
    assert digest(a) != digest(b)


def test_2d_covariances():
    raw = gen_2d(20000, seed=0)
    for k, cov in enumerate(COV_2D):
        emp = np.cov(raw.X[raw.y == k].T)
        # standard error of a covariance entry is about sqrt(2 / n)
        np.testing.assert_allclose(emp, cov, atol=0.05)
        np.testing.assert_allclose(raw.X[raw.y == k].mean(axis=0), 0.0, atol=0.05)


def test_3d_structure():
    raw = gen_3d(20000, seed=1)
    X0 = raw.X[raw.y == 0]
    np.testing.assert_allclose(np.var(X0, axis=0), [0.1, 10.0, 10.0], rtol=0.05)
    for comp, flat in ((1, 1), (2, 2)):
        Xc = raw.X[raw.component == comp]
        assert np.var(Xc[:, flat]) == pytest.approx(0.1, rel=0.1)
    share = np.mean(raw.component[raw.y == 1] == 1)
    assert share == pytest.approx(0.5, abs=0.02)


def test_3d_without_mixture_uses_one_component():
    raw = gen_3d(200, seed=1, class1_mixture=False)
    assert set(raw.component[raw.y == 1]) == {1}
    mixed = gen_3d(200, seed=1)
    np.testing.assert_array_equal(raw.X[raw.y == 0], mixed.X[mixed.y == 0])


def test_axis_clusters_and_stripes_layout():
    raw = gen_axis_clusters(5000, seed=0, l=3, m=4, major=2.0, minor=0.5, center=3.0)
    for k in range(3):
        Xk = raw.X[raw.y == k]
        assert Xk[:, k].mean() == pytest.approx(3.0, abs=0.1)
        assert np.var(Xk[:, k]) == pytest.approx(2.0, rel=0.1)
    s = gen_stripes(10, seed=0, blobs=4, m=5)
    assert s.X.shape == (40, 5)
    np.testing.assert_array_equal(s.X[:, 1], 1.0)
    np.testing.assert_array_equal(s.X[:, 2:], 0.0)
    np.testing.assert_array_equal(s.y, np.repeat([0, 1, 0, 1], 10))


@pytest.mark.parametrize("gen", [gen_2d, gen_3d, gen_axis_clusters])
def test_generators_reject_tiny_classes(gen):
    with pytest.raises(ValueError):
        gen(1, seed=0)


# ---------------------------------------------------------------- IDX files

def write_idx(path, magic, dims, payload, compress=False):
    data = struct.pack(">i", magic) + struct.pack(">" + "i" * len(dims), *dims) + bytes(payload)
    opener = gzip.open if compress else open
    with opener(path, "wb") as fh:
        fh.write(data)


@pytest.mark.parametrize("compress", [False, True])
def test_idx_round_trip(tmp_path, compress):
    images = np.arange(2 * 3 * 4, dtype=np.uint8)
    suffix = ".gz" if compress else ""
    ip, lp = tmp_path / f"img{suffix}", tmp_path / f"lab{suffix}"
    write_idx(ip, 2051, (2, 3, 4), images, compress)
    write_idx(lp, 2049, (2,), [7, 3], compress)
    raw = load_idx(ip, lp)
    np.testing.assert_array_equal(raw.X, images.reshape(2, 12))
    np.testing.assert_array_equal(raw.y, [7, 3])
    assert raw.info == {"rows": 3, "cols": 4}


def test_idx_errors(tmp_path):
    ip, lp = tmp_path / "img", tmp_path / "lab"
    write_idx(ip, 2051, (2, 2, 2), range(8))
    write_idx(lp, 2049, (3,), [1, 2, 3])
    with pytest.raises(MismatchError):
        load_idx(ip, lp)
    write_idx(lp, 2051, (2,), [1, 2])
    with pytest.raises(FormatError, match="magic"):
        load_idx(ip, lp)
    write_idx(lp, 2049, (2,), [1, 2])
    ip.write_bytes(ip.read_bytes()[:-1])
    with pytest.raises(FormatError, match="truncated"):
        load_idx(ip, lp)
    ip.write_bytes(b"\x00\x00")
    with pytest.raises(FormatError, match="truncated"):
        load_idx(ip, lp)


def test_mnist_split_when_available():
    raw = load_mnist(require_data("mnist"))
    assert raw.X.shape == (70000, 784)
    assert np.count_nonzero(raw.split == TRAIN) == 60000
    assert raw.X.max() == 255 and raw.y.max() == 9


# ---------------------------------------------------------------- UCI files

def test_wis1992_parsing(tmp_path):
    p = tmp_path / "w.data"
    p.write_text("1000025,5,1,1,1,2,1,3,1,1,2\n1002945,5,4,4,5,7,10,3,2,1,4\n1057013,8,4,5,1,2,?,7,3,1,4\n\n")
    raw = load_uci_csv(p, "wis1992")
    np.testing.assert_array_equal(raw.y, [0, 1])
    np.testing.assert_array_equal(raw.X[0], [5, 1, 1, 1, 2, 1, 3, 1, 1])
    assert raw.info["dropped"] == 1
    assert len(raw.feature_names) == 9


def test_wis1995_parsing(tmp_path):
    p = tmp_path / "w.data"
    p.write_text("842302,M," + ",".join(["1.5"] * 30) + "\n842517,B," + ",".join(["2"] * 30) + "\n")
    raw = load_uci_csv(p, "wis1995")
    np.testing.assert_array_equal(raw.y, [1, 0])
    assert raw.X.shape == (2, 30)


@pytest.mark.parametrize("text,match", [
    ("1,2,3\n", "expected 11 columns"),
    ("1,5,1,1,1,2,1,3,1,1,3\n", ":1:11: unknown class"),
    ("1,5,x,1,1,2,1,3,1,1,2\n", ":1:3: not a number"),
    ("1,5,1,1,1,2,?,3,1,1,2\n", "no usable rows"),
])
def test_uci_errors(tmp_path, text, match):
    p = tmp_path / "w.data"
    p.write_text(text)
    with pytest.raises(FormatError, match=match):
        load_uci_csv(p, "wis1992")


def test_uci_real_files_when_available():
    raw = load_uci_csv(require_data("uci", "breast-cancer-wisconsin.data"), "wis1992")
    assert raw.X.shape == (683, 9) and raw.info["dropped"] == 16
    raw = load_uci_csv(require_data("uci", "wdbc.data"), "wis1995")
    assert raw.X.shape == (569, 30) and int(raw.y.sum()) == 212


# ---------------------------------------------------------------- preprocessing

def test_preprocess_normalizes_and_drops_zero_rows():
    raw = RawDataset(np.array([[3.0, 4.0], [0.0, 0.0], [0.0, 2.0]]), np.array([0, 1, 1]))
    ds = preprocess(raw)
    np.testing.assert_allclose(ds.X, [[0.6, 0.8], [0.0, 1.0]])
    np.testing.assert_array_equal(ds.y, [0, 1])
    assert ds.dropped == 1 and ds.l == 2


def test_preprocess_scaling_and_aux_dim():
    raw = RawDataset(np.array([[2.0, 0.0], [1.0, 5.0]]), np.array([0, 1]))
    ds = preprocess(raw, "per_feature_max", add_aux_dim=True, normalize_rows=False)
    np.testing.assert_allclose(ds.X, [[1.0, 0.0, 1.0], [0.5, 1.0, 1.0]])
    ds = preprocess(raw, "divide_255", normalize_rows=False)
    np.testing.assert_allclose(ds.X, raw.X / 255.0)
    with pytest.raises(ValueError):
        preprocess(raw, "zscore")
    with pytest.raises(EmptyAfterFilter):
        preprocess(RawDataset(np.zeros((2, 2)), np.array([0, 1])))


@settings(max_examples=30)
@given(st.integers(4, 60), st.integers(0, 1000), st.floats(0.2, 0.8))
def test_split_partitions(n, seed, frac):
    X = np.random.default_rng(seed).standard_normal((n, 3))
    ds = Dataset(X=X, y=None, l=0)
    tr, va = split(ds, frac, seed)
    assert tr.n == int(round(frac * n)) and tr.n + va.n == n
    rows = {tuple(r) for r in np.vstack([tr.X, va.X])}
    assert rows == {tuple(r) for r in X}


def test_split_deterministic_and_degenerate():
    ds = preprocess(gen_2d(20, seed=0))
    a, b = split(ds, 0.8, 5), split(ds, 0.8, 5)
    np.testing.assert_array_equal(a[0].X, b[0].X)
    tiny = Dataset(X=np.eye(3), y=np.array([0, 0, 1]), l=2)
    with pytest.raises(DegenerateSplit):
        for seed in range(50):
            split(tiny, 0.5, seed)
    with pytest.raises(ValueError):
        split(ds, 1.0)


def test_part_uses_predefined_split():
    raw = RawDataset(np.eye(3) + 0.1, np.array([0, 1, 0]), split=np.array([TRAIN, VALIDATION, TRAIN]))
    ds = preprocess(raw)
    assert ds.part(TRAIN).n == 2 and ds.part(VALIDATION).n == 1


def test_raw_round_trip(tmp_path):
    raw = gen_3d(10, seed=3)
    path = tmp_path / "d.json"
    save_raw(raw, path)
    back = load_raw(path)
    np.testing.assert_array_equal(back.X, raw.X)
    np.testing.assert_array_equal(back.y, raw.y)
    np.testing.assert_array_equal(back.component, raw.component)


def test_raw_length_mismatch():
    with pytest.raises(MismatchError):
        RawDataset(np.zeros((3, 2)), np.array([0, 1]))
