import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gpcn.data_io import (
    GraphDataset,
    SyntheticSpec,
    class_means,
    generate_sbm,
    import_external,
    load_dataset,
    load_splits,
    row_normalize,
    save_dataset,
)
from gpcn.errors import DataError, ParseError
from gpcn.graph import LabelVector, build_csr, edge_homophily

from conftest import random_dataset

FINGERPRINT_NNZ = 296
FINGERPRINT_X00 = -0.17227687115574886


def same(a: GraphDataset, b: GraphDataset) -> bool:
    return (
        a.A.n_rows == b.A.n_rows
        and a.A.row_offsets.tobytes() == b.A.row_offsets.tobytes()
        and a.A.col_indices.tobytes() == b.A.col_indices.tobytes()
        and a.A.values.tobytes() == b.A.values.tobytes()
        and a.X.tobytes() == b.X.tobytes()
        and a.y.labels.tobytes() == b.y.labels.tobytes()
        and a.n_classes == b.n_classes
    )


class TestRoundTrip:
    def test_handcrafted(self, tmp_path):
        p = tmp_path / "tiny.txt"
        p.write_text("2 1 2\n0 1\n0\n1\n0.5 -1.25\n3.0 1e-300\n")
        ds = load_dataset(p)
        assert ds.A.nnz == 1 and ds.X[1, 1] == 1e-300
        for fmt in ("text", "binary"):
            out = tmp_path / f"copy.{fmt}"
            save_dataset(ds, out, fmt)
            assert same(ds, load_dataset(out))
        save_dataset(ds, tmp_path / "again.txt")
        assert (tmp_path / "again.txt").read_text() == "2 1 2\n0 1\n0\n1\n0.5 -1.25\n3.0 1e-300\n"

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31), st.integers(3, 100), st.integers(1, 20))
    def test_random(self, tmp_path_factory, seed, n, q):
        rng = np.random.default_rng(seed)
        ds = random_dataset(rng, n=n, q=q, C=min(3, n), p=3.0 / n)
        ds.X[...] = rng.standard_normal(ds.X.shape) * 10.0 ** rng.integers(-30, 30, ds.X.shape)
        d = tmp_path_factory.mktemp("rt")
        for fmt in ("text", "binary"):
            save_dataset(ds, d / fmt, fmt)
        t, b = load_dataset(d / "text", "text"), load_dataset(d / "binary")
        assert same(ds, t) and same(ds, b) and same(t, b)


class TestParseErrors:
    @pytest.mark.parametrize(
        "text,line",
        [
            ("2 1\n", 1),
            ("2 x 2\n", 1),
            ("2 1 2\n0 1\n0\n", 4),  # truncated before second label
            ("2 1 2\n0 5\n0\n1\n1\n1\n", 2),
            ("2 1 2\n0 1\n0\n2\n1\n1\n", 4),
            ("2 1 2\n0 1\n0\n1\n1 2\n1\n", 6),
            ("2 1 2\n0 1\n0\n1\n1\n", 6),
            ("2 1 2\n0 1\n0\n1\n1\nabc\n", 6),
            ("2 1 2\n0 1\n0\n1\n1\n2\n9\n", 7),
        ],
    )
    def test_line_numbers(self, tmp_path, text, line):
        p = tmp_path / "bad.txt"
        p.write_text(text)
        with pytest.raises(ParseError) as e:
            load_dataset(p, "text")
        assert e.value.line == line

    def test_binary_truncated(self, tmp_path, rng):
        ds = random_dataset(rng)
        p = tmp_path / "d.bin"
        save_dataset(ds, p, "binary")
        p.write_bytes(p.read_bytes()[:-8])
        with pytest.raises(ParseError):
            load_dataset(p)

    def test_inconsistent_dataset(self):
        with pytest.raises(DataError):
            GraphDataset("x", build_csr([], 3), np.zeros((2, 1)), LabelVector([0, 1, 0], 2))


class TestExternal:
    def test_import(self, tmp_path):
        (tmp_path / "e.tsv").write_text("node_id\tnode_id\n0\t1\n1\t2\n")
        (tmp_path / "f.csv").write_text("1,0,0\n0 1 0\n0,0,1\n")
        (tmp_path / "l.txt").write_text("0\n1\n1\n")
        ds = import_external(tmp_path / "e.tsv", tmp_path / "f.csv", tmp_path / "l.txt")
        assert ds.n_nodes == 3 and ds.n_features == 3 and ds.n_classes == 2
        assert ds.A.nnz == 2
        und = import_external(tmp_path / "e.tsv", tmp_path / "f.csv", tmp_path / "l.txt", directed=False)
        assert und.A.nnz == 4

    def test_count_mismatch(self, tmp_path):
        (tmp_path / "e.tsv").write_text("0\t1\n")
        (tmp_path / "f.csv").write_text("1\n2\n")
        (tmp_path / "l.txt").write_text("0\n1\n1\n")
        with pytest.raises(DataError):
            import_external(tmp_path / "e.tsv", tmp_path / "f.csv", tmp_path / "l.txt")

    def test_splits_file(self, tmp_path):
        tr = np.zeros((6, 2), bool)
        va, te = tr.copy(), tr.copy()
        tr[:4, 0], va[4, 0], te[5, 0] = True, True, True
        tr[2:, 1], va[0, 1], te[1, 1] = True, True, True
        np.savez(tmp_path / "s.npz", train_mask=tr, val_mask=va, test_mask=te)
        splits = load_splits(tmp_path / "s.npz", 6)
        assert len(splits) == 2 and splits[1].test.tolist() == [1]
        with pytest.raises(DataError):
            load_splits(tmp_path / "s.npz", 7)


def test_row_normalize():
    X = np.array([[1.0, -3.0], [0.0, 0.0]])
    np.testing.assert_array_equal(row_normalize(X), [[0.25, -0.75], [0.0, 0.0]])


class TestSBM:
    def test_deterministic(self):
        spec = SyntheticSpec(n=120, classes=3, p_in=0.1, p_out=0.02, feature_dim=5, seed=9)
        assert same(generate_sbm(spec), generate_sbm(spec))
        assert not same(generate_sbm(spec), generate_sbm(SyntheticSpec(**{**spec.__dict__, "seed": 10})))

    def test_pinned_fingerprint(self):
        # guards the documented stream convention against silent changes
        ds = generate_sbm(SyntheticSpec(n=50, classes=2, p_in=0.2, p_out=0.05, feature_dim=3, seed=0))
        assert ds.A.nnz == FINGERPRINT_NNZ
        assert ds.X[0, 0] == pytest.approx(FINGERPRINT_X00, rel=0, abs=0)

    def test_pure_blocks(self):
        ds = generate_sbm(SyntheticSpec(n=200, classes=4, p_in=0.1, p_out=0.0, feature_dim=4, seed=1))
        assert ds.A.nnz > 0 and edge_homophily(ds.A, ds.y) == 1.0
        ds = generate_sbm(SyntheticSpec(n=200, classes=4, p_in=0.0, p_out=0.1, feature_dim=4, seed=1))
        assert edge_homophily(ds.A, ds.y) == 0.0

    @pytest.mark.parametrize("C", [2, 3])
    def test_equal_probabilities(self, C):
        hs = []
        for seed in range(50):
            ds = generate_sbm(SyntheticSpec(n=500, classes=C, p_in=0.02, p_out=0.02, feature_dim=4, seed=seed))
            hs.append(edge_homophily(ds.A, ds.y))
        hs = np.array(hs)
        sigma = hs.std(ddof=1) / math.sqrt(hs.size)
        assert abs(hs.mean() - 1.0 / C) <= 3 * sigma

    def test_homophily_monotone_in_ratio(self):
        lo, hi = [], []
        for seed in range(50):
            a = generate_sbm(SyntheticSpec(n=100, p_in=0.03, p_out=0.05, feature_dim=2, seed=seed))
            b = generate_sbm(SyntheticSpec(n=100, p_in=0.05, p_out=0.03, feature_dim=2, seed=seed))
            lo.append(edge_homophily(a.A, a.y))
            hi.append(edge_homophily(b.A, b.y))
        assert np.mean(hi) > np.mean(lo)

    def test_feature_means(self):
        for C, q in ((2, 1), (2, 5), (4, 6)):
            mu = class_means(C, q, 2.5)
            d = np.linalg.norm(mu[:, None] - mu[None], axis=-1)
            np.testing.assert_allclose(d[~np.eye(C, dtype=bool)], 2.5)
        ds = generate_sbm(SyntheticSpec(n=4000, classes=2, feature_dim=3, feature_separation=4.0, seed=2))
        gap = ds.X[ds.y.labels == 0].mean(0) - ds.X[ds.y.labels == 1].mean(0)
        assert np.linalg.norm(gap) == pytest.approx(4.0, abs=0.15)

    def test_invalid(self):
        with pytest.raises(ValueError):
            SyntheticSpec(p_in=1.5)
        with pytest.raises(ValueError):
            SyntheticSpec(n=2, classes=3)
