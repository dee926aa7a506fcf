import gzip
import struct

import numpy as np
import pytest

from dkae.data import (DatasetSplits, LabeledDataset, ingest_csv, ingest_idx, ingest_synthetic, make_blobs,
                       read_csv_table, read_idx, read_pgm, split_indices, write_idx, write_pgm)
from dkae.errors import ParameterError, ParseError


def minimal_idx(tmp_path):
    img = tmp_path / "img.idx"
    img.write_bytes(struct.pack(">IIII", 0x00000803, 2, 2, 2) + bytes([0, 51, 102, 255, 255, 0, 0, 0]))
    lab = tmp_path / "lab.idx"
    lab.write_bytes(struct.pack(">II", 0x00000801, 2) + bytes([4, 9]))
    return img, lab


def test_minimal_idx(tmp_path):
    img, lab = minimal_idx(tmp_path)
    arr = read_idx(img)
    assert arr.shape == (2, 2, 2)
    splits = ingest_idx(img, lab, fractions=(1.0, 0.0, 0.0))
    assert splits.train.features.shape == (2, 4)
    assert splits.train.image_shape == (2, 2)
    row = splits.train.features[splits.train.labels == 4][0]
    np.testing.assert_allclose(row, [0, 0.2, 0.4, 1.0])
    assert set(splits.train.labels) == {4, 9}


def test_idx_gzip_and_round_trip(tmp_path):
    a = np.arange(24, dtype=np.uint8).reshape(2, 3, 4)
    write_idx(tmp_path / "a.idx", a)
    np.testing.assert_array_equal(read_idx(tmp_path / "a.idx"), a)
    (tmp_path / "a.idx.gz").write_bytes(gzip.compress((tmp_path / "a.idx").read_bytes()))
    np.testing.assert_array_equal(read_idx(tmp_path / "a.idx.gz"), a)


def test_idx_errors_report_offsets(tmp_path):
    bad = tmp_path / "bad.idx"
    bad.write_bytes(b"\x01\x00\x08\x01" + struct.pack(">I", 1) + b"\x00")
    with pytest.raises(ParseError, match="offset 0"):
        read_idx(bad)
    bad.write_bytes(b"\x00\x00\x07\x01" + struct.pack(">I", 1) + b"\x00")
    with pytest.raises(ParseError, match="offset 2"):
        read_idx(bad)
    bad.write_bytes(b"\x00\x00\x08\x01" + struct.pack(">I", 3) + b"\x00")
    with pytest.raises(ParseError, match="offset 9"):
        read_idx(bad)


def test_minimal_csv(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("1,2,0\n3,4,1\n")
    feats, labels = read_csv_table(p, label_column=2)
    np.testing.assert_array_equal(feats, [[1, 2], [3, 4]])
    np.testing.assert_array_equal(labels, [0, 1])
    p.write_text("a,b,label\n1,2,0\n3,4,1\n")
    feats, labels = read_csv_table(p, label_column="label")
    assert feats.shape == (2, 2) and list(labels) == [0, 1]


def test_csv_errors_report_line_numbers(tmp_path):
    p = tmp_path / "r.csv"
    p.write_text("1,2,0\n3,4\n")
    with pytest.raises(ParseError, match="line 2"):
        read_csv_table(p)
    p.write_text("1,2,0\n3,x,1\n")
    with pytest.raises(ParseError, match="line 2"):
        read_csv_table(p)
    p.write_text("1,2,0.5\n")
    with pytest.raises(ParseError, match="integer"):
        read_csv_table(p)


def test_csv_ingest_scales_with_training_statistics(tmp_path):
    rng = np.random.default_rng(0)
    rows = np.column_stack([rng.normal(10, 3, 40), rng.normal(-5, 1, 40), rng.integers(0, 2, 40)])
    p = tmp_path / "d.csv"
    p.write_text("".join(f"{a},{b},{int(c)}\n" for a, b, c in rows))
    s = ingest_csv(p, seed=1)
    np.testing.assert_allclose(s.train.features.min(axis=0), 0.0)
    np.testing.assert_allclose(s.train.features.max(axis=0), 1.0)
    assert s.val.features.min() >= 0 and s.test.features.max() <= 1


def test_blob_counts_and_determinism():
    x, y, shape = make_blobs(300, 3, d=64, seed=5)
    assert list(np.bincount(y)) == [100, 100, 100]
    assert x.shape == (300, 64) and shape == (8, 8)
    assert x.min() > 0 and x.max() < 1
    x2, y2, _ = make_blobs(300, 3, d=64, seed=5)
    np.testing.assert_array_equal(x, x2)
    assert not np.array_equal(x, make_blobs(300, 3, d=64, seed=6)[0])
    assert make_blobs(30, 3, d=10)[2] is None
    with pytest.raises(ParameterError):
        make_blobs(2, 3)


def test_split_indices_partition_and_determinism():
    tr, va, te = split_indices(100, seed=3)
    assert (len(tr), len(va), len(te)) == (70, 15, 15)
    assert sorted(np.concatenate([tr, va, te])) == list(range(100))
    np.testing.assert_array_equal(tr, split_indices(100, seed=3)[0])
    with pytest.raises(ParameterError):
        split_indices(10, (0.5, 0.2, 0.2))


def test_ingestion_byte_identical_split_files(tmp_path):
    for name in ("a", "b"):
        ingest_synthetic(200, 4, d=16, seed=2).save(tmp_path / name)
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()
    back = DatasetSplits.load(tmp_path / "a")
    assert back.train.image_shape is None and len(back.test) == 30


def test_keep_classes_and_subset():
    s = ingest_synthetic(200, 4, d=16, seed=2, keep_classes=(1, 3))
    assert set(s.train.labels) | set(s.test.labels) == {1, 3}
    ds = LabeledDataset(np.eye(3), [0, 1, 1])
    assert len(ds.with_classes([1])) == 2 and list(ds.classes) == [0, 1]
    with pytest.raises(ParameterError):
        LabeledDataset(np.eye(3), [0, 1])


def test_pgm_round_trip_including_whitespace_bytes(tmp_path):
    # byte values 9, 10, 13 and 32 are whitespace in the header grammar
    img = np.array([[9, 10, 13], [32, 0, 255]]) / 255.0
    write_pgm(tmp_path / "x.pgm", img)
    np.testing.assert_allclose(read_pgm(tmp_path / "x.pgm"), img)
    assert (tmp_path / "x.pgm").read_bytes().startswith(b"P5\n3 2\n255\n")
    (tmp_path / "y.pgm").write_bytes(b"P2\n1 1\n255\n0")
    with pytest.raises(ParseError):
        read_pgm(tmp_path / "y.pgm")
