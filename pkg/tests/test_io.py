import numpy as np
import pytest

from relana import io as rio
from relana.catalog import InteractionLog, PairStream, Vocabulary
from relana.cooccur import accumulate, relatedness


def _stream():
    return PairStream(np.array([0, 1, 2, 2, 3]), np.array([1, 2, 3, 0, 1]))


def test_pairs_roundtrip(tmp_path):
    s = _stream()
    rio.write_pairs(s, tmp_path / "p.rlna")
    back = rio.read_pairs(tmp_path / "p.rlna")
    assert back.pairs() == s.pairs()
    assert (tmp_path / "p.rlna").read_bytes()[:4] == b"RLNA"


@pytest.mark.parametrize("convention", ["both-roles", "center-only"])
def test_table_roundtrip(tmp_path, convention):
    t = accumulate(_stream(), 5, convention)
    rio.write_table(t, tmp_path / "t.rlnc")
    back = rio.read_table(tmp_path / "t.rlnc")
    assert back.equals(t) and back.convention == convention


def test_table_write_is_byte_stable(tmp_path):
    t = accumulate(_stream(), 5)
    rio.write_table(t, tmp_path / "a")
    rio.write_table(accumulate(PairStream(_stream().centers[::-1], _stream().contexts[::-1]), 5), tmp_path / "b")
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_format_errors(tmp_path):
    t = accumulate(_stream(), 5)
    rio.write_table(t, tmp_path / "t.rlnc")
    raw = (tmp_path / "t.rlnc").read_bytes()
    (tmp_path / "short").write_bytes(raw[:-3])
    with pytest.raises(rio.FormatError):
        rio.read_table(tmp_path / "short")
    (tmp_path / "magic").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(rio.FormatError, match="magic"):
        rio.read_table(tmp_path / "magic")
    (tmp_path / "version").write_bytes(raw[:4] + b"\x09\x00" + raw[6:])
    with pytest.raises(rio.FormatError, match="version"):
        rio.read_table(tmp_path / "version")
    with pytest.raises(rio.FormatError):
        rio.read_embeddings(tmp_path / "t.rlnc")
    (tmp_path / "tiny").write_bytes(b"RL")
    with pytest.raises(rio.FormatError, match="truncated"):
        rio.read_pairs(tmp_path / "tiny")


def test_embeddings_roundtrip(tmp_path):
    Z = np.random.default_rng(0).normal(size=(4, 3))
    rio.write_embeddings(Z, tmp_path / "e.rlne")
    back = rio.read_embeddings(tmp_path / "e.rlne")
    np.testing.assert_array_equal(back, Z.astype(np.float32))
    vocab = Vocabulary(["a", "b", "c", "d"])
    rio.write_embeddings_tsv(Z, vocab, tmp_path / "e.tsv")
    items, M = rio.read_embeddings_tsv(tmp_path / "e.tsv")
    assert items == vocab.items
    np.testing.assert_array_equal(M, Z.astype(np.float32))
    with pytest.raises(rio.FormatError):
        rio.write_embeddings_tsv(Z, Vocabulary(["a"]), tmp_path / "x.tsv")


def test_table_csv_export(tmp_path):
    t = accumulate(_stream(), 5)
    est = relatedness(t)
    rio.write_table_csv(t, est, tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "i,j,count,relatedness"
    assert len(lines) == 1 + len(est)
    i, j, c, r = lines[1].split(",")
    assert float(r) == est.get(int(i), int(j))
    rio.write_table_csv(t, None, tmp_path / "u.csv")
    assert (tmp_path / "u.csv").read_text().splitlines()[1].endswith(",")


def test_vocab_log_labels_roundtrip(tmp_path):
    vocab = Vocabulary(["x", "y", "z"], [3, 1, 2])
    rio.write_vocab(vocab, tmp_path / "v.tsv")
    back = rio.read_vocab(tmp_path / "v.tsv")
    assert back.items == vocab.items and back.frequency.tolist() == [3, 1, 2]
    log = InteractionLog(np.array([0, 0, 1]), np.array([0, 0, 1]), np.array([2, 0, 1]), np.array([0, 1, 0]), 3)
    rio.write_log(log, tmp_path / "log.csv")
    lb = rio.read_log(tmp_path / "log.csv")
    assert lb.item.tolist() == [2, 0, 1] and lb.num_items == 3
    rio.write_labels(np.array([1, 0, 1]), vocab, tmp_path / "l.csv")
    labels = rio.read_labels(tmp_path / "l.csv", vocab)
    assert labels.tolist() == [1, 0, 1]


def test_labels_with_missing_items(tmp_path):
    (tmp_path / "l.csv").write_text("item_id,label\nz,red\nx,blue\n")
    vocab = Vocabulary(["x", "y", "z"])
    assert rio.read_labels(tmp_path / "l.csv", vocab).tolist() == [0, -1, 1]
    (tmp_path / "bad.csv").write_text("item,label\n")
    with pytest.raises(rio.FormatError):
        rio.read_labels(tmp_path / "bad.csv")
