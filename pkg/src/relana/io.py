"""Versioned on-disk formats.

All binaries are little-endian and open with a 4-byte magic and a u16
version:

``RLNA``  pair stream: u64 count, then (u32 center, u32 context) records.
``RLNC``  co-occurrence table: u8 convention, u64 n, u32 |I|, u64 item
          counts, u64 nnz, then (u32 i, u32 j, u64 count) triples.
``RLNE``  embeddings: u32 |I|, u32 d, then row-major f32.

Text formats: vocabulary TSV (``item_id<TAB>frequency``), log CSV, embedding
TSV (``item_id<TAB>f1 ... fd``), table CSV (``i,j,count,relatedness``) and
label CSV (``item_id,label``).
"""
from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .catalog import DataError, InteractionLog, PairStream, Vocabulary
from .cooccur import CONVENTIONS, CooccurrenceTable, RelatednessEstimate

VERSION = 1
_HEAD = struct.Struct("<4sH")
_PAIR = np.dtype([("c", "<u4"), ("x", "<u4")])
_TRIPLE = np.dtype([("i", "<u4"), ("j", "<u4"), ("n", "<u8")])


class FormatError(DataError):
    """Raised when a file does not match its declared format."""


def _check_head(buf: bytes, magic: bytes, path) -> int:
    if len(buf) < _HEAD.size:
        raise FormatError(f"{path}: truncated header")
    got, version = _HEAD.unpack_from(buf, 0)
    if got != magic:
        raise FormatError(f"{path}: expected magic {magic!r}, found {got!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    return _HEAD.size


def _u32(a: np.ndarray, what: str) -> np.ndarray:
    if len(a) and (a.min() < 0 or a.max() > np.iinfo(np.uint32).max):
        raise FormatError(f"{what} does not fit in u32")
    return a.astype("<u4")


# --------------------------------------------------------------------------
# pair streams
# --------------------------------------------------------------------------


def write_pairs(stream: PairStream, path) -> None:
    rec = np.empty(len(stream), dtype=_PAIR)
    rec["c"] = _u32(stream.centers, "center")
    rec["x"] = _u32(stream.contexts, "context")
    with open(path, "wb") as fh:
        fh.write(_HEAD.pack(b"RLNA", VERSION))
        fh.write(struct.pack("<Q", len(stream)))
        fh.write(rec.tobytes())


def read_pairs(path, provenance: str = "synthetic") -> PairStream:
    buf = Path(path).read_bytes()
    off = _check_head(buf, b"RLNA", path)
    (count,) = struct.unpack_from("<Q", buf, off)
    off += 8
    if len(buf) - off != count * _PAIR.itemsize:
        raise FormatError(f"{path}: expected {count} pair records")
    rec = np.frombuffer(buf, dtype=_PAIR, count=count, offset=off)
    return PairStream(rec["c"].astype(np.int64), rec["x"].astype(np.int64), provenance)


# --------------------------------------------------------------------------
# co-occurrence tables
# --------------------------------------------------------------------------


def write_table(table: CooccurrenceTable, path) -> None:
    rows, cols, counts = table.coo()
    rec = np.empty(len(rows), dtype=_TRIPLE)
    rec["i"], rec["j"], rec["n"] = _u32(rows, "row"), _u32(cols, "col"), counts
    with open(path, "wb") as fh:
        fh.write(_HEAD.pack(b"RLNC", VERSION))
        fh.write(struct.pack("<BQI", CONVENTIONS.index(table.convention), table.n, table.num_items))
        fh.write(table.item_counts.astype("<u8").tobytes())
        fh.write(struct.pack("<Q", len(rec)))
        fh.write(rec.tobytes())


def read_table(path) -> CooccurrenceTable:
    buf = Path(path).read_bytes()
    off = _check_head(buf, b"RLNC", path)
    conv, n, m = struct.unpack_from("<BQI", buf, off)
    off += struct.calcsize("<BQI")
    if conv >= len(CONVENTIONS):
        raise FormatError(f"{path}: unknown convention code {conv}")
    item_counts = np.frombuffer(buf, dtype="<u8", count=m, offset=off).astype(np.int64)
    off += 8 * m
    (nnz,) = struct.unpack_from("<Q", buf, off)
    off += 8
    if len(buf) - off != nnz * _TRIPLE.itemsize:
        raise FormatError(f"{path}: expected {nnz} triples")
    rec = np.frombuffer(buf, dtype=_TRIPLE, count=nnz, offset=off)
    counts = sp.coo_matrix(
        (rec["n"].astype(np.int64), (rec["i"].astype(np.int64), rec["j"].astype(np.int64))), shape=(m, m)
    )
    table = CooccurrenceTable(counts.tocsr(), CONVENTIONS[conv])
    if table.n != n or not np.array_equal(table.item_counts, item_counts):
        raise FormatError(f"{path}: header totals disagree with the stored pairs")
    return table


def write_table_csv(table: CooccurrenceTable, est: RelatednessEstimate | None, path) -> None:
    """Inspection export ``i,j,count,relatedness`` (relatedness blank when not given)."""
    rows, cols, counts = table.coo()
    if est is None:
        rel = [""] * len(rows)
    elif np.array_equal(est.rows, rows) and np.array_equal(est.cols, cols):
        rel = [repr(v) for v in est.values.tolist()]
    else:
        lookup = dict(zip(zip(est.rows.tolist(), est.cols.tolist()), est.values.tolist()))
        rel = [repr(lookup[k]) if k in lookup else "" for k in zip(rows.tolist(), cols.tolist())]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "j", "count", "relatedness"])
        for i, j, c, r in zip(rows.tolist(), cols.tolist(), counts.tolist(), rel):
            w.writerow([i, j, c, r])


# --------------------------------------------------------------------------
# embeddings
# --------------------------------------------------------------------------


def write_embeddings(Z: np.ndarray, path) -> None:
    Z = np.ascontiguousarray(Z, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_HEAD.pack(b"RLNE", VERSION))
        fh.write(struct.pack("<II", *Z.shape))
        fh.write(Z.tobytes())


def read_embeddings(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    off = _check_head(buf, b"RLNE", path)
    m, d = struct.unpack_from("<II", buf, off)
    off += 8
    if len(buf) - off != 4 * m * d:
        raise FormatError(f"{path}: expected a {m}x{d} float32 matrix")
    return np.frombuffer(buf, dtype="<f4", count=m * d, offset=off).reshape(m, d).astype(np.float64)


def write_embeddings_tsv(Z: np.ndarray, vocab: Vocabulary, path) -> None:
    if len(vocab) != Z.shape[0]:
        raise FormatError("vocabulary and embedding row counts differ")
    with open(path, "w") as fh:
        for item, row in zip(vocab.items, np.asarray(Z, dtype=np.float32)):
            fh.write(item + "\t" + " ".join(repr(float(v)) for v in row) + "\n")


def read_embeddings_tsv(path) -> tuple[list[str], np.ndarray]:
    items, rows = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            item, _, rest = line.partition("\t")
            try:
                rows.append([float(v) for v in rest.split()])
            except ValueError:
                raise FormatError(f"{path}: bad number at line {lineno}") from None
            items.append(item)
    if not rows or len({len(r) for r in rows}) != 1:
        raise FormatError(f"{path}: rows are empty or ragged")
    return items, np.array(rows)


# --------------------------------------------------------------------------
# vocabulary, log, labels
# --------------------------------------------------------------------------


def write_vocab(vocab: Vocabulary, path) -> None:
    with open(path, "w") as fh:
        for item, f in zip(vocab.items, vocab.frequency.tolist()):
            fh.write(f"{item}\t{f}\n")


def read_vocab(path) -> Vocabulary:
    items, freq = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 2:
                raise FormatError(f"{path}: malformed vocabulary line {lineno}")
            items.append(parts[0])
            freq.append(int(parts[1]))
    return Vocabulary(items, np.array(freq, dtype=np.int64))


def write_log(log: InteractionLog, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["user", "session", "item", "position", "num_items"])
        for row in zip(log.user.tolist(), log.session.tolist(), log.item.tolist(), log.position.tolist()):
            w.writerow([*row, log.num_items])


def read_log(path) -> InteractionLog:
    data = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.int64, ndmin=2)
    if data.shape[0] == 0:
        raise FormatError(f"{path}: no records")
    return InteractionLog(data[:, 0], data[:, 1], data[:, 2], data[:, 3], int(data[0, 4]))


def read_labels(path, vocab: Vocabulary | None = None) -> np.ndarray:
    """Label CSV ``item_id,label`` mapped to dense integer codes per item.

    With a vocabulary the result is aligned to it (unlabeled items get -1);
    otherwise item ids must be dense indices.
    """
    ids, labels = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["item_id", "label"]:
            raise FormatError(f"{path}: expected header item_id,label")
        for row in reader:
            if row:
                ids.append(row[0].strip())
                labels.append(row[1].strip())
    _, codes = np.unique(labels, return_inverse=True)
    if vocab is None:
        idx = np.array([int(i) for i in ids], dtype=np.int64)
        size = idx.max() + 1 if len(idx) else 0
    else:
        idx = vocab.encode(ids)
        size = len(vocab)
    out = -np.ones(size, dtype=np.int64)
    out[idx] = codes
    return out


def write_labels(labels: np.ndarray, vocab: Vocabulary, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["item_id", "label"])
        for item, lab in zip(vocab.items, np.asarray(labels).tolist()):
            w.writerow([item, lab])
