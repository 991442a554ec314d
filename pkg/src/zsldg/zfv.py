"""ZFV binary format: feature datasets with semantic tables and splits.

Layout (all integers unsigned 32-bit little-endian, all floats 64-bit
little-endian):

    magic "ZFV1"
    sample_count, visual_dim, semantic_dim, class_count, domain_count
    seen_class_count,  seen class ids...
    unseen_class_count, unseen class ids...
    seen_domain_count, seen domain ids...
    unseen_domain_count, unseen domain ids...
    rows: sample_count x (domain_id, class_id, visual_dim floats)
    semantic table: class_count x (class_id, semantic_dim floats)

Files are immutable after write; read(write(ds)) is bit-exact.
"""

from __future__ import annotations

import struct

import numpy as np

from .synth import Dataset, SplitSpec

MAGIC = b"ZFV1"


class ZfvError(Exception):
    """Base parse/serialize error; message carries the byte offset."""


class ZfvHeaderError(ZfvError):
    pass


class ZfvTruncationError(ZfvError):
    pass


class ZfvReferenceError(ZfvError):
    pass


def _u32s(*vals):
    return struct.pack("<%dI" % len(vals), *vals)


def write_zfv(dataset, path):
    """Serialize a Dataset; ids must be dense integers from 0."""
    n, vdim = dataset.x.shape
    cls_n, sdim = dataset.semantics.shape
    dom_n = dataset.n_domains
    s = dataset.splits
    if set(s.seen_classes) | set(s.unseen_classes) != set(range(cls_n)):
        raise ZfvError("split class ids are not dense from 0")
    if set(s.seen_domains) | set(s.unseen_domains) != set(range(dom_n)):
        raise ZfvError("split domain ids are not dense from 0")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_u32s(n, vdim, sdim, cls_n, dom_n))
        for ids in (s.seen_classes, s.unseen_classes,
                    s.seen_domains, s.unseen_domains):
            fh.write(_u32s(len(ids), *ids))
        row = np.empty(n, dtype=[("d", "<u4"), ("y", "<u4"), ("x", "<f8", (vdim,))])
        row["d"] = dataset.d
        row["y"] = dataset.y
        row["x"] = dataset.x
        fh.write(row.tobytes())
        sem = np.empty(cls_n, dtype=[("y", "<u4"), ("a", "<f8", (sdim,))])
        sem["y"] = np.arange(cls_n)
        sem["a"] = dataset.semantics
        fh.write(sem.tobytes())


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.off = 0

    def take(self, n, what):
        if self.off + n > len(self.buf):
            raise ZfvTruncationError(
                "truncated while reading %s at byte offset %d (need %d bytes, "
                "file has %d left)" % (what, self.off, n, len(self.buf) - self.off))
        out = self.buf[self.off:self.off + n]
        self.off += n
        return out

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]

    def u32s(self, count, what):
        raw = self.take(4 * count, what)
        return tuple(int(v) for v in np.frombuffer(raw, dtype="<u4"))


def read_zfv(path):
    """Parse a ZFV file back into a Dataset; bit-exact round trip."""
    with open(path, "rb") as fh:
        buf = fh.read()
    r = _Reader(buf)
    if r.take(4, "magic") != MAGIC:
        raise ZfvHeaderError("bad magic at byte offset 0")
    n = r.u32("sample count")
    vdim = r.u32("visual dim")
    sdim = r.u32("semantic dim")
    cls_n = r.u32("class count")
    dom_n = r.u32("domain count")
    if vdim == 0 or sdim == 0:
        raise ZfvHeaderError("zero dimension in header at byte offset 4")

    id_sets = []
    for what in ("seen classes", "unseen classes", "seen domains", "unseen domains"):
        count = r.u32(what + " count")
        limit = cls_n if "class" in what else dom_n
        if count > limit:
            raise ZfvHeaderError("%s count %d exceeds total %d at byte offset %d"
                                 % (what, count, limit, r.off - 4))
        id_sets.append(r.u32s(count, what + " ids"))
    splits = SplitSpec(*id_sets)

    # sanity before allocating row storage: the declared counts must fit
    row_bytes = n * (8 + 8 * vdim)
    sem_bytes = cls_n * (4 + 8 * sdim)
    if r.off + row_bytes + sem_bytes > len(buf):
        raise ZfvTruncationError(
            "header declares %d rows + %d semantic entries but the file ends "
            "early (byte offset %d, %d bytes left)" % (n, cls_n, r.off,
                                                       len(buf) - r.off))
    rows = np.frombuffer(r.take(row_bytes, "rows"),
                         dtype=[("d", "<u4"), ("y", "<u4"), ("x", "<f8", (vdim,))])
    sem = np.frombuffer(r.take(sem_bytes, "semantic table"),
                        dtype=[("y", "<u4"), ("a", "<f8", (sdim,))])
    if r.off != len(buf):
        raise ZfvError("trailing bytes at byte offset %d" % r.off)

    sem_ids = sem["y"]
    if not np.array_equal(np.sort(sem_ids), np.arange(cls_n)):
        raise ZfvReferenceError("semantic table ids are not dense from 0 "
                                "(block starts at byte offset %d)"
                                % (len(buf) - sem_bytes))
    semantics = np.empty((cls_n, sdim))
    semantics[sem_ids] = sem["a"]

    y = rows["y"].astype(np.int64)
    d = rows["d"].astype(np.int64)
    if n and y.max(initial=0) >= cls_n:
        bad = int(np.argmax(y >= cls_n))
        raise ZfvReferenceError(
            "row %d references class id %d with no semantic entry (row starts "
            "at byte offset %d)" % (bad, y[bad], len(buf) - sem_bytes
                                    - row_bytes + bad * (8 + 8 * vdim)))
    if n and d.max(initial=0) >= dom_n:
        raise ZfvReferenceError("row domain id out of range")
    return Dataset(rows["x"].astype(np.float64).reshape(n, vdim), y, d,
                   semantics, splits)
