"""Embedding ingestion, cosine-similarity kernels and dispersion statistics.

Two on-disk formats are supported:

* ``text``: one record per line, ``id<TAB>label<TAB>v1,v2,...`` (UTF-8).
* ``binary``: ``b"DDIV1"``, u32 n, u32 d, n length-prefixed UTF-8 ids,
  n length-prefixed UTF-8 labels, then n*d little-endian float32 values.
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Iterable, Sequence

import numpy as np

from .errors import DataError

MAGIC = b"DDIV1"
FORMATS = ("text", "binary")
_U32 = struct.Struct("<I")


class EmbeddingFormatError(DataError):
    """Malformed embedding input; carries the source name and line/record."""

    def __init__(self, message, *, source=None, line=None, record_id=None):
        loc = ":".join(str(p) for p in (source, line) if p is not None)
        if record_id is not None:
            message = f"{message} (record {record_id!r})"
        super().__init__(f"{loc}: {message}" if loc else message)
        self.source = source
        self.line = line
        self.record_id = record_id


@dataclass(frozen=True)
class EmbeddingRecord:
    id: str
    label: str | None
    vector: np.ndarray
    norm: float
    unit: np.ndarray


@dataclass(frozen=True, eq=False)
class EmbeddingSet:
    """Ordered, immutable collection of embedded records.

    Vectors are held row-major in ``vectors``; ``norms`` and ``units`` are
    derived at construction.  ``dimension`` is ``None`` only for an empty set.
    """

    ids: tuple[str, ...]
    labels: tuple[str | None, ...]
    vectors: np.ndarray
    role: str = "corpus"
    norms: np.ndarray = field(init=False)
    units: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.role not in ("corpus", "query"):
            raise ValueError(f"role must be 'corpus' or 'query', got {self.role!r}")
        vectors = np.asarray(self.vectors, dtype=np.float64)
        if vectors.ndim != 2:
            vectors = vectors.reshape(len(self.ids), -1)
        if len(self.ids) != vectors.shape[0] or len(self.labels) != vectors.shape[0]:
            raise ValueError("ids, labels and vectors must have the same length")
        seen = set()
        for rid in self.ids:
            if rid in seen:
                raise EmbeddingFormatError("duplicate id", record_id=rid)
            seen.add(rid)
        norms = np.sqrt(np.einsum("ij,ij->i", vectors, vectors))
        for i in np.flatnonzero(norms == 0):
            raise EmbeddingFormatError("zero-norm vector has no cosine direction",
                                       record_id=self.ids[i])
        units = vectors / norms[:, None] if len(norms) else vectors.copy()
        for arr in (vectors, norms, units):
            arr.setflags(write=False)
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "norms", norms)
        object.__setattr__(self, "units", units)

    @classmethod
    def from_records(cls, rows: Iterable[tuple[str, str | None, Sequence[float]]],
                     role: str = "corpus") -> "EmbeddingSet":
        ids, labels, vecs = [], [], []
        dim = None
        for rid, label, vec in rows:
            vec = np.asarray(vec, dtype=np.float64)
            if dim is None:
                dim = vec.shape[0]
            elif vec.shape[0] != dim:
                raise EmbeddingFormatError(
                    f"dimension mismatch: expected {dim}, got {vec.shape[0]}", record_id=rid)
            ids.append(rid)
            labels.append(label)
            vecs.append(vec)
        arr = np.vstack(vecs) if vecs else np.zeros((0, 0))
        return cls(tuple(ids), tuple(labels), arr, role)

    @property
    def dimension(self) -> int | None:
        return self.vectors.shape[1] if len(self.ids) else None

    def __len__(self):
        return len(self.ids)

    def __getitem__(self, i: int) -> EmbeddingRecord:
        return EmbeddingRecord(self.ids[i], self.labels[i], self.vectors[i],
                               float(self.norms[i]), self.units[i])

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def index_of(self, record_id: str) -> int:
        return self.ids.index(record_id)


# ---------------------------------------------------------------------------
# I/O
# ---------------------------------------------------------------------------

def load_embeddings(source: BinaryIO | bytes, format: str = "text", *,
                    role: str = "corpus", name: str | None = None) -> EmbeddingSet:
    """Parse an embedding stream in ``text`` or ``binary`` format."""
    data = source if isinstance(source, (bytes, bytearray)) else source.read()
    if format == "text":
        return _load_text(bytes(data), role, name)
    if format == "binary":
        return _load_binary(bytes(data), role, name)
    raise ValueError(f"unknown embedding format {format!r}; expected one of {FORMATS}")


def read_embeddings(path, format: str = "text", role: str = "corpus") -> EmbeddingSet:
    with open(path, "rb") as fh:
        return load_embeddings(fh, format, role=role, name=str(path))


def _load_text(data: bytes, role, name) -> EmbeddingSet:
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise EmbeddingFormatError(f"not valid UTF-8 ({exc})", source=name) from None
    ids, labels, rows = [], [], []
    seen = {}
    dim = None
    for lineno, line in enumerate(text.split("\n"), start=1):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise EmbeddingFormatError(
                f"expected 3 tab-separated fields, got {len(parts)}", source=name, line=lineno)
        rid, label, values = parts
        if not rid:
            raise EmbeddingFormatError("empty id", source=name, line=lineno)
        if rid in seen:
            raise EmbeddingFormatError(
                f"duplicate id {rid!r} (first seen on line {seen[rid]})", source=name, line=lineno)
        seen[rid] = lineno
        try:
            vec = [float(v) for v in values.split(",")]
        except ValueError:
            raise EmbeddingFormatError(f"unparseable vector for {rid!r}",
                                       source=name, line=lineno) from None
        if dim is None:
            dim = len(vec)
        elif len(vec) != dim:
            raise EmbeddingFormatError(
                f"dimension mismatch for {rid!r}: expected {dim}, got {len(vec)}",
                source=name, line=lineno)
        if not any(vec):
            raise EmbeddingFormatError(f"zero-norm vector for {rid!r}", source=name, line=lineno)
        ids.append(rid)
        labels.append(label or None)
        rows.append(vec)
    arr = np.asarray(rows, dtype=np.float64) if rows else np.zeros((0, 0))
    if not np.all(np.isfinite(arr)):
        raise EmbeddingFormatError("non-finite vector component", source=name)
    return EmbeddingSet(tuple(ids), tuple(labels), arr, role)


def _load_binary(data: bytes, role, name) -> EmbeddingSet:
    buf = io.BytesIO(data)

    def take(nbytes, what):
        chunk = buf.read(nbytes)
        if len(chunk) != nbytes:
            raise EmbeddingFormatError(f"truncated input while reading {what}", source=name)
        return chunk

    if take(len(MAGIC), "magic") != MAGIC:
        raise EmbeddingFormatError("bad magic, expected DDIV1", source=name)
    n, = _U32.unpack(take(4, "n"))
    d, = _U32.unpack(take(4, "d"))

    def strings(what):
        out = []
        for i in range(n):
            length, = _U32.unpack(take(4, f"{what} length #{i}"))
            try:
                out.append(take(length, f"{what} #{i}").decode("utf-8"))
            except UnicodeDecodeError:
                raise EmbeddingFormatError(f"{what} #{i} is not valid UTF-8", source=name) from None
        return out

    ids = strings("id")
    labels = [lab or None for lab in strings("label")]
    values = np.frombuffer(take(4 * n * d, "vector data"), dtype="<f4")
    if buf.read(1):
        raise EmbeddingFormatError("trailing bytes after vector data", source=name)
    arr = values.astype(np.float64).reshape(n, d)
    if n and d == 0:
        raise EmbeddingFormatError("dimension must be positive", source=name)
    return EmbeddingSet(tuple(ids), tuple(labels), arr, role)


def dump_embeddings(es: EmbeddingSet, format: str = "text") -> bytes:
    if format == "text":
        lines = []
        for rid, label, vec in zip(es.ids, es.labels, es.vectors):
            lines.append(f"{rid}\t{label or ''}\t{','.join(repr(float(v)) for v in vec)}\n")
        return "".join(lines).encode("utf-8")
    if format == "binary":
        n = len(es)
        d = es.dimension or 0
        out = [MAGIC, _U32.pack(n), _U32.pack(d)]
        for seq in (es.ids, [lab or "" for lab in es.labels]):
            for s in seq:
                raw = s.encode("utf-8")
                out += [_U32.pack(len(raw)), raw]
        out.append(np.ascontiguousarray(es.vectors, dtype="<f4").tobytes())
        return b"".join(out)
    raise ValueError(f"unknown embedding format {format!r}")


def write_embeddings(es: EmbeddingSet, path, format: str = "text") -> None:
    with open(path, "wb") as fh:
        fh.write(dump_embeddings(es, format))


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SimilarityKernel:
    """Dense symmetric cosine-similarity matrix over an index universe.

    ``ids[p]`` is the record id at position ``p``; ``norms`` keeps the raw
    L2 norms so that the L-ensemble ``Diag(r) W Diag(r)`` can be recovered.
    """

    entries: np.ndarray
    ids: tuple[str, ...]
    norms: np.ndarray

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    def l_ensemble(self) -> np.ndarray:
        return self.norms[:, None] * self.entries * self.norms[None, :]

    def to_bytes(self) -> bytes:
        """Debug export: u32 n, then n*n little-endian float64 row-major."""
        return _U32.pack(self.size) + np.ascontiguousarray(self.entries, dtype="<f8").tobytes()

    @classmethod
    def from_bytes(cls, raw: bytes) -> "SimilarityKernel":
        n, = _U32.unpack(raw[:4])
        entries = np.frombuffer(raw[4:], dtype="<f8").reshape(n, n).astype(np.float64)
        return cls(entries, tuple(str(i) for i in range(n)), np.ones(n))


def cosine_kernel(set_a: EmbeddingSet, set_b: EmbeddingSet | None = None) -> SimilarityKernel:
    """Cosine kernel over ``set_a``, or over the concatenation ``set_a || set_b``."""
    units, ids, norms = set_a.units, set_a.ids, set_a.norms
    if set_b is not None and len(set_b):
        if len(set_a) and set_a.dimension != set_b.dimension:
            raise EmbeddingFormatError(
                f"dimension mismatch: {set_a.dimension} vs {set_b.dimension}")
        units = np.vstack([units, set_b.units]) if len(set_a) else set_b.units
        ids = ids + set_b.ids
        norms = np.concatenate([norms, set_b.norms])
    gram = units @ units.T
    gram = 0.5 * (gram + gram.T)
    np.clip(gram, -1.0, 1.0, out=gram)
    gram.setflags(write=False)
    return SimilarityKernel(gram, tuple(ids), np.asarray(norms))


def dispersion_stats(kernel: SimilarityKernel, subset: Sequence[int],
                     residual_floor: float = 1e-12) -> dict:
    idx = list(subset)
    if len(idx) < 2:
        raise ValueError("dispersion statistics need at least two indices")
    if len(set(idx)) != len(idx):
        raise ValueError("subset indices must be distinct")
    sub = kernel.entries[np.ix_(idx, idx)]
    off = sub[~np.eye(len(idx), dtype=bool)]
    # local import: objective depends on this module
    from .objective import floored_logdet
    return {
        "mean_pairwise_sim": float(off.mean()),
        "min_pairwise_sim": float(off.min()),
        "logdet": floored_logdet(sub, residual_floor),
    }
