"""Hashed character-trigram embeddings and an in-memory cosine top-k store.

Text is lowercased, whitespace-collapsed and padded with one space on each
side before trigrams are taken, so short words still share boundary grams
("abc" and "abd" both contain " ab"). Each trigram is hashed with keyed
BLAKE2b into one of ``dim`` buckets; counts are then L2-normalized.
"""
from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

DEFAULT_DIM = 256
_HASH_KEY = b"glasspipe-trigram-v1"


class DuplicateDocumentError(KeyError):
    pass


class CorpusFormatError(ValueError):
    def __init__(self, path, lineno, reason):
        super().__init__(f"{path}:{lineno}: {reason}")
        self.path = path
        self.lineno = lineno


def normalize_text(text: str) -> str:
    return " ".join(text.lower().split())


def trigrams(text: str) -> list[str]:
    text = normalize_text(text)
    if not text:
        return []
    padded = f" {text} "
    return [padded[i:i + 3] for i in range(len(padded) - 2)]


def _bucket(gram: str, dim: int) -> int:
    h = hashlib.blake2b(gram.encode("utf-8"), digest_size=8, key=_HASH_KEY)
    return int.from_bytes(h.digest(), "little") % dim


def embed(text: str, dim: int = DEFAULT_DIM) -> np.ndarray:
    vec = np.zeros(dim)
    for g in trigrams(text):
        vec[_bucket(g, dim)] += 1.0
    n = np.linalg.norm(vec)
    if n > 0:
        vec /= n
    return vec


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity; 0.0 when either vector has zero norm."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


@dataclass(frozen=True, eq=False)
class Document:
    doc_id: str
    text: str
    embedding: np.ndarray
    timestamp: int

    def __eq__(self, other):
        if not isinstance(other, Document):
            return NotImplemented
        return (
            self.doc_id == other.doc_id
            and self.text == other.text
            and self.timestamp == other.timestamp
            and np.array_equal(self.embedding, other.embedding)
        )

    __hash__ = None

    def to_json(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "text": self.text,
            "timestamp": self.timestamp,
            "embedding": [float(v) for v in self.embedding],
        }


@dataclass(frozen=True)
class RetrievalResult:
    doc_id: str
    similarity: float
    rank: int


class MemoryStore:
    """Append-only document corpus with exact cosine top-k retrieval.

    Writers serialize on a lock and publish a fresh immutable snapshot, so
    readers never see a half-added document. If ``path`` is given, every
    ``add`` is also appended to that JSONL file.
    """

    def __init__(self, dim: int = DEFAULT_DIM, path: str | Path | None = None):
        self.dim = dim
        self.path = Path(path) if path is not None else None
        self._lock = threading.Lock()
        self._install(())

    def __len__(self):
        return len(self._docs)

    def __iter__(self):
        return iter(self._docs)

    def __eq__(self, other):
        if not isinstance(other, MemoryStore):
            return NotImplemented
        return self.dim == other.dim and self._docs == other._docs

    @property
    def documents(self) -> tuple[Document, ...]:
        return self._docs

    def get(self, doc_id: str) -> Document | None:
        for d in self._docs:
            if d.doc_id == doc_id:
                return d
        return None

    def add(self, doc_id: str, text: str, timestamp: int | None = None,
            embedding: np.ndarray | None = None) -> Document:
        """Embed and append a document. ``embedding`` overrides the text embedder."""
        if embedding is None:
            embedding = embed(text, self.dim)
        embedding = np.asarray(embedding, dtype=float)
        if embedding.shape != (self.dim,):
            raise ValueError(f"embedding must have shape ({self.dim},)")
        with self._lock:
            if doc_id in self._ids:
                raise DuplicateDocumentError(doc_id)
            if timestamp is None:
                timestamp = self._docs[-1].timestamp + 1 if self._docs else 0
            doc = Document(doc_id, text, embedding, timestamp)
            if self.path is not None:
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(doc.to_json(), ensure_ascii=False) + "\n")
            self._install(self._docs + (doc,))
            return doc

    def extend(self, items: Iterable[tuple[str, str]]) -> None:
        for doc_id, text in items:
            self.add(doc_id, text)

    def _install(self, docs: tuple[Document, ...]) -> None:
        matrix = np.vstack([d.embedding for d in docs]) if docs else np.zeros((0, self.dim))
        # one reference swap, so readers get a consistent (docs, matrix) pair
        self._snapshot = (docs, matrix)
        self._docs = docs
        self._ids = frozenset(d.doc_id for d in docs)

    def top_k(self, query: np.ndarray, k: int) -> list[RetrievalResult]:
        if k < 1:
            raise ValueError("k must be >= 1")
        docs, matrix = self._snapshot
        if not docs:
            return []
        q = np.asarray(query, dtype=float)
        qn = np.linalg.norm(q)
        norms = np.linalg.norm(matrix, axis=1)
        denom = norms * qn
        with np.errstate(invalid="ignore", divide="ignore"):
            sims = np.where(denom > 0, matrix @ q / np.where(denom > 0, denom, 1.0), 0.0)
        sims = np.clip(sims, -1.0, 1.0)
        order = sorted(range(len(docs)), key=lambda i: (-sims[i], docs[i].timestamp, docs[i].doc_id))
        return [
            RetrievalResult(docs[i].doc_id, float(sims[i]), rank)
            for rank, i in enumerate(order[:k], start=1)
        ]

    def query(self, text: str, k: int) -> list[RetrievalResult]:
        return self.top_k(embed(text, self.dim), k)

    def persist(self, path: str | Path) -> None:
        """Rewrite the whole corpus to ``path`` (compaction)."""
        path = Path(path)
        tmp = path.with_suffix(path.suffix + ".tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            for d in self._docs:
                fh.write(json.dumps(d.to_json(), ensure_ascii=False) + "\n")
        tmp.replace(path)

    @classmethod
    def load(cls, path: str | Path, dim: int | None = None, attach: bool = False) -> "MemoryStore":
        path = Path(path)
        docs: list[Document] = []
        seen: set[str] = set()
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    doc = Document(
                        str(rec["doc_id"]),
                        str(rec["text"]),
                        np.asarray(rec["embedding"], dtype=float),
                        int(rec["timestamp"]),
                    )
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                    raise CorpusFormatError(path, lineno, f"malformed record ({exc})") from exc
                if doc.embedding.ndim != 1:
                    raise CorpusFormatError(path, lineno, "embedding must be a flat list")
                if dim is None:
                    dim = len(doc.embedding)
                if len(doc.embedding) != dim:
                    raise CorpusFormatError(path, lineno, f"embedding has {len(doc.embedding)} values, expected {dim}")
                if doc.doc_id in seen:
                    raise CorpusFormatError(path, lineno, f"duplicate doc_id {doc.doc_id!r}")
                seen.add(doc.doc_id)
                docs.append(doc)
        store = cls(dim=dim or DEFAULT_DIM, path=path if attach else None)
        store._install(tuple(docs))
        return store
