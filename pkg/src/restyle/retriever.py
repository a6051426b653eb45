"""Top-K retrieval of target-style sentences.

Three interchangeable retrieval kinds:

* sparse  -- BM25 over a per-style inverted index,
* dense   -- exact cosine search over unit-normalized sentence embeddings
             (recomputed periodically as the encoder trains),
* random  -- uniform sampling without replacement, the control baseline.

All three exclude candidates that are token-identical to the query
sentence and break score ties by lower sentence id, so results are
deterministic and testable against brute-force oracles.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

BM25_K1 = 1.2
BM25_B = 0.75


@dataclass
class RetrievalResult:
    """Top-K sentences with scores, best first.

    ``short`` flags a result that exhausted the candidate pool before
    reaching K.  ``encodings`` is filled in later by the model once the
    sentences have been run through the encoder.
    """

    sentences: list[list[str]]
    ids: list[int]
    scores: list[float]
    short: bool = False
    encodings: object = None

    def __len__(self) -> int:
        return len(self.sentences)


def _select_top(
    scores: np.ndarray,
    sentences: list[list[str]],
    k: int,
    exclude: list[str] | None,
) -> RetrievalResult:
    """Rank by (score desc, id asc) and take K, skipping query-identical rows."""
    ids = np.arange(len(scores))
    order = np.lexsort((ids, -scores))
    skip = tuple(exclude) if exclude is not None else None
    picked_ids: list[int] = []
    for idx in order:
        if skip is not None and tuple(sentences[idx]) == skip:
            continue
        picked_ids.append(int(idx))
        if len(picked_ids) == k:
            break
    return RetrievalResult(
        sentences=[sentences[i] for i in picked_ids],
        ids=picked_ids,
        scores=[float(scores[i]) for i in picked_ids],
        short=len(picked_ids) < k,
    )


class SparseIndex:
    """Inverted index over one style subset with BM25 scoring.

    Document statistics (lengths, avgdl, IDF) are computed per subset at
    build time.  IDF uses the nonnegative form
    ``max(0, ln((N - n_w + 0.5) / (n_w + 0.5) + 1))``.
    """

    def __init__(self, sentences: list[list[str]], k1: float = BM25_K1, b: float = BM25_B):
        if not sentences:
            raise ValueError("cannot index an empty style subset")
        self.sentences = sentences
        self.k1 = k1
        self.b = b
        self.doc_lens = np.array([len(s) for s in sentences], dtype=np.float64)
        self.avgdl = float(self.doc_lens.mean())
        # length-normalization factor of each document, shared by score/search
        self._norm = 1.0 - b + b * self.doc_lens / self.avgdl

        postings: dict[str, dict[int, int]] = {}
        for doc_id, sentence in enumerate(sentences):
            for token in sentence:
                postings.setdefault(token, {}).setdefault(doc_id, 0)
                postings[token][doc_id] += 1
        n_docs = len(sentences)
        self.idf: dict[str, float] = {}
        self.postings: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        for token, by_doc in postings.items():
            doc_ids = np.fromiter(by_doc.keys(), dtype=np.int64)
            tfs = np.fromiter(by_doc.values(), dtype=np.float64)
            order = np.argsort(doc_ids)
            self.postings[token] = (doc_ids[order], tfs[order])
            n_w = len(doc_ids)
            self.idf[token] = max(0.0, np.log((n_docs - n_w + 0.5) / (n_w + 0.5) + 1.0))

    def __len__(self) -> int:
        return len(self.sentences)

    def term_frequency(self, token: str, doc_id: int) -> float:
        doc_ids, tfs = self.postings.get(token, (None, None))
        if doc_ids is None:
            return 0.0
        pos = np.searchsorted(doc_ids, doc_id)
        if pos < len(doc_ids) and doc_ids[pos] == doc_id:
            return float(tfs[pos])
        return 0.0

    def score(self, query_tokens: list[str], doc_id: int) -> float:
        """BM25 score of one document; each query-token occurrence counts."""
        if not 0 <= doc_id < len(self.sentences):
            raise KeyError(f"unknown doc_id {doc_id}")
        norm = self._norm[doc_id]
        total = 0.0
        for token in query_tokens:
            tf = self.term_frequency(token, doc_id)
            if tf == 0.0:
                continue
            total += self.idf[token] * (tf * (self.k1 + 1.0)) / (tf + self.k1 * norm)
        return total

    def search(
        self, query_tokens: list[str], k: int, exclude: list[str] | None = None
    ) -> RetrievalResult:
        if k < 1:
            raise ValueError("k must be >= 1")
        scores = np.zeros(len(self.sentences), dtype=np.float64)
        for token in query_tokens:
            entry = self.postings.get(token)
            if entry is None:
                continue
            doc_ids, tfs = entry
            contrib = self.idf[token] * (tfs * (self.k1 + 1.0)) / (
                tfs + self.k1 * self._norm[doc_ids]
            )
            scores[doc_ids] += contrib
        return _select_top(scores, self.sentences, k, exclude)


class DenseIndex:
    """Exact cosine search over unit-normalized sentence embeddings.

    Embeddings are stored float32 for persistence and scored in float64;
    since every stored row has unit norm, cosine similarity reduces to a
    dot product with the normalized query.
    """

    def __init__(self, sentences: list[list[str]], embeddings: np.ndarray):
        if len(sentences) != embeddings.shape[0]:
            raise ValueError("one embedding per sentence required")
        if not sentences:
            raise ValueError("cannot index an empty style subset")
        self.sentences = sentences
        norms = np.linalg.norm(embeddings.astype(np.float64), axis=1, keepdims=True)
        if np.any(norms == 0.0):
            raise ValueError("zero-norm sentence embedding")
        unit = embeddings.astype(np.float64) / norms
        self.embeddings = unit.astype(np.float32)
        self._search_matrix = self.embeddings.astype(np.float64)

    def __len__(self) -> int:
        return len(self.sentences)

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    def search(
        self, query_embedding: np.ndarray, k: int, exclude: list[str] | None = None
    ) -> RetrievalResult:
        if k < 1:
            raise ValueError("k must be >= 1")
        query = np.asarray(query_embedding, dtype=np.float64).reshape(-1)
        norm = np.linalg.norm(query)
        if norm == 0.0:
            raise ValueError("zero-norm query embedding")
        scores = self._search_matrix @ (query / norm)
        return _select_top(scores, self.sentences, k, exclude)

    def save(self, path: str | Path, style: int, encoder_hash: str = "") -> None:
        np.savez(
            path,
            ids=np.arange(len(self.sentences), dtype=np.int64),
            embeddings=self.embeddings,
            dim=np.int64(self.dim),
            style=np.int64(style),
            encoder_hash=np.str_(encoder_hash),
        )

    @classmethod
    def load(cls, path: str | Path, sentences: list[list[str]]) -> "DenseIndex":
        with np.load(path, allow_pickle=False) as data:
            embeddings = data["embeddings"]
            if int(data["dim"]) != embeddings.shape[1]:
                raise ValueError("dense index header disagrees with matrix shape")
        return cls(sentences, embeddings)


def retrieve_random(
    sentences: list[list[str]],
    k: int,
    seed: int,
    exclude: list[str] | None = None,
) -> RetrievalResult:
    """Uniform sample without replacement, reproducible under ``seed``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    skip = tuple(exclude) if exclude is not None else None
    candidates = [
        i for i, s in enumerate(sentences) if skip is None or tuple(s) != skip
    ]
    rng = random.Random(seed)
    picked = rng.sample(candidates, min(k, len(candidates)))
    return RetrievalResult(
        sentences=[sentences[i] for i in picked],
        ids=picked,
        scores=[0.0] * len(picked),
        short=len(picked) < k,
    )


@dataclass
class Retriever:
    """Per-style retrieval front end with a single ``kind`` switch.

    Dense indices are immutable snapshots; :meth:`refresh` builds fresh
    ones from the current encoder and swaps them in, so concurrent
    readers never observe a half-updated index.
    """

    kind: str
    corpus_sentences: list[list[list[str]]]
    k: int
    k1: float = BM25_K1
    b: float = BM25_B
    sparse: list[SparseIndex] = field(default_factory=list)
    dense: list[DenseIndex | None] = field(default_factory=list)
    refresh_count: int = 0

    def __post_init__(self):
        if self.kind not in ("sparse", "dense", "random"):
            raise ValueError(f"unknown retriever kind: {self.kind}")
        if self.kind == "sparse":
            self.sparse = [
                SparseIndex(s, self.k1, self.b) for s in self.corpus_sentences
            ]
        self.dense = [None] * len(self.corpus_sentences)

    @property
    def num_styles(self) -> int:
        return len(self.corpus_sentences)

    def refresh(self, embed_fn) -> None:
        """Recompute all dense embeddings with the current encoder.

        ``embed_fn`` maps a list of sentences to an (N, d) embedding
        matrix.  No-op for sparse/random retrievers.
        """
        if self.kind != "dense":
            return
        fresh = [
            DenseIndex(sentences, embed_fn(sentences))
            for sentences in self.corpus_sentences
        ]
        self.dense = fresh
        self.refresh_count += 1

    def retrieve(
        self,
        style: int,
        query_tokens: list[str] | None = None,
        query_embedding: np.ndarray | None = None,
        seed: int = 0,
    ) -> RetrievalResult:
        if self.kind == "sparse":
            if query_tokens is None:
                raise ValueError("sparse retrieval needs query tokens")
            return self.sparse[style].search(query_tokens, self.k, exclude=query_tokens)
        if self.kind == "dense":
            index = self.dense[style]
            if index is None:
                raise ValueError("dense index not built; call refresh() first")
            if query_embedding is None:
                raise ValueError("dense retrieval needs a query embedding")
            return index.search(query_embedding, self.k, exclude=query_tokens)
        return retrieve_random(
            self.corpus_sentences[style], self.k, seed, exclude=query_tokens
        )
