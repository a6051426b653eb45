"""Corpus ingestion, vocabulary construction, and per-style word statistics.

Corpora live on disk as one plain-text file per style, one sentence per
line (``<prefix>.<split>.<style_index>``).  Sentences are lowercased and
whitespace-tokenized at load time; blank lines are skipped.

The per-style word statistics feed the pooling weights of the dense
retriever: a word that occurs with the same relative frequency in every
style subset is style-neutral and gets weight 1, while a word exclusive
to one style gets a small (possibly negative) weight.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

PAD, UNK, BOS, EOS = "<pad>", "<unk>", "<bos>", "<eos>"
RESERVED = (PAD, UNK, BOS, EOS)
PAD_ID, UNK_ID, BOS_ID, EOS_ID = 0, 1, 2, 3


def tokenize(line: str) -> list[str]:
    """Lowercase + whitespace split; benchmark files are pre-tokenized."""
    return line.lower().split()


def style_file(prefix: str | Path, split: str, style: int) -> Path:
    """Path of one style subset under the ``<prefix>.<split>.<style>`` convention."""
    return Path(f"{prefix}.{split}.{style}")


def reference_file(prefix: str | Path, style: int) -> Path:
    """Path of the human references aligned with ``<prefix>.test.<style>``."""
    return Path(f"{prefix}.ref.{style}")


@dataclass
class StyleCorpus:
    """Tokenized sentences partitioned into one subset per style."""

    subsets: list[list[list[str]]]
    style_names: list[str]
    split: str

    @property
    def num_styles(self) -> int:
        return len(self.subsets)

    @property
    def sizes(self) -> list[int]:
        return [len(s) for s in self.subsets]

    def sentences(self, style: int) -> list[list[str]]:
        return self.subsets[style]

    def all_sentences(self) -> list[list[str]]:
        out: list[list[str]] = []
        for subset in self.subsets:
            out.extend(subset)
        return out


def load_style_file(path: str | Path) -> list[list[str]]:
    """Read one sentence per line, skipping blank lines."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"corpus file not found: {path}")
    sentences = []
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            tokens = tokenize(line)
            if tokens:
                sentences.append(tokens)
    return sentences


def load_corpus(
    paths: list[str | Path],
    split: str,
    style_names: list[str] | None = None,
    expected_styles: int | None = None,
) -> StyleCorpus:
    """Load one file per style into a :class:`StyleCorpus`.

    Raises if a file is missing, a subset comes out empty, or the number
    of files disagrees with ``expected_styles``.
    """
    if expected_styles is not None and len(paths) != expected_styles:
        raise ValueError(
            f"expected {expected_styles} style files, got {len(paths)}"
        )
    if len(paths) < 2:
        raise ValueError("a style corpus needs at least 2 style subsets")
    subsets = []
    for path in paths:
        sentences = load_style_file(path)
        if not sentences:
            raise ValueError(f"style subset is empty: {path}")
        subsets.append(sentences)
    if style_names is None:
        style_names = [str(i) for i in range(len(paths))]
    if len(style_names) != len(paths):
        raise ValueError("style_names and paths differ in length")
    return StyleCorpus(subsets=subsets, style_names=list(style_names), split=split)


class Vocabulary:
    """Dense 0-based token ids with four reserved entries.

    Ids 0..3 are pad/unk/bos/eos; corpus tokens follow, ordered by
    descending training frequency (ties alphabetical) so the mapping is
    deterministic and survives a save/load round trip.
    """

    def __init__(self, corpus_tokens: list[str]):
        for tok in RESERVED:
            if tok in corpus_tokens:
                raise ValueError(f"reserved token {tok!r} collides with corpus token")
        self.tokens: list[str] = list(RESERVED) + list(corpus_tokens)
        self.index: dict[str, int] = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def id_of(self, token: str) -> int:
        return self.index.get(token, UNK_ID)

    def token_of(self, idx: int) -> str:
        return self.tokens[idx]

    def encode(self, tokens: list[str]) -> list[int]:
        return [self.index.get(t, UNK_ID) for t in tokens]

    def decode(self, ids: list[int]) -> list[str]:
        return [self.tokens[i] for i in ids]

    @classmethod
    def from_corpus(cls, corpus: StyleCorpus, min_freq: int = 2) -> "Vocabulary":
        """Build from a train split; tokens below ``min_freq`` map to unk."""
        freq: Counter[str] = Counter()
        for sentence in corpus.all_sentences():
            freq.update(sentence)
        kept = [t for t, c in freq.items() if c >= min_freq and t not in RESERVED]
        kept.sort(key=lambda t: (-freq[t], t))
        return cls(kept)

    def save(self, path: str | Path) -> None:
        """One token per line; line number = id after the reserved block."""
        with Path(path).open("w", encoding="utf-8") as fh:
            for token in self.tokens[len(RESERVED):]:
                fh.write(token + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        with Path(path).open(encoding="utf-8") as fh:
            tokens = [line.rstrip("\n") for line in fh if line.rstrip("\n")]
        return cls(tokens)


@dataclass
class StyleWordStats:
    """Per-word style counts, ratios, and the neutrality weight.

    ``counts[w, j]`` is how often vocabulary word ``w`` occurs in style
    subset ``j``; ``ratios`` normalizes each row over its total.  The
    neutrality weight of a word is

        1 - sum_j |ratio_j - 1/M|

    which is 1 exactly when the word is spread evenly over all M styles
    and drops as the word becomes style-discriminative.  Words never seen
    in training keep weight 1 (no style evidence).  The weights seed a
    trainable parameter, so they may drift outside their initial range
    during joint training.
    """

    counts: np.ndarray
    ratios: np.ndarray
    neutrality: np.ndarray

    @property
    def num_styles(self) -> int:
        return self.counts.shape[1]


def neutrality_from_counts(counts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Ratios and neutrality weights for a (V, M) count matrix.

    Zero-count rows get uniform-free treatment: ratio rows of zeros and
    neutrality 1.
    """
    counts = np.asarray(counts, dtype=np.float64)
    num_styles = counts.shape[1]
    totals = counts.sum(axis=1)
    seen = totals > 0
    ratios = np.zeros_like(counts)
    ratios[seen] = counts[seen] / totals[seen, None]
    deviation = np.abs(ratios - 1.0 / num_styles).sum(axis=1)
    neutrality = 1.0 - deviation
    neutrality[~seen] = 1.0
    return ratios, neutrality


def compute_style_stats(corpus: StyleCorpus, vocab: Vocabulary) -> StyleWordStats:
    """Count vocabulary words per style subset and derive their weights.

    Out-of-vocabulary tokens fold into the unk row, so unk carries the
    pooled style evidence of all rare words.  The other reserved tokens
    never occur and therefore keep neutrality 1.
    """
    counts = np.zeros((len(vocab), corpus.num_styles), dtype=np.float64)
    for j, subset in enumerate(corpus.subsets):
        for sentence in subset:
            for token in sentence:
                counts[vocab.id_of(token), j] += 1
    ratios, neutrality = neutrality_from_counts(counts)
    return StyleWordStats(counts=counts, ratios=ratios, neutrality=neutrality)
