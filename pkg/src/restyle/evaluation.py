"""Transfer quality metrics and their aggregation.

* style accuracy: a convolutional classifier trained on the style
  subsets themselves scores how often transfers land in the target
  style,
* BLEU-4 against the inputs (content kept) and against references,
* fluency: perplexity under an interpolated Kneser-Ney 5-gram model
  trained per style,
* one aggregate: the geometric mean of accuracy, both BLEUs, and the
  log-inverted perplexity, on 0-100 scales.

All metrics are corpus-level and deterministic.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .corpus import StyleCorpus, Vocabulary
from .discriminator import ConvTextClassifier
from .encoder import pad_batch


# ----- BLEU -----------------------------------------------------------------


def _ngram_counts(tokens: list[str], order: int) -> Counter:
    return Counter(
        tuple(tokens[i : i + order]) for i in range(len(tokens) - order + 1)
    )


def bleu(
    candidates: list[list[str]],
    references: list[list[str]],
    max_order: int = 4,
) -> float:
    """Corpus BLEU on a 0-100 scale, one reference per candidate.

    Clipped n-gram precisions with brevity penalty; orders above 1 take
    add-one smoothing when their match count is zero, so short corpora
    never multiply in a hard zero from a missing high-order match.
    """
    if not candidates or len(candidates) != len(references):
        raise ValueError("need equally many candidates and references")
    matches = [0] * max_order
    totals = [0] * max_order
    cand_len = 0
    ref_len = 0
    for cand, ref in zip(candidates, references):
        cand_len += len(cand)
        ref_len += len(ref)
        for n in range(1, max_order + 1):
            cand_counts = _ngram_counts(cand, n)
            ref_counts = _ngram_counts(ref, n)
            matches[n - 1] += sum(
                min(c, ref_counts[g]) for g, c in cand_counts.items()
            )
            totals[n - 1] += max(len(cand) - n + 1, 0)
    if totals[0] == 0:
        raise ValueError("empty candidate corpus")
    log_precisions = []
    for n in range(1, max_order + 1):
        m, t = matches[n - 1], totals[n - 1]
        if n > 1 and m == 0:
            m, t = m + 1, t + 1
        if m == 0:
            return 0.0
        log_precisions.append(math.log(m / t))
    brevity = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / max(cand_len, 1))
    return 100.0 * brevity * math.exp(sum(log_precisions) / max_order)


# ----- Kneser-Ney n-gram language model -------------------------------------

_LM_BOS = "<s>"
_LM_EOS = "</s>"
_LM_UNK = "<unk>"


@dataclass
class NGramLM:
    """Interpolated Kneser-Ney model with a fixed absolute discount.

    The highest order uses raw counts, lower orders continuation counts,
    and the recursion bottoms out at a uniform distribution over the
    event space (training vocabulary plus unk and the end marker), so
    every conditional distribution is proper even for unseen histories.
    """

    order: int = 5
    discount: float = 0.75
    events: list[str] = field(default_factory=list)
    _event_set: set = field(default_factory=set, repr=False)
    _counts: list[dict] = field(default_factory=list, repr=False)
    _totals: list[dict] = field(default_factory=list, repr=False)
    _distinct: list[dict] = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.order < 1:
            raise ValueError("order must be at least 1")
        if not 0.0 < self.discount < 1.0:
            raise ValueError("discount must lie in (0, 1)")

    @property
    def num_events(self) -> int:
        return len(self.events)

    def _map(self, token: str) -> str:
        return token if token in self._event_set else _LM_UNK

    def fit(self, sentences: list[list[str]]) -> "NGramLM":
        if not sentences:
            raise ValueError("cannot fit a language model on an empty corpus")
        vocab = sorted({t for s in sentences for t in s})
        self.events = vocab + [_LM_UNK, _LM_EOS]
        self._event_set = set(self.events)

        raw: list[Counter] = [Counter() for _ in range(self.order + 1)]
        for sentence in sentences:
            padded = [_LM_BOS] * (self.order - 1) + list(sentence) + [_LM_EOS]
            start = self.order - 1
            for pos in range(start, len(padded)):
                for n in range(1, self.order + 1):
                    raw[n][tuple(padded[pos - n + 1 : pos + 1])] += 1

        # Continuation counts: how many distinct left extensions each
        # lower-order gram has at the next order up.
        counts: list[dict] = [dict() for _ in range(self.order + 1)]
        counts[self.order] = dict(raw[self.order])
        for n in range(self.order - 1, 0, -1):
            cont: Counter = Counter()
            for gram in raw[n + 1]:
                cont[gram[1:]] += 1
            counts[n] = dict(cont)

        totals: list[dict] = [dict() for _ in range(self.order + 1)]
        distinct: list[dict] = [dict() for _ in range(self.order + 1)]
        for n in range(1, self.order + 1):
            for gram, c in counts[n].items():
                hist = gram[:-1]
                totals[n][hist] = totals[n].get(hist, 0) + c
                distinct[n][hist] = distinct[n].get(hist, 0) + 1
        self._counts = counts
        self._totals = totals
        self._distinct = distinct
        return self

    def _prob(self, level: int, history: tuple, token: str) -> float:
        if level == 0:
            return 1.0 / self.num_events
        total = self._totals[level].get(history, 0)
        if total == 0:
            return self._prob(level - 1, history[1:] if history else (), token)
        count = self._counts[level].get(history + (token,), 0)
        kinds = self._distinct[level][history]
        lower = self._prob(level - 1, history[1:] if history else (), token)
        return (
            max(count - self.discount, 0.0) / total
            + self.discount * kinds / total * lower
        )

    def prob(self, history: tuple[str, ...], token: str) -> float:
        """P(token | last order-1 history tokens); always positive."""
        if not self._counts:
            raise ValueError("model not fitted")
        token = self._map(token)
        history = tuple(self._map(t) if t != _LM_BOS else t for t in history)
        history = ((_LM_BOS,) * (self.order - 1) + history)[-(self.order - 1) :]
        if self.order == 1:
            history = ()
        return self._prob(self.order, history, token)

    def sentence_logprob(self, tokens: list[str]) -> tuple[float, int]:
        """Total natural-log probability and event count (end marker included)."""
        history: tuple[str, ...] = ()
        total = 0.0
        for token in list(tokens) + [_LM_EOS]:
            total += math.log(self.prob(history, token))
            history = history + (self._map(token),)
        return total, len(tokens) + 1

    def perplexity(self, sentences: list[list[str]]) -> float:
        """Corpus perplexity: exp of the mean per-event negative logprob."""
        if not sentences:
            raise ValueError("empty corpus")
        total = 0.0
        events = 0
        for sentence in sentences:
            lp, n = self.sentence_logprob(sentence)
            total += lp
            events += n
        return math.exp(-total / events)


# ----- accuracy and the aggregate -------------------------------------------


def classify_sentences(
    classifier: ConvTextClassifier, vocab: Vocabulary, sentences: list[list[str]],
    batch_size: int = 256,
) -> list[int]:
    out: list[int] = []
    classifier.eval()
    with torch.no_grad():
        for start in range(0, len(sentences), batch_size):
            chunk = sentences[start : start + batch_size]
            tokens, lengths = pad_batch([vocab.encode(s) for s in chunk])
            out.extend(int(c) for c in classifier.predict(tokens, lengths))
    return out


def style_accuracy(
    classifier: ConvTextClassifier,
    vocab: Vocabulary,
    sentences: list[list[str]],
    target_styles: list[int],
) -> float:
    """Share of sentences the classifier assigns to their target style, 0-100."""
    if not sentences:
        raise ValueError("empty corpus")
    if len(sentences) != len(target_styles):
        raise ValueError("one target style per sentence required")
    if max(target_styles) >= classifier.num_classes:
        raise ValueError("target style outside the classifier's classes")
    picks = classify_sentences(classifier, vocab, sentences)
    hits = sum(1 for p, t in zip(picks, target_styles) if p == t)
    return 100.0 * hits / len(sentences)


def geometric_mean(
    accuracy: float, self_bleu: float, ref_bleu: float, perplexity: float
) -> float:
    """Fourth root of acc * self-BLEU * ref-BLEU / ln(ppl), 0-100 inputs."""
    if perplexity <= 1.0:
        raise ValueError("aggregate undefined for perplexity <= 1")
    product = accuracy * self_bleu * ref_bleu / math.log(perplexity)
    if product < 0:
        raise ValueError("aggregate undefined for a negative product")
    return product ** 0.25


# ----- the evaluation driver -------------------------------------------------


def train_style_classifier(
    corpus: StyleCorpus,
    vocab: Vocabulary,
    emb_size: int = 64,
    num_filters: int = 64,
    widths: tuple[int, ...] = (1, 2, 3, 4, 5),
    epochs: int = 3,
    batch_size: int = 64,
    lr: float = 1e-3,
    seed: int = 0,
    max_len: int = 64,
    log=print,
) -> ConvTextClassifier:
    """Supervised style classifier used by the accuracy metric."""
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    classifier = ConvTextClassifier(
        vocab_size=len(vocab),
        emb_size=emb_size,
        num_classes=corpus.num_styles,
        num_filters=num_filters,
        widths=widths,
        spectral=False,
    )
    examples = [
        (vocab.encode(s[:max_len]), j)
        for j in range(corpus.num_styles)
        for s in corpus.sentences(j)
    ]
    optimizer = torch.optim.Adam(classifier.parameters(), lr=lr)
    loss_fn = torch.nn.CrossEntropyLoss()
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(examples))
        total, seen = 0.0, 0
        for start in range(0, len(order), batch_size):
            chunk = [examples[i] for i in order[start : start + batch_size]]
            tokens, lengths = pad_batch([ids for ids, _ in chunk])
            labels = torch.tensor([j for _, j in chunk], dtype=torch.long)
            loss = loss_fn(classifier(tokens, lengths), labels)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += float(loss.detach()) * len(chunk)
            seen += len(chunk)
        log(f"classifier epoch {epoch}: loss={total / seen:.4f}")
    return classifier


def train_style_lms(
    corpus: StyleCorpus, order: int = 5, discount: float = 0.75
) -> list[NGramLM]:
    return [
        NGramLM(order=order, discount=discount).fit(corpus.sentences(j))
        for j in range(corpus.num_styles)
    ]


@dataclass
class DirectionReport:
    source_style: int
    target_style: int
    accuracy: float
    self_bleu: float
    ref_bleu: float | None
    perplexity: float
    outputs: list[list[str]] = field(repr=False, default_factory=list)


@dataclass
class EvalReport:
    accuracy: float
    self_bleu: float
    ref_bleu: float | None
    perplexity: float
    aggregate: float | None
    directions: list[DirectionReport]

    def row(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "self_bleu": self.self_bleu,
            "ref_bleu": self.ref_bleu,
            "perplexity": self.perplexity,
            "aggregate": self.aggregate,
        }


def _corpus_ppl(lm: NGramLM, sentences: list[list[str]]) -> tuple[float, int]:
    total, events = 0.0, 0
    for s in sentences:
        lp, n = lm.sentence_logprob(s)
        total += lp
        events += n
    return total, events


def evaluate(
    generate,
    test_corpus: StyleCorpus,
    classifier: ConvTextClassifier,
    vocab: Vocabulary,
    lms: list[NGramLM],
    references: list[list[list[str]]] | None = None,
    out_dir: str | Path | None = None,
) -> EvalReport:
    """Score a transfer callable over every ordered style pair.

    ``generate(sentences, source_style, target_style)`` must return one
    tokenized output per input sentence.  ``references[i]`` aligns with
    the test sentences of style i and holds their target-style rewrites.
    The aggregate is only defined when references exist and perplexity
    exceeds 1; otherwise it is reported as None.
    """
    directions: list[DirectionReport] = []
    all_outputs: list[list[str]] = []
    all_sources: list[list[str]] = []
    all_refs: list[list[str]] = []
    all_targets: list[int] = []
    lp_total, ev_total = 0.0, 0

    styles = test_corpus.num_styles
    for i in range(styles):
        sources = test_corpus.sentences(i)
        refs = references[i] if references is not None else None
        if refs is not None and len(refs) != len(sources):
            raise ValueError(
                f"style {i}: {len(refs)} references for {len(sources)} sentences"
            )
        for j in range(styles):
            if j == i:
                continue
            outputs = generate(sources, i, j)
            if len(outputs) != len(sources):
                raise ValueError("generator returned a different sentence count")
            acc = style_accuracy(classifier, vocab, outputs, [j] * len(outputs))
            sb = bleu(outputs, sources)
            rb = bleu(outputs, refs) if refs is not None else None
            lp, ev = _corpus_ppl(lms[j], outputs)
            directions.append(
                DirectionReport(
                    source_style=i,
                    target_style=j,
                    accuracy=acc,
                    self_bleu=sb,
                    ref_bleu=rb,
                    perplexity=math.exp(-lp / ev),
                    outputs=outputs,
                )
            )
            all_outputs.extend(outputs)
            all_sources.extend(sources)
            all_targets.extend([j] * len(outputs))
            if refs is not None:
                all_refs.extend(refs)
            lp_total += lp
            ev_total += ev

    accuracy = style_accuracy(classifier, vocab, all_outputs, all_targets)
    self_bleu = bleu(all_outputs, all_sources)
    ref_bleu = bleu(all_outputs, all_refs) if all_refs else None
    perplexity = math.exp(-lp_total / ev_total)
    aggregate = None
    if ref_bleu is not None and perplexity > 1.0:
        aggregate = geometric_mean(accuracy, self_bleu, ref_bleu, perplexity)
    report = EvalReport(
        accuracy=accuracy,
        self_bleu=self_bleu,
        ref_bleu=ref_bleu,
        perplexity=perplexity,
        aggregate=aggregate,
        directions=directions,
    )
    if out_dir is not None:
        write_report(Path(out_dir), report)
    return report


def write_report(out_dir: Path, report: EvalReport) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    for direction in report.directions:
        name = f"generated.{direction.source_style}to{direction.target_style}.txt"
        with (out_dir / name).open("w", encoding="utf-8") as fh:
            for tokens in direction.outputs:
                fh.write(" ".join(tokens) + "\n")
    with (out_dir / "report.tsv").open("w", encoding="utf-8") as fh:
        fh.write("direction\taccuracy\tself_bleu\tref_bleu\tperplexity\taggregate\n")

        def fmt(value) -> str:
            return "NA" if value is None else f"{value:.4f}"

        for d in report.directions:
            fh.write(
                f"{d.source_style}to{d.target_style}\t{d.accuracy:.4f}\t"
                f"{d.self_bleu:.4f}\t{fmt(d.ref_bleu)}\t{d.perplexity:.4f}\tNA\n"
            )
        fh.write(
            f"all\t{report.accuracy:.4f}\t{report.self_bleu:.4f}\t"
            f"{fmt(report.ref_bleu)}\t{report.perplexity:.4f}\t{fmt(report.aggregate)}\n"
        )
