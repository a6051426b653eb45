"""Generator assembly, batching helpers, and checkpoint round-trip.

The generator is an encoder-decoder pair over one shared embedding
table.  A transfer conditions the decoder on the encoded input plus the
encoded top-K retrieved target-style sentences; the retrieved set is the
only place the target style enters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .config import RunConfig, parse_pairs
from .corpus import RESERVED, Vocabulary
from .decoder import AttentiveDecoder, DecoderMemory, SoftRollout
from .discriminator import ConvTextClassifier
from .encoder import EncodedBatch, SentenceEncoder, length_mask, pad_batch
from .retriever import RetrievalResult, Retriever


class StyleTransferModel(nn.Module):
    def __init__(
        self,
        vocab_size: int,
        emb_size: int = 256,
        hidden_size: int = 512,
        dec_size: int = 512,
        attn_size: int = 256,
        neutrality_init=None,
    ):
        super().__init__()
        self.embedding = nn.Embedding(vocab_size, emb_size, padding_idx=0)
        self.encoder = SentenceEncoder(self.embedding, hidden_size, neutrality_init)
        self.decoder = AttentiveDecoder(self.embedding, hidden_size, dec_size, attn_size)

    def encode_ids(self, id_lists: list[list[int]], device=None) -> EncodedBatch:
        tokens, lengths = pad_batch(id_lists, device=device)
        return self.encoder(tokens, lengths)

    def encode_sentences(self, vocab: Vocabulary, sentences: list[list[str]]) -> EncodedBatch:
        device = self.embedding.weight.device
        return self.encode_ids([vocab.encode(s) for s in sentences], device=device)

    def encode_soft(self, rollout: SoftRollout) -> EncodedBatch:
        """Re-encode a soft decode, keeping the graph differentiable."""
        width = int(rollout.lengths.max())
        return self.encoder(rollout.probs[:, :width, :], rollout.lengths)

    def encode_retrieved(
        self, vocab: Vocabulary, retrievals: list[RetrievalResult]
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Final-state encodings of each element's retrieved set.

        Returns memory (B, K, d) and a (B, K) mask covering short sets.
        """
        device = self.embedding.weight.device
        counts = [len(r) for r in retrievals]
        if min(counts) < 1:
            raise ValueError("a retrieval returned no candidates")
        flat = [s for r in retrievals for s in r.sentences]
        encoded = self.encode_sentences(vocab, flat)
        width = max(counts)
        dim = encoded.final.shape[-1]
        memory = torch.zeros(
            len(retrievals), width, dim, dtype=encoded.final.dtype, device=device
        )
        offset = 0
        for row, count in enumerate(counts):
            memory[row, :count] = encoded.final[offset : offset + count]
            offset += count
        mask = length_mask(torch.tensor(counts, device=device), width)
        return memory, mask

    def memory_for(
        self, source: EncodedBatch, retrieved: torch.Tensor, retrieved_mask: torch.Tensor
    ) -> DecoderMemory:
        return self.decoder.prepare_memory(
            source.hidden, source.mask, retrieved, retrieved_mask
        )

    def query_embeddings(
        self, vocab: Vocabulary, sentences: list[list[str]], batch_size: int = 256
    ) -> np.ndarray:
        """Pooled query embeddings as float64 rows, for the dense index."""
        rows = []
        self.eval()
        with torch.no_grad():
            for start in range(0, len(sentences), batch_size):
                batch = sentences[start : start + batch_size]
                rows.append(self.encode_sentences(vocab, batch).query.double().cpu().numpy())
        self.train()
        return np.concatenate(rows, axis=0)

    def embed_fn(self, vocab: Vocabulary, batch_size: int = 256):
        def embed(sentences: list[list[str]]) -> np.ndarray:
            return self.query_embeddings(vocab, sentences, batch_size=batch_size)

        return embed


def retrieve_for_batch(
    model: StyleTransferModel,
    retriever: Retriever,
    vocab: Vocabulary,
    sentences: list[list[str]],
    styles: list[int],
    seeds: list[int] | None = None,
) -> list[RetrievalResult]:
    """Per-sentence retrieval from the style subsets named in ``styles``."""
    queries = None
    if retriever.kind == "dense":
        queries = model.query_embeddings(vocab, sentences)
    results = []
    for pos, (sentence, style) in enumerate(zip(sentences, styles)):
        seed = seeds[pos] if seeds is not None else 0
        embedding = queries[pos] if queries is not None else None
        results.append(
            retriever.retrieve(
                style, query_tokens=sentence, query_embedding=embedding, seed=seed
            )
        )
    return results


def transfer_sentences(
    model: StyleTransferModel,
    retriever: Retriever,
    vocab: Vocabulary,
    sentences: list[list[str]],
    target_style: int,
    max_len: int,
    batch_size: int = 64,
    rng: np.random.Generator | None = None,
) -> list[list[str]]:
    """Greedy style transfer of every sentence into ``target_style``."""
    if rng is None:
        rng = np.random.default_rng(0)
    out: list[list[str]] = []
    model.eval()
    with torch.no_grad():
        for start in range(0, len(sentences), batch_size):
            batch = sentences[start : start + batch_size]
            seeds = [int(rng.integers(1 << 31)) for _ in batch]
            retrievals = retrieve_for_batch(
                model, retriever, vocab, batch, [target_style] * len(batch), seeds
            )
            source = model.encode_sentences(vocab, batch)
            memory_rows, memory_mask = model.encode_retrieved(vocab, retrievals)
            memory = model.memory_for(source, memory_rows, memory_mask)
            ids = model.decoder.greedy(source.final, memory, max_len)
            out.extend(vocab.decode(row) for row in ids)
    model.train()
    return out


class ForwardLM(nn.Module):
    """Forward LSTM language model used to warm-start the generator."""

    def __init__(self, vocab_size: int, emb_size: int, hidden_size: int):
        super().__init__()
        self.embedding = nn.Embedding(vocab_size, emb_size, padding_idx=0)
        self.lstm = nn.LSTM(emb_size, hidden_size, batch_first=True)
        self.out = nn.Linear(hidden_size, vocab_size, bias=False)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        outputs, _ = self.lstm(self.embedding(tokens))
        return self.out(outputs)


def init_from_lm(model: StyleTransferModel, lm: ForwardLM) -> list[str]:
    """Copy language-model weights into the generator where shapes match.

    The shared embedding and the encoder's forward direction always line
    up when the sizes were chosen together; the decoder found its own
    recurrence, so it receives only the shared embedding.  Returns the
    names of the parameter groups that were copied.
    """
    copied = []
    with torch.no_grad():
        if model.embedding.weight.shape == lm.embedding.weight.shape:
            model.embedding.weight.copy_(lm.embedding.weight)
            copied.append("embedding")
        pairs = [
            ("weight_ih_l0", "weight_ih_l0"),
            ("weight_hh_l0", "weight_hh_l0"),
            ("bias_ih_l0", "bias_ih_l0"),
            ("bias_hh_l0", "bias_hh_l0"),
        ]
        forward_ok = all(
            getattr(model.encoder.lstm, dst).shape == getattr(lm.lstm, src).shape
            for dst, src in pairs
        )
        if forward_ok:
            for dst, src in pairs:
                getattr(model.encoder.lstm, dst).copy_(getattr(lm.lstm, src))
            copied.append("encoder_forward")
    return copied


@dataclass
class Checkpoint:
    model: StyleTransferModel
    discriminator: ConvTextClassifier | None
    config: RunConfig
    vocab: Vocabulary
    step: int
    extra: dict


def build_model(config: RunConfig, vocab: Vocabulary, neutrality_init=None) -> StyleTransferModel:
    return StyleTransferModel(
        vocab_size=len(vocab),
        emb_size=config.emb_size,
        hidden_size=config.hidden_size,
        dec_size=config.dec_size,
        attn_size=config.attn_size,
        neutrality_init=neutrality_init,
    )


def build_discriminator(config: RunConfig, vocab_size: int) -> ConvTextClassifier:
    return ConvTextClassifier(
        vocab_size=vocab_size,
        emb_size=config.emb_size,
        num_classes=config.styles + 1,
        num_filters=config.disc_filters,
        widths=config.disc_widths,
        spectral=True,
    )


def config_from_dict(raw: dict) -> RunConfig:
    pairs = {name: str(value) for name, value in raw.items()}
    from .config import RunConfig as _RC  # noqa: F401  (parse_pairs covers fields)

    return RunConfig(**parse_pairs(pairs))


def save_checkpoint(
    path,
    model: StyleTransferModel,
    discriminator: ConvTextClassifier | None,
    config: RunConfig,
    vocab: Vocabulary,
    step: int,
    extra: dict | None = None,
) -> None:
    payload = {
        "model": model.state_dict(),
        "discriminator": discriminator.state_dict() if discriminator else None,
        "config": config.to_dict(),
        "vocab_tokens": list(vocab.tokens[len(RESERVED) :]),
        "step": step,
        "extra": extra or {},
    }
    torch.save(payload, path)


def load_checkpoint(path, device: str = "cpu") -> Checkpoint:
    payload = torch.load(path, map_location=device, weights_only=False)
    config = config_from_dict(payload["config"])
    vocab = Vocabulary(payload["vocab_tokens"])
    model = build_model(config, vocab)
    model.load_state_dict(payload["model"])
    discriminator = None
    if payload["discriminator"] is not None:
        discriminator = build_discriminator(config, len(vocab))
        discriminator.load_state_dict(payload["discriminator"])
    return Checkpoint(
        model=model,
        discriminator=discriminator,
        config=config,
        vocab=vocab,
        step=payload["step"],
        extra=payload["extra"],
    )
