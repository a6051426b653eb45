"""Bidirectional recurrent sentence encoder with neutrality-weighted pooling.

The encoder produces, per sentence, a matrix of per-position hidden
states (consumed by the decoder attention), a final state (the retrieved
sample representation), and a pooled query embedding used by the dense
retriever.  The pooling softmax is weighted by per-word neutrality
scores, so style-discriminative words contribute little to the query and
retrieval keys off style-independent content.

Inputs may be discrete token ids or soft sequences (rows of probability
distributions over the vocabulary); the soft path embeds each position
as the probability-weighted average embedding and keeps the whole
computation differentiable.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence

from .corpus import PAD_ID


def pad_batch(
    id_lists: list[list[int]], device=None, pad_id: int = PAD_ID
) -> tuple[torch.Tensor, torch.Tensor]:
    """Stack variable-length id lists into a padded (B, n) tensor + lengths."""
    if not id_lists:
        raise ValueError("empty batch")
    lengths = torch.tensor([len(ids) for ids in id_lists], dtype=torch.long, device=device)
    if int(lengths.min()) < 1:
        raise ValueError("cannot encode an empty sequence")
    width = int(lengths.max())
    out = torch.full((len(id_lists), width), pad_id, dtype=torch.long, device=device)
    for row, ids in enumerate(id_lists):
        out[row, : len(ids)] = torch.tensor(ids, dtype=torch.long, device=device)
    return out, lengths


def length_mask(lengths: torch.Tensor, width: int) -> torch.Tensor:
    """(B, width) bool mask, True at valid positions."""
    steps = torch.arange(width, device=lengths.device)
    return steps[None, :] < lengths[:, None]


@dataclass
class EncodedBatch:
    """Encoder output for a padded batch.

    hidden: (B, n, d) per-position states; rows past each length are zero.
    mask:   (B, n) validity mask.
    query:  (B, d) neutrality-pooled query embedding.
    final:  (B, d) concat(last forward state, first backward state).
    """

    hidden: torch.Tensor
    mask: torch.Tensor
    lengths: torch.Tensor
    query: torch.Tensor
    final: torch.Tensor


class SentenceEncoder(nn.Module):
    """Single-layer bidirectional LSTM over shared word embeddings.

    ``hidden_size`` is the total output width d (both directions
    concatenated).  ``neutrality`` is a trainable per-word weight vector,
    seeded from corpus statistics, that drives the pooling softmax.
    """

    def __init__(
        self,
        embedding: nn.Embedding,
        hidden_size: int,
        neutrality_init=None,
    ):
        super().__init__()
        if hidden_size % 2 != 0:
            raise ValueError("hidden_size must be even (two directions)")
        self.embedding = embedding
        self.hidden_size = hidden_size
        self.lstm = nn.LSTM(
            embedding.embedding_dim,
            hidden_size // 2,
            batch_first=True,
            bidirectional=True,
        )
        vocab_size = embedding.num_embeddings
        if neutrality_init is None:
            weights = torch.ones(vocab_size)
        else:
            weights = torch.as_tensor(neutrality_init, dtype=torch.float32)
            if weights.shape != (vocab_size,):
                raise ValueError("neutrality_init must have one weight per vocab entry")
        self.neutrality = nn.Parameter(weights.clone())

    def embed(self, tokens: torch.Tensor) -> torch.Tensor:
        """Embed discrete ids (B, n) or soft rows (B, n, V)."""
        if tokens.dim() == 2:
            if int(tokens.max()) >= self.embedding.num_embeddings or int(tokens.min()) < 0:
                raise ValueError("token id out of vocabulary range")
            return self.embedding(tokens)
        if tokens.dim() == 3:
            return tokens @ self.embedding.weight
        raise ValueError("tokens must be (B, n) ids or (B, n, V) soft rows")

    def position_weights(self, tokens: torch.Tensor) -> torch.Tensor:
        """Per-position neutrality scores, (B, n)."""
        if tokens.dim() == 2:
            return self.neutrality[tokens]
        return tokens @ self.neutrality

    def forward(self, tokens: torch.Tensor, lengths: torch.Tensor) -> EncodedBatch:
        if tokens.shape[0] != lengths.shape[0]:
            raise ValueError("tokens and lengths disagree on batch size")
        if int(lengths.min()) < 1:
            raise ValueError("cannot encode an empty sequence")
        embedded = self.embed(tokens)
        packed = pack_padded_sequence(
            embedded, lengths.cpu(), batch_first=True, enforce_sorted=False
        )
        outputs, (h_n, _) = self.lstm(packed)
        hidden, _ = pad_packed_sequence(
            outputs, batch_first=True, total_length=tokens.shape[1]
        )
        # h_n is (2, B, d/2): forward state at the true last position,
        # backward state at position 0.
        final = torch.cat([h_n[0], h_n[1]], dim=-1)
        mask = length_mask(lengths, tokens.shape[1])
        query = self.pool_query(hidden, tokens, mask)
        return EncodedBatch(
            hidden=hidden, mask=mask, lengths=lengths, query=query, final=final
        )

    def pool_query(
        self, hidden: torch.Tensor, tokens: torch.Tensor, mask: torch.Tensor
    ) -> torch.Tensor:
        """Softmax the per-position neutrality scores and average the states.

        The result is a convex combination of the valid hidden-state rows.
        """
        scores = self.position_weights(tokens)
        scores = scores.masked_fill(~mask, float("-inf"))
        weights = torch.softmax(scores, dim=1)
        return torch.einsum("bn,bnd->bd", weights, hidden)
