"""Attentive decoder conditioned on the source sentence and a retrieved set.

Each step attends twice from the previous decoder state: once over the
source encoder states (content) and once over the final-state encodings
of the retrieved target-style sentences (style).  The retrieval
attention first passes the decoder state and the retrieved encodings
through learned linear transforms, and its context vector is taken over
the transformed rows.  Style information enters generation only through
this second attention; there is no style embedding anywhere.

Decoding modes:
  teacher_forced  log-distributions for given target prefixes,
  greedy          argmax ids until the end marker,
  soft rollout    probability rows with expected-embedding feeding,
                  used for the differentiable transfer paths.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .corpus import BOS_ID, EOS_ID


class AdditiveAttention(nn.Module):
    """score(q, m) = v . tanh(W_q q + W_m m); softmax over memory rows."""

    def __init__(self, query_size: int, memory_size: int, attn_size: int):
        super().__init__()
        self.query_proj = nn.Linear(query_size, attn_size, bias=False)
        self.memory_proj = nn.Linear(memory_size, attn_size, bias=False)
        self.score_vec = nn.Linear(attn_size, 1, bias=False)

    def project_memory(self, memory: torch.Tensor) -> torch.Tensor:
        """Precompute W_m m for every row; constant across decode steps."""
        return self.memory_proj(memory)

    def forward(
        self,
        query: torch.Tensor,
        memory: torch.Tensor,
        mask: torch.Tensor | None = None,
        keys: torch.Tensor | None = None,
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """query (B, q), memory (B, n, m) -> context (B, m), weights (B, n)."""
        if keys is None:
            keys = self.project_memory(memory)
        scores = self.score_vec(torch.tanh(self.query_proj(query)[:, None, :] + keys))
        scores = scores.squeeze(-1)
        if mask is not None:
            scores = scores.masked_fill(~mask, float("-inf"))
        weights = torch.softmax(scores, dim=1)
        context = torch.einsum("bn,bnm->bm", weights, memory)
        return context, weights


@dataclass
class DecoderMemory:
    """Per-batch attention inputs, prepared once per decoded sequence."""

    source: torch.Tensor
    source_keys: torch.Tensor
    source_mask: torch.Tensor
    retrieved: torch.Tensor
    retrieved_keys: torch.Tensor
    retrieved_mask: torch.Tensor | None


@dataclass
class SoftRollout:
    """Differentiable decode: per-step distributions and trimmed lengths.

    probs[b, t] is a distribution over the vocabulary; log_probs is its
    log taken from the same logits.  lengths[b] counts the rows before
    the first row whose argmax is the end marker (at least 1, at most
    max_len), so the kept rows mirror a real sentence, which never
    carries the marker.  Rows past the length are meaningless.
    """

    probs: torch.Tensor
    log_probs: torch.Tensor
    lengths: torch.Tensor

    def mask(self) -> torch.Tensor:
        steps = torch.arange(self.probs.shape[1], device=self.probs.device)
        return steps[None, :] < self.lengths[:, None]


class AttentiveDecoder(nn.Module):
    def __init__(
        self,
        embedding: nn.Embedding,
        memory_size: int,
        hidden_size: int,
        attn_size: int,
    ):
        super().__init__()
        self.embedding = embedding
        self.hidden_size = hidden_size
        vocab_size = embedding.num_embeddings
        emb_size = embedding.embedding_dim
        self.source_attention = AdditiveAttention(hidden_size, memory_size, attn_size)
        self.retrieval_attention = AdditiveAttention(hidden_size, memory_size, attn_size)
        self.retrieval_query = nn.Linear(hidden_size, hidden_size, bias=False)
        self.retrieval_transform = nn.Linear(memory_size, memory_size, bias=False)
        self.cell = nn.LSTMCell(emb_size + 2 * memory_size, hidden_size)
        self.bridge = nn.Linear(memory_size, 2 * hidden_size)
        self.out = nn.Linear(hidden_size, vocab_size, bias=False)

    def initial_state(self, final: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Map the encoder final state to the decoder's (h0, c0)."""
        both = torch.tanh(self.bridge(final))
        h0, c0 = both.chunk(2, dim=-1)
        return h0.contiguous(), c0.contiguous()

    def prepare_memory(
        self,
        source: torch.Tensor,
        source_mask: torch.Tensor,
        retrieved: torch.Tensor,
        retrieved_mask: torch.Tensor | None = None,
    ) -> DecoderMemory:
        transformed = self.retrieval_transform(retrieved)
        return DecoderMemory(
            source=source,
            source_keys=self.source_attention.project_memory(source),
            source_mask=source_mask,
            retrieved=transformed,
            retrieved_keys=self.retrieval_attention.project_memory(transformed),
            retrieved_mask=retrieved_mask,
        )

    def step(
        self,
        prev_emb: torch.Tensor,
        state: tuple[torch.Tensor, torch.Tensor],
        memory: DecoderMemory,
    ) -> tuple[tuple[torch.Tensor, torch.Tensor], torch.Tensor]:
        """One decode step from the embedded previous token; returns logits."""
        h_prev = state[0]
        src_ctx, _ = self.source_attention(
            h_prev, memory.source, memory.source_mask, keys=memory.source_keys
        )
        ret_ctx, _ = self.retrieval_attention(
            self.retrieval_query(h_prev),
            memory.retrieved,
            memory.retrieved_mask,
            keys=memory.retrieved_keys,
        )
        state = self.cell(torch.cat([prev_emb, src_ctx, ret_ctx], dim=-1), state)
        return state, self.out(state[0])

    def embed_soft(self, probs: torch.Tensor) -> torch.Tensor:
        return probs @ self.embedding.weight

    def teacher_forced(
        self,
        final: torch.Tensor,
        memory: DecoderMemory,
        targets: torch.Tensor,
    ) -> torch.Tensor:
        """Log-distributions (B, T, V) for each target position.

        Step t is fed the embedding of targets[:, t-1] (the begin marker
        at t=0), so position t predicts targets[:, t].
        """
        batch, width = targets.shape
        state = self.initial_state(final)
        prev = torch.full((batch,), BOS_ID, dtype=torch.long, device=targets.device)
        rows = []
        for t in range(width):
            state, logits = self.step(self.embedding(prev), state, memory)
            rows.append(torch.log_softmax(logits, dim=-1))
            prev = targets[:, t]
        return torch.stack(rows, dim=1)

    def greedy(
        self,
        final: torch.Tensor,
        memory: DecoderMemory,
        max_len: int,
    ) -> list[list[int]]:
        """Argmax decode per element, stopping at the end marker."""
        batch = final.shape[0]
        device = final.device
        state = self.initial_state(final)
        prev = torch.full((batch,), BOS_ID, dtype=torch.long, device=device)
        finished = torch.zeros(batch, dtype=torch.bool, device=device)
        outputs: list[list[int]] = [[] for _ in range(batch)]
        for _ in range(max_len):
            state, logits = self.step(self.embedding(prev), state, memory)
            prev = logits.argmax(dim=-1)
            for row in range(batch):
                if not finished[row]:
                    token = int(prev[row])
                    if token == EOS_ID:
                        finished[row] = True
                    else:
                        outputs[row].append(token)
            if bool(finished.all()):
                break
        return outputs

    def rollout_soft(
        self,
        final: torch.Tensor,
        memory: DecoderMemory,
        max_len: int,
    ) -> SoftRollout:
        """Differentiable decode feeding the expected embedding each step."""
        if max_len < 1:
            raise ValueError("max_len must be at least 1")
        batch = final.shape[0]
        device = final.device
        state = self.initial_state(final)
        prev = self.embedding(
            torch.full((batch,), BOS_ID, dtype=torch.long, device=device)
        )
        prob_rows = []
        log_rows = []
        for _ in range(max_len):
            state, logits = self.step(prev, state, memory)
            log_p = torch.log_softmax(logits, dim=-1)
            p = log_p.exp()
            prob_rows.append(p)
            log_rows.append(log_p)
            prev = self.embed_soft(p)
        probs = torch.stack(prob_rows, dim=1)
        log_probs = torch.stack(log_rows, dim=1)
        picks = probs.argmax(dim=-1)
        lengths = torch.full((batch,), max_len, dtype=torch.long, device=device)
        for row in range(batch):
            hits = (picks[row] == EOS_ID).nonzero()
            if hits.numel() > 0:
                lengths[row] = max(int(hits[0]), 1)
        return SoftRollout(probs=probs, log_probs=log_probs, lengths=lengths)
