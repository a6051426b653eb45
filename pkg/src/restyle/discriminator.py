"""Convolutional text classifier used as discriminator and as evaluator.

Architecture: word embeddings, parallel 1-d convolutions of several
widths, max-over-time pooling, one linear layer to class logits.  When
``spectral`` is set, every convolution and the output layer carry
spectral normalization, which rescales the weight by its top singular
value (estimated by one power iteration per forward pass) and keeps the
network roughly 1-Lipschitz.

As a discriminator the class count is the number of styles plus one;
the extra last class marks generated text.  As an evaluation classifier
the class count equals the number of styles and spectral normalization
is switched off.

Accepts discrete id batches or soft probability-row batches, so the
generator's relaxed outputs can be scored differentiably.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.nn.utils.parametrizations import spectral_norm

from .encoder import length_mask


class ConvTextClassifier(nn.Module):
    def __init__(
        self,
        vocab_size: int,
        emb_size: int,
        num_classes: int,
        num_filters: int = 64,
        widths: tuple[int, ...] = (1, 2, 3, 4, 5),
        spectral: bool = True,
    ):
        super().__init__()
        if num_classes < 2:
            raise ValueError("need at least two classes")
        if not widths:
            raise ValueError("need at least one filter width")
        self.num_classes = num_classes
        self.widths = tuple(widths)
        self.embedding = nn.Embedding(vocab_size, emb_size, padding_idx=0)
        convs = []
        for width in self.widths:
            conv = nn.Conv1d(emb_size, num_filters, width)
            if spectral:
                conv = spectral_norm(conv)
            convs.append(conv)
        self.convs = nn.ModuleList(convs)
        out = nn.Linear(num_filters * len(self.widths), num_classes)
        self.out = spectral_norm(out) if spectral else out

    def embed(self, tokens: torch.Tensor) -> torch.Tensor:
        if tokens.dim() == 2:
            if int(tokens.max()) >= self.embedding.num_embeddings or int(tokens.min()) < 0:
                raise ValueError("token id out of vocabulary range")
            return self.embedding(tokens)
        if tokens.dim() == 3:
            return tokens @ self.embedding.weight
        raise ValueError("tokens must be (B, n) ids or (B, n, V) soft rows")

    def forward(self, tokens: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        """Class logits (B, num_classes)."""
        if int(lengths.min()) < 1:
            raise ValueError("cannot classify an empty sequence")
        embedded = self.embed(tokens)
        # Zero rows past each length: discrete padding embeds to zero
        # already, soft sequences carry junk rows there.
        embedded = embedded * length_mask(lengths, embedded.shape[1])[:, :, None]
        # Right-pad by widest-1 so every window that starts at a real token
        # exists for every filter width; each sentence then contributes
        # exactly `length` windows per filter, whatever the batch padding.
        widest = max(self.widths)
        embedded = F.pad(embedded, (0, 0, 0, widest - 1))
        stacked = embedded.transpose(1, 2)
        pooled = []
        for conv in self.convs:
            feature = torch.relu(conv(stacked))
            starts = torch.arange(feature.shape[-1], device=feature.device)
            valid = starts[None, :] < lengths[:, None]
            feature = feature.masked_fill(~valid[:, None, :], float("-inf"))
            pooled.append(feature.max(dim=-1).values)
        return self.out(torch.cat(pooled, dim=-1))

    def log_probs(self, tokens: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        return torch.log_softmax(self.forward(tokens, lengths), dim=-1)

    def predict(self, tokens: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        with torch.no_grad():
            return self.forward(tokens, lengths).argmax(dim=-1)


def top_singular_values(model: ConvTextClassifier) -> dict[str, float]:
    """Exact top singular value of each normalized weight, via SVD.

    Convolution kernels are flattened to (out_channels, -1), matching the
    matrix the power iteration runs on.
    """
    values: dict[str, float] = {}
    modules = {f"conv{w}": conv for w, conv in zip(model.widths, model.convs)}
    modules["out"] = model.out
    for name, module in modules.items():
        weight = module.weight.detach()
        matrix = weight.reshape(weight.shape[0], -1).double()
        values[name] = float(torch.linalg.svdvals(matrix)[0])
    return values
