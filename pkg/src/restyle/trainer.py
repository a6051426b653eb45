"""Joint training of generator and discriminator.

Each step runs, per batch element with source style i and a sampled
target style j:

* reconstruction: teacher-forced decode of x conditioned on x and the
  top-K same-style retrieval,
* transfer: a soft rollout toward style j conditioned on the top-K
  target-style retrieval, re-encoded for the cycle decode back to x,
* retrieval-consistency: cosine gap between the pooled query embeddings
  of x and of the soft transfer,
* bag-of-words: push probability mass onto words the retrieved sets
  introduce, in both transfer directions,
* adversarial: the soft transfer should look like real style-j text to
  the frozen discriminator.

The discriminator is then updated on detached tensors (real vs
generated plus retrieved-sentence classification) and the generator on
the weighted sum above, one update each per step, discriminator first.
Gradients never cross the partition: generator losses touch no
discriminator parameter and vice versa.

Dense retrieval indices are immutable snapshots refreshed on a fixed
step schedule, so queries between refreshes score against a slightly
stale embedding table by design.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .config import RunConfig
from .corpus import BOS_ID, EOS_ID, PAD_ID, StyleCorpus, UNK_ID, Vocabulary
from .decoder import SoftRollout
from .discriminator import ConvTextClassifier
from .encoder import EncodedBatch, length_mask, pad_batch
from .model import ForwardLM, StyleTransferModel, save_checkpoint
from .retriever import RetrievalResult, Retriever

RESERVED_IDS = (PAD_ID, UNK_ID, BOS_ID, EOS_ID)

LOG_COLUMNS = ("step", "rec", "cyc", "adv", "ret", "bow", "c1", "c2")


class TrainingDiverged(RuntimeError):
    """Raised when a loss goes non-finite; carries the offending values."""

    def __init__(self, step: int, losses: dict[str, float]):
        self.step = step
        self.losses = losses
        bad = ", ".join(f"{k}={v}" for k, v in losses.items() if not np.isfinite(v))
        super().__init__(f"non-finite loss at step {step}: {bad}")


@dataclass
class LossBundle:
    rec: float
    cyc: float
    adv: float
    ret: float
    bow: float
    c1: float
    c2: float

    def as_dict(self) -> dict[str, float]:
        return {
            "rec": self.rec,
            "cyc": self.cyc,
            "adv": self.adv,
            "ret": self.ret,
            "bow": self.bow,
            "c1": self.c1,
            "c2": self.c2,
        }

    def finite(self) -> bool:
        return all(np.isfinite(v) for v in self.as_dict().values())


@dataclass
class Batch:
    sentences: list[list[str]]
    src_styles: list[int]
    tgt_styles: list[int]

    def __len__(self) -> int:
        return len(self.sentences)


def sequence_nll(
    log_probs: torch.Tensor, targets: torch.Tensor, mask: torch.Tensor
) -> torch.Tensor:
    """Per-sentence total negative log-likelihood, (B,)."""
    picked = log_probs.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    return -(picked * mask).sum(dim=1)


def new_word_ids(
    vocab: Vocabulary, retrieved: list[list[str]], source: list[str]
) -> list[int]:
    """Vocabulary ids of word types the retrieved set adds over the source.

    Set semantics over types; reserved ids (and with them everything
    out-of-vocabulary) are dropped.
    """
    fresh = {t for s in retrieved for t in s} - set(source)
    ids = {vocab.id_of(t) for t in fresh}
    return sorted(ids - set(RESERVED_IDS))


def bag_of_words_nll(
    log_probs: torch.Tensor, lengths: torch.Tensor, word_ids: list[list[int]]
) -> torch.Tensor:
    """-(1/|W|) sum over decode rows and over ids in W, per element (B,).

    Elements whose word set is empty contribute zero.
    """
    batch = log_probs.shape[0]
    out = torch.zeros(batch, dtype=log_probs.dtype, device=log_probs.device)
    for row, ids in enumerate(word_ids):
        if not ids:
            continue
        steps = int(lengths[row])
        block = log_probs[row, :steps, :][:, ids]
        out[row] = -block.sum() / len(ids)
    return out


def cosine_gap(a: torch.Tensor, b: torch.Tensor) -> tuple[torch.Tensor, int]:
    """1 - cosine(a_i, b_i) per row; zero-norm rows score the full gap 1.

    Returns the per-row tensor and how many rows hit the zero-norm guard.
    """
    na = a.norm(dim=1)
    nb = b.norm(dim=1)
    ok = (na > 0) & (nb > 0)
    cos = torch.zeros_like(na)
    if ok.any():
        cos[ok] = (a[ok] * b[ok]).sum(dim=1) / (na[ok] * nb[ok])
    return 1.0 - cos, int((~ok).sum())


def pad_targets(
    id_lists: list[list[int]], device=None
) -> tuple[torch.Tensor, torch.Tensor]:
    """Decoder targets: each sentence plus the end marker, padded."""
    return pad_batch([ids + [EOS_ID] for ids in id_lists], device=device)


@dataclass
class TransferForward:
    """Intermediate tensors of one generator forward pass."""

    enc_x: EncodedBatch
    target_ids: torch.Tensor
    target_mask: torch.Tensor
    rec_nll: torch.Tensor
    rollout: SoftRollout
    enc_transfer: EncodedBatch
    transfer_tokens: list[list[str]]
    self_rollout: SoftRollout


class Trainer:
    def __init__(
        self,
        config: RunConfig,
        corpus: StyleCorpus,
        vocab: Vocabulary,
        model: StyleTransferModel,
        discriminator: ConvTextClassifier,
        device: str = "cpu",
    ):
        if corpus.num_styles != config.styles:
            raise ValueError("corpus style count disagrees with config")
        self.config = config
        self.corpus = corpus
        self.vocab = vocab
        self.model = model.to(device)
        self.discriminator = discriminator.to(device)
        self.device = device
        self.rng = np.random.default_rng(config.seed)
        self.retriever = Retriever(
            kind=config.retriever,
            corpus_sentences=[
                [s[: config.max_len] for s in corpus.sentences(j)]
                for j in range(corpus.num_styles)
            ],
            k=config.k,
            k1=config.bm25_k1,
            b=config.bm25_b,
        )
        self.opt_g = torch.optim.Adam(self.model.parameters(), lr=config.lr)
        self.opt_d = torch.optim.Adam(self.discriminator.parameters(), lr=config.lr)
        self.step = 0
        self.refresh_steps: list[int] = []
        self.ret_zero_queries = 0
        if config.retriever == "dense":
            self.refresh_index()

    # ----- retrieval ------------------------------------------------------

    def refresh_index(self) -> None:
        self.retriever.refresh(self.model.embed_fn(self.vocab))
        self.refresh_steps.append(self.step)

    def _retrieve(
        self,
        styles: list[int],
        token_queries: list[list[str]],
        query_matrix: np.ndarray | None,
    ) -> list[RetrievalResult]:
        results = []
        for pos, style in enumerate(styles):
            embedding = query_matrix[pos] if query_matrix is not None else None
            seed = int(self.rng.integers(1 << 31))
            results.append(
                self.retriever.retrieve(
                    style,
                    query_tokens=token_queries[pos],
                    query_embedding=embedding,
                    seed=seed,
                )
            )
        return results

    def retrieve_for(
        self, styles: list[int], sentences: list[list[str]], enc: EncodedBatch | None
    ) -> list[RetrievalResult]:
        queries = None
        if self.retriever.kind == "dense":
            if enc is None:
                queries = self.model.query_embeddings(self.vocab, sentences)
            else:
                queries = enc.query.detach().double().cpu().numpy()
        return self._retrieve(styles, sentences, queries)

    # ----- batches --------------------------------------------------------

    def sample_batch(self) -> Batch:
        sentences, src, tgt = [], [], []
        styles = self.corpus.num_styles
        for _ in range(self.config.batch_size):
            i = int(self.rng.integers(styles))
            subset = self.corpus.sentences(i)
            sentence = subset[int(self.rng.integers(len(subset)))]
            offset = 1 + int(self.rng.integers(styles - 1))
            sentences.append(sentence[: self.config.max_len])
            src.append(i)
            tgt.append((i + offset) % styles)
        return Batch(sentences=sentences, src_styles=src, tgt_styles=tgt)

    # ----- generator forward ---------------------------------------------

    def transfer_forward(
        self,
        batch: Batch,
        ret_own: list[RetrievalResult],
        ret_tgt: list[RetrievalResult],
        enc_x: EncodedBatch | None = None,
    ) -> TransferForward:
        """All generator paths that depend only on forward retrievals."""
        model = self.model
        if enc_x is None:
            enc_x = model.encode_sentences(self.vocab, batch.sentences)
        id_lists = [self.vocab.encode(s) for s in batch.sentences]
        target_ids, target_lengths = pad_targets(id_lists, device=self.device)
        target_mask = length_mask(target_lengths, target_ids.shape[1]).to(target_ids.dtype)

        own_rows, own_mask = model.encode_retrieved(self.vocab, ret_own)
        rec_logp = model.decoder.teacher_forced(
            enc_x.final, model.memory_for(enc_x, own_rows, own_mask), target_ids
        )
        rec_nll = sequence_nll(rec_logp, target_ids, target_mask)

        tgt_rows, tgt_mask = model.encode_retrieved(self.vocab, ret_tgt)
        rollout = model.decoder.rollout_soft(
            enc_x.final, model.memory_for(enc_x, tgt_rows, tgt_mask), self.config.max_len
        )
        enc_transfer = model.encode_soft(rollout)
        picks = rollout.probs.argmax(dim=-1)
        transfer_tokens = [
            self.vocab.decode([int(t) for t in picks[row, : int(rollout.lengths[row])]])
            for row in range(len(batch))
        ]
        with torch.no_grad():
            self_rollout = model.decoder.rollout_soft(
                enc_x.final, model.memory_for(enc_x, own_rows, own_mask), self.config.max_len
            )
        return TransferForward(
            enc_x=enc_x,
            target_ids=target_ids,
            target_mask=target_mask,
            rec_nll=rec_nll,
            rollout=rollout,
            enc_transfer=enc_transfer,
            transfer_tokens=transfer_tokens,
            self_rollout=self_rollout,
        )

    def generator_losses(
        self,
        batch: Batch,
        forward: TransferForward,
        ret_tgt: list[RetrievalResult],
        ret_bwd: list[RetrievalResult],
    ) -> dict[str, torch.Tensor]:
        """Assemble the five generator losses (batch means)."""
        model = self.model
        bwd_rows, bwd_mask = model.encode_retrieved(self.vocab, ret_bwd)
        cyc_logp = model.decoder.teacher_forced(
            forward.enc_transfer.final,
            model.memory_for(forward.enc_transfer, bwd_rows, bwd_mask),
            forward.target_ids,
        )
        cyc_nll = sequence_nll(cyc_logp, forward.target_ids, forward.target_mask)

        gap, zero_rows = cosine_gap(forward.enc_x.query, forward.enc_transfer.query)
        self.ret_zero_queries += zero_rows

        fwd_words = [
            new_word_ids(self.vocab, ret_tgt[row].sentences, batch.sentences[row])
            for row in range(len(batch))
        ]
        bwd_words = [
            new_word_ids(self.vocab, ret_bwd[row].sentences, forward.transfer_tokens[row])
            for row in range(len(batch))
        ]
        bow_fwd = bag_of_words_nll(
            forward.rollout.log_probs, forward.rollout.lengths, fwd_words
        )
        # Cycle rows 0..len(x)-1 predict the source words; the final row
        # predicts the end marker and stays out of the bag.
        source_lengths = forward.enc_x.lengths
        bow_bwd = bag_of_words_nll(cyc_logp, source_lengths, bwd_words)

        adv = self.adversarial_loss(batch, forward.rollout)
        return {
            "rec": forward.rec_nll.mean(),
            "cyc": cyc_nll.mean(),
            "adv": adv,
            "ret": gap.mean(),
            "bow": (0.5 * (bow_fwd + bow_bwd)).mean(),
        }

    def adversarial_loss(self, batch: Batch, rollout: SoftRollout) -> torch.Tensor:
        """-log P(target style | soft transfer) through the frozen critic."""
        width = int(rollout.lengths.max())
        for p in self.discriminator.parameters():
            p.requires_grad_(False)
        try:
            logp = self.discriminator.log_probs(
                rollout.probs[:, :width, :], rollout.lengths
            )
        finally:
            for p in self.discriminator.parameters():
                p.requires_grad_(True)
        targets = torch.tensor(batch.tgt_styles, dtype=torch.long, device=logp.device)
        return -logp.gather(1, targets[:, None]).squeeze(1).mean()

    # ----- discriminator --------------------------------------------------

    def _classify_sentences(self, sentences: list[list[str]]) -> torch.Tensor:
        ids = [self.vocab.encode(s) for s in sentences]
        tokens, lengths = pad_batch(ids, device=self.device)
        return self.discriminator.log_probs(tokens, lengths)

    def _retrieved_class_nll(
        self, retrievals: list[RetrievalResult], classes: list[int]
    ) -> torch.Tensor:
        """Mean over each set of -log P(class | retrieved sentence), (B,)."""
        flat = [s for r in retrievals for s in r.sentences]
        logp = self._classify_sentences(flat)
        out = []
        offset = 0
        for result, cls in zip(retrievals, classes):
            count = len(result)
            rows = logp[offset : offset + count, cls]
            out.append(-rows.mean())
            offset += count
        return torch.stack(out)

    def discriminator_losses(
        self,
        batch: Batch,
        forward: TransferForward,
        ret_tgt: list[RetrievalResult],
        ret_bwd: list[RetrievalResult],
    ) -> dict[str, torch.Tensor]:
        """Real/generated and retrieved-class terms, on detached inputs."""
        device = self.device
        fake_class = self.discriminator.num_classes - 1
        src = torch.tensor(batch.src_styles, dtype=torch.long, device=device)
        tgt = torch.tensor(batch.tgt_styles, dtype=torch.long, device=device)

        logp_real = self._classify_sentences(batch.sentences)
        real_nll = -logp_real.gather(1, src[:, None]).squeeze(1)

        def soft_nll(rollout: SoftRollout, classes: torch.Tensor) -> torch.Tensor:
            width = int(rollout.lengths.max())
            rows = rollout.probs[:, :width, :].detach()
            logp = self.discriminator.log_probs(rows, rollout.lengths)
            return -logp.gather(1, classes[:, None]).squeeze(1)

        self_nll = soft_nll(forward.self_rollout, src)
        fake = torch.full_like(src, fake_class)
        fake_nll = soft_nll(forward.rollout, fake)

        c1 = (real_nll + self_nll + fake_nll).mean()
        c2 = (
            self._retrieved_class_nll(ret_tgt, batch.tgt_styles)
            + self._retrieved_class_nll(ret_bwd, batch.src_styles)
        ).mean()
        return {"c1": c1, "c2": c2}

    # ----- one step -------------------------------------------------------

    def train_step(self, batch: Batch | None = None) -> LossBundle:
        if batch is None:
            batch = self.sample_batch()
        cfg = self.config
        enc_x = self.model.encode_sentences(self.vocab, batch.sentences)
        ret_own = self.retrieve_for(batch.src_styles, batch.sentences, enc_x)
        ret_tgt = self.retrieve_for(batch.tgt_styles, batch.sentences, enc_x)
        forward = self.transfer_forward(batch, ret_own, ret_tgt, enc_x=enc_x)
        ret_bwd = self.retrieve_for(
            batch.src_styles, forward.transfer_tokens, forward.enc_transfer
        )

        disc = self.discriminator_losses(batch, forward, ret_tgt, ret_bwd)
        disc_floats = {k: float(v.detach()) for k, v in disc.items()}
        if not all(np.isfinite(v) for v in disc_floats.values()):
            # Abort before any optimizer step can absorb bad gradients.
            raise TrainingDiverged(self.step + 1, disc_floats)
        self.opt_d.zero_grad()
        (disc["c1"] + disc["c2"]).backward()
        torch.nn.utils.clip_grad_norm_(self.discriminator.parameters(), cfg.clip_norm)
        self.opt_d.step()

        # The adversarial term inside sees the just-updated critic.
        gen = self.generator_losses(batch, forward, ret_tgt, ret_bwd)
        gen_floats = {k: float(v.detach()) for k, v in gen.items()}
        if not all(np.isfinite(v) for v in gen_floats.values()):
            raise TrainingDiverged(self.step + 1, {**gen_floats, **disc_floats})
        total = (
            cfg.w_rec * gen["rec"]
            + cfg.w_cyc * gen["cyc"]
            + cfg.w_adv * gen["adv"]
            + cfg.w_ret * gen["ret"]
            + cfg.w_bow * gen["bow"]
        )
        self.opt_g.zero_grad()
        total.backward()
        torch.nn.utils.clip_grad_norm_(self.model.parameters(), cfg.clip_norm)
        self.opt_g.step()

        self.step += 1
        return LossBundle(**gen_floats, **disc_floats)

    # ----- loop -----------------------------------------------------------

    def run(self, out_dir: str | Path | None = None, log=print) -> list[LossBundle]:
        cfg = self.config
        out_path = Path(out_dir) if out_dir is not None else None
        log_fh = None
        if out_path is not None:
            out_path.mkdir(parents=True, exist_ok=True)
            log_fh = (out_path / "losses.tsv").open("w", encoding="utf-8")
            log_fh.write("\t".join(LOG_COLUMNS) + "\n")
        history: list[LossBundle] = []
        try:
            for _ in range(cfg.steps):
                try:
                    bundle = self.train_step()
                except TrainingDiverged as exc:
                    self._snapshot_divergence(out_path, exc)
                    raise
                history.append(bundle)
                if self.step % cfg.log_every == 0 or self.step == cfg.steps:
                    row = [str(self.step)] + [
                        f"{v:.6f}" for v in bundle.as_dict().values()
                    ]
                    if log_fh is not None:
                        log_fh.write("\t".join(row) + "\n")
                        log_fh.flush()
                    log(
                        f"step {self.step}: "
                        + " ".join(
                            f"{k}={v:.4f}" for k, v in bundle.as_dict().items()
                        )
                    )
                if cfg.retriever == "dense" and self.step % cfg.refresh_interval == 0:
                    self.refresh_index()
                if (
                    out_path is not None
                    and cfg.checkpoint_every > 0
                    and self.step % cfg.checkpoint_every == 0
                ):
                    self.save(out_path)
            if out_path is not None:
                self.save(out_path)
        finally:
            if log_fh is not None:
                log_fh.close()
        return history

    def save(self, out_dir: Path) -> Path:
        checkpoints = out_dir / "checkpoints"
        checkpoints.mkdir(parents=True, exist_ok=True)
        path = checkpoints / f"step{self.step}.pt"
        save_checkpoint(
            path,
            self.model,
            self.discriminator,
            self.config,
            self.vocab,
            self.step,
            extra={"refresh_steps": self.refresh_steps},
        )
        (checkpoints / "latest").write_text(path.name + "\n", encoding="utf-8")
        return path

    def _snapshot_divergence(self, out_path: Path | None, exc: TrainingDiverged) -> None:
        if out_path is None:
            return
        out_path.mkdir(parents=True, exist_ok=True)
        save_checkpoint(
            out_path / "diverged.pt",
            self.model,
            self.discriminator,
            self.config,
            self.vocab,
            exc.step,
            extra={"losses": exc.losses},
        )
        (out_path / "diverged.json").write_text(
            json.dumps({"step": exc.step, "losses": exc.losses}, indent=2)
        )


def seed_everything(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed % (1 << 32))
    torch.manual_seed(seed)


def latest_checkpoint(out_dir: str | Path) -> Path:
    pointer = Path(out_dir) / "checkpoints" / "latest"
    if not pointer.is_file():
        raise FileNotFoundError(f"no checkpoint pointer at {pointer}")
    return pointer.parent / pointer.read_text().strip()


# ----- language-model pretraining ------------------------------------------


def lm_batches(
    id_lists: list[list[int]], batch_size: int, rng: np.random.Generator
) -> list[list[list[int]]]:
    order = rng.permutation(len(id_lists))
    return [
        [id_lists[i] for i in order[start : start + batch_size]]
        for start in range(0, len(id_lists), batch_size)
    ]


def lm_epoch_nll(
    lm: ForwardLM,
    batches: list[list[list[int]]],
    optimizer: torch.optim.Optimizer | None,
    clip_norm: float,
    device: str = "cpu",
) -> float:
    """Mean per-token NLL over the batches; trains when an optimizer is given."""
    total_nll = 0.0
    total_tokens = 0
    for id_lists in batches:
        inputs, _ = pad_batch([[BOS_ID] + ids for ids in id_lists], device=device)
        targets, lengths = pad_targets(id_lists, device=device)
        mask = length_mask(lengths, targets.shape[1])
        logits = lm(inputs)
        log_probs = torch.log_softmax(logits, dim=-1)
        nll = sequence_nll(log_probs, targets, mask.to(log_probs.dtype)).sum()
        tokens = int(mask.sum())
        if optimizer is not None:
            optimizer.zero_grad()
            (nll / tokens).backward()
            torch.nn.utils.clip_grad_norm_(lm.parameters(), clip_norm)
            optimizer.step()
        total_nll += float(nll.detach())
        total_tokens += tokens
    return total_nll / max(total_tokens, 1)


def pretrain_lm(
    corpus: StyleCorpus,
    vocab: Vocabulary,
    config: RunConfig,
    device: str = "cpu",
    log=print,
) -> tuple[ForwardLM, list[dict[str, float]]]:
    """Train a forward LM on the union of all style subsets.

    Holds out 5% of sentences to report generalization per epoch.
    Returns the model and the per-epoch log.
    """
    seed_everything(config.seed)
    rng = np.random.default_rng(config.seed)
    id_lists = [
        vocab.encode(s[: config.max_len]) for s in corpus.all_sentences()
    ]
    order = rng.permutation(len(id_lists))
    cut = max(1, len(id_lists) // 20)
    holdout = [id_lists[i] for i in order[:cut]]
    train = [id_lists[i] for i in order[cut:]]
    if not train:
        raise ValueError("corpus too small to pretrain on")

    lm = ForwardLM(len(vocab), config.emb_size, config.hidden_size // 2).to(device)
    optimizer = torch.optim.Adam(lm.parameters(), lr=config.lr_pretrain)
    holdout_batches = lm_batches(holdout, config.batch_size, rng)
    history = []
    for epoch in range(1, config.lm_epochs + 1):
        train_nll = lm_epoch_nll(
            lm, lm_batches(train, config.batch_size, rng), optimizer,
            config.clip_norm, device,
        )
        with torch.no_grad():
            holdout_nll = lm_epoch_nll(lm, holdout_batches, None, config.clip_norm, device)
        history.append(
            {"epoch": epoch, "train_nll": train_nll, "holdout_nll": holdout_nll}
        )
        log(f"lm epoch {epoch}: train_nll={train_nll:.4f} holdout_nll={holdout_nll:.4f}")
    return lm, history


def save_lm(path: str | Path, lm: ForwardLM, vocab: Vocabulary, config: RunConfig) -> None:
    torch.save(
        {
            "state": lm.state_dict(),
            "emb_size": lm.embedding.embedding_dim,
            "hidden_size": lm.lstm.hidden_size,
            "vocab_size": len(vocab),
        },
        path,
    )


def load_lm(path: str | Path, device: str = "cpu") -> ForwardLM:
    payload = torch.load(path, map_location=device, weights_only=False)
    lm = ForwardLM(payload["vocab_size"], payload["emb_size"], payload["hidden_size"])
    lm.load_state_dict(payload["state"])
    return lm.to(device)
