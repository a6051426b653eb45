"""Shared builders for the model-level test suites."""

import random

import numpy as np
import torch

from restyle.config import RunConfig
from restyle.corpus import StyleCorpus, Vocabulary, compute_style_stats
from restyle.model import build_discriminator, build_model
from restyle.trainer import Batch, Trainer, seed_everything


def tiny_corpus(per_style=25):
    """Two obviously separable styles over a small shared vocabulary."""
    nouns = ["food", "soup", "staff", "room", "place"]
    subsets = [
        [
            f"the {nouns[i % 5]} was really good {i % 7}".split()
            for i in range(per_style)
        ],
        [
            f"the {nouns[i % 5]} was really bad {i % 7}".split()
            for i in range(per_style)
        ],
    ]
    return StyleCorpus(subsets=subsets, style_names=["0", "1"], split="train")


def tiny_config(**overrides):
    base = dict(
        styles=2,
        emb_size=16,
        hidden_size=32,
        dec_size=32,
        attn_size=16,
        max_len=8,
        min_freq=1,
        k=3,
        retriever="sparse",
        refresh_interval=5,
        batch_size=4,
        steps=3,
        disc_filters=8,
        disc_widths=(1, 2, 3),
        seed=7,
        log_every=1,
        checkpoint_every=0,
        lm_epochs=2,
    )
    base.update(overrides)
    return RunConfig(**base)


def tiny_setup(config=None, per_style=25):
    """Seeded corpus/vocab/model/discriminator/trainer bundle."""
    config = config or tiny_config()
    corpus = tiny_corpus(per_style)
    vocab = Vocabulary.from_corpus(corpus, min_freq=config.min_freq)
    stats = compute_style_stats(corpus, vocab)
    seed_everything(config.seed)
    model = build_model(config, vocab, neutrality_init=stats.neutrality)
    discriminator = build_discriminator(config, len(vocab))
    trainer = Trainer(config, corpus, vocab, model, discriminator)
    return trainer


# ----- gradient checking ------------------------------------------------------
#
# Finite differences need a pure, double-precision scalar function of the
# parameters.  Retrieval lists are frozen up front (gradients still flow
# through their re-encoding), and the discriminator runs in eval mode so
# the spectral-norm power iteration cannot mutate state between calls.


def grad_check_world(seed=0):
    """Tiny double-precision trainer with frozen retrievals for one batch."""
    tokens = [f"w{i}" for i in range(16)]  # 20 entries with the reserved ones
    vocab = Vocabulary(tokens)
    config = tiny_config(
        emb_size=8, hidden_size=8, dec_size=8, attn_size=8,
        disc_filters=3, disc_widths=(1, 2), k=2, batch_size=2,
        max_len=8, seed=seed,
    )
    rng = random.Random(seed)

    def sentence(lo, hi):
        return [f"w{rng.randint(lo, hi)}" for _ in range(rng.randint(3, 6))]

    subsets = [
        [sentence(0, 9) for _ in range(8)],
        [sentence(6, 15) for _ in range(8)],
    ]
    corpus = StyleCorpus(subsets=subsets, style_names=["0", "1"], split="train")
    seed_everything(seed)
    model = build_model(config, vocab)
    discriminator = build_discriminator(config, len(vocab))
    model.double()
    discriminator.double()
    trainer = Trainer(config, corpus, vocab, model, discriminator)
    discriminator.eval()
    batch = Batch(
        sentences=[subsets[0][0], subsets[1][0]],
        src_styles=[0, 1],
        tgt_styles=[1, 0],
    )
    ret_own = trainer.retrieve_for(batch.src_styles, batch.sentences, None)
    ret_tgt = trainer.retrieve_for(batch.tgt_styles, batch.sentences, None)
    with torch.no_grad():
        probe = trainer.transfer_forward(batch, ret_own, ret_tgt)
    ret_bwd = trainer.retrieve_for(batch.src_styles, probe.transfer_tokens, None)
    return {
        "trainer": trainer,
        "batch": batch,
        "ret_own": ret_own,
        "ret_tgt": ret_tgt,
        "ret_bwd": ret_bwd,
    }


def generator_loss_fn(world, name):
    """Scalar generator loss recomputed from scratch at the current params."""
    trainer, batch = world["trainer"], world["batch"]

    def value():
        forward = trainer.transfer_forward(batch, world["ret_own"], world["ret_tgt"])
        losses = trainer.generator_losses(
            batch, forward, world["ret_tgt"], world["ret_bwd"]
        )
        return losses[name]

    return value


def critic_loss_fn(world):
    """Scalar discriminator loss over fixed (constant) generator outputs."""
    trainer, batch = world["trainer"], world["batch"]
    with torch.no_grad():
        forward = trainer.transfer_forward(batch, world["ret_own"], world["ret_tgt"])

    def value():
        losses = trainer.discriminator_losses(
            batch, forward, world["ret_tgt"], world["ret_bwd"]
        )
        return losses["c1"] + losses["c2"]

    return value


def sample_coordinates(params, count, rng):
    """Uniformly sample (tensor, flat_index) pairs across all parameters."""
    sized = [p for p in params if p.requires_grad and p.numel() > 0]
    total = sum(p.numel() for p in sized)
    coords = []
    for _ in range(count):
        r = int(rng.integers(total))
        for p in sized:
            if r < p.numel():
                coords.append((p, r))
                break
            r -= p.numel()
    return coords


def gradient_pairs(value_fn, params, count=20, seed=0, eps=1e-5):
    """(analytic, numeric) central-difference pairs at sampled coordinates."""
    rng = np.random.default_rng(seed)
    coords = sample_coordinates(list(params), count, rng)
    for p, _ in coords:
        p.grad = None
    value_fn().backward()
    pairs = []
    for p, idx in coords:
        analytic = 0.0 if p.grad is None else float(p.grad.reshape(-1)[idx])
        flat = p.detach().reshape(-1)
        origin = float(flat[idx])
        with torch.no_grad():
            flat[idx] = origin + eps
            plus = float(value_fn())
            flat[idx] = origin - eps
            minus = float(value_fn())
            flat[idx] = origin
        pairs.append((analytic, (plus - minus) / (2.0 * eps)))
    return pairs


def max_relative_error(pairs, floor=1e-6):
    worst = 0.0
    for analytic, numeric in pairs:
        scale = max(abs(analytic), abs(numeric))
        if scale <= floor:
            continue
        worst = max(worst, abs(analytic - numeric) / scale)
    return worst
