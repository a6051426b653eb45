"""Synthetic two-style corpus for end-to-end checks.

Style is a pure lexical substitution: both styles share templates,
nouns, and adverbs, and differ only in which adjective slot-fillers they
draw from (positive vs negative members of fixed antonym pairs).  A
perfect transfer therefore swaps the adjective and copies everything
else, which makes classifier accuracy, self-BLEU, and reference BLEU
all meaningful and makes the reference rewrite exact: the same sentence
with each adjective replaced by its antonym.
"""

from __future__ import annotations

import random
from pathlib import Path

from .corpus import style_file, reference_file

ADJECTIVE_PAIRS = [
    ("good", "bad"),
    ("great", "terrible"),
    ("delicious", "disgusting"),
    ("friendly", "rude"),
    ("amazing", "awful"),
    ("wonderful", "horrible"),
    ("tasty", "bland"),
    ("lovely", "nasty"),
    ("superb", "dreadful"),
    ("charming", "gloomy"),
]

NOUNS = [
    "food", "service", "pizza", "coffee", "staff", "room",
    "music", "salad", "bread", "soup", "place", "waiter",
]

ADVERBS = ["really", "very", "quite", "truly", "honestly", "simply"]

TEMPLATES = [
    "the {noun} at this place is {adv} {adj} .",
    "i thought the {noun} here was {adv} {adj} .",
    "my friends say the {noun} is {adv} {adj} .",
    "to be fair the {noun} was {adv} {adj} .",
    "everyone agrees the {noun} here is {adj} .",
    "we found the {noun} to be {adv} {adj} .",
    "last week the {noun} seemed {adv} {adj} .",
    "overall the {noun} and the {drink} were {adj} .",
]

DRINKS = ["tea", "juice", "wine", "lemonade"]

ANTONYM = {a: b for a, b in ADJECTIVE_PAIRS} | {b: a for a, b in ADJECTIVE_PAIRS}


def make_sentence(rng: random.Random, style: int) -> str:
    template = rng.choice(TEMPLATES)
    adjective = rng.choice(ADJECTIVE_PAIRS)[style]
    return template.format(
        noun=rng.choice(NOUNS),
        adv=rng.choice(ADVERBS),
        adj=adjective,
        drink=rng.choice(DRINKS),
    )


def flip_style(sentence: str) -> str:
    """The exact opposite-style rewrite: swap each adjective for its antonym."""
    return " ".join(ANTONYM.get(tok, tok) for tok in sentence.split())


def generate_corpus(
    prefix: str | Path,
    train_per_style: int = 5000,
    dev_per_style: int = 500,
    test_per_style: int = 500,
    seed: int = 0,
) -> None:
    """Write train/dev/test files for both styles plus exact references.

    ``<prefix>.ref.<i>`` holds the opposite-style rewrite of each line of
    ``<prefix>.test.<i>``, in order.
    """
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    rng = random.Random(seed)
    sizes = {"train": train_per_style, "dev": dev_per_style, "test": test_per_style}
    for split, count in sizes.items():
        if count < 1:
            raise ValueError(f"{split}_per_style must be >= 1, got {count}")
    for split, count in sizes.items():
        for style in (0, 1):
            lines = [make_sentence(rng, style) for _ in range(count)]
            style_file(prefix, split, style).write_text(
                "\n".join(lines) + "\n", encoding="utf-8"
            )
            if split == "test":
                refs = [flip_style(line) for line in lines]
                reference_file(prefix, style).write_text(
                    "\n".join(refs) + "\n", encoding="utf-8"
                )
