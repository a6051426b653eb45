"""Flat key=value run configuration.

A config file holds one ``key = value`` pair per line; ``#`` starts a
comment and blank lines are skipped.  Precedence is command-line flag
over config file over built-in default.  Unknown keys are rejected by
name so typos fail loudly instead of silently training with defaults.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path


@dataclass
class RunConfig:
    # Data
    data: str = ""
    styles: int = 2
    max_len: int = 32
    min_freq: int = 2
    # Model sizes
    emb_size: int = 256
    hidden_size: int = 512
    dec_size: int = 512
    attn_size: int = 256
    disc_filters: int = 64
    disc_widths: tuple[int, ...] = (1, 2, 3, 4, 5)
    # Retrieval
    k: int = 5
    retriever: str = "dense"
    refresh_interval: int = 200
    bm25_k1: float = 1.2
    bm25_b: float = 0.75
    # Optimization
    batch_size: int = 64
    steps: int = 2000
    lr: float = 1e-4
    lr_pretrain: float = 1e-3
    clip_norm: float = 5.0
    lm_epochs: int = 5
    lm_checkpoint: str = ""
    # Loss weights
    w_rec: float = 1.0
    w_cyc: float = 1.0
    w_adv: float = 1.0
    w_ret: float = 1.0
    w_bow: float = 1.0
    # Evaluation
    eval_classifier_epochs: int = 3
    ngram_order: int = 5
    kn_discount: float = 0.75
    # Bookkeeping
    seed: int = 0
    log_every: int = 50
    checkpoint_every: int = 1000

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.refresh_interval < 1:
            raise ValueError("refresh_interval must be at least 1")
        if self.styles < 2:
            raise ValueError("styles must be at least 2")
        if self.retriever not in ("sparse", "dense", "random"):
            raise ValueError(f"unknown retriever kind: {self.retriever!r}")
        if isinstance(self.disc_widths, list):
            self.disc_widths = tuple(self.disc_widths)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["disc_widths"] = ",".join(str(w) for w in self.disc_widths)
        return out

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(name: str, raw: str):
    kind = _FIELDS[name].type
    raw = raw.strip()
    if name == "disc_widths":
        return tuple(int(part) for part in raw.split(",") if part.strip())
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw


def parse_pairs(pairs: dict[str, str]) -> dict:
    """Coerce raw string pairs to field values; unknown keys raise."""
    values = {}
    for name, raw in pairs.items():
        if name not in _FIELDS:
            raise ValueError(f"unknown config key: {name!r}")
        values[name] = _coerce(name, raw)
    return values


def read_config_file(path: str | Path) -> dict[str, str]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    pairs: dict[str, str] = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        name, raw = line.split("=", 1)
        pairs[name.strip()] = raw.strip()
    return pairs


def load_config(
    path: str | Path | None = None, overrides: dict[str, str] | None = None
) -> RunConfig:
    """Defaults, then the config file, then explicit overrides."""
    values: dict = {}
    if path:
        values.update(parse_pairs(read_config_file(path)))
    if overrides:
        values.update(parse_pairs(overrides))
    return RunConfig(**values)
