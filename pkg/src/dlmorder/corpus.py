"""Deterministic synthetic corpora with learnable structure.

``vocab_size`` always counts the MASK token (the last id), which never
appears in generated data.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInput

HEADER_TYPE = "dlmorder-corpus"


@dataclass
class Corpus:
    sequences: np.ndarray
    vocab_size: int
    generator_spec: dict = field(default_factory=dict)

    def __post_init__(self):
        self.sequences = np.asarray(self.sequences, dtype=np.int64)
        if self.sequences.ndim != 2:
            raise InvalidInput("corpus sequences must share one length")
        if self.sequences.size and (self.sequences.min() < 0 or self.sequences.max() >= self.vocab_size - 1):
            raise InvalidInput("corpus tokens must lie in [0, vocab_size - 1); MASK is reserved")

    def __len__(self) -> int:
        return self.sequences.shape[0]

    @property
    def seq_len(self) -> int:
        return self.sequences.shape[1]


def markov_transitions(vocab_size: int, transition_concentration: float,
                       rng: np.random.Generator) -> np.ndarray:
    k = vocab_size - 1
    return rng.dirichlet(np.full(k, transition_concentration), size=k)


def gen_markov(vocab_size: int, seq_len: int, num_sequences: int,
               transition_concentration: float, seed: int) -> Corpus:
    """First-order Markov chains over a Dirichlet-sampled transition matrix.

    The transition matrix is the first draw from ``default_rng(seed)``;
    ``markov_transitions(vocab_size, c, default_rng(seed))`` reproduces it.
    Start tokens are uniform.
    """
    if vocab_size < 3 or seq_len < 2 or num_sequences < 1:
        raise InvalidInput("gen_markov needs vocab_size >= 3, seq_len >= 2, num_sequences >= 1")
    if not transition_concentration > 0:
        raise InvalidInput("transition_concentration must be positive")
    rng = np.random.default_rng(seed)
    trans = markov_transitions(vocab_size, transition_concentration, rng)
    cdf = np.cumsum(trans, axis=1)
    cdf[:, -1] = 1.0
    k = vocab_size - 1
    seqs = np.empty((num_sequences, seq_len), dtype=np.int64)
    seqs[:, 0] = rng.integers(0, k, size=num_sequences)
    for t in range(1, seq_len):
        u = rng.random(num_sequences)
        rows = cdf[seqs[:, t - 1]]
        seqs[:, t] = np.minimum((rows < u[:, None]).sum(axis=1), k - 1)
    spec = {"name": "markov", "vocab_size": vocab_size, "seq_len": seq_len,
            "num_sequences": num_sequences, "transition_concentration": transition_concentration,
            "seed": seed}
    return Corpus(seqs, vocab_size, spec)


def gen_copy(vocab_size: int, half_len: int, num_sequences: int, seed: int) -> Corpus:
    """Random first halves followed by an exact repetition."""
    if vocab_size < 3 or half_len < 1 or num_sequences < 1:
        raise InvalidInput("gen_copy needs vocab_size >= 3, half_len >= 1, num_sequences >= 1")
    rng = np.random.default_rng(seed)
    half = rng.integers(0, vocab_size - 1, size=(num_sequences, half_len))
    spec = {"name": "copy", "vocab_size": vocab_size, "half_len": half_len,
            "num_sequences": num_sequences, "seed": seed}
    return Corpus(np.concatenate([half, half], axis=1), vocab_size, spec)


def from_spec(spec: dict) -> Corpus:
    """Rebuild a corpus from its ``generator_spec``."""
    spec = dict(spec)
    name = spec.pop("name", None)
    if name == "markov":
        return gen_markov(**spec)
    if name == "copy":
        return gen_copy(**spec)
    raise InvalidInput(f"unknown corpus generator {name!r}")


def split(corpus: Corpus, train_fraction: float, seed: int) -> tuple[Corpus, Corpus]:
    """Disjoint shuffle-split; the train part gets round(fraction * N) sequences."""
    if not 0.0 < train_fraction < 1.0:
        raise InvalidInput("train_fraction must lie in (0, 1)")
    order = np.random.default_rng(seed).permutation(len(corpus))
    cut = int(round(train_fraction * len(corpus)))
    spec = dict(corpus.generator_spec)
    train = Corpus(corpus.sequences[order[:cut]], corpus.vocab_size,
                   {**spec, "split": "train", "train_fraction": train_fraction, "split_seed": seed})
    test = Corpus(corpus.sequences[order[cut:]], corpus.vocab_size,
                  {**spec, "split": "test", "train_fraction": train_fraction, "split_seed": seed})
    return train, test


def export_jsonl(corpus: Corpus, path) -> None:
    """Header record, then one JSON list of token ids per line."""
    with open(path, "w", encoding="utf-8") as fh:
        header = {"type": HEADER_TYPE, "vocab_size": corpus.vocab_size,
                  "seq_len": corpus.seq_len, "generator_spec": corpus.generator_spec}
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for row in corpus.sequences.tolist():
            fh.write(json.dumps(row) + "\n")


def import_jsonl(path) -> Corpus:
    with open(path, encoding="utf-8") as fh:
        lines = [line for line in fh if line.strip()]
    if not lines:
        raise InvalidInput(f"{path}: empty corpus file")
    header = json.loads(lines[0])
    if not isinstance(header, dict) or header.get("type") != HEADER_TYPE:
        raise InvalidInput(f"{path}: missing corpus header")
    rows = [json.loads(line) for line in lines[1:]]
    if any(len(r) != header["seq_len"] for r in rows):
        raise InvalidInput(f"{path}: sequence length differs from header seq_len")
    seqs = np.asarray(rows, dtype=np.int64).reshape(len(rows), header["seq_len"])
    return Corpus(seqs, header["vocab_size"], header.get("generator_spec", {}))
