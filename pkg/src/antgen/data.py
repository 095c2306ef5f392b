"""Vocabulary, corpus loading, BERT-style masking and synthetic grammars."""

from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PAD, MASK, EOS, UNK = 0, 1, 2, 3
SPECIALS = ("<pad>", "<mask>", "<eos>", "<unk>")
IGNORE = -1


class CorpusError(ValueError):
    """Raised for unreadable or malformed corpus files."""


class Vocab:
    """Token/id mapping. Ids 0..3 are always PAD, MASK, EOS, UNK."""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocabulary tokens must be unique")
        clash = set(tokens) & set(SPECIALS)
        if clash:
            raise ValueError(f"reserved tokens cannot appear in the vocabulary: {sorted(clash)}")
        self.itos = list(SPECIALS) + tokens
        self.stoi = {t: i for i, t in enumerate(self.itos)}

    def __len__(self) -> int:
        return len(self.itos)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.itos == other.itos

    @property
    def tokens(self) -> list[str]:
        return self.itos[len(SPECIALS):]

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK)

    def encode(self, words: Sequence[str], n: int) -> np.ndarray:
        """Ids for ``words`` with EOS appended, truncated/padded to length ``n``."""
        if n < 1:
            raise ValueError("sequence length must be at least 1")
        ids = [self.id(w) for w in list(words)[: n - 1]] + [EOS]
        ids += [PAD] * (n - len(ids))
        return np.asarray(ids, dtype=np.int64)

    def decode(self, ids: Iterable[int]) -> list[str]:
        """Tokens up to (excluding) the first EOS; PAD ids are skipped."""
        out = []
        for i in ids:
            i = int(i)
            if i == EOS:
                break
            if i == PAD:
                continue
            out.append(self.itos[i])
        return out

    def save(self, path: str | Path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.tokens), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        text = Path(path).read_text(encoding="utf-8")
        return cls([line for line in text.split("\n") if line])


def build_vocab(corpus: Iterable[Sequence[str]], min_freq: int = 1) -> Vocab:
    """Frequency-sorted vocabulary, ties broken lexicographically."""
    counts = Counter(itertools.chain.from_iterable(corpus))
    if not counts:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    kept = [t for t, c in counts.items() if c >= min_freq and t not in SPECIALS]
    kept.sort(key=lambda t: (-counts[t], t))
    return Vocab(kept)


@dataclass
class TokenizedCorpus:
    ids: np.ndarray  # [B, N] int64
    vocab: Vocab
    labels: np.ndarray | None = None

    def __len__(self) -> int:
        return self.ids.shape[0]

    @property
    def max_len(self) -> int:
        return self.ids.shape[1]

    def sentences(self) -> list[list[str]]:
        return [self.vocab.decode(row) for row in self.ids]


def tokenize(sentences: Iterable[str]) -> list[list[str]]:
    return [s.split() for s in sentences]


def encode_corpus(sentences: Sequence[Sequence[str]], vocab: Vocab, n: int,
                  labels: Sequence[int] | None = None) -> TokenizedCorpus:
    ids = np.stack([vocab.encode(s, n) for s in sentences]) if sentences else np.zeros((0, n), np.int64)
    lab = None if labels is None else np.asarray(labels, dtype=np.int64)
    if lab is not None and len(lab) != len(ids):
        raise ValueError(f"{len(lab)} labels for {len(ids)} sentences")
    return TokenizedCorpus(ids, vocab, lab)


def read_lines(path: str | Path) -> list[str]:
    """UTF-8 lines of a file; decoding errors report the 1-based line number."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CorpusError(f"cannot read corpus {path}: {exc.strerror}") from exc
    lines = raw.split(b"\n")
    if lines and lines[-1] == b"":
        lines.pop()
    out = []
    for no, line in enumerate(lines, start=1):
        try:
            out.append(line.decode("utf-8").rstrip("\r"))
        except UnicodeDecodeError as exc:
            raise CorpusError(f"{path}: line {no}: invalid UTF-8 at byte {exc.start}") from exc
    return out


def load_corpus(path: str | Path, vocab: Vocab, n: int, labels_path: str | Path | None = None) -> TokenizedCorpus:
    """One whitespace-tokenized sentence per line, EOS appended, padded to ``n``."""
    sentences = tokenize(read_lines(path))
    labels = None
    if labels_path is not None:
        raw = read_lines(labels_path)
        try:
            labels = [int(x) for x in raw]
        except ValueError as exc:
            raise CorpusError(f"{labels_path}: labels must be integers") from exc
    return encode_corpus(sentences, vocab, n, labels)


def write_lines(path: str | Path, lines: Iterable[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in lines:
            fh.write(line + "\n")


def mask_corpus(tokens: np.ndarray, ratio: float, seed: int | np.random.Generator,
                vocab_size: int | None = None, split: tuple[float, float, float] = (0.8, 0.1, 0.1)
                ) -> tuple[np.ndarray, np.ndarray]:
    """BERT-style corruption of non-pad positions.

    Each non-pad token is selected with probability ``ratio``. Selected
    tokens become MASK, a random regular token, or stay unchanged according
    to ``split``. Targets hold original ids at selected positions and
    ``IGNORE`` elsewhere. ``split=(1, 0, 0)`` forces MASK on every selection.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"mask ratio must lie in [0, 1], got {ratio}")
    if not math.isclose(sum(split), 1.0):
        raise ValueError(f"mask split must sum to 1, got {split}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    tokens = np.asarray(tokens, dtype=np.int64)
    eligible = tokens != PAD
    selected = (rng.random(tokens.shape) < ratio) & eligible
    branch = rng.random(tokens.shape)
    masked = tokens.copy()
    to_mask = selected & (branch < split[0])
    to_random = selected & (branch >= split[0]) & (branch < split[0] + split[1])
    masked[to_mask] = MASK
    if to_random.any():
        if vocab_size is None or vocab_size <= len(SPECIALS):
            raise ValueError("random replacement needs a vocabulary with regular tokens")
        masked[to_random] = rng.integers(len(SPECIALS), vocab_size, size=int(to_random.sum()))
    targets = np.where(selected, tokens, IGNORE)
    return masked, targets


# -- synthetic grammars --------------------------------------------------------

Frame = tuple[tuple[str, ...], ...]


@dataclass
class SyntheticGrammar:
    """Sentences as slot frames: each slot lists the words allowed there.

    ``frames`` maps a label (``None`` for unconditional grammars) to the
    frames producing that label's sentences. A sentence is valid iff it has
    a frame's length and every token is in the matching slot, so membership
    costs O(length) per frame.
    """

    frames: dict[int | None, list[Frame]]
    _sets: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        for label, frames in self.frames.items():
            # sets for O(1) slot lookups
            self._sets[label] = [tuple(frozenset(slot) for slot in fr) for fr in frames]

    @property
    def labels(self) -> list[int | None]:
        return list(self.frames)

    @property
    def conditional(self) -> bool:
        return None not in self.frames

    def words(self, label: int | None = None) -> set[str]:
        keys = self.frames if label is None else [label]
        return {w for k in keys for fr in self.frames[k] for slot in fr for w in slot}

    def max_length(self) -> int:
        return max(len(fr) for frames in self.frames.values() for fr in frames)

    def is_valid(self, tokens: Sequence[str], label: int | None = None) -> bool:
        keys = self.frames if label is None else [label]
        for key in keys:
            for fr in self._sets.get(key, ()):
                if len(fr) == len(tokens) and all(t in slot for t, slot in zip(tokens, fr)):
                    return True
        return False

    def count(self, label: int | None = None) -> int:
        keys = self.frames if label is None else [label]
        return sum(math.prod(len(s) for s in fr) for k in keys for fr in self.frames[k])

    def sample(self, rng: np.random.Generator, label: int | None = None) -> list[str]:
        """Uniform draw over all instantiations of the label's frames."""
        key = label if label is not None else next(iter(self.frames))
        frames = self.frames[key]
        weights = np.array([math.prod(len(s) for s in fr) for fr in frames], dtype=np.float64)
        fr = frames[int(rng.choice(len(frames), p=weights / weights.sum()))]
        return [slot[int(rng.integers(len(slot)))] for slot in fr]


def synthetic_grammar_corpus(grammar: SyntheticGrammar, count: int, seed: int,
                             label: int | None = None) -> tuple[list[list[str]], list[int] | None]:
    """``count`` sentences sampled uniformly from ``grammar``.

    For conditional grammars without a fixed ``label`` the labels alternate
    uniformly at random and are returned alongside the sentences.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    rng = np.random.default_rng(seed)
    sentences, labels = [], []
    for _ in range(count):
        lab = label
        if lab is None and grammar.conditional:
            lab = grammar.labels[int(rng.integers(len(grammar.labels)))]
        sentences.append(grammar.sample(rng, lab))
        labels.append(lab)
    return sentences, (labels if grammar.conditional else None)


def toy_grammar(short_frames: bool = True) -> SyntheticGrammar:
    """Unconditional subject-verb-object grammar with number agreement (|V| = 18)."""
    det = ("the", "a")
    adj = ("big", "small", "red", "old")
    n_sg, n_pl = ("cat", "dog"), ("cats", "dogs")
    v_sg, v_pl = ("sees", "likes"), ("see", "like")
    obj = n_sg + n_pl
    frames = [
        (det, adj, adj, n_sg, v_sg, det, adj, obj),
        (det, adj, adj, n_pl, v_pl, det, adj, obj),
    ]
    if short_frames:
        frames += [(det, adj, n_sg, v_sg, det, obj), (det, adj, n_pl, v_pl, det, obj)]
    return SyntheticGrammar({None: frames})


def toy_conditional_grammar() -> SyntheticGrammar:
    """Two labels with disjoint content-word pools; determiners are shared."""
    det = ("the", "a")
    pools = {
        0: (("good", "nice", "great", "fine"), ("food", "staff", "room"), ("loves", "likes")),
        1: (("bad", "awful", "poor", "rude"), ("meal", "waiter", "place"), ("hates", "dislikes")),
    }
    frames = {lab: [(det, adj, noun, verb, det, adj, noun)] for lab, (adj, noun, verb) in pools.items()}
    return SyntheticGrammar(frames)
