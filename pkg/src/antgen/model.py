"""Aligner, non-autoregressive generator and per-position critic."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import tensor as T
from .data import EOS, PAD
from .layers import (
    EncoderBlock,
    Linear,
    Module,
    PositionAwareSelfModulation,
    causal_mask,
    parameter,
    positional_encoding,
)
from .tensor import Tensor


@dataclass
class ModelConfig:
    """Architecture hyperparameters. The latent size equals ``d_model``."""

    vocab_size: int
    max_len: int = 20
    d_model: int = 256
    heads: int = 8
    d_ff: int = 1024
    layers: int = 4
    dropout: float = 0.1
    num_labels: int = 0

    def __post_init__(self):
        if self.d_model % self.heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by heads={self.heads}")
        for name in ("vocab_size", "max_len", "d_model", "heads", "d_ff", "layers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    @property
    def d_z(self) -> int:
        return self.d_model

    def digest(self) -> bytes:
        """32-byte SHA-256 over the canonical JSON form."""
        blob = json.dumps(asdict(self), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).digest()

    @classmethod
    def from_mapping(cls, values: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in values.items() if k in names})


class Aligner(Module):
    """Bidirectional encoder mapping words to Gaussian regions ``N(mu, sigma^2)``.

    Owns the output transform ``f_lt`` that the generator shares for decoding.
    """

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        d = cfg.d_model
        self.cfg = cfg
        self.embed = parameter(rng.normal(0.0, 1.0, size=(cfg.vocab_size, d)))
        self.blocks = [EncoderBlock(d, cfg.heads, cfg.d_ff, rng, dropout=cfg.dropout) for _ in range(cfg.layers)]
        self.mu_head = Linear(d, d, rng)
        self.logvar_head = Linear(d, d, rng)
        self.f_lt = Linear(d, cfg.vocab_size, rng)
        self._pe = positional_encoding(cfg.max_len, d)

    def forward(self, ids, rng: np.random.Generator | None = None, sample: bool = True):
        """Returns ``(mu, logvar, logits)``.

        ``logits = F_LT(mu + sigma * eps)``; ``eps`` is drawn from ``rng`` when
        ``sample`` is set and is zero otherwise. ``rng`` also drives dropout.
        """
        ids = np.asarray(ids, dtype=np.int64)
        b, n = ids.shape
        if n > self.cfg.max_len:
            raise ValueError(f"sequence length {n} exceeds max_len {self.cfg.max_len}")
        x = T.embedding(self.embed, ids) + Tensor(self._pe[:n], dtype=self.embed.dtype)
        x = T.dropout(x, self.cfg.dropout, rng)
        for block in self.blocks:
            x = block(x, None, rng)
        mu = self.mu_head(x)
        logvar = self.logvar_head(x)
        if sample and rng is not None:
            eps = Tensor(rng.standard_normal(mu.shape), dtype=mu.dtype)
            z = mu + T.exp(logvar * 0.5) * eps
        else:
            z = mu
        return mu, logvar, self.f_lt(z)

    def encode(self, ids) -> np.ndarray:
        """Deterministic ``mu`` for clean sentences (no dropout, no noise)."""
        with T.no_grad():
            mu, _, _ = self.forward(ids, rng=None, sample=False)
        return mu.data


class Generator(Module):
    """Maps a latent draw to ``N`` output representations in one pass.

    Input is a trainable per-position table modulated by PASM; a causally
    masked encoder stack follows. Token embeddings are never read.
    """

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, f_lt: Linear):
        d, n = cfg.d_model, cfg.max_len
        self.cfg = cfg
        self.table = parameter(rng.normal(0.0, 1.0, size=(n, d)))
        self.pasm = PositionAwareSelfModulation(n, cfg.d_z, d, rng)
        self.blocks = [EncoderBlock(d, cfg.heads, cfg.d_ff, rng, dropout=cfg.dropout) for _ in range(cfg.layers)]
        self.out = Linear(d, d, rng)
        if cfg.num_labels:
            self.alpha1 = parameter(np.ones(1))
            self.alpha2 = parameter(np.ones(1))
            self.label_embed = parameter(rng.normal(0.0, 1.0, size=(cfg.num_labels, cfg.d_z)))
        self._f_lt = f_lt
        self._pe = positional_encoding(n, d)
        self._mask = causal_mask(n)
        self.forward_calls = 0

    def condition(self, labels) -> Tensor:
        if not self.cfg.num_labels:
            raise ValueError("generator was built without labels")
        return T.embedding(self.label_embed, np.asarray(labels, dtype=np.int64))

    def mix(self, z: Tensor, c: Tensor | None) -> Tensor:
        """``alpha1 * z + alpha2 * c``; exactly ``z`` when there is no condition."""
        if c is None:
            return z
        return self.alpha1 * z + self.alpha2 * c

    def forward(self, z, c: Tensor | None = None, rng: np.random.Generator | None = None,
                inputs: Tensor | None = None) -> Tensor:
        """Output representations ``r`` of shape ``[B, N, d]``.

        ``inputs`` overrides the modulated table (used to probe causality).
        """
        self.forward_calls += 1
        z = z if isinstance(z, Tensor) else Tensor(z, dtype=self.table.dtype)
        if inputs is None:
            inputs = self.modulated_inputs(z, c)
        pe = Tensor(self._pe, dtype=inputs.dtype)
        mask = Tensor(self._mask.data, dtype=inputs.dtype)
        x = T.dropout(inputs + pe, self.cfg.dropout, rng)
        for block in self.blocks:
            x = block(x, mask, rng)
        return self.out(x)

    def modulated_inputs(self, z: Tensor, c: Tensor | None = None) -> Tensor:
        return self.pasm(self.mix(z, c), self.table)

    def logits(self, r: Tensor) -> Tensor:
        return self._f_lt(r)


class Discriminator(Module):
    """Causal Wasserstein critic giving one raw score per position."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        d = cfg.d_model
        self.cfg = cfg
        self.proj = Linear(d, d, rng)
        self.blocks = [
            EncoderBlock(d, cfg.heads, cfg.d_ff, rng, dependency_ffn=True, dropout=cfg.dropout)
            for _ in range(cfg.layers)
        ]
        self.head = Linear(d, 1, rng)
        if cfg.num_labels:
            self.label_embed = parameter(rng.normal(0.0, 1.0, size=(cfg.num_labels, d)))
        self._pe = positional_encoding(cfg.max_len, d)
        self._mask = causal_mask(cfg.max_len)

    def condition(self, labels) -> Tensor:
        if not self.cfg.num_labels:
            raise ValueError("discriminator was built without labels")
        return T.embedding(self.label_embed, np.asarray(labels, dtype=np.int64))

    def forward(self, reps, c: Tensor | None = None, rng: np.random.Generator | None = None) -> Tensor:
        reps = reps if isinstance(reps, Tensor) else Tensor(reps, dtype=self.proj.weight.dtype)
        b, n, d = reps.shape
        if c is not None:
            reps = reps + c.reshape(b, 1, d)
        x = self.proj(reps) + Tensor(self._pe[:n], dtype=reps.dtype)
        x = T.dropout(x, self.cfg.dropout, rng)
        mask = Tensor(self._mask.data[:n, :n], dtype=reps.dtype)
        for block in self.blocks:
            x = block(x, mask, rng)
        return self.head(x).reshape(b, n)


class ANT(Module):
    """Container tying aligner, generator and discriminator together."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.aligner = Aligner(cfg, rng)
        self.generator = Generator(cfg, rng, self.aligner.f_lt)
        self.discriminator = Discriminator(cfg, rng)


@dataclass
class GenInput:
    """One generator input: latent ``z`` and optional condition vector ``c``."""

    z: np.ndarray
    c: np.ndarray | None = None


def sample_latent(rng: np.random.Generator, batch: int, d_z: int) -> np.ndarray:
    """Draws from the standard normal prior."""
    return rng.standard_normal((batch, d_z))


def truncate_at_eos(ids: np.ndarray) -> np.ndarray:
    """Replace everything after the first EOS in each row with PAD."""
    ids = np.array(ids, dtype=np.int64, copy=True)
    after = np.cumsum(ids == EOS, axis=-1) - (ids == EOS) > 0
    ids[after] = PAD
    return ids


def decode_logits(logits: np.ndarray, temperature: float = 1.0, mode: str = "greedy",
                  rng: np.random.Generator | None = None) -> np.ndarray:
    if mode == "greedy":
        ids = np.argmax(logits, axis=-1)
    elif mode == "sample":
        if not temperature > 0:
            raise ValueError(f"temperature must be positive, got {temperature}")
        if rng is None:
            raise ValueError("sample mode needs an rng")
        scaled = np.asarray(logits, dtype=np.float64) / temperature
        scaled -= scaled.max(axis=-1, keepdims=True)
        probs = np.exp(scaled)
        cdf = np.cumsum(probs, axis=-1)
        u = rng.random(cdf.shape[:-1] + (1,)) * cdf[..., -1:]
        ids = np.minimum((cdf < u).sum(axis=-1), logits.shape[-1] - 1)
    else:
        raise ValueError(f"unknown decode mode {mode!r}")
    return truncate_at_eos(ids)


def decode_representations(gen: Generator, r: Tensor, temperature: float = 1.0, mode: str = "greedy",
                           rng: np.random.Generator | None = None) -> np.ndarray:
    """Token ids ``[B, N]`` from representations through the shared ``F_LT``."""
    if mode == "sample" and not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    with T.no_grad():
        logits = gen.logits(r).data
    return decode_logits(logits, temperature, mode, rng)


def generate(model: ANT, count: int, rng: np.random.Generator, labels=None, temperature: float = 1.0,
             mode: str = "greedy", z: np.ndarray | None = None) -> np.ndarray:
    """Sample ``count`` sentences with a single batched generator pass.

    Dropout stays active, acting as an extra source of sampling noise.
    """
    gen = model.generator
    if z is None:
        z = sample_latent(rng, count, model.cfg.d_z)
    with T.no_grad():
        c = gen.condition(np.broadcast_to(labels, (count,))) if labels is not None else None
        r = gen(Tensor(z, dtype=gen.table.dtype), c, rng)
    return decode_representations(gen, r, temperature, mode, rng)


def interpolate(model: ANT, a: GenInput, b: GenInput, steps: int, seed: int = 0) -> np.ndarray:
    """Greedy decodes along the line from ``a`` to ``b`` (``steps`` points).

    Exactly one of ``z``/``c`` may differ between the endpoints. Every point
    reuses the dropout masks drawn from ``seed``.
    """
    if steps < 2:
        raise ValueError("interpolation needs at least 2 steps")
    z_same = np.array_equal(a.z, b.z)
    if (a.c is None) != (b.c is None):
        raise ValueError("endpoints must both have or both lack a condition")
    c_same = a.c is None or np.array_equal(a.c, b.c)
    if not z_same and not c_same:
        raise ValueError("interpolation endpoints differ in both z and c; fix one of them")
    gen = model.generator
    rows = []
    for w in np.linspace(0.0, 1.0, steps):
        z = (1.0 - w) * np.asarray(a.z) + w * np.asarray(b.z) if not z_same else np.asarray(a.z)
        c = None
        if a.c is not None:
            cv = (1.0 - w) * np.asarray(a.c) + w * np.asarray(b.c) if not c_same else np.asarray(a.c)
            c = Tensor(cv[None], dtype=gen.table.dtype)
        rng = np.random.default_rng(seed)
        with T.no_grad():
            r = gen(Tensor(z[None], dtype=gen.table.dtype), c, rng)
        rows.append(decode_representations(gen, r)[0])
    return np.stack(rows)
