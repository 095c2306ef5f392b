"""Aligner pretraining and frozen-aligner adversarial training."""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .checkpoint import Checkpoint, CheckpointError
from .data import IGNORE, TokenizedCorpus, mask_corpus
from .model import ANT, Aligner, Discriminator, Generator, decode_representations, sample_latent
from .optim import Adam, AdamW
from .tensor import Tensor

log = logging.getLogger(__name__)


@dataclass
class TrainSchedule:
    aligner_epochs: int = 200
    gan_epochs: int = 4000
    d_steps_per_g_step: int = 5
    batch_size: int = 64
    lr_aligner: float = 1e-4
    wd_aligner: float = 1e-5
    lr_disc: float = 2e-4
    wd_disc: float = 1e-4
    lr_gen: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.9
    penalty_weight: float = 10.0
    mask_ratio: float = 0.15
    kl_weight: float = 0.01
    sample_every: int = 0
    sample_count: int = 8

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.d_steps_per_g_step < 1:
            raise ValueError("d_steps_per_g_step must be positive")


def param_digest(module) -> str:
    """SHA-256 over parameter names and raw bytes; detects any change."""
    h = hashlib.sha256()
    for name, p in module.named_parameters():
        h.update(name.encode())
        h.update(np.ascontiguousarray(p.data).tobytes())
    return h.hexdigest()


# -- aligner -------------------------------------------------------------------

def aligner_loss(logits: Tensor, targets, mu: Tensor, logvar: Tensor, kl_weight: float = 1.0) -> Tensor:
    """Mean over target positions of cross-entropy plus ``kl_weight * KL(N(mu, sigma^2) || N(0, I))``.

    The KL is summed over representation dimensions. Positions whose target
    equals ``IGNORE`` are excluded from both terms.
    """
    targets = np.asarray(targets, dtype=np.int64)
    valid = targets != IGNORE
    count = int(valid.sum())
    if count == 0:
        raise ValueError("aligner_loss needs at least one target position")
    vocab = logits.shape[-1]
    onehot = np.zeros(targets.shape + (vocab,))
    rows = np.nonzero(valid)
    onehot[rows + (targets[valid],)] = 1.0
    logp = T.log_softmax(logits, axis=-1)
    nll = -T.sum(logp * Tensor(onehot, dtype=logits.dtype), axis=-1)
    kl = T.sum((mu * mu + T.exp(logvar) - 1.0 - logvar) * 0.5, axis=-1)
    weights = Tensor(valid.astype(np.float64) / count, dtype=logits.dtype)
    return T.sum((nll + kl * kl_weight) * weights)


def masked_accuracy(aligner: Aligner, ids: np.ndarray, ratio: float = 0.15, seed: int = 0,
                    batch_size: int = 256) -> float:
    """Argmax-of-``F_LT(mu)`` accuracy on positions replaced by MASK."""
    masked, targets = mask_corpus(ids, ratio, seed, split=(1.0, 0.0, 0.0))
    hits = total = 0
    for lo in range(0, len(ids), batch_size):
        with T.no_grad():
            _, _, logits = aligner(masked[lo:lo + batch_size], rng=None, sample=False)
        tgt = targets[lo:lo + batch_size]
        sel = tgt != IGNORE
        hits += int((logits.data.argmax(-1)[sel] == tgt[sel]).sum())
        total += int(sel.sum())
    return hits / total if total else float("nan")


@dataclass
class AlignerTrace:
    losses: list[float] = field(default_factory=list)

    @property
    def smoothed(self) -> list[float]:
        """Running minimum of the per-epoch losses."""
        return list(np.minimum.accumulate(self.losses)) if self.losses else []


def pretrain_aligner(aligner: Aligner, corpus: TokenizedCorpus, schedule: TrainSchedule, seed: int = 0,
                     optimizer: AdamW | None = None, epochs: int | None = None,
                     callback: Callable[[int, float], None] | None = None) -> AlignerTrace:
    """Masked-reconstruction training with the VAE objective.

    Inputs are BERT-corrupted; every position (masked or not) is
    reconstructed, so ``mu`` of clean sentences decodes back to the words.
    """
    if len(corpus) == 0:
        raise ValueError("cannot pretrain the aligner on an empty corpus")
    epochs = schedule.aligner_epochs if epochs is None else epochs
    params = aligner.parameters()
    opt = optimizer or AdamW(params, lr=schedule.lr_aligner, weight_decay=schedule.wd_aligner)
    rng = np.random.default_rng(seed)
    vocab_size = aligner.cfg.vocab_size
    trace = AlignerTrace()
    n = len(corpus)
    for epoch in range(epochs):
        perm = rng.permutation(n)
        total, batches = 0.0, 0
        for lo in range(0, n, schedule.batch_size):
            ids = corpus.ids[perm[lo:lo + schedule.batch_size]]
            masked, _ = mask_corpus(ids, schedule.mask_ratio, rng, vocab_size)
            mu, logvar, logits = aligner(masked, rng=rng, sample=True)
            loss = aligner_loss(logits, ids, mu, logvar, schedule.kl_weight)
            grads = T.grad(loss, params)
            opt.step(grads)
            total += loss.item()
            batches += 1
        trace.losses.append(total / batches)
        if callback is not None:
            callback(epoch, trace.losses[-1])
    return trace


# -- adversarial objectives ---------------------------------------------------

def lipschitz_penalty(critic: Callable[[Tensor], Tensor], real, fake, rng: np.random.Generator,
                      create_graph: bool = True) -> Tensor:
    """One-sided penalty ``mean(max(0, ||grad_x mean_t D(x)_t|| - 1)^2)`` on interpolates.

    ``x = u * real + (1 - u) * fake`` with one ``u ~ U(0, 1)`` per sample.
    ``critic`` maps ``[B, N, d]`` representations to ``[B, N]`` scores.
    """
    real = real.data if isinstance(real, Tensor) else np.asarray(real)
    fake = fake.data if isinstance(fake, Tensor) else np.asarray(fake)
    if real.shape != fake.shape:
        raise T.ShapeError(f"real {real.shape} and fake {fake.shape} batches differ")
    u = rng.random((real.shape[0],) + (1,) * (real.ndim - 1))
    x_hat = Tensor(u * real + (1.0 - u) * fake, requires_grad=True, dtype=real.dtype)
    scores = critic(x_hat)
    per_sample = T.mean(scores, axis=tuple(range(1, scores.ndim)))
    (g,) = T.grad(T.sum(per_sample), [x_hat], create_graph=create_graph)
    sq = T.sum(g * g, axis=tuple(range(1, g.ndim)))
    norm = T.sqrt(sq + 1e-12)
    excess = T.relu(norm - 1.0)
    return T.mean(excess * excess)


def wasserstein_critic_loss(real_scores: Tensor, fake_scores: Tensor) -> Tensor:
    return T.mean(fake_scores) - T.mean(real_scores)


def gan_losses(disc: Discriminator, gen: Generator, real_mu, z, rng: np.random.Generator,
               penalty_weight: float = 10.0, labels=None) -> tuple[Tensor, Tensor]:
    """``(L_D, L_G)`` for one batch; means run over batch and positions.

    ``L_D = -mean D(real) + mean D(G(z)) + lambda * penalty`` and
    ``L_G = -mean D(G(z))``. Both share one generator and critic pass.
    """
    real = Tensor(real_mu, dtype=gen.table.dtype)
    c_gen = gen.condition(labels) if labels is not None else None
    c_disc = disc.condition(labels) if labels is not None else None
    fake = gen(z, c_gen, rng)
    real_scores = disc(real, c_disc, rng)
    fake_scores = disc(fake, c_disc, rng)
    pen = lipschitz_penalty(lambda x: disc(x, c_disc, rng), real, fake.data, rng)
    loss_d = wasserstein_critic_loss(real_scores, fake_scores) + pen * penalty_weight
    loss_g = -T.mean(fake_scores)
    return loss_d, loss_g


# -- adversarial training loop -------------------------------------------------

def encode_corpus_mu(aligner: Aligner, ids: np.ndarray, batch_size: int = 256) -> np.ndarray:
    return np.concatenate([aligner.encode(ids[lo:lo + batch_size]) for lo in range(0, len(ids), batch_size)])


class AdversarialTrainer:
    """Alternates critic and generator updates with the aligner frozen.

    Real samples are the aligner's ``mu`` for clean sentences; they are
    computed once because the aligner never changes during this phase.
    All randomness comes from one PCG64 stream: each step draws a 64-bit
    seed from it, so the stream state fully determines the rest of training.
    """

    def __init__(self, model: ANT, corpus: TokenizedCorpus, schedule: TrainSchedule, seed: int = 0):
        if len(corpus) == 0:
            raise ValueError("cannot train on an empty corpus")
        self.model = model
        self.schedule = schedule
        self.corpus_ids = corpus.ids
        self.real_mu = encode_corpus_mu(model.aligner, corpus.ids)
        self.labels = corpus.labels if model.cfg.num_labels else None
        if model.cfg.num_labels and corpus.labels is None:
            raise ValueError("conditional model needs a labeled corpus")
        s = schedule
        self.d_params = model.discriminator.parameters()
        self.g_params = model.generator.parameters()
        self.opt_d = AdamW(self.d_params, lr=s.lr_disc, betas=(s.beta1, s.beta2), weight_decay=s.wd_disc)
        self.opt_g = Adam(self.g_params, lr=s.lr_gen, betas=(s.beta1, s.beta2))
        self.rng = np.random.Generator(np.random.PCG64(seed))
        self.seed = seed
        self.d_steps = 0
        self.g_steps = 0
        self.epoch = 0
        self.perm: np.ndarray | None = None
        self.pos = 0
        self.step_loss_d: list[float] = []
        self.step_penalty: list[float] = []
        self.step_loss_g: list[float] = []
        self.epoch_rows: list[tuple[int, float, float, float]] = []
        self.samples: dict[int, list[np.ndarray]] = {}
        self._acc = np.zeros(5, np.float32)  # sum L_D, n D steps, sum L_G, n G steps, sum penalty

    @property
    def n(self) -> int:
        return len(self.real_mu)

    def _labels(self, idx: np.ndarray):
        return None if self.labels is None else self.labels[idx]

    def _step_rng(self) -> np.random.Generator:
        return np.random.default_rng(int(self.rng.bit_generator.random_raw()))

    def d_step(self, idx: np.ndarray) -> tuple[float, float]:
        model, s = self.model, self.schedule
        gen, disc = model.generator, model.discriminator
        rng = self._step_rng()
        labels = self._labels(idx)
        dtype = gen.table.dtype
        real = Tensor(self.real_mu[idx], dtype=dtype)
        z = Tensor(sample_latent(rng, len(idx), model.cfg.d_z), dtype=dtype)
        with T.no_grad():
            fake = gen(z, gen.condition(labels) if labels is not None else None, rng).data
        c = disc.condition(labels) if labels is not None else None
        both = T.concat([real, Tensor(fake, dtype=dtype)], axis=0)
        c_both = T.concat([c, c], axis=0) if c is not None else None
        scores = disc(both, c_both, rng)
        b = len(idx)
        w_loss = wasserstein_critic_loss(scores[:b], scores[b:])
        pen = lipschitz_penalty(lambda x: disc(x, c, rng), real, fake, rng)
        loss = w_loss + pen * s.penalty_weight
        self.opt_d.step(T.grad(loss, self.d_params))
        self.d_steps += 1
        ld, lp = loss.item(), pen.item()
        self.step_loss_d.append(ld)
        self.step_penalty.append(lp)
        self._acc += (ld, 1, 0, 0, lp)
        return ld, lp

    def g_step(self, batch: int) -> float:
        model = self.model
        gen, disc = model.generator, model.discriminator
        rng = self._step_rng()
        idx = rng.integers(0, self.n, size=batch)
        labels = self._labels(idx)
        z = Tensor(sample_latent(rng, batch, model.cfg.d_z), dtype=gen.table.dtype)
        fake = gen(z, gen.condition(labels) if labels is not None else None, rng)
        with T.no_grad():
            c = disc.condition(labels) if labels is not None else None
        scores = disc(fake, c, rng)
        loss = -T.mean(scores)
        self.opt_g.step(T.grad(loss, self.g_params))
        self.g_steps += 1
        lg = loss.item()
        self.step_loss_g.append(lg)
        self._acc += (0, 0, lg, 1, 0)
        return lg

    def step(self) -> None:
        """One critic update, followed by a generator update when one is due."""
        s = self.schedule
        if self.perm is None:
            self.perm = np.random.default_rng(int(self.rng.bit_generator.random_raw())).permutation(self.n)
            self.pos = 0
        idx = self.perm[self.pos:self.pos + s.batch_size]
        self.pos += len(idx)
        self.d_step(idx)
        if self.d_steps % s.d_steps_per_g_step == 0:
            self.g_step(s.batch_size)
        if self.pos >= self.n:
            self._finish_epoch()

    def _finish_epoch(self) -> None:
        s = self.schedule
        if self._acc[3] == 0:
            # no generator update this epoch: log the current generator loss
            self._log_generator_loss(s.batch_size)
        acc = self._acc
        self.epoch_rows.append((self.epoch + 1, float(acc[0] / acc[1]), float(acc[2] / acc[3]), float(acc[4] / acc[1])))
        self.epoch += 1
        self.perm = None
        self.pos = 0
        self._acc = np.zeros(5, np.float32)
        if s.sample_every and self.epoch % s.sample_every == 0:
            k = self.model.cfg.num_labels
            labels = np.arange(s.sample_count) % k if k else None
            self.samples[self.epoch] = self.sample_ids(s.sample_count, seed=self.epoch, labels=labels)

    def _log_generator_loss(self, batch: int) -> None:
        model = self.model
        gen, disc = model.generator, model.discriminator
        rng = self._step_rng()
        idx = rng.integers(0, self.n, size=batch)
        labels = self._labels(idx)
        with T.no_grad():
            z = Tensor(sample_latent(rng, batch, model.cfg.d_z), dtype=gen.table.dtype)
            fake = gen(z, gen.condition(labels) if labels is not None else None, rng)
            c = disc.condition(labels) if labels is not None else None
            lg = -T.mean(disc(fake, c, rng)).item()
        self._acc += (0, 0, lg, 1, 0)

    def sample_ids(self, count: int, seed: int = 0, labels=None) -> np.ndarray:
        """Greedy samples from a private RNG; does not disturb the training stream."""
        rng = np.random.default_rng([self.seed, 7919, seed])
        gen = self.model.generator
        with T.no_grad():
            z = Tensor(sample_latent(rng, count, self.model.cfg.d_z), dtype=gen.table.dtype)
            c = gen.condition(labels) if labels is not None else None
            r = gen(z, c, rng)
        return decode_representations(gen, r)

    def run_epoch(self) -> None:
        start = self.epoch
        while self.epoch == start:
            self.step()

    def train(self, epochs: int | None = None, callback: Callable[["AdversarialTrainer"], None] | None = None) -> None:
        epochs = self.schedule.gan_epochs if epochs is None else epochs
        if epochs < 1:
            raise ValueError("adversarial training needs at least one epoch")
        for _ in range(epochs):
            self.run_epoch()
            if callback is not None:
                callback(self)

    def train_steps(self, n_steps: int) -> None:
        if n_steps < 1:
            raise ValueError("adversarial training needs at least one step")
        for _ in range(n_steps):
            self.step()

    # -- checkpoint state --------------------------------------------------------
    def rng_state(self) -> tuple[int, int, int, int]:
        st = self.rng.bit_generator.state
        if st["has_uint32"]:
            raise RuntimeError("training RNG holds a buffered 32-bit value; state is not 4x64-bit")
        mask = (1 << 64) - 1
        state, inc = st["state"]["state"], st["state"]["inc"]
        return (state >> 64) & mask, state & mask, (inc >> 64) & mask, inc & mask

    def set_rng_state(self, words: Sequence[int]) -> None:
        hi, lo, ihi, ilo = (int(w) for w in words)
        self.rng.bit_generator.state = {
            "bit_generator": "PCG64",
            "state": {"state": (hi << 64) | lo, "inc": (ihi << 64) | ilo},
            "has_uint32": 0,
            "uinteger": 0,
        }

    def state_arrays(self) -> dict[str, np.ndarray]:
        f = np.float64
        out = {
            "meta.d_steps": np.array([self.d_steps], f),
            "meta.g_steps": np.array([self.g_steps], f),
            "meta.epoch": np.array([self.epoch], f),
            "meta.pos": np.array([self.pos], f),
            "meta.perm": np.asarray(self.perm if self.perm is not None else [-1], f),
            "meta.acc": self._acc.astype(f),
            "trace.loss_d": np.asarray(self.step_loss_d, f),
            "trace.penalty": np.asarray(self.step_penalty, f),
            "trace.loss_g": np.asarray(self.step_loss_g, f),
            "trace.epochs": np.asarray(self.epoch_rows, f).reshape(-1, 4),
        }
        for prefix, opt in (("opt.disc.", self.opt_d), ("opt.gen.", self.opt_g)):
            for k, v in opt.state_arrays().items():
                out[prefix + k] = v
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.d_steps = int(arrays["meta.d_steps"][0])
        self.g_steps = int(arrays["meta.g_steps"][0])
        self.epoch = int(arrays["meta.epoch"][0])
        self.pos = int(arrays["meta.pos"][0])
        perm = arrays["meta.perm"].astype(np.int64)
        self.perm = None if perm.size == 1 and perm[0] == -1 else perm
        self._acc = arrays["meta.acc"].astype(np.float32).copy()
        self.step_loss_d = [float(x) for x in arrays["trace.loss_d"]]
        self.step_penalty = [float(x) for x in arrays["trace.penalty"]]
        self.step_loss_g = [float(x) for x in arrays["trace.loss_g"]]
        rows = arrays["trace.epochs"].reshape(-1, 4)
        self.epoch_rows = [(int(r[0]), float(r[1]), float(r[2]), float(r[3])) for r in rows]
        for prefix, opt in (("opt.disc.", self.opt_d), ("opt.gen.", self.opt_g)):
            opt.load_state_arrays({k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)})


# -- checkpoints ------------------------------------------------------------------

def model_tensors(model: ANT, parts: Sequence[str] = ("aligner", "generator", "discriminator")) -> dict[str, np.ndarray]:
    """Parameters of the named sub-modules, keyed ``<part>.<param>``."""
    out = {}
    for part in parts:
        for name, arr in getattr(model, part).state_dict().items():
            out[f"{part}.{name}"] = arr
    return out


def load_model_tensors(model: ANT, tensors: dict[str, np.ndarray], parts: Sequence[str]) -> None:
    for part in parts:
        prefix = part + "."
        getattr(model, part).load_state_dict({k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)})


def aligner_checkpoint(model: ANT) -> Checkpoint:
    return Checkpoint(model.cfg.digest(), model_tensors(model, ("aligner",)), phase="aligner")


def trainer_checkpoint(trainer: AdversarialTrainer) -> Checkpoint:
    """Full adversarial-phase state: all weights, optimizer moments, counters and RNG."""
    tensors = model_tensors(trainer.model)
    for k, v in trainer.state_arrays().items():
        tensors["trainer." + k] = v
    return Checkpoint(trainer.model.cfg.digest(), tensors, trainer.rng_state(), phase="gan")


def restore_trainer(trainer: AdversarialTrainer, ckpt: Checkpoint) -> None:
    if ckpt.config_hash != trainer.model.cfg.digest():
        raise CheckpointError("checkpoint was written for a different model configuration")
    if ckpt.phase != "gan":
        raise CheckpointError(f"expected a 'gan' checkpoint, found phase {ckpt.phase!r}")
    load_model_tensors(trainer.model, ckpt.tensors, ("aligner", "generator", "discriminator"))
    trainer.real_mu = encode_corpus_mu(trainer.model.aligner, trainer.corpus_ids)
    prefix = "trainer."
    trainer.load_state_arrays({k[len(prefix):]: v for k, v in ckpt.tensors.items() if k.startswith(prefix)})
    trainer.set_rng_state(ckpt.rng_state)
