"""``ant`` command-line entry point.

Exit codes: 0 success, 1 theorem check failed, 2 usage or config error,
3 missing or incompatible saved state.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import metrics, plotting, theory
from . import tensor as T
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, load_config
from .data import CorpusError, Vocab, build_vocab, encode_corpus, read_lines, tokenize, write_lines
from .model import ANT, GenInput, Tensor, generate, interpolate, sample_latent
from .training import (
    AdversarialTrainer,
    aligner_checkpoint,
    load_model_tensors,
    pretrain_aligner,
    restore_trainer,
    trainer_checkpoint,
)

log = logging.getLogger("antgen")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_STATE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class StateError(Exception):
    pass


# -- helpers ---------------------------------------------------------------------

def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def _csv_text(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _write_text(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out_dir is not None:
        cfg.out_dir = args.out_dir
    return cfg


def _read_sentences(path: str | None, what: str) -> list[list[str]]:
    if path is None:
        raise UsageError(f"no {what} given")
    return tokenize(read_lines(path))


def _labels(cfg: RunConfig, count: int) -> list[int] | None:
    if cfg.labels is None:
        return None
    try:
        labels = [int(x) for x in read_lines(cfg.labels)]
    except ValueError as exc:
        raise CorpusError(f"{cfg.labels}: labels must be integers") from exc
    if len(labels) != count:
        raise CorpusError(f"{cfg.labels}: {len(labels)} labels for {count} sentences")
    return labels


def _vocab(cfg: RunConfig) -> Vocab:
    path = cfg.out_path / "vocab.txt"
    if not path.exists():
        raise StateError(f"{path} not found; run train-aligner first")
    return Vocab.load(path)


def _load_model(cfg: RunConfig, vocab: Vocab, phase: str) -> ANT:
    """Model restored from ``aligner.ckpt`` or ``gan.ckpt`` after a config-hash check."""
    mcfg = cfg.model_config(len(vocab))
    name = "aligner.ckpt" if phase == "aligner" else "gan.ckpt"
    path = cfg.out_path / name
    if not path.exists():
        raise StateError(f"{path} not found")
    ckpt = load_checkpoint(path, expected_hash=mcfg.digest())
    if ckpt.phase != phase:
        raise StateError(f"{path} holds phase {ckpt.phase!r}, expected {phase!r}")
    model = ANT(mcfg, cfg.seed)
    parts = ("aligner",) if phase == "aligner" else ("aligner", "generator", "discriminator")
    load_model_tensors(model, ckpt.tensors, parts)
    return model


def _check_label(model: ANT, label: int | None) -> None:
    if label is None:
        return
    if not model.cfg.num_labels:
        raise UsageError("--label needs a conditional model (num_labels > 0)")
    if not 0 <= label < model.cfg.num_labels:
        raise UsageError(f"--label must lie in [0, {model.cfg.num_labels})")


def _decode_all(vocab: Vocab, ids: np.ndarray) -> list[str]:
    return [" ".join(vocab.decode(row)) for row in ids]


# -- commands --------------------------------------------------------------------

def cmd_train_aligner(args) -> int:
    cfg = _run_config(args)
    sentences = _read_sentences(cfg.corpus, "corpus path (config key 'corpus')")
    vocab = build_vocab(sentences, cfg.min_freq)
    mcfg = cfg.model_config(len(vocab))
    corpus = encode_corpus(sentences, vocab, mcfg.max_len, _labels(cfg, len(sentences)))
    schedule = cfg.train_schedule()
    if args.epochs is not None:
        schedule.aligner_epochs = args.epochs
    model = ANT(mcfg, cfg.seed)
    trace = pretrain_aligner(model.aligner, corpus, schedule, seed=cfg.seed)
    out = cfg.out_path
    out.mkdir(parents=True, exist_ok=True)
    vocab.save(out / "vocab.txt")
    save_checkpoint(out / "aligner.ckpt", aligner_checkpoint(model))
    rows = [(i + 1, loss, best) for i, (loss, best) in enumerate(zip(trace.losses, trace.smoothed))]
    _write_text(out / "aligner_loss.csv", _csv_text(["epoch", "loss", "smoothed"], rows))
    plotting.plot_aligner_loss(trace.losses, trace.smoothed, out / "aligner_loss.png")
    print(f"aligner trained for {len(trace.losses)} epochs, final loss {trace.losses[-1]:.4f}")
    return EXIT_OK


def cmd_train_gan(args) -> int:
    cfg = _run_config(args)
    vocab = _vocab(cfg)
    model = _load_model(cfg, vocab, "aligner")
    sentences = _read_sentences(cfg.corpus, "corpus path (config key 'corpus')")
    corpus = encode_corpus(sentences, vocab, model.cfg.max_len, _labels(cfg, len(sentences)))
    schedule = cfg.train_schedule()
    target = schedule.gan_epochs if args.epochs is None else args.epochs
    trainer = AdversarialTrainer(model, corpus, schedule, seed=cfg.seed)
    out = cfg.out_path
    ckpt_path = out / "gan.ckpt"
    if args.resume:
        if not ckpt_path.exists():
            raise StateError(f"--resume given but {ckpt_path} does not exist")
        restore_trainer(trainer, load_checkpoint(ckpt_path))
        log.info("resumed at epoch %d", trainer.epoch)
    if trainer.epoch > target:
        raise UsageError(f"checkpoint is already at epoch {trainer.epoch}, beyond the requested {target}")
    samples_dir = out / "samples"

    def on_epoch(tr: AdversarialTrainer) -> None:
        if schedule.sample_every and tr.epoch % schedule.sample_every == 0:
            samples_dir.mkdir(exist_ok=True)
            write_lines(samples_dir / f"epoch_{tr.epoch:05d}.txt", _decode_all(vocab, tr.samples[tr.epoch]))
            save_checkpoint(ckpt_path, trainer_checkpoint(tr))

    if target > trainer.epoch:
        trainer.train(target - trainer.epoch, on_epoch)
    save_checkpoint(ckpt_path, trainer_checkpoint(trainer))
    rows = trainer.epoch_rows
    _write_text(out / "gan_trace.csv", _csv_text(["epoch", "loss_d", "loss_g", "penalty"], rows))
    if rows:
        plotting.plot_gan_trace(rows, out / "gan_trace.png")
    print(f"adversarial training at epoch {trainer.epoch}, {trainer.d_steps} critic / {trainer.g_steps} generator steps")
    return EXIT_OK


def cmd_sample(args) -> int:
    cfg = _run_config(args)
    if args.temperature is not None and not args.temperature > 0:
        raise UsageError(f"--temperature must be positive, got {args.temperature}")
    if args.count < 1:
        raise UsageError("--count must be at least 1")
    vocab = _vocab(cfg)
    model = _load_model(cfg, vocab, "gan")
    _check_label(model, args.label)
    mode = args.mode or ("sample" if args.temperature is not None else "greedy")
    temperature = 1.0 if args.temperature is None else args.temperature
    rng = np.random.default_rng(cfg.seed)
    ids = generate(model, args.count, rng, labels=args.label, temperature=temperature, mode=mode)
    _emit(args.output, "".join(line + "\n" for line in _decode_all(vocab, ids)))
    return EXIT_OK


def cmd_interpolate(args) -> int:
    cfg = _run_config(args)
    if args.steps < 2:
        raise UsageError("--steps must be at least 2")
    vocab = _vocab(cfg)
    model = _load_model(cfg, vocab, "gan")
    rng = np.random.default_rng(cfg.seed)
    d_z = model.cfg.d_z
    gen = model.generator
    if args.vary == "z":
        _check_label(model, args.label)
        za, zb = sample_latent(rng, 1, d_z)[0], sample_latent(rng, 1, d_z)[0]
        c = None
        if args.label is not None:
            with T.no_grad():
                c = gen.condition(np.array([args.label])).data[0]
        a, b = GenInput(za, c), GenInput(zb, c)
    else:
        if not model.cfg.num_labels:
            raise UsageError("--vary c needs a conditional model (num_labels > 0)")
        la = 0 if args.label is None else args.label
        lb = (la + 1) % model.cfg.num_labels if args.label_b is None else args.label_b
        _check_label(model, la)
        _check_label(model, lb)
        z = sample_latent(rng, 1, d_z)[0]
        with T.no_grad():
            ca, cb = gen.condition(np.array([la, lb])).data
        a, b = GenInput(z, ca), GenInput(z, cb)
    ids = interpolate(model, a, b, args.steps, seed=cfg.seed)
    _emit(args.output, "".join(line + "\n" for line in _decode_all(vocab, ids)))
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _run_config(args)
    metric = args.metric
    if metric == "bleu":
        a = _read_sentences(args.a, "--a file")
        b = _read_sentences(args.b, "--b file")
        scores = metrics.bleu_family(a, b)
        text = _csv_text(["metric", "value"], [[k, scores[k]] for k in ("bleu", "self_bleu", "inverse_bleu")])
    elif metric in ("fed", "lcr"):
        if metric == "lcr" and args.tau is None:
            raise UsageError("--metric lcr needs --tau")
        a = _read_sentences(args.a, "--a file")
        b = _read_sentences(args.b, "--b file")
        vocab = _vocab(cfg)
        model = _load_model(cfg, vocab, "aligner")
        embed = metrics.AlignerEmbedder(model.aligner)
        n = model.cfg.max_len
        ea = embed(encode_corpus(a, vocab, n).ids)
        eb = embed(encode_corpus(b, vocab, n).ids)
        if args.cache is not None:
            metrics.save_embeddings(args.cache, {"a": ea, "b": eb}, model.cfg.digest())
        if metric == "fed":
            text = _csv_text(["metric", "value"], [["fed", metrics.fed(ea, eb)]])
        else:
            text = _csv_text(["metric", "value"], [["lcr", metrics.lcr(ea, eb, args.tau)]])
    elif metric == "sweep":
        test = _read_sentences(args.b, "--b file (test sentences)")
        vocab = _vocab(cfg)
        model = _load_model(cfg, vocab, "gan")

        def sampler(count: int, temperature: float, seed: int) -> list[list[str]]:
            ids = generate(model, count, np.random.default_rng(seed), temperature=temperature, mode="sample")
            return [vocab.decode(row) for row in ids]

        rows = metrics.temperature_sweep(sampler, test, cfg.temperatures, seed=cfg.seed)
        text = _csv_text(["temp", "neg_bleu", "self_bleu"], rows)
        cfg.out_path.mkdir(parents=True, exist_ok=True)
        plotting.plot_temperature_sweep(rows, cfg.out_path / "temperature_sweep.png")
    elif metric == "pasm":
        vocab = _vocab(cfg)
        model = _load_model(cfg, vocab, "gan")
        sim = positional_cosine(model, cfg.seed)
        text = _csv_text([f"p{j}" for j in range(sim.shape[1])], sim.tolist())
        cfg.out_path.mkdir(parents=True, exist_ok=True)
        plotting.plot_position_cosine(sim, cfg.out_path / "pasm_cosine.png")
    else:  # argparse restricts the choices
        raise UsageError(f"unknown metric {metric!r}")
    _emit(args.output, text)
    return EXIT_OK


def positional_cosine(model: ANT, seed: int = 0) -> np.ndarray:
    """Cosine similarity between positions of the modulated generator inputs, for one latent."""
    gen = model.generator
    z = Tensor(sample_latent(np.random.default_rng(seed), 1, model.cfg.d_z), dtype=gen.table.dtype)
    with T.no_grad():
        x = gen.modulated_inputs(z).data[0].astype(np.float64)
    return metrics.cosine_matrix(x, x)


def cmd_verify_theorem(args) -> int:
    if args.l_max < 2 or args.n_max < 2:
        raise UsageError("--l-max and --n-max must be at least 2")
    spans = range(2, args.n_max + 1)
    rows = theory.theorem_grid(range(2, args.l_max + 1), spans, spans)
    bad = theory.monotonicity_violations(rows)
    table = [(r.l, r.n, r.m, r.c_a, r.c_b, r.gap, r.predicted, int(r.passed)) for r in rows]
    text = _csv_text(["l", "n", "m", "C_A", "C_B", "gap", "predicted", "pass"], table)
    if args.out_dir is not None:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_text(out / "theorem.csv", text)
        plotting.plot_theorem_grid(rows, out / "theorem.png")
    _emit(args.output, text)
    for line in bad:
        print(f"monotonicity violated: {line}", file=sys.stderr)
    ok = all(r.passed for r in rows) and not bad
    return EXIT_OK if ok else EXIT_FAIL


def _emit(path: str | None, text: str) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        _write_text(Path(path), text)


# -- parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat YAML run configuration")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--out-dir", help="overrides the config output directory")
    common.add_argument("--output", help="write the command's text output here instead of stdout")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="ant", description="Adversarial non-autoregressive text generation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-aligner", parents=[common], help="pretrain the masked VAE aligner")
    p.add_argument("--epochs", type=int, help="overrides aligner_epochs")
    p.set_defaults(func=cmd_train_aligner)

    p = sub.add_parser("train-gan", parents=[common], help="adversarial training with the aligner frozen")
    p.add_argument("--epochs", type=int, help="total epoch target; overrides gan_epochs")
    p.add_argument("--resume", action="store_true", help="continue from gan.ckpt in the output directory")
    p.set_defaults(func=cmd_train_gan)

    p = sub.add_parser("sample", parents=[common], help="decode sentences from the trained generator")
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--temperature", type=float, help="softmax temperature; implies --mode sample")
    p.add_argument("--mode", choices=("greedy", "sample"))
    p.add_argument("--label", type=int)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("interpolate", parents=[common], help="decode along a line between two generator inputs")
    p.add_argument("--steps", type=int, default=5)
    p.add_argument("--vary", choices=("z", "c"), default="z", help="which input changes between the endpoints")
    p.add_argument("--label", type=int, help="fixed label (vary z) or first endpoint label (vary c)")
    p.add_argument("--label-b", type=int, help="second endpoint label (vary c)")
    p.set_defaults(func=cmd_interpolate)

    p = sub.add_parser("eval", parents=[common], help="FED, LCR, BLEU family, temperature sweep or PASM cosine")
    p.add_argument("--metric", choices=("fed", "lcr", "bleu", "sweep", "pasm"), required=True)
    p.add_argument("--a", help="sentence file; generated side")
    p.add_argument("--b", help="sentence file; reference or test side")
    p.add_argument("--tau", type=float, help="LCR threshold on summed cosine similarity")
    p.add_argument("--cache", help="also store the fed/lcr embeddings in this archive")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify-theorem", parents=[common], help="enumerate the total-correlation gap grid")
    p.add_argument("--l-max", type=int, default=6)
    p.add_argument("--n-max", type=int, default=8)
    p.set_defaults(func=cmd_verify_theorem)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, CorpusError) as exc:
        print(f"ant: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (StateError, CheckpointError) as exc:
        print(f"ant: error: {exc}", file=sys.stderr)
        return EXIT_STATE
    except ValueError as exc:
        print(f"ant: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
