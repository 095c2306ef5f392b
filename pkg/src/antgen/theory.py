"""Exact conditional total correlation on candidate-set datasets.

A dataset pairs each input with a set of equiprobable candidate outputs of
length ``l``. No symbol is shared between any two candidates (of any input),
so each output identifies its input. The conditional total correlation is

    C = sum_i H(y_i | X) - H(Y | X)

computed here by enumeration, with probabilities kept as exact fractions
until the final logarithm. Natural log throughout.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable

import numpy as np


@dataclass(frozen=True)
class Assumption1Dataset:
    """Candidate sets keyed by input index; every candidate has probability ``1/n``."""

    l: int
    n: int
    candidates: tuple[tuple[tuple[int, ...], ...], ...]  # [input][candidate][position]

    @property
    def num_inputs(self) -> int:
        return len(self.candidates)

    def symbols(self) -> list[int]:
        return [s for cands in self.candidates for cand in cands for s in cand]

    def check(self) -> None:
        """Raise ``ValueError`` if a symbol repeats or a candidate has the wrong length."""
        syms = self.symbols()
        if len(syms) != len(set(syms)):
            raise ValueError("candidate symbols must all be distinct")
        for cands in self.candidates:
            if len(cands) != self.n or any(len(c) != self.l for c in cands):
                raise ValueError("every input needs n candidates of length l")

    def input_of(self, y: tuple[int, ...]) -> int:
        """Index of the unique input that can produce ``y``."""
        hits = [x for x, cands in enumerate(self.candidates) if y in cands]
        if len(hits) != 1:
            raise KeyError(f"{y} is produced by {len(hits)} inputs")
        return hits[0]


def build_assumption1_dataset(l: int, n: int, seed: int = 0, num_inputs: int = 1) -> Assumption1Dataset:
    """``num_inputs`` inputs, each with ``n`` candidates over ``l * n`` fresh symbols.

    The seed only permutes which symbol lands where; entropies do not depend on it.
    """
    if l < 1 or n < 1 or num_inputs < 1:
        raise ValueError(f"need l, n, num_inputs >= 1, got l={l}, n={n}, num_inputs={num_inputs}")
    total = num_inputs * n * l
    perm = np.random.default_rng(seed).permutation(total)
    grid = perm.reshape(num_inputs, n, l)
    cands = tuple(tuple(tuple(int(s) for s in cand) for cand in inp) for inp in grid)
    ds = Assumption1Dataset(l, n, cands)
    ds.check()
    return ds


def entropy(probs: Iterable[Fraction]) -> float:
    """Shannon entropy (nats) of exact probabilities."""
    probs = list(probs)
    if sum(probs) != 1:
        raise ValueError("probabilities must sum to exactly 1")
    return -sum(float(p) * math.log(p.numerator / p.denominator) for p in probs if p > 0)


@dataclass(frozen=True)
class CtcReport:
    position_entropies: tuple[float, ...]  # H(y_i | X)
    joint_entropy: float  # H(Y | X)
    value: float  # C
    predicted: float  # (l - 1) * ln n
    abs_gap: float


def conditional_total_correlation(ds: Assumption1Dataset) -> CtcReport:
    """Enumerate ``C`` for a uniform-input, uniform-candidate dataset."""
    p_x = Fraction(1, ds.num_inputs)
    pos_h = [0.0] * ds.l
    joint_h = 0.0
    for cands in ds.candidates:
        p_y = Fraction(1, len(cands))
        joint_h += float(p_x) * entropy([p_y] * len(cands))
        for i in range(ds.l):
            marginal = Counter()
            for cand in cands:
                marginal[cand[i]] += p_y
            pos_h[i] += float(p_x) * entropy(marginal.values())
    value = sum(pos_h) - joint_h
    predicted = (ds.l - 1) * math.log(ds.n)
    return CtcReport(tuple(pos_h), joint_h, value, predicted, abs(value - predicted))


@dataclass(frozen=True)
class TheoremCheck:
    l: int
    n: int
    m: int
    c_a: float
    c_b: float
    gap: float
    predicted: float
    passed: bool


def verify_theorem1(l: int, n: int, m: int, tol: float = 1e-9, seed: int = 0) -> TheoremCheck:
    """Compare ``C_A - C_B`` by enumeration against ``(l - 1) * ln(n / m)``."""
    c_a = conditional_total_correlation(build_assumption1_dataset(l, n, seed)).value
    c_b = conditional_total_correlation(build_assumption1_dataset(l, m, seed + 1)).value
    gap = c_a - c_b
    predicted = (l - 1) * math.log(n / m)
    return TheoremCheck(l, n, m, c_a, c_b, gap, predicted, abs(gap - predicted) <= tol)


def theorem_grid(ls: Iterable[int], ns: Iterable[int], ms: Iterable[int], tol: float = 1e-9) -> list[TheoremCheck]:
    ns, ms = list(ns), list(ms)
    return [verify_theorem1(l, n, m, tol) for l in ls for n in ns for m in ms]


def monotonicity_violations(rows: Iterable[TheoremCheck]) -> list[str]:
    """Cases where the gap fails to increase strictly in ``l`` (n > m) or in ``n`` (l >= 2)."""
    table = {(r.l, r.n, r.m): r.gap for r in rows}
    bad = []
    for (l, n, m), gap in table.items():
        up_l = table.get((l + 1, n, m))
        if n > m and up_l is not None and not up_l > gap:
            bad.append(f"l={l}->{l + 1} at n={n}, m={m}: {gap} -> {up_l}")
        up_n = table.get((l, n + 1, m))
        if l >= 2 and up_n is not None and not up_n > gap:
            bad.append(f"n={n}->{n + 1} at l={l}, m={m}: {gap} -> {up_n}")
    return bad
