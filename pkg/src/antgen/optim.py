"""Adam and AdamW with bias correction."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .tensor import ShapeError, Tensor


class Adam:
    """Adam with optional decoupled weight decay (AdamW when ``weight_decay > 0``).

    ``kind`` is recorded for checkpoints and reporting; the update rule only
    differs through ``weight_decay``, which is applied as ``lr * wd * theta``
    independently of the gradient moments.
    """

    kind = "adam"

    def __init__(
        self,
        params: Sequence[Tensor],
        lr: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.step_count = 0

    def step(self, grads: Sequence[Tensor | np.ndarray]) -> None:
        """Apply one update given gradients aligned with ``self.params``."""
        if len(grads) != len(self.params):
            raise ShapeError(f"expected {len(self.params)} gradients, got {len(grads)}")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for i, (p, g) in enumerate(zip(self.params, grads)):
            g = g.data if isinstance(g, Tensor) else np.asarray(g)
            if g.shape != p.shape:
                raise ShapeError(f"gradient shape {g.shape} does not match parameter shape {p.shape}")
            g = g.astype(p.dtype, copy=False)
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[i] / bc1
            v_hat = self.v[i] / bc2
            update = self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            theta = p.data
            if self.weight_decay:
                theta = theta - self.lr * self.weight_decay * theta
            p.data = (theta - update).astype(p.dtype, copy=False)

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Moments and step counter as flat named arrays."""
        out = {"step": np.array([self.step_count], dtype=np.float32)}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"m.{i}"] = m
            out[f"v.{i}"] = v
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.step_count = int(arrays["step"].reshape(-1)[0])
        for i, p in enumerate(self.params):
            m, v = arrays[f"m.{i}"], arrays[f"v.{i}"]
            if m.shape != p.shape or v.shape != p.shape:
                raise ShapeError(f"optimizer moment {i} has shape {m.shape}, parameter has {p.shape}")
            self.m[i] = m.astype(p.dtype).copy()
            self.v[i] = v.astype(p.dtype).copy()


class AdamW(Adam):
    kind = "adamw"

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=1e-2):
        super().__init__(params, lr=lr, betas=betas, eps=eps, weight_decay=weight_decay)
