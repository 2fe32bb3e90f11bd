"""Extra discriminator training tuples: inference samples and adversarial samples."""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .infer import InferenceConfig, project, refine
from .oracle import OracleKind, batch_oracle

log = logging.getLogger(__name__)


class EmptyBufferError(LookupError):
    """Raised when sampling from an empty buffer; the trainer skips the buffer term."""


@dataclass
class ValueTuple:
    x: np.ndarray
    y: np.ndarray
    v_star: np.ndarray | float
    y_star: np.ndarray

    def recompute(self, kind: OracleKind | str):
        v = batch_oracle(kind, self.y, self.y_star)
        return float(v) if np.ndim(v) == 0 else v


class SampleBuffer:
    """Bounded FIFO of :class:`ValueTuple`; the oldest tuple is evicted first."""

    def __init__(self, capacity: int):
        if capacity <= 0:
            raise ValueError(f"capacity must be positive, got {capacity}")
        self.capacity = capacity
        self._items: deque[ValueTuple] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self):
        return iter(self._items)

    def push(self, items) -> None:
        if isinstance(items, ValueTuple):
            items = [items]
        self._items.extend(items)

    def sample(self, n: int, rng: np.random.Generator) -> list[ValueTuple]:
        if not self._items:
            raise EmptyBufferError("sample buffer is empty")
        idx = rng.integers(0, len(self._items), size=n)
        return [self._items[i] for i in idx]


def buffer_push(buffer: SampleBuffer, items) -> None:
    buffer.push(items)


def buffer_sample(buffer: SampleBuffer, n: int, rng: np.random.Generator) -> list[ValueTuple]:
    return buffer.sample(n, rng)


def stack_tuples(items: list[ValueTuple]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return (np.stack([t.x for t in items]), np.stack([t.y for t in items]),
            np.stack([np.asarray(t.v_star, dtype=np.float64) for t in items]))


def _tuples(x, ys, y_star, kind) -> list[ValueTuple]:
    v = batch_oracle(kind, ys, y_star)
    return [ValueTuple(x[i], ys[i], float(v[i]) if v.ndim == 1 else v[i], y_star[i]) for i in range(len(x))]


def gen_inference_samples(x, y_star, G_snapshot, D_snapshot, cfg: InferenceConfig,
                          kind: OracleKind | str, rng: np.random.Generator) -> list[ValueTuple]:
    """Run inference from the predictor's outputs and keep one random iterate per example."""
    y0 = G_snapshot.predict(x)
    _, traj = refine(x, y0, D_snapshot, cfg)
    picks = rng.integers(0, len(traj), size=len(x))
    ys = np.stack([traj.ys[t][i] for i, t in enumerate(picks)])
    return _tuples(x, ys, y_star, kind)


def _adversarial_grad(D, x, y, v_star) -> np.ndarray:
    yt = T.Tensor(y)
    with T.Tape() as tape:
        tape.watch(yt)
        out = D(x, yt)
        err = T.mul_elem(T.square(T.sub(out, v_star)), 0.5)
        if err.ndim > 1:
            err = T.mean(err, axis=tuple(range(1, err.ndim)))
        total = T.sum(err)
    (g,) = tape.gradient(total, [yt])
    return g


def gen_adversarial_samples(x, y_star, D_snapshot, kind: OracleKind | str, ascent_steps: int = 1,
                            ascent_lr: float = 0.5) -> list[ValueTuple]:
    """Push ``y`` away from the discriminator's fit, starting from the ground truth.

    Each step ascends ``0.5 * (D(x, y) - v*(y))^2`` in ``y`` with ``v*`` held
    fixed at its value for the current ``y``, then clips to the unit box.
    Examples whose gradient turns non-finite are dropped.
    """
    y = np.array(y_star, dtype=T.get_default_dtype())
    keep = np.ones(len(y), dtype=bool)
    for _ in range(ascent_steps):
        v = batch_oracle(kind, y, y_star)
        g = _adversarial_grad(D_snapshot, x, y, v)
        finite = np.isfinite(g).reshape(len(g), -1).all(axis=1)
        if not finite.all():
            log.warning("dropping %d adversarial samples with non-finite gradients", int((~finite).sum()))
            keep &= finite
            g = np.where(np.isfinite(g), g, 0.0)
        y = project(y + ascent_lr * g)
    x, y, y_star = np.asarray(x)[keep], y[keep], np.asarray(y_star)[keep]
    return _tuples(x, y, y_star, kind)
