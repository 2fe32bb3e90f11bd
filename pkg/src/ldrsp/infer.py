"""Projected gradient ascent on a discriminator's score.

Starting from the predictor's output, each step moves ``y`` along the gradient
of the discriminator with respect to ``y`` (optionally normalized to unit
length per example) and clips back into the unit box.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T


class InferenceError(FloatingPointError):
    pass


@dataclass
class InferenceConfig:
    eta: float = 0.02
    steps: int = 10
    normalized: bool = True
    bounds: tuple[float, float] = (0.0, 1.0)
    grad_norm_floor: float = 1e-12

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if self.steps < 0:
            raise ValueError(f"steps must be non-negative, got {self.steps}")
        lo, hi = self.bounds
        if not lo < hi:
            raise ValueError(f"invalid bounds {self.bounds}")


SEGMENTATION_DEFAULTS = dict(eta=4.0, steps=30, normalized=True)


@dataclass
class Trajectory:
    """Iterates ``y^(0..T)`` and their per-example scores, shape (steps+1, N)."""

    ys: list[np.ndarray] = field(default_factory=list)
    scores: list[np.ndarray] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.ys)

    def mean_scores(self) -> np.ndarray:
        return np.array([float(np.mean(s)) for s in self.scores])


def project(y, bounds=(0.0, 1.0)) -> np.ndarray:
    y = np.asarray(y)
    if np.isnan(y).any():
        raise ValueError("project: NaN entries")
    return np.clip(y, bounds[0], bounds[1])


def score_and_grad(D, x, y) -> tuple[np.ndarray, np.ndarray]:
    """Per-example scores and the gradient of their sum with respect to ``y``.

    Score maps are averaged over their spatial axes first.
    """
    yt = T.Tensor(y)
    with T.Tape() as tape:
        tape.watch(yt)
        out = D(x, yt)
        if out.ndim > 1:
            out = T.mean(out, axis=tuple(range(1, out.ndim)))
        total = T.sum(out)
    (g,) = tape.gradient(total, [yt])
    return out.data, g


def _step_direction(g: np.ndarray, cfg: InferenceConfig) -> np.ndarray:
    if not cfg.normalized:
        return g
    axes = tuple(range(1, g.ndim))
    norms = np.sqrt((g * g).sum(axis=axes, keepdims=True))
    # no direction where the gradient vanishes
    safe = np.where(norms < cfg.grad_norm_floor, 1.0, norms)
    return np.where(norms < cfg.grad_norm_floor, 0.0, g / safe)


def refine(x, y0, D, cfg: InferenceConfig) -> tuple[np.ndarray, Trajectory]:
    """Refine a batch ``y0`` (leading batch axis) by ``cfg.steps`` projected ascent steps."""
    y = np.array(y0, dtype=T.get_default_dtype())
    lo, hi = cfg.bounds
    if np.isnan(y).any() or y.min(initial=lo) < lo or y.max(initial=hi) > hi:
        raise ValueError("refine: y0 must be feasible")
    traj = Trajectory()
    for t in range(cfg.steps + 1):
        scores, g = score_and_grad(D, x, y)
        traj.ys.append(y)
        traj.scores.append(scores)
        if t == cfg.steps:
            break
        if not np.isfinite(g).all():
            bad = np.argwhere(~np.isfinite(g).reshape(len(g), -1).all(axis=1)).ravel()
            raise InferenceError(f"refine: non-finite gradient at step {t} for examples {bad.tolist()}")
        y = project(y + cfg.eta * _step_direction(g, cfg), cfg.bounds)
    return y, traj


# ---------------------------------------------------------------------------
# multi-crop segmentation

_OFFSET_TABLE = {(8, 6): (0, 1, 3, 5, 7, 8)}


def crop_offsets(extent: int, crop: int, per_axis: int) -> tuple[int, ...]:
    """Crop start positions along one axis, always including both ends."""
    if crop > extent:
        raise ValueError(f"crop {crop} larger than image extent {extent}")
    span = extent - crop
    if (span, per_axis) in _OFFSET_TABLE:
        return _OFFSET_TABLE[(span, per_axis)]
    return tuple(int(v) for v in np.unique(np.round(np.linspace(0, span, per_axis)).astype(int)))


def crop_positions(h: int, w: int, crop: int, n_offsets: int) -> list[tuple[int, int]]:
    per_axis = int(round(np.sqrt(n_offsets)))
    if per_axis * per_axis != n_offsets:
        raise ValueError(f"n_offsets must be a perfect square, got {n_offsets}")
    return [(r, c) for r in crop_offsets(h, crop, per_axis) for c in crop_offsets(w, crop, per_axis)]


def refine_multicrop(images, G, D, cfg: InferenceConfig, crop: int = 24, n_offsets: int = 36,
                     return_raw: bool = False):
    """Segment full images by refining overlapping crops and averaging by coverage.

    ``images`` is (H, W, 3) or (N, H, W, 3). Returns the averaged refined masks
    (and, with ``return_raw``, the averaged unrefined predictions as well).
    """
    images = np.asarray(images)
    single = images.ndim == 3
    if single:
        images = images[None]
    n, h, w, _ = images.shape
    if crop > h or crop > w:
        raise ValueError(f"crop {crop} larger than image {h}x{w}")
    positions = crop_positions(h, w, crop, n_offsets)
    crops = np.stack([images[:, r:r + crop, c:c + crop] for r, c in positions], axis=1)
    crops = crops.reshape((-1, crop, crop, images.shape[-1]))
    y0 = G.predict(crops)
    refined, _ = refine(crops, y0, D, cfg)
    classes = y0.shape[-1]

    def paste(parts):
        parts = parts.reshape((n, len(positions), crop, crop, classes))
        acc = np.zeros((n, h, w, classes))
        cover = np.zeros((h, w))
        for k, (r, c) in enumerate(positions):
            acc[:, r:r + crop, c:c + crop] += parts[:, k]
            cover[r:r + crop, c:c + crop] += 1.0
        return acc / cover[None, :, :, None]

    out = paste(refined)
    raw = paste(y0) if return_raw else None
    if single:
        out = out[0]
        raw = raw[0] if raw is not None else None
    return (out, raw) if return_raw else out


def coverage_counts(h: int, w: int, crop: int, n_offsets: int) -> np.ndarray:
    cover = np.zeros((h, w), dtype=int)
    for r, c in crop_positions(h, w, crop, n_offsets):
        cover[r:r + crop, c:c + crop] += 1
    return cover
