"""Alternating training of predictor and discriminator, plus baseline adversarial losses.

The discriminator regresses oracle values of predicted outputs, ground truth
(target 1) and buffered extra samples. The predictor minimizes its task loss
plus a pull of its outputs toward discriminator score 1.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import tensor as T
from .data import augment_batch, write_tensor_file
from .infer import InferenceConfig, refine, refine_multicrop
from .models import (
    build_fcn_segmenter,
    build_mlp_classifier,
    build_mlp_discriminator,
    build_patch_discriminator,
    model_from_params,
)
from .nn import Adam, load_params, save_params
from .oracle import OracleKind, batch_oracle, cross_entropy, f1_scores, mean_iou, tune_threshold
from .sampling import EmptyBufferError, SampleBuffer, gen_adversarial_samples, gen_inference_samples, stack_tuples

log = logging.getLogger(__name__)

VARIANTS = ("LDRSP", "GAN", "LSGAN", "EBGAN")
GAN_EPS = 1e-7
METRIC_FIELDS = ("epoch", "d_loss", "g_loss", "task_loss", "raw_score", "refined_score", "delta")


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    task: str = "multilabel"
    variant: str = "LDRSP"
    oracle: str = "f1"
    epochs: int = 100
    batch_size: int = 32
    lr_g: float = 1e-3
    lr_d: float = 1e-3
    adversarial_weight: float = 1.0
    seed: int = 0
    patience: int = 20
    sample_ratio: float = 0.5
    buffer_capacity: int = 0
    adv_steps: int = 1
    adv_lr: float = 0.5
    sample_steps: int = -1
    ebgan_margin: float = 1.0
    hidden_g: int = 150
    hidden_d: tuple[int, ...] = (250,)
    fcn_widths: tuple[int, ...] = (64, 128, 128)
    crop: int = 24
    n_crops: int = 36

    def __post_init__(self):
        self.variant = self.variant.upper()
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown loss variant {self.variant!r}; expected one of {VARIANTS}")
        if self.task not in ("multilabel", "segmentation"):
            raise ValueError(f"unknown task {self.task!r}")
        OracleKind(self.oracle)
        if self.epochs <= 0 or self.batch_size <= 0:
            raise ValueError("epochs and batch_size must be positive")
        if self.adversarial_weight < 0:
            raise ValueError("adversarial_weight must be non-negative")
        if not 0.0 <= self.sample_ratio <= 1.0:
            raise ValueError("sample_ratio must be in [0, 1]")

    @property
    def capacity(self) -> int:
        return self.buffer_capacity or 10 * self.batch_size


@dataclass
class MetricsRecord:
    epoch: int
    d_loss: float
    g_loss: float
    task_loss: float
    raw_score: float
    refined_score: float
    delta: float = field(init=False)

    def __post_init__(self):
        self.delta = self.refined_score - self.raw_score

    def row(self) -> list[str]:
        return [str(self.epoch)] + [repr(float(getattr(self, k))) for k in METRIC_FIELDS[1:]]


class MetricsWriter:
    """Append-only CSV stream of :class:`MetricsRecord` rows."""

    def __init__(self, path):
        self.path = Path(path)
        with open(self.path, "w", newline="") as fh:
            csv.writer(fh).writerow(METRIC_FIELDS)

    def write(self, rec: MetricsRecord) -> None:
        with open(self.path, "a", newline="") as fh:
            csv.writer(fh).writerow(rec.row())


# ---------------------------------------------------------------------------
# losses


def regression_loss(scores, targets, weights=None):
    """Sum over rows of ``weight * 0.5 * mean((score - target)^2)``.

    Score maps are averaged over their spatial axes within each row. With unit
    weights and one row this is the squared-error term of the objective.
    """
    scores = T.as_tensor(scores)
    err = T.mul_elem(T.square(T.sub(scores, targets)), 0.5)
    if err.ndim > 1:
        err = T.mean(err, axis=tuple(range(1, err.ndim)))
    if weights is None:
        weights = np.ones(err.shape[0])
    return T.sum(T.mul_elem(err, weights))


def _mean(t):
    return T.mean(t)


def baseline_d_loss(variant: str, d_real, d_fake, margin: float = 1.0):
    d_real, d_fake = T.as_tensor(d_real), T.as_tensor(d_fake)
    if variant == "GAN":
        real = T.log(T.clip(d_real, GAN_EPS, 1.0 - GAN_EPS))
        fake = T.log(T.sub(1.0, T.clip(d_fake, GAN_EPS, 1.0 - GAN_EPS)))
        return T.mul_elem(T.add(_mean(real), _mean(fake)), -1.0)
    if variant == "LSGAN":
        return T.add(T.mul_elem(_mean(T.square(T.sub(d_real, 1.0))), 0.5),
                     T.mul_elem(_mean(T.square(d_fake)), 0.5))
    if variant == "EBGAN":
        # energy = 1 - score, so low energy means high score
        e_real = T.sub(1.0, d_real)
        e_fake = T.sub(1.0, d_fake)
        return T.add(_mean(e_real), _mean(T.relu(T.sub(margin, e_fake))))
    raise ValueError(f"unknown baseline variant {variant!r}")


def baseline_g_adv(variant: str, d_fake):
    d_fake = T.as_tensor(d_fake)
    if variant == "GAN":
        return T.mul_elem(_mean(T.log(T.clip(d_fake, GAN_EPS, 1.0 - GAN_EPS))), -1.0)
    if variant == "LSGAN":
        return T.mul_elem(_mean(T.square(T.sub(d_fake, 1.0))), 0.5)
    if variant == "EBGAN":
        return _mean(T.sub(1.0, d_fake))
    raise ValueError(f"unknown baseline variant {variant!r}")


# ---------------------------------------------------------------------------
# steps


def _grads(tape, loss, params):
    gs = tape.gradient(loss, params.tensors())
    return dict(zip(params.names(), gs))


def _check_finite(name, value, batch=None, out_dir=None):
    if not np.isfinite(value):
        if out_dir is not None and batch is not None:
            write_tensor_file(Path(out_dir) / "diverged_x.spt", np.asarray(batch[0], dtype=np.float64))
            write_tensor_file(Path(out_dir) / "diverged_y.spt", np.asarray(batch[1], dtype=np.float64))
        raise TrainingDiverged(f"{name} is not finite ({value})")


def d_step_ldrsp(batch, G, D, opt_d: Adam, buffer: SampleBuffer | None, kind,
                 rng: np.random.Generator) -> float:
    """One discriminator update on predicted, ground-truth and buffered samples."""
    x, y_star = batch
    n = len(x)
    y_gen = G.predict(x)
    v_gen = batch_oracle(kind, y_gen, y_star)
    xs, ys, targets = [x, x], [y_gen, y_star], [v_gen, np.ones_like(v_gen)]
    weights = [np.full(n, 1.0 / n), np.full(n, 1.0 / n)]
    if buffer is not None:
        try:
            xb, yb, vb = stack_tuples(buffer.sample(n, rng))
            xs.append(xb)
            ys.append(yb)
            targets.append(vb)
            weights.append(np.full(len(xb), 1.0 / len(xb)))
        except EmptyBufferError:
            pass
    with T.Tape() as tape:
        scores = D(np.concatenate(xs), T.Tensor(np.concatenate(ys)))
        loss = regression_loss(scores, np.concatenate(targets), np.concatenate(weights))
    opt_d.step(_grads(tape, loss, D.params))
    return loss.item()


def g_step_ldrsp(batch, G, D, opt_g: Adam, weight: float = 1.0) -> tuple[float, float]:
    """One predictor update on task loss plus ``weight * 0.5 * (D(x, G(x)) - 1)^2``."""
    x, y_star = batch
    with T.Tape() as tape:
        y = G(x)
        task = cross_entropy(y, y_star)
        loss = task
        if weight:
            adv = regression_loss(D(x, y), 1.0, np.full(len(x), 1.0 / len(x)))
            loss = T.add(task, T.mul_elem(adv, weight))
    opt_g.step(_grads(tape, loss, G.params))
    return loss.item(), task.item()


def baseline_steps(variant: str, batch, G, D, opt_g: Adam, opt_d: Adam, weight: float = 1.0,
                   margin: float = 1.0) -> tuple[float, float, float]:
    """One discriminator then one predictor update for GAN, LSGAN or EBGAN."""
    variant = variant.upper()
    if variant not in VARIANTS[1:]:
        raise ValueError(f"unknown baseline variant {variant!r}")
    x, y_star = batch
    y_fake = G.predict(x)
    with T.Tape() as tape:
        d_loss = baseline_d_loss(variant, D(x, T.Tensor(y_star)), D(x, T.Tensor(y_fake)), margin)
    opt_d.step(_grads(tape, d_loss, D.params))
    with T.Tape() as tape:
        y = G(x)
        task = cross_entropy(y, y_star)
        g_loss = task
        if weight:
            g_loss = T.add(task, T.mul_elem(baseline_g_adv(variant, D(x, y)), weight))
    opt_g.step(_grads(tape, g_loss, G.params))
    return d_loss.item(), g_loss.item(), task.item()


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalResult:
    raw_score: float
    refined_score: float
    raw_threshold: float | None = None
    refined_threshold: float | None = None

    @property
    def delta(self) -> float:
        return self.refined_score - self.raw_score


def predict_refined(x, G, D, cfg: InferenceConfig, config: TrainConfig):
    """Raw and refined outputs for a batch of inputs."""
    if config.task == "segmentation":
        refined, raw = refine_multicrop(x, G, D, cfg, config.crop, config.n_crops, return_raw=True)
        return raw, refined
    raw = G.predict(x)
    refined, _ = refine(x, raw, D, cfg)
    return raw, refined


def evaluate(x, y_star, G, D, cfg: InferenceConfig, config: TrainConfig, thresholds=None) -> EvalResult:
    """Scores (percent) of raw and refined outputs.

    Multi-label F1 thresholds are tuned on these rows unless ``thresholds``
    gives (raw, refined) thresholds fixed elsewhere.
    """
    raw, refined = predict_refined(x, G, D, cfg, config)
    if config.task == "segmentation":
        return EvalResult(100.0 * mean_iou(raw, y_star), 100.0 * mean_iou(refined, y_star))
    if thresholds is None:
        t_raw, s_raw = tune_threshold(raw, y_star)
        t_ref, s_ref = tune_threshold(refined, y_star)
    else:
        t_raw, t_ref = thresholds
        s_raw = float(f1_scores(raw, y_star, t_raw).mean())
        s_ref = float(f1_scores(refined, y_star, t_ref).mean())
    return EvalResult(100.0 * s_raw, 100.0 * s_ref, t_raw, t_ref)


# ---------------------------------------------------------------------------
# model construction and checkpoints


def build_models(config: TrainConfig, dataset):
    if config.task == "segmentation":
        _, h, w, _ = dataset.images.shape
        crop = config.crop
        G = build_fcn_segmenter(crop, crop, dataset.classes, config.fcn_widths, seed=config.seed)
        D = build_patch_discriminator(crop, crop, dataset.classes, config.fcn_widths, seed=config.seed + 1)
    else:
        G = build_mlp_classifier(dataset.feature_dim, dataset.label_dim, config.hidden_g, seed=config.seed)
        D = build_mlp_discriminator(dataset.feature_dim, dataset.label_dim, config.hidden_d, seed=config.seed + 1)
    return G, D


def save_checkpoint(directory, G, D, opt_g=None, opt_d=None, meta=None) -> Path:
    d = Path(directory)
    save_params(d / "G", G.params, opt_g.state if opt_g else None)
    save_params(d / "D", D.params, opt_d.state if opt_d else None)
    info = dict(meta or {})
    info.update(g_kind=G.kind, g_config=G.config, d_kind=D.kind, d_config=D.config)
    (d / "meta.json").write_text(json.dumps(info, indent=1, sort_keys=True, default=list) + "\n")
    return d


def load_checkpoint(directory):
    """Return (G, D, meta) from a checkpoint directory."""
    d = Path(directory)
    if not (d / "meta.json").exists():
        raise FileNotFoundError(f"not a checkpoint directory: {d}")
    meta = json.loads((d / "meta.json").read_text())
    g_params, _ = load_params(d / "G")
    d_params, _ = load_params(d / "D")
    G = model_from_params(meta["g_kind"], g_params, meta["g_config"])
    D = model_from_params(meta["d_kind"], d_params, meta["d_config"])
    return G, D, meta


# ---------------------------------------------------------------------------
# loop


@dataclass
class TrainResult:
    G: object
    D: object
    records: list[MetricsRecord]
    best_epoch: int
    best: EvalResult


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def train_loop(config: TrainConfig, dataset, infer_cfg: InferenceConfig | None = None, out_dir=None,
               on_epoch=None) -> TrainResult:
    """Train G and D, evaluating raw and refined validation scores every epoch.

    Stops after ``config.patience`` epochs without a better refined score or at
    ``config.epochs``. With ``out_dir`` the metrics stream goes to
    ``metrics.csv`` and the best models to ``checkpoints/best``.
    """
    infer_cfg = infer_cfg or InferenceConfig()
    kind = OracleKind(config.oracle)
    if config.task == "segmentation" and kind is not OracleKind.PIXELWISE_F1:
        kind = OracleKind.PIXELWISE_F1
    G, D = build_models(config, dataset)
    opt_g = Adam(G.params, lr=config.lr_g)
    opt_d = Adam(D.params, lr=config.lr_d)
    buffer = SampleBuffer(config.capacity)
    batch_rng = np.random.default_rng([config.seed, 0])
    sample_rng = np.random.default_rng([config.seed, 1])
    sample_cfg = infer_cfg
    if config.sample_steps >= 0:
        sample_cfg = InferenceConfig(infer_cfg.eta, config.sample_steps, infer_cfg.normalized,
                                     infer_cfg.bounds, infer_cfg.grad_norm_floor)

    x_train, y_train = dataset.split("train")
    x_val, y_val = dataset.split("val")
    if len(x_train) == 0:
        raise ValueError("training split is empty")

    writer = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        writer = MetricsWriter(out_dir / "metrics.csv")

    records: list[MetricsRecord] = []
    best, best_epoch, since_best = None, 0, 0
    for epoch in range(1, config.epochs + 1):
        d_losses, g_losses, task_losses = [], [], []
        for idx in _batches(len(x_train), config.batch_size, batch_rng):
            x, y_star = x_train[idx], y_train[idx]
            if config.task == "segmentation":
                x, y_star = augment_batch(x, y_star, config.crop, batch_rng)
            batch = (x, y_star)
            if config.variant == "LDRSP":
                G_snap, D_snap = G.snapshot(), D.snapshot()
                if sample_rng.random() < config.sample_ratio:
                    new = gen_inference_samples(x, y_star, G_snap, D_snap, sample_cfg, kind, sample_rng)
                else:
                    new = gen_adversarial_samples(x, y_star, D_snap, kind, config.adv_steps, config.adv_lr)
                buffer.push(new)
                d_loss = d_step_ldrsp(batch, G, D, opt_d, buffer, kind, sample_rng)
                g_loss, task_loss = g_step_ldrsp(batch, G, D, opt_g, config.adversarial_weight)
            else:
                d_loss, g_loss, task_loss = baseline_steps(config.variant, batch, G, D, opt_g, opt_d,
                                                           config.adversarial_weight, config.ebgan_margin)
            for name, value in (("d_loss", d_loss), ("g_loss", g_loss)):
                _check_finite(name, value, batch, out_dir)
            d_losses.append(d_loss)
            g_losses.append(g_loss)
            task_losses.append(task_loss)

        result = evaluate(x_val, y_val, G, D, infer_cfg, config)
        rec = MetricsRecord(epoch, float(np.mean(d_losses)), float(np.mean(g_losses)),
                            float(np.mean(task_losses)), result.raw_score, result.refined_score)
        records.append(rec)
        if writer:
            writer.write(rec)
        log.info("epoch %d d=%.4f g=%.4f raw=%.2f refined=%.2f", epoch, rec.d_loss, rec.g_loss,
                 rec.raw_score, rec.refined_score)
        if on_epoch:
            on_epoch(rec)

        if best is None or result.refined_score > best.refined_score:
            best, best_epoch, since_best = result, epoch, 0
            best_models = (G.snapshot(), D.snapshot())
            if out_dir is not None:
                save_checkpoint(out_dir / "checkpoints" / "best", G, D, opt_g, opt_d,
                                _checkpoint_meta(config, infer_cfg, result, epoch, dataset))
        else:
            since_best += 1
            if since_best >= config.patience:
                break

    if out_dir is not None:
        save_checkpoint(out_dir / "checkpoints" / "last", G, D, opt_g, opt_d,
                        _checkpoint_meta(config, infer_cfg, result, epoch, dataset))
    G_best, D_best = best_models
    return TrainResult(G_best, D_best, records, best_epoch, best)


def _checkpoint_meta(config, infer_cfg, result: EvalResult, epoch, dataset) -> dict:
    return {
        "task": config.task,
        "epoch": epoch,
        "train_config": asdict(config),
        "inference": asdict(infer_cfg),
        "raw_threshold": result.raw_threshold,
        "refined_threshold": result.refined_threshold,
        "manifest": dataset.meta.get("manifest"),
    }


def train_config_fields() -> list[str]:
    return [f.name for f in fields(TrainConfig)]
