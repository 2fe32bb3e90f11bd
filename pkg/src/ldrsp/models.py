"""Predictor and discriminator networks.

Generators map a batch of inputs to outputs in (0, 1). Discriminators map
``(x, y)`` batches to one score per example (MLP) or one score per pixel
(patch discriminator), also in (0, 1).
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .nn import Layer, ParameterSet, conv, deconv, dense, init_parameters


class Model:
    kind = "model"

    def __init__(self, params: ParameterSet, config: dict):
        self.params = params
        self.config = dict(config)

    def snapshot(self):
        """Frozen copy sharing no parameter storage with this model."""
        return type(self)(self.params.copy(), self.config)

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.config}, {self.params.num_parameters()} params)"


class Generator(Model):
    def predict(self, x) -> np.ndarray:
        return self(T.Tensor(x)).data


class Discriminator(Model):
    def score(self, x, y) -> np.ndarray:
        return self(x, T.Tensor(y)).data


# ---------------------------------------------------------------------------
# multi-label


class MLPClassifier(Generator):
    kind = "mlp_classifier"

    def __call__(self, x):
        h = T.relu(dense(self.params, "fc1", x))
        return T.sigmoid(dense(self.params, "fc2", h))


def build_mlp_classifier(feature_dim: int, label_dim: int, hidden_dim: int = 150, seed=0) -> MLPClassifier:
    if min(feature_dim, label_dim, hidden_dim) <= 0:
        raise ValueError(f"dimensions must be positive: {feature_dim}, {label_dim}, {hidden_dim}")
    params = init_parameters([Layer("fc1", "dense", (feature_dim, hidden_dim)),
                              Layer("fc2", "dense", (hidden_dim, label_dim))], seed)
    return MLPClassifier(params, dict(feature_dim=feature_dim, label_dim=label_dim, hidden_dim=hidden_dim))


class MLPDiscriminator(Discriminator):
    kind = "mlp_discriminator"

    def __call__(self, x, y):
        h = T.concat([T.as_tensor(x), T.as_tensor(y)], axis=1)
        n_hidden = len(self.config["hidden_dims"])
        for i in range(n_hidden):
            h = T.softplus(dense(self.params, f"fc{i + 1}", h))
        out = T.sigmoid(dense(self.params, f"fc{n_hidden + 1}", h))
        return T.reshape(out, (out.shape[0],))


def build_mlp_discriminator(feature_dim: int, label_dim: int, hidden_dims=(250,), seed=0) -> MLPDiscriminator:
    hidden_dims = tuple(int(h) for h in hidden_dims)
    if not 1 <= len(hidden_dims) <= 2:
        raise ValueError(f"hidden_dims needs one or two entries, got {hidden_dims}")
    dims = (feature_dim + label_dim,) + hidden_dims + (1,)
    layers = [Layer(f"fc{i + 1}", "dense", (dims[i], dims[i + 1])) for i in range(len(dims) - 1)]
    return MLPDiscriminator(init_parameters(layers, seed),
                            dict(feature_dim=feature_dim, label_dim=label_dim, hidden_dims=hidden_dims))


# ---------------------------------------------------------------------------
# segmentation

FCN_WIDTHS = (64, 128, 128)
DECONV_KERNEL = 4


def _fcn_layers(in_ch: int, out_ch: int, widths) -> list[Layer]:
    w1, w2, w3 = widths
    return [
        Layer("conv1", "conv", (5, 5, in_ch, w1)),
        Layer("conv2", "conv", (5, 5, w1, w2)),
        Layer("conv3", "conv", (5, 5, w2, w3)),
        Layer("deconv1", "deconv", (DECONV_KERNEL, DECONV_KERNEL, w1, w3)),
        Layer("deconv2", "deconv", (DECONV_KERNEL, DECONV_KERNEL, out_ch, w1)),
    ]


def _fcn_forward(params: ParameterSet, x):
    h = T.relu(conv(params, "conv1", x, stride=1))
    h = T.relu(conv(params, "conv2", h, stride=2))
    h = T.relu(conv(params, "conv3", h, stride=2))
    h = T.relu(deconv(params, "deconv1", h))
    return T.sigmoid(deconv(params, "deconv2", h))


def _check_spatial(h: int, w: int) -> None:
    if h <= 0 or w <= 0 or h % 4 or w % 4:
        raise ValueError(f"spatial size {h}x{w} must be positive and divisible by 4")


class FCNSegmenter(Generator):
    kind = "fcn_segmenter"

    def __call__(self, x):
        x = T.as_tensor(x)
        _check_spatial(*x.shape[1:3])
        return _fcn_forward(self.params, x)


def build_fcn_segmenter(h: int, w: int, classes: int, widths=FCN_WIDTHS, seed=0) -> FCNSegmenter:
    _check_spatial(h, w)
    params = init_parameters(_fcn_layers(3, classes, widths), seed)
    return FCNSegmenter(params, dict(h=h, w=w, classes=classes, widths=tuple(widths)))


class PatchDiscriminator(Discriminator):
    kind = "patch_discriminator"

    def __call__(self, x, y):
        x, y = T.as_tensor(x), T.as_tensor(y)
        _check_spatial(*x.shape[1:3])
        out = _fcn_forward(self.params, T.concat([x, y], axis=3))
        return T.reshape(out, out.shape[:3])


def build_patch_discriminator(h: int, w: int, classes: int, widths=FCN_WIDTHS, seed=0) -> PatchDiscriminator:
    _check_spatial(h, w)
    params = init_parameters(_fcn_layers(3 + classes, 1, widths), seed)
    return PatchDiscriminator(params, dict(h=h, w=w, classes=classes, widths=tuple(widths)))


# ---------------------------------------------------------------------------
# diagnostics


class QuadraticToy(Discriminator):
    """Score ``1 - ||y - c||^2`` independent of ``x``; used to check inference.

    Unlike the learned discriminators its output is not confined to (0, 1).
    """

    kind = "quadratic_toy"

    def __call__(self, x, y):
        y = T.as_tensor(y)
        diff = T.sub(y, self.params["center"])
        return T.sub(1.0, T.sum(T.square(diff), axis=tuple(range(1, y.ndim))))


def build_quadratic_toy(center) -> QuadraticToy:
    center = np.asarray(center, dtype=T.get_default_dtype())
    return QuadraticToy(ParameterSet([("center", center)]), dict(label_dim=center.shape[-1]))


BUILDERS = {
    MLPClassifier.kind: MLPClassifier,
    MLPDiscriminator.kind: MLPDiscriminator,
    FCNSegmenter.kind: FCNSegmenter,
    PatchDiscriminator.kind: PatchDiscriminator,
    QuadraticToy.kind: QuadraticToy,
}


def model_from_params(kind: str, params: ParameterSet, config: dict) -> Model:
    try:
        cls = BUILDERS[kind]
    except KeyError:
        raise ValueError(f"unknown model kind {kind!r}") from None
    return cls(params, config)
