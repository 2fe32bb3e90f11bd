"""Parameter containers, initialization, layers, Adam, and checkpoint I/O."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from . import tensor as T
from .data import read_keyvalue, read_tensor_file, write_keyvalue, write_tensor_file


class ParameterSet:
    """Ordered mapping of unique names to parameter tensors."""

    def __init__(self, items=()):
        self._params: dict[str, T.Tensor] = {}
        for name, value in items:
            self.add(name, value)

    def add(self, name: str, value) -> T.Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = value if isinstance(value, T.Tensor) else T.Tensor(value)
        t.name = name
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> T.Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def tensors(self) -> list[T.Tensor]:
        return list(self._params.values())

    def items(self):
        return self._params.items()

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self._params.items()}

    def copy(self) -> "ParameterSet":
        """Deep copy; the result shares no storage with ``self``."""
        return ParameterSet((k, v.data.copy()) for k, v in self._params.items())

    def num_parameters(self) -> int:
        return int(sum(v.size for v in self._params.values()))


@dataclass(frozen=True)
class Layer:
    """Parameter layout of one layer.

    ``shape`` is (fan_in, fan_out) for dense, (kh, kw, c_in, c_out) for conv and
    (kh, kw, c_out, c_in) for deconv.
    """

    name: str
    kind: str
    shape: tuple[int, ...]

    def fans(self) -> tuple[int, int]:
        if self.kind == "dense":
            return self.shape[0], self.shape[1]
        kh, kw = self.shape[:2]
        if self.kind == "conv":
            return kh * kw * self.shape[2], kh * kw * self.shape[3]
        if self.kind == "deconv":
            return kh * kw * self.shape[3], kh * kw * self.shape[2]
        raise ValueError(f"unknown layer kind {self.kind!r}")

    def bias_size(self) -> int:
        return self.shape[2] if self.kind == "deconv" else self.shape[-1]


def init_parameters(layers: list[Layer], seed: int | np.random.Generator = 0) -> ParameterSet:
    """Glorot-uniform weights and zero biases, deterministic in ``seed``."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    dtype = T.get_default_dtype()
    params = ParameterSet()
    for layer in layers:
        if any(int(s) <= 0 for s in layer.shape):
            raise ValueError(f"layer {layer.name!r} has a zero-sized dimension {layer.shape}")
        fan_in, fan_out = layer.fans()
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        params.add(f"{layer.name}.w", rng.uniform(-bound, bound, size=layer.shape).astype(dtype))
        params.add(f"{layer.name}.b", np.zeros(layer.bias_size(), dtype=dtype))
    return params


def dense(params: ParameterSet, name: str, x):
    return T.add(T.matmul(x, params[f"{name}.w"]), params[f"{name}.b"])


def conv(params: ParameterSet, name: str, x, stride: int = 1):
    return T.add(T.conv2d(x, params[f"{name}.w"], stride=stride, padding="same"), params[f"{name}.b"])


def deconv(params: ParameterSet, name: str, x, stride: int = 2):
    return T.add(T.deconv2d(x, params[f"{name}.w"], stride=stride, padding="same"), params[f"{name}.b"])


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: ParameterSet, **kwargs) -> "AdamState":
        state = cls(**kwargs)
        for name, p in params.items():
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        return state


def adam_step(params: ParameterSet, grads: dict[str, np.ndarray], state: AdamState) -> None:
    """One bias-corrected Adam update. Parameter arrays are modified in place."""
    missing = [n for n in params if n not in grads]
    if missing:
        raise KeyError(f"adam_step: no gradient for {missing}")
    state.step += 1
    c1 = 1.0 - state.beta1 ** state.step
    c2 = 1.0 - state.beta2 ** state.step
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


class Adam:
    """Thin wrapper pairing a ParameterSet with its AdamState."""

    def __init__(self, params: ParameterSet, lr: float = 1e-3, beta1: float = 0.5,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.state = AdamState.for_params(params, lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def step(self, grads: dict[str, np.ndarray]) -> None:
        adam_step(self.params, grads, self.state)


# ---------------------------------------------------------------------------
# checkpoints


def save_params(directory, params: ParameterSet, state: AdamState | None = None) -> None:
    """Write each parameter (and Adam moments) as a TensorFile under ``directory``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for i, (name, p) in enumerate(params.items()):
        write_tensor_file(d / f"{i:03d}.{name}.spt", p.data)
    order = {"names": ",".join(params.names())}
    if state is not None:
        for name in params:
            write_tensor_file(d / f"adam.m.{name}.spt", state.m[name])
            write_tensor_file(d / f"adam.v.{name}.spt", state.v[name])
        order.update(lr=repr(state.lr), beta1=repr(state.beta1), beta2=repr(state.beta2),
                     eps=repr(state.eps), step=state.step)
    write_keyvalue(d / "params.txt", order)


def load_params(directory) -> tuple[ParameterSet, AdamState | None]:
    d = Path(directory)
    info = read_keyvalue(d / "params.txt")
    names = info["names"].split(",") if info["names"] else []
    params = ParameterSet()
    for i, name in enumerate(names):
        params.add(name, read_tensor_file(d / f"{i:03d}.{name}.spt"))
    state = None
    if "step" in info:
        state = AdamState(lr=float(info["lr"]), beta1=float(info["beta1"]), beta2=float(info["beta2"]),
                          eps=float(info["eps"]), step=int(info["step"]))
        for name in names:
            state.m[name] = read_tensor_file(d / f"adam.m.{name}.spt")
            state.v[name] = read_tensor_file(d / f"adam.v.{name}.spt")
    return params, state
