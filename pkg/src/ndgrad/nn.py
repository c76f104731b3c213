"""Parameterised layers built on the ndgrad ops."""
from typing import Any, Dict, Iterator, List, Optional, Tuple

import numpy as np

from src.ndgrad import ops
from src.ndgrad.conv import conv2d, conv_transpose2d
from src.ndgrad.errors import CheckpointFormatError, ShapeError
from src.ndgrad.tensor import Tensor


class Parameter(Tensor):
    """A leaf tensor that always requires grad."""

    def __init__(self, data: Any, name: Optional[str] = None):
        super().__init__(data, requires_grad=True, name=name)


class Module:
    """
    Base class for layers and models.

    Parameters, buffers and child modules are discovered from instance
    attributes in assignment order, so state dict keys are stable across runs.
    """

    def __init__(self):
        self.training = True
        self._buffers: Dict[str, np.ndarray] = {}

    def forward(self, *args: Any, **kwargs: Any) -> Any:
        raise NotImplementedError(f"{type(self).__name__} does not implement forward")

    def __call__(self, *args: Any, **kwargs: Any) -> Any:
        return self.forward(*args, **kwargs)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = np.array(value, dtype=np.float64)

    def children(self) -> Iterator[Tuple[str, "Module"]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def _own_parameters(self) -> Iterator[Tuple[str, Parameter]]:
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield name, value

    def named_parameters(self, prefix: str = "") -> List[Tuple[str, Parameter]]:
        named = [(f"{prefix}{name}", p) for name, p in self._own_parameters()]
        for name, child in self.children():
            named.extend(child.named_parameters(f"{prefix}{name}."))
        return named

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, child in self.children():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    # checkpoint state

    def _own_state(self) -> Dict[str, np.ndarray]:
        state = {name: p.data for name, p in self._own_parameters()}
        state.update(self._buffers)
        return state

    def _load_own_state(self, state: Dict[str, np.ndarray]) -> None:
        for name, p in self._own_parameters():
            _assign(p.data, state[name], name)
        for name in self._buffers:
            _assign(self._buffers[name], state[name], name)

    def state_dict(self, prefix: str = "") -> Dict[str, np.ndarray]:
        state = {f"{prefix}{k}": v.copy() for k, v in self._own_state().items()}
        for name, child in self.children():
            state.update(child.state_dict(f"{prefix}{name}."))
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray], strict: bool = True) -> None:
        expected = set(self.state_dict())
        missing = sorted(expected - set(state))
        unexpected = sorted(set(state) - expected)
        if missing or (strict and unexpected):
            raise CheckpointFormatError(f"state mismatch: missing={missing[:5]} unexpected={unexpected[:5]}")
        self._load_tree(state, "")

    def _load_tree(self, state: Dict[str, np.ndarray], prefix: str) -> None:
        own = {k[len(prefix):]: v for k, v in state.items() if k.startswith(prefix) and "." not in k[len(prefix):]}
        self._load_own_state({**own, **self._split_state(state, prefix)})
        for name, child in self.children():
            child._load_tree(state, f"{prefix}{name}.")

    def _split_state(self, state: Dict[str, np.ndarray], prefix: str) -> Dict[str, np.ndarray]:
        return {}


def _assign(target: np.ndarray, value: np.ndarray, name: str) -> None:
    value = np.asarray(value, dtype=np.float64)
    if value.shape != target.shape:
        raise CheckpointFormatError(f"{name}: stored shape {value.shape} != expected {target.shape}")
    target[...] = value


def _normal(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(1.0 / fan_in), size=shape)


class Linear(Module):
    """Fully connected layer, weight laid out (in, out)."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Parameter(_normal(rng, (in_features, out_features), in_features))
        self.bias = Parameter(np.zeros(out_features))

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError("linear", [x.shape, self.weight.shape])
        return ops.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator,
                 kernel_size: int = 3, stride: int = 2, padding: int = 1):
        super().__init__()
        fan_in = in_channels * kernel_size * kernel_size
        self.stride = stride
        self.padding = padding
        self.weight = Parameter(_normal(rng, (out_channels, in_channels, kernel_size, kernel_size), fan_in))
        self.bias = Parameter(np.zeros(out_channels))

    def forward(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class ConvTranspose2d(Module):
    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator,
                 kernel_size: int = 3, stride: int = 2, padding: int = 1, output_padding: int = 1):
        super().__init__()
        fan_in = in_channels * kernel_size * kernel_size
        self.stride = stride
        self.padding = padding
        self.output_padding = output_padding
        self.weight = Parameter(_normal(rng, (in_channels, out_channels, kernel_size, kernel_size), fan_in))
        self.bias = Parameter(np.zeros(out_channels))

    def forward(self, x: Tensor) -> Tensor:
        return conv_transpose2d(x, self.weight, self.bias, stride=self.stride,
                                padding=self.padding, output_padding=self.output_padding)


class BatchNorm2d(Module):
    """
    Per-channel normalisation over (N, H, W).

    Training mode normalises with batch statistics and folds them into the
    running estimates (momentum 0.1, unbiased variance); inference mode is a
    fixed affine map of the running estimates.
    """

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self.register_buffer("running_mean", np.zeros(channels))
        self.register_buffer("running_var", np.ones(channels))

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeError("batch_norm2d", [x.shape], f"expected {self.channels} channels")
        if self.training:
            mean = x.mean(axis=(0, 2, 3), keepdims=True)
            centered = x - mean
            var = (centered * centered).mean(axis=(0, 2, 3), keepdims=True)
            normalized = centered * (var + self.eps) ** -0.5

            count = x.shape[0] * x.shape[2] * x.shape[3]
            unbiased = var.data.reshape(-1) * (count / max(count - 1, 1))
            m = self.momentum
            self._buffers["running_mean"][...] = (1 - m) * self._buffers["running_mean"] + m * mean.data.reshape(-1)
            self._buffers["running_var"][...] = (1 - m) * self._buffers["running_var"] + m * unbiased
        else:
            mean = self._buffers["running_mean"].reshape(1, -1, 1, 1)
            scale = 1.0 / np.sqrt(self._buffers["running_var"].reshape(1, -1, 1, 1) + self.eps)
            normalized = (x - mean) * scale
        return normalized * self.gamma.reshape((1, -1, 1, 1)) + self.beta.reshape((1, -1, 1, 1))


class LeakyReLU(Module):
    def __init__(self, slope: float = 0.01):
        super().__init__()
        self.slope = slope

    def forward(self, x: Tensor) -> Tensor:
        return ops.leaky_relu(x, self.slope)


class Sequential(Module):
    def __init__(self, *layers: Module):
        super().__init__()
        self.layers = list(layers)

    def forward(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x


class PerDimensionMLP(Module):
    """
    k independent scalar networks 1 -> h -> h -> 1, one per input column.

    Weights are stacked along a leading k axis and applied with a grouped
    contraction, so column j of the output depends on column j of the input
    only. Checkpoints store each network under its own index ("{j}.w1", ...).
    """

    _names = ("w1", "b1", "w2", "b2", "w3", "b3")

    def __init__(self, k: int, hidden: int, rng: np.random.Generator, slope: float = 0.01):
        super().__init__()
        self.k = k
        self.hidden = hidden
        self.slope = slope
        self.w1 = Parameter(_normal(rng, (k, 1, hidden), 1))
        self.b1 = Parameter(np.zeros((k, hidden)))
        self.w2 = Parameter(_normal(rng, (k, hidden, hidden), hidden))
        self.b2 = Parameter(np.zeros((k, hidden)))
        self.w3 = Parameter(_normal(rng, (k, hidden, 1), hidden))
        self.b3 = Parameter(np.zeros((k, 1)))

    def forward(self, v: Tensor) -> Tensor:
        if v.ndim != 2 or v.shape[1] != self.k:
            raise ShapeError("per_dimension_mlp", [v.shape], f"expected (B, {self.k})")
        h = v.reshape((v.shape[0], self.k, 1))
        h = ops.leaky_relu(ops.grouped_linear(h, self.w1, self.b1), self.slope)
        h = ops.leaky_relu(ops.grouped_linear(h, self.w2, self.b2), self.slope)
        h = ops.grouped_linear(h, self.w3, self.b3)
        return h.reshape((v.shape[0], self.k))

    def set_identity(self) -> None:
        """Make every network the exact identity t -> t (needs hidden >= 2)."""
        if self.hidden < 2:
            raise ValueError("identity configuration needs at least two hidden units")
        gain = 1.0 / (1.0 + self.slope) ** 2
        for p in (self.w1, self.b1, self.w2, self.b2, self.w3, self.b3):
            p.data[...] = 0.0
        # lrelu(t) - lrelu(-t) == (1 + slope) * t, carried through both hidden layers
        self.w1.data[:, 0, 0], self.w1.data[:, 0, 1] = 1.0, -1.0
        self.w2.data[:, 0, 0], self.w2.data[:, 1, 0] = 1.0, -1.0
        self.w2.data[:, 0, 1], self.w2.data[:, 1, 1] = -1.0, 1.0
        self.w3.data[:, 0, 0], self.w3.data[:, 1, 0] = gain, -gain

    def _own_state(self) -> Dict[str, np.ndarray]:
        state = {}
        for j in range(self.k):
            for name in self._names:
                state[f"{j}.{name}"] = getattr(self, name).data[j]
        return state

    def _split_state(self, state: Dict[str, np.ndarray], prefix: str) -> Dict[str, np.ndarray]:
        stacked = {}
        for name in self._names:
            parts = [state[f"{prefix}{j}.{name}"] for j in range(self.k)]
            stacked[name] = np.stack(parts)
        return stacked

    def _load_own_state(self, state: Dict[str, np.ndarray]) -> None:
        for name in self._names:
            _assign(getattr(self, name).data, state[name], name)
