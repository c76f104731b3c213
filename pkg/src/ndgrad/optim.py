"""Adam with bias correction, plus global-norm gradient clipping."""
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Tuple

import numpy as np

from src.ndgrad.errors import NonFiniteError, ShapeError
from src.ndgrad.nn import Parameter


@dataclass
class AdamState:
    lr: float = 5e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(state: AdamState, params: Dict[str, np.ndarray],
              grads: Dict[str, np.ndarray]) -> Tuple[Dict[str, np.ndarray], AdamState]:
    """
    One bias-corrected Adam update.

    Every gradient is checked before anything is touched, so a non-finite
    gradient leaves both parameters and state unchanged.
    """
    for name, value in params.items():
        grad = grads[name]
        if grad.shape != value.shape:
            raise ShapeError("adam_step", [value.shape, grad.shape], name)
        if not np.all(np.isfinite(grad)):
            raise NonFiniteError("adam_step", f"gradient of {name}")

    state.step_count += 1
    t = state.step_count
    correction1 = 1.0 - state.beta1 ** t
    correction2 = 1.0 - state.beta2 ** t
    updated = {}
    for name, value in params.items():
        grad = grads[name]
        m = state.first_moment.get(name, np.zeros_like(value))
        v = state.second_moment.get(name, np.zeros_like(value))
        m = state.beta1 * m + (1.0 - state.beta1) * grad
        v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
        state.first_moment[name] = m
        state.second_moment[name] = v
        updated[name] = value - state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.epsilon)
    return updated, state


class Adam:
    """Optimizer over a fixed set of named parameters; others are never touched."""

    def __init__(self, named_params: Iterable[Tuple[str, Parameter]], lr: float = 5e-3,
                 beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.params = dict(named_params)
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, epsilon=epsilon)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        values = {name: p.data for name, p in self.params.items()}
        grads = {name: (p.grad if p.grad is not None else np.zeros_like(p.data)) for name, p in self.params.items()}
        updated, _ = adam_step(self.state, values, grads)
        for name, p in self.params.items():
            p.data[...] = updated[name]

    def state_dict(self, prefix: str = "optim.") -> Dict[str, np.ndarray]:
        state = {f"{prefix}step": np.array([float(self.state.step_count)])}
        for name in self.params:
            if name in self.state.first_moment:
                state[f"{prefix}m.{name}"] = self.state.first_moment[name].copy()
                state[f"{prefix}v.{name}"] = self.state.second_moment[name].copy()
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray], prefix: str = "optim.") -> None:
        self.state.step_count = int(state[f"{prefix}step"][0])
        for name in self.params:
            if f"{prefix}m.{name}" in state:
                self.state.first_moment[name] = np.array(state[f"{prefix}m.{name}"])
                self.state.second_moment[name] = np.array(state[f"{prefix}v.{name}"])


def clip_grad_norm(params: List[Parameter], max_norm: float) -> float:
    """Rescale gradients in place so their global L2 norm is at most max_norm; returns the pre-clip norm."""
    grads = [p.grad for p in params if p.grad is not None]
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads))) if grads else 0.0
    if total > max_norm > 0:
        scale = max_norm / (total + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return total
