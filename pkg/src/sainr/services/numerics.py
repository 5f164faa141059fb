"""
SA-INR — Numerics

Flat parameter vectors over a module's trainable tensors, exact reverse-mode
gradients, a central finite-difference checker and the Adam update rule.
All training math runs in float64.
"""
import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, Iterable, Optional

import torch
from torch import nn

logger = logging.getLogger(__name__)


class NonFiniteError(ArithmeticError):
    """A loss or gradient entry is NaN or infinite."""

    def __init__(self, message: str, segment: Optional[str] = None):
        super().__init__(message if segment is None else f"{message} (segment '{segment}')")
        self.segment = segment


class ShapeMismatchError(ValueError):
    """Parameter, gradient and optimizer state disagree in length or layout."""
    pass


@dataclass(frozen=True)
class Segment:
    """A named index range of a flat vector, reshaped to `shape` on unpacking."""
    name: str
    start: int
    stop: int
    shape: tuple[int, ...]


def _check_tiling(layout: tuple[Segment, ...], length: int) -> None:
    cursor = 0
    for seg in layout:
        if seg.start != cursor or seg.stop < seg.start:
            raise ShapeMismatchError(f"segment '{seg.name}' starts at {seg.start}, expected {cursor}")
        if seg.stop - seg.start != math.prod(seg.shape):
            raise ShapeMismatchError(f"segment '{seg.name}' length does not match shape {seg.shape}")
        cursor = seg.stop
    if cursor != length:
        raise ShapeMismatchError(f"segments cover {cursor} values, vector has {length}")


@dataclass(frozen=True, eq=False)
class ParamVector:
    """All trainable scalars of a model as one float64 vector plus its layout."""
    values: torch.Tensor
    layout: tuple[Segment, ...]

    def __post_init__(self):
        if self.values.dim() != 1:
            raise ShapeMismatchError("parameter vector must be one-dimensional")
        _check_tiling(self.layout, self.values.numel())

    @classmethod
    def from_module(cls, module: nn.Module) -> "ParamVector":
        layout, chunks, cursor = [], [], 0
        for name, param in module.named_parameters():
            n = param.numel()
            layout.append(Segment(name, cursor, cursor + n, tuple(param.shape)))
            chunks.append(param.detach().reshape(-1).to(torch.float64))
            cursor += n
        values = torch.cat(chunks) if chunks else torch.zeros(0, dtype=torch.float64)
        vec = cls(values.clone(), tuple(layout))
        vec.require_finite()
        return vec

    def __len__(self) -> int:
        return self.values.numel()

    def segment(self, name: str) -> torch.Tensor:
        for seg in self.layout:
            if seg.name == name:
                return self.values[seg.start:seg.stop].view(seg.shape)
        raise KeyError(name)

    def as_dict(self) -> dict[str, torch.Tensor]:
        """Views of `values` keyed by parameter name (gradients flow to `values`)."""
        return {seg.name: self.values[seg.start:seg.stop].view(seg.shape) for seg in self.layout}

    def segment_of(self, index: int) -> str:
        for seg in self.layout:
            if seg.start <= index < seg.stop:
                return seg.name
        raise IndexError(index)

    def require_finite(self, what: str = "parameter") -> None:
        for seg in self.layout:
            if not torch.isfinite(self.values[seg.start:seg.stop]).all():
                raise NonFiniteError(f"non-finite {what}", segment=seg.name)

    def load_into(self, module: nn.Module) -> None:
        """Copy the values into the module's parameters in place."""
        params = dict(module.named_parameters())
        with torch.no_grad():
            for name, view in self.as_dict().items():
                params[name].copy_(view)


@dataclass(frozen=True, eq=False)
class GradVector:
    """Gradient of a scalar loss with the same layout as its ParamVector."""
    values: torch.Tensor
    layout: tuple[Segment, ...]

    def __post_init__(self):
        _check_tiling(self.layout, self.values.numel())

    def __len__(self) -> int:
        return self.values.numel()


@dataclass(frozen=True, eq=False)
class OptimizerState:
    """Adam moments and hyper-parameters."""
    first_moment: torch.Tensor
    second_moment: torch.Tensor
    step_count: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def fresh(cls, params: ParamVector, learning_rate: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, epsilon: float = 1e-8) -> "OptimizerState":
        if learning_rate <= 0 or not (0 < beta1 < 1) or not (0 < beta2 < 1) or epsilon <= 0:
            raise ValueError("invalid optimizer hyper-parameters")
        zeros = torch.zeros_like(params.values)
        return cls(zeros, zeros.clone(), 0, learning_rate, beta1, beta2, epsilon)


LossFn = Callable[[ParamVector], torch.Tensor]


def compute_gradient(loss_fn: LossFn, params: ParamVector) -> tuple[float, GradVector]:
    """
    Evaluate `loss_fn` at `params` and its exact gradient by reverse-mode accumulation.

    Raises:
        NonFiniteError: naming the first parameter segment with a non-finite
            value or gradient entry.
    """
    values = params.values.detach().clone().requires_grad_(True)
    tracked = ParamVector(values, params.layout)
    loss = loss_fn(tracked)
    if loss.dim() != 0:
        raise ShapeMismatchError(f"loss must be a scalar, got shape {tuple(loss.shape)}")
    if not torch.isfinite(loss):
        params.require_finite()
        raise NonFiniteError(f"non-finite loss {loss.item()}", segment="loss")
    (grad,) = torch.autograd.grad(loss, values, allow_unused=True)
    if grad is None:
        grad = torch.zeros_like(values)
    grad_vec = GradVector(grad.detach(), params.layout)
    ParamVector(grad_vec.values, params.layout).require_finite("gradient")
    return float(loss.detach()), grad_vec


def finite_difference(loss_fn: LossFn, params: ParamVector, indices: Iterable[int],
                      step: float = 1e-5) -> dict[int, float]:
    """Central differences at the given coordinates, step scaled by max(1, |theta_i|)."""
    base = params.values.detach().clone()
    estimates = {}
    with torch.no_grad():
        for i in indices:
            h = step * max(1.0, abs(float(base[i])))
            plus, minus = base.clone(), base.clone()
            plus[i] += h
            minus[i] -= h
            f_plus = float(loss_fn(ParamVector(plus, params.layout)))
            f_minus = float(loss_fn(ParamVector(minus, params.layout)))
            estimates[i] = (f_plus - f_minus) / float(plus[i] - minus[i])
    return estimates


def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def finite_difference_check(loss_fn: LossFn, params: ParamVector,
                            indices: Optional[Iterable[int]] = None,
                            per_segment: int = 8, seed: int = 0,
                            step: float = 1e-5) -> dict[str, float]:
    """
    Compare the analytic gradient with central differences.

    Without explicit `indices`, up to `per_segment` coordinates are drawn from
    every segment. Returns the maximum relative error per segment.
    """
    _, grad = compute_gradient(loss_fn, params)
    if indices is None:
        gen = torch.Generator().manual_seed(seed)
        picked = []
        for seg in params.layout:
            n = seg.stop - seg.start
            order = torch.randperm(n, generator=gen)[:per_segment]
            picked.extend(seg.start + int(k) for k in order)
        indices = picked
    numeric = finite_difference(loss_fn, params, indices, step=step)
    worst: dict[str, float] = {}
    for i, fd in numeric.items():
        err = relative_error(float(grad.values[i]), fd)
        name = params.segment_of(i)
        worst[name] = max(worst.get(name, 0.0), err)
    return worst


def optimizer_step(params: ParamVector, grad: GradVector,
                   state: OptimizerState) -> tuple[ParamVector, OptimizerState]:
    """One bias-corrected Adam update; pure function of its inputs."""
    if len(grad) != len(params) or state.first_moment.numel() != len(params):
        raise ShapeMismatchError(
            f"params={len(params)} grad={len(grad)} state={state.first_moment.numel()}"
        )
    if grad.layout != params.layout:
        raise ShapeMismatchError("gradient layout differs from parameter layout")

    g = grad.values
    step = state.step_count + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * g
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * (g * g)
    m_hat = m / (1.0 - state.beta1 ** step)
    v_hat = v / (1.0 - state.beta2 ** step)
    values = params.values - state.learning_rate * m_hat / (torch.sqrt(v_hat) + state.epsilon)

    new_params = ParamVector(values, params.layout)
    new_state = replace(state, first_moment=m, second_moment=v, step_count=step)
    return new_params, new_state
