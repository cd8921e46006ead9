"""Small parameter containers shared by the model components."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import backbone as B
from .backbone import Parameter


class Module:
    """Attribute-walking parameter container.

    Parameters are discovered in attribute insertion order, recursing into
    child modules and lists of modules; that order is the canonical one used
    by checkpoints and the optimizer.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()


def uniform_weight(rng: np.random.Generator, *shape: int, fan_in: int | None = None) -> Parameter:
    fan_in = shape[-2] if fan_in is None else fan_in
    bound = 1.0 / np.sqrt(fan_in)
    return Parameter(rng.uniform(-bound, bound, size=shape))


def zeros(*shape: int) -> Parameter:
    return Parameter(np.zeros(shape))


class Linear(Module):
    def __init__(self, rng: np.random.Generator, d_in: int, d_out: int, bias: bool = True):
        self.weight = uniform_weight(rng, d_in, d_out)
        if bias:
            self.bias = zeros(d_out)
        else:
            self.bias = None

    def __call__(self, x):
        return B.linear(x, self.weight, self.bias)


class MLP(Module):
    """linear -> relu -> linear."""

    def __init__(self, rng: np.random.Generator, d_in: int, d_hidden: int, d_out: int):
        self.fc1 = Linear(rng, d_in, d_hidden)
        self.fc2 = Linear(rng, d_hidden, d_out)

    def __call__(self, x):
        return self.fc2(B.relu(self.fc1(x)))


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        self.gain = Parameter(np.ones(d))
        self.bias = zeros(d)
        self.eps = eps

    def __call__(self, x):
        return B.layer_norm(x, self.gain, self.bias, self.eps)
