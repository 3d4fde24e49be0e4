"""Parameters, initialization, and the ADAM optimizer with LR schedule."""

from __future__ import annotations

from typing import Dict, Iterable, List

import numpy as np

from .autograd import ContractViolation, Tensor, default_dtype


class Parameter:
    """A named trainable tensor with ADAM moment accumulators."""

    def __init__(self, name: str, tensor: Tensor):
        if not tensor.requires_grad:
            raise ContractViolation(f"parameter {name!r} must require grad")
        self.name = name
        self.tensor = tensor
        self.adam_m = np.zeros_like(tensor.data)
        self.adam_v = np.zeros_like(tensor.data)
        self.step_count = 0

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data


class ParamStore:
    """Ordered collection of uniquely named parameters."""

    def __init__(self, prefix: str = ""):
        self.prefix = prefix
        self._params: Dict[str, Parameter] = {}

    def add(self, name: str, values: np.ndarray) -> Tensor:
        full = f"{self.prefix}.{name}" if self.prefix else name
        if full in self._params:
            raise ContractViolation(f"duplicate parameter name {full!r}")
        t = Tensor(np.asarray(values, dtype=default_dtype()), requires_grad=True)
        self._params[full] = Parameter(full, t)
        return t

    def merge(self, other: "ParamStore"):
        for p in other.parameters():
            if p.name in self._params:
                raise ContractViolation(f"duplicate parameter name {p.name!r}")
            self._params[p.name] = p

    def parameters(self) -> List[Parameter]:
        return list(self._params.values())

    def count(self) -> int:
        return sum(p.data.size for p in self._params.values())

    def arrays(self) -> Dict[str, np.ndarray]:
        return {name: p.data for name, p in self._params.items()}

    def load_arrays(self, arrays: Dict[str, np.ndarray]):
        for name, p in self._params.items():
            if name not in arrays:
                raise KeyError(f"checkpoint missing parameter {name!r}")
            src = np.asarray(arrays[name])
            if src.shape != p.data.shape:
                raise ValueError(
                    f"parameter {name!r}: checkpoint shape {src.shape} != {p.data.shape}"
                )
            p.tensor.data = src.astype(p.data.dtype)
            p.adam_m = np.zeros_like(p.tensor.data)
            p.adam_v = np.zeros_like(p.tensor.data)
            p.step_count = 0

    def zero_grad(self):
        for p in self._params.values():
            p.tensor.grad = None


def fan_in_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def adam_update(params: Iterable[Parameter], lr: float,
                beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """Standard ADAM with bias correction; clears grads after the step."""
    for p in params:
        g = p.tensor.grad
        if g is None:
            raise ContractViolation(f"parameter {p.name!r} has no gradient")
        p.step_count += 1
        np.multiply(p.adam_m, beta1, out=p.adam_m)
        p.adam_m += (1.0 - beta1) * g
        np.multiply(p.adam_v, beta2, out=p.adam_v)
        p.adam_v += (1.0 - beta2) * (g * g)
        denom = np.sqrt(p.adam_v / (1.0 - beta2 ** p.step_count))
        denom += eps
        update = p.adam_m / (1.0 - beta1 ** p.step_count)
        update /= denom
        update *= lr
        p.tensor.data -= update.astype(p.data.dtype, copy=False)
        p.tensor.grad = None


def lr_schedule(iteration: int, base: float = 1e-3, decay: float = 0.9,
                every: int = 12000, floor: float = 1e-5) -> float:
    """Step decay: base * decay^(iteration // every), floored."""
    return max(floor, base * decay ** (iteration // every))


def seeded_rng(seed: int, *tags: str) -> np.random.Generator:
    """Derive an independent named substream from one master seed."""
    import zlib

    entropy = [seed & 0xFFFFFFFFFFFFFFFF] + [zlib.crc32(t.encode()) for t in tags]
    return np.random.default_rng(np.random.SeedSequence(entropy))
