"""Complex tensor primitives, gradient extraction, Xavier init and Adam.

Tensors are ``torch.complex128``; torch autograd records the operations.
For a real scalar loss, the gradient torch stores on a complex leaf is
``dL/dRe + 1j * dL/dIm``, i.e. real and imaginary parts are treated as
independent coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

CDTYPE = torch.complex128
RDTYPE = torch.float64

LEAKY_SLOPE = 0.2


class ShapeError(ValueError):
    pass


class GradientError(RuntimeError):
    pass


def as_ctensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x.to(CDTYPE)
    return torch.as_tensor(np.asarray(x, dtype=np.complex128))


def _shape_str(*ts):
    return ", ".join(str(tuple(t.shape)) for t in ts)


# ---------------------------------------------------------------- primitives

def matmul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Matrix-matrix or matrix-vector product with an explicit shape check."""
    if a.ndim < 1 or b.ndim < 1 or a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError(f"matmul shape mismatch: {_shape_str(a, b)}")
    return a @ b


def herm(a: torch.Tensor) -> torch.Tensor:
    return a.transpose(-2, -1).conj()


def add(a, b):
    try:
        return a + b
    except RuntimeError as exc:
        raise ShapeError(f"add shape mismatch: {_shape_str(a, b)}") from exc


def mul(a, b):
    try:
        return a * b
    except RuntimeError as exc:
        raise ShapeError(f"mul shape mismatch: {_shape_str(a, b)}") from exc


def abs2(z: torch.Tensor) -> torch.Tensor:
    if z.is_complex():
        return z.real**2 + z.imag**2
    return z**2


def real(z: torch.Tensor) -> torch.Tensor:
    return z.real if z.is_complex() else z


def concat(ts, dim=-1) -> torch.Tensor:
    try:
        return torch.cat(list(ts), dim=dim)
    except RuntimeError as exc:
        raise ShapeError(f"concat shape mismatch: {_shape_str(*ts)}") from exc


def log(x: torch.Tensor) -> torch.Tensor:
    if x.is_complex():
        raise TypeError("log is defined for real tensors only")
    if bool((x <= 0).any()):
        raise ValueError("log of non-positive value")
    return torch.log(x)


def log2(x: torch.Tensor) -> torch.Tensor:
    return log(x) / math.log(2.0)


def exp(x: torch.Tensor) -> torch.Tensor:
    return torch.exp(x)


def softmax(x: torch.Tensor, dim=-1) -> torch.Tensor:
    return torch.softmax(x, dim=dim)


def _split_apply(fn, z):
    if z.is_complex():
        return torch.complex(fn(z.real), fn(z.imag))
    return fn(z)


def relu(z):
    return _split_apply(torch.relu, z)


def leaky_relu(z, slope=LEAKY_SLOPE):
    return _split_apply(lambda t: torch.nn.functional.leaky_relu(t, slope), z)


def selu(z):
    return _split_apply(torch.selu, z)


def norm(z: torch.Tensor, dim=None) -> torch.Tensor:
    """Euclidean norm (over all entries when ``dim`` is None)."""
    return torch.sqrt(abs2(z).sum() if dim is None else abs2(z).sum(dim=dim))


# ---------------------------------------------------------------- gradients

def backward(loss: torch.Tensor, params) -> list[torch.Tensor]:
    """Gradients of a real scalar ``loss`` w.r.t. each tensor in ``params``.

    Unreachable parameters get an exact zero. The recorded graph is released,
    so calling this a second time on the same loss raises ``GradientError``.
    """
    params = list(params)
    if loss.numel() != 1:
        raise GradientError(f"loss must be a scalar, got shape {tuple(loss.shape)}")
    if loss.is_complex():
        raise GradientError("loss must be real")
    if not bool(torch.isfinite(loss).all()):
        raise GradientError(f"non-finite loss: {loss.item()}")
    try:
        grads = torch.autograd.grad(loss.reshape(()), params, allow_unused=True)
    except RuntimeError as exc:
        raise GradientError(f"tape already consumed or not traced: {exc}") from exc
    return [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]


# ---------------------------------------------------------------- init

def xavier_bound(fan_in: int, fan_out: int) -> float:
    return math.sqrt(6.0 / (fan_in + fan_out))


def xavier_init(shape, fan_in: int, fan_out: int, rng_seed) -> torch.Tensor:
    """Complex Glorot-uniform tensor; real and imaginary parts drawn independently."""
    if fan_in < 1 or fan_out < 1:
        raise ValueError("fan_in and fan_out must be >= 1")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    b = xavier_bound(fan_in, fan_out)
    re = rng.uniform(-b, b, size=shape)
    im = rng.uniform(-b, b, size=shape)
    return torch.as_tensor(re + 1j * im, dtype=CDTYPE)


# ---------------------------------------------------------------- Adam

@dataclass
class AdamState:
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params, **hyper) -> "AdamState":
        m = [torch.zeros(_real_view(p).shape, dtype=RDTYPE) for p in params]
        v = [torch.zeros_like(x) for x in m]
        return cls(m=m, v=v, **hyper)


def _real_view(t: torch.Tensor) -> torch.Tensor:
    return torch.view_as_real(t) if t.is_complex() else t


@torch.no_grad()
def adam_step(params, grads, state: AdamState, lr: float) -> AdamState:
    """One bias-corrected Adam update, applied in place to ``params``.

    Complex parameters are updated coordinate-wise on (re, im).
    """
    if lr <= 0:
        raise ValueError("lr must be positive")
    params, grads = list(params), list(grads)
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ShapeError("params, grads and Adam state disagree in length")
    for g in grads:
        if bool(torch.isnan(g).any()):
            raise GradientError("NaN in gradients; refusing to update")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        pr, gr = _real_view(p), _real_view(g)
        if pr.shape != gr.shape or m.shape != pr.shape:
            raise ShapeError(f"adam shape mismatch: {_shape_str(pr, gr, m)}")
        m.mul_(b1).add_(gr, alpha=1 - b1)
        v.mul_(b2).addcmul_(gr, gr, value=1 - b2)
        pr.sub_(lr * (m / c1) / (torch.sqrt(v / c2) + state.eps))
    return state
