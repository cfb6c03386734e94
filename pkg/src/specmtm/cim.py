"""Content-aware interaction modulation.

A complex affine map (shared across frequency bins) followed by a split
activation produces a modulation signal ``M``; the spectrum is then
multiplied by ``M`` bin by bin. By the convolution theorem this is a
content-dependent circular convolution in the time domain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .spectral import Spectrum

__all__ = [
    "ComplexAffineParams",
    "complex_affine",
    "split_activation",
    "complex_multiply",
    "modulation_signal",
    "cim_modulate",
    "CIM",
]

_ACTIVATIONS = {"relu": F.relu, "tanh": torch.tanh}


@dataclass
class ComplexAffineParams:
    w_re: torch.Tensor  # (d, d)
    w_im: torch.Tensor  # (d, d)
    b_re: torch.Tensor  # (d,)
    b_im: torch.Tensor  # (d,)

    @property
    def dim(self) -> int:
        return self.w_re.shape[0]

    def validate(self, d: int | None = None) -> None:
        n = self.w_re.shape[0]
        for name, t, shape in (
            ("w_re", self.w_re, (n, n)),
            ("w_im", self.w_im, (n, n)),
            ("b_re", self.b_re, (n,)),
            ("b_im", self.b_im, (n,)),
        ):
            if tuple(t.shape) != shape:
                raise ValueError(f"{name} has shape {tuple(t.shape)}, expected {shape}")
        if d is not None and d != n:
            raise ValueError(f"spectrum has {d} channels but params expect {n}")


def complex_affine(spec: Spectrum, p: ComplexAffineParams) -> Spectrum:
    """``(w_re + j w_im) Z + (b_re + j b_im)`` at every frequency bin, in real arithmetic."""
    p.validate(spec.shape[-1])
    re = spec.re @ p.w_re.T - spec.im @ p.w_im.T + p.b_re
    im = spec.im @ p.w_re.T + spec.re @ p.w_im.T + p.b_im
    return Spectrum(re, im)


def split_activation(spec: Spectrum, activation: str = "relu") -> Spectrum:
    try:
        fn = _ACTIVATIONS[activation]
    except KeyError:
        raise ValueError(f"unknown activation {activation!r}; choose from {sorted(_ACTIVATIONS)}")
    return Spectrum(fn(spec.re), fn(spec.im))


def complex_multiply(m: Spectrum, z: Spectrum) -> Spectrum:
    return Spectrum(m.re * z.re - m.im * z.im, m.re * z.im + m.im * z.re)


def modulation_signal(
    spec: Spectrum, p: ComplexAffineParams, activation: str = "relu"
) -> Spectrum:
    return split_activation(complex_affine(spec, p), activation)


def cim_modulate(
    spec: Spectrum,
    p: ComplexAffineParams,
    activation: str = "relu",
    content: Spectrum | None = None,
) -> Spectrum:
    """Modulate ``spec`` by the signal generated from ``content``.

    ``content`` defaults to ``spec`` itself. The decoder block passes a
    layer-normalized copy so the modulation is computed on a well-scaled
    input while the raw spectrum is what gets modulated.
    """
    m = modulation_signal(spec if content is None else content, p, activation)
    return complex_multiply(m, spec)


class CIM(nn.Module):
    """Learnable CIM unit.

    Weights start uniform in ``(-1/sqrt(d), 1/sqrt(d))`` and the bias at
    ``1 + 0j`` so the initial modulation sits near the identity.
    """

    def __init__(self, d: int, activation: str = "relu"):
        super().__init__()
        if activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.d = d
        self.activation = activation
        self.w_re = nn.Parameter(torch.empty(d, d))
        self.w_im = nn.Parameter(torch.empty(d, d))
        self.b_re = nn.Parameter(torch.empty(d))
        self.b_im = nn.Parameter(torch.empty(d))
        self.reset_parameters()

    def reset_parameters(self, identity: bool = False) -> None:
        bound = 1.0 / math.sqrt(self.d)
        with torch.no_grad():
            if identity:
                self.w_re.zero_()
                self.w_im.zero_()
            else:
                self.w_re.uniform_(-bound, bound)
                self.w_im.uniform_(-bound, bound)
            self.b_re.fill_(1.0)
            self.b_im.zero_()

    @property
    def params(self) -> ComplexAffineParams:
        return ComplexAffineParams(self.w_re, self.w_im, self.b_re, self.b_im)

    def forward(self, spec: Spectrum, content: Spectrum | None = None) -> Spectrum:
        return cim_modulate(spec, self.params, self.activation, content)
