"""Spectrum energy rebalance.

Each frequency bin is scaled by a Bernstein polynomial evaluated at that
bin's softmax-normalized amplitude. The polynomial coefficients come from an
affine gate over the whole normalized amplitude profile, so the filter shape
adapts to the energy distribution of the input.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .spectral import Spectrum, amplitude

__all__ = [
    "GatingParams",
    "bernstein_basis",
    "bernstein_eval",
    "normalize_energy",
    "gate_coefficients",
    "ser_scale",
    "ser_rebalance",
    "SER",
]

MAX_ORDER = 32


@dataclass
class GatingParams:
    """Gate weights ``w_c`` of shape ``(K+1, S)`` and bias ``b_c`` of shape ``(K+1,)``.

    With per-channel gating the shapes gain a leading channel axis:
    ``(d, K+1, S)`` and ``(d, K+1)``.
    """

    w_c: torch.Tensor
    b_c: torch.Tensor

    @property
    def per_channel(self) -> bool:
        return self.w_c.dim() == 3

    @property
    def order(self) -> int:
        return self.w_c.shape[-2] - 1

    @property
    def num_bins(self) -> int:
        return self.w_c.shape[-1]

    def validate(self) -> None:
        if self.order < 1:
            raise ValueError("Bernstein order K must be >= 1")
        if self.b_c.shape != self.w_c.shape[:-1]:
            raise ValueError(
                f"b_c shape {tuple(self.b_c.shape)} inconsistent with w_c {tuple(self.w_c.shape)}"
            )


def bernstein_basis(K: int, w) -> torch.Tensor:
    """All ``K+1`` Bernstein basis polynomials of order ``K`` at ``w``.

    Returns a tensor of shape ``w.shape + (K+1,)``. Built with the
    degree-raising recurrence ``B_k^n = (1-w) B_k^{n-1} + w B_{k-1}^{n-1}``,
    which never forms a binomial coefficient or a large power.
    """
    if K < 1 or K > MAX_ORDER:
        raise ValueError(f"order K must be in [1, {MAX_ORDER}], got {K}")
    if not torch.is_tensor(w):
        w = torch.tensor(w, dtype=torch.get_default_dtype())
    elif not w.is_floating_point():
        w = w.to(torch.get_default_dtype())
    if ((w < 0) | (w > 1)).any() or not torch.isfinite(w).all():
        raise ValueError("Bernstein argument must lie in [0, 1]")
    w = w.unsqueeze(-1)
    one_minus = 1.0 - w
    basis = torch.ones_like(w)
    for _ in range(K):
        zero = torch.zeros_like(w)
        basis = torch.cat([one_minus * basis, zero], dim=-1) + torch.cat([zero, w * basis], dim=-1)
    return basis


def bernstein_eval(theta: torch.Tensor, w: torch.Tensor) -> torch.Tensor:
    """``sum_k theta[..., k] * B_k^K(w)`` with ``K = theta.shape[-1] - 1``."""
    basis = bernstein_basis(theta.shape[-1] - 1, w)
    return (basis * theta).sum(dim=-1)


def normalize_energy(a: torch.Tensor) -> torch.Tensor:
    """Softmax over the frequency axis (``-2``), independently per channel."""
    return torch.softmax(a, dim=-2)


def gate_coefficients(a_norm: torch.Tensor, g: GatingParams, channels_last: bool = False) -> torch.Tensor:
    """Affine gate ``w_c @ a_norm + b_c``.

    By default ``a_norm`` is one channel's profile ``(..., S)`` and the result
    is ``(..., K+1)``. With ``channels_last`` it is a multichannel profile
    ``(..., S, d)`` and the result is ``(..., K+1, d)``; the gate is shared
    across channels unless ``g`` is per-channel.
    """
    g.validate()
    S = g.num_bins
    axis = -2 if channels_last else -1
    if a_norm.dim() < (2 if channels_last else 1) or a_norm.shape[axis] != S:
        raise ValueError(f"normalized amplitude of shape {tuple(a_norm.shape)} needs {S} bins on axis {axis}")
    if not channels_last:
        if g.per_channel:
            raise ValueError("per-channel gates need a channels_last profile")
        return a_norm @ g.w_c.T + g.b_c
    if g.per_channel:
        if a_norm.shape[-1] != g.w_c.shape[0]:
            raise ValueError("channel count does not match per-channel gate")
        return torch.einsum("cks,...sc->...kc", g.w_c, a_norm) + g.b_c.T
    return torch.einsum("ks,...sc->...kc", g.w_c, a_norm) + g.b_c[:, None]


def ser_scale(a_norm: torch.Tensor, theta: torch.Tensor) -> torch.Tensor:
    """Per-bin scale ``p_K(a_norm[s])`` for coefficients ``theta`` of shape ``(..., K+1, d)``."""
    basis = bernstein_basis(theta.shape[-2] - 1, a_norm)  # (..., S, d, K+1)
    return torch.einsum("...sdk,...kd->...sd", basis, theta)


def ser_rebalance(
    spec: Spectrum, g: GatingParams | None = None, coefficients: torch.Tensor | None = None
) -> Spectrum:
    """Scale every bin of ``spec`` by its Bernstein energy response.

    ``coefficients`` (shape ``(..., K+1, d)``) bypasses the gate when given.
    The scale is real, so phase is preserved wherever it is positive; it is
    not clamped.
    """
    a_norm = normalize_energy(amplitude(spec))
    if coefficients is None:
        if g is None:
            raise ValueError("either gating params or explicit coefficients are required")
        if spec.num_bins != g.num_bins:
            raise ValueError(f"spectrum has {spec.num_bins} bins but gate expects {g.num_bins}")
        coefficients = gate_coefficients(a_norm, g, channels_last=True)
    scale = ser_scale(a_norm, coefficients)
    return Spectrum(scale * spec.re, scale * spec.im)


class SER(nn.Module):
    """Learnable SER unit; starts as the unit filter (``w_c = 0``, ``b_c = 1``)."""

    def __init__(self, num_bins: int, order: int = 12, channels: int | None = None):
        super().__init__()
        if order < 1 or order > MAX_ORDER:
            raise ValueError(f"order must be in [1, {MAX_ORDER}]")
        self.num_bins = num_bins
        self.order = order
        lead = () if channels is None else (channels,)
        self.w_c = nn.Parameter(torch.zeros(*lead, order + 1, num_bins))
        self.b_c = nn.Parameter(torch.ones(*lead, order + 1))

    @property
    def params(self) -> GatingParams:
        return GatingParams(self.w_c, self.b_c)

    def forward(self, spec: Spectrum) -> Spectrum:
        return ser_rebalance(spec, self.params)
