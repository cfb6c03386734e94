"""Temporal-axis discrete Fourier transform for feature tensors.

Feature tensors are real arrays shaped ``(..., T, d)``: the second-to-last
axis is time, the last axis is channels. A :class:`Spectrum` stores the
real and imaginary parts of the full two-sided transform separately, shaped
``(..., S, d)`` with ``S == T``.

Convention: unnormalized forward transform, ``1/T`` on the inverse::

    Z_F[s] = sum_t z[t] exp(-2j*pi*s*t/T)
    z[t]   = Re( (1/T) sum_s Z_F[s] exp(+2j*pi*s*t/T) )

Both directions carry explicit adjoint backward passes, so gradients do not
depend on autograd support for complex dtypes.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

__all__ = [
    "Spectrum",
    "dft_forward",
    "dft_inverse",
    "inverse_residue",
    "amplitude",
    "circular_convolve",
    "energy",
    "check_finite",
]


def check_finite(t: torch.Tensor, name: str = "input") -> None:
    """Raise ``ValueError`` naming the first non-finite entry of ``t``."""
    if t.is_floating_point() and not torch.isfinite(t).all():
        bad = torch.nonzero(~torch.isfinite(t))[0].tolist()
        raise ValueError(f"{name} has a non-finite entry at index {tuple(bad)}")


@dataclass(frozen=True)
class Spectrum:
    """Complex spectrum split into real and imaginary parts of equal shape."""

    re: torch.Tensor
    im: torch.Tensor

    def __post_init__(self):
        if self.re.shape != self.im.shape:
            raise ValueError(
                f"real/imaginary shape mismatch: {tuple(self.re.shape)} vs {tuple(self.im.shape)}"
            )

    @property
    def shape(self) -> torch.Size:
        return self.re.shape

    @property
    def num_bins(self) -> int:
        return self.re.shape[-2]

    def __add__(self, other: "Spectrum") -> "Spectrum":
        return Spectrum(self.re + other.re, self.im + other.im)

    def __sub__(self, other: "Spectrum") -> "Spectrum":
        return Spectrum(self.re - other.re, self.im - other.im)

    def scale(self, factor) -> "Spectrum":
        return Spectrum(self.re * factor, self.im * factor)

    def to_complex(self) -> torch.Tensor:
        return torch.complex(self.re, self.im)

    @classmethod
    def from_complex(cls, z: torch.Tensor) -> "Spectrum":
        return cls(z.real.contiguous(), z.imag.contiguous())

    def detach(self) -> "Spectrum":
        return Spectrum(self.re.detach(), self.im.detach())


class _ForwardDFT(torch.autograd.Function):
    # y = F x with x real. Adjoint on (g_re, g_im): Re(F^H g) = Re(T * ifft(g)).

    @staticmethod
    def forward(ctx, x):
        z = torch.fft.fft(x, dim=-2)
        return z.real.contiguous(), z.imag.contiguous()

    @staticmethod
    def backward(ctx, g_re, g_im):
        if g_re is None and g_im is None:
            return None
        ref = g_re if g_re is not None else g_im
        g_re = torch.zeros_like(ref) if g_re is None else g_re
        g_im = torch.zeros_like(ref) if g_im is None else g_im
        n = ref.shape[-2]
        g = torch.complex(g_re, g_im)
        return (torch.fft.ifft(g, dim=-2) * n).real.contiguous()


class _InverseDFT(torch.autograd.Function):
    # x = Re(F^{-1} z). Adjoint: (Re, Im) of F(g) / T.

    @staticmethod
    def forward(ctx, re, im):
        return torch.fft.ifft(torch.complex(re, im), dim=-2).real.contiguous()

    @staticmethod
    def backward(ctx, g):
        n = g.shape[-2]
        gz = torch.fft.fft(g, dim=-2) / n
        return gz.real.contiguous(), gz.imag.contiguous()


def dft_forward(z: torch.Tensor) -> Spectrum:
    """Full-length DFT of a real ``(..., T, d)`` tensor along the time axis."""
    if z.dim() < 2:
        raise ValueError("feature tensor needs at least 2 dims (T, d)")
    if z.shape[-2] < 1 or z.shape[-1] < 1:
        raise ValueError(f"empty feature tensor of shape {tuple(z.shape)}")
    check_finite(z, "feature tensor")
    re, im = _ForwardDFT.apply(z)
    return Spectrum(re, im)


def dft_inverse(spec: Spectrum) -> torch.Tensor:
    """Inverse DFT keeping the real part; see :func:`inverse_residue`."""
    check_finite(spec.re, "spectrum real part")
    check_finite(spec.im, "spectrum imaginary part")
    return _InverseDFT.apply(spec.re, spec.im)


def inverse_residue(spec: Spectrum) -> float:
    """L2 norm of the imaginary part discarded by :func:`dft_inverse`."""
    with torch.no_grad():
        z = torch.fft.ifft(spec.to_complex(), dim=-2)
        return float(torch.linalg.vector_norm(z.imag))


def amplitude(spec: Spectrum) -> torch.Tensor:
    """Entrywise modulus ``sqrt(re**2 + im**2)``.

    The gradient at an exact zero is defined as zero rather than NaN.
    """
    sq = spec.re * spec.re + spec.im * spec.im
    pos = sq > 0
    safe = torch.where(pos, sq, torch.ones_like(sq))
    return torch.where(pos, torch.sqrt(safe), torch.zeros_like(sq))


def circular_convolve(k: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
    """Per-channel circular convolution ``out[t] = sum_tau k[tau] z[(t - tau) mod T]``.

    Evaluated by direct summation; this is the time-domain side of the
    convolution theorem and deliberately avoids any transform.
    """
    if k.shape != z.shape:
        raise ValueError(f"shape mismatch: {tuple(k.shape)} vs {tuple(z.shape)}")
    n = z.shape[-2]
    t = torch.arange(n, device=z.device)
    idx = (t[:, None] - t[None, :]) % n  # [t, tau] -> t - tau
    shifted = z[..., idx, :]  # (..., T, T, d)
    return (k.unsqueeze(-3) * shifted).sum(dim=-2)


def energy(x) -> torch.Tensor:
    """Total squared magnitude of a feature tensor or spectrum over the last two axes."""
    if isinstance(x, Spectrum):
        return (x.re * x.re + x.im * x.im).sum(dim=(-2, -1))
    return (x * x).sum(dim=(-2, -1))
