"""Content-aware balanced decoder: iterative CIM -> SER blocks in the spectral domain.

Each block replaces the self-attention sublayer of a vanilla transformer
layer with CIM followed by SER. The modulation is multiplicative and starts
at ``M = 1``, so it plays the role of the attention residual branch. The
position-wise feed-forward sublayer keeps its usual pre-norm residual form,
acting on each frequency bin's ``[re, im]`` as one ``2d``-wide real vector.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .backbone import scatter_tokens, tokens_to_series
from .cim import CIM
from .ser import SER
from .spectral import Spectrum, dft_forward, dft_inverse

__all__ = ["CbdBlock", "CbdStack", "cbd_decode", "FrequencyDecoder"]


class CbdBlock(nn.Module):
    def __init__(self, d: int, num_bins: int, order: int = 12, ffn_mult: int = 4,
                 activation: str = "relu", per_channel_gate: bool = False,
                 use_cim: bool = True, use_ser: bool = True):
        super().__init__()
        self.d = d
        self.use_cim, self.use_ser = use_cim, use_ser
        self.cim = CIM(d, activation)
        self.ser = SER(num_bins, order, channels=d if per_channel_gate else None)
        # real and imaginary parts are normalized independently
        self.norm_re = nn.LayerNorm(d)
        self.norm_im = nn.LayerNorm(d)
        self.ffn_norm_re = nn.LayerNorm(d)
        self.ffn_norm_im = nn.LayerNorm(d)
        self.ff1 = nn.Linear(2 * d, ffn_mult * d)
        self.ff2 = nn.Linear(ffn_mult * d, 2 * d)
        nn.init.zeros_(self.ff2.weight)
        nn.init.zeros_(self.ff2.bias)

    def reset_identity(self) -> None:
        """CIM bias-only (``M = 1``), SER unit filter, zero feed-forward output."""
        self.cim.reset_parameters(identity=True)
        with torch.no_grad():
            self.ser.w_c.zero_()
            self.ser.b_c.fill_(1.0)
            self.ff2.weight.zero_()
            self.ff2.bias.zero_()

    def content(self, spec: Spectrum) -> Spectrum:
        return Spectrum(self.norm_re(spec.re), self.norm_im(spec.im))

    def feed_forward(self, spec: Spectrum) -> Spectrum:
        h = torch.cat([self.ffn_norm_re(spec.re), self.ffn_norm_im(spec.im)], dim=-1)
        out = self.ff2(F.gelu(self.ff1(h)))
        return Spectrum(out[..., : self.d], out[..., self.d :])

    def forward(self, spec: Spectrum) -> Spectrum:
        if spec.shape[-1] != self.d:
            raise ValueError(f"block expects {self.d} channels, got {spec.shape[-1]}")
        if spec.num_bins != self.ser.num_bins:
            raise ValueError(f"block expects {self.ser.num_bins} bins, got {spec.num_bins}")
        h = self.cim(spec, self.content(spec)) if self.use_cim else spec
        if self.use_ser:
            h = self.ser(h)
        return h + self.feed_forward(h)


class CbdStack(nn.Module):
    """``U`` blocks with independent parameters, applied in order."""

    def __init__(self, d: int, num_bins: int, depth: int = 2, **block_kw):
        super().__init__()
        if depth < 1:
            raise ValueError("CBD depth must be >= 1")
        self.blocks = nn.ModuleList(CbdBlock(d, num_bins, **block_kw) for _ in range(depth))

    def reset_identity(self) -> None:
        for block in self.blocks:
            block.reset_identity()

    def forward(self, spec: Spectrum, return_all: bool = False):
        outs = []
        for block in self.blocks:
            spec = block(spec)
            outs.append(spec)
        return outs if return_all else spec


def cbd_decode(
    encoder_features: torch.Tensor,
    mask: torch.Tensor,
    stack: CbdStack,
    mask_token: torch.Tensor,
    pos: torch.Tensor | None = None,
) -> Spectrum:
    """Scatter visible features + mask token, add positions, DFT, run every block."""
    full = scatter_tokens(encoder_features, mask, mask_token)
    if pos is not None:
        full = full + pos[: full.shape[1]]
    return stack(dft_forward(full))


class FrequencyDecoder(nn.Module):
    """CBD branch of the pre-training model.

    The refined token spectrum is brought back to the token domain, each
    token is projected to its raw window, and the resulting series is
    transformed again so the output is a spectrum on the raw time grid,
    directly comparable with the transform of the ground truth.
    """

    def __init__(self, d: int, num_tokens: int, out_channels: int, window: int = 8,
                 depth: int = 2, **block_kw):
        super().__init__()
        self.window, self.out_channels = window, out_channels
        self.mask_token = nn.Parameter(torch.zeros(d))
        self.pos = nn.Parameter(torch.randn(num_tokens, d) * 0.02)
        self.stack = CbdStack(d, num_tokens, depth, **block_kw)
        self.head = nn.Linear(d, window * out_channels)

    def token_spectrum(self, visible: torch.Tensor, mask: torch.Tensor) -> Spectrum:
        return cbd_decode(visible, mask, self.stack, self.mask_token, self.pos)

    def forward(self, visible: torch.Tensor, mask: torch.Tensor) -> Spectrum:
        tokens = dft_inverse(self.token_spectrum(visible, mask))
        series = tokens_to_series(self.head(tokens), self.out_channels)
        return dft_forward(series)
