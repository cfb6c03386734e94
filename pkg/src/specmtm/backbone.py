"""Token embedding, random masking, transformer encoder, temporal decoder and
classification head of the masked time-series model.

Shapes: raw batches are ``(N, L, C)``; token features are ``(N, T, d)`` with
``T = L // window``. Masks are boolean ``(N, T)`` tensors, ``True`` = masked.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

log = logging.getLogger(__name__)

__all__ = [
    "MaskPlan",
    "make_mask",
    "sample_masks",
    "gather_visible",
    "scatter_tokens",
    "ConvEmbedding",
    "TransformerLayer",
    "Encoder",
    "TemporalDecoder",
    "ClassificationHead",
    "tokens_to_series",
]


@dataclass(frozen=True)
class MaskPlan:
    masked_indices: tuple[int, ...]
    ratio: float
    seed: int
    length: int

    def as_bool(self) -> torch.Tensor:
        m = torch.zeros(self.length, dtype=torch.bool)
        m[list(self.masked_indices)] = True
        return m


def _num_masked(T: int, ratio: float) -> int:
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"mask ratio must be in [0, 1], got {ratio}")
    return int(round(ratio * T))


def make_mask(T: int, ratio: float, seed: int) -> MaskPlan:
    """Uniformly choose ``round(ratio*T)`` of ``T`` token positions to mask."""
    k = _num_masked(T, ratio)
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(T, size=k, replace=False)) if k else np.empty(0, dtype=int)
    return MaskPlan(tuple(int(i) for i in idx), float(ratio), int(seed), int(T))


def sample_masks(N: int, T: int, ratio: float, rng: np.random.Generator) -> torch.Tensor:
    """One independent uniform mask per sample, same count for every row."""
    k = _num_masked(T, ratio)
    order = np.argsort(rng.random((N, T)), axis=1)
    mask = np.zeros((N, T), dtype=bool)
    np.put_along_axis(mask, order[:, :k], True, axis=1)
    return torch.from_numpy(mask)


def gather_visible(x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Drop masked rows: ``(N, T, d)`` -> ``(N, V, d)`` preserving time order."""
    N, T, d = x.shape
    if mask.shape != (N, T):
        raise ValueError(f"mask shape {tuple(mask.shape)} does not match tokens {(N, T)}")
    counts = (~mask).sum(dim=1)
    if (counts != counts[0]).any():
        raise ValueError("every sample must have the same number of visible tokens")
    return x[~mask].reshape(N, int(counts[0]), d)


def scatter_tokens(visible: torch.Tensor, mask: torch.Tensor, mask_token: torch.Tensor) -> torch.Tensor:
    """Inverse of :func:`gather_visible`, filling masked rows with ``mask_token``."""
    N, T = mask.shape
    d = visible.shape[-1]
    n_vis = int((~mask[0]).sum()) if N else 0
    if visible.shape[:2] != (N, n_vis) or ((~mask).sum(dim=1) != n_vis).any():
        raise ValueError(
            f"{tuple(visible.shape[:2])} visible features inconsistent with mask of shape {(N, T)}"
        )
    full = mask_token.to(visible.dtype).expand(N, T, d)
    keep = (~mask).unsqueeze(-1)
    placed = torch.zeros(N, T, d, dtype=visible.dtype, device=visible.device)
    placed = placed.masked_scatter(keep, visible.reshape(-1, d))
    return torch.where(keep, placed, full)


def tokens_to_series(windows: torch.Tensor, channels: int) -> torch.Tensor:
    """``(N, T, window*C)`` per-token windows -> ``(N, T*window, C)`` series."""
    N, T, wc = windows.shape
    return windows.reshape(N, T * (wc // channels), channels)


class ConvEmbedding(nn.Module):
    """Non-overlapping 1-D convolution (kernel = stride = window) plus learned positions."""

    def __init__(self, in_channels: int, d: int, window: int = 8, max_tokens: int = 512):
        super().__init__()
        self.window = window
        self.in_channels = in_channels
        self.conv = nn.Conv1d(in_channels, d, kernel_size=window, stride=window)
        self.pos = nn.Parameter(torch.randn(max_tokens, d) * 0.02)

    def truncate(self, x: torch.Tensor) -> torch.Tensor:
        L = x.shape[1]
        if L < self.window:
            raise ValueError(f"series length {L} shorter than the embedding window {self.window}")
        keep = (L // self.window) * self.window
        if keep != L:
            log.info("right-truncating series from %d to %d timestamps", L, keep)
        return x[:, :keep]

    def tokens(self, x: torch.Tensor) -> torch.Tensor:
        """Convolution only, no positional encoding."""
        x = self.truncate(x)
        if x.shape[-1] != self.in_channels:
            raise ValueError(f"expected {self.in_channels} channels, got {x.shape[-1]}")
        return self.conv(x.transpose(1, 2)).transpose(1, 2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        z = self.tokens(x)
        T = z.shape[1]
        if T > self.pos.shape[0]:
            raise ValueError(f"{T} tokens exceed the positional table of {self.pos.shape[0]}")
        return z + self.pos[:T]


class TransformerLayer(nn.Module):
    """Pre-norm transformer layer that keeps its last attention weights."""

    def __init__(self, d: int, heads: int = 4, ffn_mult: int = 4, dropout: float = 0.0):
        super().__init__()
        if d % heads:
            raise ValueError(f"hidden size {d} not divisible by {heads} heads")
        self.d, self.heads = d, heads
        self.norm1 = nn.LayerNorm(d)
        self.qkv = nn.Linear(d, 3 * d)
        self.proj = nn.Linear(d, d)
        self.norm2 = nn.LayerNorm(d)
        self.ff1 = nn.Linear(d, ffn_mult * d)
        self.ff2 = nn.Linear(ffn_mult * d, d)
        self.drop = nn.Dropout(dropout)
        self.last_attn: torch.Tensor | None = None

    def zero_residual_branches(self) -> None:
        """Zero the value/output projections and FFN output so the layer is the identity."""
        with torch.no_grad():
            d = self.d
            self.qkv.weight[2 * d :].zero_()
            self.qkv.bias[2 * d :].zero_()
            self.proj.weight.zero_()
            self.proj.bias.zero_()
            self.ff2.weight.zero_()
            self.ff2.bias.zero_()

    def attention(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        N, V, d = x.shape
        hd = d // self.heads
        q, k, v = self.qkv(x).split(d, dim=-1)
        q, k, v = (t.reshape(N, V, self.heads, hd).transpose(1, 2) for t in (q, k, v))
        attn = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(hd), dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(N, V, d)
        return self.proj(out), attn

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        a, attn = self.attention(self.norm1(x))
        self.last_attn = attn.detach()
        x = x + self.drop(a)
        return x + self.drop(self.ff2(F.gelu(self.ff1(self.norm2(x)))))


class Encoder(nn.Module):
    """Stack of transformer layers over the visible tokens."""

    def __init__(self, d: int, layers: int = 8, heads: int = 4, ffn_mult: int = 4):
        super().__init__()
        self.layers = nn.ModuleList(TransformerLayer(d, heads, ffn_mult) for _ in range(layers))

    def forward(self, visible: torch.Tensor) -> torch.Tensor:
        if visible.shape[-2] == 0:
            raise ValueError("encoder received no visible tokens")
        for layer in self.layers:
            visible = layer(visible)
        return visible

    def attention_maps(self) -> list[torch.Tensor]:
        """Attention weights ``(N, heads, V, V)`` recorded by the last forward pass."""
        return [layer.last_attn for layer in self.layers]


class TemporalDecoder(nn.Module):
    """Scatter visible features with the mask token, run vanilla layers, project
    every token back to its raw window."""

    def __init__(self, d: int, out_channels: int, window: int = 8, layers: int = 2,
                 heads: int = 4, max_tokens: int = 512, ffn_mult: int = 4):
        super().__init__()
        self.window, self.out_channels = window, out_channels
        self.mask_token = nn.Parameter(torch.zeros(d))
        self.pos = nn.Parameter(torch.randn(max_tokens, d) * 0.02)
        self.layers = nn.ModuleList(TransformerLayer(d, heads, ffn_mult) for _ in range(layers))
        self.head = nn.Linear(d, window * out_channels)

    def forward(self, visible: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        h = scatter_tokens(visible, mask, self.mask_token)
        h = h + self.pos[: h.shape[1]]
        for layer in self.layers:
            h = layer(h)
        return tokens_to_series(self.head(h), self.out_channels)


class ClassificationHead(nn.Module):
    """Mean-pool over tokens, then one linear layer."""

    def __init__(self, d: int, num_classes: int):
        super().__init__()
        self.linear = nn.Linear(d, num_classes)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return self.linear(z.mean(dim=-2))
