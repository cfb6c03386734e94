"""Two-pronged masked time-series model: shared encoder, temporal decoder and
optional spectral (CBD) decoder, plus a classification head for downstream use."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
import torch.nn as nn

from .backbone import ClassificationHead, ConvEmbedding, Encoder, TemporalDecoder, gather_visible
from .cbd import FrequencyDecoder


@dataclass
class ModelConfig:
    in_channels: int
    seq_len: int
    num_classes: int = 2
    d: int = 128
    encoder_layers: int = 8
    decoder_layers: int = 2
    cbd_layers: int = 2
    heads: int = 4
    window: int = 8
    ffn_mult: int = 4
    order: int = 12
    per_channel_gate: bool = False
    activation: str = "relu"
    use_cbd: bool = True
    use_cim: bool = True
    use_ser: bool = True

    @property
    def num_tokens(self) -> int:
        return self.seq_len // self.window

    def validate(self) -> None:
        if self.seq_len < self.window:
            raise ValueError(f"seq_len {self.seq_len} shorter than window {self.window}")
        if self.d % self.heads:
            raise ValueError(f"d={self.d} not divisible by heads={self.heads}")
        for name in ("in_channels", "num_classes", "d", "encoder_layers", "heads", "window", "order"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.use_cbd and self.cbd_layers < 1:
            raise ValueError("cbd_layers must be >= 1 when the CBD branch is enabled")

    def to_dict(self) -> dict:
        return asdict(self)


class SpecMTM(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        T = cfg.num_tokens
        self.embed = ConvEmbedding(cfg.in_channels, cfg.d, cfg.window, max_tokens=T)
        self.encoder = Encoder(cfg.d, cfg.encoder_layers, cfg.heads, cfg.ffn_mult)
        self.temporal_decoder = TemporalDecoder(
            cfg.d, cfg.in_channels, cfg.window, cfg.decoder_layers, cfg.heads, T, cfg.ffn_mult
        )
        self.frequency_decoder = None
        if cfg.use_cbd:
            self.frequency_decoder = FrequencyDecoder(
                cfg.d, T, cfg.in_channels, cfg.window, cfg.cbd_layers,
                order=cfg.order, ffn_mult=cfg.ffn_mult, activation=cfg.activation,
                per_channel_gate=cfg.per_channel_gate, use_cim=cfg.use_cim, use_ser=cfg.use_ser,
            )
        self.head = ClassificationHead(cfg.d, cfg.num_classes)

    def encoder_modules(self) -> list[nn.Module]:
        return [self.embed, self.encoder]

    def ground_truth(self, x: torch.Tensor) -> torch.Tensor:
        return self.embed.truncate(x)

    def encode(self, x: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        tokens = self.embed(x)
        if mask is not None:
            tokens = gather_visible(tokens, mask)
        return self.encoder(tokens)

    def pretrain_forward(self, x: torch.Tensor, mask: torch.Tensor) -> dict:
        """Returns the temporal reconstruction ``(N, L', C)``, the frequency
        reconstruction (a raw-grid spectrum, or ``None``) and the ground truth."""
        visible = self.encode(x, mask)
        out = {
            "temporal": self.temporal_decoder(visible, mask),
            "frequency": None,
            "target": self.ground_truth(x),
        }
        if self.frequency_decoder is not None:
            out["frequency"] = self.frequency_decoder(visible, mask)
        return out

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.encode(x))
