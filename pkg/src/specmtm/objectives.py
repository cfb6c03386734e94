"""Pre-training and fine-tuning objectives.

Temporal terms average over the raw timestamps of masked windows. Frequency
terms compare full spectra of a composite series whose visible windows hold
the ground truth and whose masked windows hold the prediction, so only masked
content carries learning signal while the transform stays global.

If a mask has no masked positions the support falls back to the whole series.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from .backbone import MaskPlan
from .spectral import Spectrum, dft_forward, dft_inverse

__all__ = [
    "TERMS",
    "LossWeights",
    "timestamp_mask",
    "mse_temporal",
    "freq_loss",
    "loss_terms",
    "pretrain_loss",
    "finetune_loss",
]

TERMS = ("t_re", "f_dual", "f_re", "t_dual")
TEMPORAL_BRANCH = ("t_re", "f_dual")
FREQUENCY_BRANCH = ("f_re", "t_dual")


@dataclass(frozen=True)
class LossWeights:
    gamma: float = 0.5
    terms: frozenset = field(default_factory=lambda: frozenset(TERMS))

    def __post_init__(self):
        if not (self.gamma >= 0 and self.gamma < float("inf")):
            raise ValueError(f"gamma must be finite and >= 0, got {self.gamma}")
        unknown = set(self.terms) - set(TERMS)
        if unknown:
            raise ValueError(f"unknown loss terms {sorted(unknown)}")


def timestamp_mask(mask, window: int, shape: torch.Size) -> torch.Tensor | None:
    """Expand a token mask to a boolean ``(N, L, 1)`` timestamp mask.

    Returns ``None`` when nothing is masked (full-series support).
    """
    if mask is None:
        return None
    if isinstance(mask, MaskPlan):
        mask = mask.as_bool().unsqueeze(0).expand(shape[0], -1)
    if not mask.any():
        return None
    ts = mask.repeat_interleave(window, dim=1)
    if ts.shape != shape[:2]:
        raise ValueError(f"mask covers {tuple(ts.shape)} timestamps, series is {tuple(shape[:2])}")
    return ts.unsqueeze(-1)


def mse_temporal(pred: torch.Tensor, gt: torch.Tensor, mask=None, window: int = 8) -> torch.Tensor:
    """Mean squared error over the timestamps of masked windows."""
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(gt.shape)}")
    if pred.dim() == 2:
        return mse_temporal(pred.unsqueeze(0), gt.unsqueeze(0), mask, window)
    sq = (pred - gt) ** 2
    ts = timestamp_mask(mask, window, pred.shape)
    if ts is None:
        return sq.mean()
    weight = ts.to(sq.dtype).expand_as(sq)
    return (sq * weight).sum() / weight.sum()


def freq_loss(pred: Spectrum, gt: Spectrum) -> torch.Tensor:
    """Mean over bins and channels of the squared distance of real and imaginary parts."""
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(gt.shape)}")
    d_re = pred.re - gt.re
    d_im = pred.im - gt.im
    return (d_re * d_re + d_im * d_im).mean()


def _composite(pred: torch.Tensor, gt: torch.Tensor, ts) -> torch.Tensor:
    return pred if ts is None else torch.where(ts, pred, gt)


def loss_terms(ztilde_T, zF_tilde_U, gt_series, mask, window: int = 8, terms=TERMS) -> dict:
    """The four loss terms; branch outputs that are ``None`` skip their terms."""
    gt_spec = dft_forward(gt_series)
    ts = timestamp_mask(mask, window, gt_series.shape)
    out = {}
    if ztilde_T is not None:
        if "t_re" in terms:
            out["t_re"] = mse_temporal(ztilde_T, gt_series, mask, window)
        if "f_dual" in terms:
            out["f_dual"] = freq_loss(dft_forward(_composite(ztilde_T, gt_series, ts)), gt_spec)
    if zF_tilde_U is not None:
        if zF_tilde_U.shape != gt_spec.shape:
            raise ValueError(f"spectrum shape {tuple(zF_tilde_U.shape)} vs ground truth {tuple(gt_spec.shape)}")
        series_F = dft_inverse(zF_tilde_U)
        if "f_re" in terms:
            spec = zF_tilde_U
            if ts is not None:
                # swap the visible windows for ground truth without dropping
                # any non-Hermitian part of the prediction
                spec = spec + dft_forward(torch.where(ts, torch.zeros_like(gt_series), gt_series - series_F))
            out["f_re"] = freq_loss(spec, gt_spec)
        if "t_dual" in terms:
            out["t_dual"] = mse_temporal(series_F, gt_series, mask, window)
    return out


def pretrain_loss(ztilde_T, zF_tilde_U, gt_series, mask, w: LossWeights = LossWeights(),
                  window: int = 8, return_terms: bool = False):
    """``t_re + f_dual + gamma * (f_re + t_dual)`` restricted to the enabled terms."""
    parts = loss_terms(ztilde_T, zF_tilde_U, gt_series, mask, window, w.terms)
    if not parts:
        raise ValueError("no loss terms enabled for the available branch outputs")
    total = None
    for name in TERMS:
        if name not in parts:
            continue
        v = parts[name] if name in TEMPORAL_BRANCH else w.gamma * parts[name]
        total = v if total is None else total + v
    return (total, parts) if return_terms else total


def finetune_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean cross-entropy of the true class."""
    labels = torch.as_tensor(labels, dtype=torch.long)
    n_cls = logits.shape[-1]
    if labels.numel() and (labels.min() < 0 or labels.max() >= n_cls):
        raise ValueError(f"labels must lie in [0, {n_cls}), got range [{int(labels.min())}, {int(labels.max())}]")
    logp = torch.log_softmax(logits, dim=-1)
    return -logp.gather(-1, labels.unsqueeze(-1)).squeeze(-1).mean()
