"""Executable property suite behind ``specmtm verify``.

Every check compares a production code path against an independent oracle
(direct summation, closed-form identities, central differences) and reports the
measured error next to its tolerance.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch

from .backbone import make_mask, sample_masks
from .cbd import CbdStack
from .engine import fd_check
from .model import ModelConfig, SpecMTM
from .objectives import loss_terms
from .ser import bernstein_basis
from .spectral import circular_convolve, dft_forward

THEOREM_LENGTHS = (4, 16, 64, 128, 217)
BERNSTEIN_ORDERS = (1, 2, 4, 8, 12, 16)


@dataclass
class CheckResult:
    name: str
    error: float
    tol: float
    seconds: float

    @property
    def passed(self) -> bool:
        return bool(self.error <= self.tol)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: error={self.error:.3e} tol={self.tol:.0e} ({self.seconds:.2f}s)"


def brute_dft(x: np.ndarray) -> np.ndarray:
    """Direct O(T^2) DFT along axis 0."""
    T = x.shape[0]
    t = np.arange(T)
    W = np.exp(-2j * np.pi * np.outer(t, t) / T)
    return W @ x


def _rel(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


def check_parseval(instances: int = 100, seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for T in THEOREM_LENGTHS:
        for _ in range(instances):
            z = torch.from_numpy(rng.standard_normal((T, 4)))
            s = dft_forward(z)
            time_e = float((z * z).sum())
            freq_e = float((s.re**2 + s.im**2).sum()) / T
            worst = max(worst, abs(time_e - freq_e) / time_e)
    return worst


def check_convolution(instances: int = 100, seed: int = 1) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for T in THEOREM_LENGTHS:
        for _ in range(instances):
            k = torch.from_numpy(rng.standard_normal((T, 3)))
            z = torch.from_numpy(rng.standard_normal((T, 3)))
            lhs = dft_forward(circular_convolve(k, z)).to_complex().numpy()
            rhs = (dft_forward(k).to_complex() * dft_forward(z).to_complex()).numpy()
            worst = max(worst, _rel(lhs, rhs))
    return worst


def check_dft_oracle(seed: int = 2) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for T in THEOREM_LENGTHS:
        z = rng.standard_normal((T, 16))
        worst = max(worst, _rel(dft_forward(torch.from_numpy(z)).to_complex().numpy(), brute_dft(z)))
    return worst


def check_bernstein(grid: int = 1000) -> float:
    w = torch.linspace(0, 1, grid, dtype=torch.float64)
    worst = 0.0
    for K in BERNSTEIN_ORDERS:
        B = bernstein_basis(K, w)
        k = torch.arange(K + 1, dtype=torch.float64) / K
        worst = max(worst, float((B.sum(-1) - 1).abs().max()), float(((B * k).sum(-1) - w).abs().max()))
    return worst


def check_identity_init(seed: int = 3) -> float:
    torch.manual_seed(seed)
    d, T = 16, 16
    stack = CbdStack(d, T, depth=2).double()
    stack.reset_identity()
    x = torch.randn(4, T, d, dtype=torch.float64)
    spec = dft_forward(x)
    with torch.no_grad():
        out = stack(spec)
    return float(torch.maximum((out.re - spec.re).abs().max(), (out.im - spec.im).abs().max()))


def tiny_model(seed: int = 0) -> SpecMTM:
    torch.manual_seed(seed)
    cfg = ModelConfig(in_channels=2, seq_len=64, num_classes=3, d=8, encoder_layers=1,
                      decoder_layers=1, cbd_layers=1, heads=2, order=4)
    model = SpecMTM(cfg).double()
    with torch.no_grad():
        # move every block off its identity point so all paths carry gradient
        for block in model.frequency_decoder.stack.blocks:
            block.ser.w_c.normal_(0, 0.5)
            block.ser.b_c.normal_(1, 0.3)
            block.ff2.weight.normal_(0, 0.1)
        model.frequency_decoder.mask_token.normal_(0, 0.1)
        model.temporal_decoder.mask_token.normal_(0, 0.1)
    return model


def _cim_preacts_ok(model: SpecMTM, x, mask, margin=1e-3) -> bool:
    fd = model.frequency_decoder
    from .backbone import scatter_tokens
    from .cim import complex_affine

    with torch.no_grad():
        visible = model.encode(x, mask)
        spec = dft_forward(scatter_tokens(visible, mask, fd.mask_token) + fd.pos[: mask.shape[1]])
        for block in fd.stack.blocks:
            pre = complex_affine(block.content(spec), block.cim.params)
            if min(float(pre.re.abs().min()), float(pre.im.abs().min())) < margin:
                return False
            spec = block(spec)
    return True


def gradient_checks(seed: int = 0, probes: int = 32) -> dict[str, float]:
    """Central-difference checks of each trainable part of a tiny model
    (d=8, T=8 tokens, one CBD block) and of every loss term."""
    rng = np.random.default_rng(seed)
    for attempt in range(50):
        model = tiny_model(seed + attempt)
        x = torch.from_numpy(rng.standard_normal((2, 64, 2)))
        mask = sample_masks(2, 8, 0.75, rng)
        if _cim_preacts_ok(model, x, mask):
            break
    else:  # pragma: no cover
        raise RuntimeError("could not find a kink-free probe point")
    R_T = torch.from_numpy(rng.standard_normal((2, 64, 2)))

    def terms():
        o = model.pretrain_forward(x, mask)
        return o, loss_terms(o["temporal"], o["frequency"], o["target"], mask, 8)

    def projected():
        o = model.pretrain_forward(x, mask)
        return (o["temporal"] * R_T).sum() + 0.1 * (o["frequency"].re * R_T).sum() + 0.1 * (
            o["frequency"].im * R_T).sum()

    fd = model.frequency_decoder
    block = fd.stack.blocks[0]
    groups = {
        "cim": list(block.cim.parameters()),
        "ser": list(block.ser.parameters()),
        "cbd_block": list(block.parameters()),
        "encoder": list(model.embed.parameters()) + list(model.encoder.parameters()),
        "temporal_decoder": list(model.temporal_decoder.parameters()),
    }
    out = {}
    for name, params in groups.items():
        out[name] = fd_check(projected, params, probes=probes, seed=seed)
    all_params = list(model.parameters())
    for term in ("t_re", "f_dual", "f_re", "t_dual"):
        out[f"loss:{term}"] = fd_check(lambda: terms()[1][term], all_params, probes=probes, seed=seed)
    return out


MASK_CASES = ((16, 12), (50, 38), (128, 96))


def inclusion_frequencies(T: int, draws: int = 100_000, ratio: float = 0.75, seed: int = 0) -> np.ndarray:
    """Empirical per-position masking frequency over ``draws`` independent masks."""
    m = sample_masks(draws, T, ratio, np.random.default_rng(seed)).numpy()
    return m.mean(axis=0)


def mask_contract(draws: int = 100_000, seed: int = 0) -> float:
    """Worst per-position deviation of the inclusion frequency from its exact
    rate ``round(0.75 T) / T``; infinite if any mask has the wrong count.

    For T = 50 the exact rate is 0.76, so the deviation from the nominal 0.75
    is reported separately by callers.
    """
    worst = 0.0
    for T, expected in MASK_CASES:
        if len(make_mask(T, 0.75, seed).masked_indices) != expected:
            return float("inf")
        m = sample_masks(draws, T, 0.75, np.random.default_rng(seed + T)).numpy()
        if (m.sum(axis=1) != expected).any():
            return float("inf")
        worst = max(worst, float(np.abs(m.mean(axis=0) - expected / T).max()))
    return worst


def run_all(quick: bool = False) -> list[CheckResult]:
    n = 20 if quick else 100
    checks: list[tuple[str, Callable[[], float], float]] = [
        ("dft matches direct summation", check_dft_oracle, 1e-10),
        ("parseval identity", lambda: check_parseval(n), 1e-10),
        ("convolution theorem", lambda: check_convolution(n), 1e-10),
        ("bernstein partition of unity + linear reproduction", check_bernstein, 1e-12),
        ("cbd identity at init", check_identity_init, 1e-12),
        ("mask count + inclusion frequency (|f - round(0.75T)/T|)", mask_contract, 1e-2),
    ]
    results = []
    for name, fn, tol in checks:
        t0 = time.perf_counter()
        err = fn()
        results.append(CheckResult(name, err, tol, time.perf_counter() - t0))
    t0 = time.perf_counter()
    grads = gradient_checks()
    dt = time.perf_counter() - t0
    for name, err in grads.items():
        results.append(CheckResult(f"gradient check {name}", err, 1e-4, dt / len(grads)))
    return results
