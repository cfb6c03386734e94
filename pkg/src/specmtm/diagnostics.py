"""Analytic read-outs: interaction-matrix rank, band energies and learned
Bernstein responses, written as plot-ready JSON/CSV."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .ser import GatingParams, bernstein_eval, gate_coefficients

__all__ = [
    "interaction_rank",
    "EnergyHistogram",
    "energy_histogram",
    "export_bernstein",
    "bernstein_curve",
    "DiagnosticsReport",
    "write_report",
]


def interaction_rank(attn, rel_tol: float = 1e-6) -> int:
    """Count of singular values above ``rel_tol * sigma_max``."""
    a = np.asarray(attn.detach().cpu() if torch.is_tensor(attn) else attn, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"interaction matrix must be square, got shape {a.shape}")
    if not np.isfinite(a).all():
        raise ValueError("interaction matrix has non-finite entries")
    sv = np.linalg.svd(a, compute_uv=False)
    if sv.size == 0 or sv[0] == 0:
        return 0
    return int((sv > rel_tol * sv[0]).sum())


@dataclass
class EnergyHistogram:
    band_lo: list[int]  # first bin of each band (inclusive)
    band_hi: list[int]  # last bin of each band (inclusive)
    values: list[float]
    zero_energy: bool = False


def _band_edges(n_bins: int, num_bands: int) -> list[tuple[int, int]]:
    num_bands = max(1, min(num_bands, n_bins))
    width = n_bins // num_bands
    edges = [(b * width, (b + 1) * width - 1) for b in range(num_bands)]
    edges[-1] = (edges[-1][0], n_bins - 1)  # remainder goes to the last band
    return edges


def energy_histogram(x, num_bands: int = 10) -> EnergyHistogram:
    """Normalized one-sided band energies of a real ``(L,)`` or ``(L, C)`` signal.

    Bins ``0..floor(L/2)`` are reported (DC included); channels are summed.
    An all-zero input yields a uniform histogram with ``zero_energy`` set.
    """
    a = np.asarray(x.detach().cpu() if torch.is_tensor(x) else x, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if num_bands < 1:
        raise ValueError("num_bands must be >= 1")
    spec = np.fft.fft(a, axis=0)
    power = (np.abs(spec) ** 2).sum(axis=1)[: a.shape[0] // 2 + 1]
    edges = _band_edges(len(power), num_bands)
    raw = np.array([power[lo : hi + 1].sum() for lo, hi in edges])
    total = raw.sum()
    if total <= 0:
        vals, zero = np.full(len(edges), 1.0 / len(edges)), True
    else:
        vals, zero = raw / total, False
    return EnergyHistogram([e[0] for e in edges], [e[1] for e in edges], vals.tolist(), zero)


def bernstein_curve(theta, grid_size: int = 101) -> tuple[np.ndarray, np.ndarray]:
    """Sample ``p_K(w) = sum_k theta_k B_k^K(w)`` on a uniform grid over ``[0, 1]``."""
    theta = torch.as_tensor(theta, dtype=torch.float64).detach()
    w = torch.linspace(0.0, 1.0, grid_size, dtype=torch.float64)
    with torch.no_grad():
        p = bernstein_eval(theta.unsqueeze(0), w)
    return w.numpy(), p.numpy()


def export_bernstein(g: GatingParams, a_norm_channel, grid_size: int = 101) -> tuple[np.ndarray, np.ndarray]:
    """Learned response curve for one channel's normalized amplitude profile."""
    with torch.no_grad():
        a = torch.as_tensor(a_norm_channel, dtype=g.w_c.dtype)
        if g.per_channel:
            raise ValueError("pass a single channel's GatingParams slice for per-channel gates")
        theta = gate_coefficients(a, GatingParams(g.w_c.detach(), g.b_c.detach()))
    return bernstein_curve(theta.double(), grid_size)


@dataclass
class DiagnosticsReport:
    ranks: list[int] = field(default_factory=list)
    rank_tol: float = 1e-6
    per_head_ranks: list[list[int]] | None = None
    energy: dict[str, EnergyHistogram] = field(default_factory=dict)
    bernstein_w: list[float] = field(default_factory=list)
    bernstein_p: list[float] = field(default_factory=list)
    imag_residue: float = 0.0
    negative_scale_fraction: float = 0.0


def write_report(run_dir, report: DiagnosticsReport) -> list[Path]:
    """Write ``diag/ranks.json``, ``diag/energy.csv`` and ``diag/bernstein.csv``."""
    out = Path(run_dir) / "diag"
    out.mkdir(parents=True, exist_ok=True)
    files = []

    ranks = out / "ranks.json"
    payload = {
        "ranks": report.ranks,
        "rel_tol": report.rank_tol,
        "imag_residue": report.imag_residue,
        "negative_scale_fraction": report.negative_scale_fraction,
    }
    if report.per_head_ranks is not None:
        payload["per_head_ranks"] = report.per_head_ranks
    ranks.write_text(json.dumps(payload, indent=2) + "\n")
    files.append(ranks)

    energy = out / "energy.csv"
    cols = ["raw", "reconstructed_T", "reconstructed_F"]
    ref = next(iter(report.energy.values()), None)
    with open(energy, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["band_lo", "band_hi", *cols])
        if ref is not None:
            for i, (lo, hi) in enumerate(zip(ref.band_lo, ref.band_hi)):
                row = [report.energy[c].values[i] if c in report.energy else "" for c in cols]
                wr.writerow([lo, hi, *row])
    files.append(energy)

    bern = out / "bernstein.csv"
    with open(bern, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["w", "pK"])
        wr.writerows(zip(report.bernstein_w, report.bernstein_p))
    files.append(bern)
    return files


def report_to_dict(report: DiagnosticsReport) -> dict:
    return asdict(report)
