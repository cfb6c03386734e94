"""One test per acceptance criterion, each at its stated tolerance.

Every test records a PASS/FAIL line that is printed in the terminal summary
(run ``pytest tests/test_acceptance.py -v``).
"""

import contextlib
import csv
import filecmp
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest
import torch
import yaml

from conftest import ACCEPTANCE_LINES
from specmtm import verify
from specmtm.backbone import make_mask, sample_masks
from specmtm.cbd import FrequencyDecoder
from specmtm.config import VARIANTS, load_config
from specmtm.diagnostics import energy_histogram, export_bernstein, interaction_rank
from specmtm.engine import spawn_seeds
from specmtm.ser import SER
from specmtm.spectral import dft_forward
from specmtm.backbone import scatter_tokens
from specmtm.train import load_data, pretrain, probe

ROOT = Path(__file__).resolve().parents[1]
SMOKE = ROOT / "configs" / "smoke.yaml"


@contextlib.contextmanager
def criterion(label: str):
    details: list[str] = []
    try:
        yield details
    except BaseException as exc:
        first = (str(exc).splitlines() or [""])[0]
        ACCEPTANCE_LINES.append(f"FAIL  {label}: {' '.join(details)} [{type(exc).__name__}: {first}]".strip())
        raise
    ACCEPTANCE_LINES.append(f"PASS  {label}: {' '.join(details)}".strip())


def test_01_theorem_suite():
    with criterion("1 theorem suite (Parseval, convolution; T in 4..217; 100 instances)") as info:
        t0 = time.perf_counter()
        parseval = verify.check_parseval(100)
        conv = verify.check_convolution(100)
        dt = time.perf_counter() - t0
        info.append(f"parseval={parseval:.2e} convolution={conv:.2e} time={dt:.1f}s")
        assert parseval <= 1e-10 and conv <= 1e-10
        assert dt < 10


def test_02_bernstein_identities():
    with criterion("2 Bernstein partition of unity + linear reproduction") as info:
        t0 = time.perf_counter()
        err = verify.check_bernstein(1000)
        dt = time.perf_counter() - t0
        info.append(f"max_err={err:.2e} time={dt:.2f}s")
        assert err <= 1e-12 and dt < 5


def test_03_identity_at_init():
    with criterion("3 CBD identity at init") as info:
        torch.manual_seed(0)
        d, T, N = 16, 16, 3
        fd = FrequencyDecoder(d, T, 2, depth=2, order=12).double()
        fd.stack.reset_identity()
        visible = torch.randn(N, 4, d, dtype=torch.float64)
        mask = sample_masks(N, T, 0.75, np.random.default_rng(0))
        with torch.no_grad():
            spec = dft_forward(scatter_tokens(visible, mask, fd.mask_token) + fd.pos)
            out = fd.token_spectrum(visible, mask)
        dev = max(float((out.re - spec.re).abs().max()), float((out.im - spec.im).abs().max()))
        dev = max(dev, verify.check_identity_init())
        info.append(f"max_abs_dev={dev:.2e}")
        assert dev <= 1e-12


def test_04_gradient_checks():
    with criterion("4 gradient checks (tiny model d=8, T=8, U=1)") as info:
        t0 = time.perf_counter()
        errs = verify.gradient_checks()
        dt = time.perf_counter() - t0
        worst = max(errs, key=errs.get)
        info.append(f"modules={len(errs)} worst={worst}:{errs[worst]:.2e} time={dt:.1f}s")
        expected = {"cim", "ser", "cbd_block", "encoder", "temporal_decoder",
                    "loss:t_re", "loss:f_dual", "loss:f_re", "loss:t_dual"}
        assert set(errs) == expected
        assert errs[worst] <= 1e-4 and dt < 60


def test_05_mask_contract():
    with criterion("5 mask counts {12,38,96}; inclusion 0.75+-0.01 (T=16,128), exact rate+-0.01 (T=50)") as info:
        for T, count in verify.MASK_CASES:
            assert len(make_mask(T, 0.75, 0).masked_indices) == count
            f = verify.inclusion_frequencies(T, 100_000, seed=T)
            nominal, exact = np.abs(f - 0.75).max(), np.abs(f - count / T).max()
            info.append(f"T={T}:|f-0.75|={nominal:.4f},|f-{count}/{T}|={exact:.4f}")
            assert exact <= 0.01
            if count / T == 0.75:
                assert nominal <= 0.01


@pytest.mark.xfail(strict=True, reason="38/50 = 0.76 is the exact inclusion rate; 0.75+-0.01 cannot hold at every position")
def test_05b_mask_literal_band_at_T50():
    with criterion("5b literal 0.75+-0.01 at T=50 (unattainable with exactly 38 masked)") as info:
        f = verify.inclusion_frequencies(50, 100_000, seed=50)
        info.append(f"|f-0.75|max={np.abs(f - 0.75).max():.4f}")
        assert np.abs(f - 0.75).max() <= 0.01


def nearest_spectral_centroid(train, test) -> float:
    def feat(b):
        return np.abs(np.fft.rfft(b.values, axis=1)).sum(axis=2)

    ftr, fte = feat(train), feat(test)
    cents = np.stack([ftr[train.labels == c].mean(0) for c in range(len(train.class_names))])
    pred = np.argmin(((fte[:, None] - cents[None]) ** 2).sum(-1), axis=1)
    return float((pred == test.labels).mean())


def test_06_smoke_pretrain_probe(tmp_path):
    with criterion("6 smoke pretrain->probe (N=600, L=128, C=2, sigma=0.1, 20 epochs)") as info:
        cfg, _ = load_config(SMOKE, out=str(tmp_path))
        s = cfg.data.synthetic
        assert (s.n, s.length, s.channels, s.noise, cfg.training.epochs) == (600, 128, 2, 0.1, 20)
        splits = load_data(cfg, spawn_seeds(cfg.seed, 4)[3])
        oracle = nearest_spectral_centroid(splits.train, splits.test)
        info.append(f"centroid_oracle={oracle:.3f}")
        assert oracle == 1.0
        t0 = time.perf_counter()
        res = pretrain(cfg, tmp_path / "pre")
        acc = probe(cfg, res["checkpoint"], tmp_path / "probe")["metrics"]["test_accuracy"]
        dt = time.perf_counter() - t0
        ratio = res["losses"][-1] / res["losses"][0]
        info.append(f"probe_acc={acc:.3f} loss_ratio={ratio:.3f} time={dt:.0f}s")
        assert acc >= 0.9 and ratio < 0.5 and dt < 600


def test_07_diagnostics_fidelity():
    with criterion("7 diagnostics fidelity") as info:
        L, s = 128, 21
        h = energy_histogram(np.sin(2 * np.pi * s * np.arange(L) / L), 10)
        top = max(h.values)
        ident = interaction_rank(np.eye(16))
        u = np.arange(1, 17, dtype=float)
        rank1 = interaction_rank(np.outer(u, u[::-1]))
        ser = SER(16, order=12).double()
        a = torch.softmax(torch.randn(16, dtype=torch.float64), 0)
        _, curve = export_bernstein(ser.params, a, 101)
        dev = float(np.abs(curve - 1.0).max())
        info.append(f"sinusoid_band={top:.6f} rank(I16)={ident} rank(uv^T)={rank1} bernstein_dev={dev:.1e}")
        assert top >= 0.999 and ident == 16 and rank1 == 1 and dev <= 1e-12


def _tiny_cfg(tmp_path, **loss):
    data = {
        "data": {"synthetic": {"n": 60, "length": 64}},
        "model": {"d": 16, "encoder_layers": 1, "heads": 2},
        "ser": {"K": 4},
        "training": {"batch_size": 16, "epochs": 3},
        "loss": loss,
    }
    path = tmp_path / f"cfg_{abs(hash(str(loss)))}.yaml"
    path.write_text(yaml.safe_dump(data))
    return path


def _losses(path):
    return [row for row in csv.DictReader(open(path))]


def test_08_ablation_hooks(tmp_path):
    with criterion("8 ablation variants runnable; gamma=0 == t_re+f_dual; CBD off == plain MTM") as info:
        for name in VARIANTS:
            cfg, _ = load_config(_tiny_cfg(tmp_path, variant=name), out=str(tmp_path / name))
            res = pretrain(cfg, tmp_path / name)
            assert all(np.isfinite(res["losses"]))
        info.append(f"variants={len(VARIANTS)}")

        cfg0, _ = load_config(_tiny_cfg(tmp_path, gamma=0.0))
        full_g0 = pretrain(cfg0, tmp_path / "g0")
        dual = _losses(tmp_path / "t_re+f_dual" / "loss.csv")
        g0 = _losses(full_g0["loss_csv"])
        # same total loss trajectory bit for bit: the frequency branch carries zero weight
        assert [r["loss"] for r in g0] == [r["loss"] for r in dual]
        assert all(float(r["f_re"]) > 0 for r in g0)

        plain = _losses(tmp_path / "t_re" / "loss.csv")
        assert all(float(r["f_dual"]) == float(r["f_re"]) == float(r["t_dual"]) == 0.0 for r in plain)
        assert all(r["loss"] == r["t_re"] for r in plain)
        info.append("gamma0_bitwise=yes plain_mtm_terms=t_re")


def test_09_determinism(tmp_path):
    with criterion("9 determinism: identical loss.csv across runs") as info:
        cfg, _ = load_config(_tiny_cfg(tmp_path), seed=5)
        a = pretrain(cfg, tmp_path / "a")["loss_csv"]
        b = pretrain(cfg, tmp_path / "b")["loss_csv"]
        same = filecmp.cmp(a, b, shallow=False)
        info.append(f"bitwise_identical={same}")
        assert same


def test_cli_verify_exits_zero():
    with criterion("cli verify on a fresh build exits 0") as info:
        proc = subprocess.run([sys.executable, "-m", "specmtm", "verify"], capture_output=True, text=True, timeout=300)
        lines = [ln for ln in proc.stdout.splitlines() if ln.startswith("[")]
        info.append(f"checks={len(lines)} exit={proc.returncode}")
        assert proc.returncode == 0, proc.stdout + proc.stderr
        assert lines and all(ln.startswith("[PASS]") for ln in lines)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
