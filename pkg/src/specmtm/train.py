"""Pre-training, linear probing, fine-tuning and diagnostics workflows."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .backbone import sample_masks, scatter_tokens
from .config import RunConfig
from .data import (ChannelStats, TimeSeriesBatch, fit_stats, normalize, parse_ts, parse_tsv,
                   synth_generate, SynthSpec, train_test_split)
from .diagnostics import (DiagnosticsReport, energy_histogram, export_bernstein, interaction_rank,
                          write_report)
from .engine import AdamW, load_checkpoint, save_checkpoint, sha256_file, spawn_seeds
from .model import ModelConfig, SpecMTM
from .objectives import LossWeights, finetune_loss, pretrain_loss, TERMS
from .ser import GatingParams, gate_coefficients, normalize_energy, ser_scale
from .spectral import amplitude, dft_forward, dft_inverse, inverse_residue

log = logging.getLogger(__name__)

DTYPES = {"f32": torch.float32, "f64": torch.float64}


@dataclass
class Splits:
    train: TimeSeriesBatch
    test: TimeSeriesBatch
    stats: ChannelStats | None


def load_data(cfg: RunConfig, split_seed: int) -> Splits:
    d = cfg.data
    if d.format == "synthetic":
        s = d.synthetic
        spec = SynthSpec([list(f) for f in s.frequencies], s.amplitude, s.noise, s.n, s.length, s.channels)
        full = synth_generate(spec, cfg.seed)
        train, test = train_test_split(full, d.test_fraction, split_seed)
    else:
        parse = parse_ts if d.format == "ts" else parse_tsv
        train, _ = parse(d.train)
        if d.test:
            test, _ = parse(d.test)
            if test.class_names != train.class_names:
                raise ValueError("train and test files declare different class labels")
        else:
            train, test = train_test_split(train, d.test_fraction, split_seed)
    stats = None
    if d.normalize:
        stats = fit_stats(train)
        train, test = normalize(train, stats), normalize(test, stats)
    return Splits(train, test, stats)


def build_model(cfg: RunConfig, splits_or_meta, init_seed: int) -> SpecMTM:
    if isinstance(splits_or_meta, Splits):
        tr = splits_or_meta.train
        in_channels, seq_len, n_cls = tr.channels, tr.length, max(1, len(tr.class_names))
    else:
        in_channels, seq_len, n_cls = splits_or_meta
    variant = cfg.variant()
    m = cfg.model
    mc = ModelConfig(
        in_channels=in_channels, seq_len=seq_len, num_classes=n_cls, d=m.d,
        encoder_layers=m.encoder_layers, decoder_layers=m.decoder_layers, cbd_layers=m.cbd_layers,
        heads=m.heads, window=m.window, ffn_mult=m.ffn_mult, order=cfg.ser.K,
        per_channel_gate=cfg.ser.per_channel, activation=m.activation,
        use_cbd=m.use_cbd and variant.get("use_cbd", True),
        use_cim=m.use_cim and variant.get("use_cim", True),
        use_ser=m.use_ser and variant.get("use_ser", True),
    )
    torch.manual_seed(init_seed)
    return SpecMTM(mc).to(DTYPES[cfg.training.precision])


def _tensor(x: np.ndarray, dtype) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(x)).to(dtype)


def _model_state(model: SpecMTM) -> dict:
    return {k: v for k, v in model.state_dict().items()}


def save_model(path, model: SpecMTM, cfg: RunConfig, splits: Splits | None, extra: dict | None = None):
    meta = {"model": model.cfg.to_dict(), "run": cfg.to_dict()}
    if splits is not None:
        meta["class_names"] = splits.train.class_names
        if splits.stats is not None:
            meta["stats"] = {"mean": splits.stats.mean.tolist(), "std": splits.stats.std.tolist()}
    meta.update(extra or {})
    save_checkpoint(path, _model_state(model), meta)


def restore_model(path, dtype) -> tuple[SpecMTM, dict]:
    tensors, meta = load_checkpoint(path)
    model = SpecMTM(ModelConfig(**meta["model"])).to(dtype)
    model.load_state_dict({k: v.to(dtype) if v.is_floating_point() else v for k, v in tensors.items()})
    return model, meta


def write_manifest(out: Path, files) -> Path:
    entries = {str(Path(f).relative_to(out)): sha256_file(f) for f in sorted(set(map(Path, files)))}
    path = out / "manifest.json"
    path.write_text(json.dumps({"files": entries}, indent=2, sort_keys=True) + "\n")
    return path


def pretrain(cfg: RunConfig, out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    init_seed, mask_seed, shuffle_seed, split_seed = spawn_seeds(cfg.seed, 4)
    splits = load_data(cfg, split_seed)
    model = build_model(cfg, splits, init_seed)
    dtype = DTYPES[cfg.training.precision]
    weights = LossWeights(cfg.loss.gamma, frozenset(cfg.variant()["terms"]))
    opt = AdamW(model.parameters(), cfg.optimizer.lr, (cfg.optimizer.beta1, cfg.optimizer.beta2),
                cfg.optimizer.eps, cfg.optimizer.weight_decay)
    mask_rng = np.random.default_rng(mask_seed)
    shuffle_rng = np.random.default_rng(shuffle_seed)
    x_all = _tensor(splits.train.values, dtype)
    T = model.cfg.num_tokens
    bs = cfg.training.batch_size
    rows = []
    model.train()
    for epoch in range(1, cfg.training.epochs + 1):
        perm = shuffle_rng.permutation(len(x_all))
        sums = dict.fromkeys(("loss",) + TERMS, 0.0)
        seen = 0
        for start in range(0, len(perm), bs):
            idx = perm[start : start + bs]
            x = x_all[idx]
            mask = sample_masks(len(idx), T, cfg.masking.ratio, mask_rng)
            o = model.pretrain_forward(x, mask)
            loss, parts = pretrain_loss(o["temporal"], o["frequency"], o["target"], mask, weights,
                                        model.cfg.window, return_terms=True)
            opt.zero_grad()
            loss.backward()
            opt.step()
            n = len(idx)
            seen += n
            sums["loss"] += loss.item() * n
            for k, v in parts.items():
                sums[k] += v.item() * n
        row = {"epoch": epoch, **{k: v / seen for k, v in sums.items()}}
        rows.append(row)
        log.info("epoch %d loss %.6g", epoch, row["loss"])
    loss_csv = out / "loss.csv"
    with open(loss_csv, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=["epoch", "loss", *TERMS])
        wr.writeheader()
        for r in rows:
            wr.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    ckpt = out / "checkpoint.ckpt"
    save_model(ckpt, model, cfg, splits, {"epochs": cfg.training.epochs})
    return {"checkpoint": ckpt, "loss_csv": loss_csv, "losses": [r["loss"] for r in rows],
            "files": [loss_csv, ckpt]}


def _features(model: SpecMTM, x: torch.Tensor, bs: int) -> torch.Tensor:
    model.eval()
    with torch.no_grad():
        return torch.cat([model.encode(x[i : i + bs]) for i in range(0, len(x), bs)])


def accuracy(logits: torch.Tensor, labels: np.ndarray) -> float:
    return float((logits.argmax(dim=-1).numpy() == labels).mean()) if len(labels) else 0.0


def _train_classifier(model: SpecMTM, cfg: RunConfig, splits: Splits, out: Path, *, freeze: bool,
                      epochs: int, lr: float, tag: str) -> dict:
    _, _, shuffle_seed, _ = spawn_seeds(cfg.seed, 4)
    rng = np.random.default_rng(shuffle_seed + 1)
    dtype = next(model.parameters()).dtype
    x_tr = _tensor(splits.train.values, dtype)
    x_te = _tensor(splits.test.values, dtype)
    y_tr = torch.from_numpy(splits.train.labels)
    bs = cfg.training.batch_size
    for mod in model.encoder_modules():
        for p in mod.parameters():
            p.requires_grad_(not freeze)
    params = list(model.head.parameters()) if freeze else list(model.parameters())
    opt = AdamW(params, lr, (cfg.optimizer.beta1, cfg.optimizer.beta2), cfg.optimizer.eps,
                cfg.optimizer.weight_decay)
    feats = _features(model, x_tr, bs) if freeze else None
    rows = []
    for epoch in range(1, epochs + 1):
        perm = rng.permutation(len(x_tr))
        total, seen = 0.0, 0
        model.train(not freeze)
        for start in range(0, len(perm), bs):
            idx = perm[start : start + bs]
            logits = model.head(feats[idx]) if freeze else model(x_tr[idx])
            loss = finetune_loss(logits, y_tr[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
            seen += len(idx)
        rows.append((epoch, total / seen))
    model.eval()
    with torch.no_grad():
        train_acc = accuracy(model.head(_features(model, x_tr, bs)), splits.train.labels)
        test_acc = accuracy(model.head(_features(model, x_te, bs)), splits.test.labels)
    curve = out / f"{tag}_loss.csv"
    with open(curve, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["epoch", "loss"])
        wr.writerows((e, repr(v)) for e, v in rows)
    metrics = {"train_accuracy": train_acc, "test_accuracy": test_acc, "epochs": epochs}
    mpath = out / f"{tag}_metrics.json"
    mpath.write_text(json.dumps(metrics, indent=2) + "\n")
    return {"metrics": metrics, "files": [curve, mpath]}


def _splits_for_checkpoint(cfg: RunConfig, meta: dict) -> Splits:
    _, _, _, split_seed = spawn_seeds(cfg.seed, 4)
    splits = load_data(cfg, split_seed)
    names = meta.get("class_names")
    if names is not None and names != splits.train.class_names:
        raise ValueError("checkpoint class labels differ from the configured dataset")
    return splits


def probe(cfg: RunConfig, checkpoint: Path, out: Path) -> dict:
    """Linear evaluation: encoder frozen, only the head is trained. The input
    checkpoint is read, never written."""
    out.mkdir(parents=True, exist_ok=True)
    model, meta = restore_model(checkpoint, DTYPES[cfg.training.precision])
    splits = _splits_for_checkpoint(cfg, meta)
    res = _train_classifier(model, cfg, splits, out, freeze=True, epochs=cfg.training.probe_epochs,
                            lr=cfg.training.probe_lr, tag="probe")
    head = out / "probe_head.ckpt"
    save_checkpoint(head, {f"head.{k}": v for k, v in model.head.state_dict().items()},
                    {"source_checkpoint": str(checkpoint), "source_sha256": sha256_file(checkpoint)})
    res["files"].append(head)
    return res


def finetune(cfg: RunConfig, checkpoint: Path, out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    model, meta = restore_model(checkpoint, DTYPES[cfg.training.precision])
    splits = _splits_for_checkpoint(cfg, meta)
    res = _train_classifier(model, cfg, splits, out, freeze=False, epochs=cfg.training.finetune_epochs,
                            lr=cfg.training.finetune_lr, tag="finetune")
    ckpt = out / "finetuned.ckpt"
    save_model(ckpt, model, cfg, splits, {"finetuned_from": str(checkpoint)})
    res["files"].append(ckpt)
    return res


def collect_diagnostics(model: SpecMTM, x: torch.Tensor, mask: torch.Tensor, num_bands: int = 10,
                        rel_tol: float = 1e-6, per_head: bool = False, grid_size: int = 101) -> DiagnosticsReport:
    """Ranks of every encoder layer's head-averaged attention (first sample),
    band energies of ground truth and both reconstructions, and the last SER
    block's learned Bernstein curve."""
    model.eval()
    report = DiagnosticsReport(rank_tol=rel_tol)
    with torch.no_grad():
        model.encode(x)
        maps = model.encoder.attention_maps()
        report.ranks = [interaction_rank(a[0].mean(dim=0), rel_tol) for a in maps]
        if per_head:
            report.per_head_ranks = [[interaction_rank(h, rel_tol) for h in maps[-1][0]]]
        o = model.pretrain_forward(x, mask)
        target = o["target"]

        def hist(batch):
            vals = np.mean([energy_histogram(s, num_bands).values for s in batch], axis=0)
            h = energy_histogram(batch[0], num_bands)
            h.values = (vals / vals.sum()).tolist()
            return h

        report.energy["raw"] = hist(target)
        report.energy["reconstructed_T"] = hist(o["temporal"])
        fd = model.frequency_decoder
        if fd is not None:
            report.energy["reconstructed_F"] = hist(dft_inverse(o["frequency"]))
            visible = model.encode(x, mask)
            tok_spec = fd.token_spectrum(visible, mask)
            report.imag_residue = inverse_residue(tok_spec)
            spec = dft_forward(scatter_tokens(visible, mask, fd.mask_token) + fd.pos[: mask.shape[1]])
            blocks = list(fd.stack.blocks)
            for block in blocks[:-1]:
                spec = block(spec)
            last = blocks[-1]
            h = last.cim(spec, last.content(spec)) if last.use_cim else spec
            a_norm = normalize_energy(amplitude(h))
            g = last.ser.params
            if g.per_channel:
                g = GatingParams(g.w_c[0], g.b_c[0])
            w, p = export_bernstein(g, a_norm[0, :, 0], grid_size)
            report.bernstein_w, report.bernstein_p = w.tolist(), p.tolist()
            theta = gate_coefficients(a_norm, last.ser.params, channels_last=True)
            report.negative_scale_fraction = float((ser_scale(a_norm, theta) < 0).double().mean())
    return report


def diagnose(cfg: RunConfig, checkpoint: Path, out: Path, num_samples: int = 16,
             per_head: bool = False) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    dtype = DTYPES[cfg.training.precision]
    model, meta = restore_model(checkpoint, dtype)
    splits = _splits_for_checkpoint(cfg, meta)
    x = _tensor(splits.test.values[:num_samples], dtype)
    mask_seed = spawn_seeds(cfg.seed, 4)[1]
    mask = sample_masks(len(x), model.cfg.num_tokens, cfg.masking.ratio, np.random.default_rng(mask_seed))
    report = collect_diagnostics(model, x, mask, per_head=per_head)
    files = write_report(out, report)
    return {"report": report, "files": files}
