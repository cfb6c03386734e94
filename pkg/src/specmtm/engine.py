"""Gradient plumbing, finite-difference validation, AdamW and checkpoints.

Reverse-mode gradients come from torch autograd; :func:`fd_check` is the
independent check on them. The optimizer is a plain re-statement of AdamW
with decoupled weight decay so its trajectory can be pinned against a
scalar reference.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
import torch

__all__ = [
    "NonFiniteGradient",
    "backward",
    "fd_check",
    "AdamWState",
    "adamw_step",
    "AdamW",
    "CKPT_HEADER",
    "save_checkpoint",
    "load_checkpoint",
    "spawn_seeds",
    "set_threads",
    "sha256_file",
]


class NonFiniteGradient(RuntimeError):
    pass


def backward(loss: torch.Tensor, params: Sequence[torch.Tensor]) -> list[torch.Tensor]:
    """Gradients of a scalar ``loss`` aligned with ``params``; unused params get zeros."""
    if loss.numel() != 1:
        raise ValueError(f"backward needs a scalar root, got shape {tuple(loss.shape)}")
    live = [p for p in params if p.requires_grad]
    grads = torch.autograd.grad(loss, live, allow_unused=True) if live and loss.requires_grad else [None] * len(live)
    by_id = {id(p): g for p, g in zip(live, grads)}
    return [
        torch.zeros_like(p) if by_id.get(id(p)) is None else by_id[id(p)]
        for p in params
    ]


def fd_check(
    fn: Callable[[], torch.Tensor],
    params: Sequence[torch.Tensor],
    h: float = 1e-5,
    probes: int = 32,
    seed: int = 0,
    grads: Sequence[torch.Tensor] | None = None,
) -> float:
    """Worst relative error between analytic and central-difference gradients.

    ``fn`` is re-evaluated after in-place perturbation of single coordinates of
    ``params``; ``probes`` coordinates are drawn at random across all params.
    Relative error uses ``max(|analytic|, |numeric|, 1e-8)`` as denominator.
    Pass ``grads`` to check externally supplied gradients instead of autograd's.
    """
    params = list(params)
    if grads is None:
        grads = backward(fn(), params)
    grads = [g.detach() for g in grads]
    sizes = [p.numel() for p in params]
    total = sum(sizes)
    rng = np.random.default_rng(seed)
    picks = rng.choice(total, size=min(probes, total), replace=False)
    offsets = np.cumsum([0] + sizes)
    worst = 0.0
    with torch.no_grad():
        for flat in sorted(int(i) for i in picks):
            which = int(np.searchsorted(offsets, flat, side="right") - 1)
            p, local = params[which], flat - offsets[which]
            view = p.view(-1)
            orig = view[local].item()
            view[local] = orig + h
            f_plus = float(fn())
            view[local] = orig - h
            f_minus = float(fn())
            view[local] = orig
            numeric = (f_plus - f_minus) / (2 * h)
            analytic = float(grads[which].reshape(-1)[local])
            denom = max(abs(analytic), abs(numeric), 1e-8)
            worst = max(worst, abs(analytic - numeric) / denom)
    return worst


@dataclass
class AdamWState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    weight_decay: float = 3e-4
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adamw_step(params: Sequence[torch.Tensor], grads: Sequence[torch.Tensor], state: AdamWState) -> None:
    """One in-place AdamW update.

    ``theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta)``.
    A non-finite gradient rejects the whole step and leaves params and state untouched.
    """
    if len(params) != len(grads):
        raise ValueError("params and grads are not aligned")
    for i, g in enumerate(grads):
        if not torch.isfinite(g).all():
            raise NonFiniteGradient(f"non-finite gradient for parameter #{i}; step rejected")
    if not state.m:
        state.m = [torch.zeros_like(p) for p in params]
        state.v = [torch.zeros_like(p) for p in params]
    t = state.step + 1
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    with torch.no_grad():
        for p, g, m, v in zip(params, grads, state.m, state.v):
            m.mul_(state.beta1).add_(g, alpha=1.0 - state.beta1)
            v.mul_(state.beta2).addcmul_(g, g, value=1.0 - state.beta2)
            update = (m / bc1) / (torch.sqrt(v / bc2) + state.eps)
            p.sub_(state.lr * (update + state.weight_decay * p))
    state.step = t


class AdamW:
    """Thin optimizer over a fixed, ordered parameter list."""

    def __init__(self, params: Iterable[torch.Tensor], lr: float = 1e-4, betas=(0.9, 0.99),
                 eps: float = 1e-8, weight_decay: float = 3e-4):
        self.params = [p for p in params if p.requires_grad]
        self.state = AdamWState(lr, betas[0], betas[1], eps, weight_decay)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        grads = [torch.zeros_like(p) if p.grad is None else p.grad for p in self.params]
        adamw_step(self.params, grads, self.state)


CKPT_HEADER = "SPECMTM-CKPT-1"

_DTYPES = {
    "float32": (torch.float32, "<f4"),
    "float64": (torch.float64, "<f8"),
    "int64": (torch.int64, "<i8"),
    "bool": (torch.bool, "|b1"),
}
_BY_TORCH = {v[0]: k for k, v in _DTYPES.items()}


def save_checkpoint(path, tensors: dict[str, torch.Tensor], meta: dict | None = None) -> None:
    """Header line, one-line JSON manifest, then little-endian tensor bytes.

    Manifest entries carry ``name``, ``shape``, ``dtype`` and ``offset`` (bytes
    from the start of the data section) in insertion order.
    """
    entries, blobs, offset = [], [], 0
    for name, t in tensors.items():
        t = t.detach().cpu().contiguous()
        if t.dtype not in _BY_TORCH:
            raise TypeError(f"unsupported dtype {t.dtype} for {name}")
        dtype = _BY_TORCH[t.dtype]
        raw = t.numpy().astype(_DTYPES[dtype][1], copy=False).tobytes()
        entries.append({"name": name, "shape": list(t.shape), "dtype": dtype, "offset": offset,
                        "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    manifest = json.dumps({"tensors": entries, "meta": meta or {}}, sort_keys=True)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(f"{CKPT_HEADER}\n".encode())
        fh.write(manifest.encode() + b"\n")
        for raw in blobs:
            fh.write(raw)
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[dict[str, torch.Tensor], dict]:
    with open(path, "rb") as fh:
        header = fh.readline().decode().strip()
        if header != CKPT_HEADER:
            raise ValueError(f"{path}: not a checkpoint (header {header!r})")
        manifest = json.loads(fh.readline())
        data = fh.read()
    out = {}
    for e in manifest["tensors"]:
        torch_dtype, np_dtype = _DTYPES[e["dtype"]]
        chunk = data[e["offset"] : e["offset"] + e["nbytes"]]
        arr = np.frombuffer(chunk, dtype=np_dtype).reshape(e["shape"])
        out[e["name"]] = torch.from_numpy(arr.copy()).to(torch_dtype)
    return out, manifest.get("meta", {})


def spawn_seeds(seed: int, n: int) -> list[int]:
    """Derive ``n`` independent child seeds from one root seed."""
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def set_threads(default: int | None = None) -> int:
    """Apply ``SPECMTM_THREADS`` (or ``default``) as torch's intra-op thread cap."""
    env = os.environ.get("SPECMTM_THREADS")
    n = int(env) if env else default
    if n:
        torch.set_num_threads(max(1, n))
    return torch.get_num_threads()


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()

