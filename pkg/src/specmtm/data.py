"""Dataset ingestion (UEA ``.ts``, UCR ``.tsv``), synthetic generation and normalization.

Batches are numpy-backed: ``values`` is ``(N, L, C)`` float64 and ``labels``
holds 0-based class indices into ``class_names``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = [
    "TimeSeriesBatch",
    "DatasetMeta",
    "FormatError",
    "parse_ts",
    "write_ts",
    "parse_tsv",
    "write_tsv",
    "SynthSpec",
    "synth_generate",
    "ChannelStats",
    "fit_stats",
    "normalize",
    "train_test_split",
]


class FormatError(ValueError):
    """Malformed dataset file; the message carries the offending line number."""


@dataclass
class TimeSeriesBatch:
    values: np.ndarray
    labels: np.ndarray | None = None
    class_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3:
            raise ValueError(f"values must be (N, L, C), got shape {self.values.shape}")
        if not np.isfinite(self.values).all():
            raise ValueError("time-series values must be finite")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (len(self.values),):
                raise ValueError("labels must have one entry per sample")
            k = len(self.class_names)
            if k and len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= k):
                raise ValueError(f"labels outside [0, {k})")

    def __len__(self) -> int:
        return len(self.values)

    @property
    def length(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]

    def subset(self, idx) -> "TimeSeriesBatch":
        labels = None if self.labels is None else self.labels[idx]
        return TimeSeriesBatch(self.values[idx], labels, list(self.class_names))


@dataclass(frozen=True)
class DatasetMeta:
    name: str
    examples: int
    length: int
    channels: int
    classes: int
    kind: str = ""

    @classmethod
    def of(cls, batch: TimeSeriesBatch, name: str = "", kind: str = "") -> "DatasetMeta":
        return cls(name, len(batch), batch.length, batch.channels, len(batch.class_names), kind)


def _float(tok: str, lineno: int) -> float:
    tok = tok.strip()
    if tok == "?" or tok.lower() == "nan":
        raise FormatError(f"line {lineno}: missing value '{tok}' is not supported")
    try:
        return float(tok)
    except ValueError:
        raise FormatError(f"line {lineno}: cannot parse {tok!r} as a number") from None


def parse_ts(path) -> tuple[TimeSeriesBatch, DatasetMeta]:
    """Parse an sktime/UEA ``.ts`` file with equal-length series."""
    name = Path(path).stem
    has_labels = False
    labels_decl: list[str] = []
    saw_data = False
    rows, labels = [], []
    shape = None
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if not saw_data:
                if not line.startswith("@"):
                    raise FormatError(f"line {lineno}: data before @data")
                key, _, rest = line[1:].partition(" ")
                key = key.lower()
                if key == "problemname":
                    name = rest.strip() or name
                elif key == "classlabel":
                    parts = rest.split()
                    has_labels = bool(parts) and parts[0].lower() == "true"
                    labels_decl = parts[1:] if has_labels else []
                elif key == "data":
                    saw_data = True
                continue
            fields = line.split(":")
            if has_labels:
                label = fields[-1].strip()
                fields = fields[:-1]
                if label not in labels_decl:
                    raise FormatError(f"line {lineno}: unknown class label {label!r}")
                labels.append(labels_decl.index(label))
            dims = [[_float(tok, lineno) for tok in f.split(",")] for f in fields]
            lengths = {len(d) for d in dims}
            if len(lengths) != 1:
                raise FormatError(f"line {lineno}: dimensions have unequal lengths {sorted(lengths)}")
            this = (len(dims), lengths.pop())
            if shape is None:
                shape = this
            elif this != shape:
                raise FormatError(
                    f"line {lineno}: series of {this[0]} dims x {this[1]} steps, expected {shape[0]} x {shape[1]}"
                )
            rows.append(np.asarray(dims, dtype=np.float64).T)  # (L, C)
    if not saw_data:
        raise FormatError(f"{path}: missing @data section")
    values = np.stack(rows) if rows else np.zeros((0, 0, 0))
    batch = TimeSeriesBatch(values, np.asarray(labels) if has_labels else None, labels_decl)
    return batch, DatasetMeta.of(batch, name)


def write_ts(path, batch: TimeSeriesBatch, name: str = "synthetic") -> None:
    """Write ``batch`` as a ``.ts`` file; floats use ``repr`` so re-parsing is exact."""
    labelled = batch.labels is not None
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"@problemName {name}\n@timeStamps false\n@missing false\n")
        fh.write(f"@univariate {'true' if batch.channels == 1 else 'false'}\n")
        fh.write(f"@dimensions {batch.channels}\n@equalLength true\n@seriesLength {batch.length}\n")
        if labelled:
            fh.write("@classLabel true " + " ".join(batch.class_names) + "\n")
        else:
            fh.write("@classLabel false\n")
        fh.write("@data\n")
        for i, series in enumerate(batch.values):
            dims = [",".join(repr(float(v)) for v in series[:, c]) for c in range(batch.channels)]
            if labelled:
                dims.append(batch.class_names[batch.labels[i]])
            fh.write(":".join(dims) + "\n")


def _label_sort_key(tok: str):
    try:
        return (0, float(tok), tok)
    except ValueError:
        return (1, 0.0, tok)


def parse_tsv(path) -> tuple[TimeSeriesBatch, DatasetMeta]:
    """Parse a UCR-style ``.tsv``: first column the class label, the rest the series."""
    raw_labels, rows = [], []
    width = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            cols = line.split("\t")
            if width is None:
                width = len(cols)
            elif len(cols) != width:
                raise FormatError(f"line {lineno}: {len(cols)} columns, expected {width}")
            if width < 2:
                raise FormatError(f"line {lineno}: need a label and at least one value")
            label = cols[0].strip()
            try:
                label = repr(float(label)) if "." in label else str(int(float(label)))
            except ValueError:
                pass
            raw_labels.append(label)
            rows.append([_float(c, lineno) for c in cols[1:]])
    classes = sorted(set(raw_labels), key=_label_sort_key)
    lookup = {c: i for i, c in enumerate(classes)}
    values = np.asarray(rows, dtype=np.float64)[:, :, None] if rows else np.zeros((0, 0, 1))
    batch = TimeSeriesBatch(values, np.array([lookup[c] for c in raw_labels], dtype=np.int64), classes)
    return batch, DatasetMeta.of(batch, Path(path).stem)


def write_tsv(path, batch: TimeSeriesBatch) -> None:
    if batch.channels != 1:
        raise ValueError(".tsv holds univariate series only")
    if batch.labels is None:
        raise ValueError(".tsv needs labels")
    with open(path, "w", encoding="utf-8") as fh:
        for label, series in zip(batch.labels, batch.values[:, :, 0]):
            fh.write("\t".join([batch.class_names[label]] + [repr(float(v)) for v in series]) + "\n")


@dataclass
class SynthSpec:
    """Class ``c`` is a sum of sinusoids at integer bins ``frequencies[c]``."""

    frequencies: Sequence[Sequence[int]] = ((3,), (10,), (24,))
    amplitude: float = 1.0
    noise: float = 0.1
    n: int = 600
    length: int = 128
    channels: int = 2

    @property
    def classes(self) -> int:
        return len(self.frequencies)

    def validate(self) -> None:
        if self.classes < 1 or self.length < 2 or self.channels < 1 or self.n < 0:
            raise ValueError("synthetic spec needs >= 1 class, length >= 2, channels >= 1, n >= 0")
        for c, fs in enumerate(self.frequencies):
            for f in fs:
                if not 0 < f < self.length / 2:
                    raise ValueError(
                        f"class {c}: frequency {f} outside (0, Nyquist={self.length / 2})"
                    )


def synth_generate(spec: SynthSpec, seed: int) -> TimeSeriesBatch:
    """Balanced classes, random phase per sample and channel, additive Gaussian noise."""
    spec.validate()
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(spec.n) % spec.classes)
    t = np.arange(spec.length)
    values = np.zeros((spec.n, spec.length, spec.channels))
    for i, y in enumerate(labels):
        for f in spec.frequencies[y]:
            phase = rng.uniform(0, 2 * np.pi, size=spec.channels)
            values[i] += spec.amplitude * np.sin(2 * np.pi * f * t[:, None] / spec.length + phase)
    values += spec.noise * rng.standard_normal(values.shape)
    names = [f"class{c}" for c in range(spec.classes)]
    return TimeSeriesBatch(values, labels, names)


@dataclass(frozen=True)
class ChannelStats:
    mean: np.ndarray
    std: np.ndarray


def fit_stats(batch: TimeSeriesBatch) -> ChannelStats:
    v = batch.values.reshape(-1, batch.channels)
    return ChannelStats(v.mean(axis=0), v.std(axis=0))


def normalize(batch: TimeSeriesBatch, stats: ChannelStats | None = None, min_std: float = 1e-8) -> TimeSeriesBatch:
    """Per-channel z-score with ``stats`` (fit on ``batch`` itself when omitted).

    Channels whose std is below ``min_std`` are only centered.
    """
    stats = fit_stats(batch) if stats is None else stats
    scale = np.where(stats.std < min_std, 1.0, stats.std)
    values = (batch.values - stats.mean) / scale
    return TimeSeriesBatch(values, batch.labels, list(batch.class_names))


def train_test_split(batch: TimeSeriesBatch, test_fraction: float, seed: int):
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must be in (0, 1)")
    idx = np.random.default_rng(seed).permutation(len(batch))
    n_test = int(round(test_fraction * len(batch)))
    return batch.subset(np.sort(idx[n_test:])), batch.subset(np.sort(idx[:n_test]))
