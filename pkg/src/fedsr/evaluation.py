"""PSNR metric and cross-degradation evaluation tables."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import load_manifest, load_ppm, verify_manifest
from .degradation import VARIANTS
from .errors import InvalidArgumentError
from .model import config_from_weights, forward

PSNR_CAP = 100.0


def _luma(x):
    # ITU-R BT.601 studio-swing Y on the unit range
    return (65.481 * x[..., 0, :, :] + 128.553 * x[..., 1, :, :]
            + 24.966 * x[..., 2, :, :] + 16.0) / 255.0


def psnr(a, b, y_channel: bool = False) -> float:
    """Peak signal-to-noise ratio in dB at unit peak, capped at 100 dB."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"shape mismatch: {a.shape} vs {b.shape}")
    a = np.clip(a.astype(np.float64), 0.0, 1.0)
    b = np.clip(b.astype(np.float64), 0.0, 1.0)
    if y_channel:
        a, b = _luma(a), _luma(b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


@dataclass
class EvaluationMatrix:
    """Mean PSNR per (degradation combo, dataset)."""

    datasets: list[str]
    values: np.ndarray  # (len(VARIANTS), len(datasets))
    rows: tuple = VARIANTS

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (len(self.rows), len(self.datasets)):
            raise InvalidArgumentError(
                f"values shape {self.values.shape} does not match "
                f"{len(self.rows)} rows x {len(self.datasets)} datasets"
            )

    def cell(self, combo: str, dataset: str) -> float:
        return float(self.values[self.rows.index(combo), self.datasets.index(dataset)])

    def column(self, dataset: str) -> np.ndarray:
        return self.values[:, self.datasets.index(dataset)].copy()

    def concat(self, other: "EvaluationMatrix") -> "EvaluationMatrix":
        if tuple(other.rows) != tuple(self.rows):
            raise InvalidArgumentError("row labels differ")
        return EvaluationMatrix(self.datasets + other.datasets,
                                np.hstack([self.values, other.values]), self.rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["combo", "dataset", "psnr_db"])
        for i, combo in enumerate(self.rows):
            for j, ds in enumerate(self.datasets):
                w.writerow([combo, ds, f"{self.values[i, j]:.6f}"])
        return buf.getvalue()

    def save(self, path):
        Path(path).write_text(self.to_csv())

    @classmethod
    def from_csv(cls, text: str) -> "EvaluationMatrix":
        reader = csv.DictReader(io.StringIO(text))
        if reader.fieldnames != ["combo", "dataset", "psnr_db"]:
            raise InvalidArgumentError(f"unexpected matrix header {reader.fieldnames}")
        cells, datasets = {}, []
        for row in reader:
            if row["dataset"] not in datasets:
                datasets.append(row["dataset"])
            cells[(row["combo"], row["dataset"])] = float(row["psnr_db"])
        try:
            values = [[cells[(c, d)] for d in datasets] for c in VARIANTS]
        except KeyError as exc:
            raise InvalidArgumentError(f"matrix is missing cell {exc.args[0]}")
        return cls(datasets, np.array(values))

    @classmethod
    def load(cls, path) -> "EvaluationMatrix":
        return cls.from_csv(Path(path).read_text())


@dataclass
class RelativeMatrix:
    datasets: list[str]
    values: np.ndarray
    baseline: str = "baseline"
    rows: tuple = VARIANTS

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["combo", *self.datasets])
        for i, combo in enumerate(self.rows):
            w.writerow([combo, *(f"{v:.6f}" for v in self.values[i])])
        return buf.getvalue()

    def save(self, path):
        Path(path).write_text(self.to_csv())

    @classmethod
    def from_csv(cls, text: str, baseline: str = "baseline") -> "RelativeMatrix":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0][0] != "combo":
            raise InvalidArgumentError("heatmap header must start with 'combo'")
        body = {r[0]: [float(v) for v in r[1:]] for r in rows[1:]}
        try:
            values = np.array([body[c] for c in VARIANTS])
        except KeyError as exc:
            raise InvalidArgumentError(f"heatmap is missing row {exc.args[0]}")
        return cls(rows[0][1:], values, baseline)


def relative_to_baseline(run: EvaluationMatrix, baseline: EvaluationMatrix,
                         baseline_name: str = "baseline") -> RelativeMatrix:
    if tuple(run.rows) != tuple(baseline.rows) or run.datasets != baseline.datasets:
        raise InvalidArgumentError(
            f"labels differ: {run.datasets} vs {baseline.datasets}"
        )
    return RelativeMatrix(list(run.datasets), run.values - baseline.values, baseline_name,
                          tuple(run.rows))


@dataclass
class DiffTable:
    """FL-minus-centralized differences as a clients-by-combo comparison table."""

    fl: EvaluationMatrix
    central: EvaluationMatrix
    fl_label: str = "FL"
    central_label: str = "1"

    @property
    def difference(self) -> np.ndarray:
        return relative_to_baseline(self.fl, self.central).values

    def render(self, pairs=None) -> str:
        rows = list(self.fl.rows)
        pairs = pairs or [tuple(rows[i:i + 2]) for i in range(0, len(rows), 2)]
        diff = self.difference
        lines = []
        for pair in pairs:
            header = ["Clients"] + [f"{ds}:{c}" for ds in self.fl.datasets for c in pair]
            body = []
            for label, m in ((self.central_label, self.central), (self.fl_label, self.fl)):
                body.append([label] + [f"{m.cell(c, ds):.2f}" for ds in m.datasets for c in pair])
            body.append(["difference"] + [
                f"{diff[rows.index(c), j]:+.2f}"
                for j, _ in enumerate(self.fl.datasets) for c in pair
            ])
            widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
            for r in [header] + body:
                lines.append(" | ".join(v.rjust(w) for v, w in zip(r, widths)))
            lines.append("")
        return "\n".join(lines)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["combo", "dataset", "central_db", "fl_db", "difference_db"])
        diff = self.difference
        for i, combo in enumerate(self.fl.rows):
            for j, ds in enumerate(self.fl.datasets):
                w.writerow([combo, ds, f"{self.central.values[i, j]:.6f}",
                            f"{self.fl.values[i, j]:.6f}", f"{diff[i, j]:.6f}"])
        return buf.getvalue()


def diff_table(fl: EvaluationMatrix, central: EvaluationMatrix, fl_label="FL",
               central_label="1") -> DiffTable:
    relative_to_baseline(fl, central)  # label check
    return DiffTable(fl, central, fl_label, central_label)


@dataclass
class ImageScore:
    combo: str
    image_id: str
    psnr_db: float


def per_image_csv(scores) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["combo", "image_id", "psnr_db"])
    for s in scores:
        w.writerow([s.combo, s.image_id, f"{s.psnr_db:.6f}"])
    return buf.getvalue()


def super_resolve(weights, lr, config=None):
    """Full-image inference for one (3,h,w) LR image, clamped to [0,1]."""
    out = forward(weights, lr[None], config)[0]
    return np.clip(out, 0.0, 1.0)


def evaluate(weights, variants_manifest, dataset: str | None = None, y_channel: bool = False,
             verify: bool = True):
    """Mean PSNR of the model on every test variant of one manifest.

    Returns ``(EvaluationMatrix, per_image_scores)``. Weights are only read.
    """
    manifest, root = (variants_manifest if isinstance(variants_manifest, tuple)
                      else load_manifest(variants_manifest))
    if verify:
        verify_manifest(manifest, root)
    config = config_from_weights(weights)
    if config.scale != manifest["scale"]:
        raise InvalidArgumentError(
            f"model scale {config.scale} != test set scale {manifest['scale']}"
        )
    hr = {e["id"]: load_ppm(Path(root) / e["path"]).hr for e in manifest["hr"]}
    by_name = {v["name"]: v for v in manifest["variants"]}
    scores, column = [], []
    for combo in VARIANTS:
        vals = []
        for entry in by_name[combo]["files"]:
            lr = load_ppm(Path(root) / entry["path"]).hr
            value = psnr(super_resolve(weights, lr, config), hr[entry["id"]], y_channel)
            scores.append(ImageScore(combo, entry["id"], value))
            vals.append(value)
        column.append(float(np.mean(vals)))
    name = dataset or Path(root).name
    return EvaluationMatrix([name], np.array(column)[:, None]), scores
