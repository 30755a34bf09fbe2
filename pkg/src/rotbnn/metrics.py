"""Per-layer diagnostics and report emission (CSV + static SVG)."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .rotation import sign

CSV_COLUMNS = ("epoch", "layer_id", "cos_before", "cos_after", "qerr_base", "qerr_rot",
               "flip_rate", "alpha", "loss", "train_acc", "test_acc")


def cosine_similarity(w) -> float:
    """Cosine between ``w`` and ``sign(w)``: ``||w||_1 / (sqrt(n) ||w||_2)``."""
    w = np.asarray(w, dtype=np.float64).ravel()
    nrm = float(np.linalg.norm(w))
    if nrm == 0.0:
        raise ValueError("cosine similarity is undefined for the zero vector")
    return float(np.abs(w).sum() / (math.sqrt(w.size) * nrm))


def flip_rate(initial_sign, current_binary) -> float:
    a = np.asarray(initial_sign).ravel()
    b = np.asarray(current_binary).ravel()
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    return float(np.mean(sign(a) != sign(b)))


def histogram(w, bins: int, range: tuple[float, float]) -> np.ndarray:
    """Bin counts over ``range`` with left-closed bins; out-of-range samples go to the edge bins."""
    if bins < 1:
        raise ValueError("bins must be >= 1")
    lo, hi = range
    if not hi > lo:
        raise ValueError("range must satisfy hi > lo")
    w = np.asarray(w, dtype=np.float64).ravel()
    edges = np.linspace(lo, hi, bins + 1)
    idx = np.searchsorted(edges, w, side="right") - 1
    return np.bincount(np.clip(idx, 0, bins - 1), minlength=bins)


def central_mass(w, half_width: float) -> float:
    """Fraction of weights within ``half_width`` of zero (histogram bimodality probe)."""
    w = np.asarray(w).ravel()
    return float(np.mean(np.abs(w) < half_width))


@dataclass
class LayerMetrics:
    layer_id: str
    cos_before: float
    cos_after: float
    qerr_base: float
    qerr_rot: float
    flip_rate: float
    alpha: float
    n: int = 1

    @property
    def qerr_base_per_weight(self) -> float:
        return self.qerr_base / self.n

    @property
    def qerr_rot_per_weight(self) -> float:
        return self.qerr_rot / self.n


@dataclass
class MetricsRecord:
    epoch: int
    layers: list[LayerMetrics] = field(default_factory=list)
    loss: float = float("nan")
    train_acc: float = float("nan")
    test_acc: float = float("nan")

    def rows(self):
        for lm in self.layers:
            yield (self.epoch, lm.layer_id, lm.cos_before, lm.cos_after, lm.qerr_base, lm.qerr_rot,
                   lm.flip_rate, lm.alpha, self.loss, self.train_acc, self.test_acc)


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(records: Iterable[MetricsRecord], path: Path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for rec in records:
            for row in rec.rows():
                writer.writerow([_fmt(v) for v in row])
                n += 1
    return n


# ---------------------------------------------------------------- SVG

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


def _svg_frame(title, width, height, body, ylabel):
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">\n'
        f'<rect width="{width}" height="{height}" fill="white"/>\n'
        f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="14" '
        f'font-family="sans-serif">{title}</text>\n'
        f'<text x="12" y="{height / 2:.1f}" font-size="11" font-family="sans-serif" '
        f'transform="rotate(-90 12 {height / 2:.1f})" text-anchor="middle">{ylabel}</text>\n'
        f"{body}</svg>\n"
    )


def _scale(vals, lo_px, hi_px):
    finite = [v for v in vals if math.isfinite(v)]
    lo, hi = (min(finite), max(finite)) if finite else (0.0, 1.0)
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    return lambda v: lo_px + (v - lo) / (hi - lo) * (hi_px - lo_px), lo, hi


def svg_grouped_bars(title, categories: Sequence[str], series: dict[str, Sequence[float]],
                     ylabel="", width=640, height=360) -> str:
    left, right, top, bottom = 60, width - 20, 30, height - 60
    allv = [v for s in series.values() for v in s] + [0.0]
    ymap, lo, hi = _scale(allv, bottom, top)
    parts = [f'<line x1="{left}" y1="{bottom}" x2="{right}" y2="{bottom}" stroke="black"/>\n',
             f'<line x1="{left}" y1="{top}" x2="{left}" y2="{bottom}" stroke="black"/>\n',
             f'<text x="{left - 4}" y="{top + 4}" text-anchor="end" font-size="10">{hi:.3g}</text>\n',
             f'<text x="{left - 4}" y="{bottom}" text-anchor="end" font-size="10">{lo:.3g}</text>\n']
    ncat = max(len(categories), 1)
    group_w = (right - left) / ncat
    bar_w = group_w * 0.8 / max(len(series), 1)
    for si, (label, vals) in enumerate(series.items()):
        color = _PALETTE[si % len(_PALETTE)]
        for ci, v in enumerate(vals):
            if not math.isfinite(v):
                continue
            x = left + ci * group_w + group_w * 0.1 + si * bar_w
            y0, y1 = ymap(0.0), ymap(v)
            parts.append(f'<rect x="{x:.2f}" y="{min(y0, y1):.2f}" width="{bar_w:.2f}" '
                         f'height="{abs(y1 - y0):.2f}" fill="{color}"/>\n')
        parts.append(f'<text x="{right - 4}" y="{top + 14 * (si + 1)}" text-anchor="end" '
                     f'font-size="11" fill="{color}">{label}</text>\n')
    for ci, cat in enumerate(categories):
        x = left + (ci + 0.5) * group_w
        parts.append(f'<text x="{x:.2f}" y="{bottom + 14}" text-anchor="middle" font-size="10">{cat}</text>\n')
    return _svg_frame(title, width, height, "".join(parts), ylabel)


def svg_lines(title, xs: Sequence[float], series: dict[str, Sequence[float]], ylabel="",
              xlabel="epoch", width=640, height=360) -> str:
    left, right, top, bottom = 60, width - 20, 30, height - 50
    allv = [v for s in series.values() for v in s]
    ymap, lo, hi = _scale(allv, bottom, top)
    xmap, xlo, xhi = _scale(list(xs), left, right)
    parts = [f'<line x1="{left}" y1="{bottom}" x2="{right}" y2="{bottom}" stroke="black"/>\n',
             f'<line x1="{left}" y1="{top}" x2="{left}" y2="{bottom}" stroke="black"/>\n',
             f'<text x="{left - 4}" y="{top + 4}" text-anchor="end" font-size="10">{hi:.3g}</text>\n',
             f'<text x="{left - 4}" y="{bottom}" text-anchor="end" font-size="10">{lo:.3g}</text>\n',
             f'<text x="{left}" y="{bottom + 14}" font-size="10">{xlo:g}</text>\n',
             f'<text x="{right}" y="{bottom + 14}" text-anchor="end" font-size="10">{xhi:g}</text>\n',
             f'<text x="{(left + right) / 2:.1f}" y="{bottom + 30}" text-anchor="middle" '
             f'font-size="11">{xlabel}</text>\n']
    for si, (label, vals) in enumerate(series.items()):
        color = _PALETTE[si % len(_PALETTE)]
        pts = " ".join(f"{xmap(x):.2f},{ymap(v):.2f}" for x, v in zip(xs, vals) if math.isfinite(v))
        if pts:
            parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>\n')
        parts.append(f'<text x="{right - 4}" y="{top + 14 * (si + 1)}" text-anchor="end" '
                     f'font-size="11" fill="{color}">{label}</text>\n')
    return _svg_frame(title, width, height, "".join(parts), ylabel)


def emit_reports(records: Sequence[MetricsRecord], out_dir) -> list[Path]:
    """Write ``metrics.csv`` and one SVG per diagnostic; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = list(records)
    paths = [out / "metrics.csv"]
    write_csv(records, paths[0])
    if not records or not records[-1].layers:
        return paths

    last = records[-1]
    names = [lm.layer_id for lm in last.layers]
    charts = {
        "cosine.svg": svg_grouped_bars(
            f"Cosine similarity per layer (epoch {last.epoch})", names,
            {"before rotation": [lm.cos_before for lm in last.layers],
             "after rotation": [lm.cos_after for lm in last.layers]}, ylabel="cosine"),
        "quant_error.svg": svg_grouped_bars(
            f"Quantization error per layer (epoch {last.epoch})", names,
            {"scaled sign": [lm.qerr_base for lm in last.layers],
             "adjusted rotated": [lm.qerr_rot for lm in last.layers]}, ylabel="squared error"),
        "flip_rate.svg": svg_grouped_bars(
            f"Weight flip rate per layer (epoch {last.epoch})", names,
            {"flip rate": [lm.flip_rate for lm in last.layers]}, ylabel="fraction flipped"),
    }
    epochs = [r.epoch for r in records]
    alpha_series = {}
    for name in names:
        alpha_series[name] = [next((lm.alpha for lm in r.layers if lm.layer_id == name), float("nan"))
                              for r in records]
    charts["alpha.svg"] = svg_lines("Adjustment weight alpha per layer", epochs, alpha_series, ylabel="alpha")
    for fname, text in charts.items():
        p = out / fname
        p.write_text(text, encoding="utf-8")
        paths.append(p)
    return paths
