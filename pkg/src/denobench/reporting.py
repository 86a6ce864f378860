"""CSV and Markdown emission for benchmark results.

CSV floats use repr() (shortest round-trip form) so equal runs produce
byte-identical files; Markdown rounds to three decimals in the published
"mean ± std" style. No timestamps or environment data are written.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

from .metrics import MetricStats
from .training import EvalReport, TrainHistory

__all__ = [
    "SummaryRow",
    "summary_row",
    "sort_rows",
    "write_summary_csv",
    "read_summary_csv",
    "render_summary_markdown",
    "write_history_csv",
    "write_per_image_csv",
    "read_per_image_csv",
]

SUMMARY_COLUMNS = ("sigma", "method", "psnr_mean", "psnr_std", "ssim_mean", "ssim_std")
PER_IMAGE_COLUMNS = ("id", "psnr", "ssim", "noisy_psnr", "noisy_ssim")
HISTORY_COLUMNS = ("epoch", "train_loss", "val_loss", "is_best")


@dataclass(frozen=True)
class SummaryRow:
    sigma: int
    method: str
    psnr_mean: float
    psnr_std: float
    ssim_mean: float
    ssim_std: float


def summary_row(sigma: int, method: str, psnr_stats: MetricStats,
                ssim_stats: MetricStats) -> SummaryRow:
    return SummaryRow(sigma=int(sigma), method=method,
                      psnr_mean=psnr_stats.mean, psnr_std=psnr_stats.std,
                      ssim_mean=ssim_stats.mean, ssim_std=ssim_stats.std)


def sort_rows(rows: list[SummaryRow]) -> list[SummaryRow]:
    """Sigma ascending, then method alphabetical (the reference table order)."""
    return sorted(rows, key=lambda r: (r.sigma, r.method))


def _fmt(value: float) -> str:
    return repr(float(value))


def write_summary_csv(path, rows: list[SummaryRow]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_COLUMNS)
        for r in sort_rows(rows):
            writer.writerow([r.sigma, r.method, _fmt(r.psnr_mean), _fmt(r.psnr_std),
                             _fmt(r.ssim_mean), _fmt(r.ssim_std)])


def read_summary_csv(path) -> list[SummaryRow]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != SUMMARY_COLUMNS:
            raise ValueError(
                f"{path}: expected columns {','.join(SUMMARY_COLUMNS)}, "
                f"got {reader.fieldnames}")
        for rec in reader:
            rows.append(SummaryRow(
                sigma=int(rec["sigma"]), method=rec["method"],
                psnr_mean=float(rec["psnr_mean"]), psnr_std=float(rec["psnr_std"]),
                ssim_mean=float(rec["ssim_mean"]), ssim_std=float(rec["ssim_std"])))
    return rows


def render_summary_markdown(rows: list[SummaryRow]) -> str:
    """Markdown table in the published layout: sigma, method, PSNR, SSIM."""
    lines = [
        "| sigma | method | PSNR (dB) | SSIM |",
        "| --- | --- | --- | --- |",
    ]
    for r in sort_rows(rows):
        lines.append(
            f"| {r.sigma} | {r.method} | {r.psnr_mean:.3f} ± {r.psnr_std:.3f} "
            f"| {r.ssim_mean:.3f} ± {r.ssim_std:.3f} |")
    return "\n".join(lines) + "\n"


def write_history_csv(path, history: TrainHistory) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(HISTORY_COLUMNS)
        for rec in history.epochs:
            writer.writerow([rec.epoch, _fmt(rec.train_loss), _fmt(rec.val_loss),
                             "true" if rec.is_best else "false"])


def write_per_image_csv(path, report: EvalReport) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PER_IMAGE_COLUMNS)
        for i, image_id in enumerate(report.image_ids):
            writer.writerow([image_id,
                             _fmt(report.psnr_values[i]), _fmt(report.ssim_values[i]),
                             _fmt(report.noisy_psnr_values[i]),
                             _fmt(report.noisy_ssim_values[i])])


def read_per_image_csv(path) -> dict[str, list[float]]:
    """Columns of the per-image file keyed by name ('id' holds strings)."""
    out: dict[str, list] = {name: [] for name in PER_IMAGE_COLUMNS}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != PER_IMAGE_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
        for rec in reader:
            out["id"].append(rec["id"])
            for name in PER_IMAGE_COLUMNS[1:]:
                out[name].append(float(rec[name]))
    return out
