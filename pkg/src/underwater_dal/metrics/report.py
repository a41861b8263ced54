import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from ..formation.water_types import MERGED_LABELS
from ..lib.errors import ConfigError, InvalidInputError
from ..lib.io_util import write_csv
from .quality import psnr, ssim

logger = logging.getLogger(__name__)

REPORT_HEADER = ("class", "n", "ssim_mean", "psnr_mean")


@dataclass
class MetricReport:
    """Per water type means of SSIM and PSNR, plus the overall means over every pair.

    Attributes:
        counts (Dict[int, int]): pairs per class_id, only classes that occur
        ssim_mean (Dict[int, float]): SSIM mean per class_id
        psnr_mean (Dict[int, float]): PSNR mean per class_id, dB
        overall_ssim (float): mean over all pairs
        overall_psnr (float): mean over all pairs
        labels (Sequence[str]): class names indexed by class_id
    """

    counts: Dict[int, int]
    ssim_mean: Dict[int, float]
    psnr_mean: Dict[int, float]
    overall_ssim: float
    overall_psnr: float
    labels: Sequence[str] = field(default=MERGED_LABELS)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def rows(self) -> List[Tuple[str, int, float, float]]:
        rows = [
            (self.labels[c], self.counts[c], self.ssim_mean[c], self.psnr_mean[c])
            for c in sorted(self.counts)
        ]
        rows.append(("all", self.total, self.overall_ssim, self.overall_psnr))
        return rows


def aggregate_by_class(
    pairs: Iterable[Tuple[np.ndarray, np.ndarray, int]],
    labels: Sequence[str] = MERGED_LABELS,
    per_channel=False,
    max_val=1.0,
) -> MetricReport:
    """Score every (output, ground truth, class_id) pair and average by class

    Args:
        pairs (Iterable[Tuple[np.ndarray, np.ndarray, int]]): enhanced image, reference, water type
        labels (Sequence[str], optional): class names. Defaults to the merged Jerlov labels.
        per_channel (bool, optional): per-channel SSIM instead of luma. Defaults to False.
        max_val (float, optional): PSNR dynamic range. Defaults to 1.0.

    Returns:
        MetricReport: grouped means
    """
    ssims, psnrs, classes = [], [], []
    for output, truth, class_id in pairs:
        class_id = int(class_id)
        if not 0 <= class_id < len(labels):
            raise InvalidInputError(f"class_id {class_id} outside [0, {len(labels) - 1}]")
        ssims.append(ssim(output, truth, per_channel=per_channel))
        psnrs.append(psnr(output, truth, max_val))
        classes.append(class_id)
    if not classes:
        raise ConfigError("cannot aggregate an empty collection of pairs")

    ssims, psnrs, classes = np.asarray(ssims), np.asarray(psnrs), np.asarray(classes)
    counts, ssim_mean, psnr_mean = {}, {}, {}
    for c in np.unique(classes):
        mask = classes == c
        counts[int(c)] = int(mask.sum())
        ssim_mean[int(c)] = float(np.mean(ssims[mask]))
        psnr_mean[int(c)] = float(np.mean(psnrs[mask]))
    return MetricReport(counts, ssim_mean, psnr_mean, float(np.mean(ssims)), float(np.mean(psnrs)), tuple(labels))


def evaluate_identity_baseline(degraded: np.ndarray, clear: np.ndarray, class_ids: Sequence[int], **kwargs) -> MetricReport:
    """Metrics of the untouched degraded inputs against their ground truth"""
    return aggregate_by_class(zip(degraded, clear, class_ids), **kwargs)


def write_report_csv(report: MetricReport, filename: str, message="metric report"):
    write_csv(filename, REPORT_HEADER, report.rows(), message)


def format_report(report: MetricReport, title="") -> str:
    lines = [title] if title else []
    lines.append(f"{'class':<10}{'n':>7}{'SSIM':>10}{'PSNR':>10}")
    for label, n, s, p in report.rows():
        lines.append(f"{label:<10}{n:>7d}{s:>10.4f}{p:>10.2f}")
    return "\n".join(lines)
