"""Volume overlap/distance metrics for LA and surface metrics for scar labelings."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields
from typing import Optional

import numpy as np

from .distance import edt_squared
from .surface import NORMAL, SCAR, extract_boundary
from .volume import VolumeError


@dataclass
class MetricReport:
    dice: Optional[float] = None
    asd_mm: Optional[float] = None
    hd_mm: Optional[float] = None
    accuracy: Optional[float] = None
    dice_scar: Optional[float] = None
    gdice: Optional[float] = None

    @classmethod
    def names(cls):
        return [f.name for f in fields(cls)]

    def as_row(self):
        return {k: ("" if v is None else repr(float(v))) for k, v in asdict(self).items()}


def dice(a, b):
    a, b = a.data, b.data
    if a.shape != b.shape:
        raise VolumeError("masks differ in shape")
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        raise VolumeError("Dice of two empty masks is undefined")
    return 2.0 * int((a & b).sum()) / total


def _directed_distances(a, b):
    """Nearest-boundary distances from each boundary voxel of ``a`` to the boundary of ``b``."""
    if a.dims != b.dims:
        raise VolumeError("masks differ in shape")
    ba = extract_boundary(a).data
    bb = extract_boundary(b).data
    d_to_b = np.sqrt(edt_squared(bb, b.spacing))
    d_to_a = np.sqrt(edt_squared(ba, a.spacing))
    return d_to_b[ba], d_to_a[bb]


def asd(a, b):
    """Average symmetric surface distance in mm."""
    ab, ba = _directed_distances(a, b)
    return math.fsum(np.concatenate([ab, ba]).tolist()) / (len(ab) + len(ba))


def hausdorff(a, b):
    """Full (100th percentile) symmetric Hausdorff distance in mm."""
    ab, ba = _directed_distances(a, b)
    return float(max(ab.max(), ba.max()))


def _check_same_surface(pred, gold):
    if not pred.same_surface(gold):
        raise VolumeError("labelings are not defined on the same surface")


def surface_accuracy(pred, gold):
    """Fraction of surface voxels whose class agrees."""
    _check_same_surface(pred, gold)
    return float(np.mean(pred.labels == gold.labels))


def dice_scar(pred, gold):
    _check_same_surface(pred, gold)
    p = pred.labels == SCAR
    g = gold.labels == SCAR
    total = int(p.sum()) + int(g.sum())
    if total == 0:
        raise VolumeError("Dice of scars is undefined when neither labeling has scar")
    return 2.0 * int((p & g).sum()) / total


def generalized_dice(pred, gold):
    """Two-class Dice with uniform class weights over the surface."""
    _check_same_surface(pred, gold)
    num = 0
    den = 0
    for k in (NORMAL, SCAR):
        p = pred.labels == k
        g = gold.labels == k
        num += int((p & g).sum())
        den += int(p.sum()) + int(g.sum())
    return 2.0 * num / den


def la_report(pred, gold):
    """Dice/ASD/HD for a predicted LA mask; distance metrics None if the prediction has no boundary."""
    report = MetricReport(dice=dice(pred, gold))
    if pred.any() and not pred.is_full():
        report.asd_mm = asd(pred, gold)
        report.hd_mm = hausdorff(pred, gold)
    return report


def scar_report(pred, gold, report=None):
    report = report if report is not None else MetricReport()
    report.accuracy = surface_accuracy(pred, gold)
    report.gdice = generalized_dice(pred, gold)
    if pred.n_scar + gold.n_scar > 0:
        report.dice_scar = dice_scar(pred, gold)
    return report


def write_reports(rows, path, key_fields=("case",)):
    """Write dict rows (key fields followed by metric columns) to CSV."""
    cols = list(key_fields) + MetricReport.names()
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def summarize(reports):
    """Mean and population std per metric, skipping missing values."""
    out = {}
    for name in MetricReport.names():
        vals = [getattr(r, name) for r in reports if getattr(r, name) is not None]
        if vals:
            out[name] = (float(np.mean(vals)), float(np.std(vals)), len(vals))
        else:
            out[name] = (None, None, 0)
    return out


def format_mean_std(mean, std, digits=3):
    if mean is None:
        return ""
    return f"{mean:.{digits}f} ± {std:.{digits}f}"
