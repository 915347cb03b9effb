"""Train/evaluate loops shared by the CLI, the ablation and the beta study."""

from __future__ import annotations

import logging
from dataclasses import replace
from typing import NamedTuple

import numpy as np

from .distance import volume_diagonal
from .metrics import MetricReport, la_report, scar_report
from .surface import SurfaceLabeling, project_to_surface
from .training import predict, prepare_case, train, variant_configs
from .volume import Volume, zscore_normalize

log = logging.getLogger(__name__)


class TrainedVariant(NamedTuple):
    variant: str
    nets: list  # one per head group (1 for MTL, 2 for single-task)
    logs: list


def prepare_cases(cases, beta=1.0, thickness=1):
    return [prepare_case(c.image, c.la, c.wall, c.scar, beta, thickness) for c in cases]


def train_variant(variant, train_cases, net_cfg, train_cfg, heads=None, prepared=None):
    """Train every network ``variant`` needs; ``heads`` limits single-task runs to a subset."""
    if prepared is None:
        prepared = prepare_cases(train_cases, train_cfg.beta, train_cfg.thickness)
    nets, logs = [], []
    for ncfg, tcfg in variant_configs(variant, net_cfg, train_cfg):
        if heads is not None and not set(ncfg.heads) & set(heads):
            continue
        log.info("training %s heads=%s for %d iterations", variant, ncfg.heads, tcfg.iterations)
        net, rows = train(prepared, tcfg, ncfg)
        nets.append(net)
        logs.append(rows)
    return TrainedVariant(variant, nets, logs)


def case_metrics(pred_la, labeling, gold_la, gold_scar, d_max=5.0):
    """MetricReport for one case.

    ``pred_la`` is None when no LA head was trained; ``labeling`` is False
    when no scar head was trained and None when one was but produced no
    labeling. A predicted LA without a boundary (empty or full) is charged
    the volume diagonal for ASD and HD; a missing labeling counts as
    all-normal.
    """
    report = MetricReport()
    if pred_la is not None:
        if pred_la.any() and not pred_la.is_full():
            report = la_report(pred_la, gold_la)
        else:
            worst = volume_diagonal(gold_la.dims, gold_la.spacing)
            report = MetricReport(dice=la_report(pred_la, gold_la).dice, asd_mm=worst, hd_mm=worst)
    if labeling is not False:
        gold = project_to_surface(gold_scar, gold_la, d_max)
        if labeling is None:
            labeling = SurfaceLabeling(gold.indices, np.zeros_like(gold.labels), gold.dims, gold.spacing)
        scar_report(labeling, gold, report)
    return report


def evaluate_case(trained, case, d_max=5.0, band_thickness=1):
    image = Volume(zscore_normalize(case.image).data, case.image.spacing)
    pred = predict(trained.nets, image, d_max, surface_la=case.la, band_thickness=band_thickness)
    has_scar = any("scar" in n.config.heads for n in trained.nets)
    return case_metrics(pred.la, pred.labeling if has_scar else False, case.la, case.scar, d_max)


def evaluate_variant(trained, test_cases, d_max=5.0, band_thickness=1):
    return [evaluate_case(trained, c, d_max, band_thickness) for c in test_cases]


def mean_metric(reports, name):
    vals = [getattr(r, name) for r in reports if getattr(r, name) is not None]
    return float(np.mean(vals)) if vals else None


def run_ablation(variants, seeds, train_cases, test_cases, net_cfg, train_cfg,
                 d_max=5.0, band_thickness=1, heads=None, on_trained=None):
    """Train and evaluate each (variant, seed); returns per-case and per-run rows.

    ``on_trained(variant, seed, trained)`` is called after each training run,
    e.g. to save checkpoints.
    """
    prepared = prepare_cases(train_cases, train_cfg.beta, train_cfg.thickness)
    case_rows, run_rows = [], []
    for variant in variants:
        for seed in seeds:
            tcfg = replace(train_cfg, seed=seed)
            trained = train_variant(variant, train_cases, net_cfg, tcfg, heads=heads, prepared=prepared)
            if on_trained is not None:
                on_trained(variant, seed, trained)
            reports = evaluate_variant(trained, test_cases, d_max, band_thickness)
            for i, r in enumerate(reports):
                case_rows.append({"variant": variant, "seed": seed, "case": i, **r.as_row()})
            means = {name: mean_metric(reports, name) for name in MetricReport.names()}
            run_rows.append({"variant": variant, "seed": seed, **means})
    return case_rows, run_rows


def medians(run_rows, variants):
    out = {}
    for variant in variants:
        rows = [r for r in run_rows if r["variant"] == variant]
        out[variant] = {}
        for name in MetricReport.names():
            vals = [r[name] for r in rows if r[name] is not None]
            out[variant][name] = float(np.median(vals)) if vals else None
    return out
