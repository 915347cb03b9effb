"""Command-line pipeline over file artifacts.

Every verb reads the run configuration (``--config`` JSON plus ``--set``
overrides) and works inside ``--out``::

    data/       gen        phantom cases and manifest.txt
    targets/    targets    phi, distance-probability maps and M1 per case
    train/      train      <variant>/seed<s>/net_<heads>.ckpt and log_<heads>.csv
    predict/    predict    <variant>/seed<s>/case<i>_la.vol, case<i>_labeling.csv
    baseline/   baseline   <method>/case<i>_labeling.csv
    eval/       eval       <source>/per_case.csv and summary.csv
    ablate/     ablate     ablation.csv, per_case.csv, checkpoints
    beta/       beta-study beta_study.csv

Each stage directory also gets ``config.json`` and ``config_hash.txt``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as C
from .baselines import BaselineError, mgmm_scar, otsu_scar
from .distance import ProbabilityPair
from .experiment import case_metrics, medians, run_ablation
from .metrics import MetricReport, format_mean_std, summarize, write_reports
from .phantom import CASE_PARTS, PhantomCase, case_path, generate_dataset, read_manifest
from .surface import load_labeling, save_labeling
from .training import (
    LOG_COLUMNS,
    TrainingCase,
    TrainingError,
    load_checkpoint,
    predict,
    prepare_case,
    save_checkpoint,
    train,
    variant_configs,
    wall_band,
)
from .volume import LabelMask, Volume, VolumeError, load_mask, load_volume, save_volume, zscore_normalize

log = logging.getLogger("lasesa")


class MissingArtifact(RuntimeError):
    pass


# -- artifact helpers ---------------------------------------------------------

def _stage_dir(args, cfg, name):
    d = Path(args.out) / name
    d.mkdir(parents=True, exist_ok=True)
    (d / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
    (d / "config_hash.txt").write_text(C.config_hash(cfg) + "\n")
    return d


def _require(path, hint):
    if not Path(path).exists():
        raise MissingArtifact(f"missing {path}; run `{hint}` first")
    return Path(path)


def _load_cases(args, cfg, which="all"):
    data = Path(args.out) / "data"
    manifest = read_manifest(_require(data / "manifest.txt", "lasesa gen"))
    n = int(manifest["n_cases"])
    if n != cfg["data"]["n_cases"]:
        raise MissingArtifact(f"{data} holds {n} cases but the config asks for {cfg['data']['n_cases']}; rerun gen")
    k = cfg["data"]["n_train"]
    ids = {"all": range(n), "train": range(k), "test": range(k, n)}[which]
    cases = []
    for i in ids:
        image = load_volume(_require(case_path(data, i, "image"), "lasesa gen"))
        masks = [load_mask(_require(case_path(data, i, p), "lasesa gen")) for p in CASE_PARTS[1:]]
        cases.append(PhantomCase(image, *masks))
    return list(ids), cases


def _target_path(out, i, part):
    return Path(out) / "targets" / f"case{i:03d}_{part}.vol"


def _tag(heads):
    return "+".join(heads)


def _run_dir(args, variant, seed):
    return Path(args.out) / "train" / variant / f"seed{seed}"


def _write_rows(path, rows, columns):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(v) for k, v in row.items()})


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def _seed(args, cfg, section="train", key="seed"):
    return cfg[section][key] if args.seed is None else args.seed


# -- verbs --------------------------------------------------------------------

def cmd_gen(args, cfg):
    out = _stage_dir(args, cfg, "data")
    seed = _seed(args, cfg, "data")
    _, manifest = generate_dataset(cfg["data"]["n_cases"], C.phantom_config(cfg), seed, out_dir=out)
    print(f"wrote {manifest['n_cases']} cases to {out} (phantom hash {manifest['config_hash']})")


def cmd_targets(args, cfg):
    ids, cases = _load_cases(args, cfg)
    out = _stage_dir(args, cfg, "targets")
    t = cfg["train"]
    for i, c in zip(ids, cases):
        tc = prepare_case(c.image, c.la, c.wall, c.scar, t["beta"], t["thickness"])
        save_volume(Volume(tc.phi, c.la.spacing), _target_path(args.out, i, "phi"))
        save_volume(Volume(tc.probs.normal, c.la.spacing), _target_path(args.out, i, "pnormal"))
        save_volume(Volume(tc.probs.scar, c.la.spacing), _target_path(args.out, i, "pscar"))
        save_volume(tc.m1, _target_path(args.out, i, "m1"))
    print(f"wrote targets for {len(ids)} cases to {out}")


def _load_training_cases(args, cfg):
    ids, cases = _load_cases(args, cfg, "train")
    hint = "lasesa targets"
    made = json.loads(_require(Path(args.out) / "targets" / "config.json", hint).read_text())["train"]
    for key in ("beta", "thickness"):
        if made[key] != cfg["train"][key]:
            raise MissingArtifact(f"targets were built with train.{key}={made[key]}; rerun `{hint}`")
    prepared = []
    for i, c in zip(ids, cases):
        phi = load_volume(_require(_target_path(args.out, i, "phi"), hint)).data
        pn = load_volume(_require(_target_path(args.out, i, "pnormal"), hint)).data
        ps = load_volume(_require(_target_path(args.out, i, "pscar"), hint)).data
        m1 = load_mask(_require(_target_path(args.out, i, "m1"), hint))
        prepared.append(TrainingCase(
            image=zscore_normalize(c.image).data,
            la=c.la,
            scar=c.scar,
            normal=c.wall.with_data(c.wall.data & ~c.scar.data),
            phi=phi,
            probs=ProbabilityPair(pn, ps),
            m1=m1,
        ))
    return prepared


def cmd_train(args, cfg):
    prepared = _load_training_cases(args, cfg)
    variant = cfg["train"]["variant"]
    seed = _seed(args, cfg)
    tcfg = C.train_config(cfg, seed=seed)
    _stage_dir(args, cfg, "train")
    run = _run_dir(args, variant, seed)
    run.mkdir(parents=True, exist_ok=True)
    for ncfg, vcfg in variant_configs(variant, C.network_config(cfg), tcfg):
        net, rows = train(prepared, vcfg, ncfg)
        tag = _tag(ncfg.heads)
        digest = save_checkpoint(net, run / f"net_{tag}.ckpt", vcfg.iterations, vcfg)
        _write_rows(run / f"log_{tag}.csv", rows, LOG_COLUMNS)
        print(f"{variant} seed {seed} [{tag}]: final total {rows[-1]['total']:.6g}, checkpoint sha256 {digest}")


def _load_nets(args, variant, seed):
    run = _run_dir(args, variant, seed)
    ckpts = sorted(run.glob("net_*.ckpt"))
    if not ckpts:
        raise MissingArtifact(f"no checkpoints in {run}; run `lasesa train` first")
    return [load_checkpoint(p)[0] for p in ckpts]


def cmd_predict(args, cfg):
    variant = cfg["train"]["variant"]
    seed = _seed(args, cfg)
    nets = _load_nets(args, variant, seed)
    ids, cases = _load_cases(args, cfg, "test")
    _stage_dir(args, cfg, "predict")
    out = Path(args.out) / "predict" / variant / f"seed{seed}"
    out.mkdir(parents=True, exist_ok=True)
    for stale in out.glob("case*"):
        stale.unlink()
    e = cfg["eval"]
    for i, c in zip(ids, cases):
        image = Volume(zscore_normalize(c.image).data, c.image.spacing)
        # evaluation projects onto the gold LA surface so labelings are comparable
        pred = predict(nets, image, e["d_max"], surface_la=c.la, band_thickness=e["band_thickness"])
        if pred.la is not None:
            save_volume(pred.la, out / f"case{i:03d}_la.vol")
        if pred.labeling is not None:
            save_labeling(pred.labeling, out / f"case{i:03d}_labeling.csv")
    heads = sorted({h for n in nets for h in n.config.heads})
    (out / "heads.txt").write_text(" ".join(heads) + "\n")
    print(f"wrote predictions for {len(ids)} test cases to {out}")


def cmd_baseline(args, cfg):
    ids, cases = _load_cases(args, cfg, "test")
    b = cfg["baseline"]
    _stage_dir(args, cfg, "baseline")
    for method in b["methods"]:
        out = Path(args.out) / "baseline" / method
        out.mkdir(parents=True, exist_ok=True)
        for i, c in zip(ids, cases):
            # baselines get the gold LA, as they need an accurate LA to start from
            band = wall_band(c.la, b["band_thickness"])
            if method == "otsu":
                lab = otsu_scar(c.image, band, c.la, cfg["eval"]["d_max"])
            else:
                lab = mgmm_scar(c.image, band, c.la, b["K"], b["n_scar_components"],
                                cfg["eval"]["d_max"], _seed(args, cfg, "baseline"))
            save_labeling(lab, out / f"case{i:03d}_labeling.csv")
        (out / "heads.txt").write_text("scar\n")
        print(f"{method}: wrote {len(ids)} labelings to {out}")


def _evaluate_dir(src, ids, cases, d_max):
    heads = _require(src / "heads.txt", "lasesa predict / lasesa baseline").read_text().split()
    reports = []
    for i, c in zip(ids, cases):
        la = None
        if "la" in heads:
            p = src / f"case{i:03d}_la.vol"
            la = load_mask(p) if p.exists() else LabelMask(np.zeros(c.la.dims, dtype=bool), c.la.spacing)
        labeling = False
        if "scar" in heads:
            p = src / f"case{i:03d}_labeling.csv"
            labeling = load_labeling(p) if p.exists() else None
        reports.append(case_metrics(la, labeling, c.la, c.scar, d_max))
    return reports


def _summary_rows(name, reports):
    stats = summarize(reports)
    row = {"source": name, "n": len(reports)}
    for metric, (mean, std, _) in stats.items():
        row[metric] = format_mean_std(mean, std)
    return row


def cmd_eval(args, cfg):
    source = args.source or cfg["train"]["variant"]
    if source in ("otsu", "mgmm"):
        src = Path(args.out) / "baseline" / source
        name = source
    else:
        seed = _seed(args, cfg)
        src = Path(args.out) / "predict" / source / f"seed{seed}"
        name = f"{source}/seed{seed}"
    if not src.exists():
        raise MissingArtifact(f"no predictions in {src}; run `lasesa predict` or `lasesa baseline` first")
    ids, cases = _load_cases(args, cfg, "test")
    reports = _evaluate_dir(src, ids, cases, cfg["eval"]["d_max"])
    _stage_dir(args, cfg, "eval")
    out = Path(args.out) / "eval" / name
    out.mkdir(parents=True, exist_ok=True)
    write_reports([{"case": i, **r.as_row()} for i, r in zip(ids, reports)], out / "per_case.csv")
    row = _summary_rows(name, reports)
    _write_rows(out / "summary.csv", [row], ["source", "n"] + MetricReport.names())
    print("  ".join(f"{k}={v}" for k, v in row.items() if v != ""))


def cmd_ablate(args, cfg):
    a = cfg["ablate"]
    variants = args.variants.split(",") if args.variants else a["variants"]
    for v in variants:
        if v not in C.VARIANTS:
            raise C.ConfigError(f"unknown variant {v!r}; choose from {sorted(C.VARIANTS)}")
    seeds = [args.seed] if args.seed is not None else a["seeds"]
    _, train_cases = _load_cases(args, cfg, "train")
    _, test_cases = _load_cases(args, cfg, "test")
    out = _stage_dir(args, cfg, "ablate")
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)

    def keep(variant, seed, trained):
        for net, rows in zip(trained.nets, trained.logs):
            tag = _tag(net.config.heads)
            save_checkpoint(net, ckpt_dir / f"{variant}_seed{seed}_{tag}.ckpt", len(rows))
            _write_rows(ckpt_dir / f"{variant}_seed{seed}_{tag}_log.csv", rows, LOG_COLUMNS)

    e = cfg["eval"]
    case_rows, run_rows = run_ablation(
        variants, seeds, train_cases, test_cases, C.network_config(cfg), C.train_config(cfg),
        e["d_max"], e["band_thickness"], heads=a["heads"], on_trained=keep,
    )
    cols = ["variant", "seed"] + MetricReport.names()
    med = medians(run_rows, variants)
    summary = [{"variant": v, "seed": "median", **med[v]} for v in variants]
    _write_rows(out / "ablation.csv", run_rows + summary, cols)
    write_reports(case_rows, out / "per_case.csv", key_fields=("variant", "seed", "case"))
    for row in summary:
        print("  ".join(f"{k}={_fmt(v)}" for k, v in row.items() if v is not None))


def cmd_beta_study(args, cfg):
    s = cfg["beta_study"]
    betas = [float(b) for b in args.betas.split(",")] if args.betas else s["betas"]
    if any(not b > 0 for b in betas):
        raise C.ConfigError("betas must be positive")
    seeds = [args.seed] if args.seed is not None else s["seeds"]
    _, train_cases = _load_cases(args, cfg, "train")
    _, test_cases = _load_cases(args, cfg, "test")
    out = _stage_dir(args, cfg, "beta")
    rows = []
    for beta in betas:
        _, run_rows = run_ablation(
            [s["variant"]], seeds, train_cases, test_cases, C.network_config(cfg),
            C.train_config(cfg, beta=beta), cfg["eval"]["d_max"], cfg["eval"]["band_thickness"],
            heads=["la"],
        )
        for r in run_rows:
            rows.append({"beta": beta, "seed": r["seed"], "dice": r["dice"], "asd_mm": r["asd_mm"],
                         "hd_mm": r["hd_mm"]})
            print(f"beta={beta} seed={r['seed']} dice={r['dice']:.4f} hd={r['hd_mm']:.3f}")
    _write_rows(out / "beta_study.csv", rows, ["beta", "seed", "dice", "asd_mm", "hd_mm"])


# -- entry point --------------------------------------------------------------

COMMANDS = {
    "gen": cmd_gen,
    "targets": cmd_targets,
    "train": cmd_train,
    "predict": cmd_predict,
    "baseline": cmd_baseline,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "beta-study": cmd_beta_study,
}

EXIT_CONFIG, EXIT_MISSING, EXIT_TRAINING, EXIT_DATA = 2, 3, 4, 5


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration (defaults are used for missing keys)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config value, e.g. train.iterations=500 (repeatable)")
    common.add_argument("--seed", type=int, help="seed for this stage (overrides the config)")
    common.add_argument("--out", default="run", help="artifact directory (default: ./run)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="lasesa", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "eval":
            p.add_argument("--source", help="variant name or baseline method (default: train.variant)")
        if name == "ablate":
            p.add_argument("--variants", help="comma-separated variant list (default: ablate.variants)")
        if name == "beta-study":
            p.add_argument("--betas", help="comma-separated beta values (default: beta_study.betas)")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = C.load_config(args.config, args.set)
        COMMANDS[args.command](args, cfg)
    except C.ConfigError as exc:
        print(f"lasesa {args.command}: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifact as exc:
        print(f"lasesa {args.command}: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except TrainingError as exc:
        print(f"lasesa {args.command}: training failed: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except (VolumeError, BaselineError) as exc:
        print(f"lasesa {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
