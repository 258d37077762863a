"""fedsr command line: data preparation, training, evaluation, reports.

Exit codes: 0 success, 1 runtime failure, 2 usage error (including missing
inputs).
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .data import (
    dataset_ids,
    list_ppm,
    load_ppm,
    load_training_set,
    pregenerate_test_variants,
    save_ppm,
    synthetic_corpus,
    write_training_patches,
)
from .errors import FedSRError, ParseError
from .evaluation import (
    EvaluationMatrix,
    RelativeMatrix,
    diff_table,
    evaluate,
    per_image_csv,
    relative_to_baseline,
)
from .federation import MIXED, run_centralized, run_federated
from .model import load_weights, save_weights
from .partition import PartitionPlan, build_partition, cluster_result_rows
from .rng import derive_stream

log = logging.getLogger("fedsr")


class UsageError(Exception):
    pass


def _require(path, kind="file"):
    p = Path(path)
    ok = p.is_dir() if kind == "dir" else p.exists()
    if not ok:
        raise UsageError(f"missing input {kind}: {p}")
    return p


def _default_workers():
    try:
        return max(1, int(os.environ.get("FEDSR_WORKERS", "1")))
    except ValueError:
        return 1


def _attach_log(out_dir):
    handler = logging.FileHandler(Path(out_dir) / "run.log", mode="w")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    logging.getLogger("fedsr").addHandler(handler)
    logging.getLogger("fedsr").setLevel(logging.INFO)
    return handler


def cmd_synth(args):
    out = Path(args.out)
    for rec in synthetic_corpus(args.count, args.size, args.seed, args.prefix):
        save_ppm(rec.hr, out / f"{rec.id}.ppm")
    print(f"wrote {args.count} images to {out}")


def cmd_prepare(args):
    hr_dir = _require(args.hr_dir, "dir")
    bad = []
    records = []
    for path in list_ppm(hr_dir):
        try:
            records.append(load_ppm(path))
        except ParseError as exc:
            bad.append(str(exc))
    if bad:
        raise FedSRError("malformed input images:\n  " + "\n  ".join(bad))
    if not records:
        raise FedSRError(f"no PPM images found in {hr_dir}")
    out = Path(args.out)
    n_patches = write_training_patches(records, out / "train", args.patch, args.stride)
    manifest = pregenerate_test_variants(records, args.scale, out / "test", args.seed)
    print(f"wrote {n_patches} HR patches and {len(manifest['variants'])} test variants "
          f"of {len(records)} images to {out}")


def _config(args):
    return cfgmod.load(_require(args.config))


def _hr_dir(cfg, override=None):
    hr_dir = override or cfg["data"]["hr_dir"]
    if not hr_dir:
        raise UsageError("no training images: set data.hr_dir or pass --hr-dir")
    return _require(hr_dir, "dir")


def cmd_partition(args):
    cfg = _config(args)
    ids = dataset_ids(_hr_dir(cfg, args.hr_dir))
    plan = build_partition(ids, cfg["federation"]["num_clients"],
                           cfgmod.partition_proportions(cfg),
                           derive_stream(cfg["seed"], "partition"), master_seed=cfg["seed"])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    plan.save(out)
    sizes = ", ".join(f"{c.client_id}:{c.degradation_type.label}={len(c.image_ids)}"
                      for c in plan.clients)
    print(f"partition of {len(ids)} images -> {sizes}")


def _write_reports(path, reports):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["round", "client_id", "n", "loss"])
    for rep in reports:
        for cid, n, loss in rep.clients:
            w.writerow([rep.round, cid, n, repr(float(loss))])
    Path(path).write_text(buf.getvalue())


def _train_run(cfg, out, train_fn):
    tc = cfgmod.train_config(cfg)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfgmod.dumps(cfg))
    ckpt = out / "checkpoints"
    ckpt.mkdir(exist_ok=True)
    handler = _attach_log(out)

    def on_round(r, weights, report):
        if r == tc.rounds or (tc.checkpoint_every and r % tc.checkpoint_every == 0):
            save_weights(weights, ckpt / f"round_{r}.fsrw")

    try:
        weights, reports = train_fn(tc, on_round)
    finally:
        logging.getLogger("fedsr").removeHandler(handler)
        handler.close()
    if tc.rounds == 0:
        save_weights(weights, ckpt / "round_0.fsrw")
    save_weights(weights, out / "weights.fsrw")
    _write_reports(out / "reports.csv", reports)
    final = reports[-1].mean_loss if reports else float("nan")
    print(f"trained {tc.rounds} rounds, final mean loss {final:.6f}; weights at {out / 'weights.fsrw'}")


def cmd_train(args):
    cfg = _config(args)
    plan = PartitionPlan.load(_require(args.partition))
    tc = cfgmod.train_config(cfg)
    dataset = load_training_set(_hr_dir(cfg, args.hr_dir), tc.patch_size,
                                cfg["data"]["stride"], tc.scale)
    plan.validate(dataset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    plan.save(out / "partition.json")
    _train_run(cfg, out, lambda tc, cb: run_federated(plan, tc, dataset, args.workers, cb))


def cmd_train_central(args):
    cfg = _config(args)
    tc = cfgmod.train_config(cfg)
    dataset = load_training_set(_hr_dir(cfg, args.hr_dir), tc.patch_size,
                                cfg["data"]["stride"], tc.scale)
    _train_run(cfg, Path(args.out),
               lambda tc, cb: run_centralized(tc, dataset, args.degradation, cb))


def cmd_eval(args):
    weights = load_weights(_require(args.weights))
    names = args.dataset or []
    matrix, scores = None, []
    for i, variants in enumerate(args.variants):
        _require(variants)
        name = names[i] if i < len(names) else None
        m, s = evaluate(weights, variants, dataset=name, y_channel=args.y_channel)
        if len(args.variants) > 1:
            for sc in s:
                sc.image_id = f"{m.datasets[0]}/{sc.image_id}"
        scores.extend(s)
        matrix = m if matrix is None else matrix.concat(m)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    matrix.save(out / "matrix.csv")
    (out / "per_image.csv").write_text(per_image_csv(scores))
    print(matrix.to_csv(), end="")


def cmd_report(args):
    run = EvaluationMatrix.load(_require(args.run))
    base = EvaluationMatrix.load(_require(args.baseline))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    relative_to_baseline(run, base, args.baseline_label).save(out / "heatmap.csv")
    table = diff_table(run, base, fl_label=args.run_label, central_label=args.baseline_label)
    (out / "diff_table.txt").write_text(table.render())
    (out / "diff_table.csv").write_text(table.to_csv())
    print(table.render(), end="")


def _result_row(path, baseline):
    text = Path(path).read_text()
    if text.startswith("combo,dataset,psnr_db"):
        m = EvaluationMatrix.from_csv(text)
        if baseline is not None:
            return relative_to_baseline(m, baseline).values.ravel()
        return m.values.ravel()
    return RelativeMatrix.from_csv(text).values.ravel()


def cmd_cluster(args):
    baseline = EvaluationMatrix.load(_require(args.baseline)) if args.baseline else None
    names, rows = [], []
    for spec in args.matrices:
        name, _, path = spec.rpartition("=")
        path = _require(path)
        names.append(name or path.parent.name or path.stem)
        rows.append(_result_row(path, baseline))
    if len({r.shape for r in rows}) != 1:
        raise FedSRError("result matrices have different shapes")
    labels = cluster_result_rows(np.stack(rows), args.k)
    for name, label in zip(names, labels):
        print(f"{name}\tcluster {label}")
    for label in sorted(set(labels)):
        members = [n for n, l in zip(names, labels) if l == label]
        print(f"cluster {label}: {', '.join(members)}")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="fedsr", description=__doc__.splitlines()[0],
                                     formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write procedural PPM test images", formatter_class=fmt)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--count", type=int, default=8, help="number of images")
    p.add_argument("--size", type=int, default=64, help="image side length")
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--prefix", default="img", help="file name prefix")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("prepare", help="extract HR patches and pre-generate test variants",
                       formatter_class=fmt)
    p.add_argument("--hr-dir", required=True, help="directory of P6 PPM images")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--scale", type=int, default=4, help="downsampling factor")
    p.add_argument("--patch", type=int, default=128, help="HR patch size")
    p.add_argument("--stride", type=int, default=64, help="patch stride")
    p.add_argument("--seed", type=int, default=0, help="master seed for noise streams")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("partition", help="assign images and degradation types to clients",
                       formatter_class=fmt)
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--out", required=True, help="partition.json to write")
    p.add_argument("--hr-dir", default=None, help="override data.hr_dir")
    p.set_defaults(func=cmd_partition)

    for name, func, helptext in (
        ("train", cmd_train, "federated training (FedAvg)"),
        ("train-central", cmd_train_central, "one-client centralized training"),
    ):
        p = sub.add_parser(name, help=helptext, formatter_class=fmt)
        p.add_argument("--config", required=True, help="experiment config JSON")
        if name == "train":
            p.add_argument("--partition", required=True, help="partition.json")
        else:
            p.add_argument("--degradation", default=MIXED,
                           choices=[MIXED, "clean", "blur", "noise", "jpeg"],
                           help="degradation of the single client")
        p.add_argument("--out", required=True, help="run directory")
        p.add_argument("--hr-dir", default=None, help="override data.hr_dir")
        p.add_argument("--workers", type=int, default=_default_workers(),
                       help="parallel client workers (env FEDSR_WORKERS)")
        p.set_defaults(func=func)

    p = sub.add_parser("eval", help="evaluate weights on pre-generated test variants",
                       formatter_class=fmt)
    p.add_argument("--weights", required=True, help="FSRW weight file")
    p.add_argument("--variants", required=True, nargs="+",
                   help="test manifest(s) or their directories")
    p.add_argument("--dataset", nargs="*", default=None,
                   help="column names (default: manifest directory names)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--y-channel", action="store_true", help="PSNR on luma instead of RGB")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="relative heatmap and difference table",
                       formatter_class=fmt)
    p.add_argument("--run", required=True, help="matrix.csv of the run")
    p.add_argument("--baseline", required=True, help="matrix.csv of the baseline")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--run-label", default="FL", help="row label of the run")
    p.add_argument("--baseline-label", default="1", help="row label of the baseline")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("cluster", help="average-linkage clustering of result matrices",
                       formatter_class=fmt)
    p.add_argument("--matrices", required=True, nargs="+",
                   help="matrix.csv or heatmap.csv files, optionally NAME=PATH")
    p.add_argument("--k", type=int, default=5, help="number of clusters")
    p.add_argument("--baseline", default=None,
                   help="matrix.csv to subtract from plain matrices")
    p.set_defaults(func=cmd_cluster)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"fedsr: error: {exc}", file=sys.stderr)
        return 2
    except (FedSRError, OSError, ValueError) as exc:
        print(f"fedsr: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
