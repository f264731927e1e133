"""Command-line entry point: ``dvpnet <subcommand> [options]``.

Exit codes: 0 success, 1 usage error, 2 runtime error, 3 gradient check
over tolerance. Tables go to stdout as CSV with a header row.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import nn
from .checkpoint import load_checkpoint, save_checkpoint
from .codec import HeadLayout, decode, grids_for
from .config import ConfigError, RunConfig
from .dataio import load_annotations, scene_from_record
from .evaluator import (AblationBudget, ablate_S, ablate_scales, bench_latency, center_baseline,
                        coverage_curve, coverage_row, curve_table, draw_overlay, evaluate,
                        records_table, write_table)
from .model import build
from .synthgen import build_dataset, generate_scenes, load_png

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_CHECK = 0, 1, 2, 3
log = logging.getLogger("dvpnet")


class UsageError(Exception):
    def __init__(self, message, parser):
        super().__init__(message)
        self.parser = parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message, self)


# ------------------------------------------------------------------ helpers

def _emit(rows, columns=None, out=None):
    columns = columns or list(rows[0].keys())
    w = csv.DictWriter(out or sys.stdout, fieldnames=columns, extrasaction="ignore",
                       lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in r.items()})


def _dtype(run):
    return np.float32 if run.run().numeric_width == 32 else np.float64


def _load_scenes(root, split, workers):
    root = Path(root)
    records = load_annotations(root / f"{split}.jsonl")
    if workers > 1:
        # map keeps the record order, so results do not depend on scheduling
        with ThreadPoolExecutor(workers) as ex:
            return list(ex.map(lambda r: scene_from_record(r, root), records))
    return [scene_from_record(r, root) for r in records]


def _scenes(args, run, split, start=0):
    """Scenes from ``--data`` or, with ``--synthetic N``, generated in memory."""
    if args.data:
        return _load_scenes(args.data, split, run.run().workers)
    if args.synthetic:
        sc = replace(run.scene(), image_size=run.model().input_size)
        return generate_scenes(sc, args.synthetic, start=start)
    raise UsageError("one of --data or --synthetic is required", args._parser)


def _net_from(args, run):
    if getattr(args, "model", None):
        net, _, _ = load_checkpoint(args.model)
        return net
    return build(run.model(), seed=run.train().seed, dtype=_dtype(run))


# ---------------------------------------------------------------- commands

def cmd_synth(args, run):
    sc = run.scene()
    manifest = build_dataset(sc, args.count, args.split, args.out)
    rows = [{"split": k, "count": v["count"], "annotations": v["annotations"]}
            for k, v in manifest["splits"].items()]
    _emit(rows)
    return EXIT_OK


def cmd_train(args, run):
    tc = run.train()
    with nn.default_dtype(_dtype(run)):
        net = build(run.model(), seed=tc.seed, dtype=_dtype(run))
        train_set = _scenes(args, run, "train")
        from .trainer import train
        t0 = time.perf_counter()
        res = train(net, train_set, tc, run.loss(), out_dir=args.out, resume=args.resume)
    elapsed = time.perf_counter() - t0
    Path(args.out, "run.cfg").write_text(run.dump())
    last = res.rows[-1] if res.rows else {}
    _emit([{"epochs_run": res.epochs_run, "steps": len(res.rows),
            "final_loss": last.get("total", float("nan")), "seconds": elapsed,
            "checkpoint": str(Path(args.out) / "final.ckpt")}])
    return EXIT_OK


def cmd_eval(args, run):
    ev = run.eval()
    net = _net_from(args, run)
    split = args.split or ev.split
    test_set = _scenes(args, run, split, start=args.start)
    thresholds = cfgmod.parse_floats(ev.thresholds)
    with nn.default_dtype(net.dtype):
        records = evaluate(net, test_set, batch_size=ev.batch_size)
    base = center_baseline(test_set)
    rows = [{"method": "model", **coverage_row(records, thresholds)},
            {"method": "center", **coverage_row(base, thresholds)}]
    _emit(rows)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_table(records_table(records), out / "records.csv")
        grid = np.round(np.arange(1, int(round(ev.curve_max / ev.curve_step)) + 1) * ev.curve_step, 6)
        write_table(curve_table(coverage_curve(records, grid)), out / "coverage.csv")
        write_table(curve_table(coverage_curve(base, grid)), out / "coverage_center.csv")
        write_table(rows, out / "summary.csv")
    return EXIT_OK


def cmd_infer(args, run):
    net, _, _ = load_checkpoint(args.model)
    size = net.config.input_size
    img = load_png(args.image)
    h, w = img.shape[:2]
    x = img
    if (w, h) != (size, size):
        from PIL import Image
        pil = Image.fromarray(np.round(img * 255).astype(np.uint8)).resize((size, size), Image.BILINEAR)
        x = np.asarray(pil, dtype=np.float32) / 255
    net.eval()
    with nn.no_grad():
        preds = net(x.transpose(2, 0, 1)[None].astype(net.dtype))
    det = decode([p.data[0] for p in preds], grids_for(size), HeadLayout(net.config.S))
    sx, sy = w / size, h / size
    det = _rescale(det, sx, sy)
    overlay = args.overlay or str(Path(args.image).with_name(Path(args.image).stem + "_overlay.png"))
    draw_overlay(img, det, overlay)
    print(f"{det.vp.x:.4f} {det.vp.y:.4f} {det.confidence:.6f}")
    return EXIT_OK


def _rescale(det, sx, sy):
    from .geometry import Point2, Polyline
    if sx == 1 and sy == 1:
        return det
    s = np.array([sx, sy])
    return replace(det, vp=Point2(det.vp.x * sx, det.vp.y * sy),
                   left=Polyline(det.left.points * s), right=Polyline(det.right.points * s))


def cmd_bench(args, run):
    ev = run.eval()
    net = _net_from(args, run)
    with nn.default_dtype(net.dtype):
        stats = bench_latency(net, warmup=ev.warmup, reps=ev.reps, seed=run.train().seed)
    _emit([{"input_size": net.config.input_size, "params": net.parameter_count(), **stats}])
    return EXIT_OK


def cmd_gradcheck(args, run):
    from .loss import grad_check_loss
    from .nn.gradcheck import TOLERANCE, run_op_checks
    t0 = time.perf_counter()
    rows = [{"check": f"op:{k}", "max_rel_error": v} for k, v in run_op_checks(range(args.op_seeds)).items()]
    for seed in range(args.loss_seeds):
        rows.append({"check": f"loss:seed{seed}", "max_rel_error": grad_check_loss(seed=seed)})
    for r in rows:
        r["status"] = "pass" if r["max_rel_error"] <= TOLERANCE else "FAIL"
    _emit(rows)
    failed = [r["check"] for r in rows if r["status"] != "pass"]
    print(f"# {len(rows) - len(failed)}/{len(rows)} checks within {TOLERANCE:g} "
          f"in {time.perf_counter() - t0:.1f}s", file=sys.stderr)
    return EXIT_CHECK if failed else EXIT_OK


def _budget(run):
    ab, tc = run.ablate(), run.train()
    return AblationBudget(train_count=ab.train_count, test_count=ab.test_count, epochs=ab.epochs,
                          batch_size=tc.batch_size, seed=tc.seed,
                          thresholds=cfgmod.parse_floats(run.eval().thresholds),
                          train_config=tc, scene_config=run.scene(), weights=run.loss(),
                          dtype=_dtype(run))


def _ablation_out(rows, args):
    _emit(rows)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        write_table(rows, args.out)
    return EXIT_OK if all(r["status"] == "ok" for r in rows) else EXIT_RUNTIME


def cmd_ablate_s(args, run):
    S_values = cfgmod.parse_ints(run.ablate().S_values)
    return _ablation_out(ablate_S(run.model(), S_values, _budget(run)), args)


def cmd_ablate_scales(args, run):
    subsets = cfgmod.parse_subsets(run.ablate().subsets)
    return _ablation_out(ablate_scales(run.model(), subsets, _budget(run)), args)


# ------------------------------------------------------------------ parser

def _common(p):
    p.add_argument("--config", help=f"config file (default: ${cfgmod.CONFIG_ENV})")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key; repeatable")
    p.add_argument("--seed", type=int, help="sets scene.seed and train.seed")
    p.add_argument("--workers", type=int, help="data-loading threads (run.workers)")
    p.add_argument("-v", "--verbose", action="store_true")


def _data_args(p):
    p.add_argument("--data", help="dataset directory written by 'synth'")
    p.add_argument("--synthetic", type=int, metavar="N", help="generate N scenes in memory instead")


def make_parser():
    epilog = "config keys (section.key = default):\n" + cfgmod.describe_keys()
    fmt = argparse.RawDescriptionHelpFormatter
    parser = _Parser(prog="dvpnet", description="Grid-cell vanishing point detector.",
                     epilog=epilog, formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    def add(name, fn, help):
        p = sub.add_parser(name, help=help, description=help, epilog=epilog, formatter_class=fmt)
        _common(p)
        p.set_defaults(func=fn, _parser=p)
        return p

    p = add("synth", cmd_synth, "write a synthetic dataset (PNG + JSONL)")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--split", type=float, default=0.8, help="train fraction")
    p.add_argument("--out", required=True)

    p = add("train", cmd_train, "train a model; writes checkpoints and a CSV log")
    _data_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="checkpoint to continue from")

    p = add("eval", cmd_eval, "coverage table for a model and the centre baseline")
    _data_args(p)
    p.add_argument("--model", help="checkpoint (default: untrained model from config)")
    p.add_argument("--split", help="split name (default eval.split)")
    p.add_argument("--start", type=int, default=0, help="first scene index with --synthetic")
    p.add_argument("--out", help="directory for records.csv and coverage tables")

    p = add("infer", cmd_infer, "detect the vanishing point in one image")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--overlay", help="overlay PNG path (default <image>_overlay.png)")

    p = add("bench", cmd_bench, "single-image forward latency")
    p.add_argument("--model", help="checkpoint (default: model from config)")

    p = add("gradcheck", cmd_gradcheck, "finite-difference check of every op and the loss")
    p.add_argument("--op-seeds", type=int, default=20)
    p.add_argument("--loss-seeds", type=int, default=2)

    p = add("ablate-s", cmd_ablate_s, "coverage for each slice count in ablate.S_values")
    p.add_argument("--out", help="CSV path")

    p = add("ablate-scales", cmd_ablate_scales, "coverage for each scale subset in ablate.subsets")
    p.add_argument("--out", help="CSV path")
    return parser


def _run_config(args):
    overrides = list(args.set)
    if args.seed is not None:
        overrides += [f"scene.seed={args.seed}", f"train.seed={args.seed}"]
    if args.workers is not None:
        overrides.append(f"run.workers={args.workers}")
    run = RunConfig.load(args.config, overrides)
    if run.run().workers < 1:
        raise ConfigError("run.workers must be >= 1")
    return run


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args, extra = parser.parse_known_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required", parser)
        if extra:
            raise UsageError(f"unrecognized arguments: {' '.join(extra)}", args._parser)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(asctime)s %(name)s %(message)s")
        try:
            run = _run_config(args)
        except ConfigError as e:
            raise UsageError(str(e), args._parser) from None
        return args.func(args, run)
    except UsageError as e:
        print(f"error: {e}\n", file=sys.stderr)
        e.parser.print_help(sys.stderr)
        return EXIT_USAGE
    except KeyboardInterrupt:
        return EXIT_RUNTIME
    except Exception as e:  # runtime failures map to one exit code
        log.debug("failure", exc_info=True)
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
