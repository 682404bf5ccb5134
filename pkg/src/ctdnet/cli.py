"""Command-line interface.

    ctdnet [--config FILE] [--seed N] [--threads N] [--preset desk] <command> ...

Commands: train, eval, infer, audit, gen-data, grad-check.
Exit codes: 0 success, 1 usage or configuration error, 2 file error,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import contextlib
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import data as D
from .audit import structural_audit
from .checkpoint import load_model
from .errors import CTDError, DataIOError, NumericalError, ValidationError
from .gradsuite import GROUPS, TOLERANCE, run_suite
from .metrics import FMeasureConfig, evaluate_pairs
from .model import predict_maps
from .tensor import Tensor
from .train import TrainConfig, read_config_file, train


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser():
    p = _Parser(prog="ctdnet", description="Complementary trilateral decoder for salient object detection.")
    p.add_argument("--config", help="flat key=value file with training settings")
    p.add_argument("--seed", type=int, help="global seed (overrides the config file)")
    p.add_argument("--threads", type=int, help="BLAS thread limit; 1 makes training bit-reproducible")
    p.add_argument("--preset", choices=("desk", "default"), help="settings bundle applied before --config")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a model and write checkpoints")
    t.add_argument("--data", help="dataset directory or 'synthetic'")
    t.add_argument("--steps", type=int)
    t.add_argument("--out", help="output directory for checkpoints")
    t.add_argument("--log", help="also append step lines to this file")
    t.add_argument("--variant", choices=("S", "M", "L"))
    t.add_argument("--backbone")
    t.add_argument("--fixed-batch", action="store_true", help="overfit the first batch")

    e = sub.add_parser("eval", help="compute MAE, max F-measure and E-measure")
    e.add_argument("--data", required=True, help="dataset directory with masks/ and manifest.txt")
    src = e.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint")
    src.add_argument("--predictions", help="directory laid out as <dir>/masks/<id>.pgm")
    e.add_argument("--format", choices=("text", "csv"), default="text")
    e.add_argument("--out", help="write the report here instead of stdout")
    e.add_argument("--per-image-f", action="store_true", help="average F per image instead of P/R")

    i = sub.add_parser("infer", help="write saliency and boundary maps for images")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--out", required=True)
    i.add_argument("images", nargs="+")

    a = sub.add_parser("audit", help="per-module parameter counts for a variant")
    a.add_argument("variant")
    a.add_argument("--format", choices=("text", "csv"), default="text")

    g = sub.add_parser("gen-data", help="write a synthetic dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--count", type=int, default=16)
    g.add_argument("--size", type=int, default=96)

    c = sub.add_parser("grad-check", help="finite-difference check of every layer, block and loss")
    c.add_argument("--group", choices=sorted(GROUPS) + ["all"], default="all")
    return p


def _train_config(args):
    values = {}
    if args.config:
        values.update(read_config_file(args.config))
    if args.seed is not None:
        values["seed"] = str(args.seed)
    overrides = TrainConfig.coerce(values)
    if args.command == "train":
        for key, attr in (("data", "data"), ("steps", "steps"), ("out_dir", "out"),
                          ("variant", "variant"), ("backbone", "backbone")):
            if getattr(args, attr) is not None:
                overrides[key] = getattr(args, attr)
        if args.fixed_batch:
            overrides.update(fixed_batch=True, augment=False)
    return TrainConfig.preset(args.preset or "default", **overrides)


def cmd_train(args, out):
    cfg = _train_config(args)
    log_fh = open(args.log, "a") if args.log else None

    def log(line):
        print(line, file=out, flush=True)
        if log_fh:
            log_fh.write(line + "\n")

    try:
        result = train(cfg, log=log)
    finally:
        if log_fh:
            log_fh.close()
    print(f"checkpoint {result.checkpoint}", file=sys.stderr)
    return 0


def _model_predictions(model, ids, root, size):
    preds = {}
    for id in ids:
        image = D.read_image(Path(root) / "images" / f"{id}.png", mode="RGB")
        h, w = image.shape[1:]
        x = D.resize_array(image, size, size)[None].astype(np.float32)
        sal, _ = predict_maps(model, Tensor(x), (h, w))
        preds[id] = sal[0, 0]
    return preds


def cmd_eval(args, out):
    ids = D.read_manifest(args.data)
    gts = {id: D.read_mask(Path(args.data) / "masks" / f"{id}.pgm")[0] for id in ids}
    if args.checkpoint:
        model, ckpt = load_model(args.checkpoint)
        preds = _model_predictions(model, ids, args.data, ckpt.variant.input_size)
        extra = f"checkpoint={ckpt.digest}"
    else:
        pred_dir = Path(args.predictions) / "masks"
        found = {p.stem for p in pred_dir.glob("*.pgm")}
        missing, stray = sorted(set(ids) - found), sorted(found - set(ids))
        if missing or stray:
            raise ValidationError(f"prediction ids do not match the dataset; missing {missing}, unexpected {stray}")
        preds = {id: D.read_image(pred_dir / f"{id}.pgm")[0] for id in ids}
        extra = "predictions"
    pairs = [(preds[id], gts[id]) for id in ids]
    report = evaluate_pairs(pairs, Path(args.data).name, FMeasureConfig(per_image=args.per_image_f), extra)
    text = report.to_csv() if args.format == "csv" else report.to_text() + "\n"
    if args.out:
        D.atomic_write(args.out, text.encode())
    else:
        out.write(text)
    return 0


def cmd_infer(args, out):
    model, ckpt = load_model(args.checkpoint)
    size = ckpt.variant.input_size
    root = Path(args.out)
    written, failures = [], 0
    for path in args.images:
        try:
            image = D.read_image(path, mode="RGB")
            h, w = image.shape[1:]
            x = D.resize_array(image, size, size)[None].astype(np.float32)
            sal, bnd = predict_maps(model, Tensor(x), (h, w))
            stem = Path(path).stem
            D.write_pgm(root / "masks" / f"{stem}.pgm", np.round(255 * sal[0, 0]).astype(np.uint8))
            D.write_pgm(root / "boundaries" / f"{stem}.pgm", np.round(255 * bnd[0, 0]).astype(np.uint8))
            written.append(stem)
        except DataIOError as exc:
            failures += 1
            print(f"error: {exc}", file=sys.stderr)
    if written:
        D.atomic_write(root / "manifest.txt", "".join(f"{s}\n" for s in written).encode())
    print(f"wrote {len(written)} of {len(args.images)} maps to {root}", file=out)
    return DataIOError.exit_code if failures else 0


def cmd_audit(args, out):
    table = structural_audit(args.variant)
    out.write(table.to_csv() if args.format == "csv" else table.to_text() + "\n")
    return 0


def cmd_gen_data(args, out):
    spec = D.SyntheticSpec(size=args.size, seed=args.seed or 0)
    ids = D.write_dataset(args.out, spec, args.count)
    print(f"wrote {len(ids)} samples to {args.out}", file=out)
    return 0


def cmd_grad_check(args, out):
    groups = tuple(GROUPS) if args.group == "all" else (args.group,)
    results = run_suite(groups, seed=args.seed or 0)
    width = max(len(n) for n, _ in results)
    bad = 0
    for name, err in results:
        ok = err < TOLERANCE
        bad += not ok
        print(f"{'ok  ' if ok else 'FAIL'} {name:<{width}}  {err:.2e}", file=out)
    if bad:
        raise NumericalError(f"{bad} gradient check(s) above {TOLERANCE:g}")
    return 0


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "infer": cmd_infer, "audit": cmd_audit,
            "gen-data": cmd_gen_data, "grad-check": cmd_grad_check}


def main(argv=None, out=None):
    out = out or sys.stdout
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
    limits = threadpool_limits(args.threads) if args.threads else contextlib.nullcontext()
    try:
        with limits:
            return COMMANDS[args.command](args, out)
    except CTDError as exc:
        print(f"ctdnet {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"ctdnet {args.command}: {exc}", file=sys.stderr)
        return DataIOError.exit_code


if __name__ == "__main__":
    sys.exit(main())
