"""CLI for the neural stage: dataset prep, training, inference."""

from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from . import pipeline, tensorfile
from .train import (DenoiserHyperparams, classify_array, denoise_array,
                    load_checkpoint, train_denoiser, train_digit_classifier)


def cmd_prep_data(args) -> int:
    prep = pipeline.prepare_dataset(args.out_dir, count=args.count,
                                    seed=args.seed, mousetap_bin=args.mousetap,
                                    surface=args.surface,
                                    noise_rms=args.noise_rms)
    print(f"{args.count} clips -> {prep.run_dir}")
    return 0


def cmd_train_denoiser(args) -> int:
    prep = pipeline.PreparedDataset(
        args.data_dir, os.path.join(args.data_dir, "clips"),
        os.path.join(args.data_dir, "run"))
    prep.labels = _read_labels(os.path.join(args.data_dir, "labels.csv"))
    pairs = [(x, y) for _, x, y in pipeline.load_pairs(prep)]
    hp = DenoiserHyperparams(epochs=args.epochs, loss_norm=args.loss,
                             batch_size=args.batch_size)
    _, log = train_denoiser(pairs, hp, seed=args.seed,
                            checkpoint_path=args.out, log_path=args.log)
    print(f"epoch 1 val {log[0]['val_loss']:.4f} -> final val {log[-1]['val_loss']:.4f}")
    return 0


def cmd_denoise(args) -> int:
    model = load_checkpoint(args.checkpoint)
    os.makedirs(args.out_dir, exist_ok=True)
    for path in args.tensors:
        x = tensorfile.read_tensor(path)
        y = denoise_array(x, model)
        stem = os.path.splitext(os.path.basename(path))[0]
        out = os.path.join(args.out_dir, stem + "_denoised.memt")
        tensorfile.write_tensor(out, y)
        print(out)
    return 0


def _read_labels(path) -> dict:
    labels = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            labels[row["path"]] = int(row["label"])
    return labels


def cmd_train_classifier(args) -> int:
    prep = pipeline.PreparedDataset(
        args.data_dir, os.path.join(args.data_dir, "clips"),
        os.path.join(args.data_dir, "run"))
    prep.labels = _read_labels(os.path.join(args.data_dir, "labels.csv"))
    examples = [(x, prep.labels[stem]) for stem, x, _ in pipeline.load_pairs(prep)]
    _, log = train_digit_classifier(examples, seed=args.seed,
                                    epochs=args.epochs,
                                    checkpoint_path=args.out)
    print(f"final train acc {log[-1]['train_acc']:.3f}")
    return 0


def cmd_classify(args) -> int:
    model = load_checkpoint(args.checkpoint)
    rows = []
    for path in args.tensors:
        x = tensorfile.read_tensor(path)
        rows.append((os.path.splitext(os.path.basename(path))[0],
                     classify_array(x, model)))
    out = open(args.csv, "w", newline="") if args.csv else sys.stdout
    try:
        out.write("path,label\n")
        for stem, label in rows:
            out.write(f"{stem},{label}\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def build_parser():
    ap = argparse.ArgumentParser(
        prog="melfilter",
        description="Neural log-mel denoiser / keyword classifier.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prep-data", help="synthesize clips and run the channel")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--surface", default="plastic")
    p.add_argument("--noise-rms", type=float, default=6e-4)
    p.add_argument("--mousetap", default="mousetap",
                   help="signal pipeline executable")
    p.set_defaults(func=cmd_prep_data)

    p = sub.add_parser("train-denoiser")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--loss", choices=("l1", "l2"), default="l1")
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="JSONL training log path")
    p.set_defaults(func=cmd_train_denoiser)

    p = sub.add_parser("denoise")
    p.add_argument("tensors", nargs="+")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("train-classifier")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_classifier)

    p = sub.add_parser("classify")
    p.add_argument("tensors", nargs="+")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--csv")
    p.set_defaults(func=cmd_classify)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # surface a readable one-liner, not a stack
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
