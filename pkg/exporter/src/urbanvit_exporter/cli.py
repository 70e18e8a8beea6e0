"""urbanvit-export command line.

    urbanvit-export --mode pretrained-cnn --imagelets DIR --out FILE [--seed N]
    urbanvit-export --mode cae --imagelets DIR --out FILE --train \\
        [--weights FILE] [--epochs N] [--batch-size N] [--lr F] [--seed N]
    urbanvit-export --mode cae --imagelets DIR --out FILE --weights FILE

In CAE mode --train fits the autoencoder first (saving weights to --weights,
default <out>.weights.pt) and then exports; without --train existing weights
are required.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .data import ImageletDirError
from .export import ExporterConfig, export_cae, export_pretrained, train_cae

log = logging.getLogger("urbanvit_exporter")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="urbanvit-export", description=__doc__)
    ap.add_argument("--mode", required=True, choices=["pretrained-cnn", "cae"])
    ap.add_argument("--imagelets", required=True, help="PNG directory with imagelets.csv manifest")
    ap.add_argument("--out", required=True, help="embedding CSV output path")
    ap.add_argument("--train", action="store_true", help="train the CAE before exporting")
    ap.add_argument("--weights", default=None, help="CAE weight file (load, or save with --train)")
    ap.add_argument("--vgg-weights", default=None, help="local VGG16 state dict (pretrained mode)")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=500)
    ap.add_argument("--batch-size", type=int, default=128)
    ap.add_argument("--lr", type=float, default=0.001)
    ap.add_argument("--embedding-dim", type=int, default=512)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=os.environ.get("URBANVIT_LOG", "INFO").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = ExporterConfig(
            mode=args.mode,
            imagelet_dir=args.imagelets,
            out_path=args.out,
            learning_rate=args.lr,
            epochs=args.epochs,
            batch_size=args.batch_size,
            embedding_dim=args.embedding_dim,
            seed=args.seed,
            vgg_weights=args.vgg_weights,
        )
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        if args.mode == "pretrained-cnn":
            export_pretrained(cfg)
        else:
            weights = args.weights or args.out + ".weights.pt"
            if args.train:
                train_cae(cfg, weights)
            elif not os.path.exists(weights):
                print(
                    f"CAE weights not found at {weights}; run with --train first",
                    file=sys.stderr,
                )
                return 2
            export_cae(cfg, weights)
    except (ImageletDirError, ValueError) as exc:
        log.error("%s", exc)
        return 2
    except RuntimeError as exc:
        log.error("%s", exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
