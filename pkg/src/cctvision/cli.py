"""Single command-line entry point.

Exit codes: 0 success, 1 validation/usage error, 2 runtime error.  The
``--threads`` cap must take effect before numpy is imported, so the heavy
modules are imported lazily inside each handler.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path


class _Parser(argparse.ArgumentParser):
    # the contract fixes usage errors at exit code 1, not argparse's default 2
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _apply_threads(argv: list[str]) -> list[str]:
    """Consume --threads N before anything imports numpy."""
    argv = list(argv)
    for i, tok in enumerate(argv):
        if tok == "--threads":
            if i + 1 >= len(argv):
                print("error: --threads requires a value", file=sys.stderr)
                raise SystemExit(1)
            val = argv[i + 1]
            del argv[i:i + 2]
            break
        if tok.startswith("--threads="):
            val = tok.split("=", 1)[1]
            del argv[i]
            break
    else:
        return argv
    try:
        n = int(val)
        if n < 1:
            raise ValueError
    except ValueError:
        print(f"error: --threads must be a positive integer, got {val!r}",
              file=sys.stderr)
        raise SystemExit(1)
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        os.environ[var] = str(n)
    return argv


def _run_config(args):
    from .config import RunConfig
    if getattr(args, "config", None):
        return RunConfig.load(args.config)
    return RunConfig()


def cmd_preprocess(args) -> int:
    import numpy as np
    from .preprocess import (ImageU8, ben_graham, clahe, read_png, resize,
                             to_gray, write_png)
    run = _run_config(args)
    img = to_gray(read_png(args.image))
    size = run.model.input_size
    c = clahe(img, run.clahe)
    bg = ben_graham(c, run.ben_graham)
    if args.dump_intermediate:
        dump = Path(args.dump_intermediate)
        dump.mkdir(parents=True, exist_ok=True)
        stem = Path(args.image).stem
        write_png(c, dump / f"{stem}.clahe.png")
        write_png(bg, dump / f"{stem}.bg.png")
    panel = np.concatenate([resize(c, size, size).data,
                            resize(bg, size, size).data], axis=1)
    write_png(ImageU8(panel), args.out)
    logging.info("wrote preview %s", args.out)
    return 0


def cmd_augment_preview(args) -> int:
    import numpy as np
    from .augment import sample_augment
    from .preprocess import ImageU8, read_png, to_gray, write_png
    from .tensor import Tensor
    run = _run_config(args)
    img = to_gray(read_png(args.image))
    t = Tensor(img.data[:, :, 0].astype(float)[None] / 255.0)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = Path(args.image).stem
    for i in range(args.count):
        aug = sample_augment(t, run.augment, i)
        arr = np.clip(np.rint(aug.data[0] * 255.0), 0, 255).astype(np.uint8)
        write_png(ImageU8(arr[:, :, None]), out_dir / f"{stem}.aug{i:03d}.png")
    logging.info("wrote %d augmented previews to %s", args.count, out_dir)
    return 0


def cmd_dataset(args) -> int:
    from . import data as D
    if args.dataset_cmd == "scan":
        class_map, class_names = ((D.BINARY_CLASS_MAP, D.BINARY_CLASS_NAMES)
                                  if args.class_map == "binary"
                                  else (D.FOUR_CLASS_MAP, D.FOUR_CLASS_NAMES))
        manifest = D.scan_folder(args.root, class_map, class_names)
        Path(args.out).write_text(manifest.to_json())
        logging.info("scanned %d entries (%d skipped) -> %s",
                     len(manifest.entries), len(manifest.skipped), args.out)
        return 0
    manifest = D.DatasetManifest.from_json(Path(args.manifest).read_text())
    fractions = tuple(float(v) for v in args.fractions.split(","))
    D.split(manifest, fractions, args.seed)
    Path(args.out).write_text(manifest.to_json())
    counts = {s: len(manifest.split_entries(s)) for s in ("train", "val", "test")}
    logging.info("split %s -> %s", counts, args.out)
    return 0


def cmd_train(args) -> int:
    from .pipeline import run_training
    run = _run_config(args)
    run_training(run, args.out_dir, resume=args.resume)
    return 0


def cmd_eval(args) -> int:
    from .pipeline import run_eval
    run = _run_config(args)
    rep = run_eval(run, args.ckpt, args.split, args.out_dir)
    print(json.dumps(rep.to_dict(), indent=2))
    return 0


def cmd_stats(args) -> int:
    from .pipeline import run_stats
    run = _run_config(args)
    stats = run_stats(run, args.out_dir)
    logging.info("wrote pixel statistics for %d images to %s", len(stats), args.out_dir)
    return 0


def cmd_explain(args) -> int:
    from .pipeline import run_explain
    run = _run_config(args)
    if args.target_class == "auto":
        target = None
    else:
        try:
            target = int(args.target_class)
        except ValueError:
            print(f"error: --class must be an integer or 'auto', "
                  f"got {args.target_class!r}", file=sys.stderr)
            return 1
    sidecar = run_explain(run, args.image, args.ckpt, target, args.out)
    print(json.dumps(sidecar, indent=2))
    return 0


def cmd_selftest(args) -> int:
    from . import selftest
    results = selftest.run_all()
    print(selftest.format_table(results))
    return 0 if all(r.passed for r in results) else 1


def build_parser() -> _Parser:
    from . import __version__
    p = _Parser(prog="cctvision",
                description="Compact convolutional transformer pipeline for "
                            "chest radiograph classification")
    p.add_argument("--version", action="version", version=f"cctvision {__version__}")
    p.add_argument("--threads", type=int, metavar="N",
                   help="cap numeric worker threads (applied before numpy loads)")
    sub = p.add_subparsers(dest="cmd", required=True)

    sp = sub.add_parser("preprocess", help="preview CLAHE + Ben-Graham preprocessing")
    sp.add_argument("--image", required=True)
    sp.add_argument("--config")
    sp.add_argument("--out", required=True)
    sp.add_argument("--dump-intermediate", metavar="DIR")
    sp.set_defaults(func=cmd_preprocess)

    sp = sub.add_parser("augment-preview", help="write augmented sample PNGs")
    sp.add_argument("--image", required=True)
    sp.add_argument("--config")
    sp.add_argument("--count", type=int, default=8)
    sp.add_argument("--out-dir", required=True)
    sp.set_defaults(func=cmd_augment_preview)

    sp = sub.add_parser("dataset", help="manifest operations")
    dsub = sp.add_subparsers(dest="dataset_cmd", required=True)
    d1 = dsub.add_parser("scan", help="enumerate a labeled folder tree")
    d1.add_argument("--root", required=True)
    d1.add_argument("--class-map", choices=("binary", "four"), default="binary")
    d1.add_argument("--out", required=True)
    d2 = dsub.add_parser("split", help="stratified train/val/test assignment")
    d2.add_argument("--manifest", required=True)
    d2.add_argument("--fractions", default="0.8,0.2,0.0")
    d2.add_argument("--seed", type=int, default=42)
    d2.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_dataset)

    sp = sub.add_parser("train", help="train end to end, writing artifacts")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--resume", metavar="CKPT")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    sp.add_argument("--config", required=True)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--split", choices=("train", "val", "test"), default="val")
    sp.add_argument("--out-dir", required=True)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("stats", help="pixel statistics and KDE export")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out-dir", required=True)
    sp.set_defaults(func=cmd_stats)

    sp = sub.add_parser("explain", help="Grad-CAM heatmap for one image")
    sp.add_argument("--image", required=True)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--config")
    sp.add_argument("--class", dest="target_class", default="auto",
                    metavar="INT|auto")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_explain)

    sp = sub.add_parser("selftest", help="gradient checks and numeric oracles")
    sp.set_defaults(func=cmd_selftest)
    return p


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    argv = _apply_threads(argv)
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    from .errors import CctError
    try:
        return args.func(args)
    except CctError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - last-resort guard
        logging.exception("unhandled failure: %s", exc)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
