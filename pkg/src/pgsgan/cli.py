"""Command-line entry point.

Subcommands: gen-data, train, synth, eval, serve.  Exit codes: 0 on
success, 1 on usage errors (the offending flag or file is named), 2 on
runtime errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .phantom import ConfigurationError


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> _Parser:
    p = _Parser(prog="pgsgan",
                description="Sketch-guided progressive GAN for phantom "
                            "ultrasound synthesis")
    sub = p.add_subparsers(dest="command", required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    def common(sp):
        sp.add_argument("--config", default=None,
                        help="TOML run config (desk defaults when omitted)")
        sp.add_argument("--set", action="append", default=[], metavar="K=V",
                        help="override a config key, e.g. train.batch_size=8")

    sp = sub.add_parser("gen-data", formatter_class=fmt,
                        help="generate a phantom dataset")
    common(sp)
    sp.add_argument("--out", required=True, help="output dataset directory")

    sp = sub.add_parser("train", formatter_class=fmt,
                        help="run the four-phase progressive schedule")
    common(sp)
    sp.add_argument("--data", required=True, help="dataset directory")
    sp.add_argument("--out", required=True, help="run directory for "
                    "checkpoints and logs")

    sp = sub.add_parser("synth", formatter_class=fmt,
                        help="synthesize one image from a label PNG")
    sp.add_argument("--checkpoint", required=True, help="checkpoint file")
    sp.add_argument("--label", required=True, help="3-channel label PNG")
    sp.add_argument("--out", required=True, help="output grayscale PNG")

    sp = sub.add_parser("eval", formatter_class=fmt,
                        help="evaluate a checkpoint on the test split")
    common(sp)
    sp.add_argument("--checkpoint", required=True, help="checkpoint file")
    sp.add_argument("--data", required=True, help="dataset directory")
    sp.add_argument("--report", required=True, help="output JSON report path")

    sp = sub.add_parser("serve", formatter_class=fmt,
                        help="serve a checkpoint over HTTP")
    sp.add_argument("--checkpoint", required=True, help="checkpoint file")
    sp.add_argument("--port", type=int, default=8750, help="listen port")
    sp.add_argument("--allow-origin", default=None,
                    help="CORS origin allowed to call the service")
    return p


def _load_config(args):
    from .config import load_run_config
    path = getattr(args, "config", None)
    if path is not None and not os.path.exists(path):
        raise UsageError(f"--config file not found: {path}")
    return load_run_config(path, getattr(args, "set", []))


def _require_file(path, flag):
    if not os.path.exists(path):
        raise FileNotFoundError(f"{flag} path does not exist: {path}")


def cmd_gen_data(args) -> int:
    from .phantom import generate_dataset
    cfg = _load_config(args)
    generate_dataset(cfg.phantom, args.out)
    print(f"wrote {cfg.phantom.n_samples} samples to {args.out}")
    return 0


def cmd_train(args) -> int:
    from .phantom import Manifest
    from .trainer import run_full_schedule
    cfg = _load_config(args)
    manifest_path = os.path.join(args.data, "manifest.json")
    _require_file(manifest_path, "--data")
    manifest = Manifest.load(manifest_path)
    run_full_schedule(cfg.train, manifest, args.data, out_dir=args.out,
                      use_sketch=cfg.train.use_sketch,
                      gen_cfg=cfg.generator, disc_cfg=cfg.discriminator,
                      canny_params=cfg.canny)
    print(f"training complete; final checkpoint at "
          f"{os.path.join(args.out, 'final.ckpt')}")
    return 0


def cmd_synth(args) -> int:
    from PIL import Image
    from .service import ModelHandle
    from .sketch import load_label_png
    _require_file(args.checkpoint, "--checkpoint")
    _require_file(args.label, "--label")
    handle = ModelHandle(args.checkpoint)
    label = load_label_png(args.label)
    if label.shape[1] != handle.resolution:
        raise ValueError(f"label is {label.shape[1]}x{label.shape[2]} but "
                         f"the model resolution is {handle.resolution}")
    out = handle.synthesize(label)
    Image.fromarray(out, mode="L").save(args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_eval(args) -> int:
    from .phantom import Manifest
    from .metrics import evaluate_synthesis
    from .service import ModelHandle
    from .trainer import prepare_training_data
    cfg = _load_config(args)
    _require_file(args.checkpoint, "--checkpoint")
    manifest_path = os.path.join(args.data, "manifest.json")
    _require_file(manifest_path, "--data")
    manifest = Manifest.load(manifest_path)
    handle = ModelHandle(args.checkpoint)
    data = prepare_training_data(manifest, args.data, cfg.canny,
                                 base_resolution=cfg.train.base_resolution,
                                 use_sketch=cfg.train.use_sketch)
    if handle.resolution == cfg.train.grown_resolution:
        labels = data.labels_hi[data.test_idx]
        real = data.images_hi[data.test_idx]
    else:
        from .nn.layers import downsample2x
        labels = data.labels_lo[data.test_idx]
        real = downsample2x(data.images_hi[data.test_idx])
    synth = np.stack([handle.synthesize(lab) for lab in labels])
    synth = synth[:, None].astype(np.float32) / 255.0
    report = evaluate_synthesis(synth, real, labels,
                                extractor_seed=cfg.metrics.extractor_seed)
    with open(args.report, "w") as f:
        json.dump(report, f, indent=2)
    print(json.dumps(report, indent=2))
    return 0


def cmd_serve(args) -> int:
    from .service import serve
    _require_file(args.checkpoint, "--checkpoint")
    serve(args.checkpoint, port=args.port, allow_origin=args.allow_origin)
    return 0


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "synth": cmd_synth,
    "eval": cmd_eval,
    "serve": cmd_serve,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except ConfigurationError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
