"""Batch entry points: ``generate``, ``train``, ``eval`` and ``infer``.

Parameters come from an optional INI file (one section per subcommand plus a
``[global]`` section) and are overridden by command-line flags. Every run
writes ``resolved_config.json`` next to its outputs.

Exit codes: 0 success, 1 validation failure, 2 I/O failure.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

from . import dataset as ds
from . import evaluation as ev
from . import groundtruth as gtm
from .model import ModelConfig
from .scene import SceneConfig, SceneError, sample_scene, geometric_oracle
from .training import (TrainConfig, history_csv, infer, load_checkpoint, model_predictor,
                       prepare_arrays, save_checkpoint, train)

logger = logging.getLogger("sensearea")

OUT_ENV = "SENSEAREA_OUT"
REFERENCE_FPS = 50.0

EXIT_OK, EXIT_VALIDATION, EXIT_IO = 0, 1, 2

# (flag dest, type) per subcommand; defaults live here so the INI file and the
# flags share one source of truth.
DEFAULTS = {
    "global": {"seed": (int, 0)},
    "generate": {
        "out": (str, None), "poses": (int, 120), "stages": (int, 10), "width": (int, 640),
        "height": (int, 480), "focal": (float, 400.0), "baseline": (float, 0.005),
        "with_depth": (bool, False), "invalid_fraction": (float, 0.0), "split_seed": (int, None),
    },
    "train": {
        "data": (str, None), "out": (str, None), "epochs": (int, 70), "batch_size": (int, 12),
        "lr": (float, 1e-3), "image_size": (int, 128), "mode": (str, "stereo"),
        "train_split": (str, "train"), "val_split": (str, "val"), "resume": (str, None),
        "dtype": (str, "float64"),
    },
    "eval": {
        "data": (str, None), "out": (str, None), "predictor": (str, "oracle"), "checkpoint": (str, None),
        "split": (str, "test"), "overlays": (int, 8),
    },
    "infer": {
        "data": (str, None), "out": (str, None), "checkpoint": (str, None), "sample": (str, None),
        "split": (str, None),
    },
}


class ValidationError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    """Usage errors are validation failures (exit 1); 2 is reserved for I/O."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _parse_bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValidationError(f"not a boolean: {text!r}")


def resolve(command: str, args: argparse.Namespace) -> dict:
    """Merge defaults, the INI file and explicit flags (flags win)."""
    ini = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    if args.config:
        if not Path(args.config).is_file():
            raise FileNotFoundError(f"config file not found: {args.config}")
        ini.read(args.config, encoding="utf-8")
    resolved = {}
    for section in ("global", command):
        for key, (typ, default) in DEFAULTS[section].items():
            value = default
            if ini.has_option(section, key):
                raw = ini.get(section, key)
                value = _parse_bool(raw) if typ is bool else typ(raw)
            flag = getattr(args, key, None)
            if flag is not None:
                value = flag
            resolved[key] = value
    if "out" in resolved and resolved["out"] is None:
        resolved["out"] = os.path.join(os.environ.get(OUT_ENV, "runs"), command)
    return resolved


def _snapshot(out: Path, command: str, resolved: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.json").write_text(
        json.dumps({"command": command, **resolved}, indent=1, sort_keys=True) + "\n", encoding="utf-8"
    )


def _require(resolved: dict, *keys):
    for k in keys:
        if resolved.get(k) is None:
            raise ValidationError(f"--{k.replace('_', '-')} is required")


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(resolved: dict) -> int:
    out = Path(resolved["out"])
    config = SceneConfig(
        width=resolved["width"], height=resolved["height"], focal=resolved["focal"],
        baseline=resolved["baseline"], with_depth=resolved["with_depth"],
        invalid_depth_fraction=resolved["invalid_fraction"],
    )
    if resolved["poses"] < 1:
        raise ValidationError("--poses must be at least 1")
    manifest = ds.generate_dataset(out, resolved["poses"], resolved["stages"], resolved["seed"], config,
                                   split_seed=resolved["split_seed"])
    _snapshot(out, "generate", resolved)
    counts = {t: len(manifest.entries_for(t)) for t in manifest.tags()}
    print(f"wrote {len(manifest.entries)} samples to {out} {counts}")
    return EXIT_OK


def _load_split(data: str, tag: str):
    manifest = ds.Manifest.load(data)
    return manifest, list(ds.read_split(manifest, tag, data))


def cmd_train(resolved: dict) -> int:
    _require(resolved, "data")
    out = Path(resolved["out"])
    mc = ModelConfig(input_mode=resolved["mode"], image_size=resolved["image_size"],
                     dtype=resolved["dtype"], seed=resolved["seed"])
    tc = TrainConfig(batch_size=resolved["batch_size"], epochs=resolved["epochs"], base_lr=resolved["lr"],
                     seed=resolved["seed"])
    _, train_samples = _load_split(resolved["data"], resolved["train_split"])
    val = None
    if resolved["val_split"]:
        _, val_samples = _load_split(resolved["data"], resolved["val_split"])
        val = prepare_arrays(val_samples, mc)
    state = load_checkpoint(resolved["resume"]) if resolved["resume"] else None
    _snapshot(out, "train", resolved)
    ckpt = out / "checkpoint.ckpt"
    state = train(prepare_arrays(train_samples, mc), val, mc, tc, resume=state, checkpoint_path=ckpt)
    save_checkpoint(ckpt, state)
    (out / "history.csv").write_text(history_csv(state.history), encoding="utf-8")
    print(f"trained {state.epoch} epochs; best epoch {state.best_epoch} score {state.best_score:.4f}; "
          f"checkpoint {ckpt}")
    return EXIT_OK


def _predictor(name: str, resolved: dict, manifest: ds.Manifest):
    if name == "oracle":
        config = manifest.config

        def oracle(sample):
            return geometric_oracle(sample_scene(sample.pose_index, sample.stage_index, sample.seed, config))

        return oracle, False
    if name == "subtract":
        return (lambda s: gtm.segment_sample(s).centroid), True
    if name == "center":
        rig = manifest.config.rig()
        return ev.constant_predictor([rig.left.cx, rig.left.cy]), False
    if name == "mean":
        train_gts = [e["gt_px_left"] for e in manifest.entries_for("train")]
        if not train_gts:
            raise ValidationError("the mean predictor needs a train split")
        return ev.mean_baseline(train_gts), False
    if name == "model":
        _require(resolved, "checkpoint")
        state = load_checkpoint(resolved["checkpoint"])
        return model_predictor(state.best_params, state.model_config), False
    raise ValidationError(f"unknown predictor {name!r}")


def cmd_eval(resolved: dict) -> int:
    _require(resolved, "data")
    out = Path(resolved["out"])
    manifest, samples = _load_split(resolved["data"], resolved["split"])
    predictor, seg_style = _predictor(resolved["predictor"], resolved, manifest)
    # content-based, so identical runs in different directories agree
    ident = {"scene": manifest.scene_config, "predictor": resolved["predictor"], "split": resolved["split"],
             "seed": resolved["seed"]}
    if resolved["predictor"] == "model":
        ident["checkpoint_sha256"] = hashlib.sha256(Path(resolved["checkpoint"]).read_bytes()).hexdigest()
    options = ev.EvalOptions(name=resolved["predictor"], rig=manifest.config.rig(), segmentation_style=seg_style,
                             fingerprint=ev.fingerprint(ident))
    report = ev.evaluate(predictor, samples, options)
    _snapshot(out, "eval", resolved)
    by_id = {s.sample_id: s for s in samples} if resolved["overlays"] > 0 else None
    ev.write_report([report], out, by_id, max_overlays=resolved["overlays"])
    print(ev.render_report([report]), end="")
    return EXIT_OK


def cmd_infer(resolved: dict) -> int:
    _require(resolved, "data", "checkpoint")
    from PIL import Image

    out = Path(resolved["out"])
    manifest = ds.Manifest.load(resolved["data"])
    entries = manifest.entries
    if resolved["sample"]:
        entries = [e for e in entries if e["id"] == resolved["sample"]]
        if not entries:
            raise ValidationError(f"no sample {resolved['sample']!r} in {resolved['data']}")
    elif resolved["split"]:
        if resolved["split"] not in manifest.tags():
            raise ValidationError(f"unknown split {resolved['split']!r}")
        entries = manifest.entries_for(resolved["split"])
    state = load_checkpoint(resolved["checkpoint"])
    _snapshot(out, "infer", resolved)
    (out / "overlays").mkdir(parents=True, exist_ok=True)
    records, total = [], 0.0
    for entry in sorted(entries, key=lambda e: e["id"]):
        sample = ds.read_sample(entry, resolved["data"])
        pixel, elapsed = infer(sample, state.best_params, state.model_config)
        total += elapsed
        img = ev.draw_overlay(sample.images["left"]["standard"], pixel, None)
        Image.fromarray(img).save(out / "overlays" / f"{sample.sample_id}.png")
        records.append({"id": sample.sample_id, "u": float(pixel[0]), "v": float(pixel[1]), "ms": elapsed * 1e3})
    with open(out / "predictions.jsonl", "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
            print(json.dumps(rec))
    fps = len(records) / total if total > 0 else float("inf")
    print(f"throughput: {fps:.1f} frames/s over {len(records)} frames "
          f"(reference: {REFERENCE_FPS:.0f} frames/s reported for the full-size GPU model)")
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval, "infer": cmd_infer}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sensearea", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI file with [global] and per-command sections")
        p.add_argument("--seed", type=int, help="global seed (default 0)")
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV}/<command> or runs/<command>)")

    p = sub.add_parser("generate", help="render a synthetic dataset and its manifest")
    common(p)
    p.add_argument("--poses", type=int, help="camera-probe poses (default 120)")
    p.add_argument("--stages", type=int, help="rotation-stage positions per pose (default 10)")
    p.add_argument("--width", type=int, help="image width in pixels (default 640)")
    p.add_argument("--height", type=int, help="image height in pixels (default 480)")
    p.add_argument("--focal", type=float, help="focal length in pixels (default 400)")
    p.add_argument("--baseline", type=float, help="stereo baseline in meters (default 0.005)")
    p.add_argument("--with-depth", dest="with_depth", action="store_const", const=True,
                   help="also write depth maps")
    p.add_argument("--invalid-fraction", dest="invalid_fraction", type=float,
                   help="fraction of depth pixels marked invalid (default 0)")
    p.add_argument("--split-seed", dest="split_seed", type=int, help="seed for the pose-level split")

    p = sub.add_parser("train", help="train the dual-branch regressor")
    common(p)
    p.add_argument("--data", help="dataset root")
    p.add_argument("--epochs", type=int, help="epochs (default 70)")
    p.add_argument("--batch-size", dest="batch_size", type=int, help="batch size (default 12)")
    p.add_argument("--lr", type=float, help="base learning rate (default 1e-3)")
    p.add_argument("--image-size", dest="image_size", type=int, help="network input size (default 128)")
    p.add_argument("--mode", choices=["stereo", "mono"], help="input mode (default stereo)")
    p.add_argument("--train-split", dest="train_split", help="training split tag (default train)")
    p.add_argument("--val-split", dest="val_split", help="validation split tag (default val)")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--dtype", choices=["float32", "float64"], help="parameter precision (default float64)")

    p = sub.add_parser("eval", help="evaluate a predictor on a split")
    common(p)
    p.add_argument("--data", help="dataset root")
    p.add_argument("--predictor", choices=["oracle", "model", "subtract", "mean", "center"],
                   help="what to evaluate (default oracle)")
    p.add_argument("--checkpoint", help="checkpoint for --predictor model")
    p.add_argument("--split", help="split tag (default test)")
    p.add_argument("--overlays", type=int, help="overlay PNGs to write (default 8)")

    p = sub.add_parser("infer", help="predict intersections with a trained model")
    common(p)
    p.add_argument("--data", help="dataset root")
    p.add_argument("--checkpoint", help="trained checkpoint")
    p.add_argument("--sample", help="single sample id, e.g. p0003_s07")
    p.add_argument("--split", help="restrict to one split")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        resolved = resolve(args.command, args)
        return COMMANDS[args.command](resolved)
    except (ValueError, SceneError, FloatingPointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
