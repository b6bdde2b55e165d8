"""Command-line entry point.

Subcommands: synth, suite, fit, render, eval, ablate, gradcheck.
Exit codes: 0 success; 1 gradient-check tolerance breach; 2 invalid
spec/config/checkpoint/argument; 3 I/O failure; 4 training divergence.
PG4D_THREADS caps worker parallelism (results are independent of it).
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig
from .field import render_at_time
from .metrics import evaluate
from .pipeline import json_sanitize, make_render_fn, run_ablation, run_fit, run_gradcheck
from .pngio import write_png
from .scenegen import DatasetError, SceneSpec, load_dataset, standard_suite, synth_dataset
from .trainer import DivergenceError

EXIT_OK = 0
EXIT_GRADCHECK = 1
EXIT_INVALID = 2
EXIT_IO = 3
EXIT_DIVERGED = 4


def _fail(code, message):
    print(f"error: {message}", file=sys.stderr)
    return code


def cmd_synth(args):
    spec_path = Path(args.spec)
    try:
        spec = SceneSpec.from_dict(json.loads(spec_path.read_text(encoding="utf-8")))
    except FileNotFoundError:
        return _fail(EXIT_INVALID, f"spec file not found: {spec_path}")
    except (json.JSONDecodeError, DatasetError, TypeError) as e:
        return _fail(EXIT_INVALID, f"invalid spec {spec_path}: {e}")
    try:
        frameset, _ = synth_dataset(spec, out_dir=args.out)
    except OSError as e:
        return _fail(EXIT_IO, str(e))
    print(f"wrote {frameset.n_cameras} cameras x {frameset.n_timesteps} timesteps to {args.out}")
    return EXIT_OK


def cmd_suite(args):
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        return _fail(EXIT_IO, f"cannot create {out}: {e}")
    for spec in standard_suite():
        if args.only and spec.name != args.only:
            continue
        try:
            synth_dataset(spec, out_dir=out / spec.name)
        except OSError as e:
            return _fail(EXIT_IO, str(e))
        print(f"generated {spec.name} -> {out / spec.name}")
    return EXIT_OK


def _load_run_inputs(dataset, config_path, out, mode=None, seed=None):
    cfg = RunConfig.from_json(config_path) if config_path else RunConfig()
    overrides = {"dataset": str(dataset), "out": str(out)}
    if mode:
        overrides["mode"] = mode
    if seed is not None:
        overrides["seed"] = seed
    cfg = RunConfig.from_dict({**cfg.to_dict(), **overrides})
    frameset, gt_scene = load_dataset(dataset)
    return cfg, frameset, gt_scene


def cmd_fit(args):
    try:
        cfg, frameset, gt_scene = _load_run_inputs(args.dataset, args.config, args.out,
                                                   mode=args.mode, seed=args.seed)
    except (ConfigError, DatasetError) as e:
        return _fail(EXIT_INVALID, str(e))
    try:
        report = run_fit(cfg, frameset, gt_scene, args.out)
    except DivergenceError as e:
        return _fail(EXIT_DIVERGED, f"training diverged: {e} (report written)")
    except OSError as e:
        return _fail(EXIT_IO, str(e))
    print(f"mode={report['mode']} final mean PSNR: {report['final_mean_psnr']:.3f} dB")
    print(f"artifacts in {args.out}")
    return EXIT_OK


def cmd_render(args):
    try:
        scene, field, cameras = load_checkpoint(args.checkpoint)
    except CheckpointError as e:
        return _fail(EXIT_INVALID, str(e))
    if not 0 <= args.camera < len(cameras):
        return _fail(EXIT_INVALID,
                     f"camera index {args.camera} out of range (checkpoint has {len(cameras)})")
    if not 0.0 <= args.time <= 1.0:
        return _fail(EXIT_INVALID, f"time must be in [0, 1], got {args.time}")
    img = render_at_time(scene, field, cameras[args.camera], args.time)
    try:
        write_png(args.out, img)
    except OSError as e:
        return _fail(EXIT_IO, f"cannot write {args.out}: {e}")
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_eval(args):
    try:
        scene, field, _ = load_checkpoint(args.checkpoint)
    except CheckpointError as e:
        return _fail(EXIT_INVALID, str(e))
    try:
        frameset, _ = load_dataset(args.dataset)
    except DatasetError as e:
        return _fail(EXIT_INVALID, str(e))
    render_fn = make_render_fn(scene, field, frameset.cameras, frameset.times)
    report = evaluate(render_fn, frameset, config={"checkpoint": str(args.checkpoint),
                                                   "dataset": str(args.dataset)})
    try:
        Path(args.report).write_text(json.dumps(report.to_dict(), indent=1, allow_nan=False),
                                     encoding="utf-8")
    except OSError as e:
        return _fail(EXIT_IO, f"cannot write {args.report}: {e}")
    mean = report.to_dict()["mean"]
    psnr_txt = "inf" if mean["psnr_db"] is None else f"{mean['psnr_db']:.3f}"
    print(f"mean L1 {mean['l1']:.5f}  PSNR {psnr_txt} dB  SSIM {mean['ssim']:.4f}")
    return EXIT_OK


def cmd_ablate(args):
    try:
        base_cfg = RunConfig.from_json(args.config) if args.config else RunConfig()
    except ConfigError as e:
        return _fail(EXIT_INVALID, str(e))
    try:
        table, failures = run_ablation(args.suite, args.out, base_cfg,
                                       scenes=args.scenes or None)
    except (DatasetError, FileNotFoundError) as e:
        return _fail(EXIT_INVALID, str(e))
    except OSError as e:
        return _fail(EXIT_IO, str(e))
    from .pipeline import format_ablation_table
    print(format_ablation_table(table), end="")
    if failures:
        for f in failures:
            print(f"failed: {f}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_gradcheck(args):
    lines, ok = run_gradcheck(seed=args.seed, inject_corruption=args.inject_corruption)
    print("\n".join(lines))
    return EXIT_OK if ok else EXIT_GRADCHECK


def build_parser():
    parser = argparse.ArgumentParser(prog="pg4d", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a dataset from a scene spec")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("suite", help="generate the six standard scenes")
    p.add_argument("--out", required=True)
    p.add_argument("--only", help="generate a single scene, e.g. S5")
    p.set_defaults(fn=cmd_suite)

    p = sub.add_parser("fit", help="run the two-stage training pipeline")
    p.add_argument("--dataset", required=True)
    p.add_argument("--config", help="RunConfig JSON; defaults apply if omitted")
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("progressive", "simultaneous"))
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_fit)

    p = sub.add_parser("render", help="render one view from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--camera", type=int, required=True)
    p.add_argument("--time", type=float, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_render)

    p = sub.add_parser("eval", help="score a checkpoint against a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="paired progressive vs simultaneous comparison")
    p.add_argument("--suite", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="base RunConfig JSON shared by both modes")
    p.add_argument("--scenes", nargs="*", help="subset of scene names")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient oracle")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--inject-corruption", action="store_true",
                   help="test hook: corrupt one gradient component")
    p.set_defaults(fn=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
