"""End-to-end run orchestration: scene init, both fit modes, reports,
the gradient-check suite, and the progressive-vs-simultaneous comparison."""

import csv
import json
import math
from pathlib import Path

import numpy as np

from . import rng as rng_mod
from .checkpoint import save_checkpoint
from .config import RunConfig
from .field import DeformationField, render_at_time_arrays, render_at_time_backward, tv_backward, tv_loss
from .gradcheck import finite_diff_check
from .metrics import evaluate
from .optim import AdamState  # noqa: F401  (re-exported for demos)
from .params import FieldShape, ParamLayout
from .scenegen import FrameSet, load_dataset
from .schedule import TimestepSchedule
from .splats import S_MIN, Camera, Scene, Splat, array_to_scene, scene_to_array
from .trainer import (AlignConfig, DeformationCache, DivergenceError, RunLog,
                      _alignment_forward_backward, baseline_fit,
                      effective_stage2_iters, stage1_fit, stage2_fit)

GRADCHECK_CLASSES = ("mu", "scale", "rotation", "opacity", "color", "grids", "head")


def init_scene(cfg: RunConfig, gt_scene: Scene, bounds, rng) -> Scene:
    """Starting scene for stage 1: ground-truth-perturbed or random."""
    if cfg.init_mode == "gt_perturbed":
        p = cfg.perturb_scale
        arr = scene_to_array(gt_scene).copy()
        arr[:, 0:2] += rng.normal(0.0, p, (arr.shape[0], 2))
        arr[:, 2:4] = np.maximum(arr[:, 2:4] + rng.normal(0.0, 0.5 * p, (arr.shape[0], 2)), S_MIN)
        arr[:, 4] += rng.normal(0.0, 5.0 * p, arr.shape[0])
        arr[:, 5:9] = np.clip(arr[:, 5:9] + rng.normal(0.0, p, (arr.shape[0], 4)), 0.0, 1.0)
        return array_to_scene(arr, gt_scene.background)
    splats = [Splat(center=np.array([rng.uniform(bounds[0], bounds[2]),
                                     rng.uniform(bounds[1], bounds[3])]),
                    scale=rng.uniform(0.02, 0.08, 2),
                    rotation=rng.uniform(-math.pi, math.pi),
                    opacity=rng.uniform(0.3, 0.8),
                    color=rng.uniform(0.1, 0.9, 3))
              for _ in range(cfg.init_splats)]
    return Scene(splats=splats, background=gt_scene.background.copy())


def make_render_fn(scene, field, cameras, times, n_tiles=8, threads=None):
    arr = scene_to_array(scene)

    def render_fn(cam_index, time_index):
        return render_at_time_arrays(arr, scene.background, field,
                                     cameras[cam_index], float(times[time_index]),
                                     n_tiles, threads)

    return render_fn


def run_fit(cfg: RunConfig, frameset: FrameSet, gt_scene: Scene, out_dir) -> dict:
    """One full training run; writes checkpoints, report.json and the loss
    curve into ``out_dir`` and returns the report dict.

    On divergence the report (status="diverged") is still written before
    the DivergenceError propagates.
    """
    cfg.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    bounds = frameset.spec.bounds if frameset.spec else (0.0, 0.0, 1.0, 1.0)
    n_timesteps = frameset.n_timesteps

    init_rng = rng_mod.stream(cfg.seed, "scene_init")
    scene0 = init_scene(cfg, gt_scene, bounds, init_rng)
    field = DeformationField.create(cfg.field_shape, bounds, init_rng)

    schedule = TimestepSchedule.initial(n_timesteps, cfg.window, cfg.update_interval)
    stage2_iters = effective_stage2_iters(schedule, cfg.stage2_iters)
    align = AlignConfig(w0=cfg.w0, tau=cfg.tau, lambda_l1=cfg.lambda_l1,
                        lambda_tv=cfg.lambda_tv, lambda_align=cfg.lambda_align)
    diag = math.hypot(bounds[2] - bounds[0], bounds[3] - bounds[1])

    report = {
        "status": "ok",
        "mode": cfg.mode,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "resolved": {"tau": align.resolved_tau(diag), "stage2_iters": stage2_iters,
                     "stage1_lr": cfg.effective_lr(1), "stage2_lr": cfg.effective_lr(2)},
    }
    log = RunLog()
    try:
        scene = stage1_fit(scene0, frameset, cfg.stage1_iters, cfg.effective_lr(1),
                           rng_mod.stream(cfg.seed, "stage1"), cfg.n_tiles, log=log)
        save_checkpoint(out / "stage1.pg4d", scene, field, frameset.cameras)
        s2_rng = rng_mod.stream(cfg.seed, "stage2")
        if cfg.mode == "progressive":
            scene, field, log = stage2_fit(scene, field, frameset, align, schedule,
                                           iters=stage2_iters, lr=cfg.effective_lr(2),
                                           rng=s2_rng, freeze_splats=not cfg.unfreeze_splats,
                                           n_tiles=cfg.n_tiles, log=log)
            report["schedule_terminal"] = schedule.terminal
        else:
            scene, field, log = baseline_fit(scene, field, frameset, align,
                                             iters=stage2_iters, lr=cfg.effective_lr(2),
                                             rng=s2_rng, freeze_splats=not cfg.unfreeze_splats,
                                             n_tiles=cfg.n_tiles, log=log)
            report["schedule_terminal"] = None
    except DivergenceError as e:
        report["status"] = "diverged"
        report["error"] = str(e)
        _write_run_artifacts(out, report, log)
        raise
    save_checkpoint(out / "final.pg4d", scene, field, frameset.cameras)

    render_fn = make_render_fn(scene, field, frameset.cameras, frameset.times, cfg.n_tiles)
    metrics = evaluate(render_fn, frameset, config={"config_hash": cfg.config_hash()})
    report["metrics"] = metrics.to_dict()
    report["final_mean_psnr"] = float(metrics.mean["psnr_db"])
    report["final_last_quartile_psnr"] = float(metrics.last_quartile_psnr)
    report["loss_intervals"] = log.interval_summaries
    report["schedule_snapshots"] = log.schedule_snapshots
    _write_run_artifacts(out, report, log)
    return report


def json_sanitize(obj):
    """Replace non-finite floats with None, recursively (strict JSON)."""
    if isinstance(obj, dict):
        return {k: json_sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [json_sanitize(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def _write_run_artifacts(out: Path, report: dict, log: RunLog):
    report.setdefault("loss_intervals", log.interval_summaries)
    report.setdefault("schedule_snapshots", log.schedule_snapshots)
    (out / "report.json").write_text(
        json.dumps(json_sanitize(report), indent=1, allow_nan=False), encoding="utf-8")
    with (out / "loss_curve.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "total", "l1", "tv", "align"])
        for row in log.loss_rows:
            writer.writerow([row[0]] + [f"{v:.10g}" for v in row[1:]])


# -- full-pipeline gradient check ----------------------------------------

GRADCHECK_FIELD_SHAPE = FieldShape(grid_x=4, grid_y=4, grid_t=3, features=2, hidden=16)


def _gradcheck_case(seed: int):
    """One seeded mini scene exercising every trainable parameter class."""
    rng = rng_mod.stream(seed, "gradcheck")
    n_splats = int(rng.integers(4, 9))
    bounds = (0.0, 0.0, 1.0, 1.0)
    splats = [Splat(center=rng.uniform(0.2, 0.8, 2),
                    scale=rng.uniform(0.05, 0.12, 2),
                    rotation=rng.uniform(-math.pi, math.pi),
                    opacity=rng.uniform(0.3, 0.7),
                    color=rng.uniform(0.2, 0.8, 3))
              for _ in range(n_splats)]
    scene = Scene(splats=splats, background=rng.uniform(0.0, 0.15, 3))
    cam = Camera(center=rng.uniform(0.4, 0.6, 2), rotation=rng.uniform(-0.3, 0.3),
                 zoom=rng.uniform(13.0, 17.0), resolution=(16, 16))
    field = DeformationField.create(GRADCHECK_FIELD_SHAPE, bounds, rng)
    field.w3[:] = rng.normal(0.0, 0.05, field.w3.shape)
    field.b3[:] = rng.normal(0.0, 0.05, field.b3.shape)
    times = np.array([0.0, 1.0])
    targets = [rng.uniform(0.0, 1.0, (16, 16, 3)) for _ in times]
    return scene, cam, field, times, targets, bounds


def gradcheck_pipeline(seed: int, inject_corruption=False):
    """FD-verify the full composite loss (L1 + TV + alignment) on one seed.

    Returns ``(FDReport, joint layout)``. The alignment weight and mask
    are constants of the expansion point, matching training semantics.
    """
    scene, cam, field, times, targets, bounds = _gradcheck_case(seed)
    arr = scene_to_array(scene)
    n_sp = arr.size
    shape = field.shape
    layout = ParamLayout(arr.shape[0], shape)
    cfg = AlignConfig(w0=1.0, tau=0.0)
    schedule = TimestepSchedule(t0=[0], t1=[1], t2=[])
    cache = DeformationCache()
    base_defs, _ = field.sample_batch(arr[:, 0:2], float(times[0]))
    cache.record(0, base_defs)

    # Alignment weight/mask frozen at the expansion point.
    ref_defs, _ = field.sample_batch(arr[:, 0:2], float(times[1]))
    diff0 = ref_defs[:, 0:2] - cache.get(0)
    norms0 = np.linalg.norm(diff0, axis=1)
    w0 = (cfg.w0 / (1 + 1.0)) / (1.0 + np.exp(-norms0))
    frozen_coef = w0 * (norms0 > 0.0)

    def unpack(vec):
        sp = vec[:n_sp].reshape(arr.shape)
        return sp, DeformationField(shape, bounds, vec=vec[n_sp:])

    def loss_fn(vec):
        sp, f = unpack(vec)
        total = 0.0
        for t, target in zip(times, targets):
            img = render_at_time_arrays(sp, scene.background, f, cam, float(t))
            total += float(np.mean(np.abs(img - target)))
        total += tv_loss(f)
        defs, _ = f.sample_batch(sp[:, 0:2], float(times[1]))
        norms = np.linalg.norm(defs[:, 0:2] - cache.get(0), axis=1)
        total += float(np.mean(frozen_coef * norms))
        return total

    def grad_fn(vec):
        sp, f = unpack(vec)
        splat_grad = np.zeros_like(sp)
        field_grad = f.layout.zeros()
        for t, target in zip(times, targets):
            img = render_at_time_arrays(sp, scene.background, f, cam, float(t))
            upstream = np.sign(img - target) / img.size
            fg, sg, _ = render_at_time_backward(sp, f, cam, float(t), upstream)
            splat_grad += sg
            field_grad += fg
        field_grad += tv_backward(f)
        _, ag, acg = _alignment_forward_backward(f, sp[:, 0:2], times, schedule,
                                                 cache, cfg, tau=0.0)
        field_grad += ag
        splat_grad[:, 0:2] += acg
        out = np.concatenate([splat_grad.ravel(), field_grad])
        if inject_corruption:
            out[layout.class_indices()["grids"][0]] *= 2.0
        return out

    base = np.concatenate([arr.ravel(), field.vec.copy()])
    return finite_diff_check(loss_fn, grad_fn, base), layout


def run_gradcheck(seed: int = 0, n_scenes: int = 5, inject_corruption=False):
    """Gradient oracle over seeded scenes; returns (report lines, all ok)."""
    lines = []
    all_ok = True
    worst = {name: (0.0, 0.0) for name in GRADCHECK_CLASSES}
    for i in range(n_scenes):
        report, layout = gradcheck_pipeline(seed + i, inject_corruption)
        classes = layout.class_indices()
        failing = set(report.failing)
        lines.append(f"scene seed={seed + i}: max_rel={report.max_rel:.3e} "
                     f"max_abs={report.max_abs:.3e} "
                     f"{'OK' if report.ok else 'FAIL'}")
        for name in GRADCHECK_CLASSES:
            idx = classes[name]
            a = report.analytic[idx]
            n = report.numeric[idx]
            abs_err = float(np.max(np.abs(a - n))) if len(idx) else 0.0
            denom = np.maximum(np.abs(a), np.abs(n))
            rel = float(np.max(np.where(denom > 0, np.abs(a - n) / np.maximum(denom, 1e-300), 0.0))) \
                if len(idx) else 0.0
            worst[name] = (max(worst[name][0], rel), max(worst[name][1], abs_err))
            if failing & set(idx.tolist()):
                all_ok = False
    for name in GRADCHECK_CLASSES:
        rel, abs_err = worst[name]
        lines.append(f"class {name:9s} worst_rel={rel:.3e} worst_abs={abs_err:.3e}")
    lines.append("gradient check: " + ("PASS" if all_ok else "FAIL"))
    return lines, all_ok


# -- paired-mode comparison ------------------------------------------------

def run_ablation(suite_dir, out_dir, base_cfg: RunConfig, scenes=None):
    """Fit both modes on every suite scene with paired seeds and budgets.

    Returns ``(table, failures)``; artifacts land in out_dir/<scene>/<mode>.
    """
    suite = Path(suite_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if scenes is None:
        scenes = sorted(p.name for p in suite.iterdir() if (p / "spec.json").exists())
    if not scenes:
        raise FileNotFoundError(f"no datasets found under {suite}")
    table = {}
    failures = []
    for name in scenes:
        frameset, gt_scene = load_dataset(suite / name)
        table[name] = {}
        for mode in ("progressive", "simultaneous"):
            cfg = RunConfig.from_dict({**base_cfg.to_dict(), "mode": mode,
                                       "dataset": str(suite / name),
                                       "out": str(out / name / mode)})
            try:
                report = run_fit(cfg, frameset, gt_scene, out / name / mode)
                table[name][mode] = {
                    "mean_psnr": report["final_mean_psnr"],
                    "last_quartile_psnr": report["final_last_quartile_psnr"],
                    "mean_l1": report["metrics"]["mean"]["l1"],
                    "mean_ssim": report["metrics"]["mean"]["ssim"],
                    "config_hash": report["config_hash"],
                    "schedule_terminal": report.get("schedule_terminal"),
                }
            except Exception as e:  # keep going; report the failure at the end
                failures.append(f"{name}/{mode}: {e}")
                table[name][mode] = {"error": str(e)}
        both = table[name]
        if "error" not in both.get("progressive", {}) and "error" not in both.get("simultaneous", {}):
            both["delta"] = {
                "mean_psnr": both["progressive"]["mean_psnr"] - both["simultaneous"]["mean_psnr"],
                "last_quartile_psnr": (both["progressive"]["last_quartile_psnr"]
                                       - both["simultaneous"]["last_quartile_psnr"]),
            }
    table = json_sanitize(table)
    (out / "ablation.json").write_text(json.dumps(table, indent=1, allow_nan=False),
                                       encoding="utf-8")
    (out / "ablation.txt").write_text(format_ablation_table(table), encoding="utf-8")
    return table, failures


def format_ablation_table(table: dict) -> str:
    lines = [f"{'scene':8s} {'mode':13s} {'mean PSNR':>10s} {'lastQ PSNR':>11s}"]
    for name in sorted(table):
        for mode in ("progressive", "simultaneous"):
            row = table[name].get(mode, {})
            if "error" in row:
                lines.append(f"{name:8s} {mode:13s} {'ERROR':>10s} {row['error'][:40]}")
            elif row:
                lines.append(f"{name:8s} {mode:13s} {row['mean_psnr']:10.3f} "
                             f"{row['last_quartile_psnr']:11.3f}")
        delta = table[name].get("delta")
        if delta:
            lines.append(f"{name:8s} {'delta':13s} {delta['mean_psnr']:10.3f} "
                         f"{delta['last_quartile_psnr']:11.3f}")
    return "\n".join(lines) + "\n"
