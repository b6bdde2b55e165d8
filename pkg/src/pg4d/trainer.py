"""Two-stage fitting: static scene initialization, then progressive
alignment of the deformation field over a timestep curriculum.

Stage 1 optimizes splat attributes against the initial-timestep frames.
The scene is then frozen (a config flag can unfreeze it) and stage 2
trains only the field. Progressive mode walks the (t0, t1, t2) schedule:
each iteration samples a camera and an active timestep, minimizes

    lambda_l1 * L1  +  lambda_tv * TV(grids)  +  lambda_align * L_align

and advances the schedule every ``update_interval`` iterations, caching
the per-splat position offsets of every timestep promoted into t0. After
the schedule terminates, one extra interval polishes over all timesteps.
The simultaneous baseline trains every timestep from iteration 0 with no
alignment term, at the same iteration budget.

L_align ties the active timestep's position offsets to the frozen cache
of the nearest aligned timestep: per splat, with n = ||dmu_t1 - dmu_t0||,

    w = w0 / (|t1 - t0| + 1) * sigmoid(n)
    term = w * [n > tau] * n

averaged over splats and summed over active timesteps. Gradients flow
only through dmu_t1; the weight w, the mask, and the cached dmu_t0 are
treated as constants.
"""

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .field import apply_deformation_batch, tv_backward, tv_loss
from .optim import AdamState, adam_step
from .params import ParamLayout
from .rasterizer import DEFAULT_TILES, render_arrays, render_backward_arrays
from .scenegen import FrameSet
from .schedule import TimestepSchedule, pick_reference, schedule_update
from .splats import S_MIN, Scene, array_to_scene, scene_to_array


class DivergenceError(RuntimeError):
    """Training loss became non-finite."""


@dataclass
class AlignConfig:
    w0: float = 1.0
    tau: float | None = None      # None: resolved to 5% of the scene diagonal
    lambda_l1: float = 1.0
    lambda_tv: float = 1.0
    lambda_align: float = 1.0

    def validate(self):
        if self.w0 <= 0:
            raise ValueError("w0 must be positive")
        if self.tau is not None and self.tau < 0:
            raise ValueError("tau must be >= 0")
        if min(self.lambda_l1, self.lambda_tv, self.lambda_align) < 0:
            raise ValueError("loss coefficients must be >= 0")

    def resolved_tau(self, scene_diagonal: float) -> float:
        return 0.05 * scene_diagonal if self.tau is None else self.tau


class DeformationCache:
    """Frozen per-splat position offsets of aligned timesteps."""

    def __init__(self):
        self._store = {}

    def record(self, timestep: int, dmu: np.ndarray):
        if timestep in self._store:
            raise ValueError(f"timestep {timestep} already cached; entries are frozen")
        self._store[int(timestep)] = np.array(dmu[:, 0:2], copy=True)

    def get(self, timestep: int) -> np.ndarray:
        return self._store[int(timestep)]

    def __contains__(self, timestep):
        return int(timestep) in self._store

    def timesteps(self):
        return sorted(self._store)


def alignment_weight(dmu_t1: np.ndarray, dmu_t0: np.ndarray, d_t: float, w0: float) -> np.ndarray:
    """Per-splat adaptive weight; larger offset disagreement saturates it
    toward w0/(d_t+1), equal offsets give half of that."""
    diff = np.asarray(dmu_t1, dtype=np.float64) - np.asarray(dmu_t0, dtype=np.float64)
    norms = np.linalg.norm(diff.reshape(-1, 2), axis=1)
    return (w0 / (abs(d_t) + 1.0)) / (1.0 + np.exp(-norms))


def _alignment_single(field, centers, t_norm, d_t, cached_dmu, w0, tau):
    """Loss terms for one active timestep; returns everything the backward
    pass needs. Weight and mask are constants of the current parameters."""
    defs, cache = field.sample_batch(centers, t_norm)
    diff = defs[:, 0:2] - cached_dmu
    norms = np.linalg.norm(diff, axis=1)
    w = (w0 / (abs(d_t) + 1.0)) / (1.0 + np.exp(-norms))
    mask = norms > tau
    loss = float(np.mean(w * mask * norms))
    return loss, defs, cache, diff, norms, w, mask


def alignment_loss(field, centers, times, schedule: TimestepSchedule,
                   cache: DeformationCache, cfg: AlignConfig, tau: float) -> float:
    """Total alignment loss over the active timesteps (forward only)."""
    total = 0.0
    for t1 in schedule.t1:
        ref = pick_reference(t1, schedule)
        loss, *_ = _alignment_single(field, centers, float(times[t1]), t1 - ref,
                                     cache.get(ref), cfg.w0, tau)
        total += loss
    return total


def _alignment_forward_backward(field, centers, times, schedule, cache, cfg, tau):
    total = 0.0
    grad = field.layout.zeros()
    centers_grad = np.zeros((len(centers), 2))
    n = len(centers)
    for t1 in schedule.t1:
        ref = pick_reference(t1, schedule)
        loss, defs, act_cache, diff, norms, w, mask = _alignment_single(
            field, centers, float(times[t1]), t1 - ref, cache.get(ref), cfg.w0, tau)
        total += loss
        if not mask.any():
            continue
        safe = np.where(mask, norms, 1.0)
        coef = (w * mask) / (n * safe)
        d_out = np.zeros((n, 5))
        d_out[:, 0:2] = coef[:, None] * diff
        g, d_query = field.sample_backward(d_out, act_cache)
        grad += g
        centers_grad += d_query
    return total, grad, centers_grad


@dataclass
class RunLog:
    """Everything the report needs from one fit."""

    loss_rows: list = dc_field(default_factory=list)      # (iter, total, l1, tv, align)
    interval_summaries: list = dc_field(default_factory=list)
    schedule_snapshots: list = dc_field(default_factory=list)
    status: str = "ok"
    total_iters: int = 0


def _l1_and_upstream(img, target):
    resid = img - target
    loss = float(np.mean(np.abs(resid)))
    return loss, np.sign(resid) / resid.size


def stage1_fit(scene: Scene, frames: FrameSet, iters: int, lr: float,
               rng: np.random.Generator, n_tiles=DEFAULT_TILES, threads=None,
               log: RunLog | None = None) -> Scene:
    """Optimize splat attributes against the initial-timestep frames."""
    if frames.n_cameras == 0 or frames.n_timesteps == 0:
        raise ValueError("frame set is empty")
    arr = scene_to_array(scene)
    layout = ParamLayout(n_splats=arr.shape[0])
    params = arr.ravel().copy()
    state = AdamState(n_params=params.size, lr=lr, layout=layout)
    targets = [frames.images[k][0] for k in range(frames.n_cameras)]
    for it in range(iters):
        k = int(rng.integers(frames.n_cameras))
        cur = layout.view(params, "splats")
        img = render_arrays(cur, scene.background, frames.cameras[k], n_tiles, threads)
        loss, upstream = _l1_and_upstream(img, targets[k])
        if not math.isfinite(loss):
            raise DivergenceError(f"stage 1 loss diverged at iteration {it}")
        g, _ = render_backward_arrays(cur, frames.cameras[k], upstream, n_tiles, threads)
        grads = g.ravel()
        adam_step(state, params, grads)
        if log is not None:
            log.loss_rows.append((it, loss, loss, 0.0, 0.0))
    if log is not None:
        log.total_iters += iters
    return array_to_scene(layout.view(params, "splats"), scene.background)


def effective_stage2_iters(schedule: TimestepSchedule, configured_iters: int) -> int:
    """Iteration budget: at least enough updates to reach the terminal
    schedule plus one polish interval; both training modes get the same
    number for a fair comparison."""
    need = (schedule.updates_to_terminal() + 1) * schedule.update_interval
    return max(int(configured_iters), need)


def _fit_field(scene, field, frames, cfg: AlignConfig, schedule, iters, lr, rng,
               freeze_splats=True, n_tiles=DEFAULT_TILES, threads=None,
               log: RunLog | None = None):
    """Shared stage-2 loop; ``schedule=None`` is the simultaneous baseline."""
    cfg.validate()
    if frames.n_cameras == 0 or frames.n_timesteps == 0:
        raise ValueError("frame set is empty")
    if log is None:
        log = RunLog()
    arr = scene_to_array(scene)
    centers = arr[:, 0:2].copy()
    times = np.asarray(frames.times, dtype=np.float64)
    diag = math.hypot(field.bounds[2] - field.bounds[0], field.bounds[3] - field.bounds[1])
    tau = cfg.resolved_tau(diag)
    use_align = schedule is not None and cfg.lambda_align > 0.0

    cache = DeformationCache()
    if schedule is not None:
        for t in schedule.t0:
            defs, _ = field.sample_batch(centers, float(times[t]))
            cache.record(t, defs)
        log.schedule_snapshots.append({"iteration": 0, **schedule.snapshot()})

    if freeze_splats:
        layout = ParamLayout(0, field.shape)
        params = field.vec.copy()
    else:
        layout = ParamLayout(arr.shape[0], field.shape)
        params = np.concatenate([arr.ravel(), field.vec])
    state = AdamState(n_params=params.size, lr=lr, layout=layout)

    interval = schedule.update_interval if schedule is not None else max(1, iters // 10)
    acc = np.zeros(4)  # total, l1, tv, align sums over the current interval
    acc_n = 0

    for it in range(iters):
        if freeze_splats:
            field.replace_vector(params)
            cur_arr = arr
        else:
            cur_arr = layout.view(params, "splats")
            centers = cur_arr[:, 0:2]
            field.replace_vector(params[arr.size:])
        k = int(rng.integers(frames.n_cameras))
        if schedule is not None and schedule.t1:
            j = int(schedule.t1[int(rng.integers(len(schedule.t1)))])
        else:
            j = int(rng.integers(frames.n_timesteps))

        defs, act_cache = field.sample_batch(centers, float(times[j]))
        eff = apply_deformation_batch(cur_arr, defs)
        img = render_arrays(eff, scene.background, frames.cameras[k], n_tiles, threads)
        loss_l1, upstream = _l1_and_upstream(img, frames.images[k][j])

        g_eff, _ = render_backward_arrays(eff, frames.cameras[k], upstream, n_tiles, threads)
        free = (cur_arr[:, 2:4] + defs[:, 2:4]) > S_MIN  # scale-clamp mask
        d_def = np.empty_like(defs)
        d_def[:, 0:2] = g_eff[:, 0:2]
        d_def[:, 2:4] = g_eff[:, 2:4] * free
        d_def[:, 4] = g_eff[:, 4]
        fg, d_query = field.sample_backward(d_def, act_cache)
        sg = g_eff.copy()
        sg[:, 2:4] *= free
        sg[:, 0:2] += d_query

        loss_tv = tv_loss(field)
        tv_g = tv_backward(field)

        if use_align:
            loss_align, align_g, align_cg = _alignment_forward_backward(
                field, centers, times, schedule, cache, cfg, tau)
        else:
            loss_align, align_g, align_cg = 0.0, None, None

        total = cfg.lambda_l1 * loss_l1 + cfg.lambda_tv * loss_tv + cfg.lambda_align * loss_align
        if not math.isfinite(total):
            log.status = "diverged"
            raise DivergenceError(f"stage 2 loss diverged at iteration {it}")

        field_grad = cfg.lambda_l1 * fg + cfg.lambda_tv * tv_g
        if align_g is not None:
            field_grad += cfg.lambda_align * align_g
        if freeze_splats:
            grads = field_grad
        else:
            splat_grad = cfg.lambda_l1 * sg
            if align_cg is not None:
                splat_grad[:, 0:2] += cfg.lambda_align * align_cg
            grads = np.concatenate([splat_grad.ravel(), field_grad])
        adam_step(state, params, grads)

        log.loss_rows.append((log.total_iters + it, total, loss_l1, loss_tv, loss_align))
        acc += (total, loss_l1, loss_tv, loss_align)
        acc_n += 1

        if (it + 1) % interval == 0:
            log.interval_summaries.append({
                "iteration": log.total_iters + it + 1,
                "mean_total": acc[0] / acc_n, "mean_l1": acc[1] / acc_n,
                "mean_tv": acc[2] / acc_n, "mean_align": acc[3] / acc_n,
            })
            acc[:] = 0.0
            acc_n = 0
            if schedule is not None and not schedule.terminal:
                if freeze_splats:
                    field.replace_vector(params)
                else:
                    field.replace_vector(params[arr.size:])
                promoted = schedule_update(schedule)
                for t in promoted:
                    d, _ = field.sample_batch(centers, float(times[t]))
                    cache.record(t, d)
                log.schedule_snapshots.append({"iteration": log.total_iters + it + 1,
                                               **schedule.snapshot()})

    if freeze_splats:
        field.replace_vector(params)
        final_scene = scene
    else:
        final_scene = array_to_scene(layout.view(params, "splats"), scene.background)
        field.replace_vector(params[arr.size:])
    log.total_iters += iters
    return final_scene, field, log


def stage2_fit(scene, field, frames, cfg: AlignConfig, schedule: TimestepSchedule,
               iters=None, lr=1.6e-4, rng=None, freeze_splats=True,
               n_tiles=DEFAULT_TILES, threads=None, log=None):
    """Progressive fitting over the timestep curriculum.

    ``iters=None`` derives the budget from the schedule (updates to
    terminal plus one polish interval); an explicit value is honored but
    never cut below that.
    """
    if schedule is None:
        raise ValueError("progressive fitting requires a schedule")
    iters = effective_stage2_iters(schedule, 0 if iters is None else iters)
    return _fit_field(scene, field, frames, cfg, schedule, iters, lr, rng,
                      freeze_splats, n_tiles, threads, log)


def baseline_fit(scene, field, frames, cfg: AlignConfig, iters, lr=1.6e-4, rng=None,
                 freeze_splats=True, n_tiles=DEFAULT_TILES, threads=None, log=None):
    """Simultaneous baseline: every timestep trainable from iteration 0,
    no alignment term, same iteration budget as the progressive run."""
    return _fit_field(scene, field, frames, cfg, None, iters, lr, rng,
                      freeze_splats, n_tiles, threads, log)
