"""Forward rasterizer and its hand-written backward pass.

Pixel model (additive, no transmittance): for every pixel at world
position x,

    pixel(x) = background + sum_i alpha_i * c_i * exp(-0.5 * q_i(x))

with q_i the squared Mahalanobis distance to splat i. Contributions with
q > CUTOFF_SIGMA**2 are exactly zero, and the same mask is applied in the
backward pass.

The fast path evaluates each splat only inside the pixel-space bounding
box of its cutoff ellipse and may process disjoint row strips ("tiles")
in a thread pool. Per-pixel accumulation order is always splat order, so
the rendered image is bitwise independent of tile count and thread count;
backward reductions merge per-tile buffers in tile order, which pins the
result for a fixed tile count.
"""

import math
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .splats import CUTOFF_SIGMA, SPLAT_DIM, Camera, Scene, build_covariance, scene_to_array

# Fixed default tile count; PG4D_THREADS only chooses how many workers
# process the same tile list, so results never depend on core count.
DEFAULT_TILES = 8

_CUTOFF_Q = CUTOFF_SIGMA * CUTOFF_SIGMA

_pool = None
_pool_size = 0


def worker_count() -> int:
    """Worker cap from PG4D_THREADS (default: all cores)."""
    raw = os.environ.get("PG4D_THREADS", "").strip()
    if raw:
        try:
            n = int(raw)
        except ValueError as e:
            raise ValueError(f"PG4D_THREADS must be an integer, got {raw!r}") from e
        if n < 1:
            raise ValueError(f"PG4D_THREADS must be >= 1, got {n}")
        return n
    return os.cpu_count() or 1


def _get_pool(n):
    global _pool, _pool_size
    if _pool is None or _pool_size != n:
        if _pool is not None:
            _pool.shutdown(wait=True)
        _pool = ThreadPoolExecutor(max_workers=n)
        _pool_size = n
    return _pool


def pixel_to_world(camera: Camera, px, py):
    """Map pixel coordinates (x right, y down, origin at image corner) to world."""
    c, s = math.cos(camera.rotation), math.sin(camera.rotation)
    w, h = camera.resolution
    u = (np.asarray(px, dtype=np.float64) - 0.5 * w) / camera.zoom
    v = (np.asarray(py, dtype=np.float64) - 0.5 * h) / camera.zoom
    return camera.center[0] + c * u - s * v, camera.center[1] + s * u + c * v


def world_to_pixel(camera: Camera, x, y):
    """Inverse of :func:`pixel_to_world`."""
    c, s = math.cos(camera.rotation), math.sin(camera.rotation)
    w, h = camera.resolution
    dx = np.asarray(x, dtype=np.float64) - camera.center[0]
    dy = np.asarray(y, dtype=np.float64) - camera.center[1]
    return (c * dx + s * dy) * camera.zoom + 0.5 * w, (-s * dx + c * dy) * camera.zoom + 0.5 * h


def _world_grid(camera: Camera):
    w, h = camera.resolution
    px = np.arange(w, dtype=np.float64) + 0.5
    py = np.arange(h, dtype=np.float64) + 0.5
    gx, gy = np.meshgrid(px, py)
    return pixel_to_world(camera, gx, gy)


def _splat_pixel_bboxes(splat_arr: np.ndarray, camera: Camera):
    """Conservative per-splat pixel index ranges covering the cutoff ellipse.

    The ellipse's axis-aligned extent along a pixel axis is
    CUTOFF_SIGMA * sqrt(diag of the pixel-space covariance).
    """
    w, h = camera.resolution
    cx, cy = world_to_pixel(camera, splat_arr[:, 0], splat_arr[:, 1])
    # Splat principal axes make angle (theta - cam.rotation) with pixel axes.
    rel = splat_arr[:, 4] - camera.rotation
    c2 = np.cos(rel) ** 2
    s2 = np.sin(rel) ** 2
    v1 = splat_arr[:, 2] ** 2
    v2 = splat_arr[:, 3] ** 2
    rx = CUTOFF_SIGMA * camera.zoom * np.sqrt(c2 * v1 + s2 * v2)
    ry = CUTOFF_SIGMA * camera.zoom * np.sqrt(s2 * v1 + c2 * v2)
    i0 = np.maximum(np.floor(cx - rx - 0.5), 0).astype(np.int64)
    i1 = np.minimum(np.ceil(cx + rx - 0.5) + 1, w).astype(np.int64)
    j0 = np.maximum(np.floor(cy - ry - 0.5), 0).astype(np.int64)
    j1 = np.minimum(np.ceil(cy + ry - 0.5) + 1, h).astype(np.int64)
    return i0, i1, j0, j1


def _tile_rows(height: int, n_tiles: int):
    bounds = np.linspace(0, height, min(n_tiles, height) + 1).astype(np.int64)
    return [(int(bounds[k]), int(bounds[k + 1])) for k in range(len(bounds) - 1)]


def _run_tiles(fn, tiles, threads):
    if threads is None:
        threads = worker_count()
    if threads <= 1 or len(tiles) <= 1:
        return [fn(t) for t in tiles]
    pool = _get_pool(threads)
    return list(pool.map(fn, tiles))


def render_arrays(splat_arr, background, camera: Camera, n_tiles=DEFAULT_TILES, threads=None):
    """Render packed splats; see :func:`render`."""
    camera.validate()
    splat_arr = np.asarray(splat_arr, dtype=np.float64)
    if splat_arr.ndim != 2 or splat_arr.shape[1] != SPLAT_DIM or splat_arr.shape[0] == 0:
        raise ValueError(f"expected non-empty (N, {SPLAT_DIM}) splat array, got {splat_arr.shape}")
    if not np.all(np.isfinite(splat_arr)):
        raise ValueError("non-finite splat parameters")
    w, h = camera.resolution
    wx, wy = _world_grid(camera)
    i0, i1, j0, j1 = _splat_pixel_bboxes(splat_arr, camera)

    cth = np.cos(splat_arr[:, 4])
    sth = np.sin(splat_arr[:, 4])
    inv_s1 = 1.0 / splat_arr[:, 2]
    inv_s2 = 1.0 / splat_arr[:, 3]
    weighted_col = splat_arr[:, 5:6] * splat_arr[:, 6:9]  # alpha * color

    img = np.empty((h, w, 3))
    img[:] = np.asarray(background, dtype=np.float64)

    def do_tile(rows):
        r0, r1 = rows
        for k in range(splat_arr.shape[0]):
            a, b = max(j0[k], r0), min(j1[k], r1)
            if a >= b or i0[k] >= i1[k]:
                continue
            dx = wx[a:b, i0[k]:i1[k]] - splat_arr[k, 0]
            dy = wy[a:b, i0[k]:i1[k]] - splat_arr[k, 1]
            e1 = (cth[k] * dx + sth[k] * dy) * inv_s1[k]
            e2 = (-sth[k] * dx + cth[k] * dy) * inv_s2[k]
            q = e1 * e1 + e2 * e2
            wgt = np.where(q <= _CUTOFF_Q, np.exp(-0.5 * q), 0.0)
            img[a:b, i0[k]:i1[k]] += wgt[:, :, None] * weighted_col[k]
        return None

    _run_tiles(do_tile, _tile_rows(h, n_tiles), threads)
    return img


def render(scene: Scene, camera: Camera, n_tiles=DEFAULT_TILES, threads=None) -> np.ndarray:
    """Render a scene to an (H, W, 3) float image (values unclamped)."""
    return render_arrays(scene_to_array(scene), scene.background, camera, n_tiles, threads)


def render_backward_arrays(splat_arr, camera: Camera, upstream, n_tiles=DEFAULT_TILES, threads=None):
    """Gradients of sum(upstream * image) w.r.t. packed splat params.

    Returns ``(splat_grads, background_grad)`` with splat_grads of shape
    (N, 9) in SPLAT_FIELDS order. The cutoff mask matches the forward pass
    exactly; no gradient flows across the cutoff boundary.
    """
    camera.validate()
    splat_arr = np.asarray(splat_arr, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    w, h = camera.resolution
    if upstream.shape != (h, w, 3):
        raise ValueError(f"upstream gradient must be {(h, w, 3)}, got {upstream.shape}")
    if not np.all(np.isfinite(upstream)):
        raise ValueError("non-finite upstream gradient")
    if splat_arr.shape[0] == 0:
        raise ValueError("scene must contain at least one splat")

    wx, wy = _world_grid(camera)
    i0, i1, j0, j1 = _splat_pixel_bboxes(splat_arr, camera)

    cth = np.cos(splat_arr[:, 4])
    sth = np.sin(splat_arr[:, 4])
    s1 = splat_arr[:, 2]
    s2 = splat_arr[:, 3]
    alpha = splat_arr[:, 5]
    color = splat_arr[:, 6:9]

    def do_tile(rows):
        r0, r1 = rows
        g = np.zeros_like(splat_arr)
        for k in range(splat_arr.shape[0]):
            a, b = max(j0[k], r0), min(j1[k], r1)
            if a >= b or i0[k] >= i1[k]:
                continue
            up = upstream[a:b, i0[k]:i1[k]]
            dx = wx[a:b, i0[k]:i1[k]] - splat_arr[k, 0]
            dy = wy[a:b, i0[k]:i1[k]] - splat_arr[k, 1]
            e1 = cth[k] * dx + sth[k] * dy
            e2 = -sth[k] * dx + cth[k] * dy
            u1 = e1 / s1[k]
            u2 = e2 / s2[k]
            q = u1 * u1 + u2 * u2
            mask = q <= _CUTOFF_Q
            wgt = np.where(mask, np.exp(-0.5 * q), 0.0)

            up_dot_c = up @ color[k]
            # d pixel / d weight summed over channels, times alpha.
            dw = alpha[k] * up_dot_c
            g[k, 5] += float(np.sum(wgt * up_dot_c))                    # alpha
            g[k, 6:9] += alpha[k] * np.einsum("ijc,ij->c", up, wgt)     # color
            # dL/dq per pixel; zero where masked out.
            dq = -0.5 * wgt * dw
            p1 = 2.0 * e1 / (s1[k] * s1[k])
            p2 = 2.0 * e2 / (s2[k] * s2[k])
            # q depends on the offset d = x - mu, so d q / d mu = -dq/dd.
            g[k, 0] -= float(np.sum(dq * (p1 * cth[k] - p2 * sth[k])))
            g[k, 1] -= float(np.sum(dq * (p1 * sth[k] + p2 * cth[k])))
            g[k, 2] += float(np.sum(dq * (-2.0 * e1 * e1 / s1[k] ** 3)))
            g[k, 3] += float(np.sum(dq * (-2.0 * e2 * e2 / s2[k] ** 3)))
            g[k, 4] += float(np.sum(dq * (p1 * e2 - p2 * e1)))
        bg = upstream[r0:r1].sum(axis=(0, 1))
        return g, bg

    results = _run_tiles(do_tile, _tile_rows(h, n_tiles), threads)
    splat_grads = np.zeros_like(splat_arr)
    bg_grad = np.zeros(3)
    for g, bg in results:  # fixed tile order keeps the reduction deterministic
        splat_grads += g
        bg_grad += bg
    if not np.all(np.isfinite(splat_grads)):
        raise FloatingPointError("non-finite splat gradient")
    return splat_grads, bg_grad


def backward_render(scene: Scene, camera: Camera, upstream, n_tiles=DEFAULT_TILES, threads=None):
    """Scene-level wrapper of :func:`render_backward_arrays`."""
    return render_backward_arrays(scene_to_array(scene), camera, upstream, n_tiles, threads)


def render_naive_reference(scene: Scene, camera: Camera) -> np.ndarray:
    """Brute-force per-pixel-per-splat reference rasterizer.

    Same semantics as :func:`render` (including the cutoff rule) but a
    plain double loop with explicitly inverted covariances; kept as the
    oracle for the tiled fast path.
    """
    camera.validate()
    if len(scene.splats) == 0:
        raise ValueError("scene must contain at least one splat")
    w, h = camera.resolution
    pre = []
    for sp in scene.splats:
        cov = build_covariance(sp.scale, sp.rotation)
        inv = np.linalg.inv(cov)
        pre.append((float(sp.center[0]), float(sp.center[1]),
                    float(inv[0, 0]), float(inv[0, 1]), float(inv[1, 1]),
                    sp.opacity * sp.color))
    img = np.empty((h, w, 3))
    for j in range(h):
        for i in range(w):
            x, y = pixel_to_world(camera, i + 0.5, j + 0.5)
            acc = scene.background.copy()
            for mx, my, ia, ib, ic, wc in pre:
                dx = float(x) - mx
                dy = float(y) - my
                q = ia * dx * dx + 2.0 * ib * dx * dy + ic * dy * dy
                if q <= _CUTOFF_Q:
                    acc = acc + wc * math.exp(-0.5 * q)
            img[j, i] = acc
    return img
