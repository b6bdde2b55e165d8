"""Deformation field: tri-plane feature grids + small MLP decoder.

The field maps (canonical splat center, normalized time) to per-splat
offsets (dmu_x, dmu_y, ds_x, ds_y, dtheta). Spatial coordinates are
normalized into [0, 1] by the scene bounding box; each of the (x,y),
(x,t), (y,t) planes is sampled bilinearly, the three feature vectors are
concatenated and decoded by a two-hidden-layer tanh MLP whose output
layer starts at exactly zero, so an untrained field is the identity
deformation.

Out-of-range query coordinates clamp to the grid boundary; the clamp is
treated as piecewise differentiable (zero positional gradient outside).
"""

from dataclasses import dataclass

import numpy as np

from .params import FieldShape, ParamLayout
from .rasterizer import DEFAULT_TILES, render_arrays, render_backward_arrays
from .splats import S_MIN, Camera, Scene, Splat, scene_to_array

GRID_INIT_STD = 0.1


@dataclass
class Deformation:
    """Offsets for one splat at one time."""

    dmu: np.ndarray    # (2,)
    dscale: np.ndarray  # (2,)
    drot: float


class DeformationField:
    """Owns the flat parameter vector; plane/decoder attributes are views."""

    def __init__(self, shape: FieldShape, bounds, vec=None):
        for g in (shape.grid_x, shape.grid_y, shape.grid_t):
            if g < 2:
                raise ValueError("grid dimensions must be >= 2")
        self.shape = shape
        self.bounds = tuple(float(b) for b in bounds)  # (xmin, ymin, xmax, ymax)
        if self.bounds[2] <= self.bounds[0] or self.bounds[3] <= self.bounds[1]:
            raise ValueError(f"degenerate field bounds {self.bounds}")
        self.layout = ParamLayout(0, shape)
        if vec is None:
            vec = self.layout.zeros()
        elif vec.shape != (self.layout.size,):
            raise ValueError(f"expected vector of size {self.layout.size}, got {vec.shape}")
        self.vec = np.ascontiguousarray(vec, dtype=np.float64)
        for name in self.layout.names():
            setattr(self, name, self.layout.view(self.vec, name))

    @classmethod
    def create(cls, shape: FieldShape, bounds, rng: np.random.Generator):
        """Fresh field: random grids and hidden layers, zero output layer."""
        field = cls(shape, bounds)
        f, h = 3 * shape.features, shape.hidden
        field.plane_xy[:] = rng.normal(0.0, GRID_INIT_STD, field.plane_xy.shape)
        field.plane_xt[:] = rng.normal(0.0, GRID_INIT_STD, field.plane_xt.shape)
        field.plane_yt[:] = rng.normal(0.0, GRID_INIT_STD, field.plane_yt.shape)
        field.w1[:] = rng.uniform(-1.0, 1.0, (f, h)) * np.sqrt(6.0 / (f + h))
        field.w2[:] = rng.uniform(-1.0, 1.0, (h, h)) * np.sqrt(6.0 / (h + h))
        # w3, b3 stay exactly zero: identity deformation before training.
        return field

    def replace_vector(self, vec: np.ndarray):
        """Adopt new parameter values (copies into the owned buffer)."""
        if vec.shape != (self.layout.size,):
            raise ValueError(f"expected vector of size {self.layout.size}, got {vec.shape}")
        self.vec[:] = vec

    # -- sampling ---------------------------------------------------------

    def _normalize(self, centers):
        xmin, ymin, xmax, ymax = self.bounds
        raw_u = (centers[:, 0] - xmin) / (xmax - xmin)
        raw_v = (centers[:, 1] - ymin) / (ymax - ymin)
        u = np.clip(raw_u, 0.0, 1.0)
        v = np.clip(raw_v, 0.0, 1.0)
        inside_u = (raw_u >= 0.0) & (raw_u <= 1.0)
        inside_v = (raw_v >= 0.0) & (raw_v <= 1.0)
        return u, v, inside_u, inside_v

    def sample_batch(self, centers: np.ndarray, t: float):
        """Deformations (n, 5) for all centers at one time; also returns the
        activation cache consumed by :meth:`sample_backward`."""
        centers = np.asarray(centers, dtype=np.float64)
        tt = float(np.clip(t, 0.0, 1.0))
        u, v, inside_u, inside_v = self._normalize(centers)
        ts = np.full(len(centers), tt)

        f_xy, c_xy = _bilinear_forward(self.plane_xy, u, v)
        f_xt, c_xt = _bilinear_forward(self.plane_xt, u, ts)
        f_yt, c_yt = _bilinear_forward(self.plane_yt, v, ts)
        feat = np.concatenate([f_xy, f_xt, f_yt], axis=1)

        a1 = feat @ self.w1 + self.b1
        h1 = np.tanh(a1)
        a2 = h1 @ self.w2 + self.b2
        h2 = np.tanh(a2)
        out = h2 @ self.w3 + self.b3
        cache = (c_xy, c_xt, c_yt, feat, h1, h2, inside_u, inside_v)
        return out, cache

    def sample_backward(self, d_out: np.ndarray, cache):
        """Backprop d_out (n, 5) through decoder and planes.

        Returns (field gradient vector, gradient w.r.t. query centers (n, 2)).
        """
        c_xy, c_xt, c_yt, feat, h1, h2, inside_u, inside_v = cache
        layout = self.layout
        grad = layout.zeros()

        d_h2 = d_out @ self.w3.T
        layout.view(grad, "w3")[:] = h2.T @ d_out
        layout.view(grad, "b3")[:] = d_out.sum(axis=0)
        d_a2 = d_h2 * (1.0 - h2 * h2)
        layout.view(grad, "w2")[:] = h1.T @ d_a2
        layout.view(grad, "b2")[:] = d_a2.sum(axis=0)
        d_h1 = d_a2 @ self.w2.T
        d_a1 = d_h1 * (1.0 - h1 * h1)
        layout.view(grad, "w1")[:] = feat.T @ d_a1
        layout.view(grad, "b1")[:] = d_a1.sum(axis=0)
        d_feat = d_a1 @ self.w1.T

        f = self.shape.features
        du_xy, dv_xy = _bilinear_backward(layout.view(grad, "plane_xy"), d_feat[:, :f], c_xy)
        du_xt, _ = _bilinear_backward(layout.view(grad, "plane_xt"), d_feat[:, f:2 * f], c_xt)
        dv_yt, _ = _bilinear_backward(layout.view(grad, "plane_yt"), d_feat[:, 2 * f:], c_yt)

        xmin, ymin, xmax, ymax = self.bounds
        d_centers = np.zeros((d_out.shape[0], 2))
        d_centers[:, 0] = (du_xy + du_xt) * inside_u / (xmax - xmin)
        d_centers[:, 1] = (dv_xy + dv_yt) * inside_v / (ymax - ymin)
        return grad, d_centers


def _bilinear_forward(plane: np.ndarray, u: np.ndarray, v: np.ndarray):
    """Sample (G0, G1, F) plane at normalized coords; u, v already in [0, 1]."""
    g0, g1, _ = plane.shape
    x = u * (g0 - 1)
    y = v * (g1 - 1)
    i = np.minimum(x.astype(np.int64), g0 - 2)
    j = np.minimum(y.astype(np.int64), g1 - 2)
    fx = x - i
    fy = y - j
    p00 = plane[i, j]
    p10 = plane[i + 1, j]
    p01 = plane[i, j + 1]
    p11 = plane[i + 1, j + 1]
    wx = fx[:, None]
    wy = fy[:, None]
    out = (p00 * (1 - wx) * (1 - wy) + p10 * wx * (1 - wy)
           + p01 * (1 - wx) * wy + p11 * wx * wy)
    return out, (i, j, fx, fy, p00, p10, p01, p11, g0, g1)


def _bilinear_backward(plane_grad: np.ndarray, d_feat: np.ndarray, cache):
    """Scatter feature gradients into the plane; return positional grads."""
    i, j, fx, fy, p00, p10, p01, p11, g0, g1 = cache
    wx = fx[:, None]
    wy = fy[:, None]
    np.add.at(plane_grad, (i, j), d_feat * (1 - wx) * (1 - wy))
    np.add.at(plane_grad, (i + 1, j), d_feat * wx * (1 - wy))
    np.add.at(plane_grad, (i, j + 1), d_feat * (1 - wx) * wy)
    np.add.at(plane_grad, (i + 1, j + 1), d_feat * wx * wy)
    # d out / d x = (1-fy)(p10-p00) + fy(p11-p01), then chain x = u * (g0-1).
    d_x = ((1 - wy) * (p10 - p00) + wy * (p11 - p01)) * d_feat
    d_y = ((1 - wx) * (p01 - p00) + wx * (p11 - p10)) * d_feat
    return d_x.sum(axis=1) * (g0 - 1), d_y.sum(axis=1) * (g1 - 1)


def sample_field(field: DeformationField, canonical_center, t: float) -> Deformation:
    """Deformation of one splat; queries always use the canonical center."""
    out, _ = field.sample_batch(np.asarray(canonical_center, dtype=np.float64)[None, :], t)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite deformation")
    return Deformation(dmu=out[0, 0:2].copy(), dscale=out[0, 2:4].copy(), drot=float(out[0, 4]))


def apply_deformation(splat: Splat, d: Deformation) -> Splat:
    """Additive update of center/scale/rotation; opacity and color are
    time-invariant. Scales re-clamp to the S_MIN floor."""
    return Splat(
        center=splat.center + d.dmu,
        scale=np.maximum(splat.scale + d.dscale, S_MIN),
        rotation=splat.rotation + d.drot,
        opacity=splat.opacity,
        color=splat.color.copy(),
    )


def apply_deformation_batch(splat_arr: np.ndarray, defs: np.ndarray) -> np.ndarray:
    eff = splat_arr.copy()
    eff[:, 0:2] += defs[:, 0:2]
    eff[:, 2:4] = np.maximum(eff[:, 2:4] + defs[:, 2:4], S_MIN)
    eff[:, 4] += defs[:, 4]
    return eff


def _tv_pair_count(shape: FieldShape) -> int:
    return sum(f * ((g0 - 1) * g1 + g0 * (g1 - 1)) for g0, g1, f in shape.plane_shapes())


def tv_loss(field: DeformationField) -> float:
    """Mean squared adjacent-cell difference over all planes, axes, features."""
    total = 0.0
    for plane in (field.plane_xy, field.plane_xt, field.plane_yt):
        d0 = np.diff(plane, axis=0)
        d1 = np.diff(plane, axis=1)
        total += float(np.sum(d0 * d0) + np.sum(d1 * d1))
    return total / _tv_pair_count(field.shape)


def tv_backward(field: DeformationField) -> np.ndarray:
    """Gradient of :func:`tv_loss` w.r.t. the field vector (grids only)."""
    grad = field.layout.zeros()
    scale = 2.0 / _tv_pair_count(field.shape)
    for name in ("plane_xy", "plane_xt", "plane_yt"):
        plane = getattr(field, name)
        g = field.layout.view(grad, name)
        d0 = np.diff(plane, axis=0) * scale
        d1 = np.diff(plane, axis=1) * scale
        g[1:] += d0
        g[:-1] -= d0
        g[:, 1:] += d1
        g[:, :-1] -= d1
    return grad


def render_at_time(scene: Scene, field: DeformationField, camera: Camera, t: float,
                   n_tiles=DEFAULT_TILES, threads=None) -> np.ndarray:
    """Render the scene with every splat deformed to time t."""
    arr = scene_to_array(scene)
    return render_at_time_arrays(arr, scene.background, field, camera, t, n_tiles, threads)


def render_at_time_arrays(splat_arr, background, field, camera, t,
                          n_tiles=DEFAULT_TILES, threads=None) -> np.ndarray:
    defs, _ = field.sample_batch(splat_arr[:, 0:2], t)
    eff = apply_deformation_batch(splat_arr, defs)
    return render_arrays(eff, background, camera, n_tiles, threads)


def render_at_time_backward(splat_arr, field, camera, t, upstream,
                            n_tiles=DEFAULT_TILES, threads=None):
    """Gradients of sum(upstream * image) through deformation and rendering.

    Returns ``(field_grad_vec, splat_grad, background_grad)``. The splat
    gradient includes the field's dependence on the canonical centers, so
    it is valid whether or not the splats are frozen.
    """
    splat_arr = np.asarray(splat_arr, dtype=np.float64)
    defs, cache = field.sample_batch(splat_arr[:, 0:2], t)
    eff = apply_deformation_batch(splat_arr, defs)
    g_eff, g_bg = render_backward_arrays(eff, camera, upstream, n_tiles, threads)

    # Scale clamp: gradient passes only where the deformed scale is free.
    free = (splat_arr[:, 2:4] + defs[:, 2:4]) > S_MIN
    d_def = np.empty_like(defs)
    d_def[:, 0:2] = g_eff[:, 0:2]
    d_def[:, 2:4] = g_eff[:, 2:4] * free
    d_def[:, 4] = g_eff[:, 4]

    field_grad, d_query = field.sample_backward(d_def, cache)
    g_splat = g_eff.copy()
    g_splat[:, 2:4] *= free
    g_splat[:, 0:2] += d_query
    return field_grad, g_splat, g_bg
