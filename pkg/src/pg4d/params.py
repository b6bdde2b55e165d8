"""Flat parameter vector layout shared by the optimizer and checkpoints.

Order (fixed contract, round-trips bit-exactly through checkpoints):

    per splat: mu_x, mu_y, s_x, s_y, theta, alpha, c_r, c_g, c_b
    plane_xy (Gx, Gy, F), plane_xt (Gx, Gt, F), plane_yt (Gy, Gt, F)
    decoder: w1 (3F, H), b1 (H), w2 (H, H), b2 (H), w3 (H, 5), b3 (5)

all flattened in C order. Either block may be absent (stage 1 trains only
splats, stage 2 by default only the field).
"""

from dataclasses import dataclass

import numpy as np

from .splats import S_MIN, SPLAT_DIM

DEFORM_DIM = 5  # (dmu_x, dmu_y, ds_x, ds_y, dtheta)


@dataclass(frozen=True)
class FieldShape:
    grid_x: int = 16
    grid_y: int = 16
    grid_t: int = 16
    features: int = 8
    hidden: int = 64

    def plane_shapes(self):
        return (
            (self.grid_x, self.grid_y, self.features),
            (self.grid_x, self.grid_t, self.features),
            (self.grid_y, self.grid_t, self.features),
        )

    def decoder_shapes(self):
        f, h = 3 * self.features, self.hidden
        return ((f, h), (h,), (h, h), (h,), (h, DEFORM_DIM), (DEFORM_DIM,))


class ParamLayout:
    """Named slices into one flat float64 vector."""

    def __init__(self, n_splats: int = 0, field_shape: FieldShape | None = None):
        self.n_splats = int(n_splats)
        self.field_shape = field_shape
        self._slices = {}
        off = 0
        if self.n_splats:
            off = self._add("splats", off, (self.n_splats, SPLAT_DIM))
        if field_shape is not None:
            for name, shape in zip(("plane_xy", "plane_xt", "plane_yt"), field_shape.plane_shapes()):
                off = self._add(name, off, shape)
            for name, shape in zip(("w1", "b1", "w2", "b2", "w3", "b3"), field_shape.decoder_shapes()):
                off = self._add(name, off, shape)
        self.size = off

    def _add(self, name, off, shape):
        n = int(np.prod(shape))
        self._slices[name] = (slice(off, off + n), shape)
        return off + n

    def __contains__(self, name):
        return name in self._slices

    def names(self):
        return list(self._slices)

    def view(self, vec: np.ndarray, name: str) -> np.ndarray:
        """Reshaped view of one block (shares memory with ``vec``)."""
        sl, shape = self._slices[name]
        return vec[sl].reshape(shape)

    def zeros(self) -> np.ndarray:
        return np.zeros(self.size)

    def project_(self, vec: np.ndarray):
        """In-place feasibility projection after an optimizer step.

        Splat scales are clamped to >= S_MIN, opacity and color to [0, 1].
        Field parameters are unconstrained.
        """
        if self.n_splats:
            sp = self.view(vec, "splats")
            np.maximum(sp[:, 2:4], S_MIN, out=sp[:, 2:4])
            np.clip(sp[:, 5:9], 0.0, 1.0, out=sp[:, 5:9])

    def class_indices(self) -> dict:
        """Flat index arrays per reportable parameter class."""
        out = {}
        if self.n_splats:
            sl, _ = self._slices["splats"]
            base = np.arange(sl.start, sl.stop).reshape(self.n_splats, SPLAT_DIM)
            out["mu"] = base[:, 0:2].ravel()
            out["scale"] = base[:, 2:4].ravel()
            out["rotation"] = base[:, 4].ravel()
            out["opacity"] = base[:, 5].ravel()
            out["color"] = base[:, 6:9].ravel()
        if self.field_shape is not None:
            grids = [np.arange(*self._slices[n][0].indices(self.size))
                     for n in ("plane_xy", "plane_xt", "plane_yt")]
            out["grids"] = np.concatenate(grids)
            head = [np.arange(*self._slices[n][0].indices(self.size))
                    for n in ("w1", "b1", "w2", "b2", "w3", "b3")]
            out["head"] = np.concatenate(head)
        return out
