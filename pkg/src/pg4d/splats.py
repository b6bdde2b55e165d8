"""2D Gaussian splat primitives.

A splat is an anisotropic Gaussian blob on the plane: center mu, per-axis
scale s (std-dev along its own axes), rotation angle theta, opacity alpha
and an RGB color. Its covariance is R(theta) diag(s)^2 R(theta)^T.

All math is float64. Images are plain numpy arrays of shape (H, W, 3),
values unbounded until export time.
"""

from dataclasses import dataclass, field

import numpy as np

# Scale floor: optimizer projection clamps splat scales here, which keeps
# every covariance SPD (eigenvalues >= S_MIN**2).
S_MIN = 1e-4

# Hard Mahalanobis cutoff for rasterization; identical in forward and
# backward passes.
CUTOFF_SIGMA = 3.0

# Attribute order of one splat inside flat parameter vectors.
SPLAT_FIELDS = ("mu_x", "mu_y", "s_x", "s_y", "theta", "alpha", "c_r", "c_g", "c_b")
SPLAT_DIM = len(SPLAT_FIELDS)


@dataclass
class Splat:
    """One 2D Gaussian primitive in world coordinates."""

    center: np.ndarray  # (2,)
    scale: np.ndarray   # (2,), components >= S_MIN
    rotation: float     # radians
    opacity: float      # in [0, 1]
    color: np.ndarray   # (3,), channels in [0, 1]

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)
        self.scale = np.asarray(self.scale, dtype=np.float64)
        self.color = np.asarray(self.color, dtype=np.float64)
        self.rotation = float(self.rotation)
        self.opacity = float(self.opacity)


@dataclass
class Camera:
    """Planar similarity-transform camera.

    ``center`` is the world point seen at the image center, ``zoom`` is in
    pixels per world unit, ``rotation`` rotates the camera frame CCW. Pixel
    (row j, col i) samples the world at the pixel center (i+0.5, j+0.5).
    """

    center: np.ndarray      # (2,) world units
    rotation: float         # radians
    zoom: float             # pixels per world unit, > 0
    resolution: tuple       # (width, height)

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)
        self.rotation = float(self.rotation)
        self.zoom = float(self.zoom)
        w, h = self.resolution
        self.resolution = (int(w), int(h))

    def validate(self):
        w, h = self.resolution
        if not np.all(np.isfinite(self.center)) or not np.isfinite(self.rotation):
            raise ValueError("camera has non-finite parameters")
        if not np.isfinite(self.zoom) or self.zoom <= 0:
            raise ValueError(f"camera zoom must be positive, got {self.zoom}")
        if w < 1 or h < 1:
            raise ValueError(f"camera resolution must be >= 1x1, got {w}x{h}")


@dataclass
class Scene:
    """Ordered splat collection plus a constant background color."""

    splats: list
    background: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.background = np.asarray(self.background, dtype=np.float64)

    def __len__(self):
        return len(self.splats)


def build_covariance(scale, rotation) -> np.ndarray:
    """Covariance of a splat: R diag(s) diag(s) R^T.

    Eigenvalues are the squared scale components; eigenvectors are the
    rotated axes.
    """
    s = np.asarray(scale, dtype=np.float64)
    if s.shape != (2,):
        raise ValueError(f"scale must be a 2-vector, got shape {s.shape}")
    if not np.all(np.isfinite(s)) or not np.isfinite(rotation):
        raise ValueError("non-finite covariance inputs")
    if np.any(s < S_MIN):
        raise ValueError(f"scale components must be >= {S_MIN}, got {s}")
    c, sn = np.cos(rotation), np.sin(rotation)
    rot = np.array([[c, -sn], [sn, c]])
    return rot @ np.diag(s * s) @ rot.T


def splat_contribution(splat: Splat, x) -> np.ndarray:
    """Color contribution of one splat at world position x (no cutoff).

    Returns alpha * color * exp(-0.5 * (x-mu)^T Sigma^-1 (x-mu)).
    """
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite query position")
    cov = build_covariance(splat.scale, splat.rotation)
    d = x - splat.center
    q = d @ np.linalg.inv(cov) @ d
    return splat.opacity * splat.color * np.exp(-0.5 * q)


def scene_to_array(scene: Scene) -> np.ndarray:
    """Pack a scene into an (N, 9) array in SPLAT_FIELDS order."""
    if len(scene.splats) == 0:
        raise ValueError("scene must contain at least one splat")
    out = np.empty((len(scene.splats), SPLAT_DIM))
    for i, sp in enumerate(scene.splats):
        out[i, 0:2] = sp.center
        out[i, 2:4] = sp.scale
        out[i, 4] = sp.rotation
        out[i, 5] = sp.opacity
        out[i, 6:9] = sp.color
    return out


def array_to_scene(arr: np.ndarray, background) -> Scene:
    """Inverse of :func:`scene_to_array`."""
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != SPLAT_DIM:
        raise ValueError(f"expected (N, {SPLAT_DIM}) splat array, got {arr.shape}")
    splats = [
        Splat(center=row[0:2].copy(), scale=row[2:4].copy(), rotation=row[4],
              opacity=row[5], color=row[6:9].copy())
        for row in arr
    ]
    return Scene(splats=splats, background=np.asarray(background, dtype=np.float64))
