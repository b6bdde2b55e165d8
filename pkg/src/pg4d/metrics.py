"""Image fidelity metrics (L1, PSNR, SSIM) and per-timestep aggregation.

PSNR uses a fixed dynamic range of 1.0 and returns +inf when the MSE is
exactly zero; report serialization turns that sentinel into ``null`` plus
a ``psnr_infinite`` flag (JSON carries no Inf). SSIM is the classic
windowed form: 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03,
weighted moments, mean over valid window positions, computed on luma
(0.299 R + 0.587 G + 0.114 B).
"""

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def l1(img_a, img_b) -> float:
    """Mean absolute per-channel difference."""
    a, b = _check_pair(img_a, img_b)
    return float(np.mean(np.abs(a - b)))


def psnr(img_a, img_b) -> float:
    """10 * log10(1 / MSE); +inf sentinel when images are identical."""
    a, b = _check_pair(img_a, img_b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_kernel():
    half = (SSIM_WINDOW - 1) / 2.0
    x = np.arange(SSIM_WINDOW) - half
    k = np.exp(-(x * x) / (2.0 * SSIM_SIGMA * SSIM_SIGMA))
    return k / k.sum()


_KERNEL = _gaussian_kernel()


def _filter_valid(img: np.ndarray) -> np.ndarray:
    """Separable Gaussian filtering, valid positions only."""
    rows = sliding_window_view(img, SSIM_WINDOW, axis=1) @ _KERNEL
    return sliding_window_view(rows, SSIM_WINDOW, axis=0) @ _KERNEL


def luma(img: np.ndarray) -> np.ndarray:
    return img[..., 0] * 0.299 + img[..., 1] * 0.587 + img[..., 2] * 0.114


def ssim(img_a, img_b) -> float:
    """Windowed structural similarity on luma, dynamic range 1.0."""
    a, b = _check_pair(img_a, img_b)
    if a.ndim == 3:
        a, b = luma(a), luma(b)
    h, w = a.shape
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ValueError(f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}")
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2
    mu_a = _filter_valid(a)
    mu_b = _filter_valid(b)
    var_a = _filter_valid(a * a) - mu_a * mu_a
    var_b = _filter_valid(b * b) - mu_b * mu_b
    cov = _filter_valid(a * b) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


@dataclass
class MetricReport:
    """Per-(camera, timestep) metric rows plus aggregates.

    ``per_quartile`` groups timesteps into four contiguous index blocks;
    the last entry is the late-motion slice used by the ablation check.
    LPIPS is intentionally absent from the schema.
    """

    rows: list
    n_cameras: int
    n_timesteps: int
    config: dict = field(default_factory=dict)

    @staticmethod
    def _agg(rows):
        if not rows:
            return {"l1": None, "psnr_db": None, "ssim": None}
        return {
            "l1": float(np.mean([r["l1"] for r in rows])),
            "psnr_db": float(np.mean([r["psnr_db"] for r in rows])),
            "ssim": float(np.mean([r["ssim"] for r in rows])),
        }

    @property
    def mean(self):
        return self._agg(self.rows)

    @property
    def per_timestep(self):
        return [self._agg([r for r in self.rows if r["timestep"] == t])
                for t in range(self.n_timesteps)]

    @property
    def per_quartile(self):
        out = []
        for q in range(4):
            sel = [r for r in self.rows if min(3, r["timestep"] * 4 // self.n_timesteps) == q]
            out.append(self._agg(sel))
        return out

    @property
    def last_quartile_psnr(self):
        return self.per_quartile[3]["psnr_db"]

    def to_dict(self) -> dict:
        def clean(value):
            if isinstance(value, float) and math.isinf(value):
                return None
            return value

        def clean_row(row):
            out = {k: clean(v) for k, v in row.items()}
            out["psnr_infinite"] = isinstance(row.get("psnr_db"), float) and math.isinf(row["psnr_db"])
            return out

        return {
            "config": self.config,
            "n_cameras": self.n_cameras,
            "n_timesteps": self.n_timesteps,
            "rows": [clean_row(r) for r in self.rows],
            "mean": clean_row(self.mean),
            "per_timestep": [clean_row(r) for r in self.per_timestep],
            "per_quartile": [clean_row(r) for r in self.per_quartile],
        }


def evaluate(render_fn, frameset, quantize=None, cameras=None, config=None) -> MetricReport:
    """Render every (camera, timestep) pair and score it against the frames.

    ``render_fn(camera_index, time_index)`` must return an (H, W, 3) image;
    it is clamped to [0, 1] here. When ``quantize`` is true (default: match
    the frameset's own quantization) renders are additionally snapped to
    the 8-bit grid so stored datasets are compared at matched precision.
    ``cameras`` optionally restricts evaluation to a camera subset
    (held-out-view protocols); rows are still labeled with original
    indices.
    """
    from .pngio import quantize as quantize_img

    if quantize is None:
        quantize = getattr(frameset, "quantized", False)
    cam_indices = list(range(len(frameset.cameras))) if cameras is None else list(cameras)
    rows = []
    for k in cam_indices:
        for t in range(len(frameset.times)):
            try:
                img = np.clip(render_fn(k, t), 0.0, 1.0)
                if quantize:
                    img = quantize_img(img) / 255.0
                ref = frameset.images[k][t]
                rows.append({
                    "camera": k, "timestep": t,
                    "l1": l1(img, ref), "psnr_db": psnr(img, ref), "ssim": ssim(img, ref),
                })
            except Exception as e:
                raise RuntimeError(f"evaluation failed at camera={k}, timestep={t}: {e}") from e
    return MetricReport(rows=rows, n_cameras=len(cam_indices),
                        n_timesteps=len(frameset.times), config=config or {})
