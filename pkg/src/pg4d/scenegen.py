"""Synthetic multi-camera benchmark scenes with controllable motion range.

Foreground splat groups ride a trajectory from one of three complexity
tiers (short linear, medium curved, long multi-segment chains); an
optional in-place oscillation modulates their scale and rotation.
Background splats and the canvas stay fixed. Every camera renders every
timestep, which gives exact ground truth for free.

Dataset directory layout (bit-exact contract):

    dataset/
      spec.json     full SceneSpec echo
      cameras.json  [{center, rotation, zoom, width, height}, ...]
      times.json    normalized timestamps
      gt_scene.json ground-truth splats at t=0 (test convenience)
      cam_<k>/frame_<t:05d>.png
"""

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import rng as rng_mod
from .pngio import read_png, write_png
from .rasterizer import render_arrays
from .splats import Camera, Scene, Splat, scene_to_array

TIERS = ("short_linear", "medium_curved", "long_multisegment")

# Target path length as a fraction of the scene diagonal, per tier.
_TIER_SPAN = {"short_linear": 0.10, "medium_curved": 0.28, "long_multisegment": 0.85}

_SIZE_CLASSES = {
    "small": (0.012, 0.022),
    "medium": (0.025, 0.045),
    "large": (0.05, 0.09),
}


class DatasetError(Exception):
    """Malformed dataset directory or spec."""


@dataclass
class Trajectory:
    """Chain of quadratic Bezier segments, parametrized uniformly on [0, 1]."""

    tier: str
    segments: list  # [(p0, p1, p2), ...] with C0 continuity

    def position(self, t: float) -> np.ndarray:
        t = min(max(float(t), 0.0), 1.0)
        n = len(self.segments)
        k = min(int(t * n), n - 1)
        u = t * n - k
        p0, p1, p2 = self.segments[k]
        return (1 - u) ** 2 * p0 + 2 * u * (1 - u) * p1 + u ** 2 * p2

    def arc_length(self, samples: int = 1000) -> float:
        ts = np.linspace(0.0, 1.0, samples)
        pts = np.array([self.position(t) for t in ts])
        return float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))


def _diag(bounds):
    return math.hypot(bounds[2] - bounds[0], bounds[3] - bounds[1])


def _inset(bounds, frac=0.12):
    w = bounds[2] - bounds[0]
    h = bounds[3] - bounds[1]
    return (bounds[0] + frac * w, bounds[1] + frac * h,
            bounds[2] - frac * w, bounds[3] - frac * h)


def _clamp_point(p, box):
    return np.array([min(max(p[0], box[0]), box[2]), min(max(p[1], box[1]), box[3])])


def make_trajectory(tier: str, seed: int, bounds) -> Trajectory:
    """Deterministic trajectory of the given tier, kept inside ``bounds``."""
    if tier not in TIERS:
        raise ValueError(f"unknown trajectory tier {tier!r}")
    if bounds[2] <= bounds[0] or bounds[3] <= bounds[1]:
        raise ValueError(f"degenerate bounds {bounds}")
    rng = rng_mod.stream(seed, "scenegen")
    diag = _diag(bounds)
    box = _inset(bounds)
    span = _TIER_SPAN[tier] * diag

    if tier == "short_linear":
        p0 = np.array([rng.uniform(box[0], box[2]), rng.uniform(box[1], box[3])])
        ang = rng.uniform(0, 2 * math.pi)
        p2 = _clamp_point(p0 + span * np.array([math.cos(ang), math.sin(ang)]), box)
        return Trajectory(tier, [(p0, 0.5 * (p0 + p2), p2)])

    if tier == "medium_curved":
        for _ in range(100):
            p0 = np.array([rng.uniform(box[0], box[2]), rng.uniform(box[1], box[3])])
            ang = rng.uniform(0, 2 * math.pi)
            p2 = _clamp_point(p0 + span * np.array([math.cos(ang), math.sin(ang)]), box)
            if np.linalg.norm(p2 - p0) >= 0.6 * span:
                break
        mid = 0.5 * (p0 + p2)
        normal = np.array([-(p2 - p0)[1], (p2 - p0)[0]])
        norm = np.linalg.norm(normal)
        normal = normal / norm if norm > 0 else np.zeros(2)
        p1 = _clamp_point(mid + rng.uniform(0.15, 0.3) * span * normal, box)
        return Trajectory(tier, [(p0, p1, p2)])

    # long_multisegment: >= 3 segments whose chord sum already clears the
    # 50%-of-diagonal floor (arc length >= chord length per segment).
    n_seg = 3
    step = span / n_seg
    for _ in range(200):
        pts = [np.array([rng.uniform(box[0], box[2]), rng.uniform(box[1], box[3])])]
        ang = rng.uniform(0, 2 * math.pi)
        for _ in range(n_seg):
            ang += rng.uniform(-1.0, 1.0)
            cand = _clamp_point(pts[-1] + step * np.array([math.cos(ang), math.sin(ang)]), box)
            pts.append(cand)
        chord = sum(np.linalg.norm(pts[i + 1] - pts[i]) for i in range(n_seg))
        if chord >= 0.55 * diag:
            break
    else:
        # deterministic fallback: sweep the inset box corners
        pts = [np.array([box[0], box[1]]), np.array([box[2], box[1]]),
               np.array([box[2], box[3]]), np.array([box[0], box[3]])]
    segments = []
    for i in range(len(pts) - 1):
        mid = 0.5 * (pts[i] + pts[i + 1])
        jitter = rng.uniform(-0.06, 0.06, 2) * diag
        segments.append((pts[i], _clamp_point(mid + jitter, box), pts[i + 1]))
    return Trajectory(tier, segments)


@dataclass
class GroupSpec:
    """One rigidly moving cluster of foreground splats."""

    n_splats: int = 8
    base_color: tuple = (0.9, 0.35, 0.2)
    size_class: str = "medium"
    tier: str | None = None            # None: the group does not travel
    osc_amplitude: float = 0.0         # in-place scale/rotation oscillation
    osc_frequency: float = 0.0         # cycles over the full clip
    spread: float = 0.05               # cluster radius, world units


@dataclass
class SceneSpec:
    name: str = "scene"
    seed: int = 0
    bounds: tuple = (0.0, 0.0, 1.0, 1.0)
    groups: list = field(default_factory=list)
    n_background: int = 24
    n_cameras: int = 8
    cam_ring_radius: float = 0.06
    cam_rotation_jitter: float = 0.25
    zoom_range: tuple = (52.0, 64.0)
    n_timesteps: int = 30
    resolution: tuple = (64, 64)
    noise_std: float = 0.0
    background_color: tuple = (0.05, 0.06, 0.08)

    def validate(self):
        if self.n_timesteps < 2:
            raise DatasetError("n_timesteps must be >= 2")
        if self.n_cameras < 1:
            raise DatasetError("need at least one camera")
        if self.n_background < 0 or any(g.n_splats < 1 for g in self.groups):
            raise DatasetError("splat counts must be positive")
        if self.n_background + sum(g.n_splats for g in self.groups) < 1:
            raise DatasetError("scene would be empty")
        for g in self.groups:
            if g.tier is not None and g.tier not in TIERS:
                raise DatasetError(f"unknown tier {g.tier!r} in group")
            if not 0.0 <= g.osc_amplitude < 1.0:
                raise DatasetError("osc_amplitude must be in [0, 1)")
        if self.bounds[2] <= self.bounds[0] or self.bounds[3] <= self.bounds[1]:
            raise DatasetError(f"degenerate bounds {self.bounds}")

    def to_dict(self):
        d = asdict(self)
        d["groups"] = [asdict(g) for g in self.groups]
        return d

    @classmethod
    def from_dict(cls, d):
        try:
            groups = [GroupSpec(**{**g, "base_color": tuple(g["base_color"])})
                      for g in d.get("groups", [])]
            spec = cls(**{**d,
                          "groups": groups,
                          "bounds": tuple(d.get("bounds", (0, 0, 1, 1))),
                          "zoom_range": tuple(d.get("zoom_range", (52.0, 64.0))),
                          "resolution": tuple(d.get("resolution", (64, 64))),
                          "background_color": tuple(d.get("background_color", (0.05, 0.06, 0.08)))})
        except (TypeError, KeyError) as e:
            raise DatasetError(f"invalid scene spec: {e}") from e
        spec.validate()
        return spec

    @property
    def diagonal(self):
        return _diag(self.bounds)


@dataclass
class FrameSet:
    """Complete camera x timestep grid of ground-truth frames."""

    images: list          # images[camera][timestep] -> (H, W, 3) float64
    cameras: list         # list[Camera]
    times: np.ndarray     # strictly increasing, in [0, 1]
    spec: SceneSpec | None = None
    quantized: bool = False

    def validate(self):
        if len(self.images) != len(self.cameras):
            raise DatasetError("camera count does not match image grid")
        for k, seq in enumerate(self.images):
            if len(seq) != len(self.times):
                raise DatasetError(f"camera {k} has {len(seq)} frames, expected {len(self.times)}")
        t = np.asarray(self.times)
        if t.min() < 0.0 or t.max() > 1.0 or np.any(np.diff(t) <= 0):
            raise DatasetError("timestamps must be strictly increasing within [0, 1]")

    @property
    def n_cameras(self):
        return len(self.cameras)

    @property
    def n_timesteps(self):
        return len(self.times)


def _build_cameras(spec: SceneSpec):
    cx = 0.5 * (spec.bounds[0] + spec.bounds[2])
    cy = 0.5 * (spec.bounds[1] + spec.bounds[3])
    cams = []
    for k in range(spec.n_cameras):
        ang = 2.0 * math.pi * k / spec.n_cameras
        frac = k / max(1, spec.n_cameras - 1)
        zoom = spec.zoom_range[0] + frac * (spec.zoom_range[1] - spec.zoom_range[0])
        cams.append(Camera(
            center=np.array([cx + spec.cam_ring_radius * math.cos(ang),
                             cy + spec.cam_ring_radius * math.sin(ang)]),
            rotation=spec.cam_rotation_jitter * math.sin(ang),
            zoom=zoom,
            resolution=spec.resolution,
        ))
    return cams


def _build_ground_truth(spec: SceneSpec):
    """Canonical scene at t=0 plus per-group trajectories and splat slices."""
    rng = rng_mod.stream(spec.seed, "scene_init")
    splats = []
    group_slices = []
    trajectories = []
    for gi, g in enumerate(spec.groups):
        traj = make_trajectory(g.tier, spec.seed * 1000 + gi, spec.bounds) if g.tier else None
        trajectories.append(traj)
        origin = (traj.position(0.0) if traj is not None
                  else np.array([rng.uniform(spec.bounds[0] + 0.2, spec.bounds[2] - 0.2),
                                 rng.uniform(spec.bounds[1] + 0.2, spec.bounds[3] - 0.2)]))
        lo, hi = _SIZE_CLASSES[g.size_class]
        start = len(splats)
        for _ in range(g.n_splats):
            splats.append(Splat(
                center=origin + rng.normal(0.0, g.spread, 2),
                scale=rng.uniform(lo, hi, 2),
                rotation=rng.uniform(-math.pi, math.pi),
                opacity=rng.uniform(0.55, 0.9),
                color=np.clip(np.asarray(g.base_color) + rng.uniform(-0.12, 0.12, 3), 0.0, 1.0),
            ))
        group_slices.append(slice(start, len(splats)))
    for _ in range(spec.n_background):
        splats.append(Splat(
            center=np.array([rng.uniform(spec.bounds[0], spec.bounds[2]),
                             rng.uniform(spec.bounds[1], spec.bounds[3])]),
            scale=rng.uniform(0.035, 0.12, 2),
            rotation=rng.uniform(-math.pi, math.pi),
            opacity=rng.uniform(0.25, 0.6),
            color=rng.uniform(0.08, 0.45, 3),
        ))
    scene = Scene(splats=splats, background=np.asarray(spec.background_color, dtype=np.float64))
    return scene, trajectories, group_slices


def scene_arrays_at_time(spec: SceneSpec, gt_arr, trajectories, group_slices, t: float):
    """Splat array of the ground-truth scene advanced to normalized time t."""
    arr = gt_arr.copy()
    for g, traj, sl in zip(spec.groups, trajectories, group_slices):
        if traj is not None:
            shift = traj.position(t) - traj.position(0.0)
            arr[sl, 0:2] += shift
        if g.osc_amplitude > 0.0:
            phase = 2.0 * math.pi * g.osc_frequency * t
            arr[sl, 2:4] *= 1.0 + g.osc_amplitude * math.sin(phase)
            arr[sl, 4] += g.osc_amplitude * math.sin(phase + 1.0)
    return arr


def synth_dataset(spec: SceneSpec, out_dir=None):
    """Build ground truth and render the full camera x timestep grid.

    Returns ``(FrameSet, ground-truth Scene at t=0)`` with exact float
    frames; when ``out_dir`` is given the 8-bit PNG dataset directory is
    written as well.
    """
    spec.validate()
    scene, trajectories, group_slices = _build_ground_truth(spec)
    cams = _build_cameras(spec)
    times = np.linspace(0.0, 1.0, spec.n_timesteps)
    gt_arr = scene_to_array(scene)
    noise_rng = rng_mod.stream(spec.seed, "fixtures") if spec.noise_std > 0 else None

    images = [[] for _ in cams]
    for j, t in enumerate(times):
        arr_t = scene_arrays_at_time(spec, gt_arr, trajectories, group_slices, float(t))
        for k, cam in enumerate(cams):
            img = render_arrays(arr_t, scene.background, cam)
            if noise_rng is not None:
                img = img + noise_rng.normal(0.0, spec.noise_std, img.shape)
            images[k].append(img)
    frameset = FrameSet(images=images, cameras=cams, times=times, spec=spec, quantized=False)
    frameset.validate()
    if out_dir is not None:
        write_dataset(out_dir, frameset, scene)
    return frameset, scene


def _scene_to_json(scene: Scene):
    return {
        "background": list(scene.background),
        "splats": [{
            "center": list(sp.center), "scale": list(sp.scale),
            "rotation": sp.rotation, "opacity": sp.opacity, "color": list(sp.color),
        } for sp in scene.splats],
    }


def _scene_from_json(d):
    return Scene(
        splats=[Splat(center=np.array(s["center"]), scale=np.array(s["scale"]),
                      rotation=s["rotation"], opacity=s["opacity"], color=np.array(s["color"]))
                for s in d["splats"]],
        background=np.array(d["background"]),
    )


def _dump_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=1, allow_nan=False), encoding="utf-8")


def write_dataset(out_dir, frameset: FrameSet, gt_scene: Scene):
    out = Path(out_dir)
    if not out.parent.exists():
        raise OSError(f"parent directory does not exist: {out.parent}")
    try:
        out.mkdir(exist_ok=True)
        _dump_json(out / "spec.json", frameset.spec.to_dict() if frameset.spec else {})
        _dump_json(out / "cameras.json", [{
            "center": list(c.center), "rotation": c.rotation, "zoom": c.zoom,
            "width": c.resolution[0], "height": c.resolution[1],
        } for c in frameset.cameras])
        _dump_json(out / "times.json", [float(t) for t in frameset.times])
        _dump_json(out / "gt_scene.json", _scene_to_json(gt_scene))
        for k, seq in enumerate(frameset.images):
            cam_dir = out / f"cam_{k}"
            cam_dir.mkdir(exist_ok=True)
            for j, img in enumerate(seq):
                write_png(cam_dir / f"frame_{j:05d}.png", img)
    except OSError as e:
        raise OSError(f"failed writing dataset to {out}: {e}") from e


def load_dataset(dataset_dir):
    """Read a dataset directory; returns ``(FrameSet, gt Scene)``.

    Frames come back 8-bit quantized (``FrameSet.quantized`` is True).
    """
    root = Path(dataset_dir)
    if not root.is_dir():
        raise DatasetError(f"dataset directory not found: {root}")

    def load_json(name):
        path = root / name
        try:
            return json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError as e:
            raise DatasetError(f"missing dataset file: {path}") from e
        except json.JSONDecodeError as e:
            raise DatasetError(f"corrupt JSON in {path}: {e}") from e

    spec = SceneSpec.from_dict(load_json("spec.json"))
    cam_rows = load_json("cameras.json")
    times = np.asarray(load_json("times.json"), dtype=np.float64)
    gt_scene = _scene_from_json(load_json("gt_scene.json"))
    try:
        cameras = [Camera(center=np.array(c["center"]), rotation=c["rotation"],
                          zoom=c["zoom"], resolution=(c["width"], c["height"]))
                   for c in cam_rows]
    except (KeyError, TypeError) as e:
        raise DatasetError(f"corrupt camera table in {root / 'cameras.json'}: {e}") from e
    images = []
    for k in range(len(cameras)):
        seq = []
        for j in range(len(times)):
            path = root / f"cam_{k}" / f"frame_{j:05d}.png"
            if not path.exists():
                raise DatasetError(f"missing frame: {path}")
            seq.append(read_png(path))
        images.append(seq)
    frameset = FrameSet(images=images, cameras=cameras, times=times, spec=spec, quantized=True)
    frameset.validate()
    return frameset, gt_scene


def standard_suite():
    """The six fixed acceptance scenes, S1 (static) through S6."""
    fg = dict(n_splats=8, base_color=(0.9, 0.35, 0.2), size_class="medium")
    osc = dict(osc_amplitude=0.35, osc_frequency=2.0)
    return [
        SceneSpec(name="S1", seed=101, groups=[GroupSpec(**fg)]),
        SceneSpec(name="S2", seed=102, groups=[GroupSpec(**fg, **osc)]),
        SceneSpec(name="S3", seed=103, groups=[GroupSpec(**fg, tier="short_linear")]),
        SceneSpec(name="S4", seed=104, groups=[GroupSpec(**fg, tier="medium_curved")]),
        SceneSpec(name="S5", seed=105, groups=[GroupSpec(**fg, tier="long_multisegment")]),
        SceneSpec(name="S6", seed=106, groups=[GroupSpec(**fg, tier="long_multisegment", **osc)]),
    ]
