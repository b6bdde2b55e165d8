import numpy as np
import pytest

from pg4d.splats import Camera, Scene, Splat


def random_scene(rng, n_splats=4, alpha_range=(0.2, 0.9), color_range=(0.1, 0.9),
                 scale_range=(0.03, 0.15), bounds=1.0):
    splats = []
    for _ in range(n_splats):
        splats.append(Splat(
            center=rng.uniform(0.0, bounds, 2),
            scale=rng.uniform(*scale_range, 2),
            rotation=rng.uniform(-np.pi, np.pi),
            opacity=rng.uniform(*alpha_range),
            color=rng.uniform(*color_range, 3),
        ))
    return Scene(splats=splats, background=rng.uniform(0.0, 0.2, 3))


def random_camera(rng, resolution=(16, 16), bounds=1.0):
    return Camera(
        center=rng.uniform(0.3, 0.7, 2) * bounds,
        rotation=rng.uniform(-0.4, 0.4),
        zoom=rng.uniform(0.8, 1.4) * max(resolution) / bounds,
        resolution=resolution,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
