"""Deterministic synthetic equirectangular rasters used by tests and the selftest."""
from __future__ import annotations

from importlib import resources

import numpy as np

from .imageio import read_image
from .projection import ep_pixel_lonlat, lonlat_to_directions
from .tensor import DTYPE

SMOOTH_FIXTURE = "smooth_ep_256.png"
PIPELINE_FIXTURE = "pipeline_64x32.png"


def smooth_sphere_image(heq: int, channels: int = 3) -> np.ndarray:
    """Band-limited image defined on the sphere, so it is smooth across poles and seam."""
    lon, lat = ep_pixel_lonlat(heq)
    d = lonlat_to_directions(lon, lat)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    out = []
    for c in range(channels):
        ph = 0.7 * c
        f = (
            0.5
            + 0.2 * np.sin(2 * x + ph) * np.cos(3 * y - ph)
            + 0.15 * z * np.cos(2 * x + 2 * y)
            + 0.1 * np.sin(3 * z + y + ph)
        )
        out.append(f)
    return np.clip(np.stack(out), 0, 1).astype(DTYPE)


def great_circle_stripe(heq: int, half_width: float) -> np.ndarray:
    """Single-channel image that is bright within ``half_width`` radians of the y=0 great circle.

    That circle is the meridian pair lon = 0 / lon = pi, running through both poles.
    """
    lon, lat = ep_pixel_lonlat(heq)
    d = lonlat_to_directions(lon, lat)
    dist = np.arcsin(np.abs(d[..., 1]))
    return (dist <= half_width).astype(DTYPE)[None]


def textured_image(heq: int, seed: int = 0, channels: int = 3) -> np.ndarray:
    """Seeded mixture of smooth structure and blobs, for pipeline runs."""
    rng = np.random.default_rng(seed)
    base = smooth_sphere_image(heq, channels)
    lon, lat = ep_pixel_lonlat(heq)
    d = lonlat_to_directions(lon, lat)
    for _ in range(4):
        centre = rng.normal(size=3)
        centre /= np.linalg.norm(centre)
        width = rng.uniform(0.2, 0.5)
        blob = np.exp(-(1 - d @ centre) / (width**2 / 2))
        base = base + rng.uniform(-0.4, 0.4, size=(channels, 1, 1)) * blob
    base = base + rng.uniform(-0.05, 0.05, size=base.shape)
    return np.clip(base, 0, 1).astype(DTYPE)


def load_bundled(name: str) -> np.ndarray:
    """Read one of the PNG fixtures shipped in ``omnisal/data``."""
    with resources.as_file(resources.files("omnisal") / "data" / name) as path:
        return read_image(path, channels=3)


def regenerate_bundled(directory) -> list[str]:
    """Rewrite the shipped fixtures from their generators."""
    from pathlib import Path

    from .imageio import write_image

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_image(directory / SMOOTH_FIXTURE, smooth_sphere_image(256))
    write_image(directory / PIPELINE_FIXTURE, textured_image(32, seed=42))
    return [SMOOTH_FIXTURE, PIPELINE_FIXTURE]
