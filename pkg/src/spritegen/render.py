"""
Hard-edged rasterization of one sprite.

Pixels are tested at their centres. Image rows run top to bottom, so a sprite
with y_pos above 0.5 sits in the upper half of the frame.
"""
from typing import Optional, Tuple

import numpy as np

from src.spritegen.config import Geometry, SpriteConfig, load_sprite_config
from src.spritegen.errors import FactorRangeError
from src.spritegen.factors import FactorSpec, check_factors


def _sprite_coordinates(factors: FactorSpec, size: int) -> Tuple[np.ndarray, np.ndarray]:
    """Pixel centres in the sprite's rotated frame, in pixels; v points up."""
    centres = np.arange(size) + 0.5
    cols, rows = np.meshgrid(centres, centres)
    dx = cols - factors.x_pos * size
    dy = (1.0 - factors.y_pos) * size - rows
    cos, sin = np.cos(factors.orientation), np.sin(factors.orientation)
    u = cos * dx + sin * dy
    v = -sin * dx + cos * dy
    return u, v


def _shape_mask(shape: str, u: np.ndarray, v: np.ndarray, side: float, geometry: Geometry) -> np.ndarray:
    half = side / 2.0
    if shape == "square":
        return (np.abs(u) <= half) & (np.abs(v) <= half)
    if shape == "ellipse":
        minor = half * geometry.ellipse_aspect
        return (u / half) ** 2 + (v / minor) ** 2 <= 1.0
    if shape == "heart":
        # implicit heart (x^2 + y^2 - 1)^3 - x^2 y^3 <= 0, nudged so its bounding box is centred
        unit = geometry.heart_extent / side
        hx = u * unit
        hy = v * unit + 0.1
        return (hx ** 2 + hy ** 2 - 1.0) ** 3 - hx ** 2 * hy ** 3 <= 0.0
    raise FactorRangeError(f"Unknown shape '{shape}'")


def render_sprite(factors: FactorSpec, size: int,
                  config: Optional[SpriteConfig] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Rasterize one sprite.

    Returns (image, mask): image is 1.0 exactly on the mask and 0.0 elsewhere.
    A sprite too small to cover any pixel centre lights the pixel under its centre.
    """
    config = config or load_sprite_config()
    if size not in config.geometry.allowed_sizes:
        raise FactorRangeError(f"image size {size} not in {config.geometry.allowed_sizes}")
    check_factors(factors, config.factor_ranges)

    side = factors.scale * config.geometry.base_side_fraction * size
    u, v = _sprite_coordinates(factors, size)
    mask = _shape_mask(factors.shape, u, v, side, config.geometry)
    if not mask.any():
        row = min(int((1.0 - factors.y_pos) * size), size - 1)
        col = min(int(factors.x_pos * size), size - 1)
        mask[row, col] = True
    return mask.astype(np.float64), mask
