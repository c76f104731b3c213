"""Generative factors of one sprite and their independent sampling."""
from dataclasses import dataclass

import numpy as np

from src.models.data_model import FACTOR_NAMES, Shape
from src.spritegen.config import FactorRanges
from src.spritegen.errors import FactorRangeError

SHAPE_CODES = [s.value for s in Shape]


@dataclass(frozen=True)
class FactorSpec:
    shape: str
    scale: float
    orientation: float
    x_pos: float
    y_pos: float

    def value(self, factor: str):
        if factor not in FACTOR_NAMES:
            raise KeyError(f"Unknown factor '{factor}'")
        return getattr(self, factor)

    def to_row(self) -> np.ndarray:
        """Numeric encoding (shape as its code index) used for dataset storage."""
        return np.array([SHAPE_CODES.index(self.shape), self.scale, self.orientation, self.x_pos, self.y_pos])

    @classmethod
    def from_row(cls, row: np.ndarray) -> "FactorSpec":
        return cls(SHAPE_CODES[int(row[0])], float(row[1]), float(row[2]), float(row[3]), float(row[4]))


def check_factors(factors: FactorSpec, ranges: FactorRanges) -> None:
    if factors.shape not in ranges.shape:
        raise FactorRangeError(f"shape '{factors.shape}' not in {ranges.shape}")
    lo, hi = ranges.orientation
    if not lo <= factors.orientation < hi:
        raise FactorRangeError(f"orientation {factors.orientation} outside [{lo}, {hi})")
    for name in ("scale", "x_pos", "y_pos"):
        lo, hi = getattr(ranges, name)
        value = getattr(factors, name)
        if not lo <= value <= hi:
            raise FactorRangeError(f"{name} {value} outside [{lo}, {hi}]")


def sample_factors(rng: np.random.Generator, ranges: FactorRanges) -> FactorSpec:
    """Draw every factor independently and uniformly."""
    return FactorSpec(
        shape=ranges.shape[int(rng.integers(len(ranges.shape)))],
        scale=float(rng.uniform(*ranges.scale)),
        orientation=float(rng.uniform(*ranges.orientation)),
        x_pos=float(rng.uniform(*ranges.x_pos)),
        y_pos=float(rng.uniform(*ranges.y_pos)),
    )
