"""File output helpers: PGM images, CSV tables, JSON documents and hashes."""
import hashlib
import json
from pathlib import Path
from typing import Any, Dict, List, Union

import numpy as np
import pandas as pd
from filelock import FileLock

PathLike = Union[str, Path]


def write_pgm(path: PathLike, image: np.ndarray) -> Path:
    """Write a 2-D array in [0, 1] as a binary (P5) 8-bit grayscale PGM."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError(f"PGM needs a 2-D image, got shape {image.shape}")
    pixels = np.clip(np.round(np.clip(image, 0.0, 1.0) * 255.0), 0, 255).astype(np.uint8)
    height, width = pixels.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(f"P5\n{width} {height}\n255\n".encode("ascii") + pixels.tobytes())
    return path


def read_pgm(path: PathLike) -> np.ndarray:
    """Read a P5 PGM written by write_pgm back into [0, 1]."""
    blob = Path(path).read_bytes()
    parts = blob.split(b"\n", 3)
    if parts[0] != b"P5" or len(parts) < 4:
        raise ValueError(f"{path} is not a binary PGM")
    width, height = (int(v) for v in parts[1].split())
    pixels = np.frombuffer(parts[3], dtype=np.uint8, count=width * height)
    return pixels.reshape(height, width).astype(np.float64) / 255.0


def write_csv(path: PathLike, rows: Union[List[Dict[str, Any]], pd.DataFrame], columns: List[str] = None) -> Path:
    """Write rows with pandas; an empty row list still gets its header when columns are given."""
    frame = rows if isinstance(rows, pd.DataFrame) else pd.DataFrame(rows, columns=columns)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with FileLock(f"{path}.lock", timeout=10):
        frame.to_csv(path, index=False, float_format="%.10g", lineterminator="\n")
    return path


def write_json(path: PathLike, payload: Dict[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, ensure_ascii=False)
        f.write("\n")
    return path


def read_json(path: PathLike) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"JSON file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def sha256_file(path: PathLike) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()
