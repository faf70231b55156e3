"""
Writers for lattice diagnostics: log-space grids as text and as PGM images,
and alignment paths as node lists.
"""
from pathlib import Path
from typing import Union

import numpy as np

from .lattice import AlignmentPath

PathLike = Union[str, Path]


def grid_to_text(grid: np.ndarray) -> str:
    """One line per input position t, values u = 0..U comma-separated; -inf stays '-inf'."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2:
        raise ValueError("Expected a (T, U+1) grid")
    return "".join(",".join(repr(float(value)) for value in row) + "\n" for row in grid)


def write_grid_text(path: PathLike, grid: np.ndarray) -> Path:
    path = Path(path)
    path.write_text(grid_to_text(grid), encoding='utf-8')
    return path


def grid_to_pgm(grid: np.ndarray) -> bytes:
    """
    Binary greyscale image of a (T, U+1) log-space grid.

    Width T, height U+1, u=0 on the bottom row. Finite values map linearly
    from [min finite, 0] onto 0..255 (positive values clip to white); -inf is
    black. A grid of finite zeros is all white.
    """
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2 or grid.size == 0:
        raise ValueError("Expected a non-empty (T, U+1) grid")
    finite = np.isfinite(grid)
    pixels = np.zeros(grid.shape, dtype=np.uint8)
    if finite.any():
        values = np.minimum(grid[finite], 0.0)
        low = values.min()
        if low < 0:
            pixels[finite] = np.round((values - low) / -low * 255.0).astype(np.uint8)
        else:
            pixels[finite] = 255
    image = pixels.T[::-1]
    height, width = image.shape
    return f"P5\n{width} {height}\n255\n".encode('ascii') + np.ascontiguousarray(image).tobytes()


def write_grid_pgm(path: PathLike, grid: np.ndarray) -> Path:
    path = Path(path)
    path.write_bytes(grid_to_pgm(grid))
    return path


def write_path_text(path: PathLike, alignment: AlignmentPath) -> Path:
    path = Path(path)
    path.write_text(alignment.to_text(), encoding='utf-8')
    return path
