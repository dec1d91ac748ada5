"""Polar graph-column representation of images and masks.

Cartesian rasters are numpy arrays indexed ``[y, x]`` with shape
``(height B, width A)``; images are floats in [0, 1], masks are binary
{0, 1}. A polar grid re-samples the plane along ``X`` rays (columns) cast
from a centroid, each holding ``L`` samples spaced ``radial_step`` pixels
apart. Column ``x`` points along angle ``2*pi*x / X`` measured from the
+x axis. A mask whose boundary crosses every column exactly once is a
terrain mask and is fully described by one height value per column (a
:class:`Surface`).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import (
    EmptyMaskError,
    InvalidConfigError,
    NonStarShapedError,
    ShapeMismatchError,
)

KIND_IMAGE = "image"
KIND_MASK = "mask"
KIND_PERTURBATION = "perturbation"

# Rays used by star-shape validation when the caller does not say otherwise.
DEFAULT_STAR_RAYS = 256


class Centroid(NamedTuple):
    a: float  # x coordinate, pixels
    b: float  # y coordinate, pixels


@dataclass(frozen=True)
class PolarGridConfig:
    """Geometry of one polar resampling grid."""

    num_columns: int
    column_length: int
    radial_step: float
    centroid: Centroid

    def validate(self) -> None:
        if self.num_columns < 8:
            raise InvalidConfigError(f"num_columns must be >= 8, got {self.num_columns}")
        if self.column_length < 8:
            raise InvalidConfigError(f"column_length must be >= 8, got {self.column_length}")
        if not self.radial_step > 0:
            raise InvalidConfigError(f"radial_step must be > 0, got {self.radial_step}")

    def angles(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(self.num_columns) / self.num_columns


def default_radial_step(size: tuple[int, int], column_length: int) -> float:
    """Step so columns span from the centroid to the shorter half-extent.

    ``size`` is ``(A, B)`` = (width, height).
    """
    return 0.5 * min(size) / column_length


@dataclass
class PolarRaster:
    """Resampled grid in column space; ``values[x, y]`` is sample ``y`` of column ``x``."""

    config: PolarGridConfig
    kind: str
    values: np.ndarray

    def __post_init__(self):
        expected = (self.config.num_columns, self.config.column_length)
        if self.values.shape != expected:
            raise ShapeMismatchError(
                f"raster shape {self.values.shape} does not match config {expected}"
            )


@dataclass(frozen=True)
class Surface:
    """Per-column boundary height, each value in [0, column_length)."""

    values: np.ndarray
    column_length: int

    @property
    def num_columns(self) -> int:
        return len(self.values)

    def validate(self) -> None:
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1:
            raise ShapeMismatchError("surface values must be a 1-D vector")
        if not np.all(np.isfinite(v)):
            raise ShapeMismatchError("surface values must be finite")
        if np.any(v < 0) or np.any(v >= self.column_length):
            raise ShapeMismatchError(
                f"surface values must lie in [0, {self.column_length})"
            )


def bilinear_sample(grid: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Bilinear interpolation of ``grid[y, x]`` at float coords, zero outside."""
    h, w = grid.shape
    x0 = np.floor(xs)
    y0 = np.floor(ys)
    fx = xs - x0
    fy = ys - y0
    out = np.zeros(np.broadcast(xs, ys).shape, dtype=float)
    for dx, dy, wgt in (
        (0, 0, (1 - fx) * (1 - fy)),
        (1, 0, fx * (1 - fy)),
        (0, 1, (1 - fx) * fy),
        (1, 1, fx * fy),
    ):
        xi = (x0 + dx).astype(int)
        yi = (y0 + dy).astype(int)
        ok = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        vals = np.zeros_like(out)
        vals[ok] = grid[yi[ok], xi[ok]]
        out += wgt * vals
    return out


def _nearest_sample(grid: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    h, w = grid.shape
    xi = np.rint(xs).astype(int)
    yi = np.rint(ys).astype(int)
    ok = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
    out = np.zeros(np.broadcast(xs, ys).shape, dtype=grid.dtype)
    out[ok] = grid[yi[ok], xi[ok]]
    return out


def ray_crossing_counts(
    mask: np.ndarray,
    centroid: Centroid,
    num_rays: int = DEFAULT_STAR_RAYS,
    radial_step: float = 0.5,
) -> np.ndarray:
    """Count foreground/background transitions along rays cast from the centroid.

    A mask that is star-shaped with respect to the centroid yields exactly one
    transition on every ray.
    """
    h, w = mask.shape
    corners = np.array([[0, 0], [w - 1, 0], [0, h - 1], [w - 1, h - 1]], dtype=float)
    max_r = np.max(np.hypot(corners[:, 0] - centroid.a, corners[:, 1] - centroid.b))
    n_steps = int(np.ceil(max_r / radial_step)) + 2
    angles = 2.0 * np.pi * np.arange(num_rays) / num_rays
    radii = np.arange(n_steps) * radial_step
    xs = centroid.a + radii[None, :] * np.cos(angles)[:, None]
    ys = centroid.b + radii[None, :] * np.sin(angles)[:, None]
    vals = _nearest_sample(mask.astype(np.uint8), xs, ys)
    return np.abs(np.diff(vals.astype(np.int8), axis=1)).sum(axis=1)


def is_star_shaped(
    mask: np.ndarray, centroid: Centroid, num_rays: int = DEFAULT_STAR_RAYS
) -> bool:
    return bool(np.all(ray_crossing_counts(mask, centroid, num_rays) == 1))


def compute_centroid(mask: np.ndarray, check_star: bool = False) -> Centroid:
    """Foreground center of mass of a binary mask.

    With ``check_star=True`` the mask is additionally validated by ray
    casting and :class:`NonStarShapedError` is raised if any ray from the
    centroid crosses the boundary more than once.
    """
    ys, xs = np.nonzero(mask)
    if len(xs) == 0:
        raise EmptyMaskError("mask has no foreground pixels")
    c = Centroid(float(xs.mean()), float(ys.mean()))
    if check_star and not is_star_shaped(mask, c):
        raise NonStarShapedError("a ray from the centroid crosses the boundary more than once")
    return c


def to_polar(source: np.ndarray, cfg: PolarGridConfig, kind: str) -> PolarRaster:
    """Resample a Cartesian raster onto the polar grid.

    Sample ``(x, y)`` is the bilinear interpolation of the source at
    ``centroid + y*radial_step*(cos, sin)(2*pi*x/X)``; samples outside the
    source read as 0. Mask channels are re-binarized at 0.5 after
    interpolation.
    """
    cfg.validate()
    if kind not in (KIND_IMAGE, KIND_MASK):
        raise InvalidConfigError(f"unsupported channel kind {kind!r}")
    angles = cfg.angles()
    radii = np.arange(cfg.column_length) * cfg.radial_step
    xs = cfg.centroid.a + radii[None, :] * np.cos(angles)[:, None]
    ys = cfg.centroid.b + radii[None, :] * np.sin(angles)[:, None]
    vals = bilinear_sample(source.astype(float), xs, ys)
    if kind == KIND_MASK:
        vals = (vals >= 0.5).astype(np.uint8)
    return PolarRaster(cfg, kind, vals)


def extract_surface(pm: PolarRaster) -> Surface:
    """Per-column foreground count, clamped to [0, L-1].

    The count rule equals the boundary position on terrain masks and stays
    well defined on speckled non-terrain masks produced mid-sampling.
    """
    if pm.kind != KIND_MASK:
        raise InvalidConfigError(f"extract_surface needs a mask channel, got {pm.kind!r}")
    counts = pm.values.astype(float).sum(axis=1)
    L = pm.config.column_length
    return Surface(np.clip(counts, 0.0, L - 1.0), L)


def surface_to_polar_mask(s: Surface, cfg: PolarGridConfig) -> PolarRaster:
    """Rasterize a surface to a terrain mask: column x is foreground for y < round(S(x))."""
    cfg.validate()
    if s.num_columns != cfg.num_columns or s.column_length != cfg.column_length:
        raise InvalidConfigError("surface extent does not match the polar grid")
    heights = np.floor(np.clip(s.values, 0.0, cfg.column_length - 1.0) + 0.5)
    ys = np.arange(cfg.column_length)
    vals = (ys[None, :] < heights[:, None]).astype(np.uint8)
    return PolarRaster(cfg, KIND_MASK, vals)


def interp_surface_at(s: Surface, column_coord: np.ndarray) -> np.ndarray:
    """Surface height at fractional (circular) column coordinates."""
    x = np.asarray(column_coord, dtype=float) % s.num_columns
    x0 = np.floor(x).astype(int)
    frac = x - x0
    x1 = (x0 + 1) % s.num_columns
    v = np.asarray(s.values, dtype=float)
    return (1.0 - frac) * v[x0] + frac * v[x1]


def from_polar(pm: PolarRaster, out_size: tuple[int, int]) -> np.ndarray:
    """Rasterize a polar mask back to a Cartesian binary mask of size (A, B).

    A pixel is foreground iff its radius (in samples) falls strictly below
    the surface extracted from ``pm``, with the surface linearly
    interpolated between adjacent columns.
    """
    cfg = pm.config
    cfg.validate()
    a_size, b_size = out_size
    if a_size < 1 or b_size < 1:
        raise InvalidConfigError(f"output size must be positive, got {out_size}")
    s = extract_surface(pm)
    xs = np.arange(a_size, dtype=float)[None, :] - cfg.centroid.a
    ys = np.arange(b_size, dtype=float)[:, None] - cfg.centroid.b
    radius = np.hypot(xs, ys) / cfg.radial_step
    theta = np.mod(np.arctan2(ys, xs), 2.0 * np.pi)
    col = theta * cfg.num_columns / (2.0 * np.pi)
    limit = interp_surface_at(s, col)
    return (radius < limit).astype(np.uint8)
