"""Deterministic forward degradation of terrain surfaces.

The forward process never injects pixel noise: a surface is degraded by
circularly rotating it across columns and shifting it vertically, both
scaled by the current noise scale sigma. Given the same draw the operator
is a pure function, which is what lets the reverse process run with few
steps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigMismatchError,
    InvalidScaleError,
    InvalidScheduleError,
    LengthMismatchError,
)
from .polar import (
    KIND_MASK,
    KIND_PERTURBATION,
    PolarGridConfig,
    PolarRaster,
    Surface,
    surface_to_polar_mask,
)


@dataclass(frozen=True)
class NoiseSchedule:
    """Strictly increasing scales sigma_1 .. sigma_n."""

    sigmas: np.ndarray

    @property
    def n(self) -> int:
        return len(self.sigmas)

    @property
    def sigma_max(self) -> float:
        return float(self.sigmas[-1])

    def sigma(self, i: int) -> float:
        """Scale at 1-based step index i."""
        if not 1 <= i <= self.n:
            raise InvalidScheduleError(f"step index {i} outside 1..{self.n}")
        return float(self.sigmas[i - 1])


def make_schedule(sigma_min: float, sigma_max: float, n: int) -> NoiseSchedule:
    """Geometric schedule sigma_i = sigma_1 * (sigma_n/sigma_1)^((i-1)/(n-1))."""
    if not 0 < sigma_min < sigma_max:
        raise InvalidScheduleError(
            f"need 0 < sigma_min < sigma_max, got {sigma_min}, {sigma_max}"
        )
    if n < 2:
        raise InvalidScheduleError(f"need n >= 2, got {n}")
    sigmas = np.geomspace(sigma_min, sigma_max, n)
    sigmas[0] = sigma_min  # endpoints exact to machine precision
    sigmas[-1] = sigma_max
    return NoiseSchedule(sigmas)


@dataclass(frozen=True)
class PerturbationParams:
    """Free parameters of the degradation operator.

    Maximum vertical shift is ``max_vertical_fraction * sigma * L`` samples
    and maximum rotation is ``max_rotation_fraction * sigma * X`` columns;
    each draw picks a magnitude uniformly inside ``band`` times the maximum
    plus independent random signs.
    """

    max_vertical_fraction: float = 0.25
    max_rotation_fraction: float = 0.125
    band: tuple[float, float] = (0.5, 1.0)

    def validate(self) -> None:
        if not 0 < self.max_vertical_fraction <= 0.5:
            raise InvalidScaleError(
                f"max_vertical_fraction must be in (0, 0.5], got {self.max_vertical_fraction}"
            )
        if not 0 < self.max_rotation_fraction <= 0.5:
            raise InvalidScaleError(
                f"max_rotation_fraction must be in (0, 0.5], got {self.max_rotation_fraction}"
            )
        lo, hi = self.band
        if not 0 < lo <= hi <= 1:
            raise InvalidScaleError(f"band must satisfy 0 < lo <= hi <= 1, got {self.band}")


@dataclass(frozen=True)
class PerturbationDraw:
    """One sampled parameterization of the degradation operator."""

    vertical_sign: int
    rotation_sign: int
    vertical_magnitude: float
    rotation_magnitude: float
    seed: int | None = None

    @classmethod
    def sample(
        cls, rng: np.random.Generator, params: PerturbationParams, seed: int | None = None
    ) -> PerturbationDraw:
        lo, hi = params.band
        return cls(
            vertical_sign=1 if rng.random() < 0.5 else -1,
            rotation_sign=1 if rng.random() < 0.5 else -1,
            vertical_magnitude=float(rng.uniform(lo, hi)),
            rotation_magnitude=float(rng.uniform(lo, hi)),
            seed=seed,
        )


def perturb(
    s: Surface, sigma: float, params: PerturbationParams, draw: PerturbationDraw
) -> Surface:
    """Degrade a surface: circular rotation then vertical shift, clamped to [0, L-1].

    Pure function of its inputs; sigma scales both the rotation (in
    columns) and the shift (in samples) linearly.
    """
    if sigma <= 0:
        raise InvalidScaleError(f"sigma must be positive, got {sigma}")
    params.validate()
    x = s.num_columns
    L = s.column_length
    shift_cols = int(
        np.rint(draw.rotation_sign * draw.rotation_magnitude * sigma * params.max_rotation_fraction * x)
    )
    dv = draw.vertical_sign * draw.vertical_magnitude * sigma * params.max_vertical_fraction * L
    rotated = np.roll(np.asarray(s.values, dtype=float), shift_cols)
    return Surface(np.clip(rotated + dv, 0.0, L - 1.0), L)


def ussd(a: Surface, b: Surface) -> float:
    """Unsigned surface-to-surface distance: mean per-column |a - b| in samples."""
    if a.num_columns != b.num_columns:
        raise LengthMismatchError(
            f"surfaces have {a.num_columns} and {b.num_columns} columns"
        )
    return float(np.mean(np.abs(np.asarray(a.values, float) - np.asarray(b.values, float))))


def perturbation_target(clean: PolarRaster, perturbed: PolarRaster) -> PolarRaster:
    """Elementwise xor of two binary rasters: 1 where they disagree."""
    if clean.config != perturbed.config:
        raise ConfigMismatchError("rasters come from different polar grids")
    if clean.kind != KIND_MASK or perturbed.kind != KIND_MASK:
        raise ConfigMismatchError("perturbation targets need two mask channels")
    target = np.bitwise_xor(clean.values.astype(np.uint8), perturbed.values.astype(np.uint8))
    return PolarRaster(clean.config, KIND_PERTURBATION, target)


def apply_target(mask: PolarRaster, target: PolarRaster) -> PolarRaster:
    """Xor a perturbation map onto a mask (involutive correction)."""
    if mask.config != target.config:
        raise ConfigMismatchError("rasters come from different polar grids")
    vals = np.bitwise_xor(mask.values.astype(np.uint8), target.values.astype(np.uint8))
    return PolarRaster(mask.config, KIND_MASK, vals)


def forward_sample(
    clean_surface: Surface,
    cfg: PolarGridConfig,
    schedule: NoiseSchedule,
    i: int,
    params: PerturbationParams,
    seed: int,
) -> tuple[PolarRaster, PolarRaster, float]:
    """One training example at step i: (perturbed mask, xor target, sigma_i).

    Reproducible: the perturbation draw comes from ``seed`` alone.
    """
    sigma_i = schedule.sigma(i)
    rng = np.random.default_rng(seed)
    draw = PerturbationDraw.sample(rng, params, seed=seed)
    degraded = perturb(clean_surface, sigma_i, params, draw)
    clean_mask = surface_to_polar_mask(clean_surface, cfg)
    perturbed_mask = surface_to_polar_mask(degraded, cfg)
    target = perturbation_target(clean_mask, perturbed_mask)
    return perturbed_mask, target, sigma_i
