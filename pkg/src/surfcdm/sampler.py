"""Annealed reverse process: iterative xor-correct / re-perturb surface recovery.

Sampling starts from a constant-radius surface perturbed at the largest
scale and walks the schedule downward. Each step asks the denoiser for
the perturbation map, xors it away, re-reads the surface, and (except at
the last step) re-perturbs at the annealed scale sqrt(2*eps(i)) where
eps(i) = sigma_{i-1}^2 / 2. Randomness differs run to run, so repeated
runs form an uncertainty ensemble.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .degradation import (
    NoiseSchedule,
    PerturbationDraw,
    PerturbationParams,
    apply_target,
    make_schedule,
    perturb,
    ussd,
)
from .errors import (
    IndexOutOfRangeError,
    InvalidConfigError,
    TooFewRunsError,
)
from .polar import (
    KIND_IMAGE,
    KIND_MASK,
    KIND_PERTURBATION,
    Centroid,
    PolarGridConfig,
    PolarRaster,
    Surface,
    default_radial_step,
    extract_surface,
    from_polar,
    surface_to_polar_mask,
    to_polar,
)

CENTROID_MODES = ("oracle", "estimated")


@dataclass(frozen=True)
class SamplerConfig:
    schedule: NoiseSchedule = field(default_factory=lambda: make_schedule(0.1, 1.0, 10))
    params: PerturbationParams = field(default_factory=PerturbationParams)
    init_radius_fraction: float = 0.5
    threshold: float = 0.5
    centroid_mode: str = "oracle"
    radial_step: float | None = None

    def validate(self) -> None:
        self.params.validate()
        if not 0.0 < self.init_radius_fraction < 1.0:
            raise InvalidConfigError(
                f"initial radius fraction {self.init_radius_fraction} outside (0, 1)"
            )
        if not 0.0 < self.threshold < 1.0:
            raise InvalidConfigError(f"threshold {self.threshold} outside (0, 1)")
        if self.centroid_mode not in CENTROID_MODES:
            raise InvalidConfigError(f"unknown centroid mode {self.centroid_mode!r}")
        if self.radial_step is not None and self.radial_step <= 0:
            raise InvalidConfigError(f"radial step must be positive, got {self.radial_step}")


def epsilon(schedule: NoiseSchedule, i: int) -> float:
    """Annealing energy for step i: sigma_{i-1}^2 / 2 with sigma_0 = 0."""
    if not 1 <= i <= schedule.n:
        raise IndexOutOfRangeError(f"step {i} outside 1..{schedule.n}")
    prev = 0.0 if i == 1 else schedule.sigma(i - 1)
    return prev * prev / 2.0


def init_state(cfg: SamplerConfig, grid: PolarGridConfig, seed: int) -> Surface:
    """Constant-radius surface perturbed at the top of the schedule."""
    length = grid.column_length
    flat = Surface(
        np.full(grid.num_columns, cfg.init_radius_fraction * length, dtype=float), length
    )
    rng = np.random.default_rng(seed)
    draw = PerturbationDraw.sample(rng, cfg.params, seed=seed)
    return perturb(flat, cfg.schedule.sigma_max, cfg.params, draw)


@dataclass(frozen=True)
class StepRecord:
    """What one reverse step did, in surface space."""

    i: int
    sigma: float
    surface_in: np.ndarray
    surface_corrected: np.ndarray
    surface_out: np.ndarray
    ussd_prev: float


@dataclass
class SampleTrace:
    grid: PolarGridConfig
    initial_surface: Surface
    records: list[StepRecord]
    final_mask: np.ndarray

    def states(self) -> list[Surface]:
        """The n + 1 surface states, initial first."""
        length = self.grid.column_length
        out = [self.initial_surface]
        out.extend(Surface(r.surface_out, length) for r in self.records)
        return out


def _step(
    state: PolarRaster,
    image: PolarRaster,
    model,
    schedule: NoiseSchedule,
    i: int,
    cfg: SamplerConfig,
    seed: int,
) -> tuple[PolarRaster, StepRecord]:
    if not 1 <= i <= schedule.n:
        raise IndexOutOfRangeError(f"step {i} outside 1..{schedule.n}")
    sigma_i = schedule.sigma(i)
    pred = model.predict_perturbation(state, image, sigma_i)
    flips = PolarRaster(
        state.config, KIND_PERTURBATION, (pred.values >= cfg.threshold).astype(np.uint8)
    )
    corrected = apply_target(state, flips)
    s_hat = extract_surface(corrected)
    if i > 1:
        rng = np.random.default_rng(seed)
        draw = PerturbationDraw.sample(rng, cfg.params, seed=seed)
        scale = float(np.sqrt(2.0 * epsilon(schedule, i)))  # = sigma_{i-1}
        out_surface = perturb(s_hat, scale, cfg.params, draw)
    else:
        out_surface = s_hat
    surface_in = extract_surface(state)
    record = StepRecord(
        i=i,
        sigma=sigma_i,
        surface_in=surface_in.values.copy(),
        surface_corrected=np.asarray(s_hat.values, dtype=float).copy(),
        surface_out=np.asarray(out_surface.values, dtype=float).copy(),
        ussd_prev=ussd(out_surface, surface_in),
    )
    return surface_to_polar_mask(out_surface, state.config), record


def reverse_step(
    state: PolarRaster,
    image: PolarRaster,
    model,
    schedule: NoiseSchedule,
    i: int,
    cfg: SamplerConfig,
    seed: int,
) -> PolarRaster:
    """One reverse update of the terrain state (step i of the schedule)."""
    out, _ = _step(state, image, model, schedule, i, cfg, seed)
    return out


def _otsu_threshold(image: np.ndarray) -> float:
    hist, edges = np.histogram(image, bins=256, range=(0.0, 1.0))
    hist = hist.astype(float)
    total = hist.sum()
    if total == 0:
        return 0.5
    p = hist / total
    centers = (edges[:-1] + edges[1:]) / 2.0
    w0 = np.cumsum(p)
    w1 = 1.0 - w0
    mu_cum = np.cumsum(p * centers)
    mu_total = mu_cum[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        mu0 = mu_cum / w0
        mu1 = (mu_total - mu_cum) / w1
        score = w0 * w1 * (mu0 - mu1) ** 2
    score[~np.isfinite(score)] = -1.0
    return float(edges[int(np.argmax(score)) + 1])


def estimate_centroid(image: np.ndarray, min_area_fraction: float = 0.01) -> Centroid:
    """Center of the largest dark blob; image center when nothing qualifies.

    Thresholds the intensity histogram (between-class variance criterion),
    labels the dark side, and takes the biggest connected component if it
    covers at least ``min_area_fraction`` of the frame.
    """
    rows, cols = image.shape
    fallback = Centroid((cols - 1) / 2.0, (rows - 1) / 2.0)
    dark = image < _otsu_threshold(image)
    labels, n = ndimage.label(dark)
    if n == 0:
        return fallback
    sizes = np.bincount(labels.ravel())
    sizes[0] = 0
    lab = int(np.argmax(sizes))
    if sizes[lab] < min_area_fraction * image.size:
        return fallback
    ys, xs = np.nonzero(labels == lab)
    return Centroid(float(xs.mean()), float(ys.mean()))


def segment(
    image: np.ndarray,
    model,
    cfg: SamplerConfig = SamplerConfig(),
    seed: int = 0,
    ground_truth_centroid: Centroid | None = None,
) -> tuple[np.ndarray, SampleTrace]:
    """Run the full reverse process on one Cartesian image.

    Returns the predicted binary mask (same shape as ``image``) and the
    per-step trace. With ``centroid_mode="oracle"`` the caller must supply
    the reference centroid; ``"estimated"`` derives one from the image.
    """
    cfg.validate()
    rows, cols = image.shape
    if cfg.centroid_mode == "oracle":
        if ground_truth_centroid is None:
            raise InvalidConfigError("oracle centroid mode needs ground_truth_centroid")
        centroid = ground_truth_centroid
    else:
        centroid = estimate_centroid(image)

    length = model.column_length
    step = cfg.radial_step if cfg.radial_step is not None else default_radial_step(
        (cols, rows), length
    )
    grid = PolarGridConfig(model.columns, length, step, centroid)
    polar_image = to_polar(image, grid, KIND_IMAGE)

    n = cfg.schedule.n
    seeds = np.random.SeedSequence(seed).generate_state(n + 1)
    initial = init_state(cfg, grid, int(seeds[0]))
    state = surface_to_polar_mask(initial, grid)

    records: list[StepRecord] = []
    for i in range(n, 0, -1):
        state, record = _step(
            state, polar_image, model, cfg.schedule, i, cfg, int(seeds[n - i + 1])
        )
        records.append(record)

    mask = from_polar(state, (cols, rows))
    return mask, SampleTrace(grid, initial, records, mask)


def sample_ensemble(
    image: np.ndarray,
    model,
    cfg: SamplerConfig = SamplerConfig(),
    runs: int = 20,
    seed: int = 0,
    ground_truth_centroid: Centroid | None = None,
) -> list[np.ndarray]:
    """Independent reverse runs for uncertainty estimation (needs runs >= 2)."""
    if runs < 2:
        raise TooFewRunsError(f"need at least 2 runs, got {runs}")
    run_seeds = np.random.SeedSequence(seed).generate_state(runs)
    return [
        segment(image, model, cfg, int(s), ground_truth_centroid)[0] for s in run_seeds
    ]


class OracleDenoiser:
    """Test double that answers with the exact perturbation map.

    Given the reference Cartesian mask, its prediction at any state is the
    xor between the state and the reference resampled onto the state's
    grid, so each correction lands exactly on the reference terrain mask.
    """

    def __init__(self, truth_mask: np.ndarray, columns: int = 256, column_length: int = 200):
        self.truth = (np.asarray(truth_mask) > 0).astype(np.uint8)
        self.columns = columns
        self.column_length = column_length

    def predict_perturbation(
        self, mask: PolarRaster, image: PolarRaster, sigma: float
    ) -> PolarRaster:
        true_polar = to_polar(self.truth, mask.config, KIND_MASK)
        flips = np.bitwise_xor(
            mask.values.astype(np.uint8), true_polar.values.astype(np.uint8)
        )
        return PolarRaster(mask.config, KIND_PERTURBATION, flips.astype(float))
