"""Synthetic star-shaped ultrasound-like dataset: generation, storage, pre-processing.

Shapes are radial harmonic perturbations of a disk, guaranteed
star-shaped, grouped into synthetic "patients" (one base shape, several
deformed frames). Images render the shape as a dark region on a brighter
speckled background; boundary-dropout arcs locally fade the object into
the background to mimic missing-wall acquisitions.
"""

from __future__ import annotations

import json
import os
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import CorruptSampleError, InvalidSizeError, InvalidSpecError
from .polar import Centroid, bilinear_sample, compute_centroid, is_star_shaped

OBJECT_LEVEL = 0.25
BACKGROUND_LEVEL = 0.70
SPLIT_FRACTIONS = (0.7, 0.1, 0.2)  # train : val : test, by patient group
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class ShapeSpec:
    """Star-shaped region r(theta) = base_radius + sum_k a_k sin(k theta + phi_k)."""

    center: tuple[float, float]
    base_radius: float
    amplitudes: tuple[float, ...] = ()
    phases: tuple[float, ...] = ()

    def radius_at(self, theta: np.ndarray) -> np.ndarray:
        r = np.full_like(np.asarray(theta, dtype=float), self.base_radius)
        for k, (a, phi) in enumerate(zip(self.amplitudes, self.phases), start=1):
            r += a * np.sin(k * theta + phi)
        return r

    def validate(self) -> None:
        if len(self.amplitudes) != len(self.phases):
            raise InvalidSpecError("amplitudes and phases must pair up")
        theta = np.linspace(0.0, 2.0 * np.pi, 720, endpoint=False)
        if np.any(self.radius_at(theta) <= 0):
            raise InvalidSpecError("radial function must stay positive")


@dataclass(frozen=True)
class DropoutArc:
    """Angular arc where the object/background contrast is attenuated."""

    start: float  # radians in [0, 2*pi)
    width: float  # radians
    attenuation: float  # 0 = untouched, 1 = boundary fully erased


@dataclass(frozen=True)
class ImageDegradationSpec:
    speckle: float = 0.15
    gradient_strength: float = 0.08
    blur_sigma: float = 1.5
    dropout_arcs: tuple[DropoutArc, ...] = ()

    def validate(self) -> None:
        for arc in self.dropout_arcs:
            if not 0.0 <= arc.attenuation <= 1.0:
                raise InvalidSpecError(f"arc attenuation {arc.attenuation} outside [0, 1]")
            if not 0.0 <= arc.width < 2.0 * np.pi:
                raise InvalidSpecError(f"arc width {arc.width} outside [0, 2*pi)")


CLEAN = ImageDegradationSpec(speckle=0.0, gradient_strength=0.0, blur_sigma=0.0)


def rasterize_shape(spec: ShapeSpec, size: tuple[int, int]) -> np.ndarray:
    """Binary mask of the region r < r(theta) around the spec center."""
    spec.validate()
    a_size, b_size = size
    cx, cy = spec.center
    xs = np.arange(a_size, dtype=float)[None, :] - cx
    ys = np.arange(b_size, dtype=float)[:, None] - cy
    r = np.hypot(xs, ys)
    theta = np.mod(np.arctan2(ys, xs), 2.0 * np.pi)
    return (r < spec.radius_at(theta)).astype(np.uint8)


def _arc_window(theta: np.ndarray, arc: DropoutArc) -> np.ndarray:
    """Smooth 0..1 window over the arc with raised-cosine shoulders."""
    rel = np.mod(theta - arc.start, 2.0 * np.pi)
    ramp = max(arc.width * 0.15, 1e-6)
    w = np.zeros_like(rel)
    inside = rel <= arc.width
    w[inside] = 1.0
    head = inside & (rel < ramp)
    w[head] = 0.5 - 0.5 * np.cos(np.pi * rel[head] / ramp)
    tail = inside & (rel > arc.width - ramp)
    w[tail] = 0.5 - 0.5 * np.cos(np.pi * (arc.width - rel[tail]) / ramp)
    return w


def gen_sample(
    spec: ShapeSpec,
    deg: ImageDegradationSpec,
    size: tuple[int, int],
    seed: int,
) -> tuple[np.ndarray, np.ndarray, Centroid]:
    """Render one (image, mask, centroid) sample, deterministic in ``seed``."""
    deg.validate()
    rng = np.random.default_rng(seed)
    mask = rasterize_shape(spec, size)
    centroid = compute_centroid(mask)

    a_size, b_size = size
    cx, cy = spec.center
    xs = np.arange(a_size, dtype=float)[None, :] - cx
    ys = np.arange(b_size, dtype=float)[:, None] - cy
    theta = np.mod(np.arctan2(ys, xs), 2.0 * np.pi)

    contrast = np.ones((b_size, a_size), dtype=float)
    for arc in deg.dropout_arcs:
        contrast *= 1.0 - arc.attenuation * _arc_window(theta, arc)

    image = BACKGROUND_LEVEL + (OBJECT_LEVEL - BACKGROUND_LEVEL) * mask * contrast
    if deg.blur_sigma > 0:
        image = ndimage.gaussian_filter(image, deg.blur_sigma)

    direction = rng.uniform(0.0, 2.0 * np.pi)
    if deg.gradient_strength > 0:
        px = np.arange(a_size, dtype=float)[None, :]
        py = np.arange(b_size, dtype=float)[:, None]
        proj = px * np.cos(direction) + py * np.sin(direction)
        proj = (proj - proj.mean()) / max(np.ptp(proj), 1e-9)
        image = image + deg.gradient_strength * proj

    noise = rng.standard_normal(size=(b_size, a_size))
    if deg.speckle > 0:
        noise = ndimage.gaussian_filter(noise, 0.7)
        noise /= max(noise.std(), 1e-9)
        image = image * (1.0 + deg.speckle * noise)

    return np.clip(image, 0.0, 1.0), mask, centroid


def random_shape_spec(
    rng: np.random.Generator,
    size: tuple[int, int],
    harmonics: int = 5,
    amplitude_fraction: float = 0.2,
    center_jitter: float = 0.04,
) -> ShapeSpec:
    """Draw a star-shape spec whose mask passes the ray-crossing validator."""
    extent = min(size)
    for _ in range(32):
        cx = size[0] / 2.0 + rng.uniform(-1.0, 1.0) * center_jitter * extent
        cy = size[1] / 2.0 + rng.uniform(-1.0, 1.0) * center_jitter * extent
        r0 = rng.uniform(0.22, 0.32) * extent
        amps = tuple(rng.uniform(0.0, amplitude_fraction * r0) / k for k in range(1, harmonics + 1))
        phases = tuple(rng.uniform(0.0, 2.0 * np.pi) for _ in range(harmonics))
        spec = ShapeSpec((cx, cy), r0, amps, phases)
        mask = rasterize_shape(spec, size)
        if is_star_shaped(mask, compute_centroid(mask)):
            return spec
    raise InvalidSpecError("could not draw a star-shaped spec in 32 attempts")


def _deform_spec(rng: np.random.Generator, base: ShapeSpec, size: tuple[int, int]) -> ShapeSpec:
    """Small frame-to-frame deformation of one patient's base shape."""
    for _ in range(32):
        spec = replace(
            base,
            center=(
                base.center[0] + rng.uniform(-3.0, 3.0),
                base.center[1] + rng.uniform(-3.0, 3.0),
            ),
            base_radius=base.base_radius * (1.0 + rng.uniform(-0.05, 0.05)),
            amplitudes=tuple(a * (1.0 + rng.uniform(-0.15, 0.15)) for a in base.amplitudes),
            phases=tuple(p + rng.uniform(-0.15, 0.15) for p in base.phases),
        )
        mask = rasterize_shape(spec, size)
        if is_star_shaped(mask, compute_centroid(mask)):
            return spec
    raise InvalidSpecError("could not deform the base spec into a star shape")


def random_degradation(
    rng: np.random.Generator, dropout_prob: float = 0.4
) -> ImageDegradationSpec:
    arcs: tuple[DropoutArc, ...] = ()
    # draw all variates unconditionally so the stream layout is fixed
    start = rng.uniform(0.0, 2.0 * np.pi)
    width = rng.uniform(np.pi / 6.0, np.pi / 3.0)
    attenuation = rng.uniform(0.5, 0.85)
    if rng.random() < dropout_prob:
        arcs = (DropoutArc(start, width, attenuation),)
    return ImageDegradationSpec(
        speckle=rng.uniform(0.08, 0.18),
        gradient_strength=rng.uniform(0.03, 0.10),
        blur_sigma=rng.uniform(1.0, 2.0),
        dropout_arcs=arcs,
    )


@dataclass(frozen=True)
class SampleEntry:
    id: str
    group: str
    split: str
    image_path: str
    mask_path: str
    seed: int
    centroid: tuple[float, float]


@dataclass
class DatasetManifest:
    root: Path
    size: tuple[int, int]
    seed: int
    entries: list[SampleEntry]

    def split(self, name: str) -> list[SampleEntry]:
        return [e for e in self.entries if e.split == name]

    def entry(self, sample_id: str) -> SampleEntry:
        for e in self.entries:
            if e.id == sample_id:
                return e
        raise KeyError(f"sample id {sample_id!r} not in manifest")

    def to_json(self) -> str:
        doc = {
            "size": list(self.size),
            "seed": self.seed,
            "samples": [
                {
                    "id": e.id,
                    "group": e.group,
                    "split": e.split,
                    "image_path": e.image_path,
                    "mask_path": e.mask_path,
                    "seed": e.seed,
                    "centroid": list(e.centroid),
                }
                for e in self.entries
            ],
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    def save(self) -> Path:
        path = self.root / "manifest.json"
        _atomic_write_bytes(path, self.to_json().encode("utf-8"))
        return path

    @classmethod
    def load(cls, root: Path | str) -> DatasetManifest:
        root = Path(root)
        with open(root / "manifest.json", "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        entries = [
            SampleEntry(
                id=s["id"],
                group=s["group"],
                split=s["split"],
                image_path=s["image_path"],
                mask_path=s["mask_path"],
                seed=s["seed"],
                centroid=tuple(s["centroid"]),
            )
            for s in doc["samples"]
        ]
        return cls(root, tuple(doc["size"]), doc["seed"], entries)


def _atomic_write_bytes(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def save_mask_png(mask: np.ndarray, path: Path | str) -> None:
    img = Image.fromarray((mask.astype(np.uint8) * 255), mode="L")
    _save_png(img, Path(path))


def save_image_png(image: np.ndarray, path: Path | str) -> None:
    img = Image.fromarray(np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8), mode="L")
    _save_png(img, Path(path))


def _save_png(img: Image.Image, path: Path) -> None:
    tmp = path.with_name(path.name + ".tmp")
    img.save(tmp, format="PNG")
    os.replace(tmp, path)


def load_image_png(path: Path | str) -> np.ndarray:
    return np.asarray(Image.open(path).convert("L"), dtype=float) / 255.0


def _split_groups(n_groups: int) -> list[str]:
    n_train = int(round(SPLIT_FRACTIONS[0] * n_groups))
    n_val = max(1, int(round(SPLIT_FRACTIONS[1] * n_groups)))
    n_train = max(1, min(n_train, n_groups - n_val - 1))
    labels = ["train"] * n_train + ["val"] * n_val
    labels += ["test"] * (n_groups - len(labels))
    return labels


def make_dataset(
    n_samples: int,
    seed: int,
    out_dir: Path | str,
    size: tuple[int, int] = (256, 256),
    frames_per_group: int = 10,
    dropout_prob: float = 0.4,
) -> DatasetManifest:
    """Generate a grouped dataset with a 70:10:20 patient-group split.

    Each group is one base shape; its frames are small deformations. No
    group spans two splits. Fully reproducible from ``seed``.
    """
    if n_samples < 10:
        raise InvalidSpecError(f"need at least 10 samples, got {n_samples}")
    root = Path(out_dir)
    for split in SPLITS:
        (root / "data" / split).mkdir(parents=True, exist_ok=True)

    n_groups = int(np.ceil(n_samples / frames_per_group))
    split_labels = _split_groups(n_groups)

    entries: list[SampleEntry] = []
    remaining = n_samples
    for g in range(n_groups):
        rng = np.random.default_rng([seed, g])
        base = random_shape_spec(rng, size)
        split = split_labels[g]
        group_id = f"g{g:03d}"
        frames = min(frames_per_group, remaining)
        remaining -= frames
        for f in range(frames):
            spec = _deform_spec(rng, base, size) if f > 0 else base
            deg = random_degradation(rng, dropout_prob)
            sample_seed = int(rng.integers(0, 2**31 - 1))
            image, mask, centroid = gen_sample(spec, deg, size, sample_seed)
            sample_id = f"{group_id}_f{f:02d}"
            image_rel = f"data/{split}/{sample_id}_image.png"
            mask_rel = f"data/{split}/{sample_id}_mask.png"
            save_image_png(image, root / image_rel)
            save_mask_png(mask, root / mask_rel)
            entries.append(
                SampleEntry(
                    id=sample_id,
                    group=group_id,
                    split=split,
                    image_path=image_rel,
                    mask_path=mask_rel,
                    seed=sample_seed,
                    centroid=(centroid.a, centroid.b),
                )
            )
    manifest = DatasetManifest(root, size, seed, entries)
    manifest.save()
    return manifest


@dataclass
class Sample:
    id: str
    image: np.ndarray
    mask: np.ndarray
    centroid: Centroid


def load_sample(manifest: DatasetManifest, sample_id: str) -> Sample:
    """Load one sample, re-validating the stored mask invariants.

    Raises :class:`CorruptSampleError` naming the violated invariant;
    star-shape violations only warn because the count-based surface rule
    tolerates mildly non-star masks.
    """
    entry = manifest.entry(sample_id)
    image = load_image_png(manifest.root / entry.image_path)
    raw = np.asarray(Image.open(manifest.root / entry.mask_path).convert("L"))
    levels = np.unique(raw)
    if not np.all(np.isin(levels, (0, 255))):
        raise CorruptSampleError(f"{sample_id}: mask not binary, levels {levels[:5]}")
    mask = (raw > 127).astype(np.uint8)
    if mask.sum() == 0:
        raise CorruptSampleError(f"{sample_id}: foreground empty")
    _, n_components = ndimage.label(mask)
    if n_components != 1:
        raise CorruptSampleError(f"{sample_id}: foreground not connected ({n_components} components)")
    centroid = Centroid(*entry.centroid)
    if not is_star_shaped(mask, centroid):
        warnings.warn(f"{sample_id}: mask is not star-shaped about its centroid", stacklevel=2)
    return Sample(sample_id, image, mask, centroid)


def load_split(manifest: DatasetManifest, split: str) -> list[Sample]:
    return [load_sample(manifest, e.id) for e in manifest.split(split)]


def _resize_coords(n_out: int, n_src: int) -> np.ndarray:
    # pixel-center mapping; identity when n_out == n_src
    return (np.arange(n_out, dtype=float) + 0.5) * (n_src / n_out) - 0.5


def resize_bilinear(image: np.ndarray, target_size: tuple[int, int]) -> np.ndarray:
    """Edge-clamped bilinear resize to (A, B)."""
    a_size, b_size = target_size
    h, w = image.shape
    xs = np.clip(_resize_coords(a_size, w), 0, w - 1)[None, :]
    ys = np.clip(_resize_coords(b_size, h), 0, h - 1)[:, None]
    xs, ys = np.broadcast_arrays(xs, ys)
    return bilinear_sample(image.astype(float), xs, ys)


def resize_nearest(mask: np.ndarray, target_size: tuple[int, int]) -> np.ndarray:
    a_size, b_size = target_size
    h, w = mask.shape
    xs = np.clip(np.rint(_resize_coords(a_size, w)), 0, w - 1).astype(int)
    ys = np.clip(np.rint(_resize_coords(b_size, h)), 0, h - 1).astype(int)
    return mask[ys[:, None], xs[None, :]]


def preprocess(
    image: np.ndarray,
    mask: np.ndarray,
    target_size: tuple[int, int] = (256, 352),
) -> tuple[np.ndarray, np.ndarray]:
    """Resize to the training extent: bilinear image, nearest-neighbor mask.

    Intensities above 1 are assumed 8-bit and divided by 255; output is
    clipped to [0, 1]. Nearest-neighbor keeps the mask binary.
    """
    if min(target_size) < 16:
        raise InvalidSizeError(f"target size {target_size} below the 16-pixel minimum")
    if image.shape != mask.shape:
        raise InvalidSizeError(f"image {image.shape} and mask {mask.shape} differ")
    img = image.astype(float)
    if img.max() > 1.0:
        img = img / 255.0
    img = np.clip(resize_bilinear(img, target_size), 0.0, 1.0)
    out_mask = (resize_nearest(mask, target_size) > 0).astype(np.uint8)
    return img, out_mask


def apply_augment(
    image: np.ndarray, mask: np.ndarray, offset: float, flip: bool
) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic core of :func:`augment`: intensity offset + optional horizontal flip."""
    img = np.clip(image + offset, 0.0, 1.0)
    if flip:
        img = img[:, ::-1].copy()
        mask = mask[:, ::-1].copy()
    return img, mask


def augment(
    image: np.ndarray, mask: np.ndarray, rng: np.random.Generator | int
) -> tuple[np.ndarray, np.ndarray]:
    """Intensity shift in ±0.1 of the max intensity plus a coin-flip horizontal mirror."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    offset = rng.uniform(-0.1, 0.1) * float(image.max())
    flip = bool(rng.random() < 0.5)
    return apply_augment(image, mask, offset, flip)
