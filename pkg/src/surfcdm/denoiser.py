"""Scale-conditioned U-net that predicts the xor perturbation map of a degraded mask.

The net sees two polar channels (perturbed terrain mask, resampled image)
laid out as (batch, channel, columns, length). The angular axis is
circularly padded, the radial axis zero padded. Every hidden conv output
is multiplied by a per-channel gate computed from the degradation scale
by a Linear(1, C) layer, then passed through SiLU. Down path uses average
pooling, up path nearest-neighbor upsampling, final 1x1 conv plus sigmoid.
"""

from __future__ import annotations

import copy
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .degradation import NoiseSchedule, PerturbationParams, forward_sample
from .errors import (
    ConfigMismatchError,
    FormatError,
    InvalidConfigError,
    InvalidScaleError,
    NonFiniteActivationError,
    NonFiniteLossError,
    ShapeMismatchError,
)
from .polar import (
    KIND_IMAGE,
    KIND_MASK,
    KIND_PERTURBATION,
    PolarGridConfig,
    PolarRaster,
    compute_centroid,
    default_radial_step,
    extract_surface,
    to_polar,
)
from .synthdata import Sample, augment

LAMBDA_MODES = ("uniform", "magnitude")


@dataclass(frozen=True)
class DenoiserConfig:
    """Architecture and polar extent of the denoiser."""

    columns: int = 256
    column_length: int = 200
    padded_length: int = 224
    channels: tuple[int, ...] = (16, 32, 64, 128)
    in_channels: int = 2
    out_channels: int = 1

    @property
    def levels(self) -> int:
        return len(self.channels)

    def validate(self) -> None:
        if self.levels < 2:
            raise InvalidConfigError("need at least two resolution levels")
        down = 2 ** (self.levels - 1)
        if self.columns % down or self.padded_length % down:
            raise InvalidConfigError(
                f"columns {self.columns} and padded length {self.padded_length} "
                f"must be divisible by {down}"
            )
        if self.padded_length < self.column_length:
            raise InvalidConfigError("padded length shorter than the column length")
        if self.in_channels < 1 or self.out_channels < 1:
            raise InvalidConfigError("channel counts must be positive")


class _GatedConv(nn.Module):
    """3x3 conv with circular/zero mixed padding and a scale gate."""

    def __init__(self, cin: int, cout: int):
        super().__init__()
        self.conv = nn.Conv2d(cin, cout, 3)
        self.gate = nn.Linear(1, cout)
        nn.init.normal_(self.gate.weight, std=0.05)
        nn.init.ones_(self.gate.bias)

    def forward(self, h: torch.Tensor, sigma: torch.Tensor) -> torch.Tensor:
        h = F.pad(h, (1, 1, 0, 0))  # radial axis: zeros
        h = F.pad(h, (0, 0, 1, 1), mode="circular")  # angular axis: wrap
        h = self.conv(h)
        g = self.gate(sigma)[:, :, None, None]
        return F.silu(h * g)


class _UNet(nn.Module):
    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        chans = cfg.channels
        self.enc = nn.ModuleList()
        cin = cfg.in_channels
        for c in chans:
            self.enc.append(nn.ModuleList([_GatedConv(cin, c), _GatedConv(c, c)]))
            cin = c
        self.dec = nn.ModuleList()
        for i in range(len(chans) - 2, -1, -1):
            self.dec.append(
                nn.ModuleList(
                    [
                        _GatedConv(chans[i + 1], chans[i]),
                        _GatedConv(2 * chans[i], chans[i]),
                        _GatedConv(chans[i], chans[i]),
                    ]
                )
            )
        self.head = nn.Conv2d(chans[0], cfg.out_channels, 1)
        # start predictions near the typical perturbation-band rate instead of
        # 0.5: keeps early sigmoid gradients alive under the mostly-zero targets
        nn.init.constant_(self.head.bias, -2.0)

    def forward(self, x: torch.Tensor, sigma: torch.Tensor) -> torch.Tensor:
        skips = []
        for lev, block in enumerate(self.enc):
            for conv in block:
                x = conv(x, sigma)
            if lev < len(self.enc) - 1:
                skips.append(x)
                x = F.avg_pool2d(x, 2)
        for block in self.dec:
            up, fuse_a, fuse_b = block
            x = F.interpolate(x, scale_factor=2, mode="nearest")
            x = up(x, sigma)
            x = torch.cat([x, skips.pop()], dim=1)
            x = fuse_a(x, sigma)
            x = fuse_b(x, sigma)
        return torch.sigmoid(self.head(x))


@dataclass
class DenoiserModel:
    """Network plus its polar extent and training metadata."""

    config: DenoiserConfig
    net: _UNet
    epochs_trained: int = 0
    best_val_loss: float = float("inf")
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)

    @property
    def columns(self) -> int:
        return self.config.columns

    @property
    def column_length(self) -> int:
        return self.config.column_length

    def predict_perturbation(
        self, mask: PolarRaster, image: PolarRaster, sigma: float
    ) -> PolarRaster:
        return forward(self, mask, image, sigma)


def init_model(config: DenoiserConfig = DenoiserConfig(), seed: int = 0) -> DenoiserModel:
    """Build a model with weights reproducible from ``seed``."""
    config.validate()
    torch.manual_seed(seed)
    return DenoiserModel(config, _UNet(config))


def _net_dtype(net: _UNet) -> torch.dtype:
    return next(net.parameters()).dtype


def _stack_inputs(
    cfg: DenoiserConfig, masks: np.ndarray, images: np.ndarray, dtype: torch.dtype
) -> torch.Tensor:
    x = np.stack([masks.astype(np.float32), images.astype(np.float32)], axis=1)
    t = torch.as_tensor(x).to(dtype)
    return F.pad(t, (0, cfg.padded_length - cfg.column_length))


def _run_net(
    model: DenoiserModel, masks: np.ndarray, images: np.ndarray, sigmas: np.ndarray
) -> torch.Tensor:
    """Forward pass on numpy inputs, cropped back to the true column length."""
    dtype = _net_dtype(model.net)
    x = _stack_inputs(model.config, masks, images, dtype)
    s = torch.as_tensor(np.asarray(sigmas, dtype=np.float32).reshape(-1, 1)).to(dtype)
    out = model.net(x, s)
    return out[:, 0, :, : model.config.column_length]


def forward(
    model: DenoiserModel, perturbed_mask: PolarRaster, image: PolarRaster, sigma: float
) -> PolarRaster:
    """Predicted perturbation probabilities for one polar pair."""
    if perturbed_mask.config != image.config:
        raise ConfigMismatchError("mask and image come from different polar grids")
    if perturbed_mask.kind != KIND_MASK or image.kind != KIND_IMAGE:
        raise ConfigMismatchError(
            f"expected (mask, image) channels, got ({perturbed_mask.kind!r}, {image.kind!r})"
        )
    cfg = perturbed_mask.config
    if (cfg.num_columns, cfg.column_length) != (model.columns, model.column_length):
        raise ShapeMismatchError(
            f"raster extent {(cfg.num_columns, cfg.column_length)} does not match "
            f"model {(model.columns, model.column_length)}"
        )
    if sigma <= 0:
        raise InvalidScaleError(f"sigma must be positive, got {sigma}")
    with torch.no_grad():
        out = _run_net(
            model,
            perturbed_mask.values[None],
            image.values[None],
            np.array([sigma]),
        )
    vals = out[0].numpy().astype(float)
    if not np.all(np.isfinite(vals)):
        raise NonFiniteActivationError("denoiser produced non-finite outputs")
    return PolarRaster(cfg, KIND_PERTURBATION, vals)


@dataclass
class Batch:
    """Training mini-batch in polar layout (batch, columns, length)."""

    masks: np.ndarray
    images: np.ndarray
    sigmas: np.ndarray
    targets: np.ndarray


def batch_loss(model: DenoiserModel, batch: Batch, lambda_mode: str = "uniform") -> torch.Tensor:
    """Mean squared error against the xor targets, differentiable.

    ``magnitude`` mode reweights samples inversely to their perturbation
    area so small corrections are not drowned out; weights are normalized
    to mean 1 to keep the loss scale comparable.
    """
    if lambda_mode not in LAMBDA_MODES:
        raise InvalidConfigError(f"unknown lambda mode {lambda_mode!r}")
    pred = _run_net(model, batch.masks, batch.images, batch.sigmas)
    target = torch.as_tensor(batch.targets.astype(np.float32)).to(pred.dtype)
    err = (pred - target) ** 2
    if lambda_mode == "uniform":
        return err.mean()
    area = target.mean(dim=(1, 2))
    w = 1.0 / (area + 1e-3)
    w = w / w.mean()
    return (w[:, None, None] * err).mean()


def training_step(
    model: DenoiserModel,
    batch: Batch,
    config: TrainingConfig,
    optimizer: torch.optim.Optimizer | None = None,
) -> float:
    """One optimizer update; returns the batch loss as a float."""
    if optimizer is None:
        optimizer = torch.optim.Adam(model.net.parameters(), lr=config.learning_rate)
    optimizer.zero_grad()
    loss = batch_loss(model, batch, config.lambda_mode)
    value = float(loss.detach())
    if not np.isfinite(value):
        raise NonFiniteLossError(
            f"non-finite loss {value} on a batch of {len(batch.sigmas)} "
            f"(sigma range {batch.sigmas.min():.4g}..{batch.sigmas.max():.4g})"
        )
    loss.backward()
    optimizer.step()
    return value


@dataclass(frozen=True)
class TrainingConfig:
    learning_rate: float = 1e-3
    batch_size: int = 8
    epochs: int = 30
    lambda_mode: str = "uniform"
    seed: int = 0
    augment: bool = True

    def validate(self) -> None:
        if self.learning_rate <= 0:
            raise InvalidConfigError(f"learning rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise InvalidConfigError(f"batch size must be at least 1, got {self.batch_size}")
        if self.epochs < 1:
            raise InvalidConfigError(f"epochs must be at least 1, got {self.epochs}")
        if self.lambda_mode not in LAMBDA_MODES:
            raise InvalidConfigError(f"unknown lambda mode {self.lambda_mode!r}")


def _make_example(
    sample: Sample,
    model_cfg: DenoiserConfig,
    schedule: NoiseSchedule,
    params: PerturbationParams,
    rng: np.random.Generator,
    do_augment: bool,
    step_index: int | None = None,
) -> tuple[np.ndarray, np.ndarray, float, np.ndarray]:
    """Degrade one sample at a drawn (or given) schedule step."""
    if do_augment:
        img, msk = augment(sample.image, sample.mask, rng)
    else:
        img, msk = sample.image, sample.mask
    centroid = compute_centroid(msk)
    rows, cols = msk.shape
    grid = PolarGridConfig(
        model_cfg.columns,
        model_cfg.column_length,
        default_radial_step((cols, rows), model_cfg.column_length),
        centroid,
    )
    polar_img = to_polar(img, grid, KIND_IMAGE)
    clean = extract_surface(to_polar(msk, grid, KIND_MASK))
    i = step_index if step_index is not None else int(rng.integers(1, schedule.n + 1))
    seed = int(rng.integers(0, 2**31 - 1))
    perturbed, target, sigma_i = forward_sample(clean, grid, schedule, i, params, seed)
    return perturbed.values, polar_img.values, sigma_i, target.values


def _to_batches(examples: list[tuple], batch_size: int) -> list[Batch]:
    batches = []
    for lo in range(0, len(examples), batch_size):
        chunk = examples[lo : lo + batch_size]
        batches.append(
            Batch(
                masks=np.stack([e[0] for e in chunk]),
                images=np.stack([e[1] for e in chunk]),
                sigmas=np.array([e[2] for e in chunk]),
                targets=np.stack([e[3] for e in chunk]),
            )
        )
    return batches


def train(
    model: DenoiserModel,
    train_samples: list[Sample],
    val_samples: list[Sample],
    schedule: NoiseSchedule,
    config: TrainingConfig = TrainingConfig(),
    params: PerturbationParams = PerturbationParams(),
    log=None,
) -> DenoiserModel:
    """Fit the denoiser; the returned model carries the best-validation weights.

    Each epoch re-augments, re-resamples, and re-degrades every training
    sample at a uniformly drawn schedule step. Validation pairs are fixed
    across epochs (one deterministic degradation per sample, steps cycling
    through the schedule) so the selection criterion is stable. The whole
    run is a pure function of the inputs and ``config.seed``.
    """
    config.validate()
    if not train_samples or not val_samples:
        raise InvalidConfigError("need non-empty train and validation splits")
    optimizer = torch.optim.Adam(model.net.parameters(), lr=config.learning_rate)

    val_examples = []
    for j, sample in enumerate(val_samples):
        rng = np.random.default_rng([config.seed, 2, j])
        val_examples.append(
            _make_example(sample, model.config, schedule, params, rng, False,
                          step_index=(j % schedule.n) + 1)
        )
    val_batches = _to_batches(val_examples, config.batch_size)

    best = float("inf")
    best_state = None
    for epoch in range(config.epochs):
        rng = np.random.default_rng([config.seed, 1, epoch])
        order = rng.permutation(len(train_samples))
        examples = [
            _make_example(train_samples[idx], model.config, schedule, params, rng,
                          config.augment)
            for idx in order
        ]
        for batch in _to_batches(examples, config.batch_size):
            model.train_loss.append(training_step(model, batch, config, optimizer))

        with torch.no_grad():
            v = [float(batch_loss(model, b, config.lambda_mode)) for b in val_batches]
        epoch_val = float(np.mean(v))
        model.val_loss.append(epoch_val)
        if epoch_val < best:
            best = epoch_val
            best_state = copy.deepcopy(model.net.state_dict())
        if log is not None:
            log(epoch, model.train_loss[-1], epoch_val)

    if best_state is not None:
        model.net.load_state_dict(best_state)
    model.best_val_loss = best
    model.epochs_trained += config.epochs
    return model


# ---------------------------------------------------------------------------
# Checkpoint container: magic, version, key=value header, raw float32 tensors.

_MAGIC = b"SURFCDM\x00"
_VERSION = 1
_CONFIG_KEYS = (
    "columns",
    "column_length",
    "padded_length",
    "channels",
    "in_channels",
    "out_channels",
)
_META_KEYS = ("epochs_trained", "best_val_loss")


def save_checkpoint(model: DenoiserModel, path: Path | str) -> None:
    """Serialize config, metadata, and weights to the portable container."""
    cfg = model.config
    header_map = {
        "columns": cfg.columns,
        "column_length": cfg.column_length,
        "padded_length": cfg.padded_length,
        "channels": ",".join(str(c) for c in cfg.channels),
        "in_channels": cfg.in_channels,
        "out_channels": cfg.out_channels,
        "epochs_trained": model.epochs_trained,
        "best_val_loss": repr(model.best_val_loss),
    }
    header = "".join(f"{k}={header_map[k]}\n" for k in (*_CONFIG_KEYS, *_META_KEYS))
    header_bytes = header.encode("utf-8")

    state = model.net.state_dict()
    blob = bytearray()
    blob += _MAGIC
    blob += struct.pack("<I", _VERSION)
    blob += struct.pack("<I", len(header_bytes))
    blob += header_bytes
    blob += struct.pack("<I", len(state))
    for name, tensor in state.items():
        name_bytes = name.encode("utf-8")
        arr = tensor.detach().cpu().numpy().astype("<f4")
        blob += struct.pack("<H", len(name_bytes))
        blob += name_bytes
        blob += struct.pack("<B", arr.ndim)
        for d in arr.shape:
            blob += struct.pack("<I", d)
        blob += arr.tobytes()

    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(bytes(blob))
    os.replace(tmp, path)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(
                f"truncated checkpoint: wanted {n} bytes at offset {self.pos}, "
                f"file has {len(self.data)}"
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u8(self) -> int:
        return struct.unpack("<B", self.take(1))[0]


def load_checkpoint(
    path: Path | str, expected_config: DenoiserConfig | None = None
) -> DenoiserModel:
    """Rebuild a model from a checkpoint file, validating every field.

    Raises :class:`FormatError` naming the offending field on any magic,
    version, header, tensor, or ``expected_config`` mismatch.
    """
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    if r.take(len(_MAGIC)) != _MAGIC:
        raise FormatError("bad magic: not a denoiser checkpoint")
    version = r.u32()
    if version != _VERSION:
        raise FormatError(f"unsupported checkpoint version {version}, expected {_VERSION}")
    header = r.take(r.u32()).decode("utf-8")

    fields: dict[str, str] = {}
    for line in header.splitlines():
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"malformed header line {line!r}")
        key, value = line.split("=", 1)
        fields[key] = value
    expected_keys = set(_CONFIG_KEYS) | set(_META_KEYS)
    missing = expected_keys - fields.keys()
    extra = fields.keys() - expected_keys
    if missing:
        raise FormatError(f"header missing fields: {', '.join(sorted(missing))}")
    if extra:
        raise FormatError(f"header has unknown fields: {', '.join(sorted(extra))}")

    try:
        config = DenoiserConfig(
            columns=int(fields["columns"]),
            column_length=int(fields["column_length"]),
            padded_length=int(fields["padded_length"]),
            channels=tuple(int(c) for c in fields["channels"].split(",")),
            in_channels=int(fields["in_channels"]),
            out_channels=int(fields["out_channels"]),
        )
        epochs_trained = int(fields["epochs_trained"])
        best_val_loss = float(fields["best_val_loss"])
    except ValueError as exc:
        raise FormatError(f"unparseable header value: {exc}") from exc

    if expected_config is not None:
        for name in ("columns", "column_length", "padded_length", "channels",
                     "in_channels", "out_channels"):
            got, want = getattr(config, name), getattr(expected_config, name)
            if got != want:
                raise FormatError(f"config field {name}: checkpoint has {got}, expected {want}")

    model = init_model(config, seed=0)
    state = {}
    for _ in range(r.u32()):
        name = r.take(r.u16()).decode("utf-8")
        ndim = r.u8()
        shape = tuple(r.u32() for _ in range(ndim))
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape)
        state[name] = torch.from_numpy(arr.copy())
    if r.pos != len(r.data):
        raise FormatError(f"{len(r.data) - r.pos} trailing bytes after the tensor table")

    want_state = model.net.state_dict()
    if set(state) != set(want_state):
        missing_t = sorted(set(want_state) - set(state))
        extra_t = sorted(set(state) - set(want_state))
        raise FormatError(f"tensor names do not match: missing {missing_t}, extra {extra_t}")
    for name, tensor in state.items():
        if tuple(tensor.shape) != tuple(want_state[name].shape):
            raise FormatError(
                f"tensor {name}: shape {tuple(tensor.shape)} does not match "
                f"{tuple(want_state[name].shape)}"
            )
    model.net.load_state_dict(state)
    model.epochs_trained = epochs_trained
    model.best_val_loss = best_val_loss
    return model
