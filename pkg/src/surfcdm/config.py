"""Flat dotted-key run configuration: defaults, file parsing, typed overrides.

Config files are ``key = value`` lines with ``#`` comments. Every key
must appear in :data:`DEFAULTS`; unknown keys are rejected rather than
ignored so typos fail loudly. Values are coerced to the type of the
default.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .degradation import NoiseSchedule, PerturbationParams, make_schedule
from .denoiser import DenoiserConfig, TrainingConfig
from .errors import ConfigFileError
from .sampler import SamplerConfig

DEFAULTS: dict[str, object] = {
    "seed": 7,
    "data.width": 256,
    "data.height": 256,
    "data.n_samples": 500,
    "data.frames_per_group": 10,
    "data.dropout_prob": 0.4,
    "polar.columns": 256,
    "polar.column_length": 200,
    "polar.padded_length": 224,
    "schedule.sigma_min": 0.1,
    "schedule.sigma_max": 1.0,
    "schedule.steps": 10,
    "perturb.max_vertical_fraction": 0.25,
    "perturb.max_rotation_fraction": 0.125,
    "perturb.band_low": 0.5,
    "perturb.band_high": 1.0,
    "denoiser.channels": "16,32,64,128",
    "train.learning_rate": 1e-3,
    "train.batch_size": 8,
    "train.epochs": 30,
    "train.lambda_mode": "uniform",
    "train.augment": True,
    "sampler.init_radius_fraction": 0.5,
    "sampler.threshold": 0.5,
    "sampler.centroid_mode": "oracle",
    "uncertainty.runs": 20,
}

_TRUE = ("true", "1", "yes", "on")
_FALSE = ("false", "0", "no", "off")


def coerce(key: str, raw: str):
    """Parse a raw string to the type of the key's default."""
    if key not in DEFAULTS:
        raise ConfigFileError(f"unknown config key {key!r}")
    default = DEFAULTS[key]
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigFileError(f"bad value for {key}: {exc}") from exc


def parse_config_file(path: Path | str) -> dict[str, object]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigFileError(f"cannot read config file {path}: {exc}") from exc
    values: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigFileError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key in values:
            raise ConfigFileError(f"{path}:{lineno}: duplicate key {key!r}")
        values[key] = coerce(key, raw)
    return values


def parse_override(item: str) -> tuple[str, object]:
    """Parse one ``key=value`` command-line override."""
    if "=" not in item:
        raise ConfigFileError(f"override {item!r} is not of the form key=value")
    key, raw = item.split("=", 1)
    key = key.strip()
    return key, coerce(key, raw)


@dataclass
class RunConfig:
    """Resolved configuration: defaults, then file values, then overrides."""

    values: dict[str, object] = field(default_factory=lambda: dict(DEFAULTS))
    explicit: set[str] = field(default_factory=set)

    @classmethod
    def build(
        cls, config_file: Path | str | None = None, overrides: list[str] | None = None
    ) -> RunConfig:
        cfg = cls()
        if config_file is not None:
            for key, value in parse_config_file(config_file).items():
                cfg.values[key] = value
                cfg.explicit.add(key)
        for item in overrides or ():
            key, value = parse_override(item)
            cfg.values[key] = value
            cfg.explicit.add(key)
        return cfg

    def __getitem__(self, key: str):
        if key not in self.values:
            raise ConfigFileError(f"unknown config key {key!r}")
        return self.values[key]

    def set(self, key: str, value) -> None:
        if key not in DEFAULTS:
            raise ConfigFileError(f"unknown config key {key!r}")
        self.values[key] = value
        self.explicit.add(key)

    def render(self) -> str:
        """Canonical key = value text of the effective configuration."""
        lines = []
        for key in sorted(self.values):
            value = self.values[key]
            text = str(value).lower() if isinstance(value, bool) else str(value)
            lines.append(f"{key} = {text}")
        return "\n".join(lines) + "\n"

    def save(self, out_dir: Path | str) -> Path:
        path = Path(out_dir) / "effective_config.txt"
        path.write_text(self.render(), encoding="utf-8")
        return path

    # typed section builders ------------------------------------------------

    def size(self) -> tuple[int, int]:
        return (int(self["data.width"]), int(self["data.height"]))

    def build_schedule(self) -> NoiseSchedule:
        return make_schedule(
            float(self["schedule.sigma_min"]),
            float(self["schedule.sigma_max"]),
            int(self["schedule.steps"]),
        )

    def build_perturbation_params(self) -> PerturbationParams:
        params = PerturbationParams(
            max_vertical_fraction=float(self["perturb.max_vertical_fraction"]),
            max_rotation_fraction=float(self["perturb.max_rotation_fraction"]),
            band=(float(self["perturb.band_low"]), float(self["perturb.band_high"])),
        )
        params.validate()
        return params

    def build_denoiser_config(self) -> DenoiserConfig:
        raw = str(self["denoiser.channels"])
        try:
            channels = tuple(int(c) for c in raw.split(",") if c.strip())
        except ValueError as exc:
            raise ConfigFileError(f"bad denoiser.channels {raw!r}: {exc}") from exc
        cfg = DenoiserConfig(
            columns=int(self["polar.columns"]),
            column_length=int(self["polar.column_length"]),
            padded_length=int(self["polar.padded_length"]),
            channels=channels,
        )
        cfg.validate()
        return cfg

    def build_training_config(self) -> TrainingConfig:
        tc = TrainingConfig(
            learning_rate=float(self["train.learning_rate"]),
            batch_size=int(self["train.batch_size"]),
            epochs=int(self["train.epochs"]),
            lambda_mode=str(self["train.lambda_mode"]),
            seed=int(self["seed"]),
            augment=bool(self["train.augment"]),
        )
        tc.validate()
        return tc

    def build_sampler_config(self) -> SamplerConfig:
        cfg = SamplerConfig(
            schedule=self.build_schedule(),
            params=self.build_perturbation_params(),
            init_radius_fraction=float(self["sampler.init_radius_fraction"]),
            threshold=float(self["sampler.threshold"]),
            centroid_mode=str(self["sampler.centroid_mode"]),
        )
        cfg.validate()
        return cfg
