"""Experiment configuration: one flat ``key = value`` file.

Values are resolved in three layers, later ones winning:

    built-in defaults  <  config file  <  command-line overrides

``profile`` picks the loss form and domains (``gta5-like``: z vs z'' on both
domains, ``synthia-like``: z vs z' on the target only) unless ``att_form`` or
``att_domains`` are set explicitly.  The resolved configuration is rendered
back to the same format; its hash (without ``seed`` and ``out``) names the run
directory.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Mapping, Optional

from .errors import ConfigurationError
from .models import (
    AttDomains,
    AttForm,
    AttMetric,
    DomainSpec,
    LossConfig,
    LrPolicy,
    NetConfig,
    Optimizer,
    TrainConfig,
    Variant,
)

RESOLVED_FILE = "config.resolved"
PROFILES = ("gta5-like", "synthia-like")

# Keys whose file spelling is not a Python identifier
_FILE_KEYS = {"lam": "lambda"}
_FIELD_KEYS = {v: k for k, v in _FILE_KEYS.items()}
_UNHASHED = ("seed", "out")
_TRUE = ("1", "true", "yes", "on")
_FALSE = ("0", "false", "no", "off")


@dataclass(frozen=True)
class ExperimentConfig:
    """Every tunable of an experiment, with desk-scale defaults."""

    seed: int = 0
    out: str = "runs"
    profile: str = "gta5-like"
    att_form: str = ""
    att_domains: str = ""
    att_metric: str = "l1"
    lam: float = 0.1
    use_conv: bool = True
    use_skip: bool = True
    gens: int = 3
    variants: str = "no-pseudo,pseudo-only,ours"
    height: int = 32
    width: int = 32
    train_samples: int = 200
    eval_samples: int = 50
    widths: str = "16,32,32"
    downsample: int = 4
    num_classes: int = 5
    sam_iterations: int = 3000
    iterations: int = 6000
    eval_interval: int = 500
    base_lr: float = 0.01
    weight_decay: float = 5e-4
    momentum: float = 0.9
    poly_power: float = 0.9
    optimizer: str = "sgd"
    lr_policy: str = "poly"
    lr_step_size: int = 2500
    lr_gamma: float = 0.1

    # ------------------------------------------------------------- loading

    @classmethod
    def keys(cls) -> list[str]:
        return [_FILE_KEYS.get(f.name, f.name) for f in fields(cls)]

    @classmethod
    def from_entries(
        cls, entries: Mapping[str, str], base: Optional[ExperimentConfig] = None
    ) -> ExperimentConfig:
        """Apply string entries (file spelling of keys) on top of ``base``."""
        base = base or cls()
        updates: dict[str, object] = {}
        for key, raw in entries.items():
            name = _FIELD_KEYS.get(key, key.replace("-", "_"))
            if name not in {f.name for f in fields(cls)}:
                raise ConfigurationError(f"unknown config key: {key}")
            updates[name] = _parse(key, raw, getattr(base, name))
        return replace(base, **updates)

    @classmethod
    def load(
        cls,
        path: Optional[str | os.PathLike[str]] = None,
        overrides: Optional[Mapping[str, str]] = None,
    ) -> ExperimentConfig:
        """Resolve defaults, the optional config file and overrides, then validate."""
        config = cls()
        if path is not None:
            config = cls.from_entries(read_config_file(path), config)
        if overrides:
            config = cls.from_entries(overrides, config)
        config.validate()
        return config

    def validate(self) -> None:
        """Raise ConfigurationError naming the first bad key."""
        if self.profile not in PROFILES:
            choices = ", ".join(PROFILES)
            raise ConfigurationError(f"profile must be one of {choices}, got {self.profile}")
        counts = {
            "gens": self.gens,
            "train_samples": self.train_samples,
            "eval_samples": self.eval_samples,
            "sam_iterations": self.sam_iterations,
        }
        for key, value in counts.items():
            if value < 1:
                raise ConfigurationError(f"{key} must be at least 1, got {value}")
        self.variant_list()
        self.net_config()
        self.train_config()
        self.sam_train_config()

    # ----------------------------------------------------------- rendering

    def entries(self) -> dict[str, str]:
        out: dict[str, str] = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool):
                text = "true" if value else "false"
            else:
                text = repr(value) if isinstance(value, float) else str(value)
            out[_FILE_KEYS.get(f.name, f.name)] = text
        return out

    def render(self, include_run_keys: bool = True) -> str:
        lines = [
            f"{key} = {value}"
            for key, value in self.entries().items()
            if include_run_keys or key not in _UNHASHED
        ]
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        """First 10 hex digits of sha256 of the rendering without seed and out."""
        return hashlib.sha256(self.render(include_run_keys=False).encode()).hexdigest()[:10]

    def run_dir(self) -> Path:
        return Path(self.out) / f"run-{self.config_hash()}-s{self.seed}"

    def write_resolved(self, run_dir: Optional[Path] = None) -> Path:
        run_dir = run_dir or self.run_dir()
        run_dir.mkdir(parents=True, exist_ok=True)
        path = run_dir / RESOLVED_FILE
        path.write_text(self.render(), encoding="utf-8")
        return path

    # ---------------------------------------------------------- conversion

    def net_config(self) -> NetConfig:
        try:
            widths = tuple(int(w) for w in self.widths.split(","))
        except ValueError as exc:
            raise ConfigurationError(
                f"widths must be comma-separated integers, got {self.widths}"
            ) from exc
        return NetConfig(
            input_channels=3,
            widths=widths,
            downsample=self.downsample,
            num_classes=self.num_classes,
            seed=self.seed,
        )

    def loss_config(self) -> LossConfig:
        profile = (
            LossConfig.gta5_like(self.lam)
            if self.profile == "gta5-like"
            else LossConfig.synthia_like(self.lam)
        )
        att_form = _enum("att_form", AttForm, self.att_form) if self.att_form else profile.att_form
        att_domains = (
            _enum("att_domains", AttDomains, self.att_domains)
            if self.att_domains
            else profile.att_domains
        )
        return LossConfig(
            att_form=att_form,
            att_domains=att_domains,
            att_metric=_enum("att_metric", AttMetric, self.att_metric),
            lam=self.lam,
        )

    def train_config(self, iterations: Optional[int] = None) -> TrainConfig:
        return TrainConfig(
            iterations=iterations if iterations is not None else self.iterations,
            base_lr=self.base_lr,
            weight_decay=self.weight_decay,
            momentum=self.momentum,
            poly_power=self.poly_power,
            eval_interval=self.eval_interval,
            seed=self.seed,
            loss=self.loss_config(),
            use_conv=self.use_conv,
            use_skip=self.use_skip,
            optimizer=_enum("optimizer", Optimizer, self.optimizer),
            lr_policy=_enum("lr_policy", LrPolicy, self.lr_policy),
            lr_step_size=self.lr_step_size,
            lr_gamma=self.lr_gamma,
        )

    def sam_train_config(self) -> TrainConfig:
        return self.train_config(self.sam_iterations)

    def domain_specs(self) -> tuple[DomainSpec, DomainSpec]:
        return DomainSpec.default_source(self.seed), DomainSpec.default_target(self.seed)

    def variant_list(self) -> list[Variant]:
        names = [v.strip() for v in self.variants.split(",") if v.strip()]
        if not names:
            raise ConfigurationError("variants must name at least one variant")
        variants = [_enum("variants", Variant, name) for name in names]
        if len(set(variants)) != len(variants):
            raise ConfigurationError(f"variants lists a variant twice: {self.variants}")
        return variants


def _enum(key: str, kind: type, raw: str):  # type: ignore[no-untyped-def]
    try:
        return kind(raw)
    except ValueError as exc:
        choices = ", ".join(str(m.value) for m in kind)
        raise ConfigurationError(f"{key} must be one of {choices}, got {raw}") from exc


def _parse(key: str, raw: str, default: object) -> object:
    raw = raw.strip()
    if isinstance(default, bool):
        lowered = raw.lower()
        if lowered in _TRUE:
            return True
        if lowered in _FALSE:
            return False
        raise ConfigurationError(f"{key} must be true or false, got {raw}")
    try:
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError as exc:
        raise ConfigurationError(f"{key} must be a {type(default).__name__}, got {raw}") from exc
    return raw


def parse_entries(text: str, source: str = "<config>") -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    entries: dict[str, str] = {}
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigurationError(f"{source}:{number}: expected key = value, got {line!r}")
        entries[key.strip()] = value.strip()
    return entries


def read_config_file(path: str | os.PathLike[str]) -> dict[str, str]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read config file {path} ({exc.strerror})") from exc
    return parse_entries(text, str(path))
