"""Run configuration: dataclasses seeded from config.py and key=value files"""
import os
from collections import OrderedDict
from dataclasses import dataclass, fields, replace
from enum import Enum
from typing import Dict, Iterable, List, Tuple

from config import *
from dtsl.models.network import ArchitectureKind
from dtsl.systems.consensus import ClgStrategy


class TrainMode(Enum):
    SEMI = "semi"
    SUPERVISED = "supervised"
    PLAIN = "plain"
    MT = "mt"
    PLAIN_DTSL = "plain-dtsl"
    SUPERVISED_MT = "supervised-mt"

    @classmethod
    def parse(cls, value) -> "TrainMode":
        if isinstance(value, cls):
            return value
        text = str(value).lower().replace("_", "-")
        for mode in cls:
            if mode.value == text or MODES[mode.value]["name"].lower() == text:
                return mode
        raise ValueError(f"Unknown training mode: {value}")

    @property
    def groups(self) -> int:
        return MODES[self.value]["groups"]

    @property
    def uses_unlabeled(self) -> bool:
        return MODES[self.value]["unlabeled"]

    @property
    def pace(self):
        return MODES[self.value]["pace"]

    @property
    def uses_url(self) -> bool:
        return MODES[self.value]["url"]

    @property
    def display_name(self) -> str:
        return MODES[self.value]["name"]


@dataclass
class TrainConfig:
    mode: TrainMode = TrainMode.SEMI
    strategy: ClgStrategy = ClgStrategy.DEFAULT
    max_iter: int = MAX_ITER
    labeled_batch: int = LABELED_BATCH
    unlabeled_batch: int = UNLABELED_BATCH
    eta0: float = ETA0
    omega: float = OMEGA
    kappa: float = KAPPA
    alpha: float = ALPHA
    beta: float = BETA
    seed: int = SEED
    num_classes: int = NUM_CLASSES
    base_channels: int = BASE_CHANNELS
    snapshot_every: int = SNAPSHOT_EVERY
    probe_size: int = PROBE_SIZE
    arch0: ArchitectureKind = ArchitectureKind.PLAIN
    arch1: ArchitectureKind = ArchitectureKind.RESIDUAL
    allow_same_arch: bool = False

    def validate(self) -> "TrainConfig":
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.labeled_batch < 1 or self.unlabeled_batch < 1:
            raise ValueError(f"batch sizes must be >= 1, got labeled_batch={self.labeled_batch}, "
                             f"unlabeled_batch={self.unlabeled_batch}")
        if self.eta0 <= 0:
            raise ValueError(f"eta0 must be positive, got {self.eta0}")
        if not 0.0 <= self.omega <= 1.0:
            raise ValueError(f"omega must lie in [0, 1], got {self.omega}")
        if not 0.0 <= self.kappa <= 1.0:
            raise ValueError(f"kappa must lie in [0, 1], got {self.kappa}")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError(f"alpha and beta must be non-negative, got alpha={self.alpha}, beta={self.beta}")
        if self.seed < 0:
            raise ValueError(f"seed must be non-negative, got {self.seed}")
        if not 2 <= self.num_classes <= 6:
            raise ValueError(f"num_classes must lie in 2..6, got {self.num_classes}")
        if self.base_channels < 4:
            raise ValueError(f"base_channels must be >= 4, got {self.base_channels}")
        if self.snapshot_every < 1:
            raise ValueError(f"snapshot_every must be >= 1, got {self.snapshot_every}")
        if self.probe_size < 1:
            raise ValueError(f"probe_size must be >= 1, got {self.probe_size}")
        if self.mode.groups == 2 and self.arch0 == self.arch1 and not self.allow_same_arch:
            raise ValueError(f"both groups use the {self.arch0.value} architecture; "
                             f"set allow_same_arch=true to run that ablation")
        return self


@dataclass
class CorpusConfig:
    train_count: int = TRAIN_COUNT
    test_count: int = TEST_COUNT
    image_size: int = IMAGE_SIZE
    noise_sigma: float = NOISE_SIGMA
    labeled_fraction: float = LABELED_FRACTION
    data_seed: int = SEED

    @property
    def total(self) -> int:
        return self.train_count + self.test_count

    @property
    def test_fraction(self) -> float:
        return self.test_count / self.total

    def validate(self) -> "CorpusConfig":
        if self.train_count < 1 or self.test_count < 1:
            raise ValueError(f"train_count and test_count must be >= 1, got "
                             f"{self.train_count} / {self.test_count}")
        if self.image_size <= 0 or self.image_size % 4:
            raise ValueError(f"image_size must be a positive multiple of 4, got {self.image_size}")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be non-negative, got {self.noise_sigma}")
        if not 0.0 < self.labeled_fraction <= 1.0:
            raise ValueError(f"labeled_fraction must lie in (0, 1], got {self.labeled_fraction}")
        if self.data_seed < 0:
            raise ValueError(f"data_seed must be non-negative, got {self.data_seed}")
        return self


# Manifest entries that describe the run rather than configure it
MANIFEST_ONLY_KEYS = ("version",)
LAYOUT_PREFIX = "layout."


def _parse_bool(value) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {value!r}")


def _convert(default, value, key: str):
    try:
        if isinstance(default, Enum):
            return type(default).parse(value)
        if isinstance(default, bool):
            return _parse_bool(value)
        if isinstance(default, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(f"expected an integer, got {value}")
            return int(value)
        if isinstance(default, float):
            return float(value)
    except ValueError as e:
        raise ValueError(f"{key}: {e}")
    return value


def format_setting(value) -> str:
    """Exact text form; floats keep every digit so a manifest reproduces the run"""
    if isinstance(value, Enum):
        return str(value.value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def config_pairs(*configs) -> List[Tuple[str, str]]:
    pairs = []
    for cfg in configs:
        for f in fields(cfg):
            pairs.append((f.name, format_setting(getattr(cfg, f.name))))
    return pairs


def apply_settings(train: TrainConfig, corpus: CorpusConfig,
                   settings: Dict[str, object]) -> Tuple[TrainConfig, CorpusConfig]:
    """New configs with settings applied; unknown keys raise ValueError"""
    train_keys = {f.name for f in fields(train)}
    corpus_keys = {f.name for f in fields(corpus)}
    train_updates, corpus_updates = {}, {}

    for raw_key, value in settings.items():
        key = raw_key.strip().replace("-", "_")
        if key in MANIFEST_ONLY_KEYS or key.startswith(LAYOUT_PREFIX):
            continue
        if key in train_keys:
            train_updates[key] = _convert(getattr(train, key), value, key)
        elif key in corpus_keys:
            corpus_updates[key] = _convert(getattr(corpus, key), value, key)
        else:
            raise ValueError(f"unknown setting: {raw_key}")

    return replace(train, **train_updates), replace(corpus, **corpus_updates)


def read_key_values(path: str) -> "OrderedDict[str, str]":
    """key=value lines; blank lines and # comments ignored, later keys win"""
    settings = OrderedDict()
    with open(path, "r") as f:
        for lineno, line in enumerate(f, 1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            key, sep, value = text.partition("=")
            if not sep or not key.strip():
                raise ValueError(f"{path}:{lineno}: expected key=value, got {text!r}")
            settings[key.strip()] = value.strip()
    return settings


def write_key_values(path: str, pairs: Iterable[Tuple[str, str]], comment: str = None) -> str:
    folder = os.path.dirname(path)
    if folder:
        os.makedirs(folder, exist_ok=True)
    with open(path, "w") as f:
        if comment:
            f.write(f"# {comment}\n")
        for key, value in pairs:
            f.write(f"{key}={value}\n")
    return path


def load_config_file(path: str, train: TrainConfig = None,
                     corpus: CorpusConfig = None) -> Tuple[TrainConfig, CorpusConfig]:
    return apply_settings(train or TrainConfig(), corpus or CorpusConfig(), read_key_values(path))
