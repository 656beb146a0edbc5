"""Run configuration, seed derivation, and run manifests.

Config files are flat "key = value" text. Precedence is CLI override,
then file, then the built-in defaults, and the fully resolved result is
echoed into every run manifest so outputs stay auditable.
"""

import dataclasses
import hashlib
import json
from dataclasses import dataclass

from . import __version__
from .encoders import ARCHS
from .models import VARIANTS


class ConfigError(ValueError):
    """A config key, value, or combination is invalid."""


@dataclass
class TrainConfig:
    variant: str = "CASLU"
    arch: str = "bilstm"
    max_len_text: int = 40
    max_len_phonemes: int = 80
    batch_size: int = 64
    epochs: int = 20
    lr: float = 0.001
    hidden: int = 150
    d_w: int = 128
    d_p: int = 0            # 0 means tie to d_w
    seeds: tuple = (1, 2, 3)
    vat_lambda: float = 1.0
    nbest_n: int = 3
    init_range: float = 0.1
    min_count: int = 1
    epsilon: float = 1e-8
    premask: bool = True
    clip_norm: float = 0.0  # 0 disables; 5 is the divergence-recovery setting
    wer_boundaries: tuple = (0.3, 0.6)

    def validate(self) -> "TrainConfig":
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.arch not in ARCHS:
            raise ConfigError(f"unknown arch {self.arch!r}")
        positive = ("max_len_text", "max_len_phonemes", "batch_size", "epochs",
                    "lr", "hidden", "d_w", "init_range", "epsilon", "nbest_n")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("d_p", "vat_lambda", "clip_norm", "min_count"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if len(self.wer_boundaries) != 2 or not 0 < self.wer_boundaries[0] < self.wer_boundaries[1]:
            raise ConfigError("wer_boundaries must be two increasing positives")
        return self

    def resolved(self) -> dict:
        out = dataclasses.asdict(self)
        out["seeds"] = list(self.seeds)
        out["wer_boundaries"] = list(self.wer_boundaries)
        return out


_TUPLE_ELEM = {"seeds": int, "wer_boundaries": float}
_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(TrainConfig)}


def _coerce(name, value):
    if name not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key {name!r}")
    if not isinstance(value, str):
        return value
    kind = _FIELD_TYPES[name]
    try:
        if kind is tuple:
            elem = _TUPLE_ELEM[name]
            return tuple(elem(part) for part in value.split(",") if part.strip())
        if kind is bool:
            low = value.strip().lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(value)
        return kind(value)
    except ValueError as exc:
        raise ConfigError(f"bad value for {name!r}: {value!r}") from exc


def parse_config_file(path) -> dict:
    """Flat key = value lines; '#' comments; values stay raw strings."""
    raw = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, value = line.split("=", 1)
            raw[key.strip()] = value.strip()
    return raw


def load_config(path=None, overrides=None) -> TrainConfig:
    """Defaults, then the file, then overrides; validated."""
    values = {}
    if path is not None:
        values.update(parse_config_file(path))
    values.update(overrides or {})
    cfg = TrainConfig(**{k: _coerce(k, v) for k, v in values.items()})
    return cfg.validate()


# ---------------------------------------------------------------------------
# seeds

def derive_seed(master: int, stream: str, index: int = 0) -> int:
    """Named 64-bit seed stream off one master seed.

    Streams (data/init/shuffle/...) decorrelate subsystems while keeping
    every number a pure function of the master seed.
    """
    digest = hashlib.sha256(f"{master}:{stream}:{index}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


# ---------------------------------------------------------------------------
# manifests

def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def build_manifest(config: dict, seeds, inputs: dict) -> dict:
    """Everything needed to reproduce a run; no timestamps by design."""
    return {
        "tool": "caslu",
        "version": __version__,
        "config": config,
        "seeds": list(seeds),
        "inputs": {name: {"path": str(path), "sha256": file_digest(path)}
                   for name, path in sorted(inputs.items())},
    }


def write_manifest(path, manifest: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
