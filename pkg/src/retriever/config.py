"""Run configuration: INI file with one section per component, overridden by flags.

Seeds: one run seed feeds every component. Component ``name`` draws from
``SeedSequence(seed, spawn_key=(crc32(name),))``; pools additionally key on
the dialogue id and turn index.
"""

from __future__ import annotations

import configparser
import dataclasses
import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .decoder import DecoderConfig
from .encoder import EncoderConfig
from .training import TrainConfig

DEFAULT_VOCAB_SIZE = 1000
SECTIONS = {"encoder": EncoderConfig, "decoder": DecoderConfig, "train": TrainConfig}
_NOT_CONFIGURABLE = {"vocab_size", "memory_dim"}


class ConfigError(ValueError):
    pass


def seed_sequence(seed: int, component: str) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=(zlib.crc32(component.encode("utf-8")),))


def component_rng(seed: int, component: str) -> np.random.Generator:
    return np.random.default_rng(seed_sequence(seed, component))


def _convert(raw: str, default: Any, where: str):
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no", "on", "off"):
                raise ValueError(raw)
            return low in ("true", "1", "yes", "on")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float) or default is None:
            return None if raw.strip().lower() in ("none", "off", "") else float(raw)
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r}") from None
    return raw


@dataclass
class RunConfig:
    encoder: dict = field(default_factory=dict)
    decoder: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    vocab_size: int = DEFAULT_VOCAB_SIZE

    @classmethod
    def load(cls, path=None) -> "RunConfig":
        cfg = cls()
        if path is None:
            return cfg
        parser = configparser.ConfigParser()
        try:
            with open(path, encoding="utf-8") as f:
                parser.read_file(f)
        except FileNotFoundError:
            raise ConfigError(f"{path}: config file not found") from None
        except configparser.Error as e:
            raise ConfigError(f"{path}: {e}") from None
        for section in parser.sections():
            if section == "vocab":
                for key, raw in parser.items(section):
                    if key != "max_size":
                        raise ConfigError(f"{path}: unknown key [vocab] {key}")
                    cfg.vocab_size = _convert(raw, 0, f"{path}: [vocab] {key}")
                continue
            if section not in SECTIONS:
                raise ConfigError(f"{path}: unknown section [{section}]")
            defaults = {f.name: f.default for f in dataclasses.fields(SECTIONS[section])}
            target = getattr(cfg, section)
            for key, raw in parser.items(section):
                if key not in defaults or key in _NOT_CONFIGURABLE:
                    raise ConfigError(f"{path}: unknown key [{section}] {key}")
                target[key] = _convert(raw, defaults[key], f"{path}: [{section}] {key}")
        return cfg

    def override(self, section: str, **values) -> None:
        getattr(self, section).update({k: v for k, v in values.items() if v is not None})

    def train_config(self) -> TrainConfig:
        return TrainConfig(**self.train)

    def encoder_config(self, vocab_size: int) -> EncoderConfig:
        return EncoderConfig(vocab_size=vocab_size, **self.encoder)

    def decoder_config(self, vocab_size: int) -> DecoderConfig:
        dec = dict(self.decoder)
        enc_dim = self.encoder.get("model_dim", EncoderConfig.model_dim)
        dim = dec.get("model_dim", DecoderConfig.model_dim)
        return DecoderConfig(vocab_size=vocab_size, memory_dim=None if enc_dim == dim else enc_dim, **dec)

    def resolved(self, vocab_size: int) -> dict:
        return {
            "encoder": dataclasses.asdict(self.encoder_config(vocab_size)),
            "decoder": dataclasses.asdict(self.decoder_config(vocab_size)),
            "train": dataclasses.asdict(self.train_config()),
            "vocab": {"max_size": self.vocab_size, "size": vocab_size},
        }

    def write(self, path, vocab_size: int, extra: dict | None = None) -> None:
        payload = self.resolved(vocab_size)
        payload.update(extra or {})
        Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n", encoding="utf-8")
