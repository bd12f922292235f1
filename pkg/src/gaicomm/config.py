"""Run configuration: JSON schema, defaults and conversion to library objects."""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import jsonschema

from .channel import ChannelConfig
from .encoder import EncoderConfig
from .heads import TaskSpec


class ConfigError(ValueError):
    pass


_NUM = {"type": "number"}
_POS_INT = {"type": "integer", "minimum": 1}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "encoder": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "preset": {"enum": ["resnet18", "resnet34"]},
                "width": {"type": "number", "exclusiveMinimum": 0},
                "in_channels": _POS_INT,
                "input_size": {"type": "array", "items": _POS_INT, "minItems": 2, "maxItems": 2},
                "channels": {"type": "array", "items": _POS_INT, "minItems": 1},
                "strides": {"type": "array", "items": _POS_INT, "minItems": 1},
            },
        },
        "gai": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "architecture": {"enum": ["full", "gai_w", "simp_att", "basic_multitask"]},
                "c_out": {"type": ["integer", "null"], "minimum": 1},
                "iterations": _POS_INT,
                "c_rm": _POS_INT,
                "leaky_slope": _NUM,
                "normalize_task_weights": {"type": "boolean"},
                "shared_attention_vector": {"type": "boolean"},
            },
        },
        "tasks": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["kind"],
                "properties": {
                    "kind": {
                        "enum": [
                            "segmentation",
                            "depth",
                            "surface_normal",
                            "keypoint",
                            "edge",
                            "classification",
                        ]
                    },
                    "name": {"type": "string"},
                    "num_classes": {"type": "integer", "minimum": 0},
                    "loss_weight": {"type": ["number", "null"], "exclusiveMinimum": 0},
                    "dilation": {"enum": [6, 12, 18, 24]},
                },
            },
        },
        "channel": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "mode": {"enum": ["noiseless", "awgn", "rayleigh"]},
                "snr_db": {"type": ["number", "null"]},
                "transmit_power": {"type": "number", "exclusiveMinimum": 0},
                "rayleigh_scale": {"type": "number", "exclusiveMinimum": 0},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "bandwidth": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "ratio": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "adapter_epochs": {"type": "integer", "minimum": 0},
            },
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "learning_rate": {"type": "number", "minimum": 0},
                "batch_size": _POS_INT,
                "beta1": _NUM,
                "beta2": _NUM,
                "epsilon": {"type": "number", "exclusiveMinimum": 0},
                "max_epochs": {"type": "integer", "minimum": 0},
                "patience": _POS_INT,
                "n_train": _POS_INT,
                "n_val": _POS_INT,
                "num_classes": {"type": "integer", "minimum": 2},
                "decoder_hidden": _POS_INT,
                "train_snr_db": {"type": ["number", "null"]},
                "train_channel_mode": {"enum": ["awgn", "rayleigh"]},
                "loss_weights": {
                    "oneOf": [
                        {"const": "auto"},
                        {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
                    ]
                },
            },
        },
        "seed": {"type": "integer", "minimum": 0},
    },
}

DEFAULTS = {
    "encoder": {"preset": "resnet18", "width": 1.0, "in_channels": 3, "input_size": [32, 32]},
    "gai": {
        "architecture": "full",
        "c_out": None,
        "iterations": 1,
        "c_rm": 256,
        "leaky_slope": 0.2,
        "normalize_task_weights": False,
        "shared_attention_vector": True,
    },
    "tasks": [{"kind": "segmentation", "num_classes": 4}, {"kind": "depth"}],
    "channel": {"mode": "awgn", "snr_db": None, "transmit_power": 1.0, "rayleigh_scale": 0.2, "seed": 1_000_003},
    "bandwidth": {"ratio": None, "adapter_epochs": 3},
    "train": {
        "learning_rate": 1e-4,
        "batch_size": 8,
        "beta1": 0.9,
        "beta2": 0.999,
        "epsilon": 1e-8,
        "max_epochs": 30,
        "patience": 10,
        "n_train": 512,
        "n_val": 64,
        "num_classes": 4,
        "decoder_hidden": 64,
        "train_snr_db": None,
        "train_channel_mode": "awgn",
        "loss_weights": "auto",
    },
    "seed": 0,
}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


@dataclass
class RunConfig:
    """A fully resolved run description (defaults merged in)."""

    raw: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        try:
            jsonschema.validate(doc, SCHEMA)
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"invalid config at {where}: {exc.message}") from None
        cfg = cls(_merge(DEFAULTS, doc))
        try:
            cfg.encoder_config()
            cfg.task_specs()
            cfg.channel_config()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        return cfg

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from None
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        return copy.deepcopy(self.raw)

    def with_overrides(self, **sections) -> "RunConfig":
        return RunConfig.from_dict(_merge(self.raw, sections))

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    def encoder_config(self) -> EncoderConfig:
        enc = self.raw["encoder"]
        size = tuple(enc["input_size"])
        if "channels" in enc or "strides" in enc:
            return EncoderConfig(enc["in_channels"], size, tuple(enc["channels"]), tuple(enc["strides"]))
        preset = EncoderConfig.resnet34 if enc["preset"] == "resnet34" else EncoderConfig.resnet18
        base = preset(size, enc["width"])
        return EncoderConfig(enc["in_channels"], size, base.channels, base.strides)

    def task_specs(self) -> List[TaskSpec]:
        specs = []
        for t in self.raw["tasks"]:
            t = dict(t)
            if t["kind"] in ("segmentation", "classification"):
                t.setdefault("num_classes", self.raw["train"]["num_classes"])
            specs.append(TaskSpec(**t))
        return specs

    def channel_config(self, mode: Optional[str] = None, snr_db: Optional[float] = None) -> ChannelConfig:
        ch = self.raw["channel"]
        snr = ch["snr_db"] if snr_db is None else snr_db
        return ChannelConfig(
            snr_db=math.inf if snr is None else float(snr),
            transmit_power=ch["transmit_power"],
            mode=mode or ch["mode"],
            rayleigh_scale=ch["rayleigh_scale"],
            seed=ch["seed"],
        )

    @property
    def bandwidth_ratio(self) -> Optional[float]:
        return self.raw["bandwidth"]["ratio"]
