"""Experiment configuration: one JSON document, validated against a schema."""
from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass
from pathlib import Path

import jsonschema

from ..corpus import Corpus, from_spec, import_jsonl, split
from ..diffusion import DecodeOptions
from ..errors import InvalidInput
from ..masking import MaskSchedule
from ..model import ModelConfig
from ..samplers import KINDS, SamplerConfig

_POS_INT = {"type": "integer", "minimum": 1}
_NONNEG_INT = {"type": "integer", "minimum": 0}

SCHEMA = {
    "type": "object",
    "required": ["model", "corpus"],
    "additionalProperties": False,
    "properties": {
        "model": {
            "type": "object",
            "required": ["vocab_size", "dim", "max_len"],
            "additionalProperties": False,
            "properties": {
                "vocab_size": {"type": "integer", "minimum": 3},
                "dim": _POS_INT,
                "layers": _POS_INT,
                "heads": _POS_INT,
                "max_len": _POS_INT,
            },
        },
        "corpus": {
            "type": "object",
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["copy", "markov", "file"]},
                "half_len": _POS_INT,
                "seq_len": {"type": "integer", "minimum": 2},
                "num_sequences": _POS_INT,
                "transition_concentration": {"type": "number", "exclusiveMinimum": 0},
                "seed": _NONNEG_INT,
                "path": {"type": "string"},
            },
            "additionalProperties": False,
            "allOf": [
                {"if": {"properties": {"kind": {"const": "copy"}}},
                 "then": {"required": ["half_len", "num_sequences"]}},
                {"if": {"properties": {"kind": {"const": "markov"}}},
                 "then": {"required": ["seq_len", "num_sequences", "transition_concentration"]}},
                {"if": {"properties": {"kind": {"const": "file"}}}, "then": {"required": ["path"]}},
            ],
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "steps": _NONNEG_INT,
                "learning_rate": {"type": "number", "minimum": 0},
                "seed": _NONNEG_INT,
                "batch_size": _POS_INT,
                "momentum": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "clip_norm": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "init_std": {"type": "number", "exclusiveMinimum": 0},
                "train_fraction": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "split_seed": _NONNEG_INT,
                "mask_schedule": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "kind": {"enum": ["uniform_fraction", "per_step_linear"]},
                        "min_fraction": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                        "num_levels": _POS_INT,
                    },
                },
            },
        },
        "decode": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "block_size": _POS_INT,
                "sub_block_size": _POS_INT,
                "block_start": _NONNEG_INT,
                "scoring": {"enum": ["block", "visible"]},
                "frozen_attention": {"type": "boolean"},
            },
        },
        "samplers": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["kind"],
                "additionalProperties": False,
                "properties": {
                    "kind": {"enum": list(KINDS)},
                    "tau": {"type": "number", "exclusiveMinimum": 0},
                    "k": _POS_INT,
                    "static_threshold": {"type": "number"},
                    "seed": _NONNEG_INT,
                },
            },
        },
        "evaluation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"num_blocks": _POS_INT, "seed": _NONNEG_INT},
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"dir": {"type": "string"}, "checkpoint": {"type": "string"}},
        },
    },
}

DEFAULTS = {
    "model": {"layers": 1, "heads": 1},
    "corpus": {"seed": 0},
    "train": {"steps": 2000, "learning_rate": 0.3, "seed": 0, "batch_size": 64, "momentum": 0.9,
              "clip_norm": 1.0, "init_std": 0.02, "train_fraction": 0.8, "split_seed": 0,
              "mask_schedule": {"kind": "uniform_fraction"}},
    "decode": {"block_size": 4, "scoring": "block", "frozen_attention": False},
    "samplers": [{"kind": "attn_sequential"}],
    "evaluation": {"num_blocks": 200, "seed": 0},
    "output": {"dir": "out"},
}


class ConfigError(InvalidInput):
    pass


def _merge(defaults: dict, given: dict) -> dict:
    out = copy.deepcopy(defaults)
    for key, val in given.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


@dataclass
class ExperimentConfig:
    raw: dict
    base_dir: Path

    @property
    def model(self) -> ModelConfig:
        return ModelConfig(**self.raw["model"])

    @property
    def train(self) -> dict:
        return self.raw["train"]

    @property
    def decode(self) -> dict:
        return self.raw["decode"]

    @property
    def evaluation(self) -> dict:
        return self.raw["evaluation"]

    @property
    def samplers(self) -> list[SamplerConfig]:
        return [SamplerConfig.from_dict(s) for s in self.raw["samplers"]]

    @property
    def mask_schedule(self) -> MaskSchedule:
        return MaskSchedule.from_dict(self.train["mask_schedule"])

    @property
    def out_dir(self) -> Path:
        return self._resolve(self.raw["output"]["dir"])

    @property
    def checkpoint_path(self) -> Path:
        ck = self.raw["output"].get("checkpoint")
        return self._resolve(ck) if ck else self.out_dir / "checkpoint.json"

    def _resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p

    def corpus(self) -> Corpus:
        spec = dict(self.raw["corpus"])
        kind = spec.pop("kind")
        if kind == "file":
            c = import_jsonl(self._resolve(spec["path"]))
        else:
            spec.pop("path", None)
            c = from_spec({"name": kind, "vocab_size": self.raw["model"]["vocab_size"], **spec})
        if c.vocab_size != self.raw["model"]["vocab_size"]:
            raise ConfigError(f"corpus vocab_size {c.vocab_size} != model vocab_size {self.raw['model']['vocab_size']}")
        if c.seq_len > self.raw["model"]["max_len"]:
            raise ConfigError(f"corpus sequences of length {c.seq_len} exceed model max_len")
        return c

    def splits(self) -> tuple[Corpus, Corpus]:
        return split(self.corpus(), self.train["train_fraction"], self.train["split_seed"])

    def block_range(self, seq_len: int) -> tuple[int, int]:
        b = self.decode["block_size"]
        start = self.decode.get("block_start", seq_len - b)
        if start < 1 or start + b > seq_len:
            raise ConfigError(f"block [{start}, {start + b}) does not fit sequences of length {seq_len} "
                              "with a nonempty prompt")
        return start, start + b

    def decode_options(self, **overrides) -> DecodeOptions:
        kw = {"scoring": self.decode["scoring"], "frozen_attention": self.decode["frozen_attention"]}
        kw.update(overrides)
        return DecodeOptions(**kw)

    @property
    def sub_block_size(self) -> int:
        return self.decode.get("sub_block_size", self.decode["block_size"])


def validate(raw: dict) -> None:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {err.message}")


def load_config(path, seed: int | None = None, out_dir: str | None = None) -> ExperimentConfig:
    """Read, validate and default-fill a config file; CLI overrides applied last."""
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    validate(raw)
    merged = _merge(DEFAULTS, raw)
    if "samplers" in raw:
        merged["samplers"] = copy.deepcopy(raw["samplers"])
    if seed is not None:
        merged["train"]["seed"] = seed
        merged["evaluation"]["seed"] = seed
    if out_dir is not None:
        merged["output"]["dir"] = os.path.abspath(out_dir)
    validate(merged)
    cfg = ExperimentConfig(merged, Path(path).resolve().parent)
    try:
        cfg.model
        cfg.samplers
        cfg.mask_schedule
        if cfg.decode["block_size"] % cfg.sub_block_size:
            raise ConfigError("decode.sub_block_size must divide decode.block_size")
    except ConfigError:
        raise
    except InvalidInput as exc:
        raise ConfigError(f"config error: {exc}") from None
    return cfg
