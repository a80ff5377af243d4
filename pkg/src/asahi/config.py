"""Run configuration: flat ``key=value`` files merged with command-line overrides."""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Mapping

from .geom import Metric
from .nms import SuppressionConfig
from .slicing import AsahiConfig
from .fusion import POSTPROCESSORS, PipelineConfig


class ConfigError(ValueError):
    pass


def _bool(v: str) -> bool:
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


@dataclass
class RunConfig:
    overlap_ratio: float = 0.15
    limiting_dimension: int = 512
    resize_target: int = 512
    metric: str = "diou"
    threshold: float = 0.5
    class_aware: bool = True
    full_inference: bool = True
    patch_overlap: bool = True
    postprocess: str = "cluster"
    parallelism: int = os.cpu_count() or 1
    seed: int = 0

    def validate(self) -> "RunConfig":
        try:
            self.pipeline()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return self

    def pipeline(self) -> PipelineConfig:
        if self.postprocess not in POSTPROCESSORS:
            raise ValueError(f"postprocess must be one of {POSTPROCESSORS}")
        return PipelineConfig(
            asahi=AsahiConfig(self.overlap_ratio, self.limiting_dimension, self.resize_target),
            suppression=SuppressionConfig(Metric(self.metric), self.threshold, self.class_aware),
            enable_full_inference=self.full_inference,
            enable_patch_overlap=self.patch_overlap,
            postprocess=self.postprocess,
            parallelism=self.parallelism,
        )

    def as_dict(self) -> dict:
        return asdict(self)


_TYPES = {f.name: f.type for f in fields(RunConfig)}
_CONVERT = {"float": float, "int": int, "bool": _bool, "str": str}


def parse_config_text(text: str, source: str = "<config>") -> dict[str, Any]:
    """``key = value`` per line; ``#`` starts a comment; keys use underscores or dashes."""
    out = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected key=value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _TYPES:
            raise ConfigError(f"{source}:{n}: unknown key {key!r}")
        try:
            out[key] = _CONVERT[_TYPES[key]](value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{n}: bad value for {key}: {exc}") from None
    return out


def load_config(path: str | Path | None, overrides: Mapping[str, Any] | None = None) -> RunConfig:
    """File values first, then non-None ``overrides``; validated before returning."""
    values: dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        values.update(parse_config_text(text, str(path)))
    for k, v in (overrides or {}).items():
        if v is not None and k in _TYPES:
            values[k] = v
    try:
        cfg = RunConfig(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg.validate()
