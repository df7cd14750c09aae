"""Shared CLI configuration: one structured file (YAML or JSON) mirroring
the component configs, with per-flag overrides applied by the CLI.

Lookup order for the file itself: --config flag, then the
HERDPIPE_CONFIG environment variable, then built-in defaults.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .annotate import BackendSpec
from .errors import ConfigError
from .pipeline import PipelineConfig

ENV_VAR = "HERDPIPE_CONFIG"


@dataclass
class CliConfig:
    dataset_root: Optional[str] = None
    class_prompts: tuple[str, ...] = ()
    seed: int = 0
    jobs: int = 1
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    teacher: Optional[BackendSpec] = None
    segmenter: Optional[BackendSpec] = None
    trainer: Optional[BackendSpec] = None
    iou_thresholds: Optional[tuple[float, ...]] = None
    confidence_steps: int = 101

    @classmethod
    def from_dict(cls, doc: dict) -> "CliConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(doc)
        if "pipeline" in kwargs:
            pipeline_doc = dict(kwargs["pipeline"])
            pipeline_doc.setdefault("rng_seed", doc.get("seed", 0))
            kwargs["pipeline"] = PipelineConfig.from_dict(pipeline_doc)
        for backend_key in ("teacher", "segmenter", "trainer"):
            if kwargs.get(backend_key) is not None:
                kwargs[backend_key] = BackendSpec(**kwargs[backend_key])
        if kwargs.get("class_prompts") is not None:
            kwargs["class_prompts"] = tuple(kwargs["class_prompts"])
        if kwargs.get("iou_thresholds") is not None:
            kwargs["iou_thresholds"] = tuple(float(t) for t in kwargs["iou_thresholds"])
        return cls(**kwargs)

    @classmethod
    def load(cls, path: Optional[str]) -> "CliConfig":
        if path is None:
            path = os.environ.get(ENV_VAR)
        if path is None:
            return cls()
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        text = p.read_text()
        if p.suffix == ".json":
            try:
                doc = json.loads(text)
            except json.JSONDecodeError as e:
                raise ConfigError(f"{p}: invalid JSON: {e}") from e
        else:
            try:
                doc = yaml.safe_load(text)
            except yaml.YAMLError as e:
                raise ConfigError(f"{p}: invalid YAML: {e}") from e
        if doc is None:
            doc = {}
        if not isinstance(doc, dict):
            raise ConfigError(f"{p}: config must be a mapping")
        return cls.from_dict(doc)
