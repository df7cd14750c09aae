"""Adapter configuration."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional


@dataclass
class AdapterConfig:
    engine: str = "synthetic"
    host: str = "127.0.0.1"
    port: int = 8601
    device: str = "cpu"
    batch_limit: int = 16  # max boxes per segment request
    journal_dir: Optional[Path] = None  # training-run JSON journals
    data_dir: Path = field(default_factory=Path.cwd)  # resolves image_path requests
    class_names: tuple[str, ...] = ("camel", "rope", "mask", "pole")
    # checkpoints for real engines; unused by the synthetic engine
    detector_checkpoint: Optional[Path] = None
    detector_config: Optional[Path] = None
    segmenter_checkpoint: Optional[Path] = None
    student_checkpoint: Optional[Path] = None

    def __post_init__(self):
        if not 0 < self.port < 65536:
            raise ValueError(f"invalid port {self.port}")
        if self.batch_limit < 1:
            raise ValueError("batch_limit must be >= 1")
        for name in ("detector_checkpoint", "detector_config",
                     "segmenter_checkpoint", "student_checkpoint"):
            p = getattr(self, name)
            if p is not None and not Path(p).exists():
                raise ValueError(f"{name} does not exist: {p}")
