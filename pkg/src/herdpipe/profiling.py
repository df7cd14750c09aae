"""Computational profiles: measured inference latency/throughput plus the
static model description (layers, parameters, flops, weight size).

FPS is measured as window throughput and latency as the median per-call
wall clock; the two are independent measurements, not reciprocals of each
other. Static fields come from the backend's self-description, never from
local computation.
"""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass
from typing import Optional, Protocol, Sequence

from .errors import BackendError, ConfigError

WARMUP_CALLS = 3


@dataclass(frozen=True)
class ModelProfile:
    layers: Optional[int] = None
    params: Optional[int] = None
    flops: Optional[float] = None
    weight_bytes: Optional[int] = None
    fps: Optional[float] = None
    latency_ms: Optional[float] = None
    ap: Optional[float] = None

    def __post_init__(self):
        for name in ("layers", "params", "flops", "weight_bytes", "fps", "latency_ms", "ap"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ConfigError(f"profile field {name} must be >= 0, got {v}")

    def to_json_dict(self) -> dict:
        return {
            "layers": self.layers,
            "params": self.params,
            "flops": self.flops,
            "weight_bytes": self.weight_bytes,
            "fps": self.fps,
            "latency_ms": self.latency_ms,
            "ap": self.ap,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "ModelProfile":
        return cls(**{k: doc.get(k) for k in (
            "layers", "params", "flops", "weight_bytes", "fps", "latency_ms", "ap")})

    @classmethod
    def from_describe(cls, doc: dict, fps: Optional[float] = None,
                      latency_ms: Optional[float] = None, ap: Optional[float] = None) -> "ModelProfile":
        return cls(layers=int(doc["layers"]), params=int(doc["params"]),
                   flops=float(doc["flops"]), weight_bytes=int(doc["weight_bytes"]),
                   fps=fps, latency_ms=latency_ms, ap=ap)


class InferenceBackend(Protocol):
    def infer(self, image_ref): ...


def profile_backend(
    backend: InferenceBackend,
    probe_images: Sequence,
    trials: int,
    warmup: int = WARMUP_CALLS,
) -> tuple[float, float]:
    """(median latency in ms, throughput in fps) over sequential inference.

    Probe images are cycled when trials exceeds their count. Calls run
    strictly sequentially: concurrency would corrupt the latency numbers.
    """
    if trials < 1:
        raise ConfigError(f"trials must be >= 1, got {trials}")
    if not probe_images:
        raise ConfigError("need at least one probe image")
    for i in range(warmup):
        backend.infer(probe_images[i % len(probe_images)])
    durations = []
    window_start = time.perf_counter()
    for i in range(trials):
        start = time.perf_counter()
        backend.infer(probe_images[i % len(probe_images)])
        durations.append(time.perf_counter() - start)
    elapsed = time.perf_counter() - window_start
    if elapsed <= 0:
        raise BackendError("zero elapsed time while profiling; clock fault")
    latency_ms = statistics.median(durations) * 1000.0
    fps = trials / elapsed
    return latency_ms, fps


def format_si(value: float, unit: str = "") -> str:
    """Counts as 11.1M / 28.4G style figures."""
    for threshold, suffix in ((1e9, "G"), (1e6, "M"), (1e3, "k")):
        if value >= threshold:
            return f"{value / threshold:.1f}{suffix}{unit}"
    return f"{value:g}{unit}"


PROFILE_COLUMNS = (
    "Model", "Epoch", "Size", "#Layers", "#Params", "FLOPs", "Weight",
    "FPS", "Inference (ms)", "AP",
)


def render_profile_table(rows: Sequence[dict]) -> str:
    """Aligned text table of model properties; one dict per run with keys
    Model/Epoch/Size plus a ModelProfile under "profile"."""
    cells = [list(PROFILE_COLUMNS)]
    for row in rows:
        p: ModelProfile = row["profile"]
        cells.append(
            [
                str(row["Model"]),
                str(row["Epoch"]),
                str(row["Size"]),
                "" if p.layers is None else str(p.layers),
                "" if p.params is None else format_si(p.params),
                "" if p.flops is None else format_si(p.flops),
                "" if p.weight_bytes is None else f"{p.weight_bytes / 1e6:.1f}Mb",
                "" if p.fps is None else f"{p.fps:g}",
                "" if p.latency_ms is None else f"{p.latency_ms:g}",
                "" if p.ap is None else f"{p.ap:g}",
            ]
        )
    widths = [max(len(r[i]) for r in cells) for i in range(len(PROFILE_COLUMNS))]
    lines = ["  ".join(c.ljust(widths[i]) for i, c in enumerate(row)).rstrip() for row in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)
