"""
Stage timing for pipeline runs.
"""
import time
from dataclasses import asdict, dataclass
from typing import Dict, Optional

STAGES = ("features", "degrees", "svd", "kmeans")


class Benchmark:
    """Context manager for timing operations (monotonic clock)"""

    def __init__(self, name: str, timings: Optional["StageTimings"] = None):
        self.name = name
        self.timings = timings
        self.start_time = None
        self.end_time = None
        self.duration = None

    def __enter__(self):
        self.start_time = time.perf_counter()
        return self

    def __exit__(self, *args):
        self.end_time = time.perf_counter()
        self.duration = self.end_time - self.start_time
        if self.timings is not None:
            self.timings.add(self.name, self.duration)
        return False


@dataclass
class StageTimings:
    features: float = 0.0
    degrees: float = 0.0
    svd: float = 0.0
    kmeans: float = 0.0
    total: float = 0.0

    def stage(self, name: str) -> Benchmark:
        if name not in STAGES and name != "total":
            raise ValueError(f"unknown stage {name!r}")
        return Benchmark(name, self)

    def add(self, name: str, seconds: float) -> None:
        setattr(self, name, getattr(self, name) + seconds)

    def stage_sum(self) -> float:
        return sum(getattr(self, s) for s in STAGES)

    def as_dict(self) -> Dict[str, float]:
        return {f"t_{name}": value for name, value in asdict(self).items()}
