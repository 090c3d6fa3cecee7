"""Latency harness and model-efficiency comparison.

A detector adapter is any callable taking one input and returning either
its output or ``(output, self_reported_ms)``. The harness always times the
call itself with a monotonic clock and runs strictly one call at a time.
``SubprocessAdapter`` wraps an external command speaking a line protocol:
one input path per line on stdin, one prediction-file path per line back
on stdout.
"""

from __future__ import annotations

import json
import math
import shlex
import statistics
import subprocess
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import yaml

from detkit.errors import DetkitError, UsageError, ValidationError

#: Floor applied to each sample so a no-op detector cannot produce fps = inf.
MIN_SAMPLE_MS = 1e-3


@dataclass(frozen=True)
class LatencyStats:
    samples_ms: tuple[float, ...]
    mean_ms: float
    median_ms: float
    p95_ms: float
    fps: float
    self_reported_mean_ms: float | None = None

    @property
    def count(self) -> int:
        return len(self.samples_ms)

    @classmethod
    def from_samples(cls, samples_ms: Sequence[float], self_reported: Sequence[float] = ()) -> "LatencyStats":
        if not samples_ms:
            raise ValidationError("no latency samples")
        s = tuple(max(float(x), MIN_SAMPLE_MS) for x in samples_ms)
        mean = math.fsum(s) / len(s)
        median = statistics.median(s)
        p95 = float(np.percentile(s, 95))
        return cls(
            samples_ms=s,
            mean_ms=mean,
            median_ms=median,
            p95_ms=max(p95, median),
            fps=1000.0 / mean,
            self_reported_mean_ms=(math.fsum(self_reported) / len(self_reported)) if self_reported else None,
        )

    def as_dict(self) -> dict:
        return {
            "samples": self.count,
            "mean_ms": self.mean_ms,
            "median_ms": self.median_ms,
            "p95_ms": self.p95_ms,
            "fps": self.fps,
            "self_reported_mean_ms": self.self_reported_mean_ms,
            "timing": "end-to-end adapter wall clock",
        }


class BenchmarkAborted(DetkitError):
    """Detector failed mid-run. ``partial`` holds stats over completed calls, if any."""

    def __init__(self, message: str, partial: LatencyStats | None, completed: int):
        super().__init__(message)
        self.partial = partial
        self.completed = completed


def benchmark(
    detector: Callable,
    inputs: Sequence,
    warmup: int = 5,
    iterations: int = 50,
    clock: Callable[[], int] = time.perf_counter_ns,
) -> LatencyStats:
    """Time ``iterations`` serialized detector calls after ``warmup`` untimed ones.

    Inputs are cycled in order.
    """
    if iterations < 1:
        raise UsageError("iterations must be >= 1")
    if warmup < 0:
        raise UsageError("warmup must be >= 0")
    if not inputs:
        raise UsageError("benchmark needs at least one input")
    samples: list[float] = []
    reported: list[float] = []
    for k in range(warmup + iterations):
        item = inputs[k % len(inputs)]
        t0 = clock()
        try:
            out = detector(item)
        except Exception as exc:
            partial = LatencyStats.from_samples(samples, reported) if samples else None
            raise BenchmarkAborted(
                f"detector failed on call {k + 1} ({'warmup' if k < warmup else 'timed'}): {exc}",
                partial,
                len(samples),
            ) from exc
        elapsed_ms = (clock() - t0) / 1e6
        if k < warmup:
            continue
        samples.append(elapsed_ms)
        if isinstance(out, tuple) and len(out) == 2 and isinstance(out[1], (int, float)):
            reported.append(float(out[1]))
    return LatencyStats.from_samples(samples, reported)


class SubprocessAdapter:
    """Keeps one adapter process alive and exchanges a line per call."""

    def __init__(self, command: str | Sequence[str], cwd: str | Path | None = None):
        self.argv = shlex.split(command) if isinstance(command, str) else list(command)
        if not self.argv:
            raise UsageError("empty adapter command")
        self.cwd = cwd
        self.proc: subprocess.Popen | None = None

    def start(self) -> "SubprocessAdapter":
        try:
            self.proc = subprocess.Popen(
                self.argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
                cwd=self.cwd,
            )
        except OSError as exc:
            raise UsageError(f"cannot start adapter {self.argv[0]!r}: {exc}") from None
        return self

    def __call__(self, input_path) -> str:
        if self.proc is None:
            self.start()
        assert self.proc.stdin is not None and self.proc.stdout is not None
        try:
            self.proc.stdin.write(f"{input_path}\n")
            self.proc.stdin.flush()
        except BrokenPipeError:
            raise RuntimeError(f"adapter exited with code {self.proc.poll()}") from None
        line = self.proc.stdout.readline()
        if not line:
            raise RuntimeError(f"adapter closed its output (exit code {self.proc.wait()})")
        return line.rstrip("\r\n")

    def close(self, timeout: float = 5.0) -> None:
        if self.proc is None:
            return
        try:
            if self.proc.stdin:
                self.proc.stdin.close()
            self.proc.wait(timeout=timeout)
        except (subprocess.TimeoutExpired, BrokenPipeError):
            self.proc.kill()
            self.proc.wait()
        finally:
            if self.proc.stdout:
                self.proc.stdout.close()
            self.proc = None

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.close()


@dataclass(frozen=True)
class ModelMeta:
    """Declared complexity figures for one model; nothing here is computed."""

    name: str
    params_m: float
    gflops: float
    latency_ms: float

    def __post_init__(self):
        for attr in ("params_m", "gflops", "latency_ms"):
            v = float(getattr(self, attr))
            if not (math.isfinite(v) and v > 0):
                raise ValidationError(f"{self.name}: {attr} must be a positive number, got {getattr(self, attr)!r}")
            object.__setattr__(self, attr, v)


@dataclass(frozen=True)
class EfficiencyRow:
    name: str
    params_m: float
    gflops: float
    latency_ms: float
    fps: float
    param_ratio: float
    gflops_ratio: float
    latency_increase_pct: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


_MODEL_KEYS = {"name", "params_m", "gflops", "latency_ms"}


def load_models(path: str | Path) -> list[ModelMeta]:
    """Read model rows from JSON or YAML: a list, or ``{"models": [...]}``."""
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"models file not found: {path}")
    text = path.read_text(encoding="utf-8")
    data = json.loads(text) if path.suffix.lower() == ".json" else yaml.safe_load(text)
    if isinstance(data, dict):
        data = data.get("models")
    if not data:
        raise UsageError(f"{path}: no models listed")
    if not isinstance(data, list):
        raise ValidationError(f"{path}: expected a list of models")
    models = []
    for i, row in enumerate(data):
        if not isinstance(row, dict):
            raise ValidationError(f"{path}: model {i} is not a mapping")
        unknown = set(row) - _MODEL_KEYS
        missing = _MODEL_KEYS - set(row)
        if unknown or missing:
            raise ValidationError(f"{path}: model {i}: unknown keys {sorted(unknown)}, missing {sorted(missing)}")
        models.append(ModelMeta(**row))
    return models


def efficiency_report(models: Sequence[ModelMeta]) -> list[EfficiencyRow]:
    """FPS per model and ratios against the first (baseline) model.

    Latency increase is ``(b - a) / a`` in percent.
    """
    if len(models) < 2:
        raise UsageError("efficiency report needs at least two models")
    base = models[0]
    return [
        EfficiencyRow(
            name=m.name,
            params_m=m.params_m,
            gflops=m.gflops,
            latency_ms=m.latency_ms,
            fps=1000.0 / m.latency_ms,
            param_ratio=m.params_m / base.params_m,
            gflops_ratio=m.gflops / base.gflops,
            latency_increase_pct=100.0 * (m.latency_ms - base.latency_ms) / base.latency_ms,
        )
        for m in models
    ]
