"""Run configuration shared by the CLI and the experiment scripts."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from .decomposer import CompressionSpec, Mode
from .errors import ConfigError


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    # toy model
    vocab_size: int = 16
    embed_dim: int = 8
    hidden: int = 16
    tied: bool = True
    fit_steps: int = 300
    lr: float = 0.05
    # corpus
    seq_len: int = 32
    num_sequences: int = 64
    eval_sequences: int = 64
    concentration: float = 0.3
    # calibration / decomposition
    dampening: float = 0.1
    temperature: float = 1.0
    ratio: float | None = 0.2
    rank: int | None = None
    mode: str = "obd"
    trace_dtype: str = "f64"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def need(cond: bool, msg: str):
            if not cond:
                raise ConfigError(msg)

        need(self.vocab_size >= 2, "vocab_size must be >= 2")
        need(self.embed_dim >= 1 and self.hidden >= 1, "embed_dim and hidden must be >= 1")
        need(self.fit_steps >= 0, "fit_steps must be >= 0")
        need(self.lr > 0, "lr must be positive")
        need(self.seq_len >= 2, "seq_len must be >= 2")
        need(self.num_sequences >= 1, "num_sequences must be >= 1")
        need(self.eval_sequences >= 1, "eval_sequences must be >= 1")
        need(self.concentration > 0, "concentration must be positive")
        need(self.dampening >= 0, "dampening must be nonnegative")
        need(self.temperature > 0, "temperature must be positive")
        need((self.ratio is None) != (self.rank is None), "give exactly one of ratio or rank")
        if self.ratio is not None:
            need(0 <= self.ratio < 1, "ratio must lie in [0, 1)")
        if self.rank is not None:
            need(self.rank >= 1, "rank must be >= 1")
        need(self.mode in {m.value for m in Mode}, f"unknown mode {self.mode!r}")
        need(self.trace_dtype in ("f32", "f64"), "trace_dtype must be f32 or f64")

    def compression_spec(self, mode: str | Mode | None = None) -> CompressionSpec:
        return CompressionSpec(
            rank=self.rank, ratio=self.ratio, mode=Mode(mode or self.mode), dampening=self.dampening
        )

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
