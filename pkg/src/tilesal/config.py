"""Run configuration shared by the command-line subcommands."""
from __future__ import annotations

import os
from dataclasses import dataclass, fields

THREADS_ENV = "TILESAL_THREADS"


def default_workers() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ValueError(f"{THREADS_ENV} must be a positive integer, got {env!r}") from None
        if n < 1:
            raise ValueError(f"{THREADS_ENV} must be a positive integer, got {env!r}")
        return n
    return os.cpu_count() or 1


@dataclass
class RunConfig:
    seed: int = 0
    sigma: float = 19.0  # blur, pixels at 480-row resolution
    emd_grid: int = 32
    borji_splits: int = 100
    workers: int = 0  # 0 = default_workers()
    encoding: int = 32  # weight file bits per value: 32 or 16
    batch_size: int = 48
    lr: float = 1e-3
    epochs: int = 1

    def __post_init__(self):
        checks = {
            "sigma": self.sigma > 0,
            "emd_grid": 1 <= self.emd_grid <= 128,
            "borji_splits": self.borji_splits >= 1,
            "workers": self.workers >= 0,
            "encoding": self.encoding in (16, 32),
            "batch_size": self.batch_size >= 1,
            "lr": 0 < self.lr < 1,
            "epochs": self.epochs >= 0,
            "seed": self.seed >= 0,
        }
        bad = [name for name, ok in checks.items() if not ok]
        if bad:
            raise ValueError(f"invalid configuration values: {', '.join(bad)}")
        if self.workers == 0:
            self.workers = default_workers()

    @property
    def encoding_code(self) -> int:
        return 0 if self.encoding == 32 else 1

    @classmethod
    def from_namespace(cls, ns) -> "RunConfig":
        kwargs = {f.name: getattr(ns, f.name) for f in fields(cls) if getattr(ns, f.name, None) is not None}
        return cls(**kwargs)
