"""Subgroup assembly: individual, overlapping, and non-overlapping windows.

An assembler consumes time-ordered observations and emits p-by-n windows:

* individual       -- every observation, as a single column
* non_overlapping  -- disjoint blocks, emitted at t = n, 2n, 3n, ...
* overlapping      -- sliding blocks, emitted at every t >= n

Emitted windows copy their data, so downstream consumers own them.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from .errors import ConfigError, DataError
from .model import Observation


class AggregationMode(str, Enum):
    INDIVIDUAL = "individual"
    NON_OVERLAPPING = "non_overlapping"
    OVERLAPPING = "overlapping"


@dataclass(frozen=True)
class AggregationPolicy:
    mode: AggregationMode
    n: int = 1

    def __post_init__(self):
        if self.mode is AggregationMode.INDIVIDUAL:
            if self.n != 1:
                raise ConfigError("individual aggregation implies subgroup size n=1")
        elif self.n < 2:
            raise ConfigError(f"grouped aggregation needs n >= 2, got n={self.n}")

    @classmethod
    def individual(cls) -> "AggregationPolicy":
        return cls(AggregationMode.INDIVIDUAL, 1)

    @classmethod
    def non_overlapping(cls, n: int) -> "AggregationPolicy":
        return cls(AggregationMode.NON_OVERLAPPING, n)

    @classmethod
    def overlapping(cls, n: int) -> "AggregationPolicy":
        return cls(AggregationMode.OVERLAPPING, n)


@dataclass(frozen=True)
class SubgroupWindow:
    """The n most recent observations ending at end_time, as p-by-n columns."""

    end_time: int
    columns: np.ndarray

    @property
    def n(self) -> int:
        return self.columns.shape[1]

    @property
    def p(self) -> int:
        return self.columns.shape[0]


class SubgroupAssembler:
    """Streaming window builder for one observation sequence."""

    def __init__(self, policy: AggregationPolicy):
        self.policy = policy
        self._buffer: deque[np.ndarray] = deque(maxlen=policy.n)
        self._last_time: Optional[int] = None
        self._count = 0

    def push(self, obs: Observation) -> Optional[SubgroupWindow]:
        """Feed one observation; return a window when the policy emits one."""
        t = int(obs.t)
        if self._last_time is not None and t <= self._last_time:
            raise DataError(
                f"out-of-order observation: time {t} after {self._last_time}"
            )
        self._last_time = t
        self._count += 1
        self._buffer.append(np.asarray(obs.x, dtype=np.float64))

        n = self.policy.n
        if self.policy.mode is AggregationMode.INDIVIDUAL:
            return self._emit(t)
        if len(self._buffer) < n:
            return None
        if self.policy.mode is AggregationMode.OVERLAPPING:
            return self._emit(t)
        if self._count % n == 0:
            return self._emit(t)
        return None

    def _emit(self, end_time: int) -> SubgroupWindow:
        cols = np.stack(self._buffer, axis=1).copy()
        return SubgroupWindow(end_time=end_time, columns=cols)

    def reset(self) -> None:
        self._buffer.clear()
        self._last_time = None
        self._count = 0

    def get_state(self) -> dict:
        """Serializable state: pending rows, last time index, push count."""
        return {
            "pending": [list(map(float, row)) for row in self._buffer],
            "last_time": self._last_time,
            "count": self._count,
        }

    def set_state(self, state: dict) -> None:
        self.reset()
        for row in state["pending"]:
            self._buffer.append(np.asarray(row, dtype=np.float64))
        self._last_time = state["last_time"]
        self._count = int(state["count"])
