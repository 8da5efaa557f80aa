"""Bounded-uncertainty clocks: every reading is an interval that brackets true time."""

import threading
import time
from dataclasses import dataclass

MS = 1_000_000
SECOND = 1_000_000_000

DEFAULT_EPSILON = 50 * MS


@dataclass(frozen=True)
class TimeRange:
    earliest: int
    latest: int

    def __post_init__(self):
        if self.earliest > self.latest:
            raise ValueError(f"earliest {self.earliest} > latest {self.latest}")

    def contains(self, t: int) -> bool:
        return self.earliest <= t <= self.latest

    @property
    def width(self) -> int:
        return self.latest - self.earliest


@dataclass(frozen=True)
class ClockConfig:
    epsilon: int = DEFAULT_EPSILON
    per_node_offset: int = 0

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if abs(self.per_node_offset) > self.epsilon:
            raise ValueError(f"|offset| {self.per_node_offset} exceeds epsilon {self.epsilon}")


class _MonotoneEarliest:
    """Caches the last returned earliest so it never goes backward on one node."""

    def __init__(self):
        self._last = 0
        self._lock = threading.Lock()

    def clamp(self, earliest: int, latest: int) -> TimeRange:
        with self._lock:
            if earliest < self._last:
                earliest = self._last
            self._last = earliest
        return TimeRange(earliest, max(earliest, latest))


class SimClock:
    """Node clock over the simulator's global time.

    The node observes ``global + offset`` and reports ``observed ± epsilon``;
    since ``|offset| <= epsilon`` the true time is always inside.
    """

    def __init__(self, global_time, config: ClockConfig):
        self._global_time = global_time
        self.config = config
        self._mono = _MonotoneEarliest()

    def get_time_range(self) -> TimeRange:
        observed = self._global_time() + self.config.per_node_offset
        eps = self.config.epsilon
        return self._mono.clamp(max(0, observed - eps), observed + eps)


class WallClock:
    def __init__(self, epsilon: int = DEFAULT_EPSILON):
        self.config = ClockConfig(epsilon=epsilon)
        self._mono = _MonotoneEarliest()

    def get_time_range(self) -> TimeRange:
        now = time.time_ns()
        eps = self.config.epsilon
        return self._mono.clamp(max(0, now - eps), now + eps)
