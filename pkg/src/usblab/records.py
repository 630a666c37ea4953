"""Ground-truth and side-channel trace records.

All times are integer microseconds from the start of the run.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError

PRESS = "press"
RELEASE = "release"


@dataclass(frozen=True)
class KeyEvent:
    t_us: int
    kind: str  # press | release
    char: str


@dataclass(frozen=True)
class KeyEventTrace:
    """Victim key activity: one press and one release per typed character."""

    events: tuple[KeyEvent, ...]
    word: str = ""

    def __post_init__(self):
        ts = [e.t_us for e in self.events]
        if ts != sorted(ts):
            raise DomainError("key events must be sorted by time")
        presses = [e.char for e in self.events if e.kind == PRESS]
        if self.word and presses != list(self.word):
            raise DomainError("press order must spell the word")
        open_chars: list[str] = []
        for e in self.events:
            if e.kind == PRESS:
                open_chars.append(e.char)
            elif e.kind == RELEASE:
                if e.char not in open_chars:
                    raise DomainError(f"release of {e.char!r} without a prior press")
                open_chars.remove(e.char)
            else:
                raise DomainError(f"unknown key event kind {e.kind!r}")

    def press_times(self) -> list[int]:
        return [e.t_us for e in self.events if e.kind == PRESS]

    def __len__(self) -> int:
        return len(self.events)


@dataclass(frozen=True, eq=False)
class TrafficTimeline:
    """Victim byte volume over time: (t_us, bytes) points, t non-decreasing."""

    t_us: np.ndarray
    bytes_: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t_us, dtype=np.int64)
        b = np.asarray(self.bytes_, dtype=np.int64)
        if t.shape != b.shape or t.ndim != 1:
            raise DomainError("timeline arrays must be 1-d and equal length")
        if len(t) and np.any(np.diff(t) < 0):
            raise DomainError("timeline timestamps must be non-decreasing")
        if len(b) and np.any(b <= 0):
            raise DomainError("timeline byte counts must be positive")
        object.__setattr__(self, "t_us", t)
        object.__setattr__(self, "bytes_", b)

    @property
    def total_bytes(self) -> int:
        return int(self.bytes_.sum()) if len(self.bytes_) else 0

    def __len__(self) -> int:
        return len(self.t_us)

    def binned(self, window_us: int, n_windows: int) -> np.ndarray:
        """Sum of bytes per window, length n_windows."""
        out = np.zeros(n_windows, dtype=np.int64)
        if len(self.t_us):
            idx = self.t_us // window_us
            keep = idx < n_windows
            np.add.at(out, idx[keep], self.bytes_[keep])
        return out


@dataclass(frozen=True, eq=False)
class SpyTrace:
    """Spy-observed completion times and inter-completion delays.

    The first record's delay is measured against the spy's initial
    completion, which is itself not recorded; from the second record on,
    delay_us[i] == t_us[i] - t_us[i-1].
    """

    t_us: np.ndarray
    delay_us: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.t_us, dtype=np.int64)
        d = np.asarray(self.delay_us, dtype=np.int64)
        if t.shape != d.shape or t.ndim != 1:
            raise DomainError("trace arrays must be 1-d and equal length")
        if len(t) > 1 and np.any(np.diff(t) <= 0):
            raise DomainError("completion timestamps must be strictly increasing")
        if len(d) and np.any(d <= 0):
            raise DomainError("delays must be positive")
        if len(t) > 1 and np.any(d[1:] != np.diff(t)):
            raise DomainError("delay_us must equal successive timestamp differences")
        object.__setattr__(self, "t_us", t)
        object.__setattr__(self, "delay_us", d)

    def __len__(self) -> int:
        return len(self.t_us)

    @property
    def duration_us(self) -> int:
        return int(self.t_us[-1]) if len(self.t_us) else 0


@dataclass(frozen=True)
class TraceBundle:
    """One simulated run: the spy trace plus exactly one ground-truth channel."""

    spy: SpyTrace
    noise_seed: int
    key_truth: KeyEventTrace | None = None
    traffic_truth: TrafficTimeline | None = None

    def __post_init__(self):
        if (self.key_truth is None) == (self.traffic_truth is None):
            raise DomainError("exactly one truth channel must be populated")
