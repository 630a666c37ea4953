"""Line-oriented text formats for traces and ground-truth sidecars.

Trace file: `# key=value` header lines, then one `t_us,delay_us` record per
line.  Key-event sidecar: `t_us,press|release,char` lines.  Traffic sidecar:
`t_us,bytes` lines.  All integers are base-10.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import DomainError
from .records import KeyEvent, KeyEventTrace, SpyTrace, TrafficTimeline

TRACE_SUFFIX = ".trace"
KEYS_SUFFIX = ".keys"
TRAFFIC_SUFFIX = ".traffic"


def write_trace(path: str | Path, trace: SpyTrace) -> None:
    lines = [f"# {k}={v}" for k, v in sorted(trace.metadata.items())]
    lines += [f"{int(t)},{int(d)}" for t, d in zip(trace.t_us, trace.delay_us)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_trace(path: str | Path) -> SpyTrace:
    meta: dict = {}
    ts: list[int] = []
    ds: list[int] = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            meta[key.strip()] = _parse_scalar(value.strip())
            continue
        t, _, d = line.partition(",")
        ts.append(int(t))
        ds.append(int(d))
    return SpyTrace(
        t_us=np.asarray(ts, dtype=np.int64),
        delay_us=np.asarray(ds, dtype=np.int64),
        metadata=meta,
    )


def write_key_events(path: str | Path, truth: KeyEventTrace) -> None:
    lines = [f"# word={truth.word}"]
    lines += [f"{e.t_us},{e.kind},{e.char}" for e in truth.events]
    Path(path).write_text("\n".join(lines) + "\n")


def read_key_events(path: str | Path) -> KeyEventTrace:
    word = ""
    events: list[KeyEvent] = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            if key.strip() == "word":
                word = value.strip()
            continue
        t, kind, char = line.split(",")
        events.append(KeyEvent(int(t), kind, char))
    return KeyEventTrace(tuple(events), word)


def write_traffic(path: str | Path, timeline: TrafficTimeline) -> None:
    lines = [f"{int(t)},{int(b)}" for t, b in zip(timeline.t_us, timeline.bytes_)]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_traffic(path: str | Path) -> TrafficTimeline:
    ts: list[int] = []
    bs: list[int] = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        t, _, b = line.partition(",")
        ts.append(int(t))
        bs.append(int(b))
    return TrafficTimeline(
        t_us=np.asarray(ts, dtype=np.int64), bytes_=np.asarray(bs, dtype=np.int64)
    )


def load_wordlist(path: str | Path, min_len: int = 4, max_len: int = 10) -> list[str]:
    """Read one word per line, enforcing the 4-10 letter convention at load."""
    words: list[str] = []
    for ln, line in enumerate(Path(path).read_text().splitlines(), start=1):
        w = line.strip()
        if not w:
            continue
        if not w.isalpha() or not w.islower():
            raise DomainError(f"{path}:{ln}: word {w!r} must be lowercase letters")
        if not (min_len <= len(w) <= max_len):
            raise DomainError(f"{path}:{ln}: word {w!r} outside {min_len}-{max_len} letters")
        words.append(w)
    if not words:
        raise DomainError(f"{path}: empty word list")
    return words


def _parse_scalar(value: str):
    try:
        return int(value)
    except ValueError:
        return value
