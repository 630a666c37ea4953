"""Synthetic workload generation and dataset hygiene.

Typist profiles drive key-event streams with controllable digram timing and
keystroke overlap; site profiles drive byte-volume timelines whose bursts
are paced just above the victim's fair bus share so congestion tracks the
schedule.  All generators are pure functions of (inputs, seed).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError
from .records import KeyEvent, KeyEventTrace, TraceBundle, TrafficTimeline

MS = 1000  # microseconds per millisecond

# One millisecond of paced burst delivery: 7 transactions of 512 B per
# microframe, 8 microframes.  Slightly above the fair drain share, so a
# paced burst keeps the victim queue non-empty for its whole duration.
PACED_RATE_BYTES_PER_MS = 7 * 512 * 8

DEFAULT_ABSORB_MAX_BYTES = 112 * 1024


# ---------------------------------------------------------------------------
# typist model


@dataclass(frozen=True)
class TypistProfile:
    """Per-digram press-to-press latency moments plus hold/overlap behaviour.

    digram_latency maps every ordered character pair of the alphabet to
    (mean_ms, stddev_ms) of a log-normal latency.  overlap_rate is the
    fraction of generated traces that contain one overlapping keystroke: a
    press that lands before the previous key's release, separated from it
    by a draw from overlap_gap_ms (well under the 50 ms labelling rule).
    """

    alphabet: str
    digram_latency: dict[tuple[str, str], tuple[float, float]]
    hold_time: tuple[float, float] = (65.0, 5.0)
    overlap_rate: float = 0.104
    overlap_gap_ms: tuple[float, float] = (20.0, 45.0)

    def __post_init__(self):
        if not self.alphabet:
            raise DomainError("alphabet must be non-empty")
        if not 0.0 <= self.overlap_rate <= 1.0:
            raise DomainError("overlap_rate must be within [0, 1]")
        if self.hold_time[0] <= 0:
            raise DomainError("hold time mean must be positive")
        for a in self.alphabet:
            for b in self.alphabet:
                if (a, b) not in self.digram_latency:
                    raise DomainError(f"digram_latency missing pair {(a, b)!r}")
                if self.digram_latency[(a, b)][0] <= 0:
                    raise DomainError(f"digram mean for {(a, b)!r} must be positive")


def make_typist_profile(
    alphabet: str,
    seed: int,
    mean_range_ms: tuple[float, float] = (150.0, 300.0),
    stddev_ms: float = 20.0,
    hold_time: tuple[float, float] = (65.0, 5.0),
    overlap_rate: float = 0.104,
) -> TypistProfile:
    """Draw a per-pair digram latency table from a seeded template."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x7971]))
    lo, hi = mean_range_ms
    table = {
        (a, b): (float(rng.uniform(lo, hi)), float(stddev_ms))
        for a in alphabet
        for b in alphabet
    }
    return TypistProfile(
        alphabet=alphabet,
        digram_latency=table,
        hold_time=hold_time,
        overlap_rate=overlap_rate,
    )


def _lognormal_ms(rng: np.random.Generator, mean: float, sd: float) -> float:
    """Log-normal draw moment-matched to (mean, sd); degenerate at sd == 0."""
    if sd <= 0:
        return mean
    sigma2 = math.log(1.0 + (sd / mean) ** 2)
    mu = math.log(mean) - sigma2 / 2.0
    return float(rng.lognormal(mu, math.sqrt(sigma2)))


def gen_typist_events(
    word: str,
    profile: TypistProfile,
    seed: int,
    start_us: int = 200_000,
    min_gap_ms: float = 3.0,
) -> KeyEventTrace:
    """Generate the press/release stream for one typed word.

    Press-to-press gaps come from the profile's digram table; with
    probability overlap_rate one keystroke (chosen uniformly) overlaps the
    previous one, its press drawn inside the previous key's hold window.
    """
    if not word:
        raise DomainError("word must be non-empty")
    for ch in word:
        if ch not in profile.alphabet:
            raise DomainError(f"character {ch!r} outside the profile alphabet")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x7e5]))

    overlap_at = None
    if len(word) > 1 and profile.overlap_rate > 0:
        if rng.random() < profile.overlap_rate:
            overlap_at = int(rng.integers(1, len(word)))

    press = [float(start_us)]
    holds = [
        max(_lognormal_ms(rng, *profile.hold_time), min_gap_ms) * MS for _ in word
    ]
    for i in range(1, len(word)):
        pair = (word[i - 1], word[i])
        if i == overlap_at:
            gap_ms = float(rng.uniform(*profile.overlap_gap_ms))
        else:
            mean, sd = profile.digram_latency[pair]
            gap_ms = max(_lognormal_ms(rng, mean, sd), min_gap_ms)
        press.append(press[-1] + gap_ms * MS)

    events = []
    for i, ch in enumerate(word):
        p = int(round(press[i]))
        events.append(KeyEvent(p, "press", ch))
        events.append(KeyEvent(p + int(round(holds[i])), "release", ch))
    events.sort(key=lambda e: e.t_us)
    return KeyEventTrace(tuple(events), word)


def count_overlaps(trace: KeyEventTrace) -> int:
    """Keystrokes whose press precedes the previous key's release."""
    order: list[tuple[int, int, str]] = []  # (press_t, release_t, char) per keystroke
    open_at: dict[str, int] = {}
    for e in trace.events:
        if e.kind == "press":
            open_at[e.char] = e.t_us
        else:
            order.append((open_at.pop(e.char), e.t_us, e.char))
    order.sort()
    n = 0
    for i in range(1, len(order)):
        if order[i][0] < order[i - 1][1]:
            n += 1
    return n


def generate_wordlist(
    n_words: int,
    alphabet: str,
    seed: int,
    length_range: tuple[int, int] = (4, 10),
) -> list[str]:
    """Seeded pseudoword dictionary with a biased letter-transition structure."""
    if n_words <= 0:
        raise DomainError("n_words must be positive")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xd1c7]))
    k = len(alphabet)
    # squared uniforms give each letter a skewed continuation preference
    trans = rng.random((k, k)) ** 2
    trans /= trans.sum(axis=1, keepdims=True)
    start = rng.random(k) ** 2
    start /= start.sum()

    words: list[str] = []
    seen: set[str] = set()
    lo, hi = length_range
    while len(words) < n_words:
        length = int(rng.integers(lo, hi + 1))
        idx = int(rng.choice(k, p=start))
        chars = [alphabet[idx]]
        for _ in range(length - 1):
            idx = int(rng.choice(k, p=trans[idx]))
            chars.append(alphabet[idx])
        w = "".join(chars)
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words


# ---------------------------------------------------------------------------
# website traffic model


@dataclass(frozen=True)
class SiteBurst:
    """One download burst: offset plus size, optionally paced over time."""

    offset_ms: float
    size_bytes: int
    rate_bytes_per_ms: int | None = PACED_RATE_BYTES_PER_MS  # None = single point

    def __post_init__(self):
        if self.size_bytes <= 0:
            raise DomainError("burst size must be positive")
        if self.offset_ms < 0:
            raise DomainError("burst offset must be non-negative")


@dataclass(frozen=True)
class SiteProfile:
    """Template for one label's traffic: burst schedule plus per-trial jitter."""

    label: str
    bursts: tuple[SiteBurst, ...]
    offset_jitter_ms: float = 25.0
    size_jitter_frac: float = 0.10

    def __post_init__(self):
        if not self.bursts:
            raise DomainError("a site profile needs at least one burst")
        if self.offset_jitter_ms < 0 or self.size_jitter_frac < 0:
            raise DomainError("jitter parameters must be non-negative")

    @property
    def total_bytes(self) -> int:
        return sum(b.size_bytes for b in self.bursts)


def make_site_corpus(
    n_sites: int,
    seed: int,
    duration_ms: int = 8000,
    burst_count_range: tuple[int, int] = (4, 12),
    burst_ms_range: tuple[float, float] = (20.0, 120.0),
    gap_ms_range: tuple[float, float] = (150.0, 650.0),
) -> list[SiteProfile]:
    """Template-generate a labelled corpus of distinct site profiles.

    Bursts are laid out sequentially with inter-burst gaps drawn from
    gap_ms_range, so schedules never overlap even after per-trial offset
    jitter and queue drain stays bounded by the pacing rate.
    """
    sites = []
    for i in range(n_sites):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x517e, i]))
        n_target = int(rng.integers(burst_count_range[0], burst_count_range[1] + 1))
        bursts = []
        start = min(300.0, duration_ms * 0.1)
        t = start + float(rng.uniform(0.0, 250.0))
        limit = max(duration_ms - 1500.0, duration_ms * 0.6)
        while len(bursts) < n_target:
            dur = float(rng.uniform(*burst_ms_range))
            if t + dur > limit:
                break
            bursts.append(
                SiteBurst(
                    offset_ms=t,
                    size_bytes=int(round(dur * PACED_RATE_BYTES_PER_MS)),
                )
            )
            t += dur + float(rng.uniform(*gap_ms_range))
        if not bursts:
            bursts.append(
                SiteBurst(
                    offset_ms=start,
                    size_bytes=int(round(burst_ms_range[0] * PACED_RATE_BYTES_PER_MS)),
                )
            )
        sites.append(SiteProfile(label=f"site{i:03d}", bursts=tuple(bursts)))
    return sites


def gen_web_traffic(site: SiteProfile, duration_us: int, seed: int) -> TrafficTimeline:
    """Sample one trial's timeline from a site profile; deterministic per seed."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x3eb]))
    ts: list[int] = []
    bs: list[int] = []
    for burst in site.bursts:
        off = burst.offset_ms
        size = burst.size_bytes
        if site.offset_jitter_ms > 0:
            off += float(rng.uniform(-site.offset_jitter_ms, site.offset_jitter_ms))
        if site.size_jitter_frac > 0:
            size = int(round(size * (1.0 + rng.uniform(-site.size_jitter_frac, site.size_jitter_frac))))
        size = max(size, 1)
        t0 = int(round(max(off, 0.0) * MS))
        if burst.rate_bytes_per_ms is None:
            ts.append(t0)
            bs.append(size)
        else:
            rate = burst.rate_bytes_per_ms
            k = 0
            left = size
            while left > 0:
                chunk = min(rate, left)
                ts.append(t0 + k * MS)
                bs.append(chunk)
                left -= chunk
                k += 1
    if not ts:
        raise DomainError("site profile produced an empty timeline")
    order = np.argsort(np.asarray(ts), kind="stable")
    t_arr = np.asarray(ts, dtype=np.int64)[order]
    b_arr = np.asarray(bs, dtype=np.int64)[order]
    if int(t_arr[-1]) >= duration_us:
        raise DomainError("burst schedule extends past the trace duration")
    return TrafficTimeline(t_us=t_arr, bytes_=b_arr)


@dataclass(frozen=True)
class VpnParams:
    """Traffic transform: per-packet size overhead plus added, jittered delay."""

    per_packet_overhead_bytes: int = 0
    added_latency_ms: float = 0.0
    jitter_ms: float = 0.0

    def __post_init__(self):
        if (
            self.per_packet_overhead_bytes < 0
            or self.added_latency_ms < 0
            or self.jitter_ms < 0
        ):
            raise DomainError("VPN parameters must be non-negative")


def vpn_transform(timeline: TrafficTimeline, params: VpnParams, seed: int) -> TrafficTimeline:
    """Apply tunnel overhead and delay to every point; count is preserved."""
    if not len(timeline):
        return timeline
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x4b9]))
    shift = int(round(params.added_latency_ms * MS))
    jitter = (
        rng.integers(0, int(round(params.jitter_ms * MS)) + 1, size=len(timeline))
        if params.jitter_ms > 0
        else np.zeros(len(timeline), dtype=np.int64)
    )
    t = timeline.t_us + shift + jitter
    b = timeline.bytes_ + params.per_packet_overhead_bytes
    order = np.argsort(t, kind="stable")
    return TrafficTimeline(t_us=t[order], bytes_=b[order])


# ---------------------------------------------------------------------------
# resolution sweep


@dataclass(frozen=True)
class BurstAnnotation:
    """Scoring window for one transmitted burst."""

    size_bytes: int
    rep: int
    t_us: int
    window_us: tuple[int, int]


def sweep_sizes(lo: int = 16, hi: int = 4 * 1024 * 1024) -> list[int]:
    sizes = []
    s = lo
    while s <= hi:
        sizes.append(s)
        s *= 2
    return sizes


def burst_sweep_workload(
    sizes: list[int],
    repeats: int = 5,
    gap_ms: int = 1000,
    payload: int = 512,
    start_ms: int = 500,
) -> tuple[TrafficTimeline, list[BurstAnnotation]]:
    """Point bursts of each size, `repeats` times, `gap_ms` apart.

    Annotations cover each burst's queue-drain span plus a margin, for
    detection scoring against windowed spy features.
    """
    if not sizes:
        raise DomainError("sizes must be non-empty")
    if repeats < 1 or gap_ms <= 0:
        raise DomainError("repeats must be >= 1 and gap positive")
    ts: list[int] = []
    bs: list[int] = []
    annotations: list[BurstAnnotation] = []
    k = 0
    for size in sizes:
        if size <= 0:
            raise DomainError("burst sizes must be positive")
        for rep in range(repeats):
            t = (start_ms + k * gap_ms) * MS
            ts.append(t)
            bs.append(size)
            drain_us = math.ceil(math.ceil(size / payload) / 6) * 125
            annotations.append(
                BurstAnnotation(
                    size_bytes=size,
                    rep=rep,
                    t_us=t,
                    window_us=(t, t + drain_us + 10_000),
                )
            )
            k += 1
    timeline = TrafficTimeline(
        t_us=np.asarray(ts, dtype=np.int64), bytes_=np.asarray(bs, dtype=np.int64)
    )
    return timeline, annotations


def absorb_bursts(
    timeline: TrafficTimeline,
    seed: int,
    absorb_max_bytes: int = DEFAULT_ABSORB_MAX_BYTES,
) -> TrafficTimeline:
    """Host-side buffering model for the resolution sweep.

    Socket and cache buffering soak up the head of each burst before the
    victim's bus queue backs up; the absorbed share is uniform per burst up
    to absorb_max_bytes.  Calibrated so bursts of 128 KiB and above always
    reach the bus while 64 KiB bursts only sometimes do.
    """
    if absorb_max_bytes < 0:
        raise DomainError("absorb_max_bytes must be non-negative")
    if not len(timeline) or absorb_max_bytes == 0:
        return timeline
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xab5]))
    absorbed = rng.integers(0, absorb_max_bytes + 1, size=len(timeline))
    delivered = timeline.bytes_ - np.minimum(timeline.bytes_, absorbed)
    keep = delivered > 0
    return TrafficTimeline(t_us=timeline.t_us[keep], bytes_=delivered[keep])


# ---------------------------------------------------------------------------
# dataset hygiene


def sanitize_traces(
    bundles: list[TraceBundle],
    min_length_frac: float = 0.5,
    stddev_floor_frac: float = 0.05,
) -> tuple[list[TraceBundle], list[tuple[TraceBundle, str]]]:
    """Reject traces that are too short or show no delay deviation.

    A trace is "short" when its record count falls under min_length_frac of
    the dataset median, and has "no deviation" when its delay standard
    deviation is below stddev_floor_frac of the dataset's median delay.
    """
    if not bundles:
        raise DomainError("empty trace dataset")
    counts = np.array([len(b.spy) for b in bundles], dtype=float)
    med_count = float(np.median(counts))
    med_delays = [
        float(np.median(b.spy.delay_us)) for b in bundles if len(b.spy)
    ]
    med_delay = float(np.median(med_delays)) if med_delays else 0.0
    floor = stddev_floor_frac * med_delay

    kept: list[TraceBundle] = []
    rejected: list[tuple[TraceBundle, str]] = []
    for b in bundles:
        if len(b.spy) < min_length_frac * med_count:
            rejected.append((b, "short"))
        elif float(np.std(b.spy.delay_us)) < floor:
            rejected.append((b, "no deviation"))
        else:
            kept.append(b)
    return kept, rejected


# ---------------------------------------------------------------------------
# profile serialization (documented schemas; see README)


def save_typist_profile(path: str | Path, profile: TypistProfile) -> None:
    doc = {
        "alphabet": profile.alphabet,
        "hold_time_ms": list(profile.hold_time),
        "overlap_rate": profile.overlap_rate,
        "overlap_gap_ms": list(profile.overlap_gap_ms),
        "digram_latency_ms": {a + b: list(v) for (a, b), v in sorted(profile.digram_latency.items())},
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_typist_profile(path: str | Path) -> TypistProfile:
    doc = json.loads(Path(path).read_text())
    return TypistProfile(
        alphabet=doc["alphabet"],
        digram_latency={
            (k[0], k[1]): (float(v[0]), float(v[1]))
            for k, v in doc["digram_latency_ms"].items()
        },
        hold_time=tuple(doc["hold_time_ms"]),
        overlap_rate=float(doc["overlap_rate"]),
        overlap_gap_ms=tuple(doc.get("overlap_gap_ms", (20.0, 45.0))),
    )


def save_site_corpus(path: str | Path, sites: list[SiteProfile]) -> None:
    doc = [
        {
            "label": s.label,
            "offset_jitter_ms": s.offset_jitter_ms,
            "size_jitter_frac": s.size_jitter_frac,
            "bursts": [
                {
                    "offset_ms": b.offset_ms,
                    "size_bytes": b.size_bytes,
                    "rate_bytes_per_ms": b.rate_bytes_per_ms,
                }
                for b in s.bursts
            ],
        }
        for s in sites
    ]
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_site_corpus(path: str | Path) -> list[SiteProfile]:
    doc = json.loads(Path(path).read_text())
    return [
        SiteProfile(
            label=entry["label"],
            bursts=tuple(
                SiteBurst(
                    offset_ms=float(b["offset_ms"]),
                    size_bytes=int(b["size_bytes"]),
                    rate_bytes_per_ms=(
                        None if b["rate_bytes_per_ms"] is None else int(b["rate_bytes_per_ms"])
                    ),
                )
                for b in entry["bursts"]
            ),
            offset_jitter_ms=float(entry["offset_jitter_ms"]),
            size_jitter_frac=float(entry["size_jitter_frac"]),
        )
        for entry in doc
    ]
