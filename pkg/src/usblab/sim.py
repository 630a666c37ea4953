"""Deterministic discrete-event simulation of a hub's device layer.

Two independent scheduling planes share the integer-microsecond clock:

* interrupt plane -- one Transaction Translator arbitration per 1 ms frame
  (keyboards, mice).  A deferred transaction carries into the next frame and
  is served ahead of that frame's new arrivals; among same-frame arrivals,
  key-event transactions precede the periodic poll.
* bulk plane -- slot allocation per 125 us microframe, bounded by the
  payload-dependent transfer budget.  A device's batch completion is stamped
  at the end of the microframe that serves its last pending transaction.

Equal (hub, workload, duration, seed) inputs give bit-identical bundles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bus import ArbitrationPolicy, BulkLimits, HubConfig
from .errors import ConfigError, DomainError
from .records import KeyEvent, KeyEventTrace, SpyTrace, TraceBundle, TrafficTimeline

DEFAULT_JITTER_US = 50

EVENT = "event"
POLL = "poll"
_KIND_RANK = {EVENT: 0, POLL: 1}


@dataclass(frozen=True)
class InterruptDevice:
    """Low/full-speed device behind the TT: a poller, an event source, or both."""

    device_id: str
    poll_interval_us: int | None = None
    events: KeyEventTrace | None = None

    def __post_init__(self):
        if self.poll_interval_us is None and self.events is None:
            raise ConfigError(f"{self.device_id}: needs a poll interval or an event stream")
        if self.poll_interval_us is not None and self.poll_interval_us <= 0:
            raise ConfigError(f"{self.device_id}: poll interval must be positive")


@dataclass(frozen=True)
class BulkDevice:
    """High-speed bulk device: an open request stream or a closed-loop reader.

    A closed-loop reader (the disk spy) keeps one fixed-size read batch in
    flight and issues the next batch the moment the previous one completes.
    """

    device_id: str
    requests: TrafficTimeline | None = None
    closed_loop_batch_bytes: int | None = None

    def __post_init__(self):
        if (self.requests is None) == (self.closed_loop_batch_bytes is None):
            raise ConfigError(f"{self.device_id}: exactly one of requests/closed loop")
        if self.closed_loop_batch_bytes is not None and self.closed_loop_batch_bytes <= 0:
            raise ConfigError(f"{self.device_id}: batch bytes must be positive")


@dataclass(frozen=True)
class Workload:
    """Device population and the spy whose completions are timestamped."""

    interrupt_devices: tuple[InterruptDevice, ...] = ()
    bulk_devices: tuple[BulkDevice, ...] = ()
    spy_device_id: str = ""
    label: str = ""

    def __post_init__(self):
        ids = [d.device_id for d in self.interrupt_devices] + [
            d.device_id for d in self.bulk_devices
        ]
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate device ids in workload")
        if ids.count(self.spy_device_id) != 1:
            raise ConfigError(f"spy device {self.spy_device_id!r} not present exactly once")

    @property
    def spy_is_interrupt(self) -> bool:
        return any(d.device_id == self.spy_device_id for d in self.interrupt_devices)


@dataclass
class InterruptTxn:
    """One pending TT transaction; seq breaks ties deterministically."""

    arrival_us: int
    kind: str
    device_id: str
    seq: int


def tt_schedule_frame(
    pending: list[InterruptTxn],
    policy: ArbitrationPolicy,
    capacity: int = 1,
    rng: np.random.Generator | None = None,
) -> tuple[list[InterruptTxn], list[InterruptTxn]]:
    """Arbitrate one frame's interrupt transactions; returns (served, deferred).

    Under fair_round_robin, transactions deferred from earlier frames go
    first (oldest arrival first), and among same-frame arrivals key events
    precede the periodic poll.  Deferral is the only overload behaviour.
    """
    if not pending:
        return [], []
    if policy.kind == "fair_round_robin":
        order = sorted(
            pending, key=lambda x: (x.arrival_us, _KIND_RANK[x.kind], x.device_id, x.seq)
        )
    elif policy.kind == "randomized_allocation":
        if rng is None:
            rng = np.random.default_rng(policy.params.get("seed", 0))
        order = [pending[i] for i in rng.permutation(len(pending))]
    else:  # unfair_priority
        prio = {d: i for i, d in enumerate(policy.params["priority"])}
        order = sorted(
            pending,
            key=lambda x: (prio.get(x.device_id, len(prio)), x.arrival_us, x.seq),
        )
    return order[:capacity], order[capacity:]


def _fair_alternate(
    devices: list[str], remaining: dict[str, int], slots: int, start: str | None
) -> tuple[dict[str, int], str | None]:
    """Strict slot alternation over devices with work left; returns (alloc, last)."""
    alloc = {d: 0 for d in devices}
    idx = devices.index(start) if start in devices else 0
    served = 0
    last = None
    while served < slots:
        d = devices[idx % len(devices)]
        if remaining[d] > 0:
            alloc[d] += 1
            remaining[d] -= 1
            served += 1
            last = d
        idx += 1
    return alloc, last


def bulk_schedule_microframe(
    demand: dict[str, int],
    limits: BulkLimits | int,
    policy: ArbitrationPolicy,
    rng: np.random.Generator | None = None,
    start: str | None = None,
) -> dict[str, int]:
    """Allocate one microframe's bulk slots across per-device demand.

    Work conserving: exactly min(total demand, capacity) slots are assigned.
    fair_round_robin alternates among devices with remaining demand starting
    at `start`; randomized_allocation draws each slot uniformly among them;
    unfair_priority drains queues in the policy's priority order.
    """
    capacity = limits.transfers_per_microframe if isinstance(limits, BulkLimits) else limits
    devices = [d for d in demand if demand[d] > 0]
    remaining = {d: demand[d] for d in devices}
    slots = min(capacity, sum(remaining.values()))
    if not devices or slots <= 0:
        return {d: 0 for d in devices}

    if policy.kind == "unfair_priority":
        alloc = {d: 0 for d in devices}
        prio = {d: i for i, d in enumerate(policy.params["priority"])}
        for d in sorted(devices, key=lambda d: (prio.get(d, len(prio)), d)):
            take = min(remaining[d], slots)
            alloc[d] += take
            slots -= take
            if slots == 0:
                break
        return alloc

    if policy.kind == "randomized_allocation":
        if rng is None:
            rng = np.random.default_rng(policy.params.get("seed", 0))
        alloc = {d: 0 for d in devices}
        live = list(devices)
        for _ in range(slots):
            d = live[int(rng.integers(len(live)))]
            alloc[d] += 1
            remaining[d] -= 1
            if remaining[d] == 0:
                live.remove(d)
        return alloc

    alloc, _ = _fair_alternate(devices, remaining, slots, start)
    return alloc


def _simulate_interrupt_plane(
    hub: HubConfig,
    devices: tuple[InterruptDevice, ...],
    duration_us: int,
    rng: np.random.Generator,
) -> dict[str, list[int]]:
    """Frame-by-frame TT arbitration; returns completion times per device."""
    frame = hub.frame_us
    capacity = hub.tt_frame_capacity
    # With per-port translators nothing contends: serve each device alone.
    shared_tt = hub.tt_count < len(devices)

    completions: dict[str, list[int]] = {d.device_id: [] for d in devices}

    def run_group(group: tuple[InterruptDevice, ...]):
        deferred: list[InterruptTxn] = []
        ev_times = {
            d.device_id: [e.t_us for e in d.events.events] if d.events is not None else []
            for d in group
        }
        ev_idx = {d.device_id: 0 for d in group}
        next_poll = {d.device_id: 0 for d in group if d.poll_interval_us}
        poll_pending = {d.device_id: False for d in group}
        seq = 0
        for t_frame in range(0, duration_us, frame):
            new: list[InterruptTxn] = []
            for dev in group:
                did = dev.device_id
                if dev.poll_interval_us:
                    due = None
                    while next_poll[did] <= t_frame:
                        due = next_poll[did]
                        next_poll[did] += dev.poll_interval_us
                    # overdue polls merge into one outstanding transaction
                    if due is not None and not poll_pending[did]:
                        new.append(InterruptTxn(due, POLL, did, seq))
                        poll_pending[did] = True
                        seq += 1
                times = ev_times[did]
                i = ev_idx[did]
                while i < len(times) and times[i] <= t_frame:
                    new.append(InterruptTxn(times[i], EVENT, did, seq))
                    seq += 1
                    i += 1
                ev_idx[did] = i
            pending = deferred + new
            if not pending:
                continue
            served, deferred = tt_schedule_frame(pending, hub.arbitration, capacity, rng)
            for txn in served:
                completions[txn.device_id].append(t_frame)
                if txn.kind == POLL:
                    poll_pending[txn.device_id] = False

    if shared_tt:
        run_group(devices)
    else:
        for dev in devices:
            run_group((dev,))
    return completions


def _simulate_bulk_plane(
    hub: HubConfig,
    devices: tuple[BulkDevice, ...],
    duration_us: int,
    rng: np.random.Generator,
    fast_forward: bool = True,
) -> dict[str, list[int]]:
    """Microframe slot allocation; returns batch completion times per device.

    Idle stretches (a lone closed-loop reader, or no pending work at all)
    are fast-forwarded arithmetically; the emitted completions are identical
    to stepping every microframe.
    """
    mf = hub.microframe_us
    limits = hub.limits
    payload = limits.payload
    capacity = limits.transfers_per_microframe
    policy = hub.arbitration

    order = [d.device_id for d in devices]
    queues: dict[str, int] = {d: 0 for d in order}
    streams: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    stream_idx: dict[str, int] = {}
    closed: dict[str, dict] = {}
    for dev in devices:
        if dev.requests is not None:
            streams[dev.device_id] = (dev.requests.t_us, dev.requests.bytes_)
            stream_idx[dev.device_id] = 0
        else:
            closed[dev.device_id] = {
                "batch_tx": math.ceil(dev.closed_loop_batch_bytes / payload),
                "eligible": 0,
            }

    completions: dict[str, list[int]] = {d: [] for d in order}
    next_start = 0  # rotating index into `order` for fair alternation

    def next_stream_arrival() -> int:
        nxt = duration_us
        for did, (ts, _) in streams.items():
            i = stream_idx[did]
            if i < len(ts):
                nxt = min(nxt, int(ts[i]))
        return nxt

    t = 0
    while t < duration_us:
        for did, (ts, bs) in streams.items():
            i = stream_idx[did]
            while i < len(ts) and ts[i] <= t:
                queues[did] += math.ceil(int(bs[i]) / payload)
                i += 1
            stream_idx[did] = i
        for did, st in closed.items():
            if queues[did] == 0 and st["eligible"] <= t:
                queues[did] = st["batch_tx"]

        open_backlog = any(queues[d] > 0 for d in streams)

        # fast-forward: nothing pending at all until the next arrival
        if fast_forward and not open_backlog and not closed:
            horizon = min(next_stream_arrival(), duration_us)
            t = max((horizon // mf) * mf, t + mf)
            continue

        # fast-forward: a single closed-loop reader running uncontended
        if (
            fast_forward
            and not open_backlog
            and policy.kind == "fair_round_robin"
            and len(closed) == 1
        ):
            (did, st), = closed.items()
            if queues[did] == st["batch_tx"]:
                period = math.ceil(st["batch_tx"] / capacity) * mf
                horizon = min(next_stream_arrival(), duration_us)
                n = (horizon - t) // period
                if n > 0:
                    completions[did].extend(t + k * period for k in range(1, n + 1))
                    st["eligible"] = t + n * period
                    queues[did] = 0
                    next_start = (order.index(did) + 1) % len(order)
                    t += n * period
                    continue

        demand = {d: queues[d] for d in order if queues[d] > 0}
        if demand:
            live = list(demand)
            if policy.kind == "fair_round_robin":
                start = None
                for k in range(len(order)):
                    cand = order[(next_start + k) % len(order)]
                    if cand in demand:
                        start = cand
                        break
                alloc, last = _fair_alternate(live, dict(demand), min(capacity, sum(demand.values())), start)
                if last is not None:
                    next_start = (order.index(last) + 1) % len(order)
            else:
                alloc = bulk_schedule_microframe(demand, limits, policy, rng)
            for did, n in alloc.items():
                if n <= 0:
                    continue
                queues[did] -= n
                if did in closed and queues[did] == 0:
                    closed[did]["eligible"] = t + mf
                    completions[did].append(t + mf)
        t += mf
    return completions


def _strictly_increasing(times: np.ndarray) -> np.ndarray:
    """Minimal forward bumps so equal/decreasing jittered stamps become strict."""
    idx = np.arange(len(times))
    return np.maximum.accumulate(times - idx) + idx


def run_simulation(
    hub: HubConfig,
    workload: Workload,
    duration_us: int,
    seed: int,
    jitter_us: int = DEFAULT_JITTER_US,
    fast_forward: bool = True,
) -> TraceBundle:
    """Execute a workload against a hub and collect the spy's delay trace.

    Spy completion timestamps receive independent additive jitter drawn
    uniformly from [0, jitter_us]; ground-truth channels stay exact.
    """
    if duration_us < hub.frame_us:
        raise DomainError("duration must cover at least one frame")
    if jitter_us < 0:
        raise DomainError("jitter must be non-negative")
    _check_streams_end(workload, duration_us)

    ss = np.random.SeedSequence([int(seed)])
    jitter_rng, tt_rng, bulk_rng = (np.random.default_rng(s) for s in ss.spawn(3))

    completions: dict[str, list[int]] = {}
    if workload.interrupt_devices:
        completions.update(
            _simulate_interrupt_plane(hub, workload.interrupt_devices, duration_us, tt_rng)
        )
    if workload.bulk_devices:
        completions.update(
            _simulate_bulk_plane(hub, workload.bulk_devices, duration_us, bulk_rng, fast_forward)
        )

    spy_times = np.asarray(completions.get(workload.spy_device_id, []), dtype=np.int64)
    if jitter_us > 0 and len(spy_times):
        spy_times = spy_times + jitter_rng.integers(0, jitter_us + 1, size=len(spy_times))
        spy_times = _strictly_increasing(np.sort(spy_times))

    if len(spy_times) < 2:
        t_rec = np.zeros(0, dtype=np.int64)
        d_rec = np.zeros(0, dtype=np.int64)
    else:
        t_rec = spy_times[1:]
        d_rec = np.diff(spy_times)

    spy = SpyTrace(
        t_us=t_rec,
        delay_us=d_rec,
        metadata={
            "scenario": workload.label,
            "seed": int(seed),
            "hub": hub.digest(),
            "jitter_us": int(jitter_us),
        },
    )

    if workload.spy_is_interrupt:
        events: list[KeyEvent] = []
        word = ""
        for dev in workload.interrupt_devices:
            if dev.events is not None:
                events.extend(dev.events.events)
                word += dev.events.word
        events.sort(key=lambda e: e.t_us)
        return TraceBundle(
            spy=spy, noise_seed=int(seed), key_truth=KeyEventTrace(tuple(events), word)
        )

    ts: list[int] = []
    bs: list[int] = []
    for dev in workload.bulk_devices:
        if dev.requests is not None:
            ts.extend(int(x) for x in dev.requests.t_us)
            bs.extend(int(x) for x in dev.requests.bytes_)
    if ts:
        idx = np.argsort(np.asarray(ts), kind="stable")
        truth = TrafficTimeline(
            t_us=np.asarray(ts, dtype=np.int64)[idx],
            bytes_=np.asarray(bs, dtype=np.int64)[idx],
        )
    else:
        truth = TrafficTimeline(np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))
    return TraceBundle(spy=spy, noise_seed=int(seed), traffic_truth=truth)


def _check_streams_end(workload: Workload, duration_us: int):
    for dev in workload.interrupt_devices:
        if dev.events is not None and len(dev.events) and dev.events.events[-1].t_us >= duration_us:
            raise ConfigError(f"{dev.device_id}: event stream extends past the run duration")
    for dev in workload.bulk_devices:
        if dev.requests is not None and len(dev.requests):
            if int(dev.requests.t_us[-1]) >= duration_us:
                raise ConfigError(f"{dev.device_id}: request stream extends past the run duration")
