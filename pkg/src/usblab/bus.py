"""USB 2.0 device-layer arithmetic and shared hub configuration vocabulary.

Bulk-capacity numbers follow the high-speed budget model: a 125 us
microframe carries 7500 byte-times of raw bus capacity (480 Mbit/s), and
every bulk transaction pays a fixed 55 byte-time protocol overhead on top
of its data payload.  The overhead constant is fitted so the five published
bulk-limit rows (payloads 1, 8, 32, 128, 512) are reproduced exactly; the
same formula then extends to every other power-of-two payload.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

from .errors import ConfigError, DomainError

MICROFRAME_US = 125
FRAME_US = 1000
MICROFRAMES_PER_SECOND = 1_000_000 // MICROFRAME_US  # 8000
MICROFRAMES_PER_FRAME = FRAME_US // MICROFRAME_US  # 8

# Raw byte-times available per microframe at 480 Mbit/s (60 B/us * 125 us).
MICROFRAME_BYTE_BUDGET = 7500
# Fitted per-transaction protocol overhead, in byte-times.
BULK_TRANSACTION_OVERHEAD = 55

MIN_PAYLOAD = 1
MAX_PAYLOAD = 512

SPEED_CLASSES = ("usb2", "usb3x", "usbc")
POLICY_KINDS = ("fair_round_robin", "randomized_allocation", "unfair_priority")


def validate_payload(bytes_: int) -> int:
    """Check a bulk payload size: power of two within [1, 512]."""
    if not isinstance(bytes_, int) or isinstance(bytes_, bool):
        raise DomainError(f"payload must be an integer, got {bytes_!r}")
    if bytes_ < MIN_PAYLOAD or bytes_ > MAX_PAYLOAD:
        raise DomainError(f"payload {bytes_} outside [{MIN_PAYLOAD}, {MAX_PAYLOAD}]")
    if bytes_ & (bytes_ - 1):
        raise DomainError(f"payload {bytes_} is not a power of two")
    return bytes_


@dataclass(frozen=True)
class BulkLimits:
    """Per-microframe bulk transaction budget for one payload size."""

    payload: int
    transfers_per_microframe: int
    bytes_per_microframe: int
    bytes_per_second: int


def bulk_limits(payload: int) -> BulkLimits:
    """Bulk transaction limits for a payload size.

    Pure function; repeated calls return identical values.
    """
    payload = validate_payload(payload)
    transfers = MICROFRAME_BYTE_BUDGET // (BULK_TRANSACTION_OVERHEAD + payload)
    per_microframe = transfers * payload
    return BulkLimits(
        payload=payload,
        transfers_per_microframe=transfers,
        bytes_per_microframe=per_microframe,
        bytes_per_second=per_microframe * MICROFRAMES_PER_SECOND,
    )


@dataclass(frozen=True)
class ArbitrationPolicy:
    """How contended slots are assigned to devices.

    kind:
      fair_round_robin     -- alternate slots across devices with pending
                              work; deterministic given the pending queues.
      randomized_allocation -- each slot drawn uniformly among devices with
                              pending work from a seeded stream (mitigation).
      unfair_priority      -- drain queues in the order given by
                              params["priority"] (mitigation variant).
    """

    kind: str = "fair_round_robin"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ConfigError(f"unknown arbitration policy {self.kind!r}")
        if self.kind == "unfair_priority" and not self.params.get("priority"):
            raise ConfigError("unfair_priority requires params['priority']")


@dataclass(frozen=True)
class HubConfig:
    """Simulated hub: speed class label, TT layout, bulk payload, policy.

    speed_class affects labeling only; all classes share the device-layer
    model.  tt_frame_capacity is the number of interrupt transactions one
    Transaction Translator serves per 1 ms frame (default 1, the minimal
    model that reproduces the observed 2 ms mouse-update gaps).
    """

    speed_class: str = "usb2"
    tt_count: int = 1
    bulk_payload: int = 512
    arbitration: ArbitrationPolicy = field(default_factory=ArbitrationPolicy)
    tt_frame_capacity: int = 1
    frame_us: int = FRAME_US
    microframe_us: int = MICROFRAME_US

    def __post_init__(self):
        if self.speed_class not in SPEED_CLASSES:
            raise ConfigError(f"unknown speed class {self.speed_class!r}")
        if self.tt_count < 1:
            raise ConfigError("tt_count must be >= 1")
        if self.tt_frame_capacity < 1:
            raise ConfigError("tt_frame_capacity must be >= 1")
        validate_payload(self.bulk_payload)
        if self.frame_us % self.microframe_us:
            raise ConfigError("microframe_us must divide frame_us")

    @property
    def limits(self) -> BulkLimits:
        return bulk_limits(self.bulk_payload)

    def digest(self) -> str:
        """Short stable digest identifying this configuration."""
        blob = json.dumps(
            {
                "speed_class": self.speed_class,
                "tt_count": self.tt_count,
                "bulk_payload": self.bulk_payload,
                "arbitration": [self.arbitration.kind, sorted(self.arbitration.params.items())],
                "tt_frame_capacity": self.tt_frame_capacity,
                "frame_us": self.frame_us,
                "microframe_us": self.microframe_us,
            },
            sort_keys=True,
        )
        return hashlib.sha256(blob.encode()).hexdigest()[:12]
