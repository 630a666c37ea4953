import pytest

from usblab.bus import ArbitrationPolicy, HubConfig, bulk_limits
from usblab.errors import ConfigError, DomainError

# Published bulk transaction limits: payload -> (transfers/uframe, B/uframe, B/s)
PUBLISHED_ROWS = {
    1: (133, 133, 1_064_000),
    8: (119, 952, 7_616_000),
    32: (86, 2752, 22_016_000),
    128: (40, 5120, 40_960_000),
    512: (13, 6656, 53_248_000),
}

ALL_PAYLOADS = [1, 2, 4, 8, 16, 32, 64, 128, 256, 512]


@pytest.mark.parametrize("payload,expected", sorted(PUBLISHED_ROWS.items()))
def test_published_rows_exact(payload, expected):
    lim = bulk_limits(payload)
    assert (
        lim.transfers_per_microframe,
        lim.bytes_per_microframe,
        lim.bytes_per_second,
    ) == expected


@pytest.mark.parametrize("payload", ALL_PAYLOADS)
def test_rate_identity(payload):
    lim = bulk_limits(payload)
    assert lim.bytes_per_microframe == lim.transfers_per_microframe * payload
    assert lim.bytes_per_second == lim.bytes_per_microframe * 8000


def test_transfers_monotone_nonincreasing():
    transfers = [bulk_limits(p).transfers_per_microframe for p in ALL_PAYLOADS]
    assert all(a >= b for a, b in zip(transfers, transfers[1:]))
    # strict between the published payloads
    assert (
        bulk_limits(512).transfers_per_microframe
        < bulk_limits(128).transfers_per_microframe
        < bulk_limits(32).transfers_per_microframe
        < bulk_limits(8).transfers_per_microframe
        < bulk_limits(1).transfers_per_microframe
    )


def test_throughput_monotone_nondecreasing():
    rates = [bulk_limits(p).bytes_per_second for p in ALL_PAYLOADS]
    assert all(a <= b for a, b in zip(rates, rates[1:]))


def test_pure_function():
    assert bulk_limits(64) == bulk_limits(64)


@pytest.mark.parametrize("bad", [0, -8, 3, 24, 600, 1024, 2.0, "512"])
def test_invalid_payload_rejected(bad):
    with pytest.raises(DomainError):
        bulk_limits(bad)


def test_hub_config_validation():
    hub = HubConfig()
    assert hub.tt_count == 1 and hub.bulk_payload == 512
    assert hub.limits.transfers_per_microframe == 13
    with pytest.raises(ConfigError):
        HubConfig(tt_count=0)
    with pytest.raises(ConfigError):
        HubConfig(speed_class="usb9")
    with pytest.raises(ConfigError):
        HubConfig(microframe_us=300)
    with pytest.raises(ConfigError):
        ArbitrationPolicy(kind="coin_flip")
    with pytest.raises(ConfigError):
        ArbitrationPolicy(kind="unfair_priority")


def test_hub_digest_stable_and_config_sensitive():
    a = HubConfig()
    b = HubConfig()
    c = HubConfig(bulk_payload=128)
    assert a.digest() == b.digest()
    assert a.digest() != c.digest()
