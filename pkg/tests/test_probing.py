import socket
import struct

import pytest

from edisco.errors import ProbePermissionError, ProbeTimeoutError
from edisco.probing import (
    ICMP_DEST_UNREACHABLE,
    ICMP_ECHO_REPLY,
    ICMP_ECHO_REQUEST,
    ICMP_TIME_EXCEEDED,
    FixtureProber,
    ProbeConfig,
    TracerouteProber,
    build_echo_request,
    checksum,
    parse_icmp,
    probe_many,
)
from edisco.topology import PathSource

from conftest import make_path


def scripted_prober(script, **config_kwargs):
    """Prober whose _single_probe replays (responder, rtt, reached) tuples
    keyed by (ttl, attempt)."""
    prober = TracerouteProber(ProbeConfig(**config_kwargs))
    attempts = {}

    def fake_single_probe(client, ttl):
        attempt = attempts.get(ttl, 0)
        attempts[ttl] = attempt + 1
        return script(ttl, attempt)

    prober._single_probe = fake_single_probe
    return prober


# -- checksum / packet helpers --------------------------------------------


def test_checksum_matches_hand_sum():
    # RFC 1071 one's complement sum, folded. Hand value for a tiny message.
    data = struct.pack(">BBHHH", 8, 0, 0, 0x1234, 1)
    total = 0x0800 + 0x0000 + 0x1234 + 0x0001
    expected = ~((total >> 16) + (total & 0xFFFF)) & 0xFFFF
    assert checksum(data) == expected


def test_checksum_odd_length_pads():
    assert checksum(b"\x01") == checksum(b"\x01\x00")


def test_echo_request_layout():
    packet = build_echo_request(0xBEEF, 7)
    icmp_type, code, check, ident, seq = struct.unpack(">BBHHH", packet[:8])
    assert icmp_type == ICMP_ECHO_REQUEST
    assert code == 0
    assert ident == 0xBEEF
    assert seq == 7
    assert check != 0
    # checksum over the whole message with the field zeroed must equal it
    zeroed = packet[:2] + b"\x00\x00" + packet[4:]
    assert checksum(zeroed) == check


def test_parse_icmp_skips_ip_header():
    ip_header = bytes([0x45]) + bytes(19)
    icmp = struct.pack(">BBHHH", ICMP_TIME_EXCEEDED, 0, 0, 0, 0)
    assert parse_icmp(ip_header + icmp) == (ICMP_TIME_EXCEEDED, 0)


def test_parse_icmp_rejects_short_packet():
    with pytest.raises(ValueError):
        parse_icmp(b"\x45" + bytes(10))


# -- config validation ------------------------------------------------------


def test_config_rejects_unknown_method():
    with pytest.raises(ValueError):
        ProbeConfig(method="tcp")


def test_config_rejects_zero_ttl():
    with pytest.raises(ValueError):
        ProbeConfig(max_ttl=0)


# -- probe loop over a scripted transport -----------------------------------


def test_probe_reaches_client_at_ttl_three():
    routers = {1: "10.0.0.1", 2: "10.1.0.1"}

    def script(ttl, attempt):
        if ttl in routers:
            return routers[ttl], 1.5 * ttl, False
        return "172.16.0.9", 4.5, True

    path = scripted_prober(script).probe("172.16.0.9")
    assert [h.address for h in path.hops] == ["10.0.0.1", "10.1.0.1", "172.16.0.9"]
    assert not path.truncated
    assert path.source is PathSource.LIVE


def test_silent_hop_recorded_as_unknown():
    def script(ttl, attempt):
        if ttl == 1:
            return "10.0.0.1", 1.0, False
        if ttl == 2:
            return None, None, False
        return "172.16.0.9", 3.0, True

    path = scripted_prober(script, probes_per_hop=2).probe("172.16.0.9")
    assert [h.address for h in path.hops] == ["10.0.0.1", None, "172.16.0.9"]
    assert not path.hops[1].known
    assert not path.truncated


def test_max_ttl_exhaustion_marks_truncated():
    def script(ttl, attempt):
        return f"10.{ttl}.0.1", 1.0, False

    path = scripted_prober(script, max_ttl=4).probe("172.16.0.9")
    assert len(path.hops) == 4
    assert path.truncated


def test_retry_within_hop_uses_later_attempt():
    def script(ttl, attempt):
        if ttl == 1 and attempt < 2:
            return None, None, False
        if ttl == 1:
            return "10.0.0.1", 9.0, False
        return "172.16.0.9", 12.0, True

    path = scripted_prober(script, probes_per_hop=3).probe("172.16.0.9")
    assert path.hops[0].address == "10.0.0.1"


def test_all_silent_raises_timeout():
    def script(ttl, attempt):
        return None, None, False

    with pytest.raises(ProbeTimeoutError):
        scripted_prober(script, max_ttl=3, probes_per_hop=1).probe("172.16.0.9")


def test_raw_socket_refusal_maps_to_permission_error(monkeypatch):
    def deny(*args, **kwargs):
        raise PermissionError(1, "Operation not permitted")

    monkeypatch.setattr(socket, "socket", deny)
    with pytest.raises(ProbePermissionError):
        TracerouteProber()._single_probe("172.16.0.9", 1)


# -- icmp type handling ------------------------------------------------------


def test_icmp_constants_are_standard():
    assert ICMP_ECHO_REPLY == 0
    assert ICMP_DEST_UNREACHABLE == 3
    assert ICMP_ECHO_REQUEST == 8
    assert ICMP_TIME_EXCEEDED == 11


# -- fixture prober ----------------------------------------------------------


def test_fixture_prober_returns_recorded_path():
    recorded = make_path("172.16.0.9", "10.0.0.1", "10.1.0.1")
    prober = FixtureProber([recorded])
    assert prober.probe("172.16.0.9") is recorded


def test_fixture_prober_times_out_unknown_client():
    prober = FixtureProber([make_path("172.16.0.9", "10.0.0.1")])
    with pytest.raises(ProbeTimeoutError):
        prober.probe("172.16.5.5")


# -- fan-out -----------------------------------------------------------------


def test_probe_many_skips_failures(caplog):
    paths = [
        make_path("172.16.0.9", "10.0.0.1"),
        make_path("172.16.1.9", "10.0.0.1"),
    ]
    prober = FixtureProber(paths)
    clients = ["172.16.0.9", "172.16.9.9", "172.16.1.9"]
    with caplog.at_level("WARNING", logger="edisco.probing"):
        results = probe_many(clients, prober, concurrency=2)
    assert sorted(p.client for p in results) == ["172.16.0.9", "172.16.1.9"]
    assert any("172.16.9.9" in rec.message for rec in caplog.records)


def test_probe_many_empty_clients():
    assert probe_many([], FixtureProber([]), concurrency=4) == []


def test_probe_many_preserves_order_of_successes():
    paths = [make_path(f"172.16.{i}.9", "10.0.0.1") for i in range(6)]
    prober = FixtureProber(paths)
    clients = [p.client for p in paths]
    results = probe_many(clients, prober, concurrency=3)
    assert [p.client for p in results] == clients
