from __future__ import annotations

import logging
import random
from collections import Counter

import pytest

from edisco import dnswire
from edisco.discovery import (
    CachingResolver,
    DomainIdentity,
    EdgeServer,
    FixtureWhois,
    Provenance,
    StubResolver,
    ZoneFixtureResolver,
    annotate_tree,
    discover_local_edges,
    identify_addresses,
    query_edge_srv,
    registrable_domain,
    reverse_lookup,
    select_server,
    whois_fallback,
)
from edisco.errors import NoServersError
from edisco.topology import build_tree, compute_centrality
from edisco.zonefile import Transport, parse_zone

from conftest import make_path


@pytest.fixture
def resolver(reference_zone):
    return ZoneFixtureResolver(parse_zone(reference_zone))


def server(priority=10, weight=30, address="192.168.121.30", port=5060, proto=Transport.TCP):
    return EdgeServer(
        zone="domainA.com",
        protocol=proto,
        priority=priority,
        weight=weight,
        address=address,
        port=port,
    )


# --- registrable_domain ---


def test_registrable_domain_two_labels():
    assert registrable_domain("router1.domainA.com") == "domainA.com"
    assert registrable_domain("domainA.com.") == "domainA.com"


def test_registrable_domain_multi_label_suffix():
    assert registrable_domain("router1.isp.co.uk") == "isp.co.uk"


def test_registrable_domain_custom_suffixes():
    assert (
        registrable_domain("a.b.internal.example", frozenset({"internal.example"}))
        == "b.internal.example"
    )


# --- identity ---


def test_identity_requires_domain_provenance_agreement():
    with pytest.raises(ValueError):
        DomainIdentity(address="10.0.0.1", domain="x.com", provenance=Provenance.UNKNOWN)
    with pytest.raises(ValueError):
        DomainIdentity(address="10.0.0.1", domain=None, provenance=Provenance.PTR)


def test_reverse_lookup_prefers_ptr(resolver):
    from edisco.zonefile import PtrRecord

    resolver.zone.ptr_records.append(
        PtrRecord(address="192.168.121.30", ttl=86400, dns_class="IN", target="serverA.domainA.com")
    )
    identity = reverse_lookup("192.168.121.30", resolver)
    assert identity.domain == "domainA.com"
    assert identity.provenance is Provenance.PTR


def test_reverse_lookup_falls_back_to_whois(resolver):
    whois = FixtureWhois({"198.51.100.0/24": "domainB.net"})
    identity = reverse_lookup("198.51.100.7", resolver, whois)
    assert identity.domain == "domainB.net"
    assert identity.provenance is Provenance.WHOIS


def test_reverse_lookup_unknown_when_nothing_matches(resolver):
    identity = reverse_lookup("203.0.113.9", resolver)
    assert identity.provenance is Provenance.UNKNOWN
    assert identity.domain is None


def test_whois_ambiguity_takes_smallest_with_warning(caplog):
    class Ambiguous:
        def domains_for(self, address):
            return ["a.com", "b.com"]

    with caplog.at_level(logging.WARNING):
        identity = whois_fallback("203.0.113.9", Ambiguous())
    assert identity.domain == "a.com"
    assert any("ambiguous" in r.message for r in caplog.records)


def test_whois_empty_answer_is_unknown():
    class Silent:
        def domains_for(self, address):
            return []

    assert whois_fallback("203.0.113.9", Silent()).provenance is Provenance.UNKNOWN


def test_fixture_whois_table_round_trips():
    table = {f"198.51.{i}.0/24": f"org{i}.net" for i in range(10)}
    whois = FixtureWhois(table)
    for i in range(10):
        assert whois.domains_for(f"198.51.{i}.200") == [f"org{i}.net"]


def test_identify_addresses_covers_all_inputs(resolver):
    whois = FixtureWhois({"192.168.121.0/24": "domainA.com"})
    identities = identify_addresses(
        ["192.168.121.30", "192.168.121.31", "203.0.113.9"], resolver, whois
    )
    assert set(identities) == {"192.168.121.30", "192.168.121.31", "203.0.113.9"}
    assert identities["192.168.121.30"].domain == "domainA.com"
    assert identities["203.0.113.9"].provenance is Provenance.UNKNOWN


# --- SRV queries ---


def test_query_edge_srv_resolves_both_servers(resolver):
    servers = query_edge_srv("domainA.com", Transport.TCP, resolver)
    assert [(s.address, s.port) for s in servers] == [
        ("192.168.121.30", 5060),
        ("192.168.121.31", 5060),
    ]
    assert {s.weight for s in servers} == {30, 10}


def test_query_edge_srv_absent_domain_is_empty(resolver):
    assert query_edge_srv("other.org", Transport.TCP, resolver) == []


def test_query_edge_srv_drops_target_without_a(reference_zone, caplog):
    zone = parse_zone(
        reference_zone
        + "_edge._tcp.domainA.com. 86400 IN SRV 10 5 5060 ghost.domainA.com.\n"
    )
    with caplog.at_level(logging.WARNING):
        servers = query_edge_srv("domainA.com", Transport.TCP, ZoneFixtureResolver(zone))
    assert len(servers) == 2
    assert any("ghost.domainA.com" in r.message for r in caplog.records)


def test_query_edge_srv_rejects_empty_domain(resolver):
    with pytest.raises(ValueError):
        query_edge_srv("", Transport.TCP, resolver)


def test_discover_local_edges_merges_transports(resolver):
    servers = discover_local_edges("domainA.com", resolver)
    assert len(servers) == 4
    assert {s.protocol for s in servers} == {Transport.TCP, Transport.UDP}
    priorities = [s.priority for s in servers]
    assert priorities == sorted(priorities)


def test_discover_local_edges_rejects_empty_domain(resolver):
    with pytest.raises(ValueError):
        discover_local_edges("", resolver)


# --- selection ---


def test_select_single_server():
    only = server()
    assert select_server([only], random.Random(1)) is only


def test_select_lowest_priority_always_wins():
    low = server(priority=10, weight=1)
    high = server(priority=20, weight=1000, address="192.168.121.31")
    rng = random.Random(7)
    for _ in range(500):
        assert select_server([low, high], rng) is low


def test_select_weight_proportions_over_10k_draws():
    heavy = server(weight=30)
    light = server(weight=10, address="192.168.121.31")
    rng = random.Random(2024)
    hits = Counter(
        select_server([heavy, light], rng).address for _ in range(10_000)
    )
    share = hits["192.168.121.30"] / 10_000
    assert 0.73 <= share <= 0.77


def test_select_frequency_chi_squared():
    servers = [
        server(weight=50),
        server(weight=30, address="192.168.121.31"),
        server(weight=20, address="192.168.121.32"),
    ]
    rng = random.Random(99)
    n = 10_000
    hits = Counter(select_server(servers, rng).address for _ in range(n))
    chi2 = sum(
        (hits[s.address] - n * s.weight / 100) ** 2 / (n * s.weight / 100)
        for s in servers
    )
    assert chi2 < 9.21  # df=2, p=0.01


def test_select_all_zero_weights_uniform():
    a = server(weight=0)
    b = server(weight=0, address="192.168.121.31")
    rng = random.Random(5)
    hits = Counter(select_server([a, b], rng).address for _ in range(2000))
    assert hits["192.168.121.30"] > 800
    assert hits["192.168.121.31"] > 800


def test_select_zero_weight_unreachable_in_mixed_group():
    weighted = server(weight=30)
    zero = server(weight=0, address="192.168.121.31")
    rng = random.Random(3)
    for _ in range(500):
        assert select_server([weighted, zero], rng) is weighted


def test_select_empty_rejected():
    with pytest.raises(NoServersError):
        select_server([], random.Random(0))


def test_select_deterministic_per_seed():
    servers = [server(weight=30), server(weight=10, address="192.168.121.31")]
    picks_a = [select_server(servers, random.Random(42)).address for _ in range(5)]
    picks_b = [select_server(servers, random.Random(42)).address for _ in range(5)]
    assert picks_a == picks_b


# --- caching ---


class CountingResolver:
    def __init__(self, inner):
        self.inner = inner
        self.calls = Counter()

    def lookup_ptr(self, address):
        self.calls["ptr"] += 1
        return self.inner.lookup_ptr(address)

    def lookup_a(self, name):
        self.calls["a"] += 1
        return self.inner.lookup_a(name)

    def lookup_srv(self, qname):
        self.calls["srv"] += 1
        return self.inner.lookup_srv(qname)


def test_cache_suppresses_repeat_lookups(resolver):
    counting = CountingResolver(resolver)
    cached = CachingResolver(counting)
    for _ in range(4):
        cached.lookup_srv("_edge._tcp.domainA.com")
        cached.lookup_a("serverA.domainA.com")
    assert counting.calls["srv"] == 1
    assert counting.calls["a"] == 1


def test_cache_honors_ttl(resolver):
    counting = CountingResolver(resolver)
    now = [0.0]
    cached = CachingResolver(counting, clock=lambda: now[0])
    cached.lookup_a("serverA.domainA.com")
    now[0] = 86399.0
    cached.lookup_a("serverA.domainA.com")
    assert counting.calls["a"] == 1
    now[0] = 86400.0
    cached.lookup_a("serverA.domainA.com")
    assert counting.calls["a"] == 2


def test_cache_negative_answers_expire(resolver):
    counting = CountingResolver(resolver)
    now = [0.0]
    cached = CachingResolver(counting, clock=lambda: now[0])
    assert cached.lookup_ptr("203.0.113.9") is None
    assert cached.lookup_ptr("203.0.113.9") is None
    assert counting.calls["ptr"] == 1
    now[0] = 31.0
    cached.lookup_ptr("203.0.113.9")
    assert counting.calls["ptr"] == 2


# --- stub resolver adapter ---


def test_stub_resolver_maps_srv_answers(monkeypatch):
    answers = [
        dnswire.WireAnswer(
            name="_edge._tcp.domainA.com",
            rtype=dnswire.TYPE_SRV,
            ttl=3600,
            data=(10, 30, 5060, "serverA.domainA.com."),
        )
    ]
    monkeypatch.setattr(dnswire, "query", lambda *a, **k: answers)
    stub = StubResolver(servers=["203.0.113.1"])
    records = stub.lookup_srv("_edge._tcp.domainA.com")
    assert records[0].zone == "domainA.com"
    assert records[0].target == "serverA.domainA.com"
    assert records[0].protocol is Transport.TCP


def test_stub_resolver_maps_ptr_and_a(monkeypatch):
    def fake_query(server, qname, qtype, timeout=2.0, txid=0):
        if qtype == dnswire.TYPE_PTR:
            return [
                dnswire.WireAnswer(
                    name=qname, rtype=dnswire.TYPE_PTR, ttl=60, data="r1.domainA.com."
                )
            ]
        return [
            dnswire.WireAnswer(
                name=qname, rtype=dnswire.TYPE_A, ttl=60, data="192.168.121.30"
            )
        ]

    monkeypatch.setattr(dnswire, "query", fake_query)
    stub = StubResolver(servers=["203.0.113.1"])
    assert stub.lookup_ptr("192.168.121.30").target == "r1.domainA.com"
    assert stub.lookup_a("serverA.domainA.com")[0].address == "192.168.121.30"


def test_stub_resolver_tries_next_server(monkeypatch):
    attempts = []

    def fake_query(server, qname, qtype, timeout=2.0, txid=0):
        attempts.append(server)
        if server == "203.0.113.1":
            raise OSError("refused")
        return []

    monkeypatch.setattr(dnswire, "query", fake_query)
    stub = StubResolver(servers=["203.0.113.1", "203.0.113.2"])
    assert stub.lookup_a("x.example") == []
    assert attempts == ["203.0.113.1", "203.0.113.2"]


# --- annotation ---


def annotated_tree(resolver):
    tree = compute_centrality(
        build_tree(
            [
                make_path("172.16.0.9", "192.168.121.30"),
                make_path("172.16.1.9", "203.0.113.77"),
            ],
            "10.0.0.1",
        )
    )
    identities = {
        "192.168.121.30": DomainIdentity(
            address="192.168.121.30", domain="domainA.com", provenance=Provenance.PTR
        )
    }
    edges = {"domainA.com": query_edge_srv("domainA.com", Transport.TCP, resolver)}
    return annotate_tree(tree, identities, edges)


def test_annotate_attaches_servers(resolver):
    tree = annotated_tree(resolver)
    node = tree.nodes["192.168.121.0/24"]
    assert node.domains == {"domainA.com"}
    assert [s.address for s in node.edge_servers] == ["192.168.121.30", "192.168.121.31"]


def test_annotate_unknown_node_stays_bare(resolver):
    tree = annotated_tree(resolver)
    assert tree.nodes["203.0.113.0/24"].edge_servers == []
    assert tree.nodes["203.0.113.0/24"].domains == set()


def test_annotate_idempotent(resolver):
    tree = annotated_tree(resolver)
    before = tree.to_document()
    identities = {
        "192.168.121.30": DomainIdentity(
            address="192.168.121.30", domain="domainA.com", provenance=Provenance.PTR
        )
    }
    edges = {"domainA.com": query_edge_srv("domainA.com", Transport.TCP, resolver)}
    annotate_tree(tree, identities, edges)
    assert tree.to_document() == before


def test_annotate_preserves_structure_and_centrality(resolver):
    tree = annotated_tree(resolver)
    doc = tree.to_document()
    bare = compute_centrality(
        build_tree(
            [
                make_path("172.16.0.9", "192.168.121.30"),
                make_path("172.16.1.9", "203.0.113.77"),
            ],
            "10.0.0.1",
        )
    ).to_document()
    assert doc["edges"] == bare["edges"]
    assert [n["subnet"] for n in doc["nodes"]] == [n["subnet"] for n in bare["nodes"]]
    assert [n["centrality"] for n in doc["nodes"]] == [
        n["centrality"] for n in bare["nodes"]
    ]


# --- edge server documents ---


def test_edge_server_document_round_trip():
    s = server()
    assert EdgeServer.from_document(s.to_document()) == s
