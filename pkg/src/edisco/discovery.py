"""Map path hops to domains and retrieve `_edge` SRV records per domain.

Identification prefers PTR records and falls back to whois. All DNS goes
through a pluggable resolver so the whole flow runs against a zone fixture
offline, or against a real recursive server via the wire-format stub.
"""
from __future__ import annotations

import ipaddress
import logging
import socket
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Protocol

from . import dnswire
from .errors import NoServersError, WhoisUnreachableError
from .topology import AggregationTree
from .zonefile import ARecord, PtrRecord, SrvRecord, Transport, ZoneData

logger = logging.getLogger(__name__)

# Multi-label public suffixes the two-label default would mangle. Small on
# purpose; overridable per call.
DEFAULT_MULTI_LABEL_SUFFIXES = frozenset(
    {"co.uk", "org.uk", "ac.uk", "gov.uk", "com.au", "net.au", "co.jp", "com.br"}
)


class Provenance(str, Enum):
    PTR = "ptr"
    WHOIS = "whois"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class DomainIdentity:
    """What we learned about one address. No domain means unknown, always."""

    address: str
    domain: str | None = None
    provenance: Provenance = Provenance.UNKNOWN

    def __post_init__(self):
        if (self.provenance is Provenance.UNKNOWN) != (self.domain is None):
            raise ValueError(
                f"{self.address}: provenance {self.provenance.value} "
                f"inconsistent with domain {self.domain!r}"
            )


@dataclass(frozen=True)
class EdgeServer:
    """One advertised edge server, address already resolved."""

    zone: str
    protocol: Transport
    priority: int
    weight: int
    address: str
    port: int

    @property
    def sort_key(self):
        # priority ascending, heavier weight first, then stable identity
        return (
            self.priority,
            -self.weight,
            self.zone,
            self.protocol.value,
            ipaddress.IPv4Address(self.address),
            self.port,
        )

    def to_document(self) -> dict:
        return {
            "zone": self.zone,
            "protocol": self.protocol.value,
            "priority": self.priority,
            "weight": self.weight,
            "address": self.address,
            "port": self.port,
        }

    @classmethod
    def from_document(cls, doc: dict) -> "EdgeServer":
        return cls(
            zone=doc["zone"],
            protocol=Transport(doc["protocol"]),
            priority=doc["priority"],
            weight=doc["weight"],
            address=doc["address"],
            port=doc["port"],
        )


class Resolver(Protocol):
    def lookup_ptr(self, address: str) -> PtrRecord | None: ...

    def lookup_a(self, name: str) -> list[ARecord]: ...

    def lookup_srv(self, qname: str) -> list[SrvRecord]: ...


class ZoneFixtureResolver:
    """Resolver backed by parsed zone-fixture text. Read-only, thread-safe."""

    def __init__(self, zone: ZoneData):
        self.zone = zone

    def lookup_ptr(self, address: str) -> PtrRecord | None:
        return self.zone.ptr_by_address(address)

    def lookup_a(self, name: str) -> list[ARecord]:
        return self.zone.a_by_name(name)

    def lookup_srv(self, qname: str) -> list[SrvRecord]:
        return self.zone.srv_by_qname(qname)


def _srv_from_wire(qname: str, answer: dnswire.WireAnswer) -> SrvRecord | None:
    labels = qname.split(".")
    if len(labels) < 3 or not labels[0].startswith("_") or not labels[1].startswith("_"):
        return None
    priority, weight, port, target = answer.data  # type: ignore[misc]
    try:
        protocol = Transport(labels[1][1:].lower())
    except ValueError:
        return None
    return SrvRecord(
        service=labels[0][1:],
        protocol=protocol,
        zone=".".join(labels[2:]),
        ttl=answer.ttl,
        dns_class="IN",
        priority=priority,
        weight=weight,
        port=port,
        target=target.rstrip("."),
    )


class StubResolver:
    """Wire-format stub pointed at one or more recursive servers."""

    def __init__(self, servers: list[str] | None = None, timeout: float = 2.0):
        self.servers = servers or dnswire.resolv_nameservers()
        self.timeout = timeout
        self._txid = iter(range(1, 0xFFFF))
        self._lock = threading.Lock()

    def _next_txid(self) -> int:
        with self._lock:
            try:
                return next(self._txid)
            except StopIteration:
                self._txid = iter(range(1, 0xFFFF))
                return next(self._txid)

    def _query(self, qname: str, qtype: int) -> list[dnswire.WireAnswer]:
        last_error: Exception | None = None
        for server in self.servers:
            try:
                return dnswire.query(
                    server, qname, qtype, timeout=self.timeout, txid=self._next_txid()
                )
            except Exception as exc:  # noqa: BLE001 - try the next server
                last_error = exc
        if last_error is not None:
            raise last_error
        return []

    def lookup_ptr(self, address: str) -> PtrRecord | None:
        qname = ipaddress.IPv4Address(address).reverse_pointer
        for answer in self._query(qname, dnswire.TYPE_PTR):
            if answer.rtype == dnswire.TYPE_PTR:
                return PtrRecord(
                    address=address,
                    ttl=answer.ttl,
                    dns_class="IN",
                    target=str(answer.data).rstrip("."),
                )
        return None

    def lookup_a(self, name: str) -> list[ARecord]:
        return [
            ARecord(name=name, ttl=a.ttl, dns_class="IN", address=str(a.data))
            for a in self._query(name, dnswire.TYPE_A)
            if a.rtype == dnswire.TYPE_A
        ]

    def lookup_srv(self, qname: str) -> list[SrvRecord]:
        records = []
        for answer in self._query(qname, dnswire.TYPE_SRV):
            if answer.rtype != dnswire.TYPE_SRV:
                continue
            record = _srv_from_wire(qname, answer)
            if record is not None:
                records.append(record)
        return records


class CachingResolver:
    """TTL-honoring cache in front of another resolver.

    Scoped to a single round: build one per round, drop it at the end.
    Safe for concurrent lookups.
    """

    def __init__(self, inner: Resolver, clock=time.monotonic):
        self.inner = inner
        self.clock = clock
        self._lock = threading.Lock()
        self._cache: dict[tuple[str, str], tuple[float, object]] = {}

    def _get(self, key: tuple[str, str]):
        with self._lock:
            hit = self._cache.get(key)
            if hit is None:
                return None, False
            expires_at, value = hit
            if self.clock() >= expires_at:
                del self._cache[key]
                return None, False
            return value, True

    def _put(self, key: tuple[str, str], value, ttl: int):
        with self._lock:
            self._cache[key] = (self.clock() + ttl, value)

    def lookup_ptr(self, address: str) -> PtrRecord | None:
        key = ("ptr", address)
        value, ok = self._get(key)
        if ok:
            return value  # type: ignore[return-value]
        record = self.inner.lookup_ptr(address)
        # negative answers get a short fixed TTL
        self._put(key, record, record.ttl if record else 30)
        return record

    def lookup_a(self, name: str) -> list[ARecord]:
        key = ("a", name.lower())
        value, ok = self._get(key)
        if ok:
            return value  # type: ignore[return-value]
        records = self.inner.lookup_a(name)
        self._put(key, records, min((r.ttl for r in records), default=30))
        return records

    def lookup_srv(self, qname: str) -> list[SrvRecord]:
        key = ("srv", qname.lower())
        value, ok = self._get(key)
        if ok:
            return value  # type: ignore[return-value]
        records = self.inner.lookup_srv(qname)
        self._put(key, records, min((r.ttl for r in records), default=30))
        return records


def registrable_domain(
    name: str, multi_label_suffixes: frozenset[str] = DEFAULT_MULTI_LABEL_SUFFIXES
) -> str:
    """Last two labels of a host name, three when the tail is a known
    multi-label public suffix (router1.isp.co.uk -> isp.co.uk).

    Case is preserved; suffix matching is case-insensitive.
    """
    labels = name.rstrip(".").split(".")
    if len(labels) <= 2:
        return ".".join(labels)
    if ".".join(labels[-2:]).lower() in multi_label_suffixes:
        return ".".join(labels[-3:])
    return ".".join(labels[-2:])


class WhoisService(Protocol):
    def domains_for(self, address: str) -> list[str]: ...


class FixtureWhois:
    """Registry fixture: JSON map of CIDR prefix to registrant domain."""

    def __init__(self, prefixes: dict[str, str]):
        self.networks = [
            (ipaddress.ip_network(cidr), domain) for cidr, domain in prefixes.items()
        ]

    def domains_for(self, address: str) -> list[str]:
        ip = ipaddress.ip_address(address)
        return sorted({domain for net, domain in self.networks if ip in net})


class LiveWhois:
    """Plain port-43 whois client.

    Registry answers are free text; the best portable signal for a
    registrant domain is the mail domain of the technical/abuse contacts,
    plus explicit `domain:` attributes where present.
    """

    def __init__(self, server: str = "whois.arin.net", timeout: float = 5.0):
        self.server = server
        self.timeout = timeout

    def _raw_query(self, address: str) -> str:
        try:
            with socket.create_connection((self.server, 43), timeout=self.timeout) as sock:
                sock.sendall(address.encode() + b"\r\n")
                chunks = b""
                while True:
                    chunk = sock.recv(4096)
                    if not chunk:
                        break
                    chunks += chunk
        except OSError as exc:
            raise WhoisUnreachableError(f"{self.server}: {exc}") from None
        return chunks.decode(errors="replace")

    def domains_for(self, address: str) -> list[str]:
        domains = set()
        for line in self._raw_query(address).splitlines():
            key, _, value = line.partition(":")
            key = key.strip().lower()
            value = value.strip()
            if not value:
                continue
            if "@" in value and ("email" in key or "mailbox" in key or key == "e-mail"):
                domains.add(registrable_domain(value.rsplit("@", 1)[1]))
            elif key == "domain":
                domains.add(registrable_domain(value))
        return sorted(domains)


def whois_fallback(address: str, whois: WhoisService) -> DomainIdentity:
    """Registry lookup once PTR has failed. Ambiguity resolves to the
    lexicographically smallest domain, with a warning."""
    domains = whois.domains_for(address)
    if not domains:
        return DomainIdentity(address=address)
    if len(domains) > 1:
        logger.warning(
            "whois for %s is ambiguous (%s); using %s",
            address,
            ", ".join(domains),
            domains[0],
        )
    return DomainIdentity(
        address=address, domain=domains[0], provenance=Provenance.WHOIS
    )


def reverse_lookup(
    address: str, resolver: Resolver, whois: WhoisService | None = None
) -> DomainIdentity:
    """PTR first; registry fallback when the resolver has nothing."""
    record = resolver.lookup_ptr(address)
    if record is not None:
        return DomainIdentity(
            address=address,
            domain=registrable_domain(record.target),
            provenance=Provenance.PTR,
        )
    if whois is not None:
        return whois_fallback(address, whois)
    return DomainIdentity(address=address)


def identify_addresses(
    addresses: Iterable[str],
    resolver: Resolver,
    whois: WhoisService | None = None,
    concurrency: int = 8,
) -> dict[str, DomainIdentity]:
    """Concurrent reverse_lookup over many addresses."""
    unique = sorted(set(addresses), key=ipaddress.IPv4Address)
    if not unique:
        return {}
    with ThreadPoolExecutor(max_workers=min(concurrency, len(unique))) as pool:
        results = pool.map(lambda a: reverse_lookup(a, resolver, whois), unique)
    return {identity.address: identity for identity in results}


def query_edge_srv(
    domain: str, protocol: Transport, resolver: Resolver, service: str = "edge"
) -> list[EdgeServer]:
    """SRV lookup for one domain and transport, targets resolved to
    addresses. Targets without an A record are dropped loudly. An empty
    result is a normal outcome."""
    if not domain:
        raise ValueError("domain must be non-empty")
    qname = f"_{service}._{protocol.value}.{domain}"
    servers = []
    for record in resolver.lookup_srv(qname):
        a_records = resolver.lookup_a(record.target)
        if not a_records:
            logger.warning(
                "SRV target %s (zone %s) has no A record; dropped",
                record.target,
                record.zone,
            )
            continue
        address = sorted(a.address for a in a_records)[0]
        servers.append(
            EdgeServer(
                zone=record.zone,
                protocol=record.protocol,
                priority=record.priority,
                weight=record.weight,
                address=address,
                port=record.port,
            )
        )
    return sorted(servers, key=lambda s: s.sort_key)


def discover_local_edges(own_domain: str, resolver: Resolver) -> list[EdgeServer]:
    """Client-side discovery: both transports for the caller's own domain."""
    if not own_domain:
        raise ValueError("own domain must be non-empty")
    merged = query_edge_srv(own_domain, Transport.TCP, resolver) + query_edge_srv(
        own_domain, Transport.UDP, resolver
    )
    return sorted(merged, key=lambda s: s.sort_key)


def select_server(servers: list[EdgeServer], rng) -> EdgeServer:
    """Pick one server: lowest priority class, weight-proportional within it.

    Zero-weight servers are only eligible when the whole class has weight 0
    (then the pick is uniform). Deterministic for a seeded rng.
    """
    if not servers:
        raise NoServersError("no servers to select from")
    best = min(s.priority for s in servers)
    group = [s for s in servers if s.priority == best]
    total = sum(s.weight for s in group)
    if total == 0:
        return group[rng.randrange(len(group))]
    point = rng.randrange(total)
    acc = 0
    for server in group:
        acc += server.weight
        if point < acc:
            return server
    return group[-1]  # unreachable; randrange is < total


def annotate_tree(
    tree: AggregationTree,
    identities: dict[str, DomainIdentity],
    edges: dict[str, list[EdgeServer]],
) -> AggregationTree:
    """Attach domains and edge servers to every node.

    Rebuilt from scratch on each call, so re-annotating with the same maps
    changes nothing. Structure and centrality are never touched.
    """
    for node in tree.nodes.values():
        domains = set()
        for member in node.member_addresses:
            identity = identities.get(member)
            if identity is not None and identity.domain:
                domains.add(identity.domain)
        node.domains = domains
        merged: set[EdgeServer] = set()
        for domain in domains:
            merged.update(edges.get(domain, []))
        node.edge_servers = sorted(merged, key=lambda s: s.sort_key)
    return tree
