"""Shared test helpers: path builders and the reference zone fixture."""
from __future__ import annotations

import random

import pytest

from edisco.topology import Hop, ProbedPath

# Reference zone: two edge servers in one /24, advertised for both
# transports. A-line spacing is intentionally uneven; parsers must not care.
REFERENCE_ZONE = """\
_edge._tcp.domainA.com. 86400 IN SRV 10 30 5060 serverA.domainA.com.
_edge._tcp.domainA.com. 86400 IN SRV 10 10 5060 serverB.domainA.com.
_edge._udp.domainA.com. 86400 IN SRV 10 30 1720 serverA.domainA.com.
_edge._udp.domainA.com. 86400 IN SRV 10 10 1720 serverB.domainA.com.
serverA.domainA.com.  86400 IN A 192.168.121.30
serverB.domainA.com.  86400 IN A 192.168.121.31
"""


@pytest.fixture
def reference_zone() -> str:
    return REFERENCE_ZONE


def make_path(
    client: str, *hop_addresses: str | None, complete: bool = True
) -> ProbedPath:
    """Path through the given intermediate hops; the client itself is
    appended as the final hop unless complete=False."""
    addresses = list(hop_addresses)
    if complete:
        addresses.append(client)
    hops = tuple(
        Hop(index=i, address=a, rtt_ms=None if a is None else float(i))
        for i, a in enumerate(addresses, start=1)
    )
    return ProbedPath(client=client, hops=hops)


def random_paths(seed: int, n_clients: int = 20) -> list[ProbedPath]:
    """Seeded random topology: shared router pool, occasional unknown hops,
    occasional truncated probes. Clients and routers never collide."""
    rng = random.Random(seed)
    routers = [
        f"10.{i + 1}.{rng.randint(0, 3)}.{rng.randint(1, 254)}"
        for i in range(rng.randint(3, 12))
    ]
    paths = []
    for c in range(n_clients):
        client = f"172.16.{c}.{rng.randint(1, 254)}"
        chain: list[str | None] = [
            rng.choice(routers) if rng.random() > 0.15 else None
            for _ in range(rng.randint(1, 5))
        ]
        paths.append(make_path(client, *chain, complete=rng.random() > 0.1))
    return paths
