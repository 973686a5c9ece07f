"""Service ranking, candidate scoring, and capacity negotiation.

The deployment half of a round: decide which services to onload, walk each
service's candidate list (high centrality first, then closest to its
clients), and ask servers for capacity until one accepts.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, Protocol

from .discovery import EdgeServer
from .errors import (
    MalformedFixtureError,
    NoCandidatesError,
    ServerUnreachableError,
)
from .topology import AggregationTree, SubnetNode, subnet_sort_key, group_subnet
from .zonefile import Transport

logger = logging.getLogger(__name__)

PLAN_FORMAT = "edisco-plan/1"


@dataclass(frozen=True)
class ServiceProfile:
    """One cloud service considered for onloading."""

    service_id: str
    bandwidth_demand: float
    cpu_demand: float
    client_subnets: frozenset[str]
    transport: Transport = Transport.TCP

    def __post_init__(self):
        if self.bandwidth_demand < 0 or self.cpu_demand < 0:
            raise ValueError(f"{self.service_id}: demands must be non-negative")

    def to_document(self) -> dict:
        return {
            "service_id": self.service_id,
            "bandwidth_demand": self.bandwidth_demand,
            "cpu_demand": self.cpu_demand,
            "client_subnets": sorted(self.client_subnets, key=subnet_sort_key),
            "transport": self.transport.value,
        }

    @classmethod
    def from_document(cls, doc: dict) -> "ServiceProfile":
        return cls(
            service_id=doc["service_id"],
            bandwidth_demand=doc["bandwidth_demand"],
            cpu_demand=doc["cpu_demand"],
            client_subnets=frozenset(doc["client_subnets"]),
            transport=Transport(doc.get("transport", "tcp")),
        )


def load_service_profiles(document) -> list[ServiceProfile]:
    if not isinstance(document, list):
        raise MalformedFixtureError("services fixture must be a top-level list")
    profiles = []
    for i, entry in enumerate(document):
        try:
            profiles.append(ServiceProfile.from_document(entry))
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedFixtureError(f"service entry {i}: {exc}") from None
    return profiles


@dataclass(frozen=True)
class PlacementCandidate:
    node: SubnetNode
    server: EdgeServer
    centrality: int  # restricted to the service's own clients
    client_distance: float

    def __post_init__(self):
        if self.server not in self.node.edge_servers:
            raise ValueError(f"server {self.server.address} not on node {self.node.subnet}")


@dataclass(frozen=True)
class Assignment:
    service_id: str
    server: EdgeServer
    node_subnet: str
    covered_prefixes: tuple[str, ...]


@dataclass(frozen=True)
class Rejection:
    service_id: str
    server: EdgeServer
    reason: str


@dataclass
class PlacementPlan:
    round_id: int
    assignments: list[Assignment] = field(default_factory=list)
    rejected: list[Rejection] = field(default_factory=list)
    unplaced: list[str] = field(default_factory=list)

    def __post_init__(self):
        placed = {a.service_id for a in self.assignments}
        overlap = placed & set(self.unplaced)
        if overlap:
            raise ValueError(f"services both placed and unplaced: {sorted(overlap)}")

    def to_document(self) -> dict:
        return {
            "format": PLAN_FORMAT,
            "round_id": self.round_id,
            "assignments": [
                {
                    "service_id": a.service_id,
                    "node": a.node_subnet,
                    "server": a.server.to_document(),
                    "coverage": list(a.covered_prefixes),
                }
                for a in self.assignments
            ],
            "rejected": [
                {
                    "service_id": r.service_id,
                    "server": r.server.to_document(),
                    "reason": r.reason,
                }
                for r in self.rejected
            ],
            "unplaced": list(self.unplaced),
        }

    @classmethod
    def from_document(cls, doc: dict) -> "PlacementPlan":
        if doc.get("format") != PLAN_FORMAT:
            raise MalformedFixtureError(
                f"not a plan document (format={doc.get('format')!r})"
            )
        return cls(
            round_id=doc["round_id"],
            assignments=[
                Assignment(
                    service_id=a["service_id"],
                    server=EdgeServer.from_document(a["server"]),
                    node_subnet=a["node"],
                    covered_prefixes=tuple(a["coverage"]),
                )
                for a in doc["assignments"]
            ],
            rejected=[
                Rejection(
                    service_id=r["service_id"],
                    server=EdgeServer.from_document(r["server"]),
                    reason=r["reason"],
                )
                for r in doc["rejected"]
            ],
            unplaced=list(doc["unplaced"]),
        )

    def digest_input(self) -> str:
        return json.dumps(self.to_document(), sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True)
class CapacityResponse:
    server: EdgeServer
    accepted: bool
    available_cpu: float
    available_bandwidth: float
    reason: str | None = None


class CapacityService(Protocol):
    def request(
        self, server: EdgeServer, cpu: float, bandwidth: float
    ) -> CapacityResponse: ...


class FixtureCapacityService:
    """Capacity fixture: per-address headroom, decremented on each accept.

    State lasts one round; build a fresh instance per round.
    """

    def __init__(self, capacities: dict[str, dict]):
        self.available = {
            address: {"cpu": float(spec["cpu"]), "bandwidth": float(spec["bandwidth"])}
            for address, spec in capacities.items()
        }

    def request(
        self, server: EdgeServer, cpu: float, bandwidth: float
    ) -> CapacityResponse:
        slot = self.available.get(server.address)
        if slot is None:
            raise ServerUnreachableError(f"{server.address}: not answering")
        accepted = slot["cpu"] >= cpu and slot["bandwidth"] >= bandwidth
        response = CapacityResponse(
            server=server,
            accepted=accepted,
            available_cpu=slot["cpu"],
            available_bandwidth=slot["bandwidth"],
            reason=None if accepted else "insufficient-capacity",
        )
        if accepted:
            slot["cpu"] -= cpu
            slot["bandwidth"] -= bandwidth
        return response


def _by_bandwidth_times_clients(profile: ServiceProfile) -> float:
    return profile.bandwidth_demand * len(profile.client_subnets)


SCORING_STRATEGIES: dict[str, Callable[[ServiceProfile], float]] = {
    "bandwidth_clients": _by_bandwidth_times_clients,
}


def rank_services(
    profiles: Iterable[ServiceProfile], strategy: str = "bandwidth_clients"
) -> list[ServiceProfile]:
    """Order services by onload benefit, highest first. Ties break on
    service_id so the ranking is total."""
    score = SCORING_STRATEGIES[strategy]
    return sorted(profiles, key=lambda p: (-score(p), p.service_id))


def _service_clients(tree: AggregationTree, service: ServiceProfile) -> list[str]:
    return [
        client
        for client in tree.clients
        if group_subnet(client, tree.prefix_len) in service.client_subnets
    ]


def _distance_to_client(path: tuple[str, ...], subnet: str) -> int | None:
    # hops from the node's last occurrence to the path's end (the client)
    for i in range(len(path) - 1, -1, -1):
        if path[i] == subnet:
            return len(path) - 1 - i
    return None


def score_candidates(
    tree: AggregationTree, service: ServiceProfile
) -> list[PlacementCandidate]:
    """All deployable (node, server) pairs for one service, best first.

    Centrality is recomputed against the service's own clients only; the
    sort is centrality descending, mean distance to those clients ascending,
    then subnet, then server identity.
    """
    clients = _service_clients(tree, service)
    candidates = []
    for subnet in tree.sorted_subnets():
        node = tree.nodes[subnet]
        servers = [s for s in node.edge_servers if s.protocol is service.transport]
        if not servers:
            continue
        distances = []
        for client in clients:
            d = _distance_to_client(tree.client_paths[client], subnet)
            if d is not None:
                distances.append(d)
        if not distances:
            continue  # not on any client path of this service
        restricted = len(distances)
        mean_distance = sum(distances) / len(distances)
        for server in servers:
            candidates.append(
                PlacementCandidate(
                    node=node,
                    server=server,
                    centrality=restricted,
                    client_distance=mean_distance,
                )
            )
    if not candidates:
        raise NoCandidatesError(
            f"{service.service_id}: no edge-equipped node on any client path"
        )
    candidates.sort(
        key=lambda c: (
            -c.centrality,
            c.client_distance,
            subnet_sort_key(c.node.subnet),
            c.server.sort_key,
        )
    )
    return candidates


def negotiate(
    candidate: PlacementCandidate,
    service: ServiceProfile,
    capacity: CapacityService,
) -> CapacityResponse:
    """One capacity request. An unreachable server is a reject with reason,
    not an exception; the round must go on."""
    try:
        return capacity.request(
            candidate.server, service.cpu_demand, service.bandwidth_demand
        )
    except ServerUnreachableError as exc:
        return CapacityResponse(
            server=candidate.server,
            accepted=False,
            available_cpu=0.0,
            available_bandwidth=0.0,
            reason=f"unreachable: {exc}",
        )


def _coverage(
    tree: AggregationTree, service: ServiceProfile, subnet: str
) -> tuple[str, ...]:
    prefixes = {
        group_subnet(client, tree.prefix_len)
        for client in _service_clients(tree, service)
        if subnet in tree.client_paths[client]
    }
    return tuple(sorted(prefixes, key=subnet_sort_key))


def plan_round(
    tree: AggregationTree,
    profiles: Iterable[ServiceProfile],
    capacity: CapacityService,
    round_id: int = 0,
    strategy: str = "bandwidth_clients",
) -> PlacementPlan:
    """Greedy deployment: per ranked service, walk candidates until a server
    accepts. Rejections and unplaceable services are recorded, never raised.
    """
    plan = PlacementPlan(round_id=round_id)
    for service in rank_services(list(profiles), strategy):
        try:
            candidates = score_candidates(tree, service)
        except NoCandidatesError as exc:
            logger.info("%s", exc)
            plan.unplaced.append(service.service_id)
            continue
        placed = False
        for candidate in candidates:
            response = negotiate(candidate, service, capacity)
            if response.accepted:
                plan.assignments.append(
                    Assignment(
                        service_id=service.service_id,
                        server=candidate.server,
                        node_subnet=candidate.node.subnet,
                        covered_prefixes=_coverage(
                            tree, service, candidate.node.subnet
                        ),
                    )
                )
                placed = True
                break
            plan.rejected.append(
                Rejection(
                    service_id=service.service_id,
                    server=candidate.server,
                    reason=response.reason or "rejected",
                )
            )
        if not placed:
            plan.unplaced.append(service.service_id)
    return plan
