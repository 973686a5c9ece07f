"""Round orchestration.

A round is one pass of the whole protocol: probe every configured client,
fold the paths into an aggregation tree, identify and annotate the nodes,
then rank, score, negotiate, and install redirect rules. Rounds rebuild
everything from scratch; the only state that crosses a round boundary is
the redirect table, which the next install replaces atomically.

Every external dependency (prober, resolver, whois, capacity, clock) is an
injected provider with both live and fixture implementations, so a full
round runs offline from a scenario bundle.
"""
from __future__ import annotations

import ipaddress
import json
import logging
import math
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .discovery import (
    CachingResolver,
    FixtureWhois,
    LiveWhois,
    Resolver,
    StubResolver,
    WhoisService,
    ZoneFixtureResolver,
    annotate_tree,
    discover_local_edges,
    identify_addresses,
)
from .dnswire import resolv_nameservers
from .errors import (
    EmptyInputError,
    InvalidPeriodError,
    MalformedFixtureError,
    ResolverUnreachableError,
    RoundAbortedError,
    WhoisUnreachableError,
)
from .placement import (
    CapacityService,
    FixtureCapacityService,
    PlacementPlan,
    ServiceProfile,
    load_service_profiles,
    plan_round,
)
from .probing import FixtureProber, ProbeConfig, TracerouteProber, probe_many
from .topology import build_tree, compute_centrality, ingest_recorded_paths
from .zonefile import parse_zone

logger = logging.getLogger(__name__)

ROUND_FORMAT = "edisco-round/1"
DEFAULT_MIN_PERIOD_S = 60.0


@dataclass(frozen=True)
class RoundConfig:
    root_address: str
    clients: tuple[str, ...]
    period_s: float = 300.0
    prefix_len: int = 24
    strategy: str = "bandwidth_clients"
    probe_concurrency: int = 8

    def __post_init__(self):
        if self.period_s <= 0:
            raise InvalidPeriodError(f"period must be positive, got {self.period_s}")


@dataclass
class RoundProviders:
    prober: object
    resolver: Resolver
    whois: WhoisService | None = None
    capacity: CapacityService | None = None
    clock: Callable[[], float] = time.time


@dataclass(frozen=True)
class RoundRecord:
    round_id: int
    started_at: float
    finished_at: float
    tree_digest: str
    plan: PlacementPlan
    phase_durations: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.finished_at < self.started_at:
            raise ValueError("finished_at precedes started_at")

    def to_document(self) -> dict:
        return {
            "format": ROUND_FORMAT,
            "round_id": self.round_id,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "tree_digest": self.tree_digest,
            "phase_durations": dict(self.phase_durations),
            "plan": self.plan.to_document(),
        }


class _DegradingResolver:
    """Resolver wrapper that turns transport failures into empty answers.

    A dead resolver must not abort a round; the affected nodes simply stay
    unknown and carry no edge servers.
    """

    def __init__(self, inner: Resolver):
        self.inner = inner

    def lookup_ptr(self, address):
        try:
            return self.inner.lookup_ptr(address)
        except (ResolverUnreachableError, OSError) as exc:
            logger.warning("PTR lookup failed for %s: %s", address, exc)
            return None

    def lookup_a(self, name):
        try:
            return self.inner.lookup_a(name)
        except (ResolverUnreachableError, OSError) as exc:
            logger.warning("A lookup failed for %s: %s", name, exc)
            return []

    def lookup_srv(self, qname):
        try:
            return self.inner.lookup_srv(qname)
        except (ResolverUnreachableError, OSError) as exc:
            logger.warning("SRV lookup failed for %s: %s", qname, exc)
            return []


class _DegradingWhois:
    def __init__(self, inner: WhoisService):
        self.inner = inner

    def domains_for(self, address):
        try:
            return self.inner.domains_for(address)
        except (WhoisUnreachableError, OSError) as exc:
            logger.warning("whois lookup failed for %s: %s", address, exc)
            return []


def run_round(
    config: RoundConfig,
    services: list[ServiceProfile],
    providers: RoundProviders,
    redirect=None,
    round_id: int = 1,
) -> RoundRecord:
    """One full round: discovery phase, then deployment phase.

    Probe and lookup failures degrade (the affected client or node drops
    out); only a round that obtains zero paths aborts. When a redirect
    service is passed, the new rules expire at start + period.
    """
    if not config.clients:
        raise EmptyInputError("no client addresses configured")
    started_at = providers.clock()
    durations: dict[str, float] = {}

    mark = time.perf_counter()
    paths = probe_many(config.clients, providers.prober, config.probe_concurrency)
    durations["probe"] = time.perf_counter() - mark
    if not paths:
        raise RoundAbortedError(f"round {round_id}: zero paths obtained")

    mark = time.perf_counter()
    tree = build_tree(paths, config.root_address, config.prefix_len)
    compute_centrality(tree)
    durations["tree"] = time.perf_counter() - mark

    resolver = _DegradingResolver(providers.resolver)
    whois = _DegradingWhois(providers.whois) if providers.whois else None

    mark = time.perf_counter()
    addresses = set()
    for node in tree.nodes.values():
        addresses.update(node.member_addresses)
    identities = identify_addresses(addresses, resolver, whois)
    durations["identify"] = time.perf_counter() - mark

    mark = time.perf_counter()
    domains = sorted({i.domain for i in identities.values() if i.domain})
    edges = {domain: discover_local_edges(domain, resolver) for domain in domains}
    annotate_tree(tree, identities, edges)
    tree_digest = tree.digest()
    durations["srv"] = time.perf_counter() - mark

    mark = time.perf_counter()
    plan = plan_round(
        tree,
        services,
        providers.capacity,
        round_id=round_id,
        strategy=config.strategy,
    )
    durations["plan"] = time.perf_counter() - mark

    if redirect is not None:
        mark = time.perf_counter()
        redirect.install_rules(
            plan, tree=tree, round_deadline=started_at + config.period_s
        )
        durations["install"] = time.perf_counter() - mark

    finished_at = providers.clock()
    record = RoundRecord(
        round_id=round_id,
        started_at=started_at,
        finished_at=max(finished_at, started_at),
        tree_digest=tree_digest,
        plan=plan,
        phase_durations=durations,
    )
    logger.info(
        "round %d: %d paths, %d assignments, %d unplaced",
        round_id,
        len(paths),
        len(plan.assignments),
        len(plan.unplaced),
    )
    return record


def append_journal(path, record: RoundRecord):
    """One JSON line per round, append-only."""
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(record.to_document(), sort_keys=True) + "\n")


def read_client_addresses(path) -> list[str]:
    """Client list file: one IPv4 address per line, # comments, duplicates
    collapsed in first-seen order."""
    clients = []
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                ipaddress.IPv4Address(line)
            except ValueError as exc:
                raise MalformedFixtureError(f"{path} line {line_no}: {exc}") from exc
            if line not in clients:
                clients.append(line)
    return clients


def ingest_request_log(path) -> list[str]:
    """Pull client addresses out of an access log: first whitespace token
    per line, non-address lines skipped. Ragged input is expected."""
    clients = []
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            token = raw.split(None, 1)[0] if raw.strip() else ""
            try:
                ipaddress.IPv4Address(token)
            except ValueError:
                continue
            if token not in clients:
                clients.append(token)
    return clients


class Scheduler:
    """Fires a runner every period on a dedicated thread.

    An overrunning round never overlaps the next: missed ticks are skipped
    and the runner resumes on the next grid point. A failed round is logged
    and the schedule keeps going. stop() is clean and idempotent.
    """

    def __init__(
        self,
        period_s: float,
        runner: Callable[[], object],
        min_period_s: float = DEFAULT_MIN_PERIOD_S,
        clock: Callable[[], float] = time.monotonic,
    ):
        if period_s < min_period_s:
            raise InvalidPeriodError(
                f"period {period_s}s is below the {min_period_s}s minimum"
            )
        self.period_s = float(period_s)
        self._runner = runner
        self._clock = clock
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self.rounds_started = 0

    def start(self) -> "Scheduler":
        if self._thread is not None:
            raise RuntimeError("scheduler already started")
        self._thread = threading.Thread(
            target=self._loop, name="edisco-scheduler", daemon=True
        )
        self._thread.start()
        return self

    def _loop(self):
        t0 = self._clock()
        tick = t0  # first round fires immediately
        while not self._stop.is_set():
            now = self._clock()
            if now < tick and self._stop.wait(tick - now):
                break
            self.rounds_started += 1
            try:
                self._runner()
            except RoundAbortedError as exc:
                logger.warning("round aborted: %s", exc)
            except Exception:
                logger.exception("round failed")
            elapsed = self._clock() - t0
            tick = t0 + (math.floor(elapsed / self.period_s) + 1) * self.period_s

    def stop(self):
        self._stop.set()
        thread, self._thread = self._thread, None
        if thread is not None:
            thread.join()


class RunSetup:
    """A run config plus everything loaded from it.

    The JSON config names the client list, the fixture files (or live
    flags), and the round parameters:

        {
          "root": "240.0.0.1",
          "clients": "clients.txt",
          "services": "services.json",
          "capacity": "capacity.json",
          "traces": "traces.json",      // or "live_probe": true
          "zone": "zone.txt",           // or "live_dns": true
          "whois": "whois.json",        // or "live_whois": true, or absent
          "period_s": 300,
          "prefix_len": 24,
          "strategy": "bandwidth_clients",
          "listen": "127.0.0.1:8302"
        }

    Relative paths resolve against the config file's directory. Capacity is
    always fixture-backed. make_providers() builds a fresh provider set per
    round; capacity headroom and resolver caches last exactly one round.
    """

    def __init__(self, doc: dict, base_dir):
        self.base = Path(base_dir)
        for key in ("root", "clients", "services", "capacity"):
            if key not in doc:
                raise MalformedFixtureError(f"config is missing {key!r}")
        self.doc = doc
        clients = read_client_addresses(self._path(doc["clients"]))
        self.config = RoundConfig(
            root_address=doc["root"],
            clients=tuple(clients),
            period_s=float(doc.get("period_s", 300)),
            prefix_len=int(doc.get("prefix_len", 24)),
            strategy=doc.get("strategy", "bandwidth_clients"),
            probe_concurrency=int(doc.get("probe_concurrency", 8)),
        )
        with open(self._path(doc["services"]), encoding="utf-8") as fh:
            self.services = load_service_profiles(json.load(fh))
        self.listen = doc.get("listen", "127.0.0.1:0")

    def _path(self, rel) -> Path:
        return self.base / rel

    def _make_prober(self):
        doc = self.doc
        if doc.get("live_probe"):
            probe = doc.get("probe", {})
            return TracerouteProber(ProbeConfig(**probe))
        if "traces" not in doc:
            raise MalformedFixtureError("config needs traces or live_probe")
        with open(self._path(doc["traces"]), encoding="utf-8") as fh:
            return FixtureProber(ingest_recorded_paths(json.load(fh)))

    def _make_resolver(self) -> Resolver:
        doc = self.doc
        if doc.get("live_dns"):
            servers = doc.get("nameservers") or resolv_nameservers()
            return CachingResolver(StubResolver(servers))
        if "zone" not in doc:
            raise MalformedFixtureError("config needs zone or live_dns")
        with open(self._path(doc["zone"]), encoding="utf-8") as fh:
            return ZoneFixtureResolver(parse_zone(fh.read()))

    def _make_whois(self) -> WhoisService | None:
        doc = self.doc
        if doc.get("live_whois"):
            return LiveWhois()
        if "whois" not in doc:
            return None
        with open(self._path(doc["whois"]), encoding="utf-8") as fh:
            return FixtureWhois(json.load(fh))

    def _make_capacity(self) -> CapacityService:
        with open(self._path(self.doc["capacity"]), encoding="utf-8") as fh:
            return FixtureCapacityService(json.load(fh))

    def make_providers(self) -> RoundProviders:
        return RoundProviders(
            prober=self._make_prober(),
            resolver=self._make_resolver(),
            whois=self._make_whois(),
            capacity=self._make_capacity(),
        )


def load_run_config(path) -> RunSetup:
    config_path = Path(path)
    with open(config_path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise MalformedFixtureError(f"{path}: config must be a JSON object")
    return RunSetup(doc, config_path.parent)
