"""HTTP redirection front end for the current round's placements.

Requests for an onloaded service get a 302 pointing at the assigned edge
server, with the remaining round time carried as Cache-Control max-age.
Anything else passes through to the origin (here: a placeholder response).
"""
from __future__ import annotations

import logging
import math
import threading
import time
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .placement import PlacementPlan
from .topology import AggregationTree, group_subnet

logger = logging.getLogger(__name__)

RuleTable = dict[tuple[str, str], "RedirectRule"]


@dataclass(frozen=True)
class RedirectRule:
    service_id: str
    client_prefix: str
    target_url: str
    expires_at: float


@dataclass(frozen=True)
class Decision:
    action: str  # "redirect" | "pass_through"
    url: str | None = None
    ttl_seconds: int | None = None

    @classmethod
    def redirect(cls, url: str, ttl_seconds: int) -> "Decision":
        return cls(action="redirect", url=url, ttl_seconds=ttl_seconds)

    @classmethod
    def pass_through(cls) -> "Decision":
        return cls(action="pass_through")


def _target_url(server) -> str:
    return f"http://{server.address}:{server.port}"


class RedirectService:
    """Rule table plus resolution. Reads are lock-free against an immutable
    table reference; installs swap the whole reference at once."""

    def __init__(self, clock=time.time, prefix_len: int = 24):
        self.clock = clock
        self.prefix_len = prefix_len
        self._table: RuleTable = {}
        self._install_lock = threading.Lock()

    def install_rules(
        self,
        plan: PlacementPlan,
        tree: AggregationTree | None = None,
        round_deadline: float = 0.0,
    ) -> RuleTable:
        """Build round N's table and swap it in atomically.

        Coverage comes from the plan's assignments; a tree is only consulted
        for assignments that carry none (then every client /24 routed
        through the assigned node is covered).
        """
        table: RuleTable = {}
        for assignment in plan.assignments:
            prefixes = assignment.covered_prefixes
            if not prefixes and tree is not None:
                prefixes = tuple(
                    sorted(
                        {
                            group_subnet(client, tree.prefix_len)
                            for client, path in tree.client_paths.items()
                            if assignment.node_subnet in path
                        }
                    )
                )
            for prefix in prefixes:
                table[(assignment.service_id, prefix)] = RedirectRule(
                    service_id=assignment.service_id,
                    client_prefix=prefix,
                    target_url=_target_url(assignment.server),
                    expires_at=round_deadline,
                )
        with self._install_lock:
            self._table = table
        return table

    def clear(self):
        with self._install_lock:
            self._table = {}

    @property
    def rule_count(self) -> int:
        return len(self._table)

    def resolve(self, client: str, service_id: str, now: float | None = None) -> Decision:
        """Covered and unexpired -> redirect with remaining TTL, otherwise
        pass through. At now = expires_at exactly the rule is already dead.
        """
        table = self._table  # one read; the reference never mutates in place
        rule = table.get((service_id, group_subnet(client, self.prefix_len)))
        if rule is None:
            return Decision.pass_through()
        if now is None:
            now = self.clock()
        remaining = rule.expires_at - now
        if remaining <= 0:
            return Decision.pass_through()
        return Decision.redirect(rule.target_url, math.ceil(remaining))


def rules_from_plan_document(
    doc: dict, round_deadline: float, clock=time.time
) -> RedirectService:
    """Stand up a RedirectService from a serialized plan alone."""
    service = RedirectService(clock=clock)
    service.install_rules(PlacementPlan.from_document(doc), round_deadline=round_deadline)
    return service


class _Handler(BaseHTTPRequestHandler):
    redirect_service: RedirectService = None  # type: ignore[assignment]

    def do_GET(self):  # noqa: N802 - http.server API
        parts = self.path.split("/", 3)
        if len(parts) < 3 or parts[1] != "svc" or not parts[2]:
            self.send_error(404, "unknown path; expected /svc/<service_id>/...")
            return
        service_id = parts[2]
        suffix = parts[3] if len(parts) > 3 else ""
        decision = self.redirect_service.resolve(self.client_address[0], service_id)
        if decision.action == "redirect":
            self.send_response(302)
            self.send_header("Location", f"{decision.url}/{suffix}")
            self.send_header("Cache-Control", f"max-age={decision.ttl_seconds}")
            self.end_headers()
        else:
            body = b"origin placeholder\n"
            self.send_response(200)
            self.send_header("Content-Type", "text/plain")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

    def log_message(self, fmt, *args):
        logger.debug("http: " + fmt, *args)


def make_http_server(
    service: RedirectService, listen: str = "127.0.0.1", port: int = 0
) -> ThreadingHTTPServer:
    """Bound but not yet serving; call serve_forever() (typically on a
    thread) and shutdown() when done."""
    handler = type("BoundHandler", (_Handler,), {"redirect_service": service})
    return ThreadingHTTPServer((listen, port), handler)
