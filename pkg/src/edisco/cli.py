"""Command line entry point.

One binary, eight subcommands: probe, tree, export-dot, discover, plan,
serve-redirect, run, gen. Data goes to stdout (or --out), diagnostics to
stderr. Exit codes: 0 success, 1 operational error, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

from .discovery import (
    CachingResolver,
    FixtureWhois,
    StubResolver,
    ZoneFixtureResolver,
    annotate_tree,
    discover_local_edges,
    identify_addresses,
)
from .dnswire import resolv_nameservers
from .errors import EdiscoError
from .placement import FixtureCapacityService, load_service_profiles, plan_round
from .probing import ProbeConfig, TracerouteProber
from .redirect import RedirectService, make_http_server, rules_from_plan_document
from .rounds import Scheduler, append_journal, load_run_config, run_round
from .simharness import ScenarioSpec, generate_scenario, validate_bundle
from .topology import (
    AggregationTree,
    build_tree,
    compute_centrality,
    export_dot,
    ingest_recorded_paths,
    paths_to_document,
)
from .zonefile import parse_zone

logger = logging.getLogger(__name__)


def _load_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _emit(args, text: str):
    out = getattr(args, "out", None)
    if out:
        Path(out).write_text(text if text.endswith("\n") else text + "\n")
        print(f"wrote {out}", file=sys.stderr)
    else:
        print(text)


def _emit_document(args, document):
    _emit(args, json.dumps(document, indent=2, sort_keys=True))


def _parse_listen(value: str) -> tuple[str, int]:
    host, sep, port = value.rpartition(":")
    if not sep or not port.isdigit():
        raise argparse.ArgumentTypeError(f"expected HOST:PORT, got {value!r}")
    return host, int(port)


def _load_tree(args) -> AggregationTree:
    if getattr(args, "tree", None):
        return AggregationTree.from_document(_load_json(args.tree))
    if getattr(args, "traces", None) and getattr(args, "root", None):
        paths = ingest_recorded_paths(_load_json(args.traces))
        return compute_centrality(
            build_tree(paths, args.root, getattr(args, "prefix_len", 24))
        )
    raise EdiscoError("need either --tree or both --traces and --root")


def _fixture_resolver(zone_path):
    with open(zone_path, encoding="utf-8") as fh:
        return ZoneFixtureResolver(parse_zone(fh.read()))


# -- subcommand handlers -------------------------------------------------------


def cmd_probe(args) -> int:
    config = ProbeConfig(
        method=args.method,
        probes_per_hop=args.probes,
        timeout_s=args.timeout_s,
        max_ttl=args.max_ttl,
    )
    prober = TracerouteProber(config)
    paths = [prober.probe(client) for client in args.clients]
    if args.json:
        _emit_document(args, paths_to_document(paths))
        return 0
    lines = []
    for path in paths:
        lines.append(f"# {path.client}" + (" (truncated)" if path.truncated else ""))
        for hop in path.hops:
            if hop.known:
                lines.append(f"{hop.index:3d}  {hop.address:<15s}  {hop.rtt_ms:.2f} ms")
            else:
                lines.append(f"{hop.index:3d}  *")
    _emit(args, "\n".join(lines))
    return 0


def cmd_tree(args) -> int:
    paths = ingest_recorded_paths(_load_json(args.traces))
    tree = compute_centrality(build_tree(paths, args.root, args.prefix_len))
    _emit_document(args, tree.to_document())
    return 0


def cmd_export_dot(args) -> int:
    _emit(args, export_dot(_load_tree(args)))
    return 0


def cmd_discover(args) -> int:
    if args.zone:
        resolver = _fixture_resolver(args.zone)
    else:
        resolver = CachingResolver(StubResolver(resolv_nameservers()))
    servers = discover_local_edges(args.domain, resolver)
    if args.transport != "both":
        servers = [s for s in servers if s.protocol.value == args.transport]
    if not servers:
        print(f"no edge servers advertised for {args.domain}", file=sys.stderr)
    if args.json:
        _emit_document(args, [s.to_document() for s in servers])
        return 0
    lines = [f"{'PRIO':>4}  {'WEIGHT':>6}  {'PORT':>5}  {'ADDRESS':<15}  PROTO  ZONE"]
    for s in servers:
        lines.append(
            f"{s.priority:>4}  {s.weight:>6}  {s.port:>5}  {s.address:<15}"
            f"  {s.protocol.value:<5}  {s.zone}"
        )
    _emit(args, "\n".join(lines))
    return 0


def cmd_plan(args) -> int:
    tree = _load_tree(args)
    if args.zone:
        resolver = _fixture_resolver(args.zone)
        whois = FixtureWhois(_load_json(args.whois)) if args.whois else None
        addresses = set()
        for node in tree.nodes.values():
            addresses.update(node.member_addresses)
        identities = identify_addresses(addresses, resolver, whois)
        domains = sorted({i.domain for i in identities.values() if i.domain})
        edges = {d: discover_local_edges(d, resolver) for d in domains}
        annotate_tree(tree, identities, edges)
    services = load_service_profiles(_load_json(args.services))
    capacity = FixtureCapacityService(_load_json(args.capacity))
    plan = plan_round(
        tree, services, capacity, round_id=args.round_id, strategy=args.strategy
    )
    _emit_document(args, plan.to_document())
    if plan.unplaced:
        print(f"unplaced: {', '.join(plan.unplaced)}", file=sys.stderr)
    return 0


def cmd_serve_redirect(args) -> int:
    doc = _load_json(args.plan)
    deadline = time.time() + args.period_s
    service = rules_from_plan_document(doc, deadline)
    host, port = args.listen
    httpd = make_http_server(service, host, port)
    bound = httpd.server_address
    print(
        f"serving {service.rule_count} rules on http://{bound[0]}:{bound[1]}"
        f" until +{args.period_s:.0f}s",
        file=sys.stderr,
    )
    try:
        httpd.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        httpd.server_close()
    return 0


def cmd_run(args) -> int:
    config_path = args.config or os.environ.get("EDISCO_CONFIG")
    if not config_path:
        print(
            "edisco run: no --config given and EDISCO_CONFIG is unset",
            file=sys.stderr,
        )
        return 2
    setup = load_run_config(config_path)

    if args.once:
        redirect = RedirectService()
        record = run_round(
            setup.config, setup.services, setup.make_providers(), redirect=redirect
        )
        if args.journal:
            append_journal(args.journal, record)
        _emit_document(args, record.to_document())
        return 0

    redirect = RedirectService()
    host, port = _parse_listen(setup.listen)
    httpd = make_http_server(redirect, host, port)
    bound = httpd.server_address
    print(f"redirect service on http://{bound[0]}:{bound[1]}", file=sys.stderr)
    import threading

    server_thread = threading.Thread(target=httpd.serve_forever, daemon=True)
    server_thread.start()

    counter = {"round_id": 0}

    def one_round():
        counter["round_id"] += 1
        record = run_round(
            setup.config,
            setup.services,
            setup.make_providers(),
            redirect=redirect,
            round_id=counter["round_id"],
        )
        if args.journal:
            append_journal(args.journal, record)
        print(
            f"round {record.round_id}: digest {record.tree_digest[:12]}, "
            f"{len(record.plan.assignments)} assignments",
            file=sys.stderr,
        )

    try:
        scheduler = Scheduler(setup.config.period_s, one_round)
    except EdiscoError:
        httpd.shutdown()
        httpd.server_close()
        raise
    scheduler.start()
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        pass
    finally:
        scheduler.stop()
        httpd.shutdown()
        httpd.server_close()
    return 0


def cmd_gen(args) -> int:
    spec = ScenarioSpec(
        clients=args.clients,
        seed=args.seed,
        depth_min=args.depth_min,
        depth_max=args.depth_max,
        branching=args.branching,
        edge_density=args.edge_density,
        services=args.services,
        unknown_hop_rate=args.unknown_hop_rate,
        ptr_missing_rate=args.ptr_missing_rate,
    )
    bundle = generate_scenario(spec, include_expected=not args.no_expected)
    violations = validate_bundle(bundle)
    if violations:
        for v in violations:
            print(f"invalid bundle: {v.location}: {v.message}", file=sys.stderr)
        return 1
    files = bundle.write(args.out)
    if args.json:
        summary = {
            "directory": str(args.out),
            "files": [f.name for f in files],
            "clients": len(bundle.clients),
            "root": bundle.root_address,
        }
        print(json.dumps(summary, indent=2, sort_keys=True))
    else:
        print(f"wrote {len(files)} files to {args.out}")
    return 0


# -- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="edisco",
        description="Edge discovery and deployment: probe paths, build "
        "aggregation trees, discover edge servers, place services, and "
        "serve redirects.",
    )
    parser.add_argument(
        "-v", "--verbose", action="store_true", help="debug logging on stderr"
    )
    sub = parser.add_subparsers(dest="subcommand", required=True, metavar="COMMAND")

    p = sub.add_parser("probe", help="traceroute one or more clients (needs raw sockets)")
    p.add_argument("clients", nargs="+", metavar="CLIENT")
    p.add_argument("--method", choices=["udp", "icmp"], default="udp")
    p.add_argument("--max-ttl", type=int, default=30)
    p.add_argument("--probes", type=int, default=3, help="probes per hop")
    p.add_argument("--timeout-s", type=float, default=1.0)
    p.add_argument("--json", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("tree", help="build an aggregation tree from recorded traces")
    p.add_argument("--traces", required=True)
    p.add_argument("--root", required=True)
    p.add_argument("--prefix-len", type=int, default=24)
    p.add_argument("--out")
    p.set_defaults(func=cmd_tree)

    p = sub.add_parser("export-dot", help="render a tree as Graphviz DOT")
    p.add_argument("--tree", help="tree document file")
    p.add_argument("--traces", help="build the tree from traces instead")
    p.add_argument("--root")
    p.add_argument("--prefix-len", type=int, default=24)
    p.add_argument("--out")
    p.set_defaults(func=cmd_export_dot)

    p = sub.add_parser("discover", help="query _edge SRV records for a domain")
    p.add_argument("--domain", required=True)
    p.add_argument("--zone", help="zone fixture file (live DNS when omitted)")
    p.add_argument("--transport", choices=["tcp", "udp", "both"], default="both")
    p.add_argument("--json", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_discover)

    p = sub.add_parser("plan", help="rank, score, and negotiate one deployment plan")
    p.add_argument("--tree", help="tree document (already annotated or with --zone)")
    p.add_argument("--traces", help="build the tree from traces instead")
    p.add_argument("--root")
    p.add_argument("--prefix-len", type=int, default=24)
    p.add_argument("--zone", help="zone fixture for annotation")
    p.add_argument("--whois", help="whois fixture for annotation")
    p.add_argument("--services", required=True)
    p.add_argument("--capacity", required=True)
    p.add_argument("--round-id", type=int, default=1)
    p.add_argument("--strategy", default="bandwidth_clients")
    p.add_argument("--out")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("serve-redirect", help="serve HTTP redirects from a plan")
    p.add_argument("--plan", required=True)
    p.add_argument("--listen", type=_parse_listen, default=("127.0.0.1", 8302))
    p.add_argument("--period-s", type=float, default=300.0)
    p.set_defaults(func=cmd_serve_redirect)

    p = sub.add_parser("run", help="run protocol rounds from a config")
    p.add_argument("--config", help="config file (default: $EDISCO_CONFIG)")
    p.add_argument("--once", action="store_true", help="single round, then exit")
    p.add_argument("--journal", help="append RoundRecords to this JSON-lines file")
    p.add_argument("--out")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("gen", help="generate a deterministic scenario bundle")
    p.add_argument("--clients", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--services", type=int, default=3)
    p.add_argument("--depth-min", type=int, default=2)
    p.add_argument("--depth-max", type=int, default=5)
    p.add_argument("--branching", type=int, default=3)
    p.add_argument("--edge-density", type=float, default=0.5)
    p.add_argument("--unknown-hop-rate", type=float, default=0.0)
    p.add_argument("--ptr-missing-rate", type=float, default=0.0)
    p.add_argument("--no-expected", action="store_true")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_gen)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except EdiscoError as exc:
        print(f"edisco: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"edisco: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
