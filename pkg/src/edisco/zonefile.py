"""DNS record types and the zone-fixture text format.

Handles the three record types the discovery flow needs: SRV lines in the
``_edge._tcp.zone. TTL IN SRV priority weight port target`` layout, A lines,
and PTR lines under in-addr.arpa. Zone text is line oriented; ``;`` starts a
comment and ``$ORIGIN`` qualifies relative names.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from ipaddress import IPv4Address

from .errors import MalformedSrvError, MalformedZoneError

# Canonical SRV field positions, used in malformed-srv diagnostics:
# 1=_service 2=_protocol.name 3=TTL 4=class 5=SRV 6=priority 7=weight
# 8=port 9=target
FIELD_SERVICE = 1
FIELD_PROTOCOL_NAME = 2
FIELD_TTL = 3
FIELD_CLASS = 4
FIELD_TYPE = 5
FIELD_PRIORITY = 6
FIELD_WEIGHT = 7
FIELD_PORT = 8
FIELD_TARGET = 9


class Transport(str, Enum):
    TCP = "tcp"
    UDP = "udp"


def _strip_dot(name: str) -> str:
    return name[:-1] if name.endswith(".") else name


@dataclass(frozen=True)
class SrvRecord:
    """One SRV line. Service and protocol are stored bare; the leading
    underscores exist only in text form."""

    service: str
    protocol: Transport
    zone: str
    ttl: int
    dns_class: str
    priority: int
    weight: int
    port: int
    target: str

    @property
    def qname(self) -> str:
        return f"_{self.service}._{self.protocol.value}.{self.zone}"

    def to_document(self) -> dict:
        return {
            "service": self.service,
            "protocol": self.protocol.value,
            "zone": self.zone,
            "ttl": self.ttl,
            "dns_class": self.dns_class,
            "priority": self.priority,
            "weight": self.weight,
            "port": self.port,
            "target": self.target,
        }


@dataclass(frozen=True)
class ARecord:
    name: str
    ttl: int
    dns_class: str
    address: str


@dataclass(frozen=True)
class PtrRecord:
    address: str
    ttl: int
    dns_class: str
    target: str


def _take(tokens: list[str], idx: int, field: int, what: str) -> str:
    if idx >= len(tokens):
        raise MalformedSrvError(f"missing {what}", field)
    return tokens[idx]


def _parse_int_field(token: str, field: int, what: str, low: int, high: int) -> int:
    try:
        value = int(token)
    except ValueError:
        raise MalformedSrvError(f"{what} is not an integer: {token!r}", field) from None
    if not low <= value <= high:
        raise MalformedSrvError(f"{what} out of range {low}..{high}: {value}", field)
    return value


def _split_srv_owner(tokens: list[str]) -> tuple[str, str, list[str]]:
    """Return (service_label, protocol_and_zone, remaining_tokens).

    Accepts both the one-token owner of real zone files
    (``_edge._tcp.domainA.com.``) and the two-token layout where the service
    label stands alone (``_edge.  _tcp.domainA.com.``).
    """
    first = tokens[0]
    if not first.startswith("_"):
        raise MalformedSrvError(
            f"service label must start with '_': {first!r}", FIELD_SERVICE
        )
    body = _strip_dot(first)
    if "._" in body:
        service, rest = body.split("._", 1)
        return service, "_" + rest, tokens[1:]
    if len(tokens) < 2:
        raise MalformedSrvError("missing protocol and zone", FIELD_PROTOCOL_NAME)
    return body, _strip_dot(tokens[1]), tokens[2:]


def parse_srv_line(line: str) -> SrvRecord:
    """Parse one SRV record line into its nine fields.

    Whitespace runs are tolerated and trailing dots on names are normalized
    away. Raises MalformedSrvError with the failing field position.
    """
    tokens = line.split()
    if not tokens:
        raise MalformedSrvError("empty line", None)
    service, proto_zone, rest = _split_srv_owner(tokens)
    service = service.lstrip("_")
    if not service:
        raise MalformedSrvError("empty service label", FIELD_SERVICE)
    if not proto_zone.startswith("_"):
        raise MalformedSrvError(
            f"protocol label must start with '_': {proto_zone!r}", FIELD_PROTOCOL_NAME
        )
    proto_label, _, zone = proto_zone[1:].partition(".")
    try:
        protocol = Transport(proto_label.lower())
    except ValueError:
        raise MalformedSrvError(
            f"protocol must be _tcp or _udp: _{proto_label}", FIELD_PROTOCOL_NAME
        ) from None
    zone = _strip_dot(zone)
    if not zone:
        raise MalformedSrvError("missing zone name", FIELD_PROTOCOL_NAME)

    # Consume positionally so a short line fails at the first absent field,
    # e.g. a line missing its port reports field 8 whether the target token
    # is present (non-integer where port belongs) or not.
    ttl = _parse_int_field(
        _take(rest, 0, FIELD_TTL, "TTL"), FIELD_TTL, "TTL", 0, 2**31 - 1
    )
    dns_class = _take(rest, 1, FIELD_CLASS, "class")
    if dns_class.upper() != "IN":
        raise MalformedSrvError(f"unsupported class {dns_class!r}", FIELD_CLASS)
    rtype = _take(rest, 2, FIELD_TYPE, "record type")
    if rtype.upper() != "SRV":
        raise MalformedSrvError(f"not an SRV record: {rtype!r}", FIELD_TYPE)
    priority = _parse_int_field(
        _take(rest, 3, FIELD_PRIORITY, "priority"), FIELD_PRIORITY, "priority", 0, 65535
    )
    weight = _parse_int_field(
        _take(rest, 4, FIELD_WEIGHT, "weight"), FIELD_WEIGHT, "weight", 0, 65535
    )
    port = _parse_int_field(
        _take(rest, 5, FIELD_PORT, "port"), FIELD_PORT, "port", 1, 65535
    )
    target = _strip_dot(_take(rest, 6, FIELD_TARGET, "target"))
    if not target:
        raise MalformedSrvError("empty target", FIELD_TARGET)
    if len(rest) > 7:
        raise MalformedSrvError(f"trailing junk: {rest[7:]}", None)
    return SrvRecord(
        service=service,
        protocol=protocol,
        zone=zone,
        ttl=ttl,
        dns_class=dns_class.upper(),
        priority=priority,
        weight=weight,
        port=port,
        target=target,
    )


def render_srv_line(record: SrvRecord) -> str:
    return (
        f"_{record.service}._{record.protocol.value}.{record.zone}. "
        f"{record.ttl} {record.dns_class} SRV "
        f"{record.priority} {record.weight} {record.port} {record.target}."
    )


def render_a_line(record: ARecord) -> str:
    return f"{record.name}. {record.ttl} {record.dns_class} A {record.address}"


def render_ptr_line(record: PtrRecord) -> str:
    return (
        f"{reverse_pointer_name(record.address)}. {record.ttl} "
        f"{record.dns_class} PTR {record.target}."
    )


def reverse_pointer_name(address: str) -> str:
    return IPv4Address(address).reverse_pointer


def _address_from_reverse_name(owner: str) -> str:
    labels = _strip_dot(owner).lower().split(".")
    if len(labels) != 6 or labels[-2:] != ["in-addr", "arpa"]:
        raise MalformedZoneError(f"PTR owner is not a /32 in-addr.arpa name: {owner!r}")
    quad = list(reversed(labels[:4]))
    address = ".".join(quad)
    IPv4Address(address)
    return address


@dataclass
class ZoneData:
    """Parsed zone fixture, indexed for lookups."""

    srv_records: list[SrvRecord]
    a_records: list[ARecord]
    ptr_records: list[PtrRecord]

    def srv_by_qname(self, qname: str) -> list[SrvRecord]:
        wanted = _strip_dot(qname).lower()
        return [r for r in self.srv_records if r.qname.lower() == wanted]

    def a_by_name(self, name: str) -> list[ARecord]:
        wanted = _strip_dot(name).lower()
        return [r for r in self.a_records if r.name.lower() == wanted]

    def ptr_by_address(self, address: str) -> PtrRecord | None:
        for r in self.ptr_records:
            if r.address == address:
                return r
        return None

    def zone_names(self) -> set[str]:
        names = {r.zone.lower() for r in self.srv_records}
        for r in self.a_records:
            labels = r.name.lower().split(".")
            if len(labels) >= 2:
                names.add(".".join(labels[-2:]))
        return names


def _qualify(name: str, origin: str | None, line_no: int) -> str:
    if name.endswith("."):
        return _strip_dot(name)
    if name == "@":
        if origin is None:
            raise MalformedZoneError(f"line {line_no}: '@' with no $ORIGIN in effect")
        return origin
    if origin is None:
        raise MalformedZoneError(
            f"line {line_no}: relative name {name!r} with no $ORIGIN in effect"
        )
    return f"{name}.{origin}"


def parse_zone(text: str) -> ZoneData:
    """Parse zone-fixture text into records.

    Supports SRV, A, and PTR lines, comments, and $ORIGIN. Anything else is
    a malformed-zone error citing the line number.
    """
    srv: list[SrvRecord] = []
    a: list[ARecord] = []
    ptr: list[PtrRecord] = []
    origin: str | None = None
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split(";", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        if tokens[0].upper() == "$ORIGIN":
            if len(tokens) != 2:
                raise MalformedZoneError(f"line {line_no}: $ORIGIN takes one name")
            origin = _strip_dot(tokens[1])
            continue
        if tokens[0].startswith("$"):
            raise MalformedZoneError(
                f"line {line_no}: unsupported directive {tokens[0]}"
            )
        try:
            record = _parse_record_line(tokens, origin, line_no)
        except MalformedSrvError:
            raise
        except MalformedZoneError as exc:
            raise MalformedZoneError(f"line {line_no}: {exc}") from None
        if isinstance(record, SrvRecord):
            srv.append(record)
        elif isinstance(record, ARecord):
            a.append(record)
        else:
            ptr.append(record)
    return ZoneData(srv_records=srv, a_records=a, ptr_records=ptr)


def _parse_record_line(tokens: list[str], origin: str | None, line_no: int):
    if len(tokens) < 4:
        raise MalformedZoneError(f"too few fields: {' '.join(tokens)!r}")
    owner = tokens[0]
    rest = tokens[1:]
    # TTL and class may appear in either order.
    ttl: int | None = None
    dns_class: str | None = None
    while rest and (rest[0].isdigit() or rest[0].upper() in ("IN",)):
        token = rest.pop(0)
        if token.isdigit():
            if ttl is not None:
                raise MalformedZoneError("duplicate TTL")
            ttl = int(token)
        else:
            if dns_class is not None:
                raise MalformedZoneError("duplicate class")
            dns_class = token.upper()
    if ttl is None:
        raise MalformedZoneError("missing TTL")
    if dns_class is None:
        raise MalformedZoneError("missing class")
    if not rest:
        raise MalformedZoneError("missing record type")
    rtype = rest.pop(0).upper()
    if rtype == "SRV":
        qualified = _qualify(owner, origin, line_no)
        rdata = list(rest)
        if len(rdata) == 4:
            rdata[3] = _qualify(rdata[3], origin, line_no) + "."
        line = f"{qualified}. {ttl} {dns_class} SRV {' '.join(rdata)}"
        return parse_srv_line(line)
    if rtype == "A":
        if len(rest) != 1:
            raise MalformedZoneError(f"A rdata must be one address, got {rest}")
        address = rest[0]
        try:
            IPv4Address(address)
        except ValueError:
            raise MalformedZoneError(f"bad A address {address!r}") from None
        return ARecord(
            name=_qualify(owner, origin, line_no),
            ttl=ttl,
            dns_class=dns_class,
            address=address,
        )
    if rtype == "PTR":
        if len(rest) != 1:
            raise MalformedZoneError(f"PTR rdata must be one name, got {rest}")
        return PtrRecord(
            address=_address_from_reverse_name(owner),
            ttl=ttl,
            dns_class=dns_class,
            target=_qualify(rest[0], origin, line_no),
        )
    raise MalformedZoneError(f"unsupported record type {rtype!r}")
