"""Minimal DNS wire-format codec for the stub resolver.

Covers exactly what edge discovery needs: build one-question queries and
decode A, PTR, and SRV answers, with name-compression support on the read
side. Queries go over UDP with a TCP retry when the server sets TC.
"""
from __future__ import annotations

import socket
import struct
from dataclasses import dataclass

from .errors import ResolverUnreachableError

TYPE_A = 1
TYPE_PTR = 12
TYPE_SRV = 33
CLASS_IN = 1

FLAG_RD = 0x0100
FLAG_TC = 0x0200

RCODE_NOERROR = 0
RCODE_NXDOMAIN = 3

MAX_PACKET = 4096


def encode_name(name: str) -> bytes:
    out = bytearray()
    for label in name.rstrip(".").split("."):
        raw = label.encode("ascii")
        if not 0 < len(raw) < 64:
            raise ValueError(f"bad label {label!r} in {name!r}")
        out.append(len(raw))
        out += raw
    out.append(0)
    return bytes(out)


def decode_name(packet: bytes, offset: int) -> tuple[str, int]:
    """Read a possibly-compressed name. Returns (name, offset-after-field)."""
    labels = []
    jumped = False
    after = offset
    seen = set()
    while True:
        if offset >= len(packet):
            raise ValueError("name runs off packet end")
        length = packet[offset]
        if length & 0xC0 == 0xC0:
            # compression pointer: 14-bit offset into the packet
            if offset + 1 >= len(packet):
                raise ValueError("truncated compression pointer")
            target = ((length & 0x3F) << 8) | packet[offset + 1]
            if not jumped:
                after = offset + 2
                jumped = True
            if target in seen:
                raise ValueError("compression pointer loop")
            seen.add(target)
            offset = target
            continue
        if length & 0xC0:
            raise ValueError(f"unsupported label type 0x{length:02x}")
        offset += 1
        if length == 0:
            break
        labels.append(packet[offset : offset + length].decode("ascii"))
        offset += length
    if not jumped:
        after = offset
    return ".".join(labels), after


def build_query(qname: str, qtype: int, txid: int) -> bytes:
    header = struct.pack(">HHHHHH", txid, FLAG_RD, 1, 0, 0, 0)
    return header + encode_name(qname) + struct.pack(">HH", qtype, CLASS_IN)


@dataclass(frozen=True)
class WireAnswer:
    name: str
    rtype: int
    ttl: int
    data: object  # str for A/PTR, (priority, weight, port, target) for SRV


def parse_response(packet: bytes) -> tuple[int, int, list[WireAnswer]]:
    """Decode header + answer section. Returns (txid, rcode, answers)."""
    if len(packet) < 12:
        raise ValueError("short DNS packet")
    txid, flags, qdcount, ancount, _, _ = struct.unpack(">HHHHHH", packet[:12])
    rcode = flags & 0x000F
    offset = 12
    for _ in range(qdcount):
        _, offset = decode_name(packet, offset)
        offset += 4  # qtype + qclass
    answers = []
    for _ in range(ancount):
        name, offset = decode_name(packet, offset)
        rtype, rclass, ttl, rdlength = struct.unpack_from(">HHIH", packet, offset)
        offset += 10
        rdata = packet[offset : offset + rdlength]
        if len(rdata) != rdlength:
            raise ValueError("truncated rdata")
        data: object
        if rtype == TYPE_A and rclass == CLASS_IN:
            if rdlength != 4:
                raise ValueError("A rdata must be 4 bytes")
            data = socket.inet_ntoa(rdata)
        elif rtype == TYPE_PTR:
            data, _ = decode_name(packet, offset)
        elif rtype == TYPE_SRV:
            priority, weight, port = struct.unpack_from(">HHH", packet, offset)
            target, _ = decode_name(packet, offset + 6)
            data = (priority, weight, port, target)
        else:
            data = rdata
        offset += rdlength
        answers.append(WireAnswer(name=name, rtype=rtype, ttl=ttl, data=data))
    return txid, rcode, answers


def is_truncated(packet: bytes) -> bool:
    if len(packet) < 4:
        return False
    flags = struct.unpack(">H", packet[2:4])[0]
    return bool(flags & FLAG_TC)


def _query_udp(server: str, request: bytes, timeout: float) -> bytes:
    with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as sock:
        sock.settimeout(timeout)
        sock.sendto(request, (server, 53))
        return sock.recv(MAX_PACKET)


def _query_tcp(server: str, request: bytes, timeout: float) -> bytes:
    with socket.create_connection((server, 53), timeout=timeout) as sock:
        sock.sendall(struct.pack(">H", len(request)) + request)
        raw_len = _read_exact(sock, 2)
        return _read_exact(sock, struct.unpack(">H", raw_len)[0])


def _read_exact(sock: socket.socket, n: int) -> bytes:
    chunks = b""
    while len(chunks) < n:
        chunk = sock.recv(n - len(chunks))
        if not chunk:
            raise ConnectionError("connection closed mid-message")
        chunks += chunk
    return chunks


def query(
    server: str, qname: str, qtype: int, timeout: float = 2.0, txid: int = 0x1234
) -> list[WireAnswer]:
    """One question against one server. NXDOMAIN and empty answers both come
    back as []; transport failures and server failures raise."""
    request = build_query(qname, qtype, txid)
    try:
        packet = _query_udp(server, request, timeout)
        if is_truncated(packet):
            packet = _query_tcp(server, request, timeout)
    except OSError as exc:
        raise ResolverUnreachableError(f"{server}: {exc}") from None
    got_txid, rcode, answers = parse_response(packet)
    if got_txid != txid:
        raise ResolverUnreachableError(f"{server}: transaction id mismatch")
    if rcode == RCODE_NXDOMAIN:
        return []
    if rcode != RCODE_NOERROR:
        raise ResolverUnreachableError(f"{server}: rcode {rcode}")
    return answers


def resolv_nameservers(path: str = "/etc/resolv.conf") -> list[str]:
    servers = []
    try:
        with open(path) as handle:
            for line in handle:
                parts = line.split()
                if len(parts) >= 2 and parts[0] == "nameserver":
                    servers.append(parts[1])
    except OSError:
        pass
    return servers or ["127.0.0.53"]
