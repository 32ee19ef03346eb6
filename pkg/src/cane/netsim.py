"""Deterministic discrete-event simulator of a caching content-addressed network.

Requests travel hop by hop toward the origin of the requested block. The
first node on the way that holds the block answers, and the reply populates
every router cache on its way back. A router that already has the same block
in flight holds further requests until the reply arrives instead of
forwarding them again.

``compare_location_addressed`` runs the same engine with caching and request
coalescing switched off, so every request is served end to end by its origin.

Time is integer ticks; crossing a link takes ``latency`` ticks in either
direction. Events at equal ticks are ordered by (node id, request id).
"""

from __future__ import annotations

import enum
import hashlib
import heapq
import io
import random
from collections import OrderedDict, deque
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .castore import BlockId, digest_bytes
from .errors import SpecError

DEFAULT_BLOCK_SIZE = 64


class Role(enum.Enum):
    ORIGIN = "origin"
    ROUTER = "router"
    CLIENT = "client"


class LRUCache:
    """Capacity-bounded BlockId -> bytes map; ``capacity=None`` is unbounded."""

    def __init__(self, capacity: Optional[int] = None):
        if capacity is not None and capacity < 0:
            raise SpecError("cache capacity must be >= 0")
        self.capacity = capacity
        self._items: OrderedDict[BlockId, bytes] = OrderedDict()

    def get(self, block: BlockId) -> Optional[bytes]:
        data = self._items.get(block)
        if data is not None:
            self._items.move_to_end(block)
        return data

    def put(self, block: BlockId, data: bytes) -> None:
        if self.capacity == 0:
            return
        self._items[block] = data
        self._items.move_to_end(block)
        if self.capacity is not None:
            while len(self._items) > self.capacity:
                self._items.popitem(last=False)

    def clear(self) -> None:
        self._items.clear()

    def __contains__(self, block: BlockId) -> bool:
        return block in self._items

    def __len__(self) -> int:
        return len(self._items)


@dataclass
class SimNode:
    id: str
    role: Role
    cache: Optional[LRUCache] = None
    link_latency: dict[str, int] = field(default_factory=dict)
    alive: bool = True
    content: dict[BlockId, bytes] = field(default_factory=dict)


@dataclass(frozen=True)
class NodeSpec:
    id: str
    role: Role
    cache: Optional[int] = None


@dataclass(frozen=True)
class LinkSpec:
    a: str
    b: str
    latency: int = 1


@dataclass(frozen=True)
class ContentSpec:
    origin: str
    file: str
    n_blocks: int


@dataclass
class TopologySpec:
    nodes: list[NodeSpec] = field(default_factory=list)
    links: list[LinkSpec] = field(default_factory=list)
    contents: list[ContentSpec] = field(default_factory=list)


@dataclass(frozen=True)
class Request:
    client: str
    block: BlockId
    issue_tick: int = 0


@dataclass(frozen=True)
class FileRequest:
    client: str
    file: str
    tick: int


@dataclass(frozen=True)
class Kill:
    node: str
    tick: int


@dataclass
class Scenario:
    topology: TopologySpec = field(default_factory=TopologySpec)
    requests: list[FileRequest] = field(default_factory=list)
    kills: list[Kill] = field(default_factory=list)


def block_bytes(origin: str, file: str, index: int, size: int = DEFAULT_BLOCK_SIZE) -> bytes:
    """Deterministic synthetic content for block ``index`` of ``file``."""
    out = b""
    counter = 0
    while len(out) < size:
        out += hashlib.sha512(f"{origin}/{file}/{index}/{counter}".encode()).digest()
        counter += 1
    return out[:size]


class SimNetwork:
    def __init__(self, nodes: dict[str, SimNode], files: dict[str, list[BlockId]],
                 block_origin: dict[BlockId, str]):
        self.nodes = nodes
        self.files = files
        self.block_origin = block_origin

    def node(self, node_id: str) -> SimNode:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise SpecError(f"unknown node {node_id!r}") from None

    def links(self) -> list[tuple[str, str, int]]:
        out = []
        for n in sorted(self.nodes):
            for m, lat in sorted(self.nodes[n].link_latency.items()):
                if n < m:
                    out.append((n, m, lat))
        return out

    def file_blocks(self, file: str) -> list[BlockId]:
        try:
            return self.files[file]
        except KeyError:
            raise SpecError(f"unknown file {file!r}") from None

    def requests_for(self, client: str, file: str, tick: int = 0) -> list[Request]:
        return [Request(client, b, tick) for b in self.file_blocks(file)]

    def set_alive(self, node_id: str, alive: bool) -> None:
        self.node(node_id).alive = alive

    def clear_caches(self) -> None:
        for n in self.nodes.values():
            if n.cache is not None:
                n.cache.clear()


def build_network(spec: TopologySpec, block_size: int = DEFAULT_BLOCK_SIZE,
                  allow_partition: bool = False) -> SimNetwork:
    nodes: dict[str, SimNode] = {}
    for ns in spec.nodes:
        if ns.id in nodes:
            raise SpecError(f"duplicate node {ns.id!r}")
        role = Role(ns.role)
        cache = LRUCache(ns.cache) if role is Role.ROUTER else None
        nodes[ns.id] = SimNode(ns.id, role, cache)
    for link in spec.links:
        for end in (link.a, link.b):
            if end not in nodes:
                raise SpecError(f"link {link.a}-{link.b} references undeclared node {end!r}")
        if link.a == link.b:
            raise SpecError(f"self-link on {link.a!r}")
        if link.latency < 1:
            raise SpecError(f"link {link.a}-{link.b} latency must be >= 1")
        nodes[link.a].link_latency[link.b] = link.latency
        nodes[link.b].link_latency[link.a] = link.latency
    files: dict[str, list[BlockId]] = {}
    block_origin: dict[BlockId, str] = {}
    for c in spec.contents:
        origin = nodes.get(c.origin)
        if origin is None or origin.role is not Role.ORIGIN:
            raise SpecError(f"content {c.file!r} placed on non-origin {c.origin!r}")
        if c.file in files:
            raise SpecError(f"duplicate file {c.file!r}")
        ids = []
        for i in range(c.n_blocks):
            data = block_bytes(c.origin, c.file, i, block_size)
            bid = BlockId.of(data)
            origin.content[bid] = data
            block_origin.setdefault(bid, c.origin)
            ids.append(bid)
        files[c.file] = ids
    if nodes and not allow_partition:
        start = next(iter(nodes))
        seen = {start}
        queue = deque([start])
        while queue:
            for m in nodes[queue.popleft()].link_latency:
                if m not in seen:
                    seen.add(m)
                    queue.append(m)
        if len(seen) != len(nodes):
            missing = sorted(set(nodes) - seen)
            raise SpecError(f"network is partitioned; unreachable: {', '.join(missing[:5])}")
    return SimNetwork(nodes, files, block_origin)


# topologies -------------------------------------------------------------------


def star_topology(n_clients: int, n_blocks: int = 100, router_cache: Optional[int] = None,
                  file: str = "file") -> TopologySpec:
    """One origin behind one router serving ``n_clients`` clients."""
    spec = TopologySpec()
    spec.nodes += [NodeSpec("origin", Role.ORIGIN), NodeSpec("router", Role.ROUTER, router_cache)]
    spec.links.append(LinkSpec("origin", "router", 1))
    for i in range(n_clients):
        cid = f"c{i:04d}"
        spec.nodes.append(NodeSpec(cid, Role.CLIENT))
        spec.links.append(LinkSpec("router", cid, 1))
    spec.contents.append(ContentSpec("origin", file, n_blocks))
    return spec


def tree_topology(levels: int, fanout: int, leaf_role: Role = Role.CLIENT) -> TopologySpec:
    """Balanced tree: an origin root, routers inside, ``leaf_role`` at the last level."""
    spec = TopologySpec()
    spec.nodes.append(NodeSpec("n0", Role.ORIGIN))
    frontier = ["n0"]
    count = 1
    for level in range(1, levels):
        role = leaf_role if level == levels - 1 else Role.ROUTER
        nxt = []
        for parent in frontier:
            for _ in range(fanout):
                nid = f"n{count}"
                count += 1
                spec.nodes.append(NodeSpec(nid, role))
                spec.links.append(LinkSpec(parent, nid, 1))
                nxt.append(nid)
        frontier = nxt
    return spec


# scenario files ---------------------------------------------------------------


def parse_scenario(text: str) -> Scenario:
    """Parse the line-oriented scenario format.

    ::

        node <id> <role> [cache=<blocks>]
        link <a> <b> <latency>
        content <origin-id> <file-name> <n-blocks>
        request <client> <file-name> <tick>
        kill <node> <tick>
    """
    sc = Scenario()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        words = line.split()
        try:
            verb = words[0]
            if verb == "node":
                cache = None
                for opt in words[3:]:
                    key, _, value = opt.partition("=")
                    if key != "cache":
                        raise ValueError(f"unknown node option {opt!r}")
                    cache = None if value in ("inf", "") else int(value)
                sc.topology.nodes.append(NodeSpec(words[1], Role(words[2]), cache))
            elif verb == "link":
                (a, b, lat) = words[1:]
                sc.topology.links.append(LinkSpec(a, b, int(lat)))
            elif verb == "content":
                (o, f, n) = words[1:]
                sc.topology.contents.append(ContentSpec(o, f, int(n)))
            elif verb == "request":
                (c, f, t) = words[1:]
                sc.requests.append(FileRequest(c, f, int(t)))
            elif verb == "kill":
                (n, t) = words[1:]
                sc.kills.append(Kill(n, int(t)))
            else:
                raise ValueError(f"unknown directive {verb!r}")
        except (ValueError, IndexError) as exc:
            raise SpecError(f"line {lineno}: {exc or 'malformed'}: {raw.strip()!r}") from None
    return sc


def format_scenario(sc: Scenario) -> str:
    out = io.StringIO()
    for n in sc.topology.nodes:
        opt = f" cache={n.cache}" if n.role is Role.ROUTER and n.cache is not None else ""
        out.write(f"node {n.id} {n.role.value}{opt}\n")
    for link in sc.topology.links:
        out.write(f"link {link.a} {link.b} {link.latency}\n")
    for c in sc.topology.contents:
        out.write(f"content {c.origin} {c.file} {c.n_blocks}\n")
    for r in sc.requests:
        out.write(f"request {r.client} {r.file} {r.tick}\n")
    for k in sc.kills:
        out.write(f"kill {k.node} {k.tick}\n")
    return out.getvalue()


def flash_crowd_scenario(n_clients: int = 1000, n_blocks: int = 100, tick: int = 0) -> Scenario:
    topo = star_topology(n_clients, n_blocks)
    reqs = [FileRequest(n.id, "file", tick) for n in topo.nodes if n.role is Role.CLIENT]
    return Scenario(topo, reqs, [])


def expand_requests(network: SimNetwork, file_requests: Iterable[FileRequest]) -> list[Request]:
    out = []
    for fr in file_requests:
        out.extend(network.requests_for(fr.client, fr.file, fr.tick))
    return out


# metrics ----------------------------------------------------------------------


@dataclass
class RequestRecord:
    request_id: int
    client: str
    block: BlockId
    issue: int
    complete: Optional[int] = None
    hops: int = 0
    source: Optional[str] = None
    reason: Optional[str] = None


@dataclass
class Metrics:
    origin_transmissions: dict[str, int] = field(default_factory=dict)
    cache_hits: dict[str, int] = field(default_factory=dict)
    total_hops: int = 0
    completed: int = 0
    failed: int = 0
    latencies: list[int] = field(default_factory=list)
    link_transmissions: dict[tuple[str, str], int] = field(default_factory=dict)
    records: list[RequestRecord] = field(default_factory=list)

    @property
    def total_origin_transmissions(self) -> int:
        return sum(self.origin_transmissions.values())

    @property
    def total_cache_hits(self) -> int:
        return sum(self.cache_hits.values())

    def failures(self) -> list[tuple[int, str]]:
        return [(r.request_id, r.reason) for r in self.records if r.reason is not None]

    def link_count(self, a: str, b: str) -> int:
        return self.link_transmissions.get(tuple(sorted((a, b))), 0)

    def report(self) -> str:
        """Flat ``key=value`` report with stable ordering."""
        lines = [
            f"requests={len(self.records)}",
            f"completed={self.completed}",
            f"failed={self.failed}",
            f"origin_transmissions={self.total_origin_transmissions}",
            f"cache_hits={self.total_cache_hits}",
            f"total_hops={self.total_hops}",
        ]
        if self.latencies:
            lat = sorted(self.latencies)
            lines.append(f"latency_min={lat[0]}")
            lines.append(f"latency_max={lat[-1]}")
            lines.append(f"latency_mean={sum(lat) / len(lat):.6f}")
        for k in sorted(self.origin_transmissions):
            lines.append(f"origin_transmissions.{k}={self.origin_transmissions[k]}")
        for k in sorted(self.cache_hits):
            lines.append(f"cache_hits.{k}={self.cache_hits[k]}")
        for (a, b) in sorted(self.link_transmissions):
            lines.append(f"link.{a}-{b}={self.link_transmissions[(a, b)]}")
        reasons: dict[str, int] = {}
        for _, reason in self.failures():
            reasons[reason] = reasons.get(reason, 0) + 1
        for k in sorted(reasons):
            lines.append(f"failed.{k}={reasons[k]}")
        return "\n".join(lines) + "\n"

    def csv(self) -> str:
        out = io.StringIO()
        out.write("request_id,issue,complete,hops,source_node\n")
        for r in self.records:
            complete = "" if r.complete is None else r.complete
            source = r.source if r.reason is None else f"failed:{r.reason}"
            out.write(f"{r.request_id},{r.issue},{complete},{r.hops},{source}\n")
        return out.getvalue()


# engine -----------------------------------------------------------------------

_KILL, _INTEREST, _DATA = 0, 1, 2


def _next_hops(network: SimNetwork, origin: str, rng: random.Random) -> dict[str, str]:
    """Next hop toward ``origin`` for every node, by latency-weighted shortest path.

    Ties between equally short neighbours are broken by ``rng``.
    """
    dist = {origin: 0}
    heap = [(0, origin)]
    while heap:
        d, n = heapq.heappop(heap)
        if d > dist[n]:
            continue
        for m, lat in sorted(network.nodes[n].link_latency.items()):
            nd = d + lat
            if nd < dist.get(m, nd + 1):
                dist[m] = nd
                heapq.heappush(heap, (nd, m))
    hops = {}
    for n in sorted(dist):
        if n == origin:
            continue
        options = sorted(m for m, lat in network.nodes[n].link_latency.items()
                         if m in dist and dist[m] + lat == dist[n])
        hops[n] = options[0] if len(options) == 1 else rng.choice(options)
    return hops


def run(network: SimNetwork, requests: Sequence[Request], seed: int = 0,
        kills: Sequence[Kill] = (), caching: bool = True) -> Metrics:
    """Execute ``requests`` on ``network``; router caches persist across runs."""
    rng = random.Random(seed)
    routes = {o: _next_hops(network, o, rng) for o in sorted(set(network.block_origin.values()))}
    metrics = Metrics()
    for n in sorted(network.nodes):
        node = network.nodes[n]
        if node.role is Role.ORIGIN:
            metrics.origin_transmissions[n] = 0
        elif node.role is Role.ROUTER:
            metrics.cache_hits[n] = 0

    records: list[RequestRecord] = []
    paths: list[list[str]] = []
    pending: dict[tuple[str, BlockId], list[int]] = {}
    events: list = []
    seq = 0

    def push(tick, phase, node, rid, payload=None):
        nonlocal seq
        heapq.heappush(events, (tick, phase, node, rid, seq, payload))
        seq += 1

    for k in kills:
        network.node(k.node)
        push(k.tick, _KILL, k.node, -1)
    for rid, req in enumerate(requests):
        if network.node(req.client).role is not Role.CLIENT:
            raise SpecError(f"requests must come from clients, not {req.client!r}")
        records.append(RequestRecord(rid, req.client, req.block, req.issue_tick))
        paths.append([])
        push(req.issue_tick, _INTEREST, req.client, rid)

    def fail(rid, reason):
        rec = records[rid]
        if rec.complete is None and rec.reason is None:
            rec.reason = reason

    def respond(tick, rid, data, source):
        # the answering node is always the last one the request reached
        records[rid].source = source
        _send_back(tick, rid, len(paths[rid]) - 1, data)

    def _send_back(tick, rid, idx, data):
        if idx == 0:
            _complete(tick, rid, data)
            return
        here, there = paths[rid][idx], paths[rid][idx - 1]
        lat = network.nodes[here].link_latency[there]
        key = tuple(sorted((here, there)))
        metrics.link_transmissions[key] = metrics.link_transmissions.get(key, 0) + 1
        records[rid].hops += 1
        push(tick + lat, _DATA, there, rid, (idx - 1, data))

    def _complete(tick, rid, data):
        rec = records[rid]
        if digest_bytes(data) != rec.block.digest:
            fail(rid, "corrupt")
            return
        rec.complete = tick

    while events:
        tick, phase, node_id, rid, _, payload = heapq.heappop(events)
        node = network.nodes[node_id]
        if phase == _KILL:
            node.alive = False
            continue
        rec = records[rid]
        if phase == _INTEREST:
            if not node.alive:
                fail(rid, f"node-down:{node_id}")
                continue
            paths[rid].append(node_id)
            block = rec.block
            if block in node.content:
                metrics.origin_transmissions[node_id] = metrics.origin_transmissions.get(node_id, 0) + 1
                respond(tick, rid, node.content[block], node_id)
                continue
            if caching and node.cache is not None:
                data = node.cache.get(block)
                if data is not None:
                    if digest_bytes(data) != block.digest:
                        raise AssertionError(f"cache at {node_id} holds corrupt block")
                    metrics.cache_hits[node_id] += 1
                    respond(tick, rid, data, node_id)
                    continue
                waiters = pending.get((node_id, block))
                if waiters is not None:
                    waiters.append(rid)
                    continue
                pending[(node_id, block)] = []
            origin = network.block_origin.get(block)
            nxt = routes.get(origin, {}).get(node_id) if origin is not None else None
            if nxt is None:
                fail(rid, "unreachable")
                continue
            push(tick + node.link_latency[nxt], _INTEREST, nxt, rid)
        else:
            idx, data = payload
            if not node.alive:
                fail(rid, f"node-down:{node_id}")
                continue
            if caching and node.cache is not None:
                node.cache.put(rec.block, data)
                for w in pending.pop((node_id, rec.block), []):
                    metrics.cache_hits[node_id] += 1
                    respond(tick, w, data, node_id)
            _send_back(tick, rid, idx, data)

    for rec in records:
        if rec.complete is None and rec.reason is None:
            rec.reason = "stalled"
        if rec.reason is None:
            metrics.completed += 1
            metrics.latencies.append(rec.complete - rec.issue)
        else:
            metrics.failed += 1
        metrics.total_hops += rec.hops
    metrics.records = records
    return metrics


def compare_location_addressed(network: SimNetwork, requests: Sequence[Request], seed: int = 0,
                               kills: Sequence[Kill] = ()) -> Metrics:
    """Baseline: no caching, no coalescing; every request is served by its origin."""
    return run(network, requests, seed, kills, caching=False)


def run_scenario(sc: Scenario, seed: int = 0, baseline: bool = False,
                 block_size: int = DEFAULT_BLOCK_SIZE) -> Metrics:
    network = build_network(sc.topology, block_size)
    requests = expand_requests(network, sc.requests)
    if baseline:
        return compare_location_addressed(network, requests, seed, sc.kills)
    return run(network, requests, seed, sc.kills)
