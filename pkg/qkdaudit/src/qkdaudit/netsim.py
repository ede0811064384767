"""
In-process simulated QKD network.

Builds a registered network from an adjacency description, finds
vertex-disjoint routes with a unit-capacity max-flow, drives sessions hop by
hop through the protocol roles, injects adversarial faults and runs the two
audit experiments (policy compliance and the path-hiding structure check).

The sender and the receiver are virtual endpoints attached to chosen nodes;
routes run from a sender-attached entry node to a receiver-attached exit
node.
"""
import logging
import time
from collections import Counter, deque
from dataclasses import dataclass, field, replace
from enum import Enum
from itertools import combinations

import numpy as np
import pandas as pd
from tqdm.auto import tqdm

from .database import SessionLedger
from .group import (
    CURVE_ORDER,
    G1_BYTES,
    G2_BYTES,
    SCALAR_BYTES,
    DecodeError,
    DecodeReason,
    OpCounters,
    RandomSource,
    counting,
    default_rng,
    serialize_g1,
    setup,
)
from .groth import IssuerKeyPair, issuer_key_gen
from .policy import AttributeVector, Policy, attribute_scalar, encode_policy, evaluate
from .protocol import (
    NODE_ERROR_REASONS,
    RECEIVER,
    SENDER,
    Issuer,
    NodeRecord,
    Receiver,
    ReceiverVerdict,
    RejectReason,
    node_forward,
    register,
    sender_init,
)
from .pseudonym import key_gen
from .wire import (
    MAGIC,
    NONCE_BYTES,
    SID_BYTES,
    SessionId,
    deserialize_hop_message,
    hop_bytes,
    message_payload,
    serialize_hop_message,
)

logger = logging.getLogger(__name__)


class GraphError(ValueError):
    pass


class NoSuchRoutes(ValueError):
    pass


class RouteError(ValueError):
    pass


class InvalidChallenge(ValueError):
    """An experiment challenge broke one of the exclusion rules."""


# ---------------------------------------------------------------------------
# Graphs
# ---------------------------------------------------------------------------

@dataclass
class GraphSpec:
    """Adjacency description: node ids, undirected edges, attachments."""
    nodes: list
    edges: list
    sender: tuple = ()
    receiver: tuple = ()
    attrs: dict = field(default_factory=dict)


@dataclass
class NetworkGraph:
    params: object
    issuer: Issuer
    nodes: dict
    edges: frozenset
    sender_links: tuple
    receiver_links: tuple

    @property
    def pk_i(self):
        return self.issuer.pk

    def neighbors(self, v):
        if v is SENDER:
            return set(self.sender_links)
        if v is RECEIVER:
            return set(self.receiver_links)
        out = {u for e in self.edges if v in e for u in e if u != v}
        if v in self.sender_links:
            out.add(SENDER)
        if v in self.receiver_links:
            out.add(RECEIVER)
        return out

    def adjacency(self):
        adj = {v: set() for v in self.nodes}
        for a, b in (tuple(e) for e in self.edges):
            adj[a].add(b)
            adj[b].add(a)
        adj[SENDER] = set(self.sender_links)
        adj[RECEIVER] = set(self.receiver_links)
        for v in self.sender_links:
            adj[v].add(SENDER)
        for v in self.receiver_links:
            adj[v].add(RECEIVER)
        return adj

    def adjacent(self, a, b):
        return frozenset((a, b)) in self.edges

    def receiver_directory(self):
        return {v: self.nodes[v].keys.pk for v in self.receiver_links}


def _as_spec(spec, sender, receiver):
    if isinstance(spec, GraphSpec):
        return spec
    nodes = list(spec)
    edges = sorted({tuple(sorted((a, b))) for a in spec for b in spec[a]})
    return GraphSpec(nodes=nodes, edges=edges,
                     sender=tuple(sender if sender is not None else nodes),
                     receiver=tuple(receiver if receiver is not None else nodes))


def build_graph(spec, attr_assignment, issuer, params=None, rng=None, sender=None,
                receiver=None, quiet=True):
    """Register every node with the issuer and wire the neighbour directories.

    Parameters
    ----------
    spec : GraphSpec or dict
        A dict maps each node id to its neighbours; with a dict, `sender` and
        `receiver` name the attachment points (default: every node).
    attr_assignment : dict
        Node id -> AttributeVector.
    issuer : Issuer or IssuerKeyPair
    params : PublicParams, optional
        Defaults to ``setup(ell)`` for the attribute length.
    """
    spec = _as_spec(spec, sender, receiver)
    rng = rng or default_rng()
    if len(set(spec.nodes)) != len(spec.nodes):
        dupes = sorted(v for v, n in Counter(spec.nodes).items() if n > 1)
        raise GraphError(f"duplicate node ids: {dupes}")
    known = set(spec.nodes)
    edges = set()
    for a, b in spec.edges:
        if a == b:
            raise GraphError(f"self-loop on {a}")
        if a not in known or b not in known:
            raise GraphError(f"edge ({a}, {b}) names an unknown node")
        edges.add(frozenset((a, b)))
    for v in tuple(spec.sender) + tuple(spec.receiver):
        if v not in known:
            raise GraphError(f"attachment names unknown node {v}")
    missing = [v for v in spec.nodes if v not in attr_assignment]
    if missing:
        raise GraphError(f"no attributes for nodes {missing}")
    lengths = {len(attr_assignment[v]) for v in spec.nodes}
    if len(lengths) > 1:
        raise GraphError(f"attribute vectors differ in length: {sorted(lengths)}")
    if params is None:
        params = setup(lengths.pop() if lengths else 1)
    if isinstance(issuer, IssuerKeyPair):
        issuer = Issuer(issuer, params, rng=rng)

    nodes = {}
    for v in tqdm(spec.nodes, desc="Registering nodes", disable=quiet):
        keys = key_gen(rng)
        attrs = attr_assignment[v]
        cred = register(issuer, keys, attrs, params, rng)
        nodes[v] = NodeRecord(node_id=v, keys=keys, attrs=attrs, cred=cred)
    for e in edges:
        a, b = tuple(e)
        nodes[a].directory[b] = nodes[b].keys.pk
        nodes[b].directory[a] = nodes[a].keys.pk
    return NetworkGraph(params=params, issuer=issuer, nodes=nodes, edges=frozenset(edges),
                        sender_links=tuple(spec.sender), receiver_links=tuple(spec.receiver))


def random_graph(n_nodes, edge_probability, seed=None, ell=2, attachments=2):
    """A connected random graph whose nodes all share attribute 0.

    A random spanning tree keeps the graph connected; every other pair is
    joined with `edge_probability`. Attribute 0 is ``"class:repeater"`` for
    every node, the rest are random site labels.
    """
    if n_nodes < 1:
        raise ValueError("n_nodes must be >= 1")
    if not 0.0 <= edge_probability <= 1.0:
        raise ValueError("edge_probability must be in [0, 1]")
    gen = np.random.default_rng(seed)
    names = [f"n{i:02d}" for i in range(n_nodes)]
    order = gen.permutation(n_nodes)
    edges = set()
    for k in range(1, n_nodes):
        a = names[order[k]]
        b = names[order[gen.integers(0, k)]]
        edges.add(tuple(sorted((a, b))))
    for a, b in combinations(names, 2):
        if gen.random() < edge_probability:
            edges.add((a, b))
    k = min(attachments, n_nodes)
    sender = tuple(sorted(names[i] for i in gen.choice(n_nodes, size=k, replace=False)))
    receiver = tuple(sorted(names[i] for i in gen.choice(n_nodes, size=k, replace=False)))
    attrs = {}
    for v in names:
        labels = ["class:repeater"] + [f"site:{gen.integers(0, 1000)}" for _ in range(ell - 1)]
        attrs[v] = AttributeVector.from_labels(labels[:ell])
    return GraphSpec(nodes=names, edges=sorted(edges), sender=sender, receiver=receiver,
                     attrs=attrs)


def _parse_value(token):
    return int(token) if token.isdigit() else attribute_scalar(token)


def parse_graph_file(path):
    """Read a graph description.

    Lines are ``node <id> attrs <v1,...,vl>``, ``edge <id> <id>``,
    ``sender <id> ...`` and ``receiver <id> ...``; ``#`` starts a comment.
    Attribute values are decimal scalars or labels hashed to scalars.
    """
    nodes, edges, sender, receiver, attrs = [], [], [], [], {}
    with open(path) as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            words = line.split()
            kind = words[0]
            if kind == "node":
                if len(words) != 4 or words[2] != "attrs":
                    raise GraphError(f"{path}:{lineno}: expected 'node <id> attrs <values>'")
                tokens = [t for t in words[3].split(",") if t]
                values = tuple(_parse_value(t) for t in tokens)
                labels = None if all(t.isdigit() for t in tokens) else tokens
                nodes.append(words[1])
                attrs[words[1]] = AttributeVector(values=values, labels=labels)
            elif kind == "edge":
                if len(words) != 3:
                    raise GraphError(f"{path}:{lineno}: expected 'edge <id> <id>'")
                edges.append((words[1], words[2]))
            elif kind == "sender":
                sender.extend(words[1:])
            elif kind == "receiver":
                receiver.extend(words[1:])
            else:
                valid = ["node", "edge", "sender", "receiver"]
                raise GraphError(f"{path}:{lineno}: unknown line type {kind!r}. "
                                 f"Valid options are: {valid}")
    return GraphSpec(nodes=nodes, edges=edges, sender=tuple(sender or nodes),
                     receiver=tuple(receiver or nodes), attrs=attrs)


def write_graph_file(spec, path):
    with open(path, "w") as f:
        for v in spec.nodes:
            attrs = spec.attrs[v]
            tokens = attrs.labels if attrs.labels is not None else [str(a) for a in attrs.values]
            f.write(f"node {v} attrs {','.join(tokens)}\n")
        for a, b in spec.edges:
            f.write(f"edge {a} {b}\n")
        f.write("sender " + " ".join(spec.sender) + "\n")
        f.write("receiver " + " ".join(spec.receiver) + "\n")


def parse_policy_file(path):
    """Read ``policy <id>``, ``ell <n>`` and ``require <index> <value>`` lines."""
    policy_id, ell, required = None, None, {}
    with open(path) as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            words = line.split()
            if words[0] == "policy" and len(words) == 2:
                policy_id = words[1].encode("utf-8")
            elif words[0] == "ell" and len(words) == 2:
                ell = int(words[1])
            elif words[0] == "require" and len(words) == 3:
                required[int(words[1])] = _parse_value(words[2])
            else:
                raise ValueError(f"{path}:{lineno}: cannot parse {line!r}")
    if policy_id is None or ell is None:
        raise ValueError(f"{path}: 'policy' and 'ell' lines are required")
    return Policy(policy_id=policy_id, ell=ell, required=required)


# ---------------------------------------------------------------------------
# Routes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RouteSpec:
    paths: tuple

    def __post_init__(self):
        object.__setattr__(self, "paths", tuple(tuple(p) for p in self.paths))

    def __len__(self):
        return len(self.paths)

    @property
    def entry_nodes(self):
        return [p[0] for p in self.paths]

    @property
    def exit_nodes(self):
        return [p[-1] for p in self.paths]

    @property
    def lengths(self):
        return [len(p) for p in self.paths]

    @property
    def total_hops(self):
        return sum(self.lengths)


def _adjacency_of(g):
    return g.adjacency() if isinstance(g, NetworkGraph) else {v: set(n) for v, n in g.items()}


def _sort_key(v):
    return (0, v) if isinstance(v, str) else (1, repr(v))


def find_disjoint_paths(g, source=SENDER, sink=RECEIVER, k=1):
    """`k` internally vertex-disjoint paths from `source` to `sink`.

    Unit vertex capacities are enforced by splitting each vertex into an
    in/out pair; Edmonds-Karp then finds the flow, so for ``k=1`` the path is
    a shortest one. The SENDER/RECEIVER endpoints are stripped from the
    returned routes.

    Raises
    ------
    NoSuchRoutes
        When fewer than `k` disjoint paths exist.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    adj = _adjacency_of(g)
    for v in list(adj):
        for u in adj[v]:
            adj.setdefault(u, set()).add(v)
    if source not in adj or sink not in adj:
        raise NoSuchRoutes("source or sink not in graph")
    vertices = sorted(adj, key=_sort_key)
    index = {v: i for i, v in enumerate(vertices)}
    size = 2 * len(vertices)

    def v_in(v):
        return 2 * index[v]

    def v_out(v):
        return 2 * index[v] + 1

    residual = np.zeros((size, size), dtype=np.int64)
    for v in vertices:
        residual[v_in(v), v_out(v)] = k if v in (source, sink) else 1
        for u in sorted(adj[v], key=_sort_key):
            residual[v_out(v), v_in(u)] = 1
    capacity = residual.copy()
    s, t = v_out(source), v_in(sink)

    flow = 0
    while flow < k:
        parent = [-1] * size
        parent[s] = s
        queue = deque([s])
        while queue and parent[t] == -1:
            u = queue.popleft()
            for w in np.nonzero(residual[u] > 0)[0]:
                if parent[w] == -1:
                    parent[w] = u
                    queue.append(w)
        if parent[t] == -1:
            break
        w = t
        while w != s:
            u = parent[w]
            residual[u, w] -= 1
            residual[w, u] += 1
            w = u
        flow += 1
    if flow < k:
        raise NoSuchRoutes(f"only {flow} vertex-disjoint paths exist, {k} requested")

    used = np.maximum(capacity - residual, 0)
    paths = []
    for _ in range(k):
        path, at = [source], s
        while at != t:
            nxt = int(np.nonzero(used[at] > 0)[0][0])
            used[at, nxt] -= 1
            at = nxt
            if at % 2 == 0:
                path.append(vertices[at // 2])
        paths.append(path)

    def strip(path):
        return tuple(v for v in path if v is not SENDER and v is not RECEIVER)

    routes = RouteSpec(paths=sorted((strip(p) for p in paths), key=lambda p: (len(p), p)))
    if isinstance(g, NetworkGraph) and source is SENDER and sink is RECEIVER:
        check_routes(g, routes)
    return routes


def route_problems(g, routes):
    """Every way `routes` fails to be a set of disjoint, adjacent paths."""
    problems = []
    seen = {}
    for i, path in enumerate(routes.paths):
        if not path:
            problems.append(f"path {i} is empty")
            continue
        if len(set(path)) != len(path):
            problems.append(f"path {i} loops")
        for v in path:
            if v not in g.nodes:
                problems.append(f"path {i} visits unknown node {v}")
        for a, b in zip(path, path[1:]):
            if not g.adjacent(a, b):
                problems.append(f"path {i}: {a} and {b} are not adjacent")
        if path[0] not in g.sender_links:
            problems.append(f"path {i} entry {path[0]} is not attached to the sender")
        if path[-1] not in g.receiver_links:
            problems.append(f"path {i} exit {path[-1]} is not attached to the receiver")
        for v in set(path):
            if v in seen:
                problems.append(f"paths {seen[v]} and {i} share node {v}")
            else:
                seen[v] = i
    return problems


def check_routes(g, routes):
    """Independent check of adjacency, loop freedom and disjointness."""
    problems = route_problems(g, routes)
    if problems:
        raise RouteError("; ".join(problems))


def find_all_paths(adj, source, sink):
    """Every simple source-sink path, as vertex lists."""
    out = []

    def walk(v, path):
        if v == sink:
            out.append(list(path))
            return
        for u in sorted(adj.get(v, ()), key=_sort_key):
            if u not in path:
                path.append(u)
                walk(u, path)
                path.pop()

    walk(source, [source])
    return out


def max_disjoint_paths_bruteforce(adj, source, sink):
    """Largest number of internally disjoint paths, by exhaustive search.

    Exponential; only for cross-checking the flow routine on small graphs.
    """
    interiors = [frozenset(p[1:-1]) for p in find_all_paths(adj, source, sink)]

    def best(start, used):
        top = 0
        for i in range(start, len(interiors)):
            inner = interiors[i]
            if inner & used:
                continue
            if not inner:
                # a direct source-sink edge can only be used once
                if None in used:
                    continue
                top = max(top, 1 + best(i + 1, used | {None}))
            else:
                top = max(top, 1 + best(i + 1, used | inner))
        return top

    return best(0, frozenset())


# ---------------------------------------------------------------------------
# Faults
# ---------------------------------------------------------------------------

class FaultKind(Enum):
    SHARE_NODE_ACROSS_PATHS = "share-node"
    SKIP_APPEND_AND_RELAY = "skip-append"
    UNCERTIFIED_NODE_INJECT = "uncertified-node"
    POLICY_VIOLATING_ATTRS = "policy-violating"
    REPLAY_SID = "replay-sid"
    TAMPER_HOP = "tamper-hop"
    STALE_SID = "stale-sid"
    DUPLICATE_DELIVERY = "duplicate-delivery"


TAMPER_FIELDS = ("nym", "r_hat", "s", "t", "c", "z_sk", "z_alpha", "z_beta", "z_attr")

# (offset inside a hop, size)
_HOP_LAYOUT = {
    "nym": (0, G1_BYTES),
    "r_hat": (G1_BYTES, G2_BYTES),
    "s": (G1_BYTES + G2_BYTES, G1_BYTES),
    "t": (2 * G1_BYTES + G2_BYTES, G1_BYTES),
    "c": (3 * G1_BYTES + G2_BYTES, SCALAR_BYTES),
    "z_sk": (3 * G1_BYTES + G2_BYTES + SCALAR_BYTES, SCALAR_BYTES),
    "z_alpha": (3 * G1_BYTES + G2_BYTES + 2 * SCALAR_BYTES, SCALAR_BYTES),
    "z_beta": (3 * G1_BYTES + G2_BYTES + 3 * SCALAR_BYTES, SCALAR_BYTES),
    "z_attr": (3 * G1_BYTES + G2_BYTES + 4 * SCALAR_BYTES, SCALAR_BYTES),
}

EXPECTED_REASONS = {
    FaultKind.SHARE_NODE_ACROSS_PATHS: {RejectReason.DUPLICATE_PSEUDONYM},
    FaultKind.SKIP_APPEND_AND_RELAY: {RejectReason.LINK_PROOF_INVALID,
                                      RejectReason.LINK_INVALID},
    FaultKind.UNCERTIFIED_NODE_INJECT: {RejectReason.PROOF_INVALID},
    FaultKind.POLICY_VIOLATING_ATTRS: {RejectReason.PROOF_INVALID},
    FaultKind.REPLAY_SID: {RejectReason.DUPLICATE_SESSION},
    FaultKind.TAMPER_HOP: {RejectReason.PROOF_INVALID, RejectReason.DECODE_ERROR,
                           RejectReason.LINK_PROOF_INVALID, RejectReason.LINK_INVALID},
    FaultKind.STALE_SID: {RejectReason.STALE_SESSION},
    FaultKind.DUPLICATE_DELIVERY: {RejectReason.DUPLICATE_PSEUDONYM},
}


@dataclass(frozen=True)
class FaultPlan:
    """One adversarial behaviour.

    `path` and `hop` locate it where that matters; `hop=None` picks a
    default position. `field` names the hop field for TAMPER_HOP.
    """
    kind: FaultKind
    path: int = 0
    hop: int = None
    field: str = "c"

    def __post_init__(self):
        kind = self.kind
        if isinstance(kind, str):
            valid = [k.value for k in FaultKind]
            if kind not in valid:
                raise ValueError(f"Invalid fault {kind!r}. Valid options are: {valid}")
            object.__setattr__(self, "kind", FaultKind(kind))
        if self.field not in TAMPER_FIELDS:
            raise ValueError(f"Invalid field {self.field!r}. Valid options are: "
                             f"{list(TAMPER_FIELDS)}")


@dataclass
class _Station:
    node: NodeRecord
    check_policy: bool = True
    skip: bool = False
    compliant: bool = True


# ---------------------------------------------------------------------------
# Sessions
# ---------------------------------------------------------------------------

TRANSCRIPT_MAGIC = b"AQKT"
TRANSCRIPT_VERSION = 1


@dataclass
class SessionTranscript:
    """What the receiver saw: delivered messages and the exit keys it knows."""
    messages: list
    exit_keys: list

    def to_bytes(self):
        out = [TRANSCRIPT_MAGIC, bytes([TRANSCRIPT_VERSION]),
               len(self.messages).to_bytes(2, "big")]
        for pk, msg in zip(self.exit_keys, self.messages):
            out += [pk, len(msg).to_bytes(4, "big"), msg]
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data):
        if data[:4] != TRANSCRIPT_MAGIC or len(data) < 7:
            raise DecodeError(DecodeReason.NON_CANONICAL, "not a transcript", 0)
        if data[4] != TRANSCRIPT_VERSION:
            raise DecodeError(DecodeReason.NON_CANONICAL, f"transcript version {data[4]}", 4)
        count = int.from_bytes(data[5:7], "big")
        offset = 7
        messages, keys = [], []
        for _ in range(count):
            if offset + G1_BYTES + 4 > len(data):
                raise DecodeError(DecodeReason.BAD_LENGTH, "transcript truncated", offset)
            keys.append(data[offset:offset + G1_BYTES])
            size = int.from_bytes(data[offset + G1_BYTES:offset + G1_BYTES + 4], "big")
            offset += G1_BYTES + 4
            if offset + size > len(data):
                raise DecodeError(DecodeReason.BAD_LENGTH, "transcript truncated", offset)
            messages.append(data[offset:offset + size])
            offset += size
        if offset != len(data):
            raise DecodeError(DecodeReason.BAD_LENGTH, "trailing transcript bytes", offset)
        return cls(messages=messages, exit_keys=keys)

    def decode(self):
        """Decoded messages; DecodeError offsets are relative to each message."""
        return [deserialize_hop_message(m) for m in self.messages]


def field_inventory(transcript):
    """Count every wire field the receiver received, by name and size."""
    inventory = Counter()
    for raw in transcript.messages:
        msg = deserialize_hop_message(raw)
        policy = msg.policy
        inventory[("magic", len(MAGIC))] += 1
        inventory[("version", 1)] += 1
        inventory[("sid.nonce", NONCE_BYTES)] += 1
        inventory[("sid.timestamp", SID_BYTES - NONCE_BYTES)] += 1
        inventory[("policy.id_length", 2)] += 1
        inventory[("policy.id", len(policy.policy_id))] += 1
        inventory[("policy.ell", 2)] += 1
        inventory[("policy.d", 2)] += 1
        inventory[("policy.index", 2)] += policy.d
        inventory[("policy.value", SCALAR_BYTES)] += policy.d
        inventory[("hop_count", 2)] += 1
        for _ in msg.hops:
            for name, (_, size) in _HOP_LAYOUT.items():
                if name == "z_attr":
                    inventory[("hop.z_attr", size)] += policy.ell - policy.d
                else:
                    inventory[(f"hop.{name}", size)] += 1
        inventory[("link_flag", 1)] += 1
        if msg.link is not None:
            inventory[("link.c", SCALAR_BYTES)] += 1
            inventory[("link.z", SCALAR_BYTES)] += 1
    return inventory


TOPOLOGY_TOKENS = ("node", "path", "edge", "neighbor", "neighbour", "directory", "route",
                   "pk", "position", "index_on")


def topology_fields(inventory):
    return sorted({name for name, _ in inventory
                   if any(tok in name.lower() for tok in TOPOLOGY_TOKENS)})


@dataclass
class SessionResult:
    """Outcome of one simulated session.

    Unpacks as ``(verdict, transcript, counters, payload_bytes)``. The
    remaining attributes are operator-side instrumentation and never part
    of the transcript.
    """
    verdict: ReceiverVerdict
    transcript: SessionTranscript
    counters: OpCounters
    payload_bytes: int
    sid: SessionId = None
    node_counters: list = field(default_factory=list)
    hop_seconds: list = field(default_factory=list)
    executed_paths: list = field(default_factory=list)
    compliant: bool = True
    errors: list = field(default_factory=list)

    def __iter__(self):
        return iter((self.verdict, self.transcript, self.counters, self.payload_bytes))


def _pick(hop, length, default):
    if length == 0:
        raise ValueError("fault targets an empty path")
    position = default if hop is None else hop
    if not 0 <= position < length:
        raise ValueError(f"hop {position} outside path of length {length}")
    return position


def _violating_attrs(node, policy):
    if policy.d == 0:
        raise ValueError("policy discloses nothing, so no attribute choice can violate it")
    index, required = policy.required[0]
    values = list(node.attrs.values)
    values[index] = (required + 1) % CURVE_ORDER
    return AttributeVector(values=tuple(values))


def _stations(g, routes, policy, fault, rng):
    """Per-path station lists plus the exit ids and receiver directory the
    operator wires up for them."""
    stations = [[_Station(node=g.nodes[v]) for v in path] for path in routes.paths]
    exits = list(routes.exit_nodes)
    directory = g.receiver_directory()
    if fault is None:
        return stations, exits, directory

    kind = fault.kind
    if not 0 <= fault.path < len(stations):
        raise ValueError(f"fault path {fault.path} outside {len(stations)} paths")
    if kind in (FaultKind.REPLAY_SID, FaultKind.STALE_SID, FaultKind.DUPLICATE_DELIVERY,
                FaultKind.TAMPER_HOP):
        return stations, exits, directory
    line = stations[fault.path]

    if kind is FaultKind.SHARE_NODE_ACROSS_PATHS:
        if len(stations) < 2:
            raise ValueError("sharing a node needs at least two paths")
        donor = stations[fault.path]
        other = stations[(fault.path + 1) % len(stations)]
        shared = donor[_pick(fault.hop, len(donor), len(donor) // 2)].node
        last = other[-1].node
        wired = replace(shared, directory={**shared.directory, last.node_id: last.keys.pk})
        other.append(_Station(node=wired))
        directory[shared.node_id] = shared.keys.pk
        exits[(fault.path + 1) % len(stations)] = shared.node_id
    elif kind is FaultKind.SKIP_APPEND_AND_RELAY:
        at = _pick(fault.hop, len(line), 0)
        line[at] = replace(line[at], skip=True, compliant=False)
    elif kind is FaultKind.UNCERTIFIED_NODE_INJECT:
        at = _pick(fault.hop, len(line), len(line) // 2)
        rogue_issuer = Issuer(issuer_key_gen(g.params, rng), g.params, rng=rng)
        displaced = line[at].node
        keys = key_gen(rng)
        cred = register(rogue_issuer, keys, displaced.attrs, g.params, rng)
        rogue = NodeRecord(node_id=f"rogue-{fault.path}-{at}", keys=keys, attrs=displaced.attrs,
                           cred=cred, ledger=SessionLedger())
        if at > 0:
            prev = line[at - 1].node
            rogue.directory[prev.node_id] = prev.keys.pk
        line.insert(at, _Station(node=rogue, compliant=False))
        nxt = line[at + 1].node
        line[at + 1] = replace(line[at + 1], node=replace(
            nxt, directory={**nxt.directory, rogue.node_id: keys.pk}))
    elif kind is FaultKind.POLICY_VIOLATING_ATTRS:
        at = _pick(fault.hop, len(line), len(line) // 2)
        node = line[at].node
        attrs = _violating_attrs(node, policy)
        cred = register(g.issuer, node.keys, attrs, g.params, rng)
        line[at] = _Station(node=replace(node, attrs=attrs, cred=cred), check_policy=False,
                            compliant=False)
    return stations, exits, directory


def _flip(wire, policy, hop, field_name):
    offset_in_hop, size = _HOP_LAYOUT[field_name]
    if field_name == "z_attr" and policy.ell == policy.d:
        raise ValueError("policy hides no attribute, so there is no z_attr field")
    header = len(MAGIC) + 1 + SID_BYTES + len(encode_policy(policy)) + 2
    at = header + hop * hop_bytes(policy.ell, policy.d) + offset_in_hop + size - 1
    data = bytearray(wire)
    data[at] ^= 0x01
    return bytes(data)


def run_session(g, routes, policy, faults=None, rng=None, now=None, sid=None, transit=True,
                latency=0.0, workers=1):
    """Drive one session from sender to receiver.

    Parameters
    ----------
    g : NetworkGraph
    routes : RouteSpec
    policy : Policy
    faults : FaultPlan, optional
    rng : RandomSource, optional
    now : float, optional
        Clock used by the sender and the entry nodes.
    sid : SessionId, optional
        Reuse a session id instead of drawing a fresh one.
    transit : bool
        Serialize and decode the message between every pair of hops.
    latency : float
        Seconds slept per hop.
    workers : int
        Receiver path-verification threads.

    Returns
    -------
    SessionResult
    """
    rng = rng or default_rng()
    now = time.time() if now is None else now
    fault = faults
    if fault is not None and fault.kind is FaultKind.TAMPER_HOP:
        transit = True
    stations, exits, directory = _stations(g, routes, policy, fault, rng)

    starts = sender_init(len(stations), policy, [s[0].node.node_id for s in stations],
                         rng=rng, now=now)
    if sid is not None:
        starts = [replace(m, sid=sid) for m in starts]
    if fault is not None and fault.kind is FaultKind.STALE_SID:
        stale = SessionId(nonce=starts[0].sid.nonce,
                          timestamp=max(0, int(now) - 10 * stations[0][0].node.ledger.window))
        starts = [replace(m, sid=stale) for m in starts]
    session_id = starts[0].sid
    if fault is not None and fault.kind is FaultKind.REPLAY_SID:
        # the entry ledger has already admitted this sid once
        stations[0][0].node.ledger.admit(session_id, now)

    result = SessionResult(verdict=None, transcript=SessionTranscript([], []),
                           counters=OpCounters(), payload_bytes=0, sid=session_id,
                           executed_paths=[[s.node.node_id for s in line] for line in stations],
                           compliant=all(s.compliant for line in stations for s in line))

    finals = []
    for i, line in enumerate(stations):
        msg = starts[i]
        wire = serialize_hop_message(msg) if transit else None
        predecessor = SENDER
        for j, station in enumerate(line):
            if latency:
                time.sleep(latency)
            try:
                if transit:
                    msg = deserialize_hop_message(wire)
                if not station.skip:
                    t0 = time.perf_counter()
                    with counting() as ops:
                        msg = node_forward(station.node, msg, predecessor, g.pk_i, g.params,
                                           rng=rng, now=now, check_policy=station.check_policy)
                    result.hop_seconds.append(time.perf_counter() - t0)
                    result.node_counters.append(ops)
            except DecodeError as exc:
                result.errors.append((i, j, exc))
                result.verdict = ReceiverVerdict.reject(RejectReason.DECODE_ERROR, paths=(i,),
                                                        hops=(j,), detail=str(exc))
            except tuple(NODE_ERROR_REASONS) as exc:
                result.errors.append((i, j, exc))
                result.verdict = ReceiverVerdict.reject(NODE_ERROR_REASONS[type(exc)],
                                                        paths=(i,), hops=(j,), detail=str(exc))
            if result.verdict is not None:
                logger.warning("session %s stopped at path %d hop %d: %s",
                               session_id.nonce.hex(), i, j, result.verdict.detail)
                return result
            if transit:
                wire = serialize_hop_message(msg)
                if (fault is not None and fault.kind is FaultKind.TAMPER_HOP
                        and fault.path == i and _pick(fault.hop, len(line), len(line) - 1) == j):
                    wire = _flip(wire, policy, j, fault.field)
            predecessor = station.node.node_id
        finals.append(wire if transit else msg)

    exit_keys = [serialize_g1(directory[e]) for e in exits]
    if fault is not None and fault.kind is FaultKind.DUPLICATE_DELIVERY:
        finals.append(finals[0])
        exits.append(exits[0])
        exit_keys.append(exit_keys[0])
        result.executed_paths.append(list(result.executed_paths[0]))

    wires = finals if transit else [serialize_hop_message(m) for m in finals]
    result.transcript = SessionTranscript(messages=list(wires), exit_keys=exit_keys)
    try:
        delivered = [deserialize_hop_message(w) for w in wires] if transit else finals
    except DecodeError as exc:
        result.errors.append((None, None, exc))
        result.verdict = ReceiverVerdict.reject(RejectReason.DECODE_ERROR, detail=str(exc))
        return result

    receiver = Receiver(g.params, g.pk_i, directory, workers=workers)
    with counting() as ops:
        result.verdict = receiver.verify(delivered, policy, exits)
    result.counters = ops
    result.payload_bytes = message_payload(delivered)
    return result


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------

def _disjoint(paths):
    seen = set()
    for path in paths:
        if len(set(path)) != len(path) or seen & set(path):
            return False
        seen |= set(path)
    return True


def _with_attributes(g, attr_choice, rng):
    """Copy of `g` whose listed nodes were (honestly) certified on new attributes."""
    if not attr_choice:
        return g
    nodes = dict(g.nodes)
    for v, attrs in attr_choice.items():
        node = nodes[v]
        cred = register(g.issuer, node.keys, attrs, g.params, rng)
        nodes[v] = replace(node, attrs=attrs, cred=cred)
    return replace(g, nodes=nodes)


def run_policy_compliance_experiment(g, adversarial_attr_choice, route_choice, policy,
                                     faults=None, rng=None, now=None):
    """Play the policy-compliance game once; 1 means the adversary won.

    The adversary picks attributes for any nodes, the routes and optionally
    a fault. It wins when the receiver accepts although a hop was not a
    certified, policy-satisfying node, the executed paths overlap, or the
    accepted path count differs from the number of routes chosen.
    """
    rng = rng or default_rng()
    g2 = _with_attributes(g, adversarial_attr_choice or {}, rng)
    result = run_session(g2, route_choice, policy, faults=faults, rng=rng, now=now)
    if not result.verdict.accepted:
        return 0
    hops_ok = result.compliant and all(
        evaluate(policy, g2.nodes[v].attrs) if v in g2.nodes else False
        for path in result.executed_paths for v in path)
    if not hops_ok:
        return 1
    if not _disjoint(result.executed_paths):
        return 1
    if result.verdict.n_paths != len(route_choice.paths):
        return 1
    return 0


@dataclass
class StructureReport:
    fields: tuple
    shapes_match: bool
    topology_fields: list
    leaked_keys: list
    shared_pseudonyms: int
    verdicts: tuple

    @property
    def clean(self):
        return (self.shapes_match and not self.topology_fields and not self.leaked_keys
                and self.shared_pseudonyms == 0 and all(v.accepted for v in self.verdicts))


def _challenge_problems(g, routes, policy):
    problems = []
    for i, path in enumerate(routes.paths):
        if len(set(path)) != len(path):
            problems.append(f"path {i} loops")
        if any(v not in g.nodes for v in path):
            problems.append(f"path {i} names unknown nodes")
            continue
        if any(not evaluate(policy, g.nodes[v].attrs) for v in path):
            problems.append(f"path {i} has a node that does not satisfy the policy")
    if not _disjoint([set(p) for p in routes.paths]) and not problems:
        problems.append("paths are not disjoint")
    if not problems:
        problems += route_problems(g, routes)
    return problems


def run_path_hiding_structure_check(g, route_pair, policy, used_sids=(), sid=None, rng=None,
                                    now=None):
    """Validate a left/right challenge and compare what the receiver sees.

    Both route sets must be valid, disjoint, policy-satisfying and agree in
    path lengths and entry/exit nodes; a given `sid` must be new. The check
    then runs both branches and reports whether the receiver transcripts
    have the same fields, carry no topology field or node key, and share no
    pseudonym.

    Raises
    ------
    InvalidChallenge
    """
    rng = rng or default_rng()
    left, right = route_pair
    if sid is not None and sid in set(used_sids):
        raise InvalidChallenge("session id was used before")
    for name, routes in (("left", left), ("right", right)):
        problems = _challenge_problems(g, routes, policy)
        if problems:
            raise InvalidChallenge(f"{name} routes: " + "; ".join(problems))
    if len(left) != len(right):
        raise InvalidChallenge("branches differ in the number of paths")
    for i, (a, b) in enumerate(zip(left.paths, right.paths)):
        if len(a) != len(b):
            raise InvalidChallenge(f"path {i} lengths differ ({len(a)} vs {len(b)})")
        if a[0] != b[0] or a[-1] != b[-1]:
            raise InvalidChallenge(f"path {i} entry/exit nodes differ")

    runs = [run_session(g, left, policy, rng=rng, now=now, sid=sid),
            run_session(g, right, policy, rng=rng, now=now)]
    inventories = tuple(field_inventory(r.transcript) for r in runs)
    keys = {v: serialize_g1(node.keys.pk) for v, node in g.nodes.items()}
    leaked = sorted({v for r in runs for msg in r.transcript.messages
                     for v, pk in keys.items() if pk in msg})
    nyms = []
    for r in runs:
        nyms.append({hop.nym.to_bytes() for msg in r.transcript.decode() for hop in msg.hops})
    return StructureReport(
        fields=inventories,
        shapes_match=inventories[0] == inventories[1],
        topology_fields=sorted(set(topology_fields(inventories[0]))
                               | set(topology_fields(inventories[1]))),
        leaked_keys=leaked,
        shared_pseudonyms=len(nyms[0] & nyms[1]),
        verdicts=(runs[0].verdict, runs[1].verdict),
    )


def _fresh_ledgers(g):
    """Copy of `g` whose nodes start with empty seen-session ledgers."""
    nodes = {v: replace(node, ledger=SessionLedger(window=node.ledger.window))
             for v, node in g.nodes.items()}
    return replace(g, nodes=nodes)


def run_fault_matrix(g, routes, policy, seeds, kinds=None, now=None, quiet=True):
    """Run every fault kind under every seed and tabulate the verdicts.

    Each (fault, seed) cell draws from its own random stream and starts
    from empty entry ledgers.

    Returns
    -------
    pandas.DataFrame
        Columns: fault, seed, field, reason, expected (bool), accepted (bool).
    """
    kinds = list(kinds) if kinds is not None else list(FaultKind)
    if len(routes) < 2:
        kinds = [k for k in kinds if k is not FaultKind.SHARE_NODE_ACROSS_PATHS]
    if policy.d == 0:
        kinds = [k for k in kinds if k is not FaultKind.POLICY_VIOLATING_ATTRS]
    order = list(FaultKind)
    rows = []
    cells = [(k, s) for k in kinds for s in seeds]
    for kind, seed in tqdm(cells, desc="Fault matrix", disable=quiet):
        rng = RandomSource([order.index(kind), seed])
        field_name = TAMPER_FIELDS[seed % len(TAMPER_FIELDS)]
        if field_name == "z_attr" and policy.ell == policy.d:
            field_name = "c"
        plan = FaultPlan(kind=kind, field=field_name)
        result = run_session(_fresh_ledgers(g), routes, policy, faults=plan, rng=rng, now=now)
        reason = result.verdict.reason
        rows.append({
            "fault": kind.value,
            "seed": seed,
            "field": field_name if kind is FaultKind.TAMPER_HOP else "",
            "reason": reason.value if reason is not None else "",
            "expected": reason in EXPECTED_REASONS[kind],
            "accepted": result.verdict.accepted,
        })
    return pd.DataFrame(rows)


COMPLETENESS_POLICY_LABEL = "class:repeater"


def run_completeness_sweep(sessions, seed=0, min_nodes=5, max_nodes=30, max_paths=3, ell=2,
                           edge_probability=0.3, quiet=False):
    """Honest sessions over random graphs; returns how many were accepted
    with n' equal to the number of routes."""
    gen = np.random.default_rng(seed)
    params = setup(ell)
    policy = Policy(policy_id=b"completeness", ell=ell,
                    required={0: attribute_scalar(COMPLETENESS_POLICY_LABEL)})
    accepted = 0
    for s in tqdm(range(sessions), desc="Completeness sweep", disable=quiet):
        rng = RandomSource(int(gen.integers(0, 2**32)))
        n_nodes = int(gen.integers(min_nodes, max_nodes + 1))
        spec = random_graph(n_nodes, edge_probability, seed=int(gen.integers(0, 2**32)), ell=ell,
                            attachments=max_paths)
        g = build_graph(spec, spec.attrs, issuer_key_gen(params, rng), params=params, rng=rng)
        k = int(gen.integers(1, max_paths + 1))
        while True:
            try:
                routes = find_disjoint_paths(g, SENDER, RECEIVER, k)
                break
            except NoSuchRoutes:
                k -= 1
        result = run_session(g, routes, policy, rng=rng)
        if result.verdict.accepted and result.verdict.n_paths == len(routes):
            accepted += 1
        else:
            logger.warning("completeness session %d rejected: %s", s, result.verdict)
    if not quiet:
        print(f"{accepted}/{sessions} honest sessions accepted")
    return accepted
