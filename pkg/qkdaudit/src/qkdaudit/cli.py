"""
Command-line interface.

    qkdaudit keygen issuer --out issuer.key
    qkdaudit keygen node --out n1.key
    qkdaudit register --issuer-key issuer.key --node-key n1.key --id n1 --attrs a,b --store creds.bin
    qkdaudit graph --nodes 12 --edge-probability 0.3 --ell 2 --seed 1 --out net.txt
    qkdaudit run --graph net.txt --policy policy.txt --paths 2 --out session.aqkt
    qkdaudit audit --transcript session.aqkt --issuer-pk session.aqkt.pk --policy policy.txt \
        --exit-keys session.aqkt.exits
    qkdaudit bench --nodes 10,20,30 --ells 10 --out bench.csv

Exit codes: 0 accepted, 2 verification reject, 3 decode error, 4 I/O error,
5 configuration error.
"""
import argparse
import logging
import os
import sys

from .database import RegistrationLog, SessionLedger
from .group import (
    G2_BYTES,
    SCALAR_BYTES,
    DecodeError,
    DecodeReason,
    RandomSource,
    deserialize_g1,
    deserialize_g2,
    deserialize_scalar,
    serialize_g1,
    serialize_g2,
    serialize_scalar,
    setup,
)
from .groth import IssuerKeyPair, issuer_key_gen, verify
from .netsim import (
    FaultKind,
    FaultPlan,
    RouteSpec,
    SessionTranscript,
    build_graph,
    check_routes,
    find_disjoint_paths,
    parse_graph_file,
    parse_policy_file,
    random_graph,
    run_session,
    write_graph_file,
)
from .policy import AttributeVector, attribute_scalar, pedersen_message
from .protocol import RECEIVER, SENDER, Issuer, ProtocolError, Receiver, RejectReason, register
from .pseudonym import NodeKeyPair, key_gen
from .wire import (
    CredentialRecord,
    decode_credential_store,
    encode_credential_store,
)

logger = logging.getLogger(__name__)

EXIT_ACCEPT = 0
EXIT_REJECT = 2
EXIT_DECODE = 3
EXIT_IO = 4
EXIT_CONFIG = 5

ISSUER_KEY_MAGIC = b"AQKI"
NODE_KEY_MAGIC = b"AQKN"
LEDGER_ENV = "QKDAUDIT_LEDGER"


class ConfigError(ValueError):
    pass


def _say(args, *msg):
    if not args.quiet:
        print(*msg)


# ---------------------------------------------------------------------------
# Key files
# ---------------------------------------------------------------------------

def encode_issuer_key(keys):
    return ISSUER_KEY_MAGIC + serialize_scalar(keys.sk) + serialize_g2(keys.pk)


def decode_issuer_key(data):
    if data[:4] != ISSUER_KEY_MAGIC:
        raise DecodeError(DecodeReason.NON_CANONICAL, "not an issuer key file", 0)
    if len(data) != 4 + SCALAR_BYTES + G2_BYTES:
        raise DecodeError(DecodeReason.BAD_LENGTH, "issuer key file has the wrong size", 4)
    sk = deserialize_scalar(data[4:4 + SCALAR_BYTES])
    try:
        pk = deserialize_g2(data[4 + SCALAR_BYTES:])
    except DecodeError as exc:
        raise exc.shifted(4 + SCALAR_BYTES) from None
    return IssuerKeyPair(sk=sk, pk=pk)


def encode_node_key(keys):
    return NODE_KEY_MAGIC + keys.to_bytes()


def decode_node_key(data):
    if data[:4] != NODE_KEY_MAGIC:
        raise DecodeError(DecodeReason.NON_CANONICAL, "not a node key file", 0)
    try:
        return NodeKeyPair.from_bytes(data[4:])
    except DecodeError as exc:
        raise exc.shifted(4) from None


def _read(path):
    with open(path, "rb") as f:
        return f.read()


def _write(path, data):
    with open(path, "wb") as f:
        f.write(data)


def _attrs(text):
    tokens = [t for t in text.split(",") if t]
    if all(t.isdigit() for t in tokens):
        return AttributeVector(values=tuple(int(t) for t in tokens))
    return AttributeVector(values=tuple(int(t) if t.isdigit() else attribute_scalar(t)
                                        for t in tokens), labels=tokens)


def _rng(args):
    return RandomSource(args.seed)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_keygen(args):
    rng = _rng(args)
    if args.role == "issuer":
        keys = issuer_key_gen(setup(1), rng)
        _write(args.out, encode_issuer_key(keys))
        _write(args.out + ".pub", serialize_g2(keys.pk))
        _say(args, f"Wrote issuer key {args.out} and public key {args.out}.pub")
    else:
        keys = key_gen(rng)
        _write(args.out, encode_node_key(keys))
        _say(args, f"Wrote node key {args.out}")
    return EXIT_ACCEPT


def cmd_register(args):
    issuer_keys = decode_issuer_key(_read(args.issuer_key))
    node_keys = decode_node_key(_read(args.node_key))
    attrs = _attrs(args.attrs)
    params = setup(len(attrs))
    rng = _rng(args)

    records = []
    if os.path.exists(args.store):
        ell, records = decode_credential_store(_read(args.store))
        if ell != len(attrs):
            raise ConfigError(f"store holds {ell}-attribute credentials, got {len(attrs)}")
    if any(r.node_id == args.id for r in records):
        raise ConfigError(f"{args.id} is already in {args.store}")

    issuer = Issuer(issuer_keys, params, log=RegistrationLog(args.log), rng=rng)
    cred = register(issuer, node_keys, attrs, params, rng)
    if not verify(params, issuer_keys.pk, cred, pedersen_message(node_keys.pk, attrs, params)):
        raise ProtocolError("issued credential does not verify")
    records.append(CredentialRecord(node_id=args.id, pk=node_keys.pk, attrs=attrs, cred=cred))
    _write(args.store, encode_credential_store(records, len(attrs)))
    issued = issuer.log.registered_on(serialize_g1(node_keys.pk))
    _say(args, f"Registered {args.id} on {issued} ({len(records)} credentials in {args.store})")
    return EXIT_ACCEPT


def cmd_graph(args):
    spec = random_graph(args.nodes, args.edge_probability, seed=args.seed, ell=args.ell,
                        attachments=args.attachments)
    write_graph_file(spec, args.out)
    _say(args, f"Wrote {len(spec.nodes)} nodes and {len(spec.edges)} edges to {args.out}")
    return EXIT_ACCEPT


def read_exit_keys(path):
    """Trusted exit-node keys: one ``<node id> <hex G1 key>`` per line."""
    directory = {}
    with open(path) as f:
        for raw in f:
            line = raw.split("#", 1)[0].split()
            if not line:
                continue
            if len(line) != 2:
                raise ConfigError(f"{path}: expected '<node id> <hex key>', got {raw.strip()!r}")
            try:
                key = bytes.fromhex(line[1])
            except ValueError:
                raise ConfigError(f"{path}: key of {line[0]} is not hex") from None
            directory[line[0]] = deserialize_g1(key)
    if not directory:
        raise ConfigError(f"{path} names no exit keys")
    return directory


def write_exit_keys(directory, path):
    with open(path, "w") as f:
        for v, pk in directory.items():
            f.write(f"{v} {serialize_g1(pk).hex()}\n")


def read_routes(path):
    """One path per line, node ids separated by whitespace."""
    paths = []
    with open(path) as f:
        for raw in f:
            line = raw.split("#", 1)[0].split()
            if line:
                paths.append(tuple(line))
    if not paths:
        raise ConfigError(f"{path} names no routes")
    return RouteSpec(paths=paths)


def _attach_ledgers(g, directory):
    os.makedirs(directory, exist_ok=True)
    for v in g.sender_links:
        g.nodes[v].ledger = SessionLedger(os.path.join(directory, f"{v}.sqlite"))


def cmd_run(args):
    spec = parse_graph_file(args.graph)
    policy = parse_policy_file(args.policy)
    ells = {len(a) for a in spec.attrs.values()}
    if ells != {policy.ell}:
        raise ConfigError(f"policy has ell={policy.ell}, graph attributes have {sorted(ells)}")
    rng = _rng(args)
    params = setup(policy.ell)
    if args.issuer_key:
        issuer_keys = decode_issuer_key(_read(args.issuer_key))
    else:
        issuer_keys = issuer_key_gen(params, rng)
    g = build_graph(spec, spec.attrs, issuer_keys, params=params, rng=rng, quiet=args.quiet)
    ledger_dir = os.environ.get(LEDGER_ENV)
    if ledger_dir:
        _attach_ledgers(g, ledger_dir)

    if args.routes:
        routes = read_routes(args.routes)
        check_routes(g, routes)
    else:
        routes = find_disjoint_paths(g, SENDER, RECEIVER, args.paths)
    fault = FaultPlan(kind=args.fault) if args.fault else None

    result = run_session(g, routes, policy, faults=fault, rng=rng, workers=args.workers)
    if args.out:
        _write(args.out, result.transcript.to_bytes())
        _write(args.out + ".pk", serialize_g2(g.pk_i))
        write_exit_keys(g.receiver_directory(), args.out + ".exits")
        _say(args, f"Wrote transcript {args.out}, issuer key {args.out}.pk and exit keys "
                   f"{args.out}.exits")
    print(result.verdict)
    if result.verdict.accepted:
        _say(args, f"payload {result.payload_bytes} bytes over {len(routes)} paths")
        return EXIT_ACCEPT
    if result.verdict.reason is RejectReason.DECODE_ERROR:
        return EXIT_DECODE
    return EXIT_REJECT


def cmd_audit(args):
    transcript = SessionTranscript.from_bytes(_read(args.transcript))
    pk_i = deserialize_g2(_read(args.issuer_pk))
    policy = parse_policy_file(args.policy)
    finals = transcript.decode()
    if not finals:
        raise DecodeError(DecodeReason.BAD_LENGTH, "transcript holds no messages", 0)
    if args.exit_keys:
        directory = read_exit_keys(args.exit_keys)
        by_key = {serialize_g1(pk): v for v, pk in directory.items()}
        exits = [by_key.get(bytes(pk), f"unlisted{i}")
                 for i, pk in enumerate(transcript.exit_keys)]
    else:
        exits = [f"exit{i}" for i in range(len(finals))]
        directory = {e: deserialize_g1(pk) for e, pk in zip(exits, transcript.exit_keys)}
    receiver = Receiver(setup(policy.ell), pk_i, directory, workers=args.workers)
    verdict = receiver.verify(finals, policy, exits)
    print(verdict)
    return EXIT_ACCEPT if verdict.accepted else EXIT_REJECT


def cmd_bench(args):
    from .bench import BenchConfig, run_bench

    config = BenchConfig(
        node_counts=tuple(int(n) for n in args.nodes.split(",")),
        ells=tuple(int(e) for e in args.ells.split(",")),
        mode=args.mode,
        repetitions=args.repetitions,
        output=args.out,
        seed=args.seed or 0,
        parallel=args.parallel,
        paths=args.paths,
        quiet=args.quiet,
    )
    run_bench(config)
    return EXIT_ACCEPT


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="qkdaudit",
        description="Auditable, topology-hiding path validation for QKD repeater networks.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=__doc__.split("\n\n")[1],
    )
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="More logging (-vv for debug)")
    parser.add_argument("-q", "--quiet", action="store_true", help="Only print the verdict")
    parser.add_argument("--seed", type=int, default=None,
                        help="Seed for reproducible runs (NOT secure)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keygen", help="Generate an issuer or node key file")
    p.add_argument("role", choices=["issuer", "node"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("register", help="Certify a node key and attributes")
    p.add_argument("--issuer-key", required=True)
    p.add_argument("--node-key", required=True)
    p.add_argument("--id", required=True, help="Node id stored with the credential")
    p.add_argument("--attrs", required=True, help="Comma-separated values or labels")
    p.add_argument("--store", required=True, help="Credential store file (created if missing)")
    p.add_argument("--log", default=":memory:", help="SQLite registration log")
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("graph", help="Write a random graph file")
    p.add_argument("--nodes", type=int, required=True)
    p.add_argument("--edge-probability", type=float, default=0.3)
    p.add_argument("--ell", type=int, default=2)
    p.add_argument("--attachments", type=int, default=2,
                   help="Nodes attached to the sender and to the receiver")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("run", help="Run one session over a graph file")
    p.add_argument("--graph", required=True)
    p.add_argument("--policy", required=True)
    p.add_argument("--routes", help="Route file; default is --paths disjoint routes")
    p.add_argument("--paths", type=int, default=1)
    p.add_argument("--fault", choices=[k.value for k in FaultKind])
    p.add_argument("--issuer-key", help="Issuer key file; default is a fresh key")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", help="Transcript file")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("audit", help="Re-verify a stored transcript")
    p.add_argument("--transcript", required=True)
    p.add_argument("--issuer-pk", required=True)
    p.add_argument("--policy", required=True)
    p.add_argument("--exit-keys",
                   help="Trusted exit-node keys, lines of '<node id> <hex key>' (run --out "
                        "writes <out>.exits). Without it the exit keys stored in the "
                        "transcript are trusted")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("bench", help="Runtime and bandwidth sweep to CSV")
    p.add_argument("--nodes", default=",".join(str(n) for n in range(10, 101, 10)))
    p.add_argument("--ells", default="10,20")
    p.add_argument("--mode", choices=["single-path", "multi-path"], default="single-path")
    p.add_argument("--repetitions", type=int, default=5)
    p.add_argument("--paths", type=int, default=3, help="Disjoint paths in multi-path mode")
    p.add_argument("--parallel", action="store_true", help="Run cells in a process pool")
    p.add_argument("--out", default="bench.csv")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    if args.quiet:
        level = logging.ERROR
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")

    try:
        return args.func(args)
    except DecodeError as exc:
        print(f"decode error: {exc}", file=sys.stderr)
        return EXIT_DECODE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ProtocolError as exc:
        print(f"rejected: {exc}", file=sys.stderr)
        return EXIT_REJECT
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
