"""
Protocol roles: issuer registration, sender initiation, node forwarding and
receiver verification.

Every node on a path appends its pseudonym and a credential proof bound to
everything before it, then replaces the link proof so the next hop (or the
receiver) can check that the message came from a registered neighbour. The
receiver checks the links, every credential proof and that no pseudonym
repeats across paths, which rules out a node serving on two paths.
"""
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

from .database import Admission, RegistrationLog, SessionLedger
from .group import charge, counting, default_rng, serialize_g1
from .groth import IssuerKeyPair, GrothSignature, sign
from .policy import PolicyUnsatisfied, encode_policy, evaluate, pedersen_message
from .pseudonym import NodeKeyPair, nym_gen
from .sok import (
    InvalidCredential,
    precompute,
    prove_credential,
    prove_link,
    prove_registration,
    verify_credential,
    verify_link,
    verify_registration,
)
from .wire import Hop, HopMessage, SessionId

logger = logging.getLogger(__name__)

DID_BYTES = 16


class _Endpoint:
    def __init__(self, name):
        self.name = name

    def __repr__(self):
        return self.name


SENDER = _Endpoint("SENDER")
RECEIVER = _Endpoint("RECEIVER")


class ProtocolError(RuntimeError):
    """A role refused to continue a session."""


class RegistrationProofInvalid(ProtocolError):
    pass


class LinkProofInvalid(ProtocolError):
    pass


class UnknownPredecessor(ProtocolError):
    pass


class StaleSession(ProtocolError):
    pass


class DuplicateSession(ProtocolError):
    pass


class RejectReason(Enum):
    PROOF_INVALID = "ProofInvalid"
    LINK_INVALID = "LinkInvalid"
    DUPLICATE_PSEUDONYM = "DuplicatePseudonym"
    POLICY_MISMATCH = "PolicyMismatch"
    SID_MISMATCH = "SidMismatch"
    # raised by nodes on the way, surfaced by the simulator
    LINK_PROOF_INVALID = "LinkProofInvalid"
    UNKNOWN_PREDECESSOR = "UnknownPredecessor"
    STALE_SESSION = "StaleSession"
    DUPLICATE_SESSION = "DuplicateSession"
    POLICY_UNSATISFIED = "PolicyUnsatisfied"
    INVALID_CREDENTIAL = "InvalidCredential"
    DECODE_ERROR = "DecodeError"


NODE_ERROR_REASONS = {
    LinkProofInvalid: RejectReason.LINK_PROOF_INVALID,
    UnknownPredecessor: RejectReason.UNKNOWN_PREDECESSOR,
    StaleSession: RejectReason.STALE_SESSION,
    DuplicateSession: RejectReason.DUPLICATE_SESSION,
    PolicyUnsatisfied: RejectReason.POLICY_UNSATISFIED,
    InvalidCredential: RejectReason.INVALID_CREDENTIAL,
}


@dataclass(frozen=True)
class ReceiverVerdict:
    """Number of validated disjoint paths, or a reject reason."""
    n_paths: int = None
    reason: RejectReason = None
    paths: tuple = ()
    hops: tuple = ()
    detail: str = ""

    @property
    def accepted(self):
        return self.reason is None

    @classmethod
    def accept(cls, n_paths):
        if n_paths < 1:
            raise ValueError("an accepting verdict needs at least one path")
        return cls(n_paths=n_paths)

    @classmethod
    def reject(cls, reason, paths=(), hops=(), detail=""):
        return cls(reason=reason, paths=tuple(paths), hops=tuple(hops), detail=detail)

    def __str__(self):
        if self.accepted:
            return f"n'={self.n_paths}"
        where = ""
        if self.paths:
            where += f" paths={list(self.paths)}"
        if self.hops:
            where += f" hops={list(self.hops)}"
        return f"rejected: {self.reason.value}{where}"


# ---------------------------------------------------------------------------
# Registration
# ---------------------------------------------------------------------------

class Issuer:
    """Certifies node keys and attributes.

    Each registration spends a fresh nonce handed out by :meth:`new_nonce`.
    """

    def __init__(self, keys, params, log=None, rng=None):
        self.keys = keys
        self.params = params
        self.log = log or RegistrationLog()
        self.rng = rng or default_rng()

    @property
    def pk(self):
        return self.keys.pk

    def new_nonce(self):
        did = self.rng.bytes(DID_BYTES)
        self.log.issue(did)
        return did

    def issue(self, pk_n, attrs, did, proof):
        """Sign pedersen_message(pk_n, attrs) if `proof` is valid for `did`."""
        if not self.log.spend(did, serialize_g1(pk_n)):
            raise RegistrationProofInvalid("registration nonce unknown or already used")
        if not verify_registration(pk_n, did, proof):
            logger.warning("registration proof rejected for nonce %s", did.hex())
            raise RegistrationProofInvalid("registration proof does not verify")
        msg = pedersen_message(pk_n, attrs, self.params)
        return sign(self.params, self.keys.sk, msg, self.rng)


def register(issuer, node, attrs, params, rng=None):
    """Run the registration exchange and return the node's credential.

    `issuer` is an :class:`Issuer` or a bare :class:`IssuerKeyPair`.
    """
    if isinstance(issuer, IssuerKeyPair):
        issuer = Issuer(issuer, params, rng=rng)
    did = issuer.new_nonce()
    proof = prove_registration(node.sk, node.pk, did, rng)
    return issuer.issue(node.pk, attrs, did, proof)


@dataclass
class NodeRecord:
    """A repeater's private state and its view of its neighbours."""
    node_id: str
    keys: NodeKeyPair
    attrs: object
    cred: GrothSignature
    directory: dict = field(default_factory=dict)
    ledger: SessionLedger = field(default_factory=SessionLedger)


# ---------------------------------------------------------------------------
# Sending and forwarding
# ---------------------------------------------------------------------------

def sender_init(n_paths, policy, entry_nodes, rng=None, now=None):
    """One empty message per path, all under one fresh session id."""
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    if len(entry_nodes) != n_paths:
        raise ValueError(f"expected {n_paths} entry nodes, got {len(entry_nodes)}")
    rng = rng or default_rng()
    now = time.time() if now is None else now
    sid = SessionId.fresh(rng, now)
    logger.debug("session %s: %d paths", sid.nonce.hex(), n_paths)
    return [HopMessage(sid=sid, policy=policy) for _ in range(n_paths)]


def node_forward(node, incoming, predecessor, pk_i, params, rng=None, now=None,
                 check_policy=True):
    """Verify the incoming message and append this node's hop.

    Raises
    ------
    LinkProofInvalid, UnknownPredecessor, StaleSession, DuplicateSession,
    PolicyUnsatisfied
    """
    sid_bytes = incoming.sid.to_bytes()
    if predecessor is SENDER:
        if incoming.hops or incoming.link is not None:
            raise LinkProofInvalid(f"{node.node_id}: sender message already carries hops")
        now = time.time() if now is None else now
        admission = node.ledger.admit(incoming.sid, now)
        if admission is Admission.STALE:
            raise StaleSession(f"{node.node_id}: session timestamp outside freshness window")
        if admission is Admission.DUPLICATE:
            raise DuplicateSession(f"{node.node_id}: session nonce seen before")
    else:
        pk_prev = node.directory.get(predecessor)
        if pk_prev is None:
            raise UnknownPredecessor(f"{node.node_id}: {predecessor!r} is not a neighbour")
        if not incoming.hops or incoming.link is None:
            raise LinkProofInvalid(f"{node.node_id}: message from {predecessor} has no link proof")
        last = incoming.hops[-1]
        ctx_prev = incoming.context(len(incoming.hops) - 1)
        if not verify_link(incoming.link, sid_bytes, last.nym, pk_prev, ctx_prev):
            logger.warning("%s: link proof from %s rejected", node.node_id, predecessor)
            raise LinkProofInvalid(f"{node.node_id}: link proof from {predecessor} does not verify")

    if check_policy and not evaluate(incoming.policy, node.attrs):
        raise PolicyUnsatisfied(f"{node.node_id}: attributes do not satisfy the policy")

    rng = rng or default_rng()
    nym = nym_gen(node.keys.sk, incoming.sid.scope)
    ctx = incoming.context()
    proof = prove_credential(node.keys.sk, node.attrs, node.cred, incoming.policy, sid_bytes,
                             nym, ctx, pk_i, params, rng, check_policy=check_policy)
    link = prove_link(node.keys.sk, sid_bytes, nym, node.keys.pk, ctx, rng)
    return incoming.appended(Hop(proof=proof, nym=nym), link)


# ---------------------------------------------------------------------------
# Receiving
# ---------------------------------------------------------------------------

class Receiver:
    """Verifies delivered messages against an issuer key.

    Parameters
    ----------
    params : PublicParams
    pk_i : G2 point
        Issuer public key.
    directory : dict
        Exit node id -> public key.
    constants : IssuerConstants, optional
        Precomputed at construction when omitted.
    workers : int
        Paths verified in parallel by a thread pool when > 1.
    """

    def __init__(self, params, pk_i, directory, constants=None, workers=1):
        self.params = params
        self.pk_i = pk_i
        self.directory = dict(directory)
        self.constants = constants or precompute(params, pk_i)
        self.workers = workers

    def _reject(self, failures):
        for f in failures:
            logger.warning("receiver: %s", f)
        return failures[0]

    def _first_bad_hop(self, msg, sid_bytes, policy):
        for j, hop in enumerate(msg.hops):
            if not verify_credential(hop.proof, policy, sid_bytes, hop.nym, msg.context(j),
                                     self.pk_i, self.params, self.constants):
                return j
        return None

    def _counted_first_bad_hop(self, msg, sid_bytes, policy):
        with counting() as ops:
            bad = self._first_bad_hop(msg, sid_bytes, policy)
        return bad, ops

    def verify(self, finals, policy, exit_nodes):
        if not finals:
            raise ValueError("no messages delivered")
        if len(exit_nodes) != len(finals):
            raise ValueError(f"{len(finals)} messages but {len(exit_nodes)} exit nodes")

        sid = finals[0].sid
        wanted = encode_policy(policy)
        for i, msg in enumerate(finals):
            if msg.sid != sid:
                return self._reject([ReceiverVerdict.reject(RejectReason.SID_MISMATCH, paths=(i,))])
            if encode_policy(msg.policy) != wanted:
                return self._reject([ReceiverVerdict.reject(RejectReason.POLICY_MISMATCH,
                                                            paths=(i,))])
        sid_bytes = sid.to_bytes()

        failures = []
        for i, (msg, exit_id) in enumerate(zip(finals, exit_nodes)):
            pk = self.directory.get(exit_id)
            if pk is None or not msg.hops or msg.link is None:
                failures.append(ReceiverVerdict.reject(RejectReason.LINK_INVALID, paths=(i,),
                                                       detail="missing link or exit key"))
                continue
            ctx = msg.context(len(msg.hops) - 1)
            if not verify_link(msg.link, sid_bytes, msg.hops[-1].nym, pk, ctx):
                failures.append(ReceiverVerdict.reject(RejectReason.LINK_INVALID, paths=(i,)))
        if failures:
            return self._reject(failures)

        if self.workers > 1 and len(finals) > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                results = list(pool.map(
                    lambda m: self._counted_first_bad_hop(m, sid_bytes, policy), finals))
            bad_hops = []
            for bad, ops in results:
                charge(ops)
                bad_hops.append(bad)
        else:
            bad_hops = [self._first_bad_hop(m, sid_bytes, policy) for m in finals]
        failures = [ReceiverVerdict.reject(RejectReason.PROOF_INVALID, paths=(i,), hops=(j,))
                    for i, j in enumerate(bad_hops) if j is not None]
        if failures:
            return self._reject(failures)

        seen = {}
        for i, msg in enumerate(finals):
            for j, hop in enumerate(msg.hops):
                key = hop.nym.to_bytes()
                if key in seen:
                    first = seen[key]
                    failures.append(ReceiverVerdict.reject(
                        RejectReason.DUPLICATE_PSEUDONYM,
                        paths=(first[0], i), hops=(first[1], j)))
                else:
                    seen[key] = (i, j)
        if failures:
            return self._reject(failures)

        logger.info("session %s accepted over %d paths", sid.nonce.hex(), len(finals))
        return ReceiverVerdict.accept(len(finals))


def receiver_verify(finals, pk_i, policy, exit_nodes, params, directory, constants=None,
                    workers=1):
    """Functional form of :meth:`Receiver.verify`."""
    receiver = Receiver(params, pk_i, directory, constants=constants, workers=workers)
    return receiver.verify(finals, policy, exit_nodes)
