from .group import RandomSource, counting, setup
from .groth import issuer_key_gen
from .policy import AttributeVector, Policy, attribute_scalar
from .protocol import (
    Issuer,
    Receiver,
    ReceiverVerdict,
    RejectReason,
    node_forward,
    receiver_verify,
    register,
    sender_init,
)
from .pseudonym import key_gen, nym_gen
from .wire import payload_bytes, serialize_hop_message, deserialize_hop_message
from .netsim import (
    FaultKind,
    FaultPlan,
    RouteSpec,
    build_graph,
    find_disjoint_paths,
    run_session,
    run_policy_compliance_experiment,
    run_path_hiding_structure_check,
)
__version__ = "0.1.0"
