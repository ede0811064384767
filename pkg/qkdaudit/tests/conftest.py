import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "src"))

import pytest

from qkdaudit.group import RandomSource, setup
from qkdaudit.groth import issuer_key_gen
from qkdaudit.netsim import RouteSpec, build_graph, run_session
from qkdaudit.policy import AttributeVector, Policy, attribute_scalar
from qkdaudit.protocol import register
from qkdaudit.pseudonym import key_gen

# Full-size sweeps take minutes to hours with pure Python pairings
SLOW = os.environ.get("QKDAUDIT_SLOW_TESTS", "0") == "1"

ELL = 2
REPEATER = "class:repeater"

# 4-cycle a-b-c-d; sender reaches a and c, receiver b and d
CYCLE = {"a": ["b", "d"], "b": ["a", "c"], "c": ["b", "d"], "d": ["c", "a"]}


def repeater_attrs(site):
    return AttributeVector.from_labels([REPEATER, f"site:{site}"])


@pytest.fixture(scope="session")
def params():
    return setup(ELL)


@pytest.fixture(scope="session")
def policy():
    return Policy(policy_id=b"repeaters", ell=ELL, required={0: attribute_scalar(REPEATER)})


@pytest.fixture(scope="session")
def issuer_keys(params):
    return issuer_key_gen(params, RandomSource(1))


@pytest.fixture(scope="session")
def node_keys():
    return key_gen(RandomSource(2))


@pytest.fixture(scope="session")
def attrs():
    return repeater_attrs("lab")


@pytest.fixture(scope="session")
def credential(issuer_keys, node_keys, attrs, params):
    return register(issuer_keys, node_keys, attrs, params, RandomSource(3))


@pytest.fixture(scope="session")
def cycle_graph(issuer_keys, params):
    attr_map = {v: repeater_attrs(v) for v in CYCLE}
    return build_graph(CYCLE, attr_map, issuer_keys, params=params, rng=RandomSource(4),
                       sender=["a", "c"], receiver=["b", "d"])


@pytest.fixture(scope="session")
def cycle_routes():
    return RouteSpec(paths=[("a", "b"), ("c", "d")])


@pytest.fixture(scope="session")
def honest_result(cycle_graph, cycle_routes, policy):
    return run_session(cycle_graph, cycle_routes, policy, rng=RandomSource(5))
