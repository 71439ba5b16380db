import pytest
from hypothesis import given, settings, strategies as st

from neuronlock.errors import IndexOutOfRange, InvalidPolicy, MissingTaskPolicy
from neuronlock.policy import (
    and_,
    attr,
    or_,
    parse_policy,
    parse_policy_file,
    threshold,
)
from neuronlock.rng import Rng
from neuronlock.subsets import COMMON, build_policies, decompose_subsets


# -- grammar ---------------------------------------------------------------------


def test_parse_leaf():
    node = parse_policy("Institution=Hospital")
    assert node.kind == "attr" and node.attribute == "Institution=Hospital"


def test_parse_and_or_threshold():
    node = parse_policy("or(and(A=1,B=2),th(2,C=3,D=4,E=5))")
    assert node.kind == "or" and node.k == 1
    left, right = node.children
    assert left.kind == "and" and left.k == 2
    assert right.kind == "th" and right.k == 2 and len(right.children) == 3


def test_parse_whitespace_tolerant():
    a = parse_policy(" or( A=1 , and( B=2 , C=3 ) ) ")
    b = parse_policy("or(A=1,and(B=2,C=3))")
    assert a == b


def test_text_roundtrip():
    texts = [
        "A=1",
        "and(A=1,B=2)",
        "or(A=1,B=2,C=3)",
        "th(2,A=1,B=2,C=3)",
        "or(and(Institution=Hospital,Licence=True),Team=Dev)",
    ]
    for t in texts:
        assert parse_policy(t).to_text() == t
        assert parse_policy(parse_policy(t).to_text()) == parse_policy(t)


@pytest.mark.parametrize(
    "bad",
    ["", "and()", "th(0,A=1)", "th(4,A,B)", "xor(A,B)", "and(A=1", "and(A=1,)", "A=1)extra"],
)
def test_parse_rejects_malformed(bad):
    with pytest.raises(InvalidPolicy):
        parse_policy(bad)


def test_satisfies():
    node = parse_policy("or(and(A=1,B=2),th(2,C=3,D=4,E=5))")
    assert node.satisfies({"A=1", "B=2"})
    assert node.satisfies({"C=3", "E=5"})
    assert not node.satisfies({"A=1", "C=3"})
    assert not node.satisfies(set())


def test_threshold_invariants():
    with pytest.raises(InvalidPolicy):
        threshold(3, attr("A"), attr("B"))
    with pytest.raises(InvalidPolicy):
        threshold(0, attr("A"))


def test_policy_file():
    text = """
# deployment policies
health := and(Institution=Hospital,Licence=True)
code := Team=Dev
"""
    pols = parse_policy_file(text)
    assert set(pols) == {"health", "code"}
    assert pols["health"].kind == "and"
    with pytest.raises(InvalidPolicy):
        parse_policy_file("missing-assignment-line")
    with pytest.raises(InvalidPolicy):
        parse_policy_file("a := A=1\na := B=2")


# -- subset decomposition -----------------------------------------------------------


def owner_set_oracle(sets, total):
    """Label every neuron with its exact owner combination, independently."""
    by_neuron = {}
    for n in range(total):
        owners = frozenset(t for t, neurons in sets.items() if n in set(neurons))
        by_neuron[n] = owners
    return by_neuron


def assert_partition_matches_oracle(part, sets, total):
    oracle = owner_set_oracle(sets, total)
    seen = {}
    for sub in part.subsets:
        assert sub.neurons, "no empty subsets stored"
        for n in sub.neurons:
            assert n not in seen, "subsets must be disjoint"
            seen[n] = sub.owners
    assert set(seen) == set(range(total)), "union must cover all neurons"
    for n, owners in oracle.items():
        assert seen[n] == owners


def test_decompose_spec_example():
    sets = {"t1": [1, 2, 3], "t2": [3, 4]}
    part = decompose_subsets(sets, 6)
    by_owners = {sub.owners: sub.neurons for sub in part.subsets}
    assert by_owners[frozenset({"t1"})] == (1, 2)
    assert by_owners[frozenset({"t2"})] == (4,)
    assert by_owners[frozenset({"t1", "t2"})] == (3,)
    assert by_owners[COMMON] == (0, 5)
    assert_partition_matches_oracle(part, sets, 6)


def test_decompose_single_task():
    part = decompose_subsets({"t1": [0]}, 2)
    by_owners = {sub.owners: sub.neurons for sub in part.subsets}
    assert by_owners[frozenset({"t1"})] == (0,)
    assert by_owners[COMMON] == (1,)


def test_decompose_deterministic_ids():
    sets = {"b": [0, 1], "a": [1, 2], "c": [5]}
    p1 = decompose_subsets(sets, 8)
    p2 = decompose_subsets(dict(reversed(list(sets.items()))), 8)
    assert [(s.subset_id, s.owners, s.neurons) for s in p1.subsets] == [
        (s.subset_id, s.owners, s.neurons) for s in p2.subsets
    ]
    # non-common subsets sorted by owner tuple, common last
    owner_keys = [tuple(sorted(s.owners)) for s in p1.subsets if s.owners]
    assert owner_keys == sorted(owner_keys)
    assert p1.subsets[-1].owners == COMMON


def test_decompose_random_against_oracle():
    rng = Rng(17)
    for _ in range(20):
        total = 64
        tasks = [f"t{i}" for i in range(3)]
        sets = {
            t: sorted({rng.randbelow(total) for _ in range(rng.randbelow(30) + 1)})
            for t in tasks
        }
        part = decompose_subsets(sets, total)
        assert_partition_matches_oracle(part, sets, total)


def test_decompose_out_of_range():
    with pytest.raises(IndexOutOfRange):
        decompose_subsets({"t": [7]}, 4)


def test_subset_of_is_total(two_task_fixture):
    fx = two_task_fixture
    from neuronlock.selector import compute_importance, select_all

    sel = select_all(compute_importance(fx.traces()))
    part = decompose_subsets(sel, fx.model.n_neurons)
    f = part.subset_of()
    assert len(f) == fx.model.n_neurons
    assert all(sid >= 0 for sid in f)


# -- neuron-level policy construction --------------------------------------------------


def test_build_policies_single_owner_collapses():
    part = decompose_subsets({"health": [0]}, 2)
    health_policy = parse_policy("and(Institution=Hospital,Licence=True)")
    pols = build_policies(part, {"health": health_policy})
    sub = next(s for s in part.subsets if s.owners == frozenset({"health"}))
    assert pols[sub.subset_id] == health_policy  # the AND tree itself


def test_build_policies_overlap_is_or():
    part = decompose_subsets({"health": [0], "code": [0, 1]}, 3)
    pols = build_policies(
        part,
        {"health": parse_policy("and(Institution=Hospital,Licence=True)"),
         "code": parse_policy("Team=Dev")},
    )
    shared = next(s for s in part.subsets if s.owners == frozenset({"health", "code"}))
    node = pols[shared.subset_id]
    assert node.kind == "or"
    # owners sorted: code policy first, health second
    assert node.children[0].attribute == "Team=Dev"
    assert node.children[1].kind == "and"


def test_build_policies_common_is_or_over_all():
    part = decompose_subsets({"a": [0], "b": [1], "c": [2]}, 4)
    pols = build_policies(
        part, {t: parse_policy(f"Task={t}") for t in ("a", "b", "c")}
    )
    common = next(s for s in part.subsets if s.is_common)
    node = pols[common.subset_id]
    assert node.kind == "or" and len(node.children) == 3


def test_build_policies_missing_task():
    part = decompose_subsets({"a": [0], "b": [1]}, 2)
    with pytest.raises(MissingTaskPolicy):
        build_policies(part, {"a": parse_policy("A=1")})


@settings(max_examples=30, deadline=None)
@given(data=st.data())
def test_decompose_property(data):
    total = data.draw(st.integers(4, 48))
    n_tasks = data.draw(st.integers(1, 4))
    sets = {}
    for i in range(n_tasks):
        size = data.draw(st.integers(0, total))
        sets[f"t{i}"] = data.draw(
            st.lists(st.integers(0, total - 1), max_size=size, unique=True)
        )
    part = decompose_subsets(sets, total)
    assert_partition_matches_oracle(part, sets, total)
