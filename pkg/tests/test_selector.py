import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from neuronlock.container import forward
from neuronlock.errors import (
    AllZeroScores,
    DuplicateTask,
    MismatchedNeuronCount,
    ThresholdUnreachable,
    UnknownTask,
)
from neuronlock.selector import (
    ActivationTrace,
    capacity_check,
    compute_importance,
    estimate_critical_set,
    read_trace,
    select_neurons,
    selection_report,
    select_all,
    task_specific_scores,
    write_trace,
)
from neuronlock.synth import task_fixture


def test_importance_division():
    imp = compute_importance([ActivationTrace("t", np.array([2.0, 0.0]), 4)])
    assert np.array_equal(imp.values[0], [0.5, 0.0])


def test_importance_identical_traces_identical_rows():
    sums = np.array([1.0, 2.0, 3.0])
    imp = compute_importance(
        [ActivationTrace("a", sums.copy(), 6), ActivationTrace("b", sums.copy(), 6)]
    )
    assert np.array_equal(imp.values[0], imp.values[1])


def test_importance_matches_hand_accumulation(two_task_fixture):
    """Trace sums from capture vs an independent per-sample accumulation."""
    fx = two_task_fixture
    rs = np.random.RandomState(99)
    x, _ = fx.sample("health", 32, rs)
    _, acts = forward(fx.model, x, capture=True)
    trace = ActivationTrace("health", np.abs(acts).sum(axis=0), 32)
    imp = compute_importance([trace])

    by_hand = np.zeros(fx.model.n_neurons)
    for row in x:
        _, a = forward(fx.model, row, capture=True)
        by_hand += np.abs(a)
    by_hand /= 32
    assert np.allclose(imp.values[0], by_hand, atol=1e-6)


def test_importance_errors():
    with pytest.raises(DuplicateTask):
        compute_importance(
            [ActivationTrace("t", np.ones(2), 1), ActivationTrace("t", np.ones(2), 1)]
        )
    with pytest.raises(MismatchedNeuronCount):
        compute_importance(
            [ActivationTrace("a", np.ones(2), 1), ActivationTrace("b", np.ones(3), 1)]
        )


def _imp(tasks_values):
    from neuronlock.selector import ImportanceMatrix

    tasks = list(tasks_values)
    return ImportanceMatrix(tasks, np.array([tasks_values[t] for t in tasks], float))


def test_scores_lambda_zero_is_importance():
    imp = _imp({"a": [0.3, 0.7], "b": [0.9, 0.1]})
    assert np.array_equal(task_specific_scores(imp, "a", 0.0), [0.3, 0.7])


def test_scores_hand_arithmetic():
    imp = _imp({"a": [0.8], "b": [0.6]})
    assert task_specific_scores(imp, "a", 0.5)[0] == pytest.approx(0.8 - 0.5 * 0.6)
    imp2 = _imp({"a": [0.1], "b": [0.9]})
    assert task_specific_scores(imp2, "a", 1.0)[0] == pytest.approx(-0.8)


def test_scores_single_task_max_is_zero():
    imp = _imp({"only": [0.4, 0.2]})
    assert np.array_equal(task_specific_scores(imp, "only", 2.0), [0.4, 0.2])


def test_scores_unknown_task():
    with pytest.raises(UnknownTask):
        task_specific_scores(_imp({"a": [1.0]}), "zzz", 0.5)


def test_select_greedy_stop():
    # normalized (0.5, 0.3, 0.2), tau = 0.6: takes 0.5, then 0.5+0.3 >= 0.6 stops
    assert select_neurons(np.array([0.5, 0.3, 0.2]), 0.6) == [0]


def test_select_tau_near_one_tie_cluster():
    assert select_neurons(np.array([0.5, 0.5]), 0.999) == [0]


def test_select_tie_break_ascending_index():
    picked = select_neurons(np.array([0.2, 0.5, 0.5, 0.2]), 0.51)
    assert picked == [1]  # 0.5 tie: index 1 before 2; stop when 0.5+0.5 >= 0.51*1.4... normalized
    # equal scores everywhere: selection order must be 0, 1, 2, ...
    picked = select_neurons(np.ones(8), 0.4)
    assert picked == [0, 1, 2]


def test_select_negative_shift():
    # shift by min: scores (-1, 0, 1) -> shifted (0, 1, 2), normalized (0, 1/3, 2/3)
    picked = select_neurons(np.array([-1.0, 0.0, 1.0]), 0.7)
    assert picked == [2]  # 2/3 < 0.7, then 2/3 + 1/3 >= 0.7 stops


def test_select_all_zero_scores():
    with pytest.raises(AllZeroScores):
        select_neurons(np.zeros(4), 0.5)
    with pytest.raises(AllZeroScores):
        select_neurons(np.full(4, -2.0), 0.5)  # all equal after shift -> zero mass


def test_select_tau_domain():
    with pytest.raises(ValueError):
        select_neurons(np.ones(2), 0.0)
    with pytest.raises(ValueError):
        select_neurons(np.ones(2), 1.0)


@settings(max_examples=60, deadline=None)
@given(
    scores=st.lists(st.floats(-5, 5, allow_nan=False), min_size=1, max_size=24),
    tau=st.floats(0.05, 0.95),
)
def test_select_greedy_stop_exactness(scores, tau):
    scores = np.asarray(scores)
    try:
        picked = select_neurons(scores, tau)
    except AllZeroScores:
        return
    lo = min(scores.min(), 0.0)
    shifted = scores - lo
    norm = shifted / shifted.sum()
    order = np.argsort(-norm, kind="stable")
    cum = float(norm[picked].sum()) if picked else 0.0
    assert cum < tau
    if len(picked) < len(scores):
        nxt = order[len(picked)]
        assert cum + norm[nxt] >= tau  # adding the next-ranked neuron violates
    assert picked == [int(i) for i in order[: len(picked)]]  # determinism


@settings(max_examples=40, deadline=None)
@given(
    own=st.lists(st.floats(0, 1), min_size=3, max_size=10),
    other=st.lists(st.floats(0, 1), min_size=3, max_size=10),
    lam1=st.floats(0, 2),
    lam2=st.floats(0, 2),
)
def test_score_monotonic_in_lambda(own, other, lam1, lam2):
    n = min(len(own), len(other))
    imp = _imp({"a": own[:n], "b": other[:n]})
    lo, hi = sorted([lam1, lam2])
    assert np.all(
        task_specific_scores(imp, "a", hi) <= task_specific_scores(imp, "a", lo) + 1e-12
    )


def test_symmetry_equal_traces():
    sums = np.array([3.0, 1.0, 2.0, 4.0])
    imp = compute_importance(
        [ActivationTrace("a", sums.copy(), 2), ActivationTrace("b", sums.copy(), 2)]
    )
    sel = select_all(imp, lam=0.0, tau=0.4)
    assert sel.sets["a"] == sel.sets["b"]


# -- critical sets ---------------------------------------------------------------


def _exhaustive_prefix_oracle(model, evaluate, delta, importance):
    order = np.argsort(-np.asarray(importance), kind="stable")
    n = model.n_neurons
    for k in range(n + 1):
        mask = np.ones(n, bool)
        mask[order[:k]] = False
        if evaluate(model, mask) < delta:
            return [int(i) for i in order[:k]]
    return None


def test_critical_set_matches_bruteforce(two_task_fixture):
    fx = two_task_fixture
    imp = compute_importance(fx.traces())

    def eval_health(model, mask):
        return fx.evaluate(model, "health", n=256, prune_mask=mask)

    importance = imp.row("health")
    got = estimate_critical_set(fx.model, "health", eval_health, 0.4, importance, batch=4)
    want = _exhaustive_prefix_oracle(fx.model, eval_health, 0.4, importance)
    assert got == want


def test_critical_set_already_below_threshold(two_task_fixture):
    fx = two_task_fixture
    imp = compute_importance(fx.traces())
    got = estimate_critical_set(
        fx.model,
        "health",
        lambda m, mask: fx.evaluate(m, "health", n=128, prune_mask=mask),
        1.5,  # above any achievable accuracy
        imp.row("health"),
    )
    assert got == []


def test_critical_set_threshold_unreachable(two_task_fixture):
    fx = two_task_fixture
    imp = compute_importance(fx.traces())
    with pytest.raises(ThresholdUnreachable):
        estimate_critical_set(
            fx.model,
            "health",
            lambda m, mask: fx.evaluate(m, "health", n=128, prune_mask=mask),
            0.0,  # accuracy has a hard floor at 0
            imp.row("health"),
        )


def test_capacity_check():
    assert capacity_check([10, 20], 64) is True
    assert capacity_check([40, 30], 64) is False
    with pytest.raises(ValueError):
        capacity_check([-1], 4)


# -- trace file ----------------------------------------------------------------


def test_trace_roundtrip():
    tr = ActivationTrace("parity", np.linspace(0, 5, 9), 12)
    back = read_trace(write_trace(tr))
    assert back.task == tr.task
    assert back.count == tr.count
    assert np.array_equal(back.sums, tr.sums)


def test_selection_report_is_json(two_task_fixture):
    import json

    fx = two_task_fixture
    imp = compute_importance(fx.traces())
    sel = select_all(imp)
    doc = json.loads(selection_report(imp, sel))
    assert set(doc["tasks"]) == {"health", "code"}
    for t in doc["tasks"].values():
        assert t["cumulative_mass"] < sel.tau
