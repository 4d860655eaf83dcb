import json
from pathlib import Path

import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from polyspec.planner import (
    AcceptanceProfile,
    CostProfile,
    InsertionQuery,
    PlanError,
    estimate_beta,
    insertion_gain,
    load_profiles,
    optimize_chain,
    plan_document,
    predicted_time,
)

PROFILES = Path(__file__).resolve().parents[1] / "profiles"


def profile(T, L, beta=None):
    return CostProfile(T, beta), AcceptanceProfile(L)


def test_predicted_time_two_model():
    costs, acc = profile({"a": 10.0, "b": 1.0}, {("a", "b"): 4.0}, beta=5.0)
    assert predicted_time(costs, acc, 120, ("a", "b")) == pytest.approx(450.0)


def test_predicted_time_unit_case():
    costs, acc = profile({"a": 1.0, "b": 1.0, "c": 1.0}, {("a", "b"): 1.0, ("b", "c"): 1.0}, beta=1.0)
    assert predicted_time(costs, acc, 1, ("a", "b", "c")) == pytest.approx(3.0)


def test_predicted_time_compliant_inputs():
    costs, acc = profile({"t": 22.0, "q": 7.0, "d": 4.0}, {("t", "q"): 6.26, ("q", "d"): 4.67})
    for beta in (1.0, 4.0, 6.0):
        got = predicted_time(costs, acc, 1, ("t", "q", "d"), beta=beta)
        assert got == pytest.approx(22 / 6.26 + 7 / 4.67 + beta * 4 / 4.67)


def test_predicted_time_errors():
    costs, acc = profile({"a": 1.0}, {}, beta=1.0)
    with pytest.raises(PlanError):
        predicted_time(costs, acc, 1, ("a",))
    with pytest.raises(PlanError):
        predicted_time(costs, acc, 1, ("a", "b"))
    with pytest.raises(PlanError):
        CostProfile({"a": 0.0})
    with pytest.raises(PlanError):
        AcceptanceProfile({("a", "b"): 0.5})


# reference insertion rows; beta is not part of condition 1
TABLE_ROWS = [
    ("compliant", 22.0, 7.00, 4.0, 4.34, 6.26, 4.67, 0.318, 0.330, "insert"),
    ("non-compliant", 22.0, 17.61, 4.0, 4.34, 3.83, 3.77, 0.800, -0.116, "reject"),
    ("cs-drafting", 47.52, 19.16, 12.42, 2.28, 3.50, 3.02, 0.403, 0.461, "insert"),
]


@pytest.mark.parametrize("row", TABLE_ROWS, ids=[r[0] for r in TABLE_ROWS])
def test_insertion_rows(row):
    _, Ti, Tn, Tx, Li, Lin, Ln, ratio, threshold, decision = row
    rep = insertion_gain(InsertionQuery(Ti, Tn, Tx, Li, Lin, Ln, 4.0))
    assert rep.condition_1 == pytest.approx(ratio, abs=0.005)
    assert rep.threshold_1 == pytest.approx(threshold, abs=0.005)
    assert rep.decision == decision


def test_non_compliant_threshold_magnitude():
    rep = insertion_gain(InsertionQuery(22.0, 17.61, 4.0, 4.34, 3.83, 3.77, 4.0))
    assert rep.threshold_1 < 0
    assert abs(rep.threshold_1) == pytest.approx(0.117, abs=0.005)


def test_report_margins_match_decision():
    rep = insertion_gain(InsertionQuery(22.0, 7.0, 4.0, 4.34, 6.26, 4.67, 4.0))
    assert rep.margin_1 < 0
    assert rep.insert == (rep.margin_1 < 0 or rep.margin_2 < 0)
    with pytest.raises(PlanError):
        InsertionQuery(0.0, 1, 1, 1, 1, 1, 1)


def test_strict_inequality_at_equality():
    # c1 == t1 and c2 == t2 exactly: no strict gain, reject
    rep = insertion_gain(InsertionQuery(1.0, 0.5, 1.0, 1.0, 2.0, 1.0, 0.25))
    assert rep.condition_1 == rep.threshold_1 == 0.5
    assert rep.condition_2 == 0.5 and rep.threshold_2 == 0.0
    assert rep.decision == "reject"


pos = st.floats(0.1, 100.0)
lens = st.floats(1.0, 12.0)


@settings(max_examples=300, deadline=None)
@given(Ti=pos, Tn=pos, Tx=pos, Li=lens, Lin=lens, Ln=lens, beta=st.floats(0.5, 8.0))
def test_decision_consistency(Ti, Tn, Tx, Li, Lin, Ln, beta):
    rep = insertion_gain(InsertionQuery(Ti, Tn, Tx, Li, Lin, Ln, beta))
    assume(rep.premises_hold and rep.insert)
    costs, acc = profile({"t": Ti, "n": Tn, "d": Tx}, {("t", "d"): Li, ("t", "n"): Lin, ("n", "d"): Ln}, beta)
    two = predicted_time(costs, acc, 1, ("t", "d"))
    three = predicted_time(costs, acc, 1, ("t", "n", "d"))
    assert three < two * (1 + 1e-12)


def test_conditions_are_not_sufficient_without_premises():
    # condition 1 holds, but a poor new->drafter acceptance makes the 3-chain slower
    rep = insertion_gain(InsertionQuery(22.0, 1.0, 4.0, 4.0, 8.0, 1.0, 4.0))
    assert rep.insert and not rep.premises_hold
    costs, acc = profile({"t": 22.0, "n": 1.0, "d": 4.0}, {("t", "d"): 4.0, ("t", "n"): 8.0, ("n", "d"): 1.0}, 4.0)
    assert predicted_time(costs, acc, 1, ("t", "n", "d")) > predicted_time(costs, acc, 1, ("t", "d"))


@settings(max_examples=200, deadline=None)
@given(Ti=pos, Tn=pos, Tx=pos, Li=lens, Lin=lens, Ln=lens)
def test_condition1_threshold_nonpositive(Ti, Tn, Tx, Li, Lin, Ln):
    assume(Lin <= Li)
    rep = insertion_gain(InsertionQuery(Ti, Tn, Tx, Li, Lin, Ln, 4.0))
    assert rep.threshold_1 <= 0
    assert not rep.condition_1 < rep.threshold_1


@settings(max_examples=200, deadline=None)
@given(
    T=st.lists(pos, min_size=3, max_size=3),
    L=st.lists(lens, min_size=2, max_size=2),
    beta=st.floats(0.5, 8.0),
    idx=st.integers(0, 2),
    bump=st.floats(1.01, 3.0),
)
def test_predicted_time_monotone(T, L, beta, idx, bump):
    names = ("a", "b", "c")

    def run(T, L, beta):
        costs, acc = profile(dict(zip(names, T)), {("a", "b"): L[0], ("b", "c"): L[1]}, beta)
        return predicted_time(costs, acc, 100, names)

    base = run(T, L, beta)
    T2 = list(T)
    T2[idx] *= bump
    assert run(T2, L, beta) > base
    assert run(T, L, beta * bump) > base
    if idx < 2:
        L2 = list(L)
        L2[idx] *= bump
        assert run(T, L2, beta) < base


class FakeTrace:
    def __init__(self, F, blocks, N):
        self.F, self.block_lengths, self.N = F, blocks, N


def test_estimate_beta_examples():
    assert estimate_beta(FakeTrace([2, 8], [[5, 5]], 10)) == pytest.approx(4.0)
    assert estimate_beta(FakeTrace([1, 4], [[3]], 3)) == pytest.approx(4.0)
    with pytest.raises(PlanError):
        estimate_beta(FakeTrace([5], [], 5))


def test_optimize_prefers_two_chain():
    costs, acc = profile({"t": 10.0, "d": 1.0, "x": 9.0}, {("t", "d"): 4.0, ("t", "x"): 4.1, ("x", "d"): 2.0}, 4.0)
    plan = optimize_chain({"t", "d", "x"}, costs, acc, 1, "t")
    assert plan.chain == ("t", "d")
    assert plan.predicted_T == pytest.approx(10 / 4 + 4 * 1 / 4)


def test_optimize_single_candidate():
    costs, acc = profile({"t": 22.0}, {})
    plan = optimize_chain({"t"}, costs, acc, 50, "t")
    assert plan.chain == ("t",)
    assert plan.predicted_T == pytest.approx(50 * 22.0)
    assert plan.predicted_speedup == pytest.approx(1.0)


def test_optimize_compliant_three_chain_beats_two_chain():
    doc = json.loads((PROFILES / "compliant.json").read_text())
    costs, acc = load_profiles(doc)
    plan = optimize_chain(costs.T.keys(), costs, acc, 1, "target")
    assert plan.scores["target->new->drafter"] < plan.scores["target->drafter"]
    assert plan.predicted_T == min(plan.scores.values())
    # reversed orderings lack profile entries
    assert "target->drafter->new" in plan.skipped


def test_optimize_missing_target_entry():
    costs, acc = profile({"t": 1.0, "d": 1.0}, {}, 1.0)
    with pytest.raises(PlanError):
        optimize_chain({"t", "d"}, costs, acc, 1, "t")


def test_optimize_tie_prefers_fewer_models():
    # t->d: 8/2 + 1*2/2 = 5; t->n->d: 8/4 + 1/1 + 1*2/1 = 5; t->n: 8/4 + 20*1/4 = 7; t alone: 8
    costs, acc = profile(
        {"t": 8.0, "n": 1.0, "d": 2.0}, {("t", "d"): 2.0, ("t", "n"): 4.0, ("n", "d"): 1.0}, {"d": 1.0, "n": 20.0}
    )
    plan = optimize_chain({"t", "n", "d"}, costs, acc, 1, "t")
    assert plan.scores["t->d"] == plan.scores["t->n->d"] == 5.0
    assert plan.chain == ("t", "d")


@pytest.mark.parametrize("name,decision", [("compliant", "insert"), ("noncompliant", "reject"), ("csdrafting", "insert")])
def test_plan_document_profiles(name, decision):
    report = plan_document(json.loads((PROFILES / f"{name}.json").read_text()))
    assert report["decision"] == decision
    assert set(report) >= {"condition_1", "condition_2", "chain_2", "chain_3", "optimal_chain", "predicted_T"}
    if decision == "insert":
        assert report["chain_3"]["predicted_T"] < report["chain_2"]["predicted_T"]


def test_load_profiles_errors():
    with pytest.raises(PlanError):
        load_profiles({"costs_ms": {"a": 1}})
    with pytest.raises(PlanError):
        load_profiles({"costs_ms": {"a": 1}, "acceptance": {"ab": 2}})
    with pytest.raises(PlanError):
        plan_document({"costs_ms": {"a": 1}, "acceptance": {}})
