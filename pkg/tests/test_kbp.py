"""Decision tables and their synthesis from knowledge conditions."""

import pytest

import kbpforge as kf
from kbpforge.kbp import (
    NOOP,
    action_value,
    as_table,
    condition_report,
    decide,
    kbp_by_name,
    render_action,
)

from _brute import observation_sets


def _params(**kw):
    base = dict(exchange="floodset", failure_model="crash", n=3, t=1)
    base.update(kw)
    return kf.InstanceParams(**base)


# ---------------------------------------------------------------------------
# Action codes


def test_action_code_conventions():
    assert NOOP == 0
    assert decide(0) == 1 and decide(1) == 2
    assert action_value(NOOP) is None
    assert action_value(decide(1)) == 1
    assert render_action(NOOP) == "noop"
    assert render_action(decide(0)) == "decide 0"


def test_kbp_by_name():
    assert kbp_by_name("sba") is kf.SBA
    assert kbp_by_name("eba") is kf.EBA0
    assert kbp_by_name("eba0") is kf.EBA0
    with pytest.raises(kf.KbpError):
        kbp_by_name("zba")


# ---------------------------------------------------------------------------
# Golden synthesis: floodset n=3 t=1, simultaneous agreement conditions.
# Everyone decides at time 2, on the seen-set alone: {0}->0, {1}->1,
# {0,1}->0 (lowest common-belief vote wins).


def test_golden_floodset_n3t1():
    res = kf.synthesize(_params(), kf.SBA)
    tab = res.table
    assert len(tab.entries) == 24
    expected = {}
    for agent in range(3):
        expected[(agent, 2, (0b01,))] = decide(0)
        expected[(agent, 2, (0b10,))] = decide(1)
        expected[(agent, 2, (0b11,))] = decide(0)
    assert tab.decide_entries() == expected
    assert tab.decide_times() == {2}
    assert tab.origin == "synth:sba"


def test_synthesis_is_deterministic():
    p = _params(t=2)
    a = kf.synthesize(p, kf.SBA).table
    b = kf.synthesize(p, kf.SBA).table
    assert a.entries == b.entries
    assert a.to_text() == b.to_text()


def test_synthesis_result_carries_matching_system():
    res = kf.synthesize(_params(), kf.SBA)
    assert res.system.params == res.table.params
    assert res.system.num_layers == _params().horizon + 1


def test_table_domain_is_undecided_reachable_observations():
    # domain = observations reachable while still undecided; compare the
    # full-history reference enumeration restricted to eligibility
    p = _params()
    res = kf.synthesize(p, kf.SBA)
    reachable = observation_sets(p)
    domain = {(t, a, obs) for (a, t, obs) in res.table.entries}
    assert domain <= reachable
    # before anyone can have decided, the domain covers eligibility exactly
    assert {(t, a, o) for (t, a, o) in domain if t == 0} == {
        (t, a, o) for (t, a, o) in reachable if t == 0
    }


def test_eba_conditions_on_tracking_exchange():
    p = _params(exchange="emin", n=2, t=1)
    tab = kf.synthesize(p, kf.EBA0).table
    de = tab.decide_entries()
    assert len(de) == 6
    for agent in range(2):
        # initial 0 -> decide 0 immediately
        assert de[(agent, 0, (0, 0, 2, 2))] == decide(0)
        # a decide-0 message arrived -> decide 0
        assert de[(agent, 1, (1, 0, 0, 2))] == decide(0)
        # time t+1, nothing heard -> decide 1
        assert de[(agent, 2, (1, 0, 2, 2))] == decide(1)


def test_eba_conditions_need_tracking_exchange():
    with pytest.raises(kf.KbpError):
        kf.synthesize(_params(), kf.EBA0)


def test_sba_conditions_on_tracking_exchange_never_fire():
    # allowed pairing, but a decide-message-only exchange never attains
    # common belief in a vote, so the table has no decide entries
    tab = kf.synthesize(_params(exchange="emin", n=2, t=1), kf.SBA).table
    assert tab.decide_entries() == {}


# ---------------------------------------------------------------------------
# Lookup semantics


def test_lookup_outside_domain_is_hard_error():
    tab = kf.synthesize(_params(), kf.SBA).table
    with pytest.raises(kf.TableDomainError):
        tab.lookup(0, 2, (0,))  # empty seen set is unreachable
    with pytest.raises(kf.TableDomainError):
        tab.lookup(0, 3, (1,))  # past the last undecided layer


def test_noop_table_is_total():
    tab = kf.noop_table(_params())
    assert tab.default_noop
    assert tab.lookup(0, 99, (12345,)) == NOOP
    assert tab.decide_entries() == {}


def test_same_behavior_ignores_origin():
    p = _params()
    a = kf.synthesize(p, kf.SBA).table
    b = kf.DecisionTable(params=p, origin="elsewhere", entries=dict(a.entries))
    assert a.same_behavior(b)
    c = kf.noop_table(p)
    assert not a.same_behavior(c)
    assert c.same_behavior(kf.DecisionTable(params=p, origin="x", entries={}))


def test_same_behavior_requires_same_instance():
    a = kf.synthesize(_params(), kf.SBA).table
    b = kf.synthesize(_params(t=2), kf.SBA).table
    assert not a.same_behavior(b)


# ---------------------------------------------------------------------------
# Serialization


def test_table_text_roundtrip_and_stability():
    tab = kf.synthesize(_params(exchange="count", t=2), kf.SBA).table
    text = tab.to_text()
    back = kf.DecisionTable.from_text(text)
    assert back.params == tab.params
    assert back.entries == tab.entries
    assert back.to_text() == text
    assert text.startswith("# decision table v1\n")


def test_noop_table_text_roundtrip():
    tab = kf.noop_table(_params())
    back = kf.DecisionTable.from_text(tab.to_text())
    assert back.default_noop and back.same_behavior(tab)


def test_from_text_rejects_malformed_input():
    with pytest.raises(ValueError):
        kf.DecisionTable.from_text("agent=0 time=0 seen0=1 -> noop\n")
    with pytest.raises(ValueError):
        kf.DecisionTable.from_text(
            "params: exchange=floodset failures=crash n=3 t=1 k=2 horizon=3\n"
            "agent=0 time=0 seen0=1 seen1=0 -> explode\n"
        )


# ---------------------------------------------------------------------------
# Baseline rules


def test_textbook_floodset_decides_at_t_plus_one():
    p = _params(t=2)
    textbook = as_table("floodset_textbook", p).table
    assert textbook.decide_times() == {3}
    synth = kf.synthesize(p, kf.SBA).table
    assert synth.decide_times() == {2}
    assert not textbook.same_behavior(synth)
    diffs = textbook.diff_entries(synth)
    assert len(diffs) == 18
    assert "agent=0 time=2 seen0=1 seen1=0: noop vs decide 0" in diffs[0]


def test_textbook_matches_synthesis_when_t_is_one():
    # with t=1, horizon t+1 == 2 is also when common belief first holds
    p = _params(t=1)
    assert as_table("floodset_textbook", p).table.same_behavior(
        kf.synthesize(p, kf.SBA).table
    )


def test_unknown_baseline():
    with pytest.raises(kf.KbpError):
        as_table("quorum", _params())


def test_baseline_rejects_mismatched_exchange():
    # the rule reads fields the floodset locals do not carry
    with pytest.raises(kf.KbpError):
        as_table("dm_concrete", _params())


def test_emin_baseline_reproduces_synthesis():
    p = _params(exchange="emin", n=2, t=1)
    assert as_table("emin_impl", p).table.same_behavior(
        kf.synthesize(p, kf.EBA0).table
    )


# ---------------------------------------------------------------------------
# Condition report


def test_condition_report_shapes():
    rep = condition_report(kf.synthesize(_params(), kf.SBA).table)
    assert "agent 0" in rep and "agent 2" in rep
    assert "time 2: decide 0 when seen0 = 1; decide 1 when seen0 = 0" in rep


def test_condition_report_count_exchange():
    p = _params(exchange="count", t=3)
    rep = condition_report(kf.synthesize(p, kf.SBA).table)
    assert "decide 0 when (seen0=1 seen1=0 count=1)" in rep
    assert "time 2: decide 0 when seen0 = 1" in rep


def test_condition_report_empty_for_never_deciding_tables():
    assert condition_report(kf.noop_table(_params())) == ""
