"""Failure-model enumeration: frozen outcome counts, invariants, and a
differential against the plain-Python reference enumeration."""

import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import _brute
from kbpforge.failures import (
    ACTIVE,
    CRASH,
    CRASHED,
    CRASHING,
    SOMISSIONS,
    DeliveryMatrix,
    FailureEnv,
    initial_envs,
    is_failed_sender,
    round_outcomes,
)


def all_active(n: int, t: int) -> FailureEnv:
    return FailureEnv(model=CRASH, n=n, t=t, status=(ACTIVE,) * n)


# ---------------------------------------------------------------------------
# Frozen outcome counts


def test_crash_no_budget_single_full_outcome():
    outs = round_outcomes(all_active(2, 0))
    assert len(outs) == 1
    matrix, env2 = outs[0]
    assert env2 == all_active(2, 0)
    assert all(matrix.delivered(s, r) for s in range(2) for r in range(2))


def test_crash_n2_t1_all_active_has_five_distinct_outcomes():
    # no-crash, plus each agent crashing while reaching {self} or {self, other}
    assert len(round_outcomes(all_active(2, 1))) == 5


def test_somissions_single_faulty_agent_outcome_count():
    env = FailureEnv(model=SOMISSIONS, n=3, t=1, faulty=frozenset({2}))
    # agent 2 chooses a subset of the two other receivers; self always hears it
    assert len(round_outcomes(env)) == 4


def test_initial_envs_counts():
    assert len(initial_envs(CRASH, 3, 2)) == 1
    assert len(initial_envs(SOMISSIONS, 3, 1)) == 4  # {} and three singletons
    assert len(initial_envs(SOMISSIONS, 3, 3)) == 8


def test_is_failed_sender():
    env = all_active(3, 1)
    assert not any(is_failed_sender(env, a) for a in range(3))
    crashed = FailureEnv(model=CRASH, n=3, t=1, status=(CRASHED, ACTIVE, ACTIVE))
    assert is_failed_sender(crashed, 0)
    assert not is_failed_sender(crashed, 1)
    omit = FailureEnv(model=SOMISSIONS, n=3, t=1, faulty=frozenset({1}))
    assert is_failed_sender(omit, 1)
    assert not is_failed_sender(omit, 0)


# ---------------------------------------------------------------------------
# Structural invariants


def test_crashed_is_absorbing_and_silent():
    env = FailureEnv(model=CRASH, n=3, t=2, status=(CRASHED, ACTIVE, ACTIVE))
    for matrix, env2 in round_outcomes(env):
        assert env2.status[0] == CRASHED
        assert not any(matrix.delivered(0, r) for r in range(3))


def test_crashing_becomes_crashed_after_one_round():
    env = FailureEnv(model=CRASH, n=3, t=2, status=(CRASHING, ACTIVE, ACTIVE))
    for _, env2 in round_outcomes(env):
        assert env2.status[0] == CRASHED


def test_self_delivery_always_succeeds_for_live_senders():
    for matrix, env2 in round_outcomes(all_active(3, 3)):
        for a in range(3):
            if env2.status[a] != CRASHED:
                assert matrix.delivered(a, a)


def test_omissions_nonfaulty_rows_are_full_and_env_constant():
    env = FailureEnv(model=SOMISSIONS, n=3, t=2, faulty=frozenset({0, 2}))
    for matrix, env2 in round_outcomes(env):
        assert env2 == env
        assert all(matrix.delivered(1, r) for r in range(3))
        assert matrix.delivered(0, 0) and matrix.delivered(2, 2)


def test_budget_is_never_exceeded():
    env = all_active(3, 1)
    for _, env2 in round_outcomes(env):
        assert env2.budget_used <= 1
        for _, env3 in round_outcomes(env2):
            assert env3.budget_used <= 1


def test_reachable_env_count_is_finite_crash():
    seen = {all_active(2, 2)}
    frontier = list(seen)
    while frontier:
        env = frontier.pop()
        for _, env2 in round_outcomes(env):
            if env2 not in seen:
                seen.add(env2)
                frontier.append(env2)
    assert len(seen) <= 3**2


# ---------------------------------------------------------------------------
# Differential against the reference enumeration


def _as_pairs(outs, n):
    pairs = set()
    for matrix, env2 in outs:
        recv = tuple(
            sum(1 << s for s in range(n) if matrix.delivered(s, r))
            for r in range(n)
        )
        pairs.add((recv, env2.to_row()))
    return pairs


@settings(max_examples=60, deadline=None)
@given(
    n=st.integers(2, 4),
    t=st.integers(0, 4),
    data=st.data(),
)
def test_crash_outcomes_match_reference(n, t, data):
    t = min(t, n)
    status = tuple(
        data.draw(st.sampled_from([ACTIVE, CRASHING, CRASHED]), label=f"s{i}")
        for i in range(n)
    )
    if sum(1 for s in status if s != ACTIVE) > t:
        status = (ACTIVE,) * n
    env = FailureEnv(model=CRASH, n=n, t=t, status=status)
    mine = _as_pairs(round_outcomes(env), n)
    ref = _brute.round_outcomes("crash", t, status)
    assert mine == ref


@settings(max_examples=40, deadline=None)
@given(n=st.integers(2, 4), data=st.data())
def test_somissions_outcomes_match_reference(n, data):
    faulty = data.draw(
        st.frozensets(st.integers(0, n - 1), max_size=n), label="faulty"
    )
    t = len(faulty)
    env = FailureEnv(model=SOMISSIONS, n=n, t=t, faulty=faulty)
    mine = _as_pairs(round_outcomes(env), n)
    ref = _brute.round_outcomes(
        "somissions", t, tuple(1 if i in faulty else 0 for i in range(n))
    )
    assert mine == ref


# ---------------------------------------------------------------------------
# Validation errors


def test_env_validation():
    with pytest.raises(ValueError):
        FailureEnv(model="byzantine", n=2, t=1, status=(0, 0))
    with pytest.raises(ValueError):
        FailureEnv(model=CRASH, n=2, t=1, status=(0,))
    with pytest.raises(ValueError):
        FailureEnv(model=CRASH, n=2, t=0, status=(CRASHED, ACTIVE))
    with pytest.raises(ValueError):
        FailureEnv(model=SOMISSIONS, n=2, t=2, faulty=frozenset({5}))


def test_env_row_roundtrip():
    for env in initial_envs(SOMISSIONS, 4, 2):
        assert FailureEnv.from_row(SOMISSIONS, 2, env.to_row()) == env
    env = FailureEnv(model=CRASH, n=3, t=2, status=(CRASHING, ACTIVE, CRASHED))
    assert FailureEnv.from_row(CRASH, 2, env.to_row()) == env
