"""Layered-system construction: parameters, state encoding, layer growth,
edges, and indistinguishability classes."""

import numpy as np
import pytest

import kbpforge as kf
from kbpforge import exchanges as exc
from kbpforge.failures import ACTIVE
from kbpforge.model import GlobalState, SystemBuilder, initial_states, nonfaulty_set

from _brute import layer_rows, reachable_configs


def _params(**kw):
    base = dict(exchange="floodset", failure_model="crash", n=3, t=1)
    base.update(kw)
    return kf.InstanceParams(**base)


# ---------------------------------------------------------------------------
# Parameter validation


def test_default_horizon_is_t_plus_two():
    assert _params(t=1).horizon == 3
    assert _params(t=3).horizon == 5


def test_horizon_below_minimum_rejected():
    with pytest.raises(kf.ParameterError):
        _params(t=2, horizon=3)


@pytest.mark.parametrize(
    "kw",
    [
        dict(n=0),
        dict(n=17),
        dict(t=-1),
        dict(t=4),
        dict(k=1),
        dict(exchange="dworkmoses", k=3),  # binary-vote exchange
        dict(exchange="nope"),
        dict(failure_model="byzantine"),
    ],
)
def test_bad_parameters_rejected(kw):
    with pytest.raises((kf.ParameterError, ValueError)):
        _params(**kw)


def test_row_width_accounts_for_votes_env_locals():
    p = _params(exchange="diff", n=4)
    assert p.row_width == 4 + 4 + 4 * 3


# ---------------------------------------------------------------------------
# Initial layer


def test_initial_state_counts():
    assert len(initial_states(_params(n=2))) == 4
    assert len(initial_states(_params(n=5, t=1))) == 32
    assert len(initial_states(_params(n=1, t=0))) == 2


def test_crash_initial_envs_all_active():
    for s in initial_states(_params(n=3, t=2)):
        assert all(e == ACTIVE for e in s.failure.status)


def test_somissions_initial_envs_enumerate_faulty_sets():
    ss = initial_states(_params(failure_model="somissions", n=3, t=1))
    faulty = {s.failure.faulty for s in ss}
    assert faulty == {frozenset(), frozenset({0}), frozenset({1}), frozenset({2})}
    assert len(ss) == 8 * 4


def test_global_state_from_row_slices():
    p = _params(exchange="count", n=3)
    s = kf.build_system(p)
    row = s.layers[1][7]
    g = GlobalState.from_row(p, 1, row)
    assert g.votes == tuple(int(x) for x in row[:3])
    assert g.failure.to_row() == tuple(int(x) for x in row[3:6])
    flat = [x for i in range(3) for x in exc.local_to_row("count", g.locals[i])]
    assert flat == [int(x) for x in row[6:]]


def test_nonfaulty_set_matches_env():
    p = _params(n=3, t=2)
    s = kf.build_system(p)
    st = s.state(s.num_layers - 1, 0)
    assert nonfaulty_set(st) == st.failure.nonfaulty()


# ---------------------------------------------------------------------------
# Frozen construction: floodset n=3 t=1 crash


def test_floodset_n3t1_layer_sizes_and_edges():
    s = kf.build_system(_params())
    assert [s.layer_size(m) for m in range(s.num_layers)] == [8, 50, 62, 62]
    assert s.total_states() == 182
    assert s.total_edges() == 210
    assert s.peak_layer() == 62


def test_layer_rows_are_sorted_and_unique():
    s = kf.build_system(_params(exchange="count", t=2))
    for m in range(s.num_layers):
        rows = s.layers[m]
        assert rows.dtype == np.int32
        key = [tuple(r) for r in rows]
        assert key == sorted(set(key))


def test_validate_accepts_built_system():
    kf.build_system(_params(exchange="diff", t=1)).validate()


def test_predecessors_match_edges():
    s = kf.build_system(_params(t=2))
    for m in range(1, s.num_layers):
        sorted_e, offsets = s.predecessors(m)
        e = s.edges[m - 1]
        for child in range(s.layer_size(m)):
            preds = set(sorted_e[offsets[child] : offsets[child + 1], 0].tolist())
            assert preds == set(e[e[:, 1] == child, 0].tolist())


def test_classes_partition_by_observation():
    s = kf.build_system(_params(exchange="count", t=1))
    for m in range(s.num_layers):
        for i in range(3):
            labels, count = s.classes(m, i)
            obs = s.obs_matrix(m, i)
            _, expect = np.unique(obs, axis=0, return_inverse=True)
            pairing = {}
            for a, b in zip(labels.tolist(), expect.tolist()):
                assert pairing.setdefault(a, b) == b
            assert len(pairing) == count


# ---------------------------------------------------------------------------
# Differential against the reference construction


@pytest.mark.parametrize(
    "exchange,model,n,t",
    [
        ("floodset", "crash", 3, 1),
        ("floodset", "somissions", 3, 2),
        ("count", "crash", 3, 2),
        ("count", "somissions", 2, 2),
        ("diff", "crash", 3, 1),
        ("dworkmoses", "crash", 3, 2),
        ("dworkmoses", "somissions", 2, 1),
    ],
)
def test_layers_match_reference_construction(exchange, model, n, t):
    p = kf.InstanceParams(exchange=exchange, failure_model=model, n=n, t=t)
    s = kf.build_system(p)
    ref = layer_rows(p)
    assert s.num_layers == len(ref)
    for m in range(s.num_layers):
        ours = {tuple(int(x) for x in r) for r in s.layers[m]}
        assert ours == ref[m]


def test_tracking_layers_match_reference_construction():
    p = kf.InstanceParams(exchange="emin", failure_model="crash", n=2, t=1)
    table = kf.synthesize(p, kf.EBA0).table
    s = kf.build_system(p, table=table)
    ref = layer_rows(p, table=table)
    for m in range(s.num_layers):
        ours = {tuple(int(x) for x in r) for r in s.layers[m]}
        assert ours == ref[m]


# ---------------------------------------------------------------------------
# Builder-level stepping


def test_builder_steps_match_build_system():
    p = _params(t=1)
    b = SystemBuilder(p)
    while b.current_time < p.horizon:
        b.step(None)
    s1 = b.finish()
    s2 = kf.build_system(p)
    assert [tuple(map(tuple, s1.layers[m])) for m in range(s1.num_layers)] == [
        tuple(map(tuple, s2.layers[m])) for m in range(s2.num_layers)
    ]


def test_eligible_masks_crash_vs_somissions():
    sc = kf.build_system(_params(t=1))
    m = sc.num_layers - 1
    assert np.array_equal(sc.eligible_masks(m), sc.env(m) == ACTIVE)
    so = kf.build_system(_params(failure_model="somissions", t=1))
    assert so.eligible_masks(1).all()
