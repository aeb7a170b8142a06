"""Successor-generation kernels: compiled/python selection and bit-exact
agreement between the two implementations."""

import os
import subprocess
import sys

import numpy as np
import pytest

import kbpforge as kf
from kbpforge import _kernels_py
from kbpforge import kernels
from kbpforge.exchanges import EXCHANGE_IDS
from kbpforge.failures import initial_envs


def test_python_kernel_always_available():
    assert _kernels_py.IMPLEMENTATION == "python"
    assert kernels._kernel("python") is _kernels_py


def test_active_implementation_is_known():
    assert kf.active_implementation() in ("compiled", "python")


def test_unknown_implementation_rejected():
    with pytest.raises(ValueError):
        kernels._kernel("fortran")


def test_pure_env_var_forces_python_fallback():
    code = (
        "import kbpforge; print(kbpforge.active_implementation())"
    )
    env = dict(os.environ, KBPFORGE_PURE="1")
    out = subprocess.run(
        [sys.executable, "-c", code], env=env, capture_output=True, text=True
    )
    assert out.returncode == 0
    assert out.stdout.strip() == "python"


# ---------------------------------------------------------------------------
# Structural properties of expand_layer (either implementation)


def _layer_inputs(exchange, model, n, t, k=2):
    p = kf.InstanceParams(exchange=exchange, failure_model=model, n=n, t=t, k=k)
    table = kf.noop_table(p) if p.info.transmits_decisions else None
    s = kf.build_system(p, table=table) if table else kf.build_system(p)
    return p, s


def test_expand_layer_output_is_sorted_and_deduplicated():
    p, s = _layer_inputs("count", "crash", 3, 2)
    cache = kernels.OutcomeCache(p.failure_model, p.n, p.t)
    nxt, edges = kernels.expand_layer(
        p.exchange, p.n, p.k, 1, s.layers[0], None, cache, impl="python"
    )
    assert np.array_equal(nxt, np.unique(nxt, axis=0))
    assert np.array_equal(nxt, s.layers[1])
    assert np.array_equal(edges, s.edges[0])
    assert edges[:, 0].max() < s.layer_size(0)
    assert edges[:, 1].max() < nxt.shape[0]


def test_expand_layer_splits_oversized_groups(monkeypatch):
    # A tiny chunk cap forces the within-group split; the result must be
    # identical to the unsplit expansion (one env group here would
    # otherwise produce all its candidates in a single allocation).
    p, s = _layer_inputs("count", "somissions", 3, 2)
    cache = kernels.OutcomeCache(p.failure_model, p.n, p.t)
    args = (p.exchange, p.n, p.k, 2, s.layers[1], None)
    ref_rows, ref_edges = kernels.expand_layer(*args, cache, impl="python")
    monkeypatch.setattr(kernels, "_CHUNK_ROWS", 8)
    rows, edges = kernels.expand_layer(*args, cache, impl="python")
    assert np.array_equal(rows, ref_rows)
    assert np.array_equal(edges, ref_edges)


def test_outcome_cache_reuses_env_entries():
    cache = kernels.OutcomeCache("crash", 3, 1)
    env = initial_envs("crash", 3, 1)[0]
    row = np.asarray(env.to_row(), dtype=np.int32)
    a1, e1 = cache.get(row)
    a2, e2 = cache.get(row)
    assert a1 is a2 and e1 is e2
    assert a1.dtype == np.int32 and e1.dtype == np.int32
    assert a1.shape[0] == e1.shape[0] > 0


# ---------------------------------------------------------------------------
# Differential: compiled vs python, over every exchange and failure model

compiled = pytest.importorskip(
    "kbpforge._kernels", reason="compiled kernel not built"
)


def test_compiled_kernel_reports_itself():
    assert compiled.IMPLEMENTATION == "compiled"


@pytest.mark.parametrize(
    "exchange,model,n,t",
    [
        ("floodset", "crash", 3, 2),
        ("floodset", "somissions", 3, 1),
        ("count", "crash", 3, 2),
        ("count", "somissions", 2, 2),
        ("diff", "crash", 3, 1),
        ("diff", "somissions", 2, 1),
        ("dworkmoses", "crash", 3, 2),
        ("dworkmoses", "somissions", 3, 1),
        ("emin", "crash", 2, 1),
        ("ebasic", "crash", 2, 2),
        ("ebasic", "somissions", 2, 1),
    ],
)
def test_expand_group_matches_python(exchange, model, n, t):
    p, s = _layer_inputs(exchange, model, n, t)
    cache = kernels.OutcomeCache(p.failure_model, p.n, p.t)
    exc_id = EXCHANGE_IDS[exchange]
    table = (
        kf.noop_table(p) if p.info.transmits_decisions else None
    )
    for m in range(s.num_layers - 1):
        rows = s.layers[m]
        actions = None
        if table is not None:
            actions = table.resolve_actions(m, rows)
        envs = np.unique(rows[:, n : 2 * n], axis=0)
        for env in envs:
            idx = np.flatnonzero((rows[:, n : 2 * n] == env).all(axis=1)).astype(
                np.int32
            )
            recv_arr, env2_arr = cache.get(env)
            ca, sa = compiled.expand_group(
                exc_id, n, p.k, m + 1, rows, actions, idx, recv_arr, env2_arr
            )
            cb, sb = _kernels_py.expand_group(
                exc_id, n, p.k, m + 1, rows, actions, idx, recv_arr, env2_arr
            )
            assert np.array_equal(np.asarray(ca), np.asarray(cb))
            assert np.array_equal(np.asarray(sa), np.asarray(sb))


def test_whole_system_identical_across_kernels():
    p = kf.InstanceParams(exchange="count", failure_model="crash", n=3, t=2)
    sc = kf.build_system(p, impl="compiled")
    sp = kf.build_system(p, impl="python")
    for m in range(sc.num_layers):
        assert np.array_equal(sc.layers[m], sp.layers[m])
        if m < sc.num_layers - 1:
            assert np.array_equal(sc.edges[m], sp.edges[m])


def test_synthesis_identical_across_kernels():
    p = kf.InstanceParams(exchange="emin", failure_model="somissions", n=2, t=1)
    a = kf.synthesize(p, kf.EBA0, impl="compiled").table
    b = kf.synthesize(p, kf.EBA0, impl="python").table
    assert a.entries == b.entries


def test_compiled_kernel_validates_row_width():
    with pytest.raises(ValueError):
        compiled.expand_group(
            0,
            3,
            2,
            1,
            np.zeros((1, 5), dtype=np.int32),
            None,
            np.zeros(1, dtype=np.int32),
            np.zeros((1, 3), dtype=np.int32),
            np.zeros((1, 3), dtype=np.int32),
        )
