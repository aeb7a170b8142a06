"""Kernel selection and the layer-expansion driver.

The hot successor-generation loop has two interchangeable implementations:
a Cython extension (``kbpforge._kernels``) and a numpy fallback
(``kbpforge._kernels_py``).  The compiled one is preferred when importable;
set ``KBPFORGE_PURE=1`` to force the fallback.  This module wraps either
with environment grouping, failure-outcome caching, chunked deduplication,
and edge bookkeeping.
"""

from __future__ import annotations

import os

import numpy as np

from . import _kernels_py
from .exchanges import EXCHANGE_IDS
from .failures import round_outcomes_rows

try:
    from . import _kernels as _compiled
except ImportError:  # pragma: no cover - depends on build environment
    _compiled = None

_FORCE_PURE = os.environ.get("KBPFORGE_PURE", "") not in ("", "0")


def active_implementation() -> str:
    """Name of the kernel used by default: "compiled" or "python"."""
    if _compiled is not None and not _FORCE_PURE:
        return "compiled"
    return "python"


def _kernel(impl: str | None):
    name = impl or active_implementation()
    if name == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernel requested but not built")
        return _compiled
    if name == "python":
        return _kernels_py
    raise ValueError(f"unknown kernel implementation: {name!r}")


# Deduplicate accumulated candidates once they exceed this many rows.
_CHUNK_ROWS = 1 << 21


class OutcomeCache:
    """Per-environment failure outcomes as kernel-ready arrays.

    Outcome order is deterministic and depends only on (model, t, env row),
    which is what makes outcome *indices* a valid shared nondeterminism
    schedule across different exchanges and decision tables.
    """

    def __init__(self, model: str, n: int, t: int):
        self.model = model
        self.n = n
        self.t = t
        self._cache: dict[bytes, tuple[np.ndarray, np.ndarray]] = {}

    def get(self, env_row: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        key = env_row.tobytes()
        hit = self._cache.get(key)
        if hit is None:
            outs = round_outcomes_rows(self.model, self.t, tuple(int(x) for x in env_row))
            recv = np.array([o[0] for o in outs], dtype=np.int32)
            env2 = np.array([o[1] for o in outs], dtype=np.int32)
            hit = (recv, env2)
            self._cache[key] = hit
        return hit


def _row_keys(a: np.ndarray) -> np.ndarray:
    """1-D structured view so rows can be searchsorted lexicographically."""
    a = np.ascontiguousarray(a)
    return a.view([("", a.dtype)] * a.shape[1]).ravel()


def _locate_rows(table: np.ndarray, queries: np.ndarray) -> np.ndarray:
    """Indices of ``queries`` rows inside the lexicographically sorted
    ``table`` (every query must be present)."""
    pos = np.searchsorted(_row_keys(table), _row_keys(queries))
    return pos.astype(np.int32)


def expand_layer(
    exchange: str,
    n: int,
    k: int,
    time_next: int,
    rows: np.ndarray,
    actions: np.ndarray | None,
    cache: OutcomeCache,
    impl: str | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """All deduplicated successors of one layer plus the edge relation.

    Returns ``(next_rows, edges)`` where ``next_rows`` is lexicographically
    sorted (the canonical layer order) and ``edges`` is an (E, 2) array of
    (source index in ``rows``, destination index in ``next_rows``) pairs.
    """
    kern = _kernel(impl)
    exc_id = EXCHANGE_IDS[exchange]
    env_cols = rows[:, n : 2 * n]
    uniq_envs, group_of = np.unique(env_cols, axis=0, return_inverse=True)
    order = np.argsort(group_of, kind="stable")
    bounds = np.searchsorted(group_of[order], np.arange(len(uniq_envs) + 1))

    uniq_chunks: list[np.ndarray] = []
    pair_chunks: list[tuple[np.ndarray, np.ndarray]] = []  # (src, local row id)
    pending: list[tuple[np.ndarray, np.ndarray]] = []
    pending_rows = 0

    def flush() -> None:
        nonlocal pending, pending_rows
        if not pending:
            return
        cand = np.vstack([c for c, _ in pending])
        src = np.concatenate([s for _, s in pending])
        u, inv = np.unique(cand, axis=0, return_inverse=True)
        uniq_chunks.append(u)
        pair_chunks.append((src, inv.astype(np.int64)))
        pending = []
        pending_rows = 0

    for g in range(len(uniq_envs)):
        idx = order[bounds[g] : bounds[g + 1]].astype(np.int32)
        recv_arr, env2_arr = cache.get(uniq_envs[g])
        # Split giant groups so one call never allocates more than a chunk
        # of candidates (states x outcomes can reach hundreds of millions).
        step = max(1, _CHUNK_ROWS // max(1, len(recv_arr)))
        for lo in range(0, len(idx), step):
            cand, src = kern.expand_group(
                exc_id, n, k, time_next, rows, actions,
                idx[lo : lo + step], recv_arr, env2_arr,
            )
            pending.append((np.asarray(cand), np.asarray(src)))
            pending_rows += len(src)
            if pending_rows >= _CHUNK_ROWS:
                flush()
    flush()

    next_rows = np.unique(np.vstack(uniq_chunks), axis=0)
    edge_parts = []
    for u, (src, local) in zip(uniq_chunks, pair_chunks):
        dst = _locate_rows(next_rows, u)[local]
        edge_parts.append(np.column_stack([src.astype(np.int32), dst.astype(np.int32)]))
    edges = np.unique(np.vstack(edge_parts), axis=0)
    return next_rows, edges
