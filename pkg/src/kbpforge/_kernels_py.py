"""Pure-Python (numpy) successor-generation kernel.

Mirrors the compiled kernel in ``_kernels.pyx``: given one layer of
row-encoded global states, the resolved decide actions, and the enumerated
failure outcomes per environment group, produce every candidate successor row
together with its source-state index.  Deduplication happens in the caller.

Row layout (width ``2n + n*w``, int32):

    [votes: n] [env: n] [locals: n blocks of width w]

One batch = (all states sharing an environment) x (one failure outcome), so
the per-receiver delivery masks are constants and the local-state updates
vectorize across states.
"""

from __future__ import annotations

import numpy as np

IMPLEMENTATION = "python"

_EXC_FLOODSET = 0
_EXC_COUNT = 1
_EXC_DIFF = 2
_EXC_DWORKMOSES = 3
_EXC_EMIN = 4
_EXC_EBASIC = 5


def _popcount(x: int) -> int:
    return bin(x).count("1")


def _apply_outcome(
    exc_id: int,
    n: int,
    k: int,
    time_next: int,
    votes: np.ndarray,
    locals_: np.ndarray,
    actions: np.ndarray | None,
    recv: np.ndarray,
) -> np.ndarray:
    """New locals block for a batch of states under one delivery outcome.

    ``recv[r]`` is the bitmask of senders whose round message reaches
    receiver ``r``.  Every agent's local state is updated uniformly; dead
    agents simply receive whatever the matrix delivers to them and take no
    actions (their action codes are already 0).
    """
    m = locals_.shape[0]
    out = locals_.copy()
    if exc_id in (_EXC_FLOODSET, _EXC_COUNT, _EXC_DIFF):
        w = {_EXC_FLOODSET: 1, _EXC_COUNT: 2, _EXC_DIFF: 3}[exc_id]
        for r in range(n):
            mask = int(recv[r])
            union = np.zeros(m, dtype=np.int32)
            for j in range(n):
                if mask >> j & 1:
                    union |= locals_[:, j * w]
            out[:, r * w] = locals_[:, r * w] | union
            if exc_id == _EXC_COUNT:
                out[:, r * w + 1] = _popcount(mask)
            elif exc_id == _EXC_DIFF:
                out[:, r * w + 1] = _popcount(mask)
                out[:, r * w + 2] = locals_[:, r * w + 1]
        return out
    if exc_id == _EXC_DWORKMOSES:
        w = 5
        full = (1 << n) - 1
        for r in range(n):
            mask = int(recv[r])
            missing = full & ~mask
            reported = np.zeros(m, dtype=np.int32)
            ex = np.zeros(m, dtype=np.int32)
            for j in range(n):
                if mask >> j & 1:
                    reported |= locals_[:, j * w + 1]
                    ex |= locals_[:, j * w + 3]
            fold = locals_[:, r * w]
            newly = (missing | reported) & ~fold
            fnew = fold | newly
            pc = np.zeros(m, dtype=np.int32)
            for b in range(n):
                pc += (fnew >> b) & 1
            out[:, r * w] = fnew
            out[:, r * w + 1] = newly
            out[:, r * w + 2] = locals_[:, r * w + 2] | reported
            out[:, r * w + 3] = locals_[:, r * w + 3] | ex
            out[:, r * w + 4] = np.maximum(locals_[:, r * w + 4], pc - time_next)
        return out
    if exc_id in (_EXC_EMIN, _EXC_EBASIC):
        w = 4 if exc_id == _EXC_EMIN else 5
        if actions is None:
            actions = np.zeros((m, n), dtype=np.int8)
        dec0 = actions == 1
        dec1 = actions == 2
        if exc_id == _EXC_EBASIC:
            tags = np.empty((m, n), dtype=bool)
            for j in range(n):
                tags[:, j] = (
                    (actions[:, j] == 0)
                    & (locals_[:, j * w] == 1)
                    & (locals_[:, j * w + 1] == 0)
                )
        for r in range(n):
            mask = int(recv[r])
            got0 = np.zeros(m, dtype=bool)
            got1 = np.zeros(m, dtype=bool)
            num1 = np.zeros(m, dtype=np.int32)
            for j in range(n):
                if mask >> j & 1:
                    got0 |= dec0[:, j]
                    got1 |= dec1[:, j]
                    if exc_id == _EXC_EBASIC:
                        num1 += tags[:, j]
            jd = np.where(got0, 0, np.where(got1, 1, 2)).astype(np.int32)
            act = actions[:, r].astype(np.int32)
            fired = act > 0
            out[:, r * w + 1] = locals_[:, r * w + 1] | fired
            out[:, r * w + 2] = jd
            out[:, r * w + 3] = np.where(fired, act - 1, locals_[:, r * w + 3])
            if exc_id == _EXC_EBASIC:
                out[:, r * w + 4] = num1
        return out
    raise ValueError(f"unknown exchange id: {exc_id}")


def expand_group(
    exc_id: int,
    n: int,
    k: int,
    time_next: int,
    rows: np.ndarray,
    actions: np.ndarray | None,
    state_idx: np.ndarray,
    recv_arr: np.ndarray,
    env2_arr: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Candidate successors for one environment group of states.

    ``state_idx`` selects the group's rows; ``recv_arr``/``env2_arr`` hold
    its failure outcomes, one row each.  Returns (candidates, source index).
    """
    group_rows = rows[state_idx]
    votes = group_rows[:, :n]
    locals_ = group_rows[:, 2 * n :]
    group_actions = None if actions is None else actions[state_idx]
    n_states = len(state_idx)
    n_out = recv_arr.shape[0]
    width = rows.shape[1]
    cand = np.empty((n_states * n_out, width), dtype=np.int32)
    src = np.empty(n_states * n_out, dtype=np.int32)
    for o in range(n_out):
        block = slice(o * n_states, (o + 1) * n_states)
        cand[block, :n] = votes
        cand[block, n : 2 * n] = env2_arr[o]
        cand[block, 2 * n :] = _apply_outcome(
            exc_id, n, k, time_next, votes, locals_, group_actions, recv_arr[o]
        )
        src[block] = state_idx
    return cand, src
