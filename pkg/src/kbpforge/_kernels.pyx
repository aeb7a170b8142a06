# cython: language_level=3
"""Compiled successor-generation kernel.

Mirrors ``kbpforge._kernels_py.expand_group`` exactly: same signature, same
row layout ([votes n][env n][locals n*w], int32), and the same outcome-major
output ordering (block o holds every group state under failure outcome o).
The difference is purely mechanical: tight typed loops over rows instead of
numpy vector operations, which avoids the per-outcome temporaries that
dominate the fallback's runtime on large layers.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

IMPLEMENTATION = "compiled"

DEF EXC_FLOODSET = 0
DEF EXC_COUNT = 1
DEF EXC_DIFF = 2
DEF EXC_DWORKMOSES = 3
DEF EXC_EMIN = 4
DEF EXC_EBASIC = 5


cdef inline int _popcount(unsigned int x) noexcept nogil:
    cdef int c = 0
    while x:
        x &= x - 1
        c += 1
    return c


cdef void _fill_flood_family(
    int exc_id,
    int n,
    int w,
    cnp.int32_t[:, :] rows_v,
    cnp.int32_t[:, ::1] cand,
    Py_ssize_t out_row,
    Py_ssize_t s_row,
    cnp.int32_t[:, :] recv_v,
    Py_ssize_t o,
    int base,
) noexcept nogil:
    cdef int r, j, mask
    cdef cnp.int32_t union_
    for r in range(n):
        mask = recv_v[o, r]
        union_ = rows_v[s_row, base + r * w]
        for j in range(n):
            if mask >> j & 1:
                union_ |= rows_v[s_row, base + j * w]
        cand[out_row, base + r * w] = union_
        if exc_id == EXC_COUNT:
            cand[out_row, base + r * w + 1] = _popcount(<unsigned int> mask)
        elif exc_id == EXC_DIFF:
            cand[out_row, base + r * w + 1] = _popcount(<unsigned int> mask)
            cand[out_row, base + r * w + 2] = rows_v[s_row, base + r * w + 1]


cdef void _fill_dworkmoses(
    int n,
    int time_next,
    cnp.int32_t[:, :] rows_v,
    cnp.int32_t[:, ::1] cand,
    Py_ssize_t out_row,
    Py_ssize_t s_row,
    cnp.int32_t[:, :] recv_v,
    Py_ssize_t o,
    int base,
) noexcept nogil:
    cdef int w = 5
    cdef int full = (1 << n) - 1
    cdef int r, j, mask
    cdef cnp.int32_t missing, reported, ex, fold, newly, fnew, waste
    cdef int pc
    for r in range(n):
        mask = recv_v[o, r]
        missing = full & ~mask
        reported = 0
        ex = 0
        for j in range(n):
            if mask >> j & 1:
                reported |= rows_v[s_row, base + j * w + 1]
                ex |= rows_v[s_row, base + j * w + 3]
        fold = rows_v[s_row, base + r * w]
        newly = (missing | reported) & ~fold
        fnew = fold | newly
        pc = _popcount(<unsigned int> fnew)
        waste = rows_v[s_row, base + r * w + 4]
        if pc - time_next > waste:
            waste = pc - time_next
        cand[out_row, base + r * w] = fnew
        cand[out_row, base + r * w + 1] = newly
        cand[out_row, base + r * w + 2] = rows_v[s_row, base + r * w + 2] | reported
        cand[out_row, base + r * w + 3] = rows_v[s_row, base + r * w + 3] | ex
        cand[out_row, base + r * w + 4] = waste


cdef void _fill_decide_family(
    int exc_id,
    int n,
    cnp.int32_t[:, :] rows_v,
    cnp.int8_t[:, :] acts_v,
    cnp.int32_t[:, ::1] cand,
    Py_ssize_t out_row,
    Py_ssize_t s_row,
    cnp.int32_t[:, :] recv_v,
    Py_ssize_t o,
    int base,
) noexcept nogil:
    cdef int w = 4 if exc_id == EXC_EMIN else 5
    cdef int r, j, mask
    cdef bint got0, got1, fired
    cdef int num1
    cdef cnp.int8_t act
    for r in range(n):
        mask = recv_v[o, r]
        got0 = False
        got1 = False
        num1 = 0
        for j in range(n):
            if mask >> j & 1:
                if acts_v[s_row, j] == 1:
                    got0 = True
                elif acts_v[s_row, j] == 2:
                    got1 = True
                if exc_id == EXC_EBASIC:
                    # an undecided init-1 agent re-sends its vote tag
                    if (
                        acts_v[s_row, j] == 0
                        and rows_v[s_row, base + j * w] == 1
                        and rows_v[s_row, base + j * w + 1] == 0
                    ):
                        num1 += 1
        act = acts_v[s_row, r]
        fired = act > 0
        cand[out_row, base + r * w] = rows_v[s_row, base + r * w]
        cand[out_row, base + r * w + 1] = rows_v[s_row, base + r * w + 1] | fired
        cand[out_row, base + r * w + 2] = 0 if got0 else (1 if got1 else 2)
        if fired:
            cand[out_row, base + r * w + 3] = act - 1
        else:
            cand[out_row, base + r * w + 3] = rows_v[s_row, base + r * w + 3]
        if exc_id == EXC_EBASIC:
            cand[out_row, base + r * w + 4] = num1


def expand_group(
    int exc_id,
    int n,
    int k,
    int time_next,
    rows,
    actions,
    state_idx,
    recv_arr,
    env2_arr,
):
    """Candidate successors for one environment group of states.

    Same contract as the fallback: ``state_idx`` selects the group's rows
    out of ``rows``; ``recv_arr``/``env2_arr`` hold the group's failure
    outcomes, one row each.  Returns ``(candidates, source index)`` with
    candidates ordered outcome-major.
    """
    cdef cnp.int32_t[:, :] rows_v = np.ascontiguousarray(rows, dtype=np.int32)
    cdef cnp.int32_t[::1] idx_v = np.ascontiguousarray(state_idx, dtype=np.int32)
    cdef cnp.int32_t[:, :] recv_v = np.ascontiguousarray(recv_arr, dtype=np.int32)
    cdef cnp.int32_t[:, :] env2_v = np.ascontiguousarray(env2_arr, dtype=np.int32)
    cdef cnp.int8_t[:, :] acts_v
    if actions is None:
        acts_v = np.zeros((rows_v.shape[0], n), dtype=np.int8)
    else:
        acts_v = np.ascontiguousarray(actions, dtype=np.int8)

    cdef Py_ssize_t n_states = idx_v.shape[0]
    cdef Py_ssize_t n_out = recv_v.shape[0]
    cdef Py_ssize_t width = rows_v.shape[1]
    cdef int base = 2 * n
    cdef int w

    if exc_id == EXC_FLOODSET:
        w = 1
    elif exc_id == EXC_COUNT:
        w = 2
    elif exc_id == EXC_DIFF:
        w = 3
    elif exc_id == EXC_DWORKMOSES:
        w = 5
    elif exc_id == EXC_EMIN:
        w = 4
    elif exc_id == EXC_EBASIC:
        w = 5
    else:
        raise ValueError(f"unknown exchange id: {exc_id}")
    if width != 2 * n + n * w:
        raise ValueError("row width does not match the exchange layout")

    cand_arr = np.empty((n_states * n_out, width), dtype=np.int32)
    src_arr = np.empty(n_states * n_out, dtype=np.int32)
    cdef cnp.int32_t[:, ::1] cand = cand_arr
    cdef cnp.int32_t[::1] src = src_arr

    cdef Py_ssize_t o, spos, out_row, s_row
    cdef int c
    with nogil:
        for o in range(n_out):
            for spos in range(n_states):
                out_row = o * n_states + spos
                s_row = idx_v[spos]
                src[out_row] = <cnp.int32_t> s_row
                for c in range(n):
                    cand[out_row, c] = rows_v[s_row, c]
                    cand[out_row, n + c] = env2_v[o, c]
                if exc_id <= EXC_DIFF:
                    _fill_flood_family(
                        exc_id, n, w, rows_v, cand, out_row, s_row,
                        recv_v, o, base,
                    )
                elif exc_id == EXC_DWORKMOSES:
                    _fill_dworkmoses(
                        n, time_next, rows_v, cand, out_row, s_row,
                        recv_v, o, base,
                    )
                else:
                    _fill_decide_family(
                        exc_id, n, rows_v, acts_v, cand, out_row, s_row,
                        recv_v, o, base,
                    )
    return cand_arr, src_arr
