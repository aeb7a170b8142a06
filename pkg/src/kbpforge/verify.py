"""Protocol verification: agreement properties, orderings, and audits.

All checks run over a finite :class:`~kbpforge.model.LayeredSystem` plus a
:class:`~kbpforge.kbp.DecisionTable`.  Run semantics: each agent applies the
table until it decides, then stops acting on it (an until-decided loop), so
whether an agent fires at a state depends on the path taken to it.  The
fired bit evolves deterministically along every path — an eligible undecided
agent whose observation maps to a decide always fires — so exact checking
reduces to joint reachability of (state, fired bits): one bit per agent for
validity/termination, a pair of per-agent codes for the state-local
agreement properties.

Protocol comparison pairs runs of two systems by a shared nondeterminism
schedule — same initial votes and failure environment, same per-round
delivery outcome index (outcome enumeration depends only on the environment,
never on the exchange, so outcome indices mean the same adversary choice on
both sides).  The product construction detects an ordering violation the
moment the later of two corresponding fires happens, so witnesses are run
prefixes ending at the later fire.
"""

from __future__ import annotations

import ast
import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import exchanges as exc
from . import failures as flr
from .kbp import (
    NOOP,
    DecisionTable,
    KbpSpec,
    noop_table,
    prescribed_actions,
    render_action,
)
from .kernels import OutcomeCache, _kernel
from .model import GlobalState, InstanceParams, LayeredSystem


class VerifyError(ValueError):
    """Mismatched inputs to a verification operation."""


# ---------------------------------------------------------------------------
# Suites and reports


PROPERTY_NAMES = (
    "unique_decision",
    "simultaneous_agreement",
    "agreement",
    "uniform_agreement",
    "validity",
    "termination",
)


@dataclass(frozen=True)
class SpecSuite:
    name: str
    properties: tuple[str, ...]

    def __post_init__(self) -> None:
        unknown = [p for p in self.properties if p not in PROPERTY_NAMES]
        if unknown:
            raise VerifyError(f"unknown properties: {unknown}")


SBA_SUITE = SpecSuite(
    "sba", ("unique_decision", "simultaneous_agreement", "validity", "termination")
)
EBA_SUITE = SpecSuite(
    "eba", ("unique_decision", "agreement", "validity", "termination")
)

_SUITES = {"sba": SBA_SUITE, "eba": EBA_SUITE, "eba0": EBA_SUITE}


def suite_by_name(name: str) -> SpecSuite:
    try:
        return _SUITES[name.lower()]
    except KeyError:
        raise VerifyError(
            f"unknown suite {name!r}; known: {sorted(set(_SUITES))}"
        ) from None


def render_state(state: GlobalState) -> str:
    p = state.params
    if p.failure_model == flr.CRASH:
        env = "".join("ACX"[s] for s in state.failure.status)
    else:
        env = "".join(
            "F" if i in state.failure.faulty else "." for i in range(p.n)
        )
    obs = "; ".join(
        f"{i}:[{exc.render_obs(p.exchange, exc.local_to_row(p.exchange, state.locals[i]), p.n, p.k)}]"
        for i in range(p.n)
    )
    votes = "".join(str(v) for v in state.votes)
    return f"time={state.time} votes={votes} env={env} {obs}"


@dataclass
class Counterexample:
    description: str
    path: list[GlobalState]

    def to_text(self) -> str:
        lines = [self.description]
        lines += ["  " + render_state(s) for s in self.path]
        return "\n".join(lines)


@dataclass
class PropertyResult:
    name: str
    passed: bool
    detail: str = ""
    counterexample: Optional[Counterexample] = None

    def to_text(self) -> str:
        head = f"{'PASS' if self.passed else 'FAIL'} {self.name}"
        if self.detail:
            head += f": {self.detail}"
        if self.counterexample is not None:
            head += "\n" + self.counterexample.to_text()
        return head


@dataclass
class VerificationReport:
    suite: str
    results: list[PropertyResult]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def to_text(self) -> str:
        return "\n".join(r.to_text() for r in self.results)

    def to_records(self) -> list[dict]:
        return [
            {
                "suite": self.suite,
                "property": r.name,
                "passed": r.passed,
                "detail": r.detail,
            }
            for r in self.results
        ]


# ---------------------------------------------------------------------------
# Shared evaluation context


class _Run:
    """Caches per-layer fire matrices and fired-bit reachability for one
    (system, table) pair."""

    def __init__(self, system: LayeredSystem, table: DecisionTable):
        if table.params != system.params:
            raise VerifyError("table and system were built for different instances")
        self.system = system
        self.table = table
        self.params = system.params
        self._raw: dict[int, np.ndarray] = {}
        self._unfired: Optional[list[np.ndarray]] = None

    def raw(self, m: int) -> np.ndarray:
        """Table actions per (state, agent) at layer m (int8 codes)."""
        hit = self._raw.get(m)
        if hit is None:
            hit = self.table.fires_matrix(m, self.system.layers[m])
            self._raw[m] = hit
        return hit

    def raw_fire(self, m: int) -> np.ndarray:
        """Bool (state, agent): an eligible undecided agent fires here."""
        return (self.raw(m) != NOOP) & self.system.eligible_masks(m)

    def unfired(self) -> list[np.ndarray]:
        """unfired[m][s, i]: some path reaches s with agent i still
        undecided.  On such a path the agent fires at s iff raw_fire."""
        if self._unfired is None:
            sys = self.system
            n = self.params.n
            dp = [np.ones((sys.layer_size(0), n), dtype=bool)]
            for m in range(sys.num_layers - 1):
                keep = dp[m] & ~self.raw_fire(m)
                e = sys.edges[m]
                nxt = np.zeros((sys.layer_size(m + 1), n), dtype=bool)
                for i in range(n):
                    hits = e[:, 1][keep[e[:, 0], i]]
                    if hits.size:
                        nxt[hits, i] = True
                dp.append(nxt)
            self._unfired = dp
        return self._unfired

    def fire_possible(self, m: int) -> np.ndarray:
        """Bool (state, agent): some run fires at this state."""
        return self.unfired()[m] & self.raw_fire(m)


def _any_path_to(system: LayeredSystem, m: int, idx: int) -> list[int]:
    """Indices of an arbitrary path layer 0..m ending at ``idx``."""
    path = [idx]
    for j in range(m, 0, -1):
        sorted_e, offsets = system.predecessors(j)
        cur = path[0]
        path.insert(0, int(sorted_e[offsets[cur], 0]))
    return path


def _path_states(system: LayeredSystem, indices: list[int]) -> list[GlobalState]:
    return [system.state(j, s) for j, s in enumerate(indices)]


def _unfired_path_to(run: _Run, m: int, idx: int, agent: int) -> list[int]:
    """A path on which ``agent`` never fires before layer m, ending at idx."""
    unfired = run.unfired()
    sys = run.system
    path = [idx]
    for j in range(m, 0, -1):
        sorted_e, offsets = sys.predecessors(j)
        cur = path[0]
        cands = sorted_e[offsets[cur] : offsets[cur + 1], 0]
        keep = unfired[j - 1][cands, agent] & ~run.raw_fire(j - 1)[cands, agent]
        pick = cands[np.argmax(keep)] if keep.any() else cands[0]
        path.insert(0, int(pick))
    return path


# ---------------------------------------------------------------------------
# Pairwise joint fired-code reachability
#
# Per agent the run code is 0 (undecided) or the action code 1+v once it
# fires; along an edge the code evolves deterministically:
#   code' = code if code != 0 else (raw action if eligible else 0).
# For a pair of agents, joint codes are tracked as code_i * base + code_j.


class _PairDP:
    def __init__(self, run: _Run, i: int, j: int, base: int):
        self.run = run
        self.i, self.j, self.base = i, j, base
        sys = run.system
        width = base * base
        self.layers = [np.zeros((sys.layer_size(0), width), dtype=bool)]
        self.layers[0][:, 0] = True
        for m in range(sys.num_layers - 1):
            cur = self.layers[m]
            nxt = np.zeros((sys.layer_size(m + 1), width), dtype=bool)
            flat = nxt.reshape(-1)
            e = sys.edges[m]
            src, dst = e[:, 0], e[:, 1]
            ci = self._step_codes(m, self.i)
            cj = self._step_codes(m, self.j)
            for c in range(width):
                take = cur[src, c]
                if not take.any():
                    continue
                s_take = src[take]
                d_take = dst[take]
                a, b = divmod(c, base)
                a_next = np.where(a != 0, a, ci[s_take])
                b_next = np.where(b != 0, b, cj[s_take])
                flat[d_take * width + a_next * base + b_next] = True
            self.layers.append(nxt)

    def _step_codes(self, m: int, agent: int) -> np.ndarray:
        """Code an undecided ``agent`` carries out of layer m states."""
        raw = self.run.raw(m)[:, agent].astype(np.int64)
        elig = self.run.system.eligible_masks(m)[:, agent]
        return np.where(elig, raw, NOOP)

    def codes_of(self, c: int) -> tuple[int, int]:
        return divmod(c, self.base)

    def path_to(self, m: int, idx: int, c: int) -> list[int]:
        """A path realizing joint code ``c`` at (m, idx)."""
        sys = self.run.system
        path = [idx]
        code = c
        for jm in range(m, 0, -1):
            sorted_e, offsets = sys.predecessors(jm)
            cur = path[0]
            cands = sorted_e[offsets[cur] : offsets[cur + 1], 0]
            a, b = divmod(code, self.base)
            ci = self._step_codes(jm - 1, self.i)
            cj = self._step_codes(jm - 1, self.j)
            found = None
            for p in cands:
                p = int(p)
                for cp in np.flatnonzero(self.layers[jm - 1][p]):
                    ap, bp = divmod(int(cp), self.base)
                    an = ap if ap != 0 else int(ci[p])
                    bn = bp if bp != 0 else int(cj[p])
                    if an == a and bn == b:
                        found = (p, int(cp))
                        break
                if found:
                    break
            if found is None:  # pragma: no cover - DP guarantees a pred
                found = (int(cands[0]), 0)
            path.insert(0, found[0])
            code = found[1]
        return path


# ---------------------------------------------------------------------------
# Individual properties


def _check_unique_decision(run: _Run) -> PropertyResult:
    """Each agent decides at most once per run.

    Under the until-decided run semantics a second fire is impossible by
    construction for decision-blind exchanges.  For decision-tracking
    exchanges the gate is the stored decided flag, so the checkable content
    is absorption: no decide entry on an already-decided observation.
    """
    name = "unique_decision"
    if run.params.info.tracks_decisions and not run.table.default_noop:
        for (agent, time, obs), action in run.table.entries.items():
            if action != NOOP and obs[exc.TRACK_DECIDED] == 1:
                return PropertyResult(
                    name,
                    False,
                    f"decide entry on a decided observation: agent={agent} "
                    f"time={time}",
                )
        return PropertyResult(name, True, "no decide entry on a decided observation")
    return PropertyResult(name, True, "holds by the until-decided run semantics")


def _check_simultaneous_agreement(run: _Run) -> PropertyResult:
    """At every reachable point, if any nonfaulty agent fires decide(v),
    every nonfaulty agent fires decide(v) there too."""
    name = "simultaneous_agreement"
    sys = run.system
    n = run.params.n
    base = run.params.k + 1
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            dp = _PairDP(run, i, j, base)
            for m in range(sys.num_layers - 1):
                raw = run.raw(m)
                elig = sys.eligible_masks(m)
                inN = sys.nonfaulty_masks(m)
                pair_ok = inN[:, i] & inN[:, j]
                fires_i = (raw[:, i] != NOOP) & elig[:, i]
                if not (pair_ok & fires_i).any():
                    continue
                for c in range(base * base):
                    col = dp.layers[m][:, c]
                    if not col.any():
                        continue
                    a, b = divmod(c, base)
                    if a != 0:
                        continue  # i already decided; i does not fire now
                    # i fires at these states on a path with joint code c
                    firing = col & pair_ok & fires_i
                    if not firing.any():
                        continue
                    if b != 0:
                        bad = firing  # j decided earlier: not simultaneous
                        why = f"agent {j} decided earlier on this run"
                    else:
                        fires_j = (raw[:, j] != NOOP) & elig[:, j]
                        same = fires_j & (raw[:, j] == raw[:, i])
                        bad = firing & ~same
                        why = f"agent {j} does not fire the same decision"
                    if bad.any():
                        s = int(np.flatnonzero(bad)[0])
                        v = int(raw[s, i]) - 1
                        ce = Counterexample(
                            f"agent {i} decides {v} at time {m} but {why}",
                            _path_states(sys, dp.path_to(m, s, c)),
                        )
                        return PropertyResult(
                            name, False, f"violated at time {m}", ce
                        )
    return PropertyResult(name, True)


def _check_validity(run: _Run) -> PropertyResult:
    """Any value decided by a nonfaulty agent was some agent's vote at that
    state."""
    name = "validity"
    sys = run.system
    for m in range(sys.num_layers - 1):
        poss = run.fire_possible(m)
        raw = run.raw(m)
        inN = sys.nonfaulty_masks(m)
        votes = sys.votes(m)
        for v in range(run.params.k):
            fired_v = poss & (raw == 1 + v) & inN
            absent = ~(votes == v).any(axis=1)
            viol = fired_v.any(axis=1) & absent
            if viol.any():
                s = int(np.flatnonzero(viol)[0])
                i = int(np.flatnonzero(fired_v[s])[0])
                ce = Counterexample(
                    f"agent {i} decides {v} at time {m} but no agent voted {v}",
                    _path_states(sys, _unfired_path_to(run, m, s, i)),
                )
                return PropertyResult(
                    name, False, f"value {v} decided without a matching vote", ce
                )
    return PropertyResult(name, True)


def _check_agreement(run: _Run) -> PropertyResult:
    """Nonfaulty agents that have decided agree (decisions may differ in
    time).  Reads the stored decision fields, so it needs a
    decision-tracking exchange."""
    name = "agreement"
    sys = run.system
    if not run.params.info.tracks_decisions:
        raise VerifyError(
            "agreement reads stored decisions and needs a decision-tracking "
            f"exchange, not {run.params.exchange!r}"
        )
    for m in range(sys.num_layers):
        inN = sys.nonfaulty_masks(m)
        decided = np.stack(
            [
                sys.obs_matrix(m, i)[:, exc.TRACK_DECIDED] == 1
                for i in range(run.params.n)
            ],
            axis=1,
        )
        dvals = np.stack(
            [
                sys.obs_matrix(m, i)[:, exc.TRACK_DECISION]
                for i in range(run.params.n)
            ],
            axis=1,
        )
        mask = inN & decided
        top = np.where(mask, dvals, -1).max(axis=1)
        low = np.where(mask, dvals, np.iinfo(np.int32).max).min(axis=1)
        viol = mask.any(axis=1) & (top != low)
        if viol.any():
            s = int(np.flatnonzero(viol)[0])
            detail = ", ".join(
                f"agent {i}={int(dvals[s, i])}"
                for i in range(run.params.n)
                if mask[s, i]
            )
            ce = Counterexample(
                f"conflicting decisions among nonfaulty agents at time {m} "
                f"({detail})",
                _path_states(sys, _any_path_to(sys, m, s)),
            )
            return PropertyResult(name, False, f"violated at time {m}", ce)
    return PropertyResult(name, True)


def _check_termination(run: _Run) -> PropertyResult:
    """On every maximal run, every agent nonfaulty at the final state has
    decided by then."""
    name = "termination"
    sys = run.system
    final = sys.num_layers - 1
    viol = run.unfired()[final] & sys.nonfaulty_masks(final)
    if viol.any():
        s, i = map(int, np.argwhere(viol)[0])
        ce = Counterexample(
            f"nonfaulty agent {i} never decides on this run "
            f"(horizon {run.params.horizon})",
            _path_states(sys, _unfired_path_to(run, final, s, i)),
        )
        return PropertyResult(
            name, False, f"agent {i} can reach the horizon undecided", ce
        )
    return PropertyResult(name, True)


def _check_uniform_agreement(run: _Run) -> PropertyResult:
    """All agents that decide on a run agree, faulty ones included."""
    name = "uniform_agreement"
    sys = run.system
    n = run.params.n
    base = run.params.k + 1
    for i in range(n):
        for j in range(i + 1, n):
            dp = _PairDP(run, i, j, base)
            for m in range(sys.num_layers):
                raw = (
                    run.raw(m)
                    if m < sys.num_layers - 1
                    else np.zeros((sys.layer_size(m), n), dtype=np.int8)
                )
                elig = (
                    sys.eligible_masks(m)
                    if m < sys.num_layers - 1
                    else np.zeros((sys.layer_size(m), n), dtype=bool)
                )
                for c in range(base * base):
                    col = dp.layers[m][:, c]
                    if not col.any():
                        continue
                    a, b = divmod(c, base)
                    an = (
                        np.full(col.shape, a, dtype=np.int64)
                        if a != 0
                        else np.where(elig[:, i], raw[:, i], 0)
                    )
                    bn = (
                        np.full(col.shape, b, dtype=np.int64)
                        if b != 0
                        else np.where(elig[:, j], raw[:, j], 0)
                    )
                    viol = col & (an != 0) & (bn != 0) & (an != bn)
                    if viol.any():
                        s = int(np.flatnonzero(viol)[0])
                        va, vb = int(an[s]) - 1, int(bn[s]) - 1
                        ce = Counterexample(
                            f"agents {i} and {j} decide {va} and {vb} on one "
                            f"run (by time {m})",
                            _path_states(sys, dp.path_to(m, s, c)),
                        )
                        return PropertyResult(
                            name, False, f"conflicting values {va} vs {vb}", ce
                        )
    return PropertyResult(name, True)


_CHECKERS = {
    "unique_decision": _check_unique_decision,
    "simultaneous_agreement": _check_simultaneous_agreement,
    "agreement": _check_agreement,
    "uniform_agreement": _check_uniform_agreement,
    "validity": _check_validity,
    "termination": _check_termination,
}


def check_suite(
    system: LayeredSystem,
    table: Optional[DecisionTable],
    suite: SpecSuite,
) -> VerificationReport:
    """Run every property of the suite; table=None means the all-noop
    protocol (exchange-only checks)."""
    if table is None:
        table = noop_table(system.params)
    run = _Run(system, table)
    results = [_CHECKERS[prop](run) for prop in suite.properties]
    return VerificationReport(suite=suite.name, results=results)


# ---------------------------------------------------------------------------
# Protocol ordering


@dataclass
class CompareWitness:
    agent: int
    early_time: int
    late_time: Optional[int]  # None: the late side never decides on this run
    early_side: str  # "A" or "B"
    path_a: list[GlobalState]
    path_b: list[GlobalState]

    def to_text(self) -> str:
        other = "B" if self.early_side == "A" else "A"
        late = "never" if self.late_time is None else f"at time {self.late_time}"
        lines = [
            f"agent {self.agent}: {self.early_side} decides at time "
            f"{self.early_time}, {other} {late}",
            "run in A:",
            *("  " + render_state(s) for s in self.path_a),
            "run in B:",
            *("  " + render_state(s) for s in self.path_b),
        ]
        return "\n".join(lines)


@dataclass
class OrderResult:
    """How table A's decision times relate to table B's over corresponding
    runs.  ``le``: A never later and never earlier (same times everywhere);
    ``strict_lt_somewhere``: A never later, strictly earlier on some run;
    ``gt_somewhere``: B never later, strictly earlier on some run;
    ``incomparable``: each side is strictly earlier on some run."""

    relation: str
    a_first: Optional[CompareWitness] = None
    b_first: Optional[CompareWitness] = None

    def to_text(self) -> str:
        lines = [f"relation: {self.relation}"]
        if self.a_first is not None:
            lines += ["witness (A earlier):", self.a_first.to_text()]
        if self.b_first is not None:
            lines += ["witness (B earlier):", self.b_first.to_text()]
        return "\n".join(lines)


def _product_initial(pa: InstanceParams, pb: InstanceParams) -> np.ndarray:
    n, k = pa.n, pa.k
    envs = [e.to_row() for e in flr.initial_envs(pa.failure_model, n, pa.t)]
    rows = []
    for votes in itertools.product(range(k), repeat=n):
        la: list[int] = []
        lb: list[int] = []
        for i in range(n):
            la.extend(
                exc.local_to_row(
                    pa.exchange, exc.init_local(pa.exchange, i, votes[i], n, k)
                )
            )
            lb.extend(
                exc.local_to_row(
                    pb.exchange, exc.init_local(pb.exchange, i, votes[i], n, k)
                )
            )
        for env in envs:
            rows.append(list(votes) + list(env) + la + lb + [0] * (2 * n))
    return np.unique(np.array(rows, dtype=np.int32), axis=0)


def compare(
    table_a: DecisionTable,
    table_b: DecisionTable,
    impl: Optional[str] = None,
) -> OrderResult:
    """Order two decision tables by per-agent decision times over runs
    paired by a shared adversary schedule.

    The tables may use different exchanges (failure outcomes are
    exchange-independent); they must agree on n, t, k, the failure model,
    and the horizon.
    """
    pa, pb = table_a.params, table_b.params
    if (pa.n, pa.t, pa.k, pa.failure_model, pa.horizon) != (
        pb.n,
        pb.t,
        pb.k,
        pb.failure_model,
        pb.horizon,
    ):
        raise VerifyError(
            "tables cover different instances; run pairing is impossible"
        )
    n, k = pa.n, pa.k
    kern = _kernel(impl)
    ida, idb = exc.EXCHANGE_IDS[pa.exchange], exc.EXCHANGE_IDS[pb.exchange]
    wa = pa.local_width
    wb = pb.local_width
    a_hi = 2 * n + n * wa
    b_lo, b_hi = a_hi, a_hi + n * wb
    fa_lo, fa_hi = b_hi, b_hi + n
    fb_lo, fb_hi = fa_hi, fa_hi + n

    cache = OutcomeCache(pa.failure_model, n, pa.t)
    layers = [_product_initial(pa, pb)]
    edges: list[np.ndarray] = []
    # First run witnessing each side deciding strictly earlier:
    # (layer of the later fire or None, product state, agent).
    first_event: dict[str, Optional[tuple[Optional[int], int, int]]] = {
        "A": None,
        "B": None,
    }

    for m in range(pa.horizon):
        rows = layers[m]
        view_a = np.ascontiguousarray(rows[:, :a_hi])
        view_b = np.ascontiguousarray(
            np.concatenate([rows[:, : 2 * n], rows[:, b_lo:b_hi]], axis=1)
        )
        env = rows[:, n : 2 * n]
        eligible = env == flr.ACTIVE if pa.failure_model == flr.CRASH else env >= 0
        fired_a = rows[:, fa_lo:fa_hi] == 1
        fired_b = rows[:, fb_lo:fb_hi] == 1
        raw_a = table_a.fires_matrix(m, view_a)
        raw_b = table_b.fires_matrix(m, view_b)
        eff_a = eligible & (raw_a != NOOP) & ~fired_a
        eff_b = eligible & (raw_b != NOOP) & ~fired_b
        acts_a = np.where(eff_a, raw_a, NOOP).astype(np.int8)
        acts_b = np.where(eff_b, raw_b, NOOP).astype(np.int8)

        if first_event["A"] is None and (eff_b & fired_a).any():
            s, i = map(int, np.argwhere(eff_b & fired_a)[0])
            first_event["A"] = (m, s, i)
        if first_event["B"] is None and (eff_a & fired_b).any():
            s, i = map(int, np.argwhere(eff_a & fired_b)[0])
            first_event["B"] = (m, s, i)

        new_fired_a = (fired_a | eff_a).astype(np.int32)
        new_fired_b = (fired_b | eff_b).astype(np.int32)

        uniq_envs, group_of = np.unique(env, axis=0, return_inverse=True)
        order = np.argsort(group_of, kind="stable")
        bounds = np.searchsorted(group_of[order], np.arange(len(uniq_envs) + 1))
        cand_parts, src_parts = [], []
        for g in range(len(uniq_envs)):
            idx = order[bounds[g] : bounds[g + 1]].astype(np.int32)
            recv_arr, env2_arr = cache.get(uniq_envs[g])
            cand_a, src = kern.expand_group(
                ida, n, k, m + 1, view_a, acts_a, idx, recv_arr, env2_arr
            )
            cand_b, _ = kern.expand_group(
                idb, n, k, m + 1, view_b, acts_b, idx, recv_arr, env2_arr
            )
            cand_a = np.asarray(cand_a)
            cand_b = np.asarray(cand_b)
            src = np.asarray(src)
            cand = np.concatenate(
                [
                    cand_a,
                    cand_b[:, 2 * n :],
                    new_fired_a[src],
                    new_fired_b[src],
                ],
                axis=1,
            )
            cand_parts.append(cand)
            src_parts.append(src)
        cand = np.vstack(cand_parts)
        src = np.concatenate(src_parts)
        nxt, inv = np.unique(cand, axis=0, return_inverse=True)
        layer_edges = np.unique(
            np.column_stack([src.astype(np.int32), inv.astype(np.int32)]), axis=0
        )
        layers.append(nxt)
        edges.append(layer_edges)

    # End-of-horizon residue: one side decided on a run and the other never
    # does (runs end at the horizon), which is also strictly-earlier evidence.
    final = layers[pa.horizon]
    fin_a = final[:, fa_lo:fa_hi] == 1
    fin_b = final[:, fb_lo:fb_hi] == 1
    if first_event["A"] is None and (fin_a & ~fin_b).any():
        s, i = map(int, np.argwhere(fin_a & ~fin_b)[0])
        first_event["A"] = (None, s, i)
    if first_event["B"] is None and (fin_b & ~fin_a).any():
        s, i = map(int, np.argwhere(fin_b & ~fin_a)[0])
        first_event["B"] = (None, s, i)

    has_a_first = first_event["A"] is not None
    has_b_first = first_event["B"] is not None
    le_ab = not has_b_first  # B never strictly earlier => A <= B
    le_ba = not has_a_first
    if le_ab and le_ba:
        relation = "le"
    elif le_ab:
        relation = "strict_lt_somewhere"
    elif le_ba:
        relation = "gt_somewhere"
    else:
        relation = "incomparable"

    def build_witness(side: str) -> CompareWitness:
        late_m, s, agent = first_event[side]  # type: ignore[misc]
        m = pa.horizon if late_m is None else late_m
        early_col = (fa_lo if side == "A" else fb_lo) + agent
        # Backward walk; the early side's fired flag flips 0 -> 1 right
        # after its fire layer.
        indices = [s]
        for j in range(m, 0, -1):
            cur = indices[0]
            e = edges[j - 1]
            cands = e[e[:, 1] == cur, 0]
            indices.insert(0, int(cands[0]))
        early_time = m
        for j, idx in enumerate(indices):
            if layers[j][idx, early_col] == 1:
                early_time = j - 1
                break
        path_a = [
            GlobalState.from_row(pa, j, layers[j][idx][:a_hi])
            for j, idx in enumerate(indices)
        ]
        path_b = [
            GlobalState.from_row(
                pb,
                j,
                np.concatenate(
                    [layers[j][idx][: 2 * n], layers[j][idx][b_lo:b_hi]]
                ),
            )
            for j, idx in enumerate(indices)
        ]
        return CompareWitness(
            agent=agent,
            early_time=early_time,
            late_time=late_m,
            early_side=side,
            path_a=path_a,
            path_b=path_b,
        )

    return OrderResult(
        relation=relation,
        a_first=build_witness("A") if has_a_first else None,
        b_first=build_witness("B") if has_b_first else None,
    )


# ---------------------------------------------------------------------------
# Knowledge-condition audit


@dataclass
class AuditViolation:
    kind: str  # fires_without_condition | missed_condition | value_mismatch
    agent: int
    time: int
    obs: tuple[int, ...]
    table_action: int
    condition_action: int


@dataclass
class AuditReport:
    violations: list[AuditViolation] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations

    def kinds(self) -> set[str]:
        return {v.kind for v in self.violations}

    def to_text(self, params: Optional[InstanceParams] = None) -> str:
        if self.passed:
            return "table implements the knowledge conditions exactly"
        lines = [f"{len(self.violations)} violation(s)"]
        for v in self.violations:
            obs = (
                exc.render_obs(params.exchange, v.obs, params.n, params.k)
                if params is not None
                else str(v.obs)
            )
            lines.append(
                f"  {v.kind}: agent={v.agent} time={v.time} {obs} "
                f"table={render_action(v.table_action)} "
                f"condition={render_action(v.condition_action)}"
            )
        return "\n".join(lines)


def earliest_knowledge_audit(
    system: LayeredSystem, table: DecisionTable, kbp: KbpSpec
) -> AuditReport:
    """Does the table fire exactly when the knowledge conditions first hold?

    Recomputes the undecided-reachable domain induced by the *table's* own
    fires, evaluates the conditions there, and reports disagreements:
    a fire where the condition is false (fires_without_condition), silence
    where it is true (missed_condition — a late protocol), or a fire with
    the wrong value.
    """
    run = _Run(system, table)
    sys_ = system
    n = system.params.n
    report = AuditReport()
    undecided = np.ones((sys_.layer_size(0), n), dtype=bool)
    for m in range(sys_.num_layers - 1):
        mask = undecided & sys_.eligible_masks(m)
        if system.params.info.tracks_decisions:
            decided = np.stack(
                [
                    sys_.obs_matrix(m, i)[:, exc.TRACK_DECIDED] == 1
                    for i in range(n)
                ],
                axis=1,
            )
            mask &= ~decided
        fires = np.where(mask, run.raw(m), NOOP).astype(np.int8)
        cond = prescribed_actions(sys_, m, mask, kbp)
        mismatch = (fires != cond) & mask
        if mismatch.any():
            for i in range(n):
                idx = np.flatnonzero(mismatch[:, i])
                if idx.size == 0:
                    continue
                obs = sys_.obs_matrix(m, i)[idx]
                uniq, first = np.unique(obs, axis=0, return_index=True)
                for g in range(uniq.shape[0]):
                    s = int(idx[first[g]])
                    ta, ca = int(fires[s, i]), int(cond[s, i])
                    if ta == NOOP:
                        kind = "missed_condition"
                    elif ca == NOOP:
                        kind = "fires_without_condition"
                    else:
                        kind = "value_mismatch"
                    report.violations.append(
                        AuditViolation(
                            kind=kind,
                            agent=i,
                            time=m,
                            obs=tuple(int(x) for x in uniq[g]),
                            table_action=ta,
                            condition_action=ca,
                        )
                    )
        # advance the undecided-reachable domain along the table's fires
        e = sys_.edges[m]
        keep = undecided[e[:, 0]] & (fires[e[:, 0]] == NOOP)
        nxt = np.zeros((sys_.layer_size(m + 1), n), dtype=bool)
        for i in range(n):
            hits = e[:, 1][keep[:, i]]
            if hits.size:
                nxt[hits, i] = True
        undecided = nxt
    return report


# ---------------------------------------------------------------------------
# Decide-time hypotheses (closed-form conjectures about when a table fires)


_ALLOWED_AST = (
    ast.Expression,
    ast.BoolOp,
    ast.And,
    ast.Or,
    ast.UnaryOp,
    ast.Not,
    ast.USub,
    ast.BinOp,
    ast.Add,
    ast.Sub,
    ast.Mult,
    ast.FloorDiv,
    ast.Mod,
    ast.Compare,
    ast.Eq,
    ast.NotEq,
    ast.Lt,
    ast.LtE,
    ast.Gt,
    ast.GtE,
    ast.Name,
    ast.Load,
    ast.Constant,
)


class HypothesisError(ValueError):
    """Malformed decide-time hypothesis expression."""


def parse_hypothesis(text: str) -> ast.Expression:
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as err:
        raise HypothesisError(f"cannot parse hypothesis: {err}") from None
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED_AST):
            raise HypothesisError(
                f"operator not allowed in hypotheses: {type(node).__name__}"
            )
        if isinstance(node, ast.Constant) and not isinstance(
            node.value, (int, bool)
        ):
            raise HypothesisError(f"constant not allowed: {node.value!r}")
    return tree


def _hyp_value(node: ast.AST, env: dict[str, int]):
    if isinstance(node, ast.Expression):
        return _hyp_value(node.body, env)
    if isinstance(node, ast.BoolOp):
        vals = [bool(_hyp_value(v, env)) for v in node.values]
        return all(vals) if isinstance(node.op, ast.And) else any(vals)
    if isinstance(node, ast.UnaryOp):
        val = _hyp_value(node.operand, env)
        return (not val) if isinstance(node.op, ast.Not) else -val
    if isinstance(node, ast.BinOp):
        lhs, rhs = _hyp_value(node.left, env), _hyp_value(node.right, env)
        if isinstance(node.op, ast.Add):
            return lhs + rhs
        if isinstance(node.op, ast.Sub):
            return lhs - rhs
        if isinstance(node.op, ast.Mult):
            return lhs * rhs
        if isinstance(node.op, ast.FloorDiv):
            return lhs // rhs
        return lhs % rhs
    if isinstance(node, ast.Compare):
        lhs = _hyp_value(node.left, env)
        for op, rhs_node in zip(node.ops, node.comparators):
            rhs = _hyp_value(rhs_node, env)
            ok = {
                ast.Eq: lhs == rhs,
                ast.NotEq: lhs != rhs,
                ast.Lt: lhs < rhs,
                ast.LtE: lhs <= rhs,
                ast.Gt: lhs > rhs,
                ast.GtE: lhs >= rhs,
            }[type(op)]
            if not ok:
                return False
            lhs = rhs
        return True
    if isinstance(node, ast.Name):
        try:
            return env[node.id]
        except KeyError:
            raise HypothesisError(
                f"unknown variable {node.id!r}; available: {sorted(env)}"
            ) from None
    if isinstance(node, ast.Constant):
        return node.value
    raise HypothesisError(f"cannot evaluate {type(node).__name__}")


@dataclass
class HypothesisMismatch:
    agent: int
    time: int
    obs: tuple[int, ...]
    fired: bool
    predicted: bool


@dataclass
class HypothesisReport:
    expr: str
    mismatches: list[HypothesisMismatch] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.mismatches

    def to_text(self, params: Optional[InstanceParams] = None) -> str:
        if self.passed:
            return f"hypothesis holds: table fires exactly where [{self.expr}]"
        lines = [f"hypothesis fails at {len(self.mismatches)} observation(s)"]
        for mm in self.mismatches:
            obs = (
                exc.render_obs(params.exchange, mm.obs, params.n, params.k)
                if params is not None
                else str(mm.obs)
            )
            what = (
                "fires but hypothesis says no"
                if mm.fired
                else "does not fire but hypothesis says yes"
            )
            lines.append(f"  agent={mm.agent} time={mm.time} {obs}: {what}")
        return "\n".join(lines)


def decide_time_hypothesis(table: DecisionTable, expr: str) -> HypothesisReport:
    """Check: the table fires exactly at the observations satisfying the
    expression (variables: the exchange's observation fields plus n, t, k,
    time).  Because the table is total over the undecided-reachable domain,
    this is the run-level statement 'every agent decides at the first time
    the predicate holds'."""
    tree = parse_hypothesis(expr)
    p = table.params
    names = exc.obs_field_names(p.exchange, p.n, p.k)
    report = HypothesisReport(expr=expr)
    for (agent, time, obs), action in sorted(table.entries.items()):
        values = exc.obs_field_values(p.exchange, obs, p.n, p.k)
        env = dict(zip(names, values))
        env.update(n=p.n, t=p.t, k=p.k, time=time)
        predicted = bool(_hyp_value(tree, env))
        fired = action != NOOP
        if predicted != fired:
            report.mismatches.append(
                HypothesisMismatch(
                    agent=agent, time=time, obs=obs, fired=fired, predicted=predicted
                )
            )
    return report
