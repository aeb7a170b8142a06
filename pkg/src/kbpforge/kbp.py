"""Decision protocols as tables, and their synthesis from knowledge conditions.

A :class:`DecisionTable` maps (agent, time, observation) to an action and is
total over exactly the *decision domain* of its generating system: the
observations an agent can hold while it is still eligible to act and has not
yet decided on some run.  Applying a table to an observation outside that
domain is a hard error — it means the table is being used with a system it
was not derived for, and silent noops would hide that.

Two condition families are synthesizable:

* ``sba``: decide the least value v with Believes(i, CommonN(ExistsVote(v))) —
  the agreement conditions whose implementations are simultaneous-agreement
  protocols.
* ``eba0``: decide 0 on (own vote 0) or Knows(i, some JustDecided(j, 0));
  otherwise decide 1 on Knows(i, no agent just decided 0, is deciding 0 now,
  or can still be the first to decide 0) — evaluated with decide-0 actions of
  the same layer staged first, so the Deciding atoms are well-defined.

Synthesis walks the layers forward; a condition under the clock semantics is
a function of (time, observation), so recording its value per reachable
observation yields the protocol's unique implementation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import exchanges as exc
from . import failures as flr
from .epistemic import (
    Believes,
    CommonN,
    Deciding,
    Evaluator,
    ExistsVote,
    FormulaError,
    JustDecided,
    Knows,
    Not,
    VoteIs,
    conj,
    disj,
)
from .model import InstanceParams, LayeredSystem, SystemBuilder

NOOP = 0


def decide(value: int) -> int:
    """Action code for deciding ``value`` (0 is reserved for noop)."""
    return 1 + value


def action_value(action: int) -> Optional[int]:
    """Decided value of an action code, or None for noop."""
    return None if action == NOOP else action - 1


def render_action(action: int) -> str:
    return "noop" if action == NOOP else f"decide {action - 1}"


class KbpError(ValueError):
    """Unsupported condition-family/exchange pairing or malformed rule."""


class TableDomainError(LookupError):
    """A table was applied to an observation outside its decision domain."""


# ---------------------------------------------------------------------------
# Condition families


@dataclass(frozen=True)
class KbpSpec:
    """A named family of knowledge conditions; ties break toward the least
    value (ascending value order)."""

    kind: str  # "sba" | "eba0"

    def __post_init__(self) -> None:
        if self.kind not in ("sba", "eba0"):
            raise KbpError(f"unknown condition family: {self.kind!r}")


SBA = KbpSpec("sba")
EBA0 = KbpSpec("eba0")

_KBP_ALIASES = {"sba": SBA, "eba0": EBA0, "eba": EBA0}


def kbp_by_name(name: str) -> KbpSpec:
    try:
        return _KBP_ALIASES[name.lower()]
    except KeyError:
        raise KbpError(f"unknown condition family: {name!r}") from None


def _require_pairing(params: InstanceParams, kbp: KbpSpec) -> None:
    if kbp.kind == "eba0" and not params.info.tracks_decisions:
        raise KbpError(
            "eba0 conditions need a decision-tracking exchange "
            f"(emin/ebasic), not {params.exchange!r}"
        )


def prescribed_actions(
    system: LayeredSystem, m: int, mask: np.ndarray, kbp: KbpSpec
) -> np.ndarray:
    """Actions the knowledge conditions prescribe on layer ``m``.

    ``mask[s, i]`` marks where agent i may act (eligible, undecided,
    reachable-undecided); actions are staged only there.  For ``eba0`` the
    decide-0 actions are fixed first and resolve the Deciding atoms that the
    decide-1 condition quantifies over.
    """
    params = system.params
    _require_pairing(params, kbp)
    n = params.n
    size = system.layer_size(m)
    out = np.zeros((size, n), dtype=np.int8)

    if kbp.kind == "sba":
        ev = Evaluator(system)
        remaining = mask.copy()
        for v in range(params.k):
            common = CommonN(ExistsVote(v))
            for i in range(n):
                cond = ev.eval(Believes(i, common), m)
                fire = remaining[:, i] & cond
                out[fire, i] = decide(v)
                remaining[fire, i] = False
        return out

    # eba0
    staged0 = np.zeros((size, n), dtype=bool)

    def resolver(layer: int, agent: int, value: int) -> np.ndarray:
        if layer != m:
            raise FormulaError("Deciding atom evaluated outside the staged layer")
        if value == 0:
            return staged0[:, agent]
        return np.zeros(size, dtype=bool)

    ev = Evaluator(system, deciding=resolver)
    some_jd0 = disj(*[JustDecided(j, 0) for j in range(n)])
    for i in range(n):
        cond0 = ev.eval(disj(VoteIs(i, 0), Knows(i, some_jd0)), m)
        staged0[:, i] = mask[:, i] & cond0
    out[staged0] = decide(0)
    no_zero_decider = conj(
        *[Not(disj(JustDecided(j, 0), Deciding(j, 0))) for j in range(n)]
    )
    for i in range(n):
        cond1 = ev.eval(Knows(i, no_zero_decider), m)
        fire1 = mask[:, i] & ~staged0[:, i] & cond1
        out[fire1, i] = decide(1)
    return out


# ---------------------------------------------------------------------------
# Decision tables


@dataclass
class DecisionTable:
    """Map (agent, time, observation row) -> action code, total over the
    decision domain of its generating system.

    ``origin`` records how the table came to be ("synth:sba",
    "rule:emin_impl", "noop", "file:..."); behavioral comparisons ignore it.
    A ``default_noop`` table is the everywhere-noop protocol and skips the
    domain bookkeeping entirely.
    """

    params: InstanceParams
    origin: str
    entries: dict[tuple[int, int, tuple[int, ...]], int] = field(default_factory=dict)
    default_noop: bool = False

    # -- queries --

    def lookup(self, agent: int, time: int, obs: tuple[int, ...]) -> int:
        if self.default_noop:
            return NOOP
        try:
            return self.entries[(agent, time, tuple(obs))]
        except KeyError:
            rendered = exc.render_obs(
                self.params.exchange, obs, self.params.n, self.params.k
            )
            raise TableDomainError(
                f"observation outside the table's decision domain: "
                f"agent={agent} time={time} {rendered}"
            ) from None

    def decide_entries(self) -> dict[tuple[int, int, tuple[int, ...]], int]:
        return {key: a for key, a in self.entries.items() if a != NOOP}

    def decide_times(self) -> set[int]:
        return {time for (_, time, _), a in self.entries.items() if a != NOOP}

    def same_behavior(self, other: "DecisionTable") -> bool:
        return self.signature() == other.signature() and (
            self.entries == other.entries
            if not (self.default_noop or other.default_noop)
            else self.decide_entries() == other.decide_entries()
        )

    def signature(self) -> tuple:
        p = self.params
        return (p.exchange, p.failure_model, p.n, p.t, p.k, p.horizon)

    def diff_entries(self, other: "DecisionTable") -> list[str]:
        """Human-readable mismatches against another table (for messages)."""
        out = []
        keys = sorted(set(self.entries) | set(other.entries))
        for key in keys:
            a = self.entries.get(key)
            b = other.entries.get(key)
            if a != b:
                agent, time, obs = key
                rendered = exc.render_obs(
                    self.params.exchange, obs, self.params.n, self.params.k
                )
                left = "absent" if a is None else render_action(a)
                right = "absent" if b is None else render_action(b)
                out.append(
                    f"agent={agent} time={time} {rendered}: {left} vs {right}"
                )
        return out

    # -- application --

    def fires_matrix(self, m: int, rows: np.ndarray) -> np.ndarray:
        """Raw table actions per (state, agent), NOOP outside the domain.

        Verification applies its own eligibility/first-hit gating, so absent
        observations are soft noops here, unlike :meth:`lookup`.
        """
        n = self.params.n
        out = np.zeros((rows.shape[0], n), dtype=np.int8)
        if self.default_noop or not self.entries:
            return out
        for i in range(n):
            obs = rows[:, self.params.local_slice(i)]
            uniq, inv = np.unique(obs, axis=0, return_inverse=True)
            acts = np.array(
                [self.entries.get((i, m, tuple(row)), NOOP) for row in uniq],
                dtype=np.int8,
            )
            out[:, i] = acts[inv]
        return out

    def resolve_actions(self, m: int, rows: np.ndarray) -> np.ndarray:
        """Actions taken at layer ``m`` during system construction.

        Only decision-tracking exchanges need this (their messages depend on
        actions).  Eligible undecided agents must be in the domain — a miss
        raises :class:`TableDomainError`.
        """
        p = self.params
        if not p.info.tracks_decisions:
            raise KbpError(
                f"exchange {p.exchange!r} does not track decisions; "
                "construction does not consume actions"
            )
        size = rows.shape[0]
        out = np.zeros((size, p.n), dtype=np.int8)
        if self.default_noop:
            return out
        env = rows[:, p.n : 2 * p.n]
        eligible = env == flr.ACTIVE if p.failure_model == flr.CRASH else env >= 0
        for i in range(p.n):
            obs = rows[:, p.local_slice(i)]
            mask = eligible[:, i] & (obs[:, exc.TRACK_DECIDED] == 0)
            idx = np.flatnonzero(mask)
            if idx.size == 0:
                continue
            uniq, inv = np.unique(obs[idx], axis=0, return_inverse=True)
            acts = np.array(
                [self.lookup(i, m, tuple(row)) for row in uniq], dtype=np.int8
            )
            out[idx, i] = acts[inv]
        return out

    # -- serialization --

    def to_text(self) -> str:
        p = self.params
        lines = [
            "# decision table v1",
            f"params: exchange={p.exchange} failures={p.failure_model} "
            f"n={p.n} t={p.t} k={p.k} horizon={p.horizon}",
            f"origin: {self.origin}",
        ]
        if self.default_noop:
            lines.append("total-noop: true")
            return "\n".join(lines) + "\n"
        for (agent, time, obs) in sorted(self.entries):
            action = self.entries[(agent, time, obs)]
            rendered = exc.render_obs(p.exchange, obs, p.n, p.k)
            lines.append(
                f"agent={agent} time={time} {rendered} -> {render_action(action)}"
            )
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "DecisionTable":
        params: Optional[InstanceParams] = None
        origin = "file"
        entries: dict[tuple[int, int, tuple[int, ...]], int] = {}
        default_noop = False
        for raw in text.splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("params:"):
                fields = dict(
                    part.split("=", 1) for part in line[len("params:"):].split()
                )
                params = InstanceParams(
                    n=int(fields["n"]),
                    t=int(fields["t"]),
                    k=int(fields["k"]),
                    horizon=int(fields["horizon"]),
                    exchange=fields["exchange"],
                    failure_model=fields["failures"],
                )
                continue
            if line.startswith("origin:"):
                origin = line[len("origin:"):].strip()
                continue
            if line.startswith("total-noop:"):
                default_noop = line[len("total-noop:"):].strip() == "true"
                continue
            if params is None:
                raise ValueError("table text must declare params before entries")
            head, _, action_text = line.partition("->")
            tokens = head.split()
            if len(tokens) < 2 or not tokens[0].startswith("agent="):
                raise ValueError(f"malformed table line: {line!r}")
            agent = int(tokens[0][len("agent="):])
            time = int(tokens[1][len("time="):])
            obs = exc.parse_obs(
                params.exchange, " ".join(tokens[2:]), params.n, params.k
            )
            action_text = action_text.strip()
            if action_text == "noop":
                action = NOOP
            elif action_text.startswith("decide "):
                action = decide(int(action_text[len("decide "):]))
            else:
                raise ValueError(f"malformed action: {action_text!r}")
            entries[(agent, time, obs)] = action
        if params is None:
            raise ValueError("table text has no params line")
        return cls(
            params=params, origin=origin, entries=entries, default_noop=default_noop
        )


def noop_table(params: InstanceParams) -> DecisionTable:
    return DecisionTable(params=params, origin="noop", default_noop=True)


# ---------------------------------------------------------------------------
# Shared construction engine: walk layers forward, record the staged action
# of every domain observation, prune the domain along decide edges.


@dataclass
class SynthesisResult:
    table: DecisionTable
    system: LayeredSystem


StageFn = Callable[[LayeredSystem, int, np.ndarray], np.ndarray]


def _drive(
    params: InstanceParams,
    stage_fn: StageFn,
    origin: str,
    impl: Optional[str] = None,
) -> SynthesisResult:
    info = params.info
    n = params.n
    builder = SystemBuilder(params, impl=impl)
    entries: dict[tuple[int, int, tuple[int, ...]], int] = {}
    undecided_reach = np.ones((builder.layers[0].shape[0], n), dtype=bool)

    for m in range(params.horizon):
        view = LayeredSystem(params, builder.layers, builder.edges)
        rows = builder.layers[m]
        mask = undecided_reach & view.eligible_masks(m)
        if info.tracks_decisions:
            decided = np.stack(
                [
                    view.obs_matrix(m, i)[:, exc.TRACK_DECIDED] == 1
                    for i in range(n)
                ],
                axis=1,
            )
            mask &= ~decided
        staged = stage_fn(view, m, mask)
        if staged[~mask].any():
            raise AssertionError("stage function acted outside its mask")

        for i in range(n):
            idx = np.flatnonzero(mask[:, i])
            if idx.size == 0:
                continue
            obs = view.obs_matrix(m, i)[idx]
            uniq, inv = np.unique(obs, axis=0, return_inverse=True)
            acts = staged[idx, i]
            lo = np.full(uniq.shape[0], np.iinfo(np.int8).max, dtype=np.int8)
            hi = np.full(uniq.shape[0], np.iinfo(np.int8).min, dtype=np.int8)
            np.minimum.at(lo, inv, acts)
            np.maximum.at(hi, inv, acts)
            if not np.array_equal(lo, hi):
                raise AssertionError(
                    "staged action is not a function of the observation"
                )
            for g in range(uniq.shape[0]):
                entries[(i, m, tuple(int(x) for x in uniq[g]))] = int(lo[g])

        builder.step(staged if info.transmits_decisions else None)
        edges = builder.edges[-1]
        src, dst = edges[:, 0], edges[:, 1]
        carried = undecided_reach[src] & (staged[src] == NOOP)
        nxt = np.zeros((builder.layers[-1].shape[0], n), dtype=bool)
        for i in range(n):
            hits = dst[carried[:, i]]
            if hits.size:
                nxt[np.unique(hits), i] = True
        undecided_reach = nxt

    table = DecisionTable(params=params, origin=origin, entries=entries)
    system = builder.finish(decisions=table)
    return SynthesisResult(table=table, system=system)


def synthesize(
    params: InstanceParams, kbp: KbpSpec, impl: Optional[str] = None
) -> SynthesisResult:
    """Unique implementation of a condition family over this instance."""
    _require_pairing(params, kbp)

    def stage(view: LayeredSystem, m: int, mask: np.ndarray) -> np.ndarray:
        return prescribed_actions(view, m, mask, kbp)

    return _drive(params, stage, origin=f"synth:{kbp.kind}", impl=impl)


# ---------------------------------------------------------------------------
# Concrete baseline protocols (rules over a single observation)

RuleFn = Callable[[exc.LocalState, InstanceParams], int]


def _rule_floodset_textbook(local: exc.LocalState, p: InstanceParams) -> int:
    """Decide the least value seen, at time t+1 exactly."""
    if local.time == p.t + 1:
        return decide(min(v for v, seen in enumerate(local.w) if seen))
    return NOOP


def _rule_dm_concrete(local: exc.LocalState, p: InstanceParams) -> int:
    """Decide once enough failures are exposed that waiting longer cannot
    reveal a new one: first time with time + waste >= t+1; decide 0 iff a
    zero was ever reported."""
    if local.time + local.waste >= p.t + 1:
        return decide(0) if local.exists0 else decide(1)
    return NOOP


def _rule_emin_impl(local: exc.LocalState, p: InstanceParams) -> int:
    """Decide 0 as soon as own vote is 0 or a decide-0 message arrived;
    otherwise decide 1 at time t+1."""
    if local.init == 0 or local.jd == 0:
        return decide(0)
    if local.time == p.t + 1:
        return decide(1)
    return NOOP


def _rule_ebasic_impl(local: exc.LocalState, p: InstanceParams) -> int:
    """Decide 0 as soon as own vote is 0 or a decide-0 message arrived;
    decide 1 once vote-1 tags outnumber the agents that could still decide 0
    (num1 > n - time) or a decide-1 message arrived."""
    if local.init == 0 or local.jd == 0:
        return decide(0)
    if local.num1 > p.n - local.time or local.jd == 1:
        return decide(1)
    return NOOP


BASELINES: dict[str, RuleFn] = {
    "floodset_textbook": _rule_floodset_textbook,
    "dm_concrete": _rule_dm_concrete,
    "emin_impl": _rule_emin_impl,
    "ebasic_impl": _rule_ebasic_impl,
}


def as_table(
    baseline: str, params: InstanceParams, impl: Optional[str] = None
) -> SynthesisResult:
    """Materialize a named baseline rule over its instance's decision domain."""
    try:
        rule = BASELINES[baseline]
    except KeyError:
        raise KbpError(
            f"unknown baseline {baseline!r}; known: {sorted(BASELINES)}"
        ) from None

    def stage(view: LayeredSystem, m: int, mask: np.ndarray) -> np.ndarray:
        size = view.layer_size(m)
        out = np.zeros((size, params.n), dtype=np.int8)
        for i in range(params.n):
            idx = np.flatnonzero(mask[:, i])
            if idx.size == 0:
                continue
            obs = view.obs_matrix(m, i)[idx]
            uniq, inv = np.unique(obs, axis=0, return_inverse=True)
            acts = np.empty(uniq.shape[0], dtype=np.int8)
            for g in range(uniq.shape[0]):
                local = exc.local_from_row(
                    params.exchange, m, uniq[g], params.n, params.k
                )
                try:
                    action = rule(local, params)
                except AttributeError as err:
                    raise KbpError(
                        f"baseline {baseline!r} reads a variable absent from "
                        f"exchange {params.exchange!r}: {err}"
                    ) from None
                if not NOOP <= action <= params.k:
                    raise KbpError(
                        f"baseline {baseline!r} produced invalid action {action}"
                    )
                acts[g] = action
            out[idx, i] = acts[inv]
        return out

    return _drive(params, stage, origin=f"rule:{baseline}", impl=impl)


# ---------------------------------------------------------------------------
# Human-readable condition report


def _render_value_set(name: str, fire_vals: set, domain_vals: set) -> str:
    ordered = sorted(domain_vals)
    fire = sorted(fire_vals)
    if len(fire) == 1 and domain_vals <= {0, 1}:
        return f"{name} = {fire[0]}"
    if fire == ordered[: len(fire)]:
        return f"{name} <= {fire[-1]}"
    if fire == ordered[len(ordered) - len(fire):]:
        return f"{name} >= {fire[0]}"
    if len(fire) == 1:
        return f"{name} = {fire[0]}"
    return f"{name} in {{{', '.join(str(v) for v in fire)}}}"


def _describe_fires(
    exchange: str, n: int, k: int, fire_obs: list[tuple], all_obs: list[tuple]
) -> str:
    """Describe which domain observations fire, as field constraints.

    Greedy cover: repeatedly take the single-field constraint that covers
    the most remaining firing observations without touching a non-firing
    one; left-overs are spelled out in full.
    """
    if len(fire_obs) == len(all_obs):
        return "always"
    names = exc.obs_field_names(exchange, n, k)

    def expand(row: tuple) -> list[int]:
        return exc.obs_field_values(exchange, row, n, k)

    fire = {row: expand(row) for row in fire_obs}
    rest = [expand(row) for row in all_obs if row not in fire]
    disjuncts: list[str] = []
    remaining = dict(fire)
    while remaining:
        best: Optional[tuple[int, str, set[tuple]]] = None
        for f, name in enumerate(names):
            fire_vals = {vals[f] for vals in remaining.values()}
            rest_vals = {vals[f] for vals in rest}
            candidate_vals = fire_vals - rest_vals
            if not candidate_vals:
                continue
            covered = {
                row for row, vals in remaining.items() if vals[f] in candidate_vals
            }
            if best is None or len(covered) > len(best[2]):
                label = _render_value_set(
                    name,
                    candidate_vals,
                    candidate_vals | rest_vals | {vals[f] for vals in fire.values()},
                )
                best = (f, label, covered)
        if best is None:
            for row in sorted(remaining):
                disjuncts.append("(" + exc.render_obs(exchange, row, n, k) + ")")
            break
        _, label, covered = best
        disjuncts.append(label)
        for row in covered:
            del remaining[row]
    return " | ".join(disjuncts)


def condition_report(table: DecisionTable) -> str:
    """Per (agent, time, value): the observation constraints under which the
    table decides — the readable summary of a synthesized implementation.
    Empty for a table with no decide entries."""
    p = table.params
    if table.default_noop or not table.decide_entries():
        return ""
    by_agent_time: dict[tuple[int, int], dict[tuple, int]] = {}
    for (agent, time, obs), action in table.entries.items():
        by_agent_time.setdefault((agent, time), {})[obs] = action
    lines: list[str] = []
    for agent in sorted({a for a, _ in by_agent_time}):
        lines.append(f"agent {agent}")
        for (a, time) in sorted(key for key in by_agent_time if key[0] == agent):
            group = by_agent_time[(a, time)]
            all_obs = sorted(group)
            values = sorted({act for act in group.values() if act != NOOP})
            if not values:
                continue
            parts = []
            for act in values:
                fire_obs = sorted(o for o, x in group.items() if x == act)
                desc = _describe_fires(p.exchange, p.n, p.k, fire_obs, all_obs)
                parts.append(f"{render_action(act)} when {desc}")
            lines.append(f"  time {time}: " + "; ".join(parts))
    return "\n".join(lines) + "\n"
