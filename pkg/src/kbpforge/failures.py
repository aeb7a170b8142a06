"""Failure models for synchronous rounds: crash failures and sending omissions.

Both models are exposed as generators of per-round nondeterministic outcomes.
An outcome is a pair (DeliveryMatrix, successor FailureEnv): which of the
messages sent this round arrive, and how the failure bookkeeping advances.

Conventions (normative for the whole package):

* A failing sender can omit messages only toward *other* agents; delivery of
  an agent's round message to itself always succeeds.  This keeps a live
  agent's received-message count at least 1 in every round.
* Crash model: an agent that crashes during round m still performs its round-m
  action and sends to itself plus an arbitrary subset of the others.  Its
  status is CRASHING in the state at time m and CRASHED afterwards; it sends
  nothing in any later round.  Faultiness is manifested, not declared: an
  agent that never crashes within the horizon counts as nonfaulty.
* Sending-omissions model: the faulty set is fixed in the initial state and
  never changes.  A faulty agent chooses, independently every round, which of
  the other agents receive its message.  Receiving is perfect for everyone.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

CRASH = "crash"
SOMISSIONS = "somissions"
FAILURE_MODELS = (CRASH, SOMISSIONS)

# Crash statuses, also used verbatim in the integer row encoding.
ACTIVE = 0
CRASHING = 1
CRASHED = 2

STATUS_NAMES = {ACTIVE: "ACTIVE", CRASHING: "CRASHING", CRASHED: "CRASHED"}


@dataclass(frozen=True)
class FailureEnv:
    """Environment half of a global state: failure bookkeeping for one model.

    ``status`` is used by the crash model (one entry per agent), ``faulty``
    by the sending-omissions model.  ``budget_used`` counts agents that have
    begun failing and never exceeds ``t``.
    """

    model: str
    n: int
    t: int
    status: tuple[int, ...] = ()
    faulty: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        if self.model not in FAILURE_MODELS:
            raise ValueError(f"unknown failure model: {self.model!r}")
        if self.model == CRASH:
            if len(self.status) != self.n:
                raise ValueError("crash env needs one status per agent")
            if any(s not in STATUS_NAMES for s in self.status):
                raise ValueError("bad crash status value")
        else:
            if any(a < 0 or a >= self.n for a in self.faulty):
                raise ValueError("faulty agent id out of range")
        if self.budget_used > self.t:
            raise ValueError("failure budget exceeded")

    @property
    def budget_used(self) -> int:
        if self.model == CRASH:
            return sum(1 for s in self.status if s != ACTIVE)
        return len(self.faulty)

    def nonfaulty(self) -> frozenset[int]:
        """Agents currently counted as nonfaulty.

        Crash: agents that have never crashed (status ACTIVE).  Omissions:
        agents outside the designated faulty set, whether or not any omission
        actually happened.
        """
        if self.model == CRASH:
            return frozenset(i for i, s in enumerate(self.status) if s == ACTIVE)
        return frozenset(range(self.n)) - self.faulty

    def to_row(self) -> tuple[int, ...]:
        if self.model == CRASH:
            return self.status
        return tuple(1 if i in self.faulty else 0 for i in range(self.n))

    @classmethod
    def from_row(cls, model: str, t: int, row: tuple[int, ...]) -> "FailureEnv":
        n = len(row)
        if model == CRASH:
            return cls(model=model, n=n, t=t, status=tuple(int(x) for x in row))
        return cls(
            model=model,
            n=n,
            t=t,
            faulty=frozenset(i for i, x in enumerate(row) if x),
        )


@dataclass(frozen=True)
class DeliveryMatrix:
    """Boolean sender x receiver matrix for one round; true = delivered.

    ``rows[s]`` is a bitmask over receivers for sender ``s``.
    """

    n: int
    rows: tuple[int, ...]

    def delivered(self, sender: int, receiver: int) -> bool:
        return bool(self.rows[sender] >> receiver & 1)

    def senders_to(self, receiver: int) -> int:
        """Bitmask of senders whose message reaches ``receiver``."""
        mask = 0
        for s in range(self.n):
            if self.rows[s] >> receiver & 1:
                mask |= 1 << s
        return mask

    @classmethod
    def full(cls, n: int) -> "DeliveryMatrix":
        return cls(n=n, rows=(((1 << n) - 1),) * n)


def initial_envs(model: str, n: int, t: int) -> list[FailureEnv]:
    """All failure environments allowed in an initial global state.

    Crash failures are manifested in rounds, so the single all-ACTIVE
    environment is initial.  For sending omissions every faulty set of size
    at most ``t`` is a distinct initial environment.
    """
    if model == CRASH:
        return [FailureEnv(model=CRASH, n=n, t=t, status=(ACTIVE,) * n)]
    envs = []
    for size in range(min(t, n) + 1):
        for combo in itertools.combinations(range(n), size):
            envs.append(FailureEnv(model=SOMISSIONS, n=n, t=t, faulty=frozenset(combo)))
    return envs


def is_failed_sender(env: FailureEnv, agent: int) -> bool:
    """True iff the agent can omit messages in the upcoming round."""
    if env.model == CRASH:
        return env.status[agent] != ACTIVE
    return agent in env.faulty


def _receiver_subsets(n: int, sender: int) -> list[int]:
    """All receiver bitmasks a failing sender may choose: self plus any
    subset of the others, in a fixed deterministic order."""
    others = [r for r in range(n) if r != sender]
    masks = []
    for bits in range(1 << len(others)):
        mask = 1 << sender
        for pos, r in enumerate(others):
            if bits >> pos & 1:
                mask |= 1 << r
        masks.append(mask)
    return masks


def round_outcomes_rows(
    model: str, t: int, env_row: tuple[int, ...]
) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
    """Row-encoded nondeterministic outcomes for one round.

    Returns a deterministically ordered, deduplicated list of pairs
    ``(recv_masks, env_row')`` where ``recv_masks[r]`` is the bitmask of
    senders whose round message reaches receiver ``r``.
    """
    n = len(env_row)
    outcomes: list[tuple[tuple[int, ...], tuple[int, ...]]] = []
    if model == CRASH:
        active = [i for i in range(n) if env_row[i] == ACTIVE]
        ever_failed = n - len(active)
        budget = t - ever_failed
        aged = tuple(CRASHED if s != ACTIVE else ACTIVE for s in env_row)
        base_rows = [0] * n
        for s in range(n):
            if env_row[s] == ACTIVE:
                base_rows[s] = (1 << n) - 1
        for size in range(min(budget, len(active)) + 1):
            for crashers in itertools.combinations(active, size):
                env2 = list(aged)
                for c in crashers:
                    env2[c] = CRASHING
                choice_lists = [_receiver_subsets(n, c) for c in crashers]
                for choice in itertools.product(*choice_lists):
                    rows = list(base_rows)
                    for c, mask in zip(crashers, choice):
                        rows[c] = mask
                    recv = tuple(
                        sum(1 << s for s in range(n) if rows[s] >> r & 1)
                        for r in range(n)
                    )
                    outcomes.append((recv, tuple(env2)))
    else:
        faulty = [i for i in range(n) if env_row[i]]
        rows = [(1 << n) - 1] * n
        choice_lists = [_receiver_subsets(n, f) for f in faulty]
        for choice in itertools.product(*choice_lists):
            cur = list(rows)
            for f, mask in zip(faulty, choice):
                cur[f] = mask
            recv = tuple(
                sum(1 << s for s in range(n) if cur[s] >> r & 1) for r in range(n)
            )
            outcomes.append((recv, env_row))
    seen: dict[tuple, None] = {}
    for out in outcomes:
        seen.setdefault(out, None)
    return list(seen)


def round_outcomes(env: FailureEnv) -> list[tuple[DeliveryMatrix, FailureEnv]]:
    """All nondeterministic outcomes of one communication round.

    Each outcome fixes which messages sent this round are delivered and the
    successor failure environment.  Outcomes producing identical
    (matrix, environment) pairs are merged.
    """
    result = []
    for recv, env2_row in round_outcomes_rows(env.model, env.t, env.to_row()):
        n = env.n
        rows = tuple(
            sum(1 << r for r in range(n) if recv[r] >> s & 1) for s in range(n)
        )
        result.append(
            (
                DeliveryMatrix(n=n, rows=rows),
                FailureEnv.from_row(env.model, env.t, env2_row),
            )
        )
    return result
