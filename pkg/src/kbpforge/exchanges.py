"""The six information-exchange protocols.

Each exchange fixes the per-agent local state layout, the broadcast message
an agent emits each round, and the local-state update applied on receipt.
Four exchanges are decision-blind (their messages and updates ignore the
round's decide actions entirely); the last two transmit decisions and track
a decided flag in local state:

* ``floodset``   — a seen-values array, unioned on every receipt.
* ``count``      — floodset plus the number of messages received last round.
* ``diff``       — count plus the previous round's count.
* ``dworkmoses`` — fault-discovery bookkeeping (F/NF/RF sets, a seen-zero
  flag, and a running "waste" counter); binary values only.
* ``emin``       — decisions only: a decide(v) action broadcasts ``v`` once,
  in the round the decision is taken; ``jd`` records the value of any decide
  message received in the last round (0 wins over 1), and is overwritten
  every round.
* ``ebasic``     — emin plus: an undecided agent with initial value 1
  broadcasts a vote tag each round, and ``num1`` counts the tags received
  last round.

Local states also carry the current time; two agents' views are
indistinguishable exactly when these full local states are equal, so the
observable projection is the identity.

Row encoding: each local state maps to a fixed-width tuple of small ints
(time excluded; it is the layer index).  Value sets are bitmasks over values,
agent sets are bitmasks over agents, and "no value" is encoded as 2 in the
``jd``/``decision`` slots.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

FLOODSET = "floodset"
COUNT = "count"
DIFF = "diff"
DWORKMOSES = "dworkmoses"
EMIN = "emin"
EBASIC = "ebasic"

EXCHANGE_NAMES = (FLOODSET, COUNT, DIFF, DWORKMOSES, EMIN, EBASIC)

# Stable numeric ids shared with the expansion kernels.
EXCHANGE_IDS = {name: i for i, name in enumerate(EXCHANGE_NAMES)}

# jd / decision row slots use 2 for "no value" (values are 0 or 1 there).
NO_VALUE = 2

# Column layout of decision-tracking local blocks (emin / ebasic rows).
TRACK_INIT, TRACK_DECIDED, TRACK_JD, TRACK_DECISION = 0, 1, 2, 3

Action = Optional[int]  # None = noop, v = decide(v)


# ---------------------------------------------------------------------------
# Local states


@dataclass(frozen=True)
class FloodSetLocal:
    time: int
    w: tuple[bool, ...]  # w[v] = value v has been seen


@dataclass(frozen=True)
class CountLocal:
    time: int
    w: tuple[bool, ...]
    count: int  # messages received in the last round


@dataclass(frozen=True)
class DiffLocal:
    time: int
    w: tuple[bool, ...]
    count: int
    prev_count: int  # count of the round before last


@dataclass(frozen=True)
class DworkMosesLocal:
    time: int
    fset: frozenset[int]  # agents known faulty
    nf: frozenset[int]  # agents newly discovered faulty last round
    rf: frozenset[int]  # agents reported faulty by others
    exists0: bool  # some agent is known to have voted 0
    waste: int  # running max of |fset after round m| - m, floored at 0


@dataclass(frozen=True)
class EminLocal:
    time: int
    init: int
    decided: bool
    jd: Optional[int]  # value of a decide message received last round
    decision: Optional[int]  # own decision value once decided


@dataclass(frozen=True)
class EbasicLocal:
    time: int
    init: int
    decided: bool
    jd: Optional[int]
    decision: Optional[int]
    num1: int  # vote tags received last round


LocalState = Union[
    FloodSetLocal, CountLocal, DiffLocal, DworkMosesLocal, EminLocal, EbasicLocal
]


# ---------------------------------------------------------------------------
# Messages (broadcast: the same message goes to every receiver)


@dataclass(frozen=True)
class FloodMessage:
    sender: int
    w: tuple[bool, ...]


@dataclass(frozen=True)
class DmMessage:
    sender: int
    nf: frozenset[int]
    exists0: bool


@dataclass(frozen=True)
class DecideMessage:
    sender: int
    value: int


@dataclass(frozen=True)
class VoteOneMessage:
    """The (init, 1) tag an undecided 1-voter broadcasts in ``ebasic``."""

    sender: int


Message = Union[FloodMessage, DmMessage, DecideMessage, VoteOneMessage]


# ---------------------------------------------------------------------------
# Exchange metadata


@dataclass(frozen=True)
class ExchangeInfo:
    name: str
    requires_k2: bool
    tracks_decisions: bool  # decided/decision live in local state
    transmits_decisions: bool  # messages depend on decide actions

    def local_width(self, n: int, k: int) -> int:
        return _LOCAL_WIDTHS[self.name](n, k)


_LOCAL_WIDTHS = {
    FLOODSET: lambda n, k: 1,
    COUNT: lambda n, k: 2,
    DIFF: lambda n, k: 3,
    DWORKMOSES: lambda n, k: 5,
    EMIN: lambda n, k: 4,
    EBASIC: lambda n, k: 5,
}

EXCHANGES: dict[str, ExchangeInfo] = {
    FLOODSET: ExchangeInfo(FLOODSET, False, False, False),
    COUNT: ExchangeInfo(COUNT, False, False, False),
    DIFF: ExchangeInfo(DIFF, False, False, False),
    DWORKMOSES: ExchangeInfo(DWORKMOSES, True, False, False),
    EMIN: ExchangeInfo(EMIN, True, True, True),
    EBASIC: ExchangeInfo(EBASIC, True, True, True),
}


def exchange_info(name: str) -> ExchangeInfo:
    try:
        return EXCHANGES[name]
    except KeyError:
        raise ValueError(f"unknown exchange: {name!r}") from None


# ---------------------------------------------------------------------------
# Spec operations (object level)


def init_local(exchange: str, agent: int, vote: int, n: int, k: int) -> LocalState:
    """Local state at time 0, before any message has been exchanged.

    ``count`` (and ``prev_count``) start at ``n``: with no round behind it,
    an agent has no evidence of failure, exactly as after a fully delivered
    round.  The choice is observation-neutral (constant across a layer).
    """
    if not 0 <= vote < k:
        raise ValueError(f"vote {vote} out of range for k={k}")
    w = tuple(v == vote for v in range(k))
    if exchange == FLOODSET:
        return FloodSetLocal(0, w)
    if exchange == COUNT:
        return CountLocal(0, w, n)
    if exchange == DIFF:
        return DiffLocal(0, w, n, n)
    if exchange == DWORKMOSES:
        return DworkMosesLocal(
            0, frozenset(), frozenset(), frozenset(), vote == 0, 0
        )
    if exchange == EMIN:
        return EminLocal(0, vote, False, None, None)
    if exchange == EBASIC:
        return EbasicLocal(0, vote, False, None, None, 0)
    raise ValueError(f"unknown exchange: {exchange!r}")


def round_message(
    exchange: str, agent: int, local: LocalState, action: Action
) -> Optional[Message]:
    """Message the agent broadcasts this round, or None for silence.

    Only the decision-transmitting exchanges consult the action: a decide(v)
    action broadcasts ``v`` in the same round, exactly once.
    """
    if exchange in (FLOODSET, COUNT, DIFF):
        return FloodMessage(agent, local.w)
    if exchange == DWORKMOSES:
        return DmMessage(agent, local.nf, local.exists0)
    if exchange == EMIN:
        if action is not None:
            return DecideMessage(agent, action)
        return None
    if exchange == EBASIC:
        if action is not None:
            return DecideMessage(agent, action)
        if local.init == 1 and not local.decided:
            return VoteOneMessage(agent)
        return None
    raise ValueError(f"unknown exchange: {exchange!r}")


def update_local(
    exchange: str,
    agent: int,
    local: LocalState,
    received: Sequence[Message],
    n: int,
) -> LocalState:
    """Local state after a round, given the messages actually delivered.

    ``received`` must include the agent's own message whenever it sent one
    (self-delivery always succeeds).  The decided flag latches off the
    agent's own decide message, which is sound for the same reason.
    """
    time = local.time + 1
    if exchange in (FLOODSET, COUNT, DIFF):
        w = list(local.w)
        for msg in received:
            for v, seen in enumerate(msg.w):
                if seen:
                    w[v] = True
        w = tuple(w)
        if exchange == FLOODSET:
            return FloodSetLocal(time, w)
        if exchange == COUNT:
            return CountLocal(time, w, len(received))
        return DiffLocal(time, w, len(received), local.count)
    if exchange == DWORKMOSES:
        senders = {msg.sender for msg in received}
        missing = frozenset(range(n)) - senders
        reported = frozenset().union(*(msg.nf for msg in received)) if received else frozenset()
        newly = (missing | reported) - local.fset
        fset = local.fset | newly
        exists0 = local.exists0 or any(msg.exists0 for msg in received)
        waste = max(local.waste, len(fset) - time, 0)
        return DworkMosesLocal(time, fset, newly, local.rf | reported, exists0, waste)
    if exchange in (EMIN, EBASIC):
        jd: Optional[int] = None
        if any(isinstance(m, DecideMessage) and m.value == 0 for m in received):
            jd = 0
        elif any(isinstance(m, DecideMessage) and m.value == 1 for m in received):
            jd = 1
        own = [
            m for m in received if isinstance(m, DecideMessage) and m.sender == agent
        ]
        decided = local.decided or bool(own)
        decision = local.decision if not own else own[0].value
        if exchange == EMIN:
            return EminLocal(time, local.init, decided, jd, decision)
        num1 = sum(1 for m in received if isinstance(m, VoteOneMessage))
        return EbasicLocal(time, local.init, decided, jd, decision, num1)
    raise ValueError(f"unknown exchange: {exchange!r}")


# ---------------------------------------------------------------------------
# Row codecs (time lives in the layer index, not in the row)


def _mask_of_values(w: tuple[bool, ...]) -> int:
    return sum(1 << v for v, seen in enumerate(w) if seen)


def _values_of_mask(mask: int, k: int) -> tuple[bool, ...]:
    return tuple(bool(mask >> v & 1) for v in range(k))


def _mask_of_agents(s: frozenset[int]) -> int:
    return sum(1 << a for a in s)


def _agents_of_mask(mask: int, n: int) -> frozenset[int]:
    return frozenset(a for a in range(n) if mask >> a & 1)


def local_to_row(exchange: str, local: LocalState) -> tuple[int, ...]:
    if exchange == FLOODSET:
        return (_mask_of_values(local.w),)
    if exchange == COUNT:
        return (_mask_of_values(local.w), local.count)
    if exchange == DIFF:
        return (_mask_of_values(local.w), local.count, local.prev_count)
    if exchange == DWORKMOSES:
        return (
            _mask_of_agents(local.fset),
            _mask_of_agents(local.nf),
            _mask_of_agents(local.rf),
            int(local.exists0),
            local.waste,
        )
    if exchange == EMIN:
        return (
            local.init,
            int(local.decided),
            NO_VALUE if local.jd is None else local.jd,
            NO_VALUE if local.decision is None else local.decision,
        )
    if exchange == EBASIC:
        return (
            local.init,
            int(local.decided),
            NO_VALUE if local.jd is None else local.jd,
            NO_VALUE if local.decision is None else local.decision,
            local.num1,
        )
    raise ValueError(f"unknown exchange: {exchange!r}")


def local_from_row(
    exchange: str, time: int, row: Sequence[int], n: int, k: int
) -> LocalState:
    row = [int(x) for x in row]
    if exchange == FLOODSET:
        return FloodSetLocal(time, _values_of_mask(row[0], k))
    if exchange == COUNT:
        return CountLocal(time, _values_of_mask(row[0], k), row[1])
    if exchange == DIFF:
        return DiffLocal(time, _values_of_mask(row[0], k), row[1], row[2])
    if exchange == DWORKMOSES:
        return DworkMosesLocal(
            time,
            _agents_of_mask(row[0], n),
            _agents_of_mask(row[1], n),
            _agents_of_mask(row[2], n),
            bool(row[3]),
            row[4],
        )
    if exchange == EMIN:
        return EminLocal(
            time,
            row[0],
            bool(row[1]),
            None if row[2] == NO_VALUE else row[2],
            None if row[3] == NO_VALUE else row[3],
        )
    if exchange == EBASIC:
        return EbasicLocal(
            time,
            row[0],
            bool(row[1]),
            None if row[2] == NO_VALUE else row[2],
            None if row[3] == NO_VALUE else row[3],
            row[4],
        )
    raise ValueError(f"unknown exchange: {exchange!r}")


# ---------------------------------------------------------------------------
# Observation rendering / parsing for reports and table files


def obs_field_names(exchange: str, n: int, k: int) -> list[str]:
    if exchange == FLOODSET:
        return [f"seen{v}" for v in range(k)]
    if exchange == COUNT:
        return [f"seen{v}" for v in range(k)] + ["count"]
    if exchange == DIFF:
        return [f"seen{v}" for v in range(k)] + ["count", "prev_count"]
    if exchange == DWORKMOSES:
        return ["F", "NF", "RF", "exists0", "waste"]
    if exchange == EMIN:
        return ["init", "decided", "jd", "decision"]
    if exchange == EBASIC:
        return ["init", "decided", "jd", "decision", "num1"]
    raise ValueError(f"unknown exchange: {exchange!r}")


def obs_field_values(exchange: str, row: Sequence[int], n: int, k: int) -> list[int]:
    """Row rendered as one integer per named field (bitmask fields expanded)."""
    row = [int(x) for x in row]
    if exchange in (FLOODSET, COUNT, DIFF):
        return [row[0] >> v & 1 for v in range(k)] + row[1:]
    return row


def render_obs(exchange: str, row: Sequence[int], n: int, k: int) -> str:
    names = obs_field_names(exchange, n, k)
    vals = obs_field_values(exchange, row, n, k)
    parts = []
    for name, val in zip(names, vals):
        if name in ("jd", "decision") and val == NO_VALUE:
            parts.append(f"{name}=none")
        else:
            parts.append(f"{name}={val}")
    return " ".join(parts)


def parse_obs(exchange: str, text: str, n: int, k: int) -> tuple[int, ...]:
    """Inverse of :func:`render_obs`; returns the row tuple."""
    fields: dict[str, int] = {}
    for part in text.split():
        name, _, val = part.partition("=")
        fields[name] = NO_VALUE if val == "none" else int(val)
    names = obs_field_names(exchange, n, k)
    vals = [fields[name] for name in names]
    if exchange in (FLOODSET, COUNT, DIFF):
        mask = sum(1 << v for v in range(k) if vals[v])
        return tuple([mask] + vals[k:])
    return tuple(vals)
