"""Semantic kernel: global states, layered reachable-state graphs, observations.

A :class:`LayeredSystem` is the finite interpreted system over which all
knowledge evaluation happens: per-time layers of deduplicated global states
plus the successor relation between consecutive layers.  Histories are merged
into states; this is sound for the clock semantics because indistinguishability
is (time, observation)-based and every verified property is state-local given
the bookkeeping kept in local states (checked against a history-level
brute-force enumeration in the test suite).

Row encoding (int32, one row per global state):

    [votes: n] [failure env: n] [locals: n blocks of exchange-specific width]

Time is the layer index.  Agent ``i``'s observation is its local block; its
local *state* in the semantic sense is that block paired with the time.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Optional

import numpy as np

from . import exchanges as exc
from . import failures as flr
from .kernels import OutcomeCache, expand_layer

if TYPE_CHECKING:  # pragma: no cover
    from .kbp import DecisionTable


class ParameterError(ValueError):
    """Invalid instance parameters."""


_MAX_AGENTS = 16
_MAX_VALUES = 16


@dataclass(frozen=True)
class InstanceParams:
    """Problem-instance parameters shared by every module.

    ``horizon`` is the number of rounds; layers run from 0 to ``horizon``
    inclusive and decisions are only ever taken from layers strictly below
    it, leaving the last layer for post-decision checks.  The default
    ``t + 2`` is the smallest horizon with that property, since no decision
    is needed after time ``t + 1``.
    """

    n: int
    t: int
    k: int = 2
    horizon: Optional[int] = None
    exchange: str = exc.FLOODSET
    failure_model: str = flr.CRASH

    def __post_init__(self) -> None:
        if not 1 <= self.n <= _MAX_AGENTS:
            raise ParameterError(f"n must be in 1..{_MAX_AGENTS}, got {self.n}")
        if not 0 <= self.t <= self.n:
            raise ParameterError(f"t must be in 0..n={self.n}, got {self.t}")
        if not 2 <= self.k <= _MAX_VALUES:
            raise ParameterError(f"k must be in 2..{_MAX_VALUES}, got {self.k}")
        info = exc.exchange_info(self.exchange)  # raises on unknown name
        if info.requires_k2 and self.k != 2:
            raise ParameterError(f"exchange {self.exchange!r} requires k=2")
        if self.failure_model not in flr.FAILURE_MODELS:
            raise ParameterError(f"unknown failure model: {self.failure_model!r}")
        if self.horizon is None:
            object.__setattr__(self, "horizon", self.t + 2)
        if self.horizon < self.t + 2:
            raise ParameterError(
                f"horizon must be at least t+2={self.t + 2}, got {self.horizon}"
            )
        if self.horizon >= np.iinfo(np.int32).max:
            raise ParameterError("horizon overflows the time counter")

    @property
    def info(self) -> exc.ExchangeInfo:
        return exc.exchange_info(self.exchange)

    @property
    def local_width(self) -> int:
        return self.info.local_width(self.n, self.k)

    @property
    def row_width(self) -> int:
        return 2 * self.n + self.n * self.local_width

    def local_slice(self, agent: int) -> slice:
        base = 2 * self.n + agent * self.local_width
        return slice(base, base + self.local_width)


@dataclass(frozen=True)
class GlobalState:
    """Readable view of one row: votes, failure env, per-agent locals."""

    params: InstanceParams
    time: int
    votes: tuple[int, ...]
    failure: flr.FailureEnv
    locals: tuple[exc.LocalState, ...]

    @classmethod
    def from_row(
        cls, params: InstanceParams, time: int, row: Iterable[int]
    ) -> "GlobalState":
        row = tuple(int(x) for x in row)
        n = params.n
        votes = row[:n]
        env = flr.FailureEnv.from_row(params.failure_model, params.t, row[n : 2 * n])
        w = params.local_width
        locs = tuple(
            exc.local_from_row(
                params.exchange, time, row[2 * n + i * w : 2 * n + (i + 1) * w],
                params.n, params.k,
            )
            for i in range(n)
        )
        return cls(params=params, time=time, votes=votes, failure=env, locals=locs)

    def observation(self, agent: int) -> exc.LocalState:
        return self.locals[agent]


def nonfaulty_set(state: GlobalState) -> frozenset[int]:
    """The indexical nonfaulty set N at this state.

    Crash: agents that have never crashed.  Omissions: agents outside the
    designated faulty set (designation-based, independent of whether any
    omission actually occurred).
    """
    return state.failure.nonfaulty()


class LayeredSystem:
    """Deduplicated per-time layers of reachable global states plus edges.

    Immutable after construction; all queries (observation groupings, the
    nonfaulty relation, state views) are cached lazily and safe to share.
    ``edges[m]`` holds (source index in layer m, destination index in layer
    m+1) pairs, deduplicated and lexicographically sorted.
    """

    def __init__(
        self,
        params: InstanceParams,
        layers: list[np.ndarray],
        edges: list[np.ndarray],
        decisions: Optional["DecisionTable"] = None,
    ):
        self.params = params
        self.layers = layers
        self.edges = edges
        self.decisions = decisions
        self._classes: dict[tuple[int, int], tuple[np.ndarray, int]] = {}
        self._preds: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    def layer_size(self, m: int) -> int:
        return self.layers[m].shape[0]

    def total_states(self) -> int:
        return sum(l.shape[0] for l in self.layers)

    def total_edges(self) -> int:
        return sum(e.shape[0] for e in self.edges)

    def peak_layer(self) -> int:
        return max(l.shape[0] for l in self.layers)

    def state(self, m: int, idx: int) -> GlobalState:
        return GlobalState.from_row(self.params, m, self.layers[m][idx])

    def states(self, m: int) -> list[GlobalState]:
        return [self.state(m, i) for i in range(self.layer_size(m))]

    def votes(self, m: int) -> np.ndarray:
        return self.layers[m][:, : self.params.n]

    def env(self, m: int) -> np.ndarray:
        return self.layers[m][:, self.params.n : 2 * self.params.n]

    def obs_matrix(self, m: int, agent: int) -> np.ndarray:
        return self.layers[m][:, self.params.local_slice(agent)]

    def nonfaulty_masks(self, m: int) -> np.ndarray:
        """(layer size, n) boolean matrix of the indexical nonfaulty set."""
        return self.env(m) == 0

    def eligible_masks(self, m: int) -> np.ndarray:
        """Which agents can act in round m+1 (crash: still ACTIVE; omissions:
        everyone, faulty agents merely send unreliably)."""
        if self.params.failure_model == flr.CRASH:
            return self.env(m) == flr.ACTIVE
        return np.ones((self.layer_size(m), self.params.n), dtype=bool)

    def classes(self, m: int, agent: int) -> tuple[np.ndarray, int]:
        """Observation-equality classes of layer m for one agent.

        Returns (class id per state, number of classes); ids follow the
        lexicographic order of observations.
        """
        key = (m, agent)
        hit = self._classes.get(key)
        if hit is None:
            obs = self.obs_matrix(m, agent)
            uniq, inv = np.unique(obs, axis=0, return_inverse=True)
            hit = (inv.astype(np.int32), uniq.shape[0])
            self._classes[key] = hit
        return hit

    def predecessors(self, m: int) -> tuple[np.ndarray, np.ndarray]:
        """Edges into layer m, sorted by destination: (dst-sorted edge array
        column pair (src, dst), CSR-style offsets per destination index)."""
        hit = self._preds.get(m)
        if hit is None:
            e = self.edges[m - 1]
            order = np.argsort(e[:, 1], kind="stable")
            sorted_e = e[order]
            offsets = np.searchsorted(
                sorted_e[:, 1], np.arange(self.layer_size(m) + 1)
            )
            hit = (sorted_e, offsets)
            self._preds[m] = hit
        return hit

    def validate(self) -> None:
        """Structural invariants; raises AssertionError on violation."""
        p = self.params
        assert len(self.layers) == p.horizon + 1
        assert len(self.edges) == p.horizon
        for m, layer in enumerate(self.layers):
            assert layer.shape[1] == p.row_width
            uniq = np.unique(layer, axis=0)
            assert uniq.shape == layer.shape, f"layer {m} has duplicate states"
        for m, e in enumerate(self.edges):
            assert e[:, 0].min() >= 0 and e[:, 0].max() < self.layer_size(m)
            assert e[:, 1].min() >= 0 and e[:, 1].max() < self.layer_size(m + 1)
            covered = np.zeros(self.layer_size(m + 1), dtype=bool)
            covered[e[:, 1]] = True
            assert covered.all(), f"layer {m + 1} has an orphan state"


def _initial_rows(params: InstanceParams) -> np.ndarray:
    n, k = params.n, params.k
    envs = [e.to_row() for e in flr.initial_envs(params.failure_model, n, params.t)]
    rows = []
    for votes in itertools.product(range(k), repeat=n):
        locals_flat: list[int] = []
        for i in range(n):
            loc = exc.init_local(params.exchange, i, votes[i], n, k)
            locals_flat.extend(exc.local_to_row(params.exchange, loc))
        for env in envs:
            rows.append(list(votes) + list(env) + locals_flat)
    arr = np.array(rows, dtype=np.int32)
    return np.unique(arr, axis=0)


def initial_states(params: InstanceParams) -> list[GlobalState]:
    """Every initial global state: all vote assignments crossed with all
    initial failure environments, locals initialized from the votes."""
    rows = _initial_rows(params)
    return [GlobalState.from_row(params, 0, row) for row in rows]


class SystemBuilder:
    """Incremental forward construction of a LayeredSystem.

    Callers drive it layer by layer, supplying the resolved decide actions
    for the current layer (or None when the exchange ignores actions); this
    is what lets synthesis fix decisions at time m before expanding to m+1.
    """

    def __init__(self, params: InstanceParams, impl: Optional[str] = None):
        self.params = params
        self.impl = impl
        self.cache = OutcomeCache(params.failure_model, params.n, params.t)
        self.layers: list[np.ndarray] = [_initial_rows(params)]
        self.edges: list[np.ndarray] = []

    @property
    def current_time(self) -> int:
        return len(self.layers) - 1

    def current_rows(self) -> np.ndarray:
        return self.layers[-1]

    def step(self, actions: Optional[np.ndarray]) -> np.ndarray:
        """Expand the newest layer by one round; returns the new layer."""
        m = self.current_time
        nxt, edges = expand_layer(
            self.params.exchange,
            self.params.n,
            self.params.k,
            m + 1,
            self.layers[-1],
            actions,
            self.cache,
            impl=self.impl,
        )
        self.layers.append(nxt)
        self.edges.append(edges)
        return nxt

    def finish(self, decisions: Optional["DecisionTable"] = None) -> LayeredSystem:
        return LayeredSystem(self.params, self.layers, self.edges, decisions)


def build_system(
    params: InstanceParams,
    table: Optional["DecisionTable"] = None,
    impl: Optional[str] = None,
) -> LayeredSystem:
    """Forward construction of the full layered system.

    Decision-transmitting exchanges need a table (possibly the all-noop
    protocol) because messages depend on decide actions; for decision-blind
    exchanges a table, when given, is carried along for verification but the
    construction is identical with or without it.
    """
    info = params.info
    if info.transmits_decisions and table is None:
        raise ParameterError(
            f"exchange {params.exchange!r} transmits decisions; "
            "a decision table (e.g. the noop protocol) is required"
        )
    builder = SystemBuilder(params, impl=impl)
    for m in range(params.horizon):
        actions = None
        if info.transmits_decisions:
            actions = table.resolve_actions(m, builder.layers[m])
        builder.step(actions)
    return builder.finish(decisions=table)
