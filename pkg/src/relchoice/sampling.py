"""Negative sampling of reduced choice sets with log inclusion corrections.

Every sampler returns a :class:`ReducedChoiceSet`: the chosen node plus
sampled non-chosen nodes, each carrying ``log q``, the log probability of
being included in the reduced set. Subtracting ``log q`` from the utility
makes the sampled-data likelihood consistent for the full-data one when the
data come from a conditional logit.

Candidates are partitioned per chooser ``i`` into three strata relative to
the current graph: friends, friends-of-friends and the rest. The rest is
usually huge and is never materialized; draws from it use rejection
against the (small) local neighborhood.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .event_graph import GraphState, fofs_of

__all__ = [
    "Stratum",
    "ReducedChoiceSet",
    "SamplingError",
    "stratum_of",
    "local_strata",
    "sample_uniform",
    "sample_stratified",
    "sample_importance",
    "sample_full",
    "Uniform",
    "Stratified",
    "Importance",
    "Full",
    "policy_from_dict",
    "record_rng",
    "even_quotas",
]


class SamplingError(ValueError):
    pass


class Stratum(enum.IntEnum):
    FRIEND = 0
    FOF = 1
    REST = 2

    @classmethod
    def parse(cls, s) -> "Stratum":
        if isinstance(s, (int, np.integer)):
            return cls(int(s))
        try:
            return cls[str(s).upper()]
        except KeyError:
            raise ValueError(f"unknown stratum {s!r}") from None


ALL_STRATA = (Stratum.FRIEND, Stratum.FOF, Stratum.REST)


@dataclass
class ReducedChoiceSet:
    chooser: int
    nodes: np.ndarray
    log_q: np.ndarray
    chosen: int
    strata: np.ndarray
    """Stratum label of every alternative, aligned with ``nodes``."""

    @property
    def chosen_node(self) -> int:
        return int(self.nodes[self.chosen])

    @property
    def chosen_stratum(self) -> Stratum:
        return Stratum(int(self.strata[self.chosen]))

    def __len__(self) -> int:
        return len(self.nodes)

    def validate(self) -> None:
        nodes = self.nodes
        if len(np.unique(nodes)) != len(nodes):
            raise SamplingError("duplicate alternatives")
        if np.any(nodes == self.chooser):
            raise SamplingError("chooser among alternatives")
        if not (np.all(np.isfinite(self.log_q)) and np.all(self.log_q <= 1e-12)):
            raise SamplingError("log q must be finite and <= 0")


def record_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for one record, derived from a master seed."""
    return np.random.default_rng([int(seed), *map(int, keys)])


# ---------------------------------------------------------------------------
# Strata
# ---------------------------------------------------------------------------

def local_strata(state: GraphState, i: int) -> tuple[set[int], set[int]]:
    """Friend and FoF sets of ``i`` (the rest is the implicit complement)."""
    friends = state.neighbors[i]
    return friends, fofs_of(state, i)


def stratum_of(state: GraphState, i: int, j: int) -> Stratum:
    if j in state.neighbors[i]:
        return Stratum.FRIEND
    for f in state.neighbors[i]:
        if j in state.neighbors[f]:
            return Stratum.FOF
    return Stratum.REST


class _Strata:
    """Stratum membership for one chooser, computed once per record."""

    def __init__(self, state: GraphState, i: int):
        self.i = i
        self.n_nodes = state.n_nodes
        self.friend, self.fof = local_strata(state, i)
        self.n_rest = self.n_nodes - 1 - len(self.friend) - len(self.fof)

    def size(self, g: Stratum) -> int:
        if g == Stratum.FRIEND:
            return len(self.friend)
        if g == Stratum.FOF:
            return len(self.fof)
        return self.n_rest

    def label(self, j: int) -> Stratum:
        if j in self.friend:
            return Stratum.FRIEND
        if j in self.fof:
            return Stratum.FOF
        return Stratum.REST

    def labels(self, nodes) -> np.ndarray:
        return np.array([self.label(int(j)) for j in nodes], dtype=np.int8)

    def members(self, g: Stratum) -> np.ndarray:
        if g == Stratum.FRIEND:
            s = self.friend
        elif g == Stratum.FOF:
            s = self.fof
        else:
            mask = np.ones(self.n_nodes, dtype=bool)
            mask[self.i] = False
            for s_ in (self.friend, self.fof):
                if s_:
                    mask[np.fromiter(s_, dtype=np.int64, count=len(s_))] = False
            return np.flatnonzero(mask)
        arr = np.fromiter(s, dtype=np.int64, count=len(s))
        arr.sort()
        return arr

    def draw(self, pool: tuple[Stratum, ...], k: int, avoid: int,
             rng: np.random.Generator) -> np.ndarray:
        """``k`` distinct uniform draws from the union of ``pool`` minus ``avoid``."""
        if k <= 0:
            return np.empty(0, dtype=np.int64)
        size = sum(self.size(g) for g in pool) - (self.label(avoid) in pool)
        if k > size:
            raise SamplingError(f"cannot draw {k} from a pool of {size}")
        if Stratum.REST in pool and self.n_rest > 4 * k + 16:
            # rejection against the small explicit complement of the pool
            excluded = {self.i, avoid}
            if Stratum.FRIEND not in pool:
                excluded |= self.friend
            if Stratum.FOF not in pool:
                excluded |= self.fof
            got: list[int] = []
            seen: set[int] = set()
            while len(got) < k:
                for c in rng.integers(0, self.n_nodes, size=2 * (k - len(got)) + 4):
                    c = int(c)
                    if c in excluded or c in seen:
                        continue
                    seen.add(c)
                    got.append(c)
                    if len(got) == k:
                        break
            return np.array(got, dtype=np.int64)
        cand = np.concatenate([self.members(g) for g in pool])
        cand = cand[cand != avoid]
        cand.sort()
        return rng.choice(cand, size=k, replace=False)


# ---------------------------------------------------------------------------
# Samplers
# ---------------------------------------------------------------------------

def _finish(i, chosen, negatives, log_q_neg, log_q_chosen,
            labels_fn) -> ReducedChoiceSet:
    nodes = np.concatenate([[chosen], negatives]).astype(np.int64)
    log_q = np.concatenate([[log_q_chosen], log_q_neg]).astype(float)
    return ReducedChoiceSet(int(i), nodes, log_q, 0, labels_fn(nodes))


def sample_uniform(state: GraphState, i: int, chosen: int, s: int,
                   n_nodes: int | None, rng: np.random.Generator) -> ReducedChoiceSet:
    """Chosen node plus ``s - 1`` uniform draws from all other non-choosers.

    All ``log q`` are 0: equal inclusion probabilities cancel in the
    corrected softmax. ``s = n_nodes`` asks for more alternatives than the
    ``n_nodes - 1`` non-choosers and yields the complete choice set.
    """
    n_v = state.n_nodes if n_nodes is None else int(n_nodes)
    if s < 2:
        raise SamplingError("s must be >= 2")
    if s > n_v:
        raise SamplingError(f"universe of {n_v} nodes too small for s={s}")
    if chosen == i or not 0 <= chosen < n_v:
        raise SamplingError(f"invalid chosen node {chosen}")
    s = min(s, n_v - 1)
    # draw s-1 positions among n_v-2 slots, then skip over i and chosen
    lo, hi = sorted((i, chosen))
    pos = rng.choice(n_v - 2, size=s - 1, replace=False)
    pos = pos + (pos >= lo)
    pos = pos + (pos >= hi)
    return _finish(i, chosen, pos, np.zeros(s - 1), 0.0,
                   lambda nodes: _Strata(state, i).labels(nodes))


def _allocate_spillover(avail: dict, want: dict) -> dict:
    """Cap ``want`` at ``avail`` and hand shortfalls to strata with room.

    The shortfall is split proportionally to remaining capacity, by the
    largest-remainder rule; repeated until nothing is left to place.
    """
    take = {g: min(want[g], avail[g]) for g in want}
    short = sum(want[g] - take[g] for g in want)
    while short > 0:
        room = {g: avail[g] - take[g] for g in take if avail[g] > take[g]}
        total_room = sum(room.values())
        if total_room == 0:
            break
        give = min(short, total_room)
        exact = {g: give * r / total_room for g, r in room.items()}
        alloc = {g: int(math.floor(x)) for g, x in exact.items()}
        left = give - sum(alloc.values())
        for g in sorted(room, key=lambda g: (alloc[g] - exact[g], int(g)))[:left]:
            alloc[g] += 1
        for g, a in alloc.items():
            take[g] += min(a, room[g])
        short -= give
    return take


def sample_stratified(state: GraphState, i: int, chosen: int,
                      quotas: Mapping, rng: np.random.Generator,
                      strict: bool = True) -> ReducedChoiceSet:
    """Stratified draw with per-stratum quotas over {friend, fof, rest}.

    The universe is the union of the strata named in ``quotas``. The
    chosen node's stratum contributes ``quota - 1`` negatives so that it
    holds ``quota`` members in total; if that quota is zero the largest
    other quota gives up one negative instead. A stratum with fewer members than
    its quota is taken whole (``q = 1``) and the shortfall is drawn from
    the other strata in proportion to their spare capacity. Every member
    of stratum ``G`` gets ``q = e_G / n_G`` where ``e_G`` is the number of
    its members in the reduced set.

    With ``strict=False`` a universe smaller than the total quota is taken
    whole instead of raising.
    """
    quotas = {Stratum.parse(g): int(v) for g, v in quotas.items()}
    if any(v < 0 for v in quotas.values()) or sum(quotas.values()) < 2:
        raise SamplingError(f"invalid quotas {quotas}")
    if chosen == i:
        raise SamplingError("chosen equals chooser")
    st = _Strata(state, i)
    g_chosen = st.label(chosen)
    if g_chosen not in quotas:
        raise SamplingError(f"chosen node {chosen} lies in stratum "
                            f"{g_chosen.name} outside the sampling universe")
    order = sorted(quotas)
    avail = {g: st.size(g) - (g == g_chosen) for g in order}
    want = {g: max(quotas[g] - (g == g_chosen), 0) for g in order}
    if quotas[g_chosen] == 0:
        # the chosen node still counts toward the total of sum(quotas)
        g_cut = max(order, key=lambda g: want[g])
        want[g_cut] -= 1
    if sum(avail.values()) < sum(want.values()) and strict:
        raise SamplingError(f"only {sum(avail.values())} candidates for "
                            f"quota total {sum(want.values())}")
    take = _allocate_spillover(avail, want)

    negs, lq = [], []
    log_q_chosen = 0.0
    for g in order:
        n_g = st.size(g)
        e_g = take[g] + (g == g_chosen)
        if n_g == 0 or e_g == 0:
            continue
        lq_g = math.log(e_g / n_g)
        if g == g_chosen:
            log_q_chosen = lq_g
        drawn = st.draw((g,), take[g], chosen, rng)
        negs.append(drawn)
        lq.append(np.full(len(drawn), lq_g))
    negatives = np.concatenate(negs) if negs else np.empty(0, dtype=np.int64)
    log_q = np.concatenate(lq) if lq else np.empty(0)
    return _finish(i, chosen, negatives, log_q, log_q_chosen, st.labels)


def sample_importance(state: GraphState, i: int, chosen: int, s: int,
                      weight_fn: Callable, rng: np.random.Generator,
                      n_nodes: int | None = None) -> ReducedChoiceSet:
    """Weighted draws without replacement of ``s - 1`` negatives.

    ``weight_fn(state, i, nodes)`` returns positive weights for the array
    ``nodes``. Negatives are drawn sequentially, each with probability
    proportional to its weight among those not yet drawn. The recorded
    inclusion probability is the first-order approximation
    ``min(1, (s - 1) * w / W)`` with ``W`` the total weight over all
    non-choosers. It is exact for equal weights and for ``s = 2``; for
    unequal weights and larger ``s`` it is biased toward the heavy items.
    """
    n_v = state.n_nodes if n_nodes is None else int(n_nodes)
    if s < 2 or s > n_v - 1:
        raise SamplingError(f"invalid s={s} for universe of {n_v}")
    universe = np.delete(np.arange(n_v), i)
    w = np.asarray(weight_fn(state, i, universe), dtype=float)
    if w.shape != universe.shape or not np.all(np.isfinite(w)) or np.any(w <= 0):
        raise SamplingError("importance weights must be positive and finite")
    total = w.sum()
    c = int(np.searchsorted(universe, chosen))
    if c >= len(universe) or universe[c] != chosen:
        raise SamplingError(f"invalid chosen node {chosen}")
    w_rest = np.delete(w, c)
    cand = np.delete(universe, c)
    picked = rng.choice(len(cand), size=s - 1, replace=False, p=w_rest / w_rest.sum())
    negatives = cand[picked]
    q = np.minimum(1.0, (s - 1) * np.concatenate([[w[c]], w_rest[picked]]) / total)
    log_q = np.log(q)
    return _finish(i, chosen, negatives, log_q[1:], float(log_q[0]),
                   lambda nodes: _Strata(state, i).labels(nodes))


def sample_full(state: GraphState, i: int, chosen: int,
                strata: tuple = ALL_STRATA) -> ReducedChoiceSet:
    """The whole universe (union of ``strata``) with ``log q = 0``."""
    st = _Strata(state, i)
    strata = tuple(Stratum.parse(g) for g in strata)
    if st.label(chosen) not in strata:
        raise SamplingError("chosen node outside the universe")
    cand = np.concatenate([st.members(g) for g in strata])
    cand = np.sort(cand[cand != chosen])
    return _finish(i, chosen, cand, np.zeros(len(cand)), 0.0, st.labels)


# ---------------------------------------------------------------------------
# Policies
# ---------------------------------------------------------------------------

def even_quotas(s: int, strata=ALL_STRATA) -> dict:
    """Split ``s`` evenly over ``strata``, remainder to the first ones."""
    strata = [Stratum.parse(g) for g in strata]
    base, extra = divmod(int(s), len(strata))
    return {g: base + (k < extra) for k, g in enumerate(strata)}


@dataclass(frozen=True)
class Uniform:
    """Uniform negatives over the union of ``strata`` (all nodes by default)."""

    s: int
    strata: tuple = ALL_STRATA
    name = "uniform"

    def __post_init__(self):
        if self.s < 2:
            raise ValueError("s must be >= 2")

    def sample(self, state, i, chosen, rng, strict=True) -> ReducedChoiceSet:
        strata = tuple(Stratum.parse(g) for g in self.strata)
        if set(strata) == set(ALL_STRATA):
            s = self.s if strict else min(self.s, state.n_nodes - 1)
            return sample_uniform(state, i, chosen, s, state.n_nodes, rng)
        st = _Strata(state, i)
        if st.label(chosen) not in strata:
            raise SamplingError("chosen node outside the universe")
        size = sum(st.size(g) for g in strata) - 1
        k = self.s - 1
        if k > size:
            if strict:
                raise SamplingError(f"universe of {size + 1} too small for s={self.s}")
            k = size
        negs = st.draw(strata, k, chosen, rng)
        return _finish(i, chosen, negs, np.zeros(k), 0.0, st.labels)

    def to_dict(self) -> dict:
        return {"policy": "uniform", "s": self.s,
                "strata": [Stratum.parse(g).name.lower() for g in self.strata]}


@dataclass(frozen=True)
class Stratified:
    quotas: Mapping = field(default_factory=dict)
    name = "stratified"

    def __post_init__(self):
        q = {Stratum.parse(g): int(v) for g, v in dict(self.quotas).items()}
        if any(v < 0 for v in q.values()) or sum(q.values()) < 2:
            raise ValueError(f"invalid quotas {q}")
        object.__setattr__(self, "quotas", q)

    def __hash__(self):
        return hash(tuple(sorted(self.quotas.items())))

    @property
    def s(self) -> int:
        return sum(self.quotas.values())

    @property
    def strata(self) -> tuple:
        return tuple(sorted(self.quotas))

    def sample(self, state, i, chosen, rng, strict=True) -> ReducedChoiceSet:
        return sample_stratified(state, i, chosen, self.quotas, rng, strict=strict)

    def to_dict(self) -> dict:
        return {"policy": "stratified",
                "quotas": {g.name.lower(): v for g, v in sorted(self.quotas.items())}}


def stratum_weights(weights: Mapping) -> Callable:
    """Importance weight function constant within friend/fof/rest strata."""
    wmap = {Stratum.parse(g): float(v) for g, v in weights.items()}

    def fn(state, i, nodes):
        st = _Strata(state, i)
        out = np.full(len(nodes), wmap.get(Stratum.REST, 1.0))
        for k, j in enumerate(nodes):
            g = st.label(int(j))
            if g != Stratum.REST:
                out[k] = wmap.get(g, 1.0)
        return out

    fn.spec = {"kind": "strata", "weights": {g.name.lower(): v for g, v in wmap.items()}}
    return fn


def in_degree_weights(offset: float = 1.0) -> Callable:
    def fn(state, i, nodes):
        return state.in_events[nodes] + offset

    fn.spec = {"kind": "in_degree", "offset": offset}
    return fn


@dataclass(frozen=True)
class Importance:
    s: int
    weight_fn: Callable = field(compare=False)
    name = "importance"

    def sample(self, state, i, chosen, rng, strict=True) -> ReducedChoiceSet:
        return sample_importance(state, i, chosen, self.s, self.weight_fn, rng)

    def to_dict(self) -> dict:
        return {"policy": "importance", "s": self.s,
                "weights": getattr(self.weight_fn, "spec", None)}


@dataclass(frozen=True)
class Full:
    """No sampling: the whole universe of the given strata."""

    strata: tuple = ALL_STRATA
    name = "full"

    def sample(self, state, i, chosen, rng=None, strict=True) -> ReducedChoiceSet:
        return sample_full(state, i, chosen, self.strata)

    def to_dict(self) -> dict:
        return {"policy": "full",
                "strata": [Stratum.parse(g).name.lower() for g in self.strata]}


def policy_from_dict(d: Mapping):
    kind = d["policy"]
    strata = tuple(Stratum.parse(g) for g in d.get("strata", ("friend", "fof", "rest")))
    if kind == "uniform":
        return Uniform(int(d["s"]), strata)
    if kind == "stratified":
        if "quotas" in d:
            return Stratified(d["quotas"])
        return Stratified(even_quotas(int(d["s"]), strata))
    if kind == "importance":
        w = d.get("weights") or {"kind": "in_degree"}
        if w["kind"] == "strata":
            fn = stratum_weights(w["weights"])
        elif w["kind"] == "in_degree":
            fn = in_degree_weights(float(w.get("offset", 1.0)))
        else:
            raise ValueError(f"unknown weight kind {w['kind']!r}")
        return Importance(int(d["s"]), fn)
    if kind == "full":
        return Full(strata)
    raise ValueError(f"unknown sampling policy {kind!r}")
