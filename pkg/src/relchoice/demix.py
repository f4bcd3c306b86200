"""De-mixed latent class logit: modes over disjoint candidate sets.

When every candidate belongs to exactly one mode, the mode of an observed
choice is known from the chosen node alone. The mixture likelihood then
splits into a multinomial over mode counts plus one independent
conditional logit per mode, each of which can be negatively sampled within
its own candidate set.

Mode membership is expressed through the friend / friend-of-friend / rest
strata of the chooser, evaluated on the graph just before the event.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .clogit import ChoiceData, FitResult, fit, log_likelihood
from .event_graph import Event, GraphState
from .features import FeatureSpec, extract_many, resolve_spec
from .reduce import _stack, policy_key
from .sampling import (ALL_STRATA, Full, Importance, Stratified, Stratum, Uniform,
                       _Strata, even_quotas, policy_from_dict, record_rng, stratum_of)

__all__ = [
    "PREDICATES",
    "PartitionError",
    "Mode",
    "ModePartition",
    "DemixedFit",
    "assign_mode",
    "build_demixed_data",
    "build_demixed_many",
    "fit_demixed",
    "demixed_log_likelihood",
    "choice_probability_demixed",
]

log = logging.getLogger(__name__)

PREDICATES = {
    "friend": (Stratum.FRIEND,),
    "fof": (Stratum.FOF,),
    "local": (Stratum.FRIEND, Stratum.FOF),
    "rest": (Stratum.REST,),
    "nonfriend": (Stratum.FOF, Stratum.REST),
    "all": ALL_STRATA,
}


class PartitionError(ValueError):
    """Modes overlap, or leave a candidate uncovered."""


def _restrict_policy(policy, strata: tuple):
    """Confine a sampling policy to a mode's strata."""
    if isinstance(policy, Uniform):
        return Uniform(policy.s, strata)
    if isinstance(policy, Stratified):
        if not set(policy.quotas) <= set(strata):
            raise PartitionError(
                f"quotas over {sorted(g.name for g in policy.quotas)} leave the mode's "
                f"strata {[g.name for g in strata]}")
        return policy
    if isinstance(policy, Full):
        return Full(strata)
    if isinstance(policy, Importance):
        if set(strata) != set(ALL_STRATA):
            raise PartitionError("importance sampling is only supported on a mode covering all nodes")
        return policy
    raise TypeError(f"unsupported policy {policy!r}")


@dataclass
class Mode:
    name: str
    predicate: str
    spec: FeatureSpec
    policy: object

    def __post_init__(self):
        if self.predicate not in PREDICATES:
            raise PartitionError(f"unknown predicate {self.predicate!r}")
        self.spec = resolve_spec(self.spec)
        if isinstance(self.policy, Mapping):
            d = dict(self.policy)
            if d.get("policy") == "stratified" and "quotas" not in d:
                d["quotas"] = {g.name.lower(): v
                               for g, v in even_quotas(int(d["s"]), self.strata).items()}
            self.policy = policy_from_dict(d)
        self.policy = _restrict_policy(self.policy, self.strata)

    @property
    def strata(self) -> tuple:
        return PREDICATES[self.predicate]

    def matches(self, state: GraphState, i: int, j: int) -> bool:
        return stratum_of(state, i, j) in self.strata

    def to_dict(self) -> dict:
        return {"name": self.name, "predicate": self.predicate,
                "spec": self.spec.to_dict(), "sampling": self.policy.to_dict()}


class ModePartition:
    """Ordered modes with pairwise disjoint, jointly exhaustive predicates.

    Missing strata are gathered into an automatic ``residual`` mode (with
    a warning) that reuses the first mode's feature spec and samples
    uniformly.
    """

    def __init__(self, modes: Sequence[Mode], residual_s: int = 24):
        modes = list(modes)
        if not modes:
            raise PartitionError("a partition needs at least one mode")
        names = [m.name for m in modes]
        if len(set(names)) != len(names):
            raise PartitionError(f"duplicate mode names {names}")
        seen: dict = {}
        for m in modes:
            for g in m.strata:
                if g in seen:
                    raise PartitionError(
                        f"modes {seen[g]!r} and {m.name!r} both claim stratum {g.name}")
                seen[g] = m.name
        missing = [g for g in ALL_STRATA if g not in seen]
        if missing:
            pred = next(k for k, v in PREDICATES.items() if set(v) == set(missing))
            warnings.warn(f"modes leave {[g.name for g in missing]} uncovered; "
                          "adding a residual mode", stacklevel=2)
            modes.append(Mode("residual", pred, modes[0].spec, Uniform(residual_s)))
        self.modes = modes

    def __len__(self) -> int:
        return len(self.modes)

    def __iter__(self):
        return iter(self.modes)

    @property
    def names(self) -> list[str]:
        return [m.name for m in self.modes]

    def mode_of_stratum(self, g: Stratum) -> int:
        hits = [k for k, m in enumerate(self.modes) if g in m.strata]
        if len(hits) != 1:
            raise PartitionError(f"stratum {g.name} matched by {len(hits)} modes")
        return hits[0]

    @classmethod
    def single(cls, spec, policy, name: str = "all") -> "ModePartition":
        return cls([Mode(name, "all", spec, policy)])

    @classmethod
    def local_rest(cls, spec_local="synthetic", spec_rest="rest_synthetic",
                   policy_local=None, policy_rest=None) -> "ModePartition":
        """Friends and friends-of-friends versus everyone else."""
        if policy_local is None:
            policy_local = Stratified({Stratum.FRIEND: 12, Stratum.FOF: 12})
        if policy_rest is None:
            policy_rest = Uniform(24)
        return cls([Mode("local", "local", spec_local, policy_local),
                    Mode("rest", "rest", spec_rest, policy_rest)])

    def to_dict(self) -> dict:
        return {"modes": [m.to_dict() for m in self.modes]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModePartition":
        return cls([Mode(m["name"], m["predicate"], m.get("spec", "synthetic"),
                         m["sampling"]) for m in d["modes"]])

    @classmethod
    def from_json(cls, s: str) -> "ModePartition":
        return cls.from_dict(json.loads(s))


def assign_mode(partition: ModePartition, state: GraphState, i: int, j: int) -> int:
    """Index of the unique mode whose predicate holds for candidate ``j``."""
    hits = [k for k, m in enumerate(partition.modes) if m.matches(state, i, j)]
    if len(hits) != 1:
        raise PartitionError(f"candidate {j} of chooser {i} matches {len(hits)} modes")
    return hits[0]


def build_demixed_data(partition: ModePartition, state: GraphState,
                       events: Sequence[Event], seed: int = 0,
                       ) -> tuple[list[ChoiceData | None], np.ndarray]:
    """Route every event to its mode and sample within that mode.

    Returns the per-mode choice data (``None`` for a mode with no usable
    records) and the mode index of every event. A mode's candidate set
    smaller than its sampling budget is taken whole; events whose mode
    offers only the chosen node count toward the class weights but yield
    no record.
    """
    out = build_demixed_many({"_": partition}, state, events, seed)
    return out["_"]


def build_demixed_many(partitions: Mapping[str, ModePartition], state: GraphState,
                       events: Sequence[Event], seed: int = 0,
                       only_modes: Sequence[str] | None = None,
                       ) -> dict[str, tuple[list[ChoiceData | None], np.ndarray]]:
    """:func:`build_demixed_data` for several partitions in one replay.

    Partitions whose modes share a name draw identical random streams for
    that mode. ``only_modes`` restricts record building to the named modes
    (the others still count toward the class weights).
    """
    st = state.copy()
    rows = {key: [[] for _ in p.modes] for key, p in partitions.items()}
    assigned = {key: np.empty(len(events), dtype=np.int64) for key in partitions}
    keys = {key: [policy_key(m.name) for m in p.modes] for key, p in partitions.items()}
    for k, e in enumerate(events):
        t, i, j = int(e[0]), int(e[1]), int(e[2])
        g = stratum_of(st, i, j)
        for key, partition in partitions.items():
            m = partition.mode_of_stratum(g)
            mode = partition.modes[m]
            assigned[key][k] = m
            if only_modes is not None and mode.name not in only_modes:
                continue
            rcs = mode.policy.sample(st, i, j, record_rng(seed, k, keys[key][m]),
                                     strict=False)
            # disjointness audit: every alternative must fall in this mode only
            if not np.all(np.isin(rcs.strata, [int(x) for x in mode.strata])):
                raise PartitionError(f"record {k}: alternative outside mode {mode.name!r}")
            # a singleton candidate set carries no information about theta
            if len(rcs) >= 2:
                X = extract_many(st, i, rcs.nodes, t, mode.spec)
                rows[key][m].append((X, rcs.log_q, rcs.chosen, rcs.nodes))
        st.apply(e, position=k)
    return {key: ([(_stack(r, mode.spec.names) if r else None)
                   for r, mode in zip(rows[key], p.modes)], assigned[key])
            for key, p in partitions.items()}


@dataclass
class DemixedFit:
    pi: np.ndarray
    pi_se: np.ndarray
    fits: list
    counts: np.ndarray
    partition: ModePartition
    messages: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    def to_dict(self) -> dict:
        """Layout of a results table: per-mode estimates, class weights, counts."""
        modes = []
        for m, mode in enumerate(self.partition.modes):
            f = self.fits[m]
            entry = {"name": mode.name, "pi": float(self.pi[m]),
                     "pi_se": float(self.pi_se[m]), "observations": int(self.counts[m]),
                     "coefficients": None, "message": self.messages[m]}
            if f is not None:
                entry["coefficients"] = [
                    {"feature": name, "estimate": float(th),
                     "se": None if not math.isfinite(se) else float(se)}
                    for name, th, se in zip(mode.spec.names, f.theta, f.se)]
                entry["loglik"] = f.loglik
                entry["converged"] = f.converged
            modes.append(entry)
        return {"observations": self.n, "modes": modes,
                "partition": self.partition.to_dict()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def table(self) -> str:
        """Plain-text coefficient table, one column per mode."""
        names: list[str] = []
        for mode in self.partition.modes:
            names += [n for n in mode.spec.names if n not in names]
        width = max(len(n) for n in names + ["observations"]) + 2
        cols = self.partition.names
        lines = ["".ljust(width) + "".join(c.rjust(22) for c in cols)]
        for n in names:
            cells = []
            for m, mode in enumerate(self.partition.modes):
                f = self.fits[m]
                if f is None or n not in mode.spec.names:
                    cells.append("")
                    continue
                k = mode.spec.names.index(n)
                se = f"({f.se[k]:.3f})" if math.isfinite(f.se[k]) else "(n/a)"
                cells.append(f"{f.theta[k]:.3f} {se}")
            lines.append(n.ljust(width) + "".join(c.rjust(22) for c in cells))
        lines.append("pi_m".ljust(width) + "".join(f"{p:.3f}".rjust(22) for p in self.pi))
        lines.append("observations".ljust(width)
                     + "".join(f"{c:,}".rjust(22) for c in self.counts))
        return "\n".join(lines)


def demixed_log_likelihood(thetas: Sequence, pi, datas: Sequence[ChoiceData | None],
                           counts=None) -> float:
    """Mixture log-likelihood over disjoint modes.

    Equals the sum of the per-mode conditional logit log-likelihoods plus
    the multinomial term ``sum_m |D_m| log pi_m``.
    """
    pi = np.asarray(pi, dtype=float)
    if counts is None:
        counts = [0 if d is None else len(d) for d in datas]
    total = 0.0
    for m, d in enumerate(datas):
        if counts[m]:
            total += counts[m] * math.log(pi[m])
        if d is not None:
            total += log_likelihood(thetas[m], d)
    return total


def fit_demixed(partition: ModePartition, state: GraphState, events: Sequence[Event],
                seed: int = 0, tol: float = 1e-8, max_iter: int = 1000,
                workers: int = 1) -> DemixedFit:
    """Estimate class weights from mode counts and one logit per mode.

    Parameters
    ----------
    partition : ModePartition
    state : GraphState
        Graph before the first event; not modified.
    events : sequence of Event
        Choices to explain, in time order.
    seed : int
        Master seed for the per-record negative sampling.
    workers : int
        Modes are fitted concurrently on this many threads.
    """
    datas, assigned = build_demixed_data(partition, state, events, seed)
    M = len(partition)
    counts = np.bincount(assigned, minlength=M)
    n = counts.sum()
    pi = counts / n
    pi_se = np.sqrt(pi * (1 - pi) / n)

    def _one(m):
        d = datas[m]
        if d is None:
            return None, f"mode {partition.modes[m].name!r}: no observations"
        try:
            return fit(d, tol=tol, max_iter=max_iter), "ok"
        except Exception as exc:
            raise type(exc)(f"mode {partition.modes[m].name!r}: {exc}") from exc

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(_one, range(M)))
    else:
        out = [_one(m) for m in range(M)]
    fits = [o[0] for o in out]
    messages = [o[1] for o in out]
    for msg in messages:
        if msg != "ok":
            log.warning(msg)
    return DemixedFit(pi, pi_se, fits, counts, partition, messages)


def choice_probability_demixed(fit: DemixedFit, state: GraphState, i: int, j: int,
                               t: int | None = None, max_nodes: int = 20_000) -> float:
    """``pi_m`` times the softmax probability of ``j`` within its mode's
    complete candidate set."""
    if state.n_nodes > max_nodes:
        raise ValueError(f"universe of {state.n_nodes} nodes exceeds the cap {max_nodes}")
    if i == j:
        return 0.0
    partition = fit.partition
    m = assign_mode(partition, state, i, j)
    f = fit.fits[m]
    if f is None:
        raise ValueError(f"mode {partition.modes[m].name!r} was not fitted")
    mode = partition.modes[m]
    st = _Strata(state, i)
    cand = np.sort(np.concatenate([st.members(g) for g in mode.strata]))
    t = state.clock if t is None else t
    u = extract_many(state, i, cand, t, mode.spec) @ f.theta
    u -= u.max()
    p = np.exp(u) / np.exp(u).sum()
    return float(fit.pi[m] * p[np.searchsorted(cand, j)])
