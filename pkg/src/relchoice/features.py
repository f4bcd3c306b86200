"""Declarative feature specifications evaluated against a :class:`GraphState`.

A feature term pairs a base quantity (a count or a last-event time) with a
transform. Counts are turned into ``log`` (with ``log 0 = 0``) or
``indicator`` values; last-event times are turned into recency values
``log(1 / (t - t_last))``. Terms are evaluated for a chooser ``i`` against
one, several, or all candidates ``j`` at time ``t``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .event_graph import NO_TIME, GraphState, fof_count

__all__ = [
    "COUNT_BASES",
    "RECENCY_BASES",
    "FeatureTerm",
    "FeatureSpec",
    "extract",
    "extract_many",
    "extract_all",
    "build_spec_synthetic",
    "build_spec_venmo",
    "build_spec_degree_onehot",
    "build_spec_rest_synthetic",
]

COUNT_BASES = ("in_event_count", "unique_alters", "pair_count",
               "reverse_pair_count", "fof_count")
RECENCY_BASES = ("recency_received", "recency_sent", "recency_pair",
                 "recency_reverse")
ONEHOT_BASE = "degree_onehot"
TRANSFORMS = ("log", "indicator", "log_inverse_time", "raw")

_PREFIX = {"log": "log", "indicator": "has", "log_inverse_time": "loginv",
           "raw": "raw"}


@dataclass(frozen=True)
class FeatureTerm:
    """One column of the design matrix.

    ``degree_onehot`` terms read ``params = {"low": a, "high": b}`` and
    equal 1 when ``a <= in_event_count <= b``; ``high = None`` makes an
    open tail bucket.
    """

    base: str
    transform: str = "raw"
    params: dict = field(default_factory=dict, compare=False, hash=False)
    name: str = ""

    def __post_init__(self):
        if self.transform not in TRANSFORMS:
            raise ValueError(f"unknown transform {self.transform!r}")
        if self.base in COUNT_BASES:
            if self.transform == "log_inverse_time":
                raise ValueError(f"log_inverse_time needs a recency base, got {self.base!r}")
        elif self.base in RECENCY_BASES:
            pass
        elif self.base == ONEHOT_BASE:
            if self.transform not in ("raw", "indicator"):
                raise ValueError("degree_onehot terms take the raw transform")
            if "low" not in self.params:
                raise ValueError("degree_onehot needs params['low']")
        else:
            raise ValueError(f"unknown base quantity {self.base!r}")
        if not self.name:
            object.__setattr__(self, "name", self._default_name())

    def _default_name(self) -> str:
        if self.base == ONEHOT_BASE:
            lo, hi = self.params["low"], self.params.get("high", self.params["low"])
            if hi is None:
                return f"in_degree_ge_{lo}"
            return f"in_degree_eq_{lo}" if hi == lo else f"in_degree_{lo}_{hi}"
        return f"{_PREFIX[self.transform]}_{self.base}"

    def to_dict(self) -> dict:
        return {"base": self.base, "transform": self.transform,
                "params": dict(self.params), "name": self.name}


class FeatureSpec:
    """Ordered, uniquely named list of :class:`FeatureTerm`."""

    def __init__(self, terms: Sequence[FeatureTerm]):
        self.terms = tuple(terms)
        names = [t.name for t in self.terms]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate feature names in {names}")
        if not self.terms:
            raise ValueError("empty feature spec")
        buckets = [(t.params["low"], t.params.get("high", t.params["low"]))
                   for t in self.terms if t.base == ONEHOT_BASE]
        buckets.sort(key=lambda b: b[0])
        for (lo1, hi1), (lo2, _) in zip(buckets, buckets[1:]):
            if hi1 is None or hi1 >= lo2:
                raise ValueError("degree_onehot buckets overlap")

    def __len__(self) -> int:
        return len(self.terms)

    def __iter__(self):
        return iter(self.terms)

    def __eq__(self, other) -> bool:
        return isinstance(other, FeatureSpec) and self.to_dict() == other.to_dict()

    def __repr__(self) -> str:
        return f"FeatureSpec({list(self.names)})"

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(t.name for t in self.terms)

    def to_dict(self) -> dict:
        return {"terms": [t.to_dict() for t in self.terms]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSpec":
        return cls([FeatureTerm(t["base"], t.get("transform", "raw"),
                                dict(t.get("params") or {}), t.get("name", ""))
                    for t in d["terms"]])

    @classmethod
    def from_json(cls, s: str) -> "FeatureSpec":
        return cls.from_dict(json.loads(s))

    def spec_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def subset(self, names: Sequence[str]) -> "FeatureSpec":
        lookup = {t.name: t for t in self.terms}
        return FeatureSpec([lookup[n] for n in names])


# ---------------------------------------------------------------------------
# Base quantities
# ---------------------------------------------------------------------------

def _pair_values(d: dict[int, list[int]], slot: int, js, n_nodes: int,
                 default: float) -> np.ndarray:
    if js is None:
        out = np.full(n_nodes, default, dtype=float)
        if d:
            keys = np.fromiter(d.keys(), dtype=np.int64, count=len(d))
            out[keys] = [r[slot] for r in d.values()]
        return out
    return np.array([d[j][slot] if j in d else default for j in js], dtype=float)


def _fof_all(state: GraphState, i: int) -> np.ndarray:
    out = np.zeros(state.n_nodes)
    for k in state.out_pairs[i]:
        out[state.out_array(k)] += 1.0
    out[i] = 0.0
    return out


# beyond this many candidates, evaluating every node and indexing is cheaper
_DENSE_CUTOFF = 48


def _base(state: GraphState, i: int, js, base: str) -> np.ndarray:
    """Raw base quantity for chooser ``i``; last-event times use NO_TIME."""
    if js is not None and len(js) > _DENSE_CUTOFF and base in (
            "pair_count", "reverse_pair_count", "recency_pair",
            "recency_reverse", "fof_count"):
        return _base(state, i, None, base)[js]
    sel = slice(None) if js is None else js
    if base == "in_event_count" or base == ONEHOT_BASE:
        return state.in_events[sel].astype(float)
    if base == "unique_alters":
        return state.unique_alters[sel].astype(float)
    if base == "recency_received":
        return state.last_received[sel].astype(float)
    if base == "recency_sent":
        return state.last_sent[sel].astype(float)
    if base == "pair_count":
        return _pair_values(state.out_pairs[i], 0, js, state.n_nodes, 0.0)
    if base == "reverse_pair_count":
        return _pair_values(state.in_pairs[i], 0, js, state.n_nodes, 0.0)
    if base == "recency_pair":
        return _pair_values(state.out_pairs[i], 1, js, state.n_nodes, NO_TIME)
    if base == "recency_reverse":
        return _pair_values(state.in_pairs[i], 1, js, state.n_nodes, NO_TIME)
    if base == "fof_count":
        if js is None:
            return _fof_all(state, i)
        return np.array([fof_count(state, i, int(j)) for j in js], dtype=float)
    raise ValueError(base)


def _safe_log(v: np.ndarray) -> np.ndarray:
    out = np.zeros_like(v)
    pos = v > 0
    out[pos] = np.log(v[pos])
    return out


def _transform(term: FeatureTerm, v: np.ndarray, t: int) -> np.ndarray:
    if term.base == ONEHOT_BASE:
        lo = term.params["low"]
        hi = term.params.get("high", lo)
        hit = v >= lo if hi is None else (v >= lo) & (v <= hi)
        return hit.astype(float)
    if term.base in RECENCY_BASES:
        present = v != NO_TIME
        if term.transform == "indicator":
            return present.astype(float)
        # zero gap clamps to one second
        gap = np.where(present, np.maximum(t - v, 1.0), 1.0)
        if term.transform == "log_inverse_time":
            return np.where(present, -np.log(gap), 0.0)
        if term.transform == "log":
            return np.where(present, np.log(gap), 0.0)
        return np.where(present, t - v, 0.0)
    if term.transform == "log":
        return _safe_log(v)
    if term.transform == "indicator":
        return (v > 0).astype(float)
    return v


def _evaluate(state: GraphState, i: int, js, t: int, spec: FeatureSpec) -> np.ndarray:
    if t < state.clock:
        raise ValueError(f"cannot evaluate features at t={t} before clock {state.clock}")
    n = state.n_nodes if js is None else len(js)
    X = np.empty((n, len(spec)))
    cache: dict[str, np.ndarray] = {}
    for col, term in enumerate(spec.terms):
        v = cache.get(term.base)
        if v is None:
            v = cache[term.base] = _base(state, i, js, term.base)
        X[:, col] = _transform(term, v, t)
    return X


def extract(state: GraphState, i: int, j: int, t: int, spec: FeatureSpec) -> np.ndarray:
    """Feature vector of candidate ``j`` in the eyes of chooser ``i`` at ``t``."""
    if i == j:
        raise ValueError("candidate equals chooser")
    return _evaluate(state, i, [int(j)], t, spec)[0]


def extract_many(state: GraphState, i: int, js, t: int, spec: FeatureSpec) -> np.ndarray:
    """Rows of features for the candidates ``js`` (shape ``(len(js), d)``)."""
    js = np.asarray(js, dtype=np.int64)
    return _evaluate(state, i, js, t, spec)


def extract_all(state: GraphState, i: int, t: int, spec: FeatureSpec) -> np.ndarray:
    """Features for every node as candidate; row ``i`` is meaningless."""
    return _evaluate(state, i, None, t, spec)


# ---------------------------------------------------------------------------
# Built-in specs
# ---------------------------------------------------------------------------

_SYNTH_BASES = ("in_event_count", "pair_count", "reverse_pair_count", "fof_count")


def build_spec_synthetic() -> FeatureSpec:
    """Logs then indicators of in-degree, repetition, reciprocity and FoF count."""
    return FeatureSpec([FeatureTerm(b, "log") for b in _SYNTH_BASES]
                       + [FeatureTerm(b, "indicator") for b in _SYNTH_BASES])


def build_spec_rest_synthetic() -> FeatureSpec:
    """The two in-degree terms of the synthetic spec.

    Pair and FoF terms are identically zero outside the local
    neighborhood, so a model restricted to non-local candidates can only
    identify these two coefficients.
    """
    return FeatureSpec([FeatureTerm("in_event_count", "log"),
                        FeatureTerm("in_event_count", "indicator")])


def build_spec_venmo() -> FeatureSpec:
    return FeatureSpec([
        FeatureTerm("unique_alters", "log"),
        FeatureTerm("recency_received", "log_inverse_time"),
        FeatureTerm("recency_sent", "log_inverse_time"),
        FeatureTerm("recency_pair", "log_inverse_time"),
        FeatureTerm("recency_reverse", "log_inverse_time"),
        FeatureTerm("fof_count", "log"),
        FeatureTerm("in_event_count", "indicator"),
        FeatureTerm("unique_alters", "indicator"),
        FeatureTerm("pair_count", "indicator"),
        FeatureTerm("fof_count", "indicator"),
    ])


def build_spec_degree_onehot(cap: int, reference: int = 1) -> FeatureSpec:
    """One indicator per in-degree ``0..cap-1`` plus a ``>= cap`` tail bucket.

    The ``reference`` degree gets no column so the coefficients read as
    log relative odds against that degree.
    """
    if cap < 1:
        raise ValueError("cap must be >= 1")
    terms = [FeatureTerm(ONEHOT_BASE, "raw", {"low": k, "high": k})
             for k in range(cap) if k != reference]
    if reference != cap:
        terms.append(FeatureTerm(ONEHOT_BASE, "raw", {"low": cap, "high": None}))
    return FeatureSpec(terms)


BUILTIN_SPECS = {
    "synthetic": build_spec_synthetic,
    "rest_synthetic": build_spec_rest_synthetic,
    "venmo": build_spec_venmo,
}


def resolve_spec(obj) -> FeatureSpec:
    """Accept a FeatureSpec, a builtin name, or a JSON-style dict."""
    if isinstance(obj, FeatureSpec):
        return obj
    if isinstance(obj, str):
        try:
            return BUILTIN_SPECS[obj]()
        except KeyError:
            raise ValueError(f"unknown builtin spec {obj!r}") from None
    if isinstance(obj, dict):
        if "degree_onehot" in obj:
            return build_spec_degree_onehot(**obj["degree_onehot"])
        return FeatureSpec.from_dict(obj)
    raise TypeError(f"cannot build a FeatureSpec from {type(obj).__name__}")
