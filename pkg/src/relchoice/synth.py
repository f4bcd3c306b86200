"""Synthetic relational event streams with known utility parameters.

A run starts from a uniformly seeded graph, then appends one event per
clock tick: a uniformly drawn sender picks a receiver from the exact
conditional logit over its candidates. The two-mode variant first flips a
biased coin to choose between a local mode (friends and friends-of-friends)
and a rest mode (everyone else).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .event_graph import Event, GraphState, fofs_of
from .features import FeatureSpec, build_spec_synthetic, extract_all, extract_many, resolve_spec

__all__ = [
    "THETA_SYNTHETIC",
    "THETA_LOCAL",
    "THETA_REST",
    "GeneratorConfig",
    "TwoModeStream",
    "seed_graph",
    "generate_single_mode",
    "generate_two_mode",
    "generate",
]

# logs of (in-degree, repetition, reciprocity, FoF count), then their indicators
THETA_SYNTHETIC = (0.5, 2.0, 2.0, 2.0, 1.0, 4.0, 4.0, 4.0)
THETA_LOCAL = (0.5, 1.0, 1.0, 1.0, 0.5, 1.0, 1.0, 1.0)
THETA_REST = (1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0)

LOCAL, REST, FALLBACK, FALLBACK_LOCAL = 0, 1, 2, 3


def _categorical(u: np.ndarray, rng: np.random.Generator) -> int:
    """Index drawn with probability softmax(u); ``-inf`` entries excluded."""
    m = np.max(u)
    cdf = np.cumsum(np.exp(u - m))
    return int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))


def seed_graph(n_nodes: int, n_seed: int, rng: np.random.Generator,
               ) -> tuple[GraphState, list[Event]]:
    """``n_seed`` events between uniformly drawn ordered pairs at t = 1, 2, ..."""
    if n_nodes < 2:
        raise ValueError("need at least two nodes")
    src = rng.integers(0, n_nodes, size=n_seed)
    # uniform over the other n - 1 nodes
    dst = rng.integers(0, n_nodes - 1, size=n_seed)
    dst = dst + (dst >= src)
    state = GraphState(n_nodes)
    events = [Event(t + 1, int(a), int(b)) for t, (a, b) in enumerate(zip(src, dst))]
    for k, e in enumerate(events):
        state.apply(e, position=k)
    return state, events


def generate_single_mode(state: GraphState, theta, spec: FeatureSpec, n_events: int,
                         rng: np.random.Generator) -> list[Event]:
    """Append ``n_events`` conditional-logit choices to ``state`` (in place)."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (len(spec),):
        raise ValueError("theta does not match the feature spec")
    n = state.n_nodes
    if n < 2:
        raise ValueError("need at least two nodes")
    events = []
    for _ in range(n_events):
        t = state.clock + 1
        i = int(rng.integers(n))
        u = extract_all(state, i, t, spec) @ theta
        u[i] = -np.inf
        e = Event(t, i, _categorical(u, rng))
        state.apply(e)
        events.append(e)
    return events


class TwoModeStream(NamedTuple):
    events: list
    mode: np.ndarray
    """Per event: 0 local, 1 rest, 2 local requested but empty (fell to rest),
    3 rest requested but empty (fell to local)."""

    @property
    def n_fallback(self) -> int:
        return int(np.sum(self.mode >= FALLBACK))


def generate_two_mode(state: GraphState, theta_local, theta_rest, pi: float,
                      spec: FeatureSpec, n_events: int, rng: np.random.Generator,
                      ) -> TwoModeStream:
    """Append ``n_events`` choices from the disjoint two-mode mixture.

    With probability ``pi`` the sender chooses among its friends and
    friends-of-friends, otherwise among all remaining nodes. A sender with
    an empty neighborhood in the local mode falls back to the rest mode, and
    one whose neighborhood already covers every other node falls back to
    the local mode.
    """
    theta_local = np.asarray(theta_local, dtype=float)
    theta_rest = np.asarray(theta_rest, dtype=float)
    if theta_local.shape != (len(spec),) or theta_rest.shape != (len(spec),):
        raise ValueError("theta does not match the feature spec")
    if not 0.0 <= pi <= 1.0:
        raise ValueError("pi must lie in [0, 1]")
    n = state.n_nodes
    events, modes = [], np.empty(n_events, dtype=np.int8)
    for k in range(n_events):
        t = state.clock + 1
        i = int(rng.integers(n))
        want_local = rng.random() < pi
        local = state.neighbors[i] | fofs_of(state, i)
        rest_empty = len(local) == n - 1
        if local and (want_local or rest_empty):
            cand = np.fromiter(local, dtype=np.int64, count=len(local))
            cand.sort()
            u = extract_many(state, i, cand, t, spec) @ theta_local
            j = int(cand[_categorical(u, rng)])
            modes[k] = LOCAL if want_local else FALLBACK_LOCAL
        else:
            u = extract_all(state, i, t, spec) @ theta_rest
            u[i] = -np.inf
            if local:
                u[np.fromiter(local, dtype=np.int64, count=len(local))] = -np.inf
            j = _categorical(u, rng)
            modes[k] = FALLBACK if want_local else REST
        e = Event(t, i, j)
        state.apply(e)
        events.append(e)
    return TwoModeStream(events, modes)


@dataclass
class GeneratorConfig:
    """Parameters of one synthetic run.

    ``kind`` is ``"single"`` (uses ``theta``) or ``"two_mode"`` (uses
    ``theta_local``, ``theta_rest`` and ``pi_local``).
    """

    n_nodes: int = 1000
    n_seed: int = 5000
    n_events: int = 20000
    kind: str = "single"
    theta: Sequence[float] = THETA_SYNTHETIC
    theta_local: Sequence[float] = THETA_LOCAL
    theta_rest: Sequence[float] = THETA_REST
    pi_local: float = 0.75
    spec: object = "synthetic"
    seed: int = 0

    def __post_init__(self):
        if self.n_nodes < 2:
            raise ValueError("n_nodes must be >= 2")
        if self.kind not in ("single", "two_mode"):
            raise ValueError(f"unknown generator kind {self.kind!r}")
        if not 0.0 <= self.pi_local <= 1.0:
            raise ValueError("pi_local must lie in [0, 1]")
        d = len(self.feature_spec)
        thetas = [self.theta] if self.kind == "single" else [self.theta_local, self.theta_rest]
        if any(len(th) != d for th in thetas):
            raise ValueError("theta length does not match the feature spec")

    @property
    def feature_spec(self) -> FeatureSpec:
        return resolve_spec(self.spec)

    def to_dict(self) -> dict:
        d = asdict(self)
        if isinstance(self.spec, FeatureSpec):
            d["spec"] = self.spec.to_dict()
        for k in ("theta", "theta_local", "theta_rest"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown generator fields {sorted(unknown)}")
        return cls(**d)

    def truth(self) -> dict:
        """Ground truth record for downstream scoring."""
        out = {"kind": self.kind, "seed": self.seed, "n_nodes": self.n_nodes,
               "n_seed": self.n_seed, "n_events": self.n_events,
               "feature_names": list(self.feature_spec.names)}
        if self.kind == "single":
            out["theta"] = list(self.theta)
        else:
            out.update(theta_local=list(self.theta_local),
                       theta_rest=list(self.theta_rest), pi_local=self.pi_local)
        return out


@dataclass
class GeneratedRun:
    config: GeneratorConfig
    seed_events: list
    events: list
    state: GraphState
    """State after the seed events only."""
    mode: np.ndarray | None = field(default=None)

    @property
    def all_events(self) -> list:
        return self.seed_events + self.events


def generate(config: GeneratorConfig) -> GeneratedRun:
    """Seed a graph and generate the choice events described by ``config``."""
    rng = np.random.default_rng(config.seed)
    state, seed_events = seed_graph(config.n_nodes, config.n_seed, rng)
    seeded = state.copy()
    spec = config.feature_spec
    if config.kind == "single":
        events = generate_single_mode(state, config.theta, spec, config.n_events, rng)
        return GeneratedRun(config, seed_events, events, seeded)
    stream = generate_two_mode(state, config.theta_local, config.theta_rest,
                               config.pi_local, spec, config.n_events, rng)
    return GeneratedRun(config, seed_events, stream.events, seeded, stream.mode)


def write_truth(config: GeneratorConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config.truth(), fh, indent=2)
