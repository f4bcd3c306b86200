"""Incremental replay state over a stream of timestamped directed events.

A :class:`GraphState` holds exactly what the feature extractors need to
evaluate a candidate "at the time the edge was formed": per-node event
counts and last-activity times, per ordered pair counts and last times
(stored sparsely), and the direction-agnostic neighbor sets used to define
friends and friends-of-friends.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple

import numpy as np

__all__ = [
    "Event",
    "EventLogError",
    "GraphState",
    "apply_event",
    "friends_of",
    "fofs_of",
    "fof_count",
    "replay",
    "read_events_csv",
    "write_events_csv",
]

NO_TIME = -1


class EventLogError(ValueError):
    """Raised for invalid events or malformed event logs."""


class Event(NamedTuple):
    t: int
    src: int
    dst: int


class GraphState:
    """Mutable replay state for a fixed universe of ``n_nodes`` nodes.

    Node ids are dense integers in ``[0, n_nodes)``. Per-node quantities
    live in numpy arrays so that features can be evaluated for every
    candidate at once; per-pair quantities live in dictionaries keyed by
    the partner id, one dictionary per node and direction.

    Single writer: do not call :meth:`apply` while another thread reads.
    """

    def __init__(self, n_nodes: int):
        if n_nodes < 1:
            raise ValueError("n_nodes must be positive")
        self.n_nodes = int(n_nodes)
        self.clock = 0
        self.n_events = 0
        self.in_events = np.zeros(n_nodes, dtype=np.int64)
        self.out_events = np.zeros(n_nodes, dtype=np.int64)
        self.unique_alters = np.zeros(n_nodes, dtype=np.int64)
        self.last_received = np.full(n_nodes, NO_TIME, dtype=np.int64)
        self.last_sent = np.full(n_nodes, NO_TIME, dtype=np.int64)
        self.neighbors: list[set[int]] = [set() for _ in range(n_nodes)]
        # out_pairs[i][j] = [count, last_t] for i -> j; in_pairs[j][i] mirrors it
        self.out_pairs: list[dict[int, list[int]]] = [{} for _ in range(n_nodes)]
        self.in_pairs: list[dict[int, list[int]]] = [{} for _ in range(n_nodes)]
        self._out_arrays: dict[int, np.ndarray] = {}

    def __repr__(self) -> str:
        return (f"GraphState(n_nodes={self.n_nodes}, n_events={self.n_events}, "
                f"clock={self.clock})")

    @property
    def n_pairs(self) -> int:
        """Number of distinct ordered pairs with at least one event."""
        return sum(len(d) for d in self.out_pairs)

    def apply(self, e: Event, position: int | None = None) -> None:
        t, i, j = int(e[0]), int(e[1]), int(e[2])
        where = "" if position is None else f" at position {position}"
        if i == j:
            raise EventLogError(f"self-event {i}->{j}{where}")
        if t < self.clock:
            raise EventLogError(
                f"out-of-order timestamp {t} < clock {self.clock}{where}")
        if not (0 <= i < self.n_nodes and 0 <= j < self.n_nodes):
            raise EventLogError(
                f"node id out of range [0, {self.n_nodes}){where}: {i}->{j}")

        rec = self.out_pairs[i].get(j)
        if rec is None:
            rec = [0, NO_TIME]
            self.out_pairs[i][j] = rec
            self.in_pairs[j][i] = rec
            self._out_arrays.pop(i, None)
        rec[0] += 1
        rec[1] = t

        if j not in self.neighbors[i]:
            self.neighbors[i].add(j)
            self.neighbors[j].add(i)
            self.unique_alters[i] += 1
            self.unique_alters[j] += 1

        self.out_events[i] += 1
        self.in_events[j] += 1
        self.last_sent[i] = t
        self.last_received[j] = t
        self.clock = t
        self.n_events += 1

    def pair_count(self, i: int, j: int) -> int:
        rec = self.out_pairs[i].get(j)
        return 0 if rec is None else rec[0]

    def pair_last(self, i: int, j: int) -> int:
        rec = self.out_pairs[i].get(j)
        return NO_TIME if rec is None else rec[1]

    def out_array(self, i: int) -> np.ndarray:
        """Sorted array of nodes that ``i`` has sent to (cached)."""
        arr = self._out_arrays.get(i)
        if arr is None:
            arr = np.fromiter(self.out_pairs[i], dtype=np.int64,
                              count=len(self.out_pairs[i]))
            arr.sort()
            self._out_arrays[i] = arr
        return arr

    def copy(self) -> "GraphState":
        new = GraphState.__new__(GraphState)
        new.n_nodes = self.n_nodes
        new.clock = self.clock
        new.n_events = self.n_events
        for name in ("in_events", "out_events", "unique_alters",
                     "last_received", "last_sent"):
            setattr(new, name, getattr(self, name).copy())
        new.neighbors = [set(s) for s in self.neighbors]
        new.out_pairs = [{} for _ in range(self.n_nodes)]
        new.in_pairs = [{} for _ in range(self.n_nodes)]
        for i, d in enumerate(self.out_pairs):
            for j, rec in d.items():
                r = list(rec)
                new.out_pairs[i][j] = r
                new.in_pairs[j][i] = r
        new._out_arrays = {}
        return new

    def structure(self) -> tuple:
        """Hashable summary of the full state, for equality checks."""
        pairs = tuple(sorted((i, j, r[0], r[1])
                             for i, d in enumerate(self.out_pairs)
                             for j, r in d.items()))
        return (self.n_nodes, self.clock, self.n_events,
                tuple(self.in_events), tuple(self.out_events),
                tuple(self.unique_alters), tuple(self.last_received),
                tuple(self.last_sent), pairs)


def apply_event(state: GraphState, e: Event) -> GraphState:
    """Apply ``e`` to ``state`` in place and return it."""
    state.apply(e)
    return state


def replay(state: GraphState, events: Iterable[Event]) -> GraphState:
    for k, e in enumerate(events):
        state.apply(e, position=k)
    return state


def friends_of(state: GraphState, i: int) -> set[int]:
    """Nodes sharing at least one event with ``i`` in either direction."""
    if not 0 <= i < state.n_nodes:
        return set()
    return set(state.neighbors[i])


def fofs_of(state: GraphState, i: int) -> set[int]:
    """Nodes exactly two undirected hops from ``i``."""
    if not 0 <= i < state.n_nodes:
        return set()
    nbrs = state.neighbors[i]
    out: set[int] = set()
    for f in nbrs:
        out |= state.neighbors[f]
    out -= nbrs
    out.discard(i)
    return out


def fof_count(state: GraphState, i: int, j: int) -> int:
    """Number of distinct ``k`` with events ``i -> k`` and ``k -> j``."""
    if i == j:
        return 0
    a = state.out_pairs[i]
    b = state.in_pairs[j]
    if len(a) > len(b):
        a, b = b, a
    return sum(1 for k in a if k in b)


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------

def _parse_rows(rows: Iterator[list[str]], intern: dict[str, int] | None,
                ) -> list[Event]:
    header = next(rows, None)
    if header is None or [h.strip() for h in header] != ["t", "src", "dst"]:
        raise EventLogError(f"line 1: expected header 't,src,dst', got {header}")
    events: list[Event] = []
    last_t = None
    for lineno, row in enumerate(rows, start=2):
        if not row:
            continue
        if len(row) != 3:
            raise EventLogError(f"line {lineno}: expected 3 fields, got {len(row)}")
        try:
            t = int(row[0])
        except ValueError:
            raise EventLogError(f"line {lineno}: bad timestamp {row[0]!r}") from None
        if t < 0:
            raise EventLogError(f"line {lineno}: negative timestamp {t}")
        if last_t is not None and t < last_t:
            raise EventLogError(f"line {lineno}: timestamps not sorted ({t} < {last_t})")
        ids = []
        for raw in row[1:]:
            raw = raw.strip()
            if intern is None:
                try:
                    v = int(raw)
                except ValueError:
                    raise EventLogError(f"line {lineno}: bad node id {raw!r}") from None
                if v < 0:
                    raise EventLogError(f"line {lineno}: negative node id {v}")
            else:
                v = intern.setdefault(raw, len(intern))
            ids.append(v)
        if ids[0] == ids[1]:
            raise EventLogError(f"line {lineno}: self-event {ids[0]}->{ids[1]}")
        events.append(Event(t, ids[0], ids[1]))
        last_t = t
    return events


def read_events_csv(path_or_buf, intern: bool = False,
                    ) -> tuple[list[Event], int, dict[str, int] | None]:
    """Read a ``t,src,dst`` event log.

    Parameters
    ----------
    path_or_buf : str, Path or text buffer
    intern : bool
        If True, node labels are arbitrary strings mapped to dense ids in
        order of first appearance.

    Returns
    -------
    events : list of Event
    n_nodes : int
        One more than the largest node id seen.
    mapping : dict or None
        The label -> id map when ``intern`` is set.
    """
    mapping: dict[str, int] | None = {} if intern else None
    if isinstance(path_or_buf, (str, Path)):
        with open(path_or_buf, newline="", encoding="utf-8") as fh:
            events = _parse_rows(csv.reader(fh), mapping)
    else:
        events = _parse_rows(csv.reader(path_or_buf), mapping)
    n_nodes = 1 + max((max(e.src, e.dst) for e in events), default=-1)
    if mapping is not None:
        n_nodes = max(n_nodes, len(mapping))
    return events, n_nodes, mapping


def write_events_csv(events: Iterable[Event], path_or_buf) -> None:
    def _write(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "src", "dst"])
        for e in events:
            w.writerow([int(e[0]), int(e[1]), int(e[2])])

    if isinstance(path_or_buf, (str, Path)):
        with open(path_or_buf, "w", newline="", encoding="utf-8") as fh:
            _write(fh)
    else:
        _write(path_or_buf)


def events_to_csv_string(events: Iterable[Event]) -> str:
    buf = io.StringIO()
    write_events_csv(events, buf)
    return buf.getvalue()
