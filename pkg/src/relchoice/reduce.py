"""Turn an event stream into sampled choice data, and read/write it as CSV.

Each event after the warm-up is a choice: its sender picked its receiver
out of the choice set available just before the event. A sampling policy
reduces that choice set; features are extracted for the survivors only.
"""

from __future__ import annotations

import csv
import zlib
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .clogit import ChoiceData
from .event_graph import Event, GraphState
from .features import FeatureSpec, extract_many
from .sampling import record_rng

__all__ = ["policy_key", "reduce_events", "write_reduced_csv", "read_reduced_csv"]


def policy_key(name: str) -> int:
    """Stable integer used to decorrelate per-record streams across policies."""
    return zlib.crc32(name.encode())


def reduce_events(state: GraphState, events: Sequence[Event], spec: FeatureSpec,
                  policies: Mapping[str, object], seed: int,
                  copy_state: bool = True) -> dict[str, ChoiceData]:
    """Sample reduced choice sets for every event under each policy.

    Record ``k`` under policy ``name`` draws from a generator seeded by
    ``(seed, k, policy_key(name))``, so the first ``n`` records are the
    same whatever the stream length or the other policies requested.

    Returns
    -------
    dict mapping policy name to :class:`ChoiceData`, with node ids kept.
    """
    st = state.copy() if copy_state else state
    keys = {name: policy_key(name) for name in policies}
    rows: dict[str, list] = {name: [] for name in policies}
    for k, e in enumerate(events):
        t, i, j = int(e[0]), int(e[1]), int(e[2])
        for name, pol in policies.items():
            rcs = pol.sample(st, i, j, record_rng(seed, k, keys[name]))
            X = extract_many(st, i, rcs.nodes, t, spec)
            rows[name].append((X, rcs.log_q, rcs.chosen, rcs.nodes))
        st.apply(e, position=k)
    return {name: _stack(r, spec.names) for name, r in rows.items()}


def _stack(rows, names) -> ChoiceData:
    sizes = [len(r[1]) for r in rows]
    return ChoiceData(np.vstack([r[0] for r in rows]),
                      np.concatenate([r[1] for r in rows]),
                      np.concatenate([[0], np.cumsum(sizes)]),
                      [r[2] for r in rows], names,
                      np.concatenate([r[3] for r in rows]))


def write_reduced_csv(data: ChoiceData, path, names: Sequence[str] | None = None) -> None:
    """Long format: one line per alternative.

    Columns are ``record_id, alt_node, <features...>, log_q, is_chosen``.
    """
    names = list(names or data.names or [f"x{k}" for k in range(data.n_features)])
    nodes = data.nodes
    rec = np.repeat(np.arange(len(data)), data.sizes)
    chosen = np.zeros(data.n_rows, dtype=int)
    chosen[data.chosen_rows] = 1
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["record_id", "alt_node", *names, "log_q", "is_chosen"])
        for r in range(data.n_rows):
            node = "" if nodes is None else int(nodes[r])
            w.writerow([int(rec[r]), node, *(repr(float(x)) for x in data.X[r]),
                        repr(float(data.log_q[r])), chosen[r]])


def read_reduced_csv(path) -> ChoiceData:
    with open(Path(path), newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["record_id", "alt_node"] or header[-2:] != ["log_q", "is_chosen"]:
            raise ValueError(f"unexpected header {header}")
        names = header[2:-2]
        recs, nodes, X, lq, ch = [], [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ValueError(f"line {lineno}: expected {len(header)} fields")
            recs.append(int(row[0]))
            nodes.append(int(row[1]) if row[1] else -1)
            X.append([float(x) for x in row[2:-2]])
            lq.append(float(row[-2]))
            ch.append(int(row[-1]))
    recs = np.array(recs)
    if np.any(np.diff(recs) < 0):
        raise ValueError("record ids must be grouped and non-decreasing")
    bounds = np.flatnonzero(np.diff(recs)) + 1
    offsets = np.concatenate([[0], bounds, [len(recs)]])
    ch = np.array(ch)
    chosen = []
    for a, b in zip(offsets[:-1], offsets[1:]):
        hits = np.flatnonzero(ch[a:b])
        if len(hits) != 1:
            raise ValueError(f"record {recs[a]} must have exactly one chosen row")
        chosen.append(hits[0])
    return ChoiceData(np.array(X, dtype=float).reshape(len(recs), len(names)),
                      lq, offsets, chosen, names, nodes)
