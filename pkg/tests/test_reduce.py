import numpy as np
import pytest

from conftest import random_log
from relchoice.clogit import fit, log_likelihood
from relchoice.event_graph import GraphState, replay
from relchoice.features import build_spec_synthetic
from relchoice.reduce import read_reduced_csv, reduce_events, write_reduced_csv
from relchoice.sampling import Importance, Stratified, Uniform, even_quotas, in_degree_weights


@pytest.fixture
def stream():
    ev = random_log(60, 900, 4)
    return replay(GraphState(60), ev[:300]), ev[300:]


def test_one_record_per_event_chosen_first(stream):
    state, events = stream
    out = reduce_events(state, events, build_spec_synthetic(),
                        {"u": Uniform(8), "s": Stratified(even_quotas(9))}, seed=1)
    for data in out.values():
        assert len(data) == len(events)
        assert np.all(data.chosen == 0)
        np.testing.assert_array_equal(data.nodes[data.chosen_rows], [e.dst for e in events])
    assert state.n_events == 300


def test_prefix_containment_and_policy_independence(stream):
    state, events = stream
    spec = build_spec_synthetic()
    pols = {"u": Uniform(8), "s": Stratified(even_quotas(9))}
    long = reduce_events(state, events, spec, pols, seed=5)
    short = reduce_events(state, events[:200], spec, {"s": pols["s"]}, seed=5)["s"]
    head = long["s"].prefix(200)
    np.testing.assert_array_equal(head.X, short.X)
    np.testing.assert_array_equal(head.nodes, short.nodes)
    np.testing.assert_array_equal(head.log_q, short.log_q)


def test_seed_changes_draws(stream):
    state, events = stream
    spec = build_spec_synthetic()
    a = reduce_events(state, events, spec, {"u": Uniform(8)}, seed=1)["u"]
    b = reduce_events(state, events, spec, {"u": Uniform(8)}, seed=2)["u"]
    assert not np.array_equal(a.nodes, b.nodes)


def test_csv_round_trip(tmp_path, stream):
    state, events = stream
    spec = build_spec_synthetic()
    data = reduce_events(state, events[:50], spec,
                         {"i": Importance(6, in_degree_weights())}, seed=3)["i"]
    path = tmp_path / "red.csv"
    write_reduced_csv(data, path, spec.names)
    back = read_reduced_csv(path)
    assert back.names == spec.names
    np.testing.assert_array_equal(back.X, data.X)
    np.testing.assert_array_equal(back.log_q, data.log_q)
    np.testing.assert_array_equal(back.offsets, data.offsets)
    np.testing.assert_array_equal(back.chosen, data.chosen)
    np.testing.assert_array_equal(back.nodes, data.nodes)
    header = path.read_text().splitlines()[0].split(",")
    assert header[:2] == ["record_id", "alt_node"] and header[-2:] == ["log_q", "is_chosen"]


@pytest.mark.parametrize("body, msg", [
    ("record_id,alt_node,x,log_q,is_chosen\n0,1,0.5,0,0\n0,2,0.1,0,0\n", "exactly one"),
    ("record_id,alt_node,x,log_q,is_chosen\n1,1,0.5,0,1\n0,2,0.1,0,0\n", "non-decreasing"),
    ("rec,alt_node,x,log_q,is_chosen\n", "header"),
    ("record_id,alt_node,x,log_q,is_chosen\n0,1,0.5,0\n", "line 2"),
])
def test_csv_errors(tmp_path, body, msg):
    p = tmp_path / "bad.csv"
    p.write_text(body)
    with pytest.raises(ValueError, match=msg):
        read_reduced_csv(p)
