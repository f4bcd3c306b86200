"""Experiment driver: replicated sweeps over n, s and sampling policy.

A plan names a data source (a synthetic generator or an event log), a
model (a plain conditional logit or a de-mixed partition), a grid of
sample sizes ``n`` and choice-set sizes ``s`` (or a fixed budget
``n * s``), a list of sampling policies and a replicate count. Every
replicate is independent and derives its seeds from the master seed, so
results are reproducible whatever the pool size.

Within one replicate the records for a given ``(policy, s)`` are sampled
once over the longest stream needed, and smaller ``n`` use prefixes of
the same records.
"""

from __future__ import annotations

import copy
import csv
import functools
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .clogit import ChoiceData, fit
from .demix import ModePartition, build_demixed_many
from .event_graph import GraphState, read_events_csv, replay
from .features import resolve_spec
from .reduce import reduce_events
from .sampling import ALL_STRATA, even_quotas, policy_from_dict
from .synth import GeneratorConfig, generate

__all__ = [
    "RESULT_HEADER",
    "SUMMARY_HEADER",
    "ExperimentPlan",
    "ExperimentRow",
    "SummaryRow",
    "run_plan",
    "summarize",
    "runtime_profile",
    "loglog_slope",
    "write_results_csv",
    "read_results_csv",
    "write_summary_csv",
    "pool_size",
]

log = logging.getLogger(__name__)

RESULT_HEADER = ("grid_n", "grid_s", "policy", "replicate", "coef", "estimate",
                 "sq_err", "seconds", "converged")
SUMMARY_HEADER = ("grid_n", "grid_s", "policy", "coef", "replicates", "mean", "mse",
                  "q05", "q25", "q50", "q75", "q95", "seconds")
QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)

# overrides applied by ``at_full_scale`` unless the plan supplies its own
FULL_SCALE = {"generator": {"n_nodes": 5000, "n_seed": 25000}, "replicates": 100}


def pool_size(requested: int | None = None) -> int:
    """Worker count, capped by the ``RELCHOICE_THREADS`` environment variable."""
    n = requested or os.cpu_count() or 1
    cap = os.environ.get("RELCHOICE_THREADS")
    if cap:
        n = min(n, max(1, int(cap)))
    return max(1, n)


def _deep_update(base: dict, extra: Mapping) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), Mapping):
            out[k] = _deep_update(dict(out[k]), v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class ExperimentPlan:
    """A replicated grid of fits.

    Attributes
    ----------
    kind : {"clogit", "demix"}
        ``clogit`` fits one conditional logit with ``spec``; ``demix``
        fits the modes of ``partition`` and the grid policy drives the
        sampling of the mode named by ``vary_mode``.
    generator, events, warmup
        Data source. With ``generator`` each replicate draws a fresh stream
        unless ``regenerate`` is false; with ``events`` (a CSV path) the
        first ``warmup`` events only build up the graph.
    n, s, budget
        Sample sizes and choice-set sizes. With ``budget`` the grid runs
        over ``s`` and sets ``n = budget / s``, which must be an integer.
        An ``n`` of ``null`` means every available choice.
    policies : list of str or dict
        ``"uniform"``, ``"stratified"`` (even quotas over the three
        strata), ``"importance"`` or a full policy dict without ``s``.
    theta_true : list or dict, optional
        Reference values for squared errors, by position or by coefficient
        name. Defaults to the generator's truth.
    """

    name: str = "experiment"
    kind: str = "clogit"
    generator: dict | None = None
    events: str | None = None
    warmup: int = 0
    regenerate: bool = True
    spec: object = "synthetic"
    partition: dict | None = None
    vary_mode: str = "local"
    n: list = field(default_factory=lambda: [None])
    s: list = field(default_factory=lambda: [24])
    budget: int | None = None
    policies: list = field(default_factory=lambda: ["uniform", "stratified"])
    replicates: int = 20
    seed: int = 0
    theta_true: object = None
    tol: float = 1e-8
    max_iter: int = 1000
    full_scale: dict | None = None
    description: str = ""

    def __post_init__(self):
        if self.kind not in ("clogit", "demix"):
            raise ValueError(f"unknown plan kind {self.kind!r}")
        if (self.generator is None) == (self.events is None):
            raise ValueError("give exactly one of 'generator' and 'events'")
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if not self.s or not self.policies:
            raise ValueError("the grid is empty")
        if self.budget is None and not self.n:
            raise ValueError("the grid is empty")
        if self.budget is not None:
            for s in self.s:
                if self.budget % s:
                    raise ValueError(f"budget {self.budget} is not a multiple of s={s}")
        if self.kind == "demix" and self.partition is None:
            self.partition = ModePartition.local_rest().to_dict()

    @classmethod
    def from_dict(cls, d: Mapping) -> "ExperimentPlan":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown plan fields {sorted(unknown)}")
        return cls(**copy.deepcopy(dict(d)))

    @classmethod
    def from_json(cls, path) -> "ExperimentPlan":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {k: copy.deepcopy(getattr(self, k)) for k in self.__dataclass_fields__}

    def at_full_scale(self) -> "ExperimentPlan":
        """Copy with the full-size overrides applied."""
        extra = self.full_scale if self.full_scale is not None else FULL_SCALE
        d = self.to_dict()
        if self.generator is None:
            extra = {k: v for k, v in extra.items() if k != "generator"}
        return ExperimentPlan.from_dict(_deep_update(d, extra))

    def grid(self) -> list[tuple[int | None, int, str]]:
        """``(n, s, policy label)`` in output order."""
        out = []
        for pol in self.policies:
            label = _policy_label(pol)
            for s in self.s:
                ns = [self.budget // s] if self.budget is not None else self.n
                out.extend((n, s, label) for n in ns)
        return out

    def truth(self) -> dict[str, float] | None:
        """Reference coefficient values keyed by output coefficient name."""
        ref = self.theta_true
        if ref is None and self.generator is not None:
            cfg = GeneratorConfig.from_dict(self.generator)
            full = dict(zip(cfg.feature_spec.names,
                            cfg.theta if cfg.kind == "single" else cfg.theta_local))
            if self.kind == "clogit":
                # a single logit on two-mode data has no true value to score against
                return full if cfg.kind == "single" else None
            if cfg.kind == "single":
                return None
            rest = dict(zip(cfg.feature_spec.names, cfg.theta_rest))
            out = {"pi:local": cfg.pi_local, "pi:rest": 1.0 - cfg.pi_local}
            out.update({f"local:{k}": v for k, v in full.items()})
            out.update({f"rest:{k}": v for k, v in rest.items()})
            return out
        if ref is None:
            return None
        if isinstance(ref, Mapping):
            return {str(k): float(v) for k, v in ref.items()}
        return dict(zip(self.coef_names(), map(float, ref)))

    def coef_names(self) -> list[str]:
        if self.kind == "clogit":
            return list(resolve_spec(self.spec).names)
        part = ModePartition.from_dict(self.partition)
        out = [f"pi:{m.name}" for m in part.modes]
        for m in part.modes:
            out += [f"{m.name}:{n}" for n in m.spec.names]
        return out


def _policy_label(pol) -> str:
    if isinstance(pol, str):
        return pol
    return pol.get("label", pol["policy"])


def _make_policy(pol, s: int, strata=ALL_STRATA):
    d = {"policy": pol} if isinstance(pol, str) else {k: v for k, v in pol.items()
                                                       if k != "label"}
    d["s"] = s
    if d["policy"] == "stratified" and "quotas" not in d:
        d["quotas"] = {g.name.lower(): v for g, v in even_quotas(s, strata).items()}
    return d


@dataclass
class ExperimentRow:
    """One fitted grid point of one replicate."""

    grid_n: int
    grid_s: int
    policy: str
    replicate: int
    coefs: list
    estimates: np.ndarray
    sq_err: np.ndarray
    seconds: float
    converged: bool
    message: str = ""

    def long(self) -> list[tuple]:
        """Rows of the results table, one per coefficient."""
        return [(self.grid_n, self.grid_s, self.policy, self.replicate, c,
                 float(e), float(q), self.seconds, self.converged)
                for c, e, q in zip(self.coefs, self.estimates, self.sq_err)]


def _replicate_seeds(master: int, r: int) -> tuple[int, int]:
    """(generator seed, sampling seed) for replicate ``r``."""
    a, b = np.random.SeedSequence([master, r]).generate_state(2)
    return int(a), int(b)


@functools.lru_cache(maxsize=2)
def _cached_source(generator_json: str | None, path: str | None, warmup: int):
    if generator_json is not None:
        run = generate(GeneratorConfig.from_dict(json.loads(generator_json)))
        return run.state, run.events
    events, n_nodes, _ = read_events_csv(path)
    state = replay(GraphState(n_nodes), events[:warmup])
    return state, events[warmup:]


def _load_source(plan: ExperimentPlan, r: int):
    """Graph before the first choice and the choice events for replicate r.

    Callers must not mutate the returned state: sources that every
    replicate shares are cached.
    """
    gen_seed, _ = _replicate_seeds(plan.seed, r if plan.regenerate else 0)
    if plan.generator is not None:
        blob = json.dumps({**plan.generator, "seed": gen_seed}, sort_keys=True)
        if plan.regenerate:
            return _cached_source.__wrapped__(blob, None, 0)
        return _cached_source(blob, None, 0)
    return _cached_source(None, plan.events, plan.warmup)


def _score(names, theta, truth):
    if truth is None:
        return np.full(len(names), np.nan)
    ref = np.array([truth.get(n, np.nan) for n in names])
    return (np.asarray(theta) - ref) ** 2


def _timed_fit(data: ChoiceData, plan: ExperimentPlan):
    t0 = time.perf_counter()
    res = fit(data, tol=plan.tol, max_iter=plan.max_iter, with_se=False)
    return res, time.perf_counter() - t0


def _run_replicate(plan_dict: dict, r: int) -> list[ExperimentRow]:
    plan = ExperimentPlan.from_dict(plan_dict)
    truth = plan.truth()
    state, events = _load_source(plan, r)
    _, samp_seed = _replicate_seeds(plan.seed, r)
    grid = plan.grid()
    longest: dict[tuple, int] = {}
    for n, s, label in grid:
        want = len(events) if n is None else n
        if want > len(events):
            raise ValueError(f"grid asks for n={n} but only {len(events)} choices exist")
        longest[(label, s)] = max(longest.get((label, s), 0), want)
    pols = {_policy_label(p): p for p in plan.policies}
    if plan.kind == "clogit":
        return _clogit_rows(plan, r, state, events, samp_seed, grid, longest, pols, truth)
    return _demix_rows(plan, r, state, events, samp_seed, grid, pols, truth)


def _clogit_rows(plan, r, state, events, seed, grid, longest, pols, truth):
    spec = resolve_spec(plan.spec)
    names = list(spec.names)
    policies = {f"{label}:{s}": policy_from_dict(_make_policy(pols[label], s))
                for (label, s) in longest}
    n_max = max(longest.values())
    datas = reduce_events(state, events[:n_max], spec, policies, seed)
    rows = []
    for n, s, label in grid:
        data = datas[f"{label}:{s}"]
        n_eff = len(events) if n is None else n
        try:
            res, secs = _timed_fit(data.prefix(n_eff), plan)
            est, ok, msg = res.theta, res.converged, res.message
        except Exception as exc:  # recorded in the row, the sweep goes on
            est, ok, msg, secs = np.full(len(names), np.nan), False, str(exc), 0.0
        rows.append(ExperimentRow(n_eff, s, label, r, names, np.asarray(est, float),
                                  _score(names, est, truth), secs, bool(ok), msg))
    return rows


def _demix_rows(plan, r, state, events, seed, grid, pols, truth):
    base = ModePartition.from_dict(plan.partition)
    if plan.vary_mode not in base.names:
        raise ValueError(f"partition has no mode {plan.vary_mode!r}")
    names = plan.coef_names()
    rows = []
    by_n: dict = {}
    for n, s, label in grid:
        by_n.setdefault(len(events) if n is None else n, []).append((s, label))
    out: dict = {}
    for n_eff, points in by_n.items():
        parts = {}
        for s, label in points:
            d = base.to_dict()
            for m, mode in zip(d["modes"], base.modes):
                if mode.name == plan.vary_mode:
                    m["sampling"] = _make_policy(pols[label], s, mode.strata)
            parts[(s, label)] = ModePartition.from_dict(d)
        built = build_demixed_many(parts, state, events[:n_eff], seed)
        for key, (datas, assigned) in built.items():
            out[(n_eff,) + key] = (parts[key], datas, assigned)
    for n, s, label in grid:
        n_eff = len(events) if n is None else n
        part, datas, assigned = out[(n_eff, s, label)]
        counts = np.bincount(assigned, minlength=len(part))
        est, ok, msgs, secs = [], True, [], 0.0
        est.extend(counts / counts.sum())
        for m, d in zip(part.modes, datas):
            k = len(m.spec)
            if d is None:
                est.extend([np.nan] * k)
                ok, msgs = False, msgs + [f"{m.name}: no observations"]
                continue
            try:
                res, dt = _timed_fit(d, plan)
                secs += dt
                est.extend(res.theta)
                ok = ok and res.converged
                if not res.converged:
                    msgs.append(f"{m.name}: {res.message}")
            except Exception as exc:
                est.extend([np.nan] * k)
                ok, msgs = False, msgs + [f"{m.name}: {exc}"]
        est = np.asarray(est, float)
        rows.append(ExperimentRow(n_eff, s, label, r, names, est, _score(names, est, truth),
                                  secs, ok, "; ".join(msgs)))
    return rows


def run_plan(plan: ExperimentPlan | Mapping, workers: int | None = None,
             replicates: Iterable[int] | None = None) -> list[ExperimentRow]:
    """Run every replicate of ``plan`` and return rows in (grid, replicate) order.

    Replicates are distributed over a process pool of ``pool_size(workers)``
    processes; the output does not depend on the pool size.
    """
    if not isinstance(plan, ExperimentPlan):
        plan = ExperimentPlan.from_dict(plan)
    reps = list(range(plan.replicates)) if replicates is None else list(replicates)
    d = plan.to_dict()
    k = min(pool_size(workers), len(reps))
    if k <= 1:
        chunks = [_run_replicate(d, r) for r in reps]
    else:
        with ProcessPoolExecutor(max_workers=k) as pool:
            chunks = list(pool.map(_run_replicate, [d] * len(reps), reps))
    # each chunk is in grid order; interleave replicates within a grid point
    keyed = [(g, row.replicate, row) for chunk in chunks for g, row in enumerate(chunk)]
    keyed.sort(key=lambda x: (x[0], x[1]))
    return [row for _, _, row in keyed]


# ---------------------------------------------------------------------------
# summaries


@dataclass
class SummaryRow:
    grid_n: int
    grid_s: int
    policy: str
    coef: str
    replicates: int
    mean: float
    mse: float
    quantiles: np.ndarray
    seconds: float

    def as_tuple(self) -> tuple:
        return (self.grid_n, self.grid_s, self.policy, self.coef, self.replicates,
                self.mean, self.mse, *map(float, self.quantiles), self.seconds)


def _long_rows(rows) -> list[tuple]:
    out = []
    for row in rows:
        out.extend(row.long() if isinstance(row, ExperimentRow) else [tuple(row)])
    return out


def summarize(rows: Sequence, theta_true: Mapping | None = None) -> list[SummaryRow]:
    """Per grid point and coefficient: mean, MSE, quantiles and mean fit time.

    ``rows`` may be :class:`ExperimentRow` objects or long result tuples as
    read back by :func:`read_results_csv`. With ``theta_true`` (a mapping
    from coefficient name to value) squared errors are recomputed,
    otherwise the recorded ones are averaged. Non-finite estimates from
    failed fits are left out.
    """
    groups: dict = {}
    for n, s, pol, _, coef, est, sq, secs, _ok in _long_rows(rows):
        g = groups.setdefault((int(n), int(s), str(pol), str(coef)), ([], [], []))
        g[0].append(float(est))
        g[1].append(float(sq))
        g[2].append(float(secs))
    out = []
    for (n, s, pol, coef), (est, sq, secs) in groups.items():
        est, sq = np.asarray(est), np.asarray(sq)
        ok = np.isfinite(est)
        est, sq = est[ok], sq[ok]
        if theta_true is not None and coef in theta_true:
            sq = (est - float(theta_true[coef])) ** 2
        if len(est):
            mean = float(est.mean())
            qs = np.quantile(est, QUANTILES)
            mse = float(sq.mean()) if np.all(np.isfinite(sq)) else math.nan
        else:
            mean, mse, qs = math.nan, math.nan, np.full(len(QUANTILES), np.nan)
        out.append(SummaryRow(n, s, pol, coef, int(len(est)), mean, mse, qs,
                              float(np.mean(secs))))
    return out


# ---------------------------------------------------------------------------
# runtime


def _random_choice_data(n: int, s: int, d: int, rng: np.random.Generator) -> ChoiceData:
    """Choices drawn from a conditional logit over Gaussian features."""
    X = rng.standard_normal((n * s, d))
    theta = rng.normal(0.0, 0.5, d)
    u = (X @ theta).reshape(n, s)
    p = np.exp(u - u.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    chosen = (p.cumsum(axis=1) < rng.random((n, 1))).sum(axis=1)
    return ChoiceData(X, np.zeros(n * s), np.arange(0, n * s + 1, s), chosen)


def runtime_profile(n_grid: Sequence[int], s_grid: Sequence[int], replicates: int = 5,
                    n_features: int = 8, seed: int = 0, tol: float = 1e-8,
                    ) -> list[tuple[int, int, float]]:
    """Mean fit wall time for every ``(n, s)`` on fixed-dimension synthetic data.

    Only the optimizer is timed. Each replicate draws fresh data.
    """
    rows = []
    for n in n_grid:
        for s in s_grid:
            times = []
            for r in range(replicates):
                rng = np.random.default_rng([seed, n, s, r])
                data = _random_choice_data(n, s, n_features, rng)
                t0 = time.perf_counter()
                fit(data, tol=tol, with_se=False)
                times.append(time.perf_counter() - t0)
            rows.append((int(n), int(s), float(np.mean(times))))
    return rows


def loglog_slope(rows: Sequence[tuple[int, int, float]]) -> float:
    """Least-squares slope of log(seconds) on log(n * s)."""
    x = np.log([n * s for n, s, _ in rows])
    y = np.log([t for _, _, t in rows])
    return float(np.polyfit(x, y, 1)[0])


# ---------------------------------------------------------------------------
# CSV


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, float):
        return "" if math.isnan(x) else repr(x)
    return str(x)


def write_results_csv(rows: Sequence, path, with_seconds: bool = True) -> None:
    """Long results table with the fixed header.

    ``with_seconds=False`` blanks the timing column, which is the only
    non-deterministic field.
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_HEADER)
        for rec in _long_rows(rows):
            rec = list(rec)
            if not with_seconds:
                rec[7] = math.nan
            w.writerow([_fmt(x) for x in rec])


def read_results_csv(path) -> list[tuple]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != RESULT_HEADER:
            raise ValueError(f"unexpected results header {header}")
        out = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(RESULT_HEADER):
                raise ValueError(f"line {lineno}: expected {len(RESULT_HEADER)} fields")
            n, s, pol, rep, coef, est, sq, secs, ok = row
            num = [float(v) if v else math.nan for v in (est, sq, secs)]
            out.append((int(n), int(s), pol, int(rep), coef, *num, ok == "1"))
    return out


def write_summary_csv(summary: Sequence[SummaryRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for row in summary:
            w.writerow([_fmt(x) for x in row.as_tuple()])
