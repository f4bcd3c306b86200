"""Conditional logit maximum likelihood on (possibly sampled) choice sets.

The choice probability of alternative ``l`` in a reduced set is the
softmax of ``theta @ x_l - log q_l``. Records of varying length are stored
ragged: one stacked feature matrix plus row offsets, so the likelihood,
score and Hessian are single vectorized passes over all rows.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import optimize

from .event_graph import Event, GraphState
from .features import FeatureSpec, extract_all

__all__ = [
    "ChoiceRecord",
    "ChoiceData",
    "FitResult",
    "IdentifiabilityError",
    "log_likelihood",
    "gradient",
    "hessian",
    "choice_probabilities",
    "fit",
    "loglik_full_oracle",
    "full_choice_data",
]

log = logging.getLogger(__name__)


class IdentifiabilityError(ValueError):
    """A feature column is constant within every choice set."""


@dataclass
class ChoiceRecord:
    X: np.ndarray
    log_q: np.ndarray
    chosen: int

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.log_q = np.asarray(self.log_q, dtype=float).reshape(-1)
        if self.X.shape[0] < 2:
            raise ValueError("a choice record needs at least two alternatives")
        if self.log_q.shape[0] != self.X.shape[0]:
            raise ValueError("log_q misaligned with feature rows")
        if not 0 <= self.chosen < self.X.shape[0]:
            raise ValueError("chosen index out of range")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.log_q))):
            raise ValueError("non-finite values in choice record")


class ChoiceData:
    """A batch of choice records stored as one ragged array.

    Parameters
    ----------
    X : ndarray, shape (n_rows, d)
        Features of every alternative of every record, record by record.
    log_q : ndarray, shape (n_rows,)
    offsets : ndarray, shape (n_records + 1,)
        Record ``r`` owns rows ``offsets[r]:offsets[r + 1]``.
    chosen : ndarray, shape (n_records,)
        Index of the chosen row within each record.
    names : sequence of str, optional
        Feature names.
    nodes : ndarray, shape (n_rows,), optional
        Node id behind every row, when known.
    """

    def __init__(self, X, log_q, offsets, chosen, names: Sequence[str] | None = None,
                 nodes=None):
        self.X = np.ascontiguousarray(X, dtype=float)
        self.log_q = np.ascontiguousarray(log_q, dtype=float)
        self.offsets = np.asarray(offsets, dtype=np.int64)
        self.chosen = np.asarray(chosen, dtype=np.int64)
        self.names = tuple(names) if names is not None else None
        self.nodes = None if nodes is None else np.asarray(nodes, dtype=np.int64)
        sizes = np.diff(self.offsets)
        if self.X.ndim != 2 or self.X.shape[0] != self.log_q.shape[0]:
            raise ValueError("X and log_q disagree on the number of rows")
        if self.offsets[0] != 0 or self.offsets[-1] != self.X.shape[0]:
            raise ValueError("offsets do not span the rows")
        if np.any(sizes < 2):
            raise ValueError("every record needs at least two alternatives")
        if len(self.chosen) != len(sizes) or np.any(self.chosen < 0) or np.any(self.chosen >= sizes):
            raise ValueError("chosen index out of range")

    @classmethod
    def from_records(cls, records: Iterable[ChoiceRecord], names=None) -> "ChoiceData":
        records = list(records)
        if not records:
            raise ValueError("no records")
        sizes = [r.X.shape[0] for r in records]
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        return cls(np.vstack([r.X for r in records]),
                   np.concatenate([r.log_q for r in records]),
                   offsets, [r.chosen for r in records], names)

    @classmethod
    def concat(cls, parts: Sequence["ChoiceData"]) -> "ChoiceData":
        sizes = np.concatenate([np.diff(p.offsets) for p in parts])
        return cls(np.vstack([p.X for p in parts]),
                   np.concatenate([p.log_q for p in parts]),
                   np.concatenate([[0], np.cumsum(sizes)]),
                   np.concatenate([p.chosen for p in parts]),
                   parts[0].names)

    def __len__(self) -> int:
        return len(self.chosen)

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]

    @property
    def sizes(self) -> np.ndarray:
        return np.diff(self.offsets)

    @property
    def chosen_rows(self) -> np.ndarray:
        return self.offsets[:-1] + self.chosen

    def prefix(self, n: int) -> "ChoiceData":
        """The first ``n`` records."""
        end = self.offsets[n]
        nodes = None if self.nodes is None else self.nodes[:end]
        return ChoiceData(self.X[:end], self.log_q[:end], self.offsets[:n + 1],
                          self.chosen[:n], self.names, nodes)

    def record(self, r: int) -> ChoiceRecord:
        a, b = self.offsets[r], self.offsets[r + 1]
        return ChoiceRecord(self.X[a:b], self.log_q[a:b], int(self.chosen[r]))

    def records(self) -> list[ChoiceRecord]:
        return [self.record(r) for r in range(len(self))]

    def constant_columns(self) -> list[int]:
        """Columns that never vary within any single record."""
        starts = self.offsets[:-1]
        spread = (np.maximum.reduceat(self.X, starts, axis=0)
                  - np.minimum.reduceat(self.X, starts, axis=0))
        return [k for k in range(self.n_features) if not np.any(spread[:, k] > 0)]


def _as_data(data) -> ChoiceData:
    if isinstance(data, ChoiceData):
        return data
    if isinstance(data, ChoiceRecord):
        return ChoiceData.from_records([data])
    return ChoiceData.from_records(data)


def _utilities(theta, data: ChoiceData) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (data.n_features,):
        raise ValueError(f"theta has shape {theta.shape}, expected ({data.n_features},)")
    return data.X @ theta - data.log_q


def _log_normalizers(v: np.ndarray, data: ChoiceData) -> np.ndarray:
    starts = data.offsets[:-1]
    m = np.maximum.reduceat(v, starts)
    z = np.add.reduceat(np.exp(v - np.repeat(m, data.sizes)), starts)
    return m + np.log(z)


def log_likelihood(theta, data) -> float:
    data = _as_data(data)
    v = _utilities(theta, data)
    lse = _log_normalizers(v, data)
    return float(np.sum(v[data.chosen_rows]) - np.sum(lse))


def choice_probabilities(theta, data) -> np.ndarray:
    """Corrected softmax probability of every row within its record."""
    data = _as_data(data)
    v = _utilities(theta, data)
    lse = _log_normalizers(v, data)
    return np.exp(v - np.repeat(lse, data.sizes))


def _loglik_grad(theta, data: ChoiceData):
    v = _utilities(theta, data)
    lse = _log_normalizers(v, data)
    p = np.exp(v - np.repeat(lse, data.sizes))
    ll = float(np.sum(v[data.chosen_rows]) - np.sum(lse))
    g = data.X[data.chosen_rows].sum(axis=0) - p @ data.X
    return ll, g, p


def gradient(theta, data) -> np.ndarray:
    data = _as_data(data)
    return _loglik_grad(theta, data)[1]


def hessian(theta, data) -> np.ndarray:
    """Analytic Hessian of the log-likelihood (negative semi-definite)."""
    data = _as_data(data)
    p = choice_probabilities(theta, data)
    px = p[:, None] * data.X
    xbar = np.add.reduceat(px, data.offsets[:-1], axis=0)
    return -(data.X.T @ px - xbar.T @ xbar)


def _fd_hessian(theta, data: ChoiceData, h: float = 1e-5) -> np.ndarray:
    """Central differences of the analytic score, symmetrized."""
    d = len(theta)
    H = np.empty((d, d))
    for k in range(d):
        e = np.zeros(d)
        e[k] = h
        H[:, k] = (gradient(theta + e, data) - gradient(theta - e, data)) / (2 * h)
    return 0.5 * (H + H.T)


@dataclass
class FitResult:
    theta: np.ndarray
    se: np.ndarray
    loglik: float
    n_records: int
    iterations: int
    grad_norm: float
    converged: bool
    message: str = ""
    names: tuple | None = None
    meta: dict = field(default_factory=dict)

    @property
    def se_available(self) -> bool:
        return bool(np.all(np.isfinite(self.se)))

    def to_dict(self) -> dict:
        def _list(a):
            return [None if not math.isfinite(x) else float(x) for x in a]
        d = {"theta": _list(self.theta), "se": _list(self.se),
             "loglik": self.loglik, "n_records": self.n_records,
             "converged": self.converged, "iterations": self.iterations,
             "grad_norm": self.grad_norm, "message": self.message}
        if self.names is not None:
            d["names"] = list(self.names)
        d["spec_hash"] = self.meta.get("spec_hash")
        d["sampling_config"] = self.meta.get("sampling_config")
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        def _arr(a):
            return np.array([np.nan if x is None else x for x in a], dtype=float)
        return cls(_arr(d["theta"]), _arr(d["se"]), d["loglik"], d["n_records"],
                   d["iterations"], d.get("grad_norm", float("nan")), d["converged"],
                   d.get("message", ""), tuple(d["names"]) if d.get("names") else None,
                   {"spec_hash": d.get("spec_hash"),
                    "sampling_config": d.get("sampling_config")})


def _standard_errors(theta, data: ChoiceData) -> np.ndarray:
    info = -_fd_hessian(theta, data)
    try:
        eig = np.linalg.eigvalsh(info)
        if eig[0] <= 1e-10 * max(eig[-1], 1e-300):
            raise np.linalg.LinAlgError("information matrix singular")
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        return np.full(len(theta), np.nan)
    return np.sqrt(np.diag(cov))


MAX_NEWTON_STEP = 5.0


def _newton(theta, data: ChoiceData, tol: float, max_steps: int):
    """Damped Newton ascent with backtracking; stops at ``tol`` or on a stall.

    Returns ``(theta, loglik, score, mean score inf-norm, steps)``.
    """
    n = len(data)
    ll, g, _ = _loglik_grad(theta, data)
    gnorm = float(np.max(np.abs(g))) / n
    steps = 0
    while gnorm > tol and steps < max_steps:
        try:
            step = np.linalg.solve(hessian(theta, data), -g)
        except np.linalg.LinAlgError:
            break
        if not np.all(np.isfinite(step)) or g @ step <= 0:
            break
        # flat directions (near separation) would otherwise jump enormously
        big = np.max(np.abs(step))
        if big > MAX_NEWTON_STEP:
            step *= MAX_NEWTON_STEP / big
        noise = 1e-12 * abs(ll)
        t = 1.0
        while t > 1e-10:
            ll_new, g_new, _ = _loglik_grad(theta + t * step, data)
            if ll_new >= ll or (ll_new >= ll - noise
                                and np.max(np.abs(g_new)) < np.max(np.abs(g))):
                break
            t *= 0.5
        else:
            break
        gain = ll_new - ll
        theta = theta + t * step
        ll, g = ll_new, g_new
        gnorm_new = float(np.max(np.abs(g))) / n
        steps += 1
        # float noise near the optimum: no gain and no smaller score ends it
        if gain <= noise and gnorm_new >= gnorm:
            gnorm = gnorm_new
            break
        gnorm = gnorm_new
    return theta, ll, g, gnorm, steps


def fit(data, tol: float = 1e-8, max_iter: int = 1000, theta0=None,
        check_identifiable: bool = True, names: Sequence[str] | None = None,
        with_se: bool = True) -> FitResult:
    """Maximize the (corrected) conditional logit likelihood.

    The log-likelihood is concave, so damped Newton steps with the analytic
    Hessian normally converge in a handful of iterations. If Newton stalls
    (for instance on nearly separable data, where the Hessian degenerates)
    BFGS takes over on the per-record mean negative log-likelihood and a
    few Newton steps polish the result. Convergence means the infinity
    norm of the mean score is at most ``tol``. Standard errors come from a
    finite-difference Hessian of the log-likelihood at the optimum; with
    ``with_se=False`` they are skipped and reported as NaN.

    Perfectly separable data have no finite maximizer; such fits come back
    with ``converged=False`` rather than raising.
    """
    data = _as_data(data)
    n = len(data)
    if n == 0:
        raise ValueError("no records to fit")
    names = tuple(names) if names is not None else data.names
    d = data.n_features
    if check_identifiable:
        const = data.constant_columns()
        if const:
            labels = [names[k] if names else f"column {k}" for k in const]
            raise IdentifiabilityError(
                f"unidentified features (constant within every choice set): {labels}")
    theta = np.zeros(d) if theta0 is None else np.array(theta0, dtype=float)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        theta, ll, g, gnorm, iterations = _newton(theta, data, tol, min(100, max_iter))
        message = "converged"
        if gnorm > tol and iterations < max_iter:

            def f(th):
                ll, g, _ = _loglik_grad(th, data)
                return -ll / n, -g / n

            res = optimize.minimize(f, theta, jac=True, method="BFGS",
                                    options={"gtol": tol, "maxiter": max_iter - iterations})
            message = res.message or "not converged"
            iterations += int(res.nit)
            theta, ll, g, gnorm, steps = _newton(res.x, data, tol,
                                                 min(50, max(max_iter - iterations, 0)))
            iterations += steps

    converged = gnorm <= tol
    if converged:
        message = "converged"
    if ll / n > -1e-7:
        converged = False
        message = "diverged: every choice predicted with certainty (separable data)"
    elif not np.all(np.isfinite(theta)):
        converged = False
        message = "diverged: non-finite estimate"
    se = np.full(d, np.nan)
    if with_se and np.all(np.isfinite(theta)):
        se = _standard_errors(theta, data)
    if not converged:
        log.warning("conditional logit fit did not converge: %s", message)
    return FitResult(theta, se, float(ll), n, iterations, gnorm, bool(converged),
                     message, names)


# ---------------------------------------------------------------------------
# Full choice sets
# ---------------------------------------------------------------------------

DEFAULT_ORACLE_CAP = 20_000


def full_choice_data(state: GraphState, events: Sequence[Event], spec: FeatureSpec,
                     max_nodes: int = DEFAULT_ORACLE_CAP) -> ChoiceData:
    """Replay ``events`` on a copy of ``state``; every event is a choice
    over all nodes except its sender."""
    if state.n_nodes > max_nodes:
        raise ValueError(f"universe of {state.n_nodes} nodes exceeds the cap {max_nodes}")
    st = state.copy()
    n_alt = st.n_nodes - 1
    d = len(spec)
    X = np.empty((len(events) * n_alt, d))
    chosen = np.empty(len(events), dtype=np.int64)
    for r, e in enumerate(events):
        t, i, j = int(e[0]), int(e[1]), int(e[2])
        Xa = extract_all(st, i, t, spec)
        X[r * n_alt:(r + 1) * n_alt] = np.delete(Xa, i, axis=0)
        chosen[r] = j - (j > i)
        st.apply(e, position=r)
    offsets = np.arange(len(events) + 1) * n_alt
    return ChoiceData(X, np.zeros(len(X)), offsets, chosen, spec.names)


def loglik_full_oracle(theta, state: GraphState, events: Sequence[Event],
                       spec: FeatureSpec, max_nodes: int = DEFAULT_ORACLE_CAP) -> float:
    """Exact log-likelihood with complete choice sets (no sampling).

    Each event is scored against every node but its sender, with features
    taken just before the event; the caller's ``state`` is left untouched.
    """
    if state.n_nodes > max_nodes:
        raise ValueError(f"universe of {state.n_nodes} nodes exceeds the cap {max_nodes}")
    theta = np.asarray(theta, dtype=float)
    st = state.copy()
    total = 0.0
    for r, e in enumerate(events):
        t, i, j = int(e[0]), int(e[1]), int(e[2])
        u = extract_all(st, i, t, spec) @ theta
        u[i] = -np.inf
        m = np.max(u)
        total += u[j] - (m + math.log(np.sum(np.exp(u - m))))
        st.apply(e, position=r)
    return float(total)
