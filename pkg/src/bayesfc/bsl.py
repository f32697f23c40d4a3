"""Score-based Bayesian structure learning over discretized windows.

A window is quantized per channel, candidate DAGs are scored with a
decomposable BDeu (or BIC) score, and a greedy hill climb with random
restarts looks for a high-scoring, weakly connected structure. Each edge of
the final structure is weighted by its log Bayes factor, the score lost when
the edge is deleted.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.special import gammaln

from .connectivity import ConnectivityMatrix, DynamicConnectivity
from .errors import InvalidRecording, NonFiniteScore
from .signal import BandSpec, Recording, WindowPlan, bandpass, slice_windows
from .utils import derive_seed

IMPROVEMENT_TOL = 1e-9
# Present edges never fall below this weight, so the thresholded-at-zero
# skeleton of an estimate stays weakly connected.
MIN_EDGE_STRENGTH = 1e-6


@dataclass(frozen=True, eq=False)
class QuantizedWindow:
    data: np.ndarray  # (n_channels, n_samples) bin indices
    n_bins: int

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.int64)
        if d.ndim != 2:
            raise ValueError("quantized data must be 2-D")
        if self.n_bins < 2:
            raise ValueError("need at least 2 bins")
        if d.size and (d.min() < 0 or d.max() >= self.n_bins):
            raise ValueError("bin index out of range")
        d.setflags(write=False)
        object.__setattr__(self, "data", d)

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class ScoreParams:
    kind: str = "bdeu"
    ess: float = 1.0
    n_bins: int = 3
    max_parents: int = 3

    def __post_init__(self):
        object.__setattr__(self, "kind", self.kind.lower())
        if self.kind not in ("bdeu", "bic"):
            raise ValueError(f"score kind must be 'bdeu' or 'bic', got {self.kind!r}")
        if not self.ess > 0:
            raise ValueError("ess must be positive")
        if self.max_parents < 1:
            raise ValueError("max_parents must be >= 1")
        if not 2 <= self.n_bins <= 5:
            raise ValueError("n_bins must be in [2, 5]")


@dataclass(frozen=True)
class SearchConfig:
    max_sweeps: int = 200
    patience_sweeps: int = 2
    restarts: int = 10
    init_edge_prob: float = 0.2
    seed: int = 0
    allow_reversal: bool = True

    def __post_init__(self):
        if self.restarts < 1 or self.patience_sweeps < 1:
            raise ValueError("restarts and patience_sweeps must be >= 1")
        if not 0.0 <= self.init_edge_prob <= 1.0:
            raise ValueError("init_edge_prob must lie in [0, 1]")


@dataclass(frozen=True)
class CountTable:
    node: int
    counts: np.ndarray  # (q, r)

    @property
    def parent_config_count(self) -> int:
        return self.counts.shape[0]


@dataclass(frozen=True)
class Dag:
    """Directed acyclic graph stored as sorted parent tuples per node."""

    parents: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        ps = tuple(tuple(sorted(set(int(p) for p in pa))) for pa in self.parents)
        object.__setattr__(self, "parents", ps)
        for v, pa in enumerate(ps):
            if v in pa:
                raise ValueError(f"node {v} lists itself as a parent")
        if self.topological_order() is None:
            raise ValueError("graph contains a cycle")

    @classmethod
    def empty(cls, n: int) -> "Dag":
        return cls(tuple(() for _ in range(n)))

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[tuple[int, int]]) -> "Dag":
        pa: list[set[int]] = [set() for _ in range(n)]
        for u, v in edges:
            pa[v].add(u)
        return cls(tuple(tuple(p) for p in pa))

    @property
    def n_nodes(self) -> int:
        return len(self.parents)

    def edges(self) -> list[tuple[int, int]]:
        return [(u, v) for v, pa in enumerate(self.parents) for u in pa]

    def skeleton(self) -> set[frozenset[int]]:
        return {frozenset(e) for e in self.edges()}

    def max_in_degree(self) -> int:
        return max((len(p) for p in self.parents), default=0)

    def topological_order(self) -> list[int] | None:
        n = len(self.parents)
        indeg = [len(p) for p in self.parents]
        children: list[list[int]] = [[] for _ in range(n)]
        for v, pa in enumerate(self.parents):
            for u in pa:
                children[u].append(v)
        order = [v for v in range(n) if indeg[v] == 0]
        for u in order:
            for v in children[u]:
                indeg[v] -= 1
                if indeg[v] == 0:
                    order.append(v)
        return order if len(order) == n else None

    def without_edge(self, u: int, v: int) -> "Dag":
        ps = list(self.parents)
        ps[v] = tuple(p for p in ps[v] if p != u)
        return Dag(tuple(ps))

    def with_edge(self, u: int, v: int) -> "Dag":
        ps = list(self.parents)
        ps[v] = ps[v] + (u,)
        return Dag(tuple(ps))


def quantize(window: Recording | np.ndarray, n_bins: int) -> QuantizedWindow:
    """Per-channel empirical-quantile binning.

    Sample ``s`` goes to bin ``b`` when it lies in ``[q_b, q_{b+1})`` of that
    channel's quantiles ``q_b = quantile(b / n_bins)``; the top bin is closed.
    A constant channel maps to bin 0.
    """
    if not 2 <= n_bins <= 5:
        raise ValueError("n_bins must be in [2, 5]")
    x = window.samples if isinstance(window, Recording) else np.atleast_2d(np.asarray(window, float))
    out = np.zeros(x.shape, dtype=np.int64)
    probs = np.arange(1, n_bins) / n_bins
    for c, row in enumerate(x):
        if np.ptp(row) == 0:
            continue
        edges = np.quantile(row, probs)
        out[c] = np.searchsorted(edges, row, side="right")
    return QuantizedWindow(out, n_bins)


def family_counts(qw: QuantizedWindow, node: int, parents: Sequence[int]) -> CountTable:
    """Joint counts of (parent configuration, node value); first parent most significant."""
    r = qw.n_bins
    data = qw.data
    idx = np.zeros(qw.n_samples, dtype=np.int64)
    for p in parents:
        idx = idx * r + data[p]
    q = r ** len(parents)
    counts = np.bincount(idx * r + data[node], minlength=q * r).reshape(q, r)
    return CountTable(node, counts)


def family_score(ct: CountTable, params: ScoreParams, m: int | None = None) -> float:
    counts = np.asarray(ct.counts, dtype=float)
    q, r = counts.shape
    n_j = counts.sum(axis=1)
    if params.kind == "bdeu":
        a_jk = params.ess / (q * r)
        a_j = params.ess / q
        # empty parent configurations contribute exactly zero; skip them
        occupied = n_j > 0
        c = counts[occupied]
        s = np.sum(gammaln(a_j) - gammaln(a_j + n_j[occupied])) + np.sum(gammaln(a_jk + c) - gammaln(a_jk))
    else:
        if m is None:
            m = int(counts.sum())
        nz = counts > 0
        ratio = counts[nz] / np.broadcast_to(n_j[:, None], counts.shape)[nz]
        loglik = float(np.sum(counts[nz] * np.log(ratio)))
        s = loglik - 0.5 * q * (r - 1) * math.log(m) if m > 0 else loglik
    s = float(s)
    if not math.isfinite(s):
        raise NonFiniteScore(f"non-finite family score for node {ct.node}")
    return s


class FamilyScorer:
    """Family-score cache keyed by ``(node, parent set)`` for one search."""

    def __init__(self, qw: QuantizedWindow, params: ScoreParams):
        if qw.n_bins != params.n_bins:
            raise ValueError(f"window has {qw.n_bins} bins but params expect {params.n_bins}")
        self.qw = qw
        self.params = params
        self._cache: dict[tuple[int, tuple[int, ...]], float] = {}
        self.misses = 0

    def __call__(self, node: int, parents: Iterable[int]) -> float:
        key = (node, tuple(sorted(parents)))
        val = self._cache.get(key)
        if val is None:
            self.misses += 1
            ct = family_counts(self.qw, node, key[1])
            val = family_score(ct, self.params, self.qw.n_samples)
            self._cache[key] = val
        return val

    def graph(self, g: Dag) -> float:
        return sum(self(v, pa) for v, pa in enumerate(g.parents))


def graph_score(qw: QuantizedWindow, g: Dag, params: ScoreParams) -> float:
    if g.n_nodes != qw.n_channels:
        raise ValueError(f"graph has {g.n_nodes} nodes, window has {qw.n_channels} channels")
    return sum(
        family_score(family_counts(qw, v, pa), params, qw.n_samples) for v, pa in enumerate(g.parents)
    )


def random_dag(n: int, init_edge_prob: float, seed: int, max_parents: int | None = None) -> Dag:
    """Random DAG consistent with a uniformly drawn topological order."""
    if n < 1:
        raise ValueError("need at least one node")
    max_parents = n - 1 if max_parents is None else max_parents
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    draws = rng.random((n, n))
    parents: list[list[int]] = [[] for _ in range(n)]
    for j in range(1, n):
        child = int(order[j])
        for i in range(j):
            if draws[i, j] < init_edge_prob and len(parents[child]) < max_parents:
                parents[child].append(int(order[i]))
    return Dag(tuple(tuple(p) for p in parents))


def _reachability(parents: Sequence[set[int]]) -> np.ndarray:
    n = len(parents)
    reach = np.zeros((n, n), dtype=bool)
    for v, pa in enumerate(parents):
        for u in pa:
            reach[u, v] = True
    for k in range(n):
        reach |= reach[:, k : k + 1] & reach[k : k + 1, :]
    return reach


@dataclass
class ClimbResult:
    dag: Dag
    score: float
    trace: list[float] = field(default_factory=list)
    sweeps: int = 0


def climb(scorer: FamilyScorer, start: Dag, cfg: SearchConfig) -> ClimbResult:
    """Steepest-ascent hill climb over add / delete / reverse moves."""
    n = start.n_nodes
    maxp = scorer.params.max_parents
    parents = [set(pa) for pa in start.parents]
    fam = [scorer(v, pa) for v, pa in enumerate(parents)]
    total = sum(fam)
    trace = [total]
    stale = 0
    sweeps = 0
    while sweeps < cfg.max_sweeps:
        sweeps += 1
        reach = _reachability(parents)
        best_delta = IMPROVEMENT_TOL
        best = None
        for v in range(n):
            for u in range(n):
                if u == v:
                    continue
                if u in parents[v]:
                    drop = scorer(v, parents[v] - {u}) - fam[v]
                    if drop > best_delta:
                        best_delta, best = drop, ("del", u, v)
                    if cfg.allow_reversal and len(parents[u]) < maxp:
                        # reversing u->v is acyclic iff v is not reachable from u by another route
                        others = [w for w in range(n) if w != v and u in parents[w]]
                        if not any(reach[w, v] for w in others):
                            d = drop + scorer(u, parents[u] | {v}) - fam[u]
                            if d > best_delta:
                                best_delta, best = d, ("rev", u, v)
                elif len(parents[v]) < maxp and not reach[v, u]:
                    d = scorer(v, parents[v] | {u}) - fam[v]
                    if d > best_delta:
                        best_delta, best = d, ("add", u, v)
        if best is None:
            stale += 1
            if stale >= cfg.patience_sweeps:
                break
            continue
        stale = 0
        kind, u, v = best
        if kind == "add":
            parents[v].add(u)
        elif kind == "del":
            parents[v].discard(u)
        else:
            parents[v].discard(u)
            parents[u].add(v)
        for w in {u, v}:
            fam[w] = scorer(w, parents[w])
        total = sum(fam)
        trace.append(total)
    dag = Dag(tuple(tuple(p) for p in parents))
    return ClimbResult(dag, total, trace, sweeps)


def _restart_results(qw: QuantizedWindow, params: ScoreParams, cfg: SearchConfig, scorer=None):
    scorer = scorer or FamilyScorer(qw, params)
    results = []
    for k in range(cfg.restarts):
        start = random_dag(qw.n_channels, cfg.init_edge_prob, derive_seed(cfg.seed, "restart", k), params.max_parents)
        results.append(climb(scorer, start, cfg))
    return scorer, results


def hill_climb(qw: QuantizedWindow, params: ScoreParams, cfg: SearchConfig) -> tuple[Dag, float]:
    """Best structure over ``cfg.restarts`` randomly initialized climbs."""
    _, results = _restart_results(qw, params, cfg)
    best = max(results, key=lambda r: r.score)
    return best.dag, best.score


def enumerate_dags(n: int, max_parents: int | None = None) -> list[Dag]:
    """All DAGs on ``n`` labelled nodes (25 for n=3, 543 for n=4)."""
    max_parents = n - 1 if max_parents is None else max_parents
    options = []
    for v in range(n):
        others = [u for u in range(n) if u != v]
        options.append([c for k in range(max_parents + 1) for c in itertools.combinations(others, k)])
    out = []
    for combo in itertools.product(*options):
        try:
            out.append(Dag(combo))
        except ValueError:
            continue
    return out


def exhaustive_best(qw: QuantizedWindow, params: ScoreParams) -> tuple[Dag, float]:
    scorer = FamilyScorer(qw, params)
    best = None
    for g in enumerate_dags(qw.n_channels, params.max_parents):
        s = scorer.graph(g)
        if best is None or s > best[1]:
            best = (g, s)
    return best


def components(g: Dag) -> list[list[int]]:
    """Weakly connected components, each found by depth-first search."""
    n = g.n_nodes
    adj: list[set[int]] = [set() for _ in range(n)]
    for u, v in g.edges():
        adj[u].add(v)
        adj[v].add(u)
    seen = [False] * n
    comps = []
    for root in range(n):
        if seen[root]:
            continue
        stack, comp = [root], []
        seen[root] = True
        while stack:
            u = stack.pop()
            comp.append(u)
            for w in adj[u]:
                if not seen[w]:
                    seen[w] = True
                    stack.append(w)
        comps.append(sorted(comp))
    return comps


def is_weakly_connected(g: Dag) -> bool:
    return g.n_nodes <= 1 or len(components(g)[0]) == g.n_nodes


def connect_components(scorer: FamilyScorer, g: Dag) -> Dag:
    """Greedily add the best-scoring cross-component edge until weakly connected.

    A cross-component edge can never close a cycle, and every component has a
    parentless node, so a legal edge always exists.
    """
    maxp = scorer.params.max_parents
    while True:
        comps = components(g)
        if len(comps) == 1:
            return g
        label = {v: k for k, comp in enumerate(comps) for v in comp}
        best = None
        for v in range(g.n_nodes):
            pa = g.parents[v]
            if len(pa) >= maxp:
                continue
            base = scorer(v, pa)
            for u in range(g.n_nodes):
                if label[u] == label[v]:
                    continue
                d = scorer(v, pa + (u,)) - base
                if best is None or d > best[0]:
                    best = (d, u, v)
        g = g.with_edge(best[1], best[2])


def edge_strengths(
    qw: QuantizedWindow,
    g: Dag,
    params: ScoreParams,
    channel_names: Sequence[str] | None = None,
    scorer: FamilyScorer | None = None,
) -> ConnectivityMatrix:
    """Symmetric matrix of per-edge deletion deltas (log Bayes factors)."""
    scorer = scorer or FamilyScorer(qw, params)
    n = g.n_nodes
    w = np.zeros((n, n))
    for u, v in g.edges():
        pa = g.parents[v]
        delta = scorer(v, pa) - scorer(v, tuple(p for p in pa if p != u))
        w[u, v] = w[v, u] = max(MIN_EDGE_STRENGTH, delta)
    names = tuple(channel_names) if channel_names is not None else tuple(f"ch{i}" for i in range(n))
    return ConnectivityMatrix(names, w, method="bsl", score=scorer.graph(g))


@dataclass
class WindowEstimate:
    dag: Dag
    matrix: ConnectivityMatrix
    used_fallback: bool


def estimate_window_full(window: Recording, params: ScoreParams, cfg: SearchConfig) -> WindowEstimate:
    qw = quantize(window, params.n_bins)
    if qw.n_samples < params.n_bins:
        raise InvalidRecording("window is too short to quantize")
    scorer, results = _restart_results(qw, params, cfg)
    connected = [r for r in results if is_weakly_connected(r.dag)]
    fallback = not connected
    if connected:
        dag = max(connected, key=lambda r: r.score).dag
    else:
        dag = connect_components(scorer, max(results, key=lambda r: r.score).dag)
    cm = edge_strengths(qw, dag, params, window.channel_names, scorer)
    return WindowEstimate(dag, cm, fallback)


def estimate_window(window: Recording, params: ScoreParams, cfg: SearchConfig) -> ConnectivityMatrix:
    """Restart-based climb, weak-connectivity repair, and edge weighting for one window."""
    return estimate_window_full(window, params, cfg).matrix


def _window_job(args):
    k, window, params, cfg, band_name = args
    cm = estimate_window(window, params, cfg)
    return ConnectivityMatrix(
        cm.channel_names, cm.weights, method="bsl", band=band_name, window_index=k, score=cm.score
    )


def window_configs(cfg: SearchConfig, n_windows: int) -> list[SearchConfig]:
    return [
        SearchConfig(
            cfg.max_sweeps, cfg.patience_sweeps, cfg.restarts, cfg.init_edge_prob,
            derive_seed(cfg.seed, "window", k), cfg.allow_reversal,
        )
        for k in range(n_windows)
    ]


def estimate_dynamic(
    r: Recording,
    band: BandSpec,
    plan: WindowPlan,
    params: ScoreParams,
    cfg: SearchConfig,
    workers: int = 1,
    prefiltered: bool = False,
) -> DynamicConnectivity:
    """Band-pass, slice, and estimate every window with its own derived seed.

    ``prefiltered`` skips the band-pass for recordings that already went
    through it.
    """
    filtered = r if prefiltered else bandpass(r, band)
    windows = slice_windows(filtered, plan)
    jobs = [
        (k, w, params, c, band.name)
        for k, (w, c) in enumerate(zip(windows, window_configs(cfg, len(windows))))
    ]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            slices = list(pool.map(_window_job, jobs))
    else:
        slices = [_window_job(j) for j in jobs]
    meta = {"method": "bsl", "seed": cfg.seed, "score": params.kind, "ess": params.ess,
            "n_bins": params.n_bins, "max_parents": params.max_parents, "restarts": cfg.restarts}
    return DynamicConnectivity(tuple(slices), plan, band, meta)
