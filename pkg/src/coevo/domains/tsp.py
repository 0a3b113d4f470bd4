"""TSP evaluation domain.

TSPLIB ingestion (EUC_2D only, nearest-integer edge rounding), tour
validation and length, the relative-improvement gap metric, and three
reference metaheuristics (GA, ACO, penalty-guided 2-opt local search). Each
algorithm exposes one guide-function slot that an evolved candidate can
replace through the shim: fitness shaping for GA, desirability for ACO, and
edge-penalty scoring for the local search.
"""

from __future__ import annotations

import json
import math
import random
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

from ..sandbox import Probe, ProbeSet, SandboxError
from .base import RunSummary

ALGORITHMS = ("GA", "ACO", "KGLS")
WORST_GAP = -100.0

# Guide function: [(i, j, dist), ...] -> one score per edge, same order.
GuideFn = Callable[[list[tuple[int, int, float]]], list[float]]


class ParseError(Exception):
    def __init__(self, message: str, line: int):
        self.line = line
        super().__init__(f"line {line}: {message}")


class UnsupportedWeightType(Exception):
    pass


class NotAPermutation(Exception):
    pass


class NonpositiveBase(Exception):
    pass


class PluginFailure(Exception):
    pass


@dataclass(frozen=True)
class TspInstance:
    name: str
    dimension: int
    coords: tuple[tuple[float, float], ...]
    edge_weight_type: str = "EUC_2D"
    best_known: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "coords", tuple((float(x), float(y)) for x, y in self.coords))
        if self.edge_weight_type != "EUC_2D":
            raise UnsupportedWeightType(self.edge_weight_type)
        if self.dimension != len(self.coords) or self.dimension < 3:
            raise ValueError("dimension must equal the coordinate count and be >= 3")
        for x, y in self.coords:
            if not (math.isfinite(x) and math.isfinite(y)):
                raise ValueError("coordinates must be finite")


def parse_instance(text: str) -> TspInstance:
    """Parse TSPLIB keyword format with a NODE_COORD_SECTION."""
    name = ""
    dimension = None
    weight_type = ""
    coords: list[tuple[float, float]] = []
    lines = text.splitlines()
    index = 0
    in_coords = False
    coord_section_line = None
    while index < len(lines):
        lineno = index + 1
        line = lines[index].strip()
        index += 1
        if not line:
            continue
        if in_coords:
            if line == "EOF":
                break
            parts = line.split()
            if len(parts) != 3:
                raise ParseError(f"expected 'id x y', got {line!r}", lineno)
            try:
                coords.append((float(parts[1]), float(parts[2])))
            except ValueError:
                raise ParseError(f"non-numeric coordinate in {line!r}", lineno) from None
            if dimension is not None and len(coords) == dimension:
                in_coords = False
            continue
        if line == "EOF":
            break
        if line == "NODE_COORD_SECTION":
            in_coords = True
            coord_section_line = lineno
            continue
        if ":" in line:
            key, _, value = line.partition(":")
            key = key.strip().upper()
            value = value.strip()
        else:
            key, value = line.upper(), ""
        if key == "NAME":
            name = value
        elif key == "DIMENSION":
            try:
                dimension = int(value)
            except ValueError:
                raise ParseError(f"bad DIMENSION value {value!r}", lineno) from None
        elif key == "EDGE_WEIGHT_TYPE":
            weight_type = value
            if weight_type != "EUC_2D":
                raise UnsupportedWeightType(weight_type)

    if coord_section_line is None:
        raise ParseError("missing NODE_COORD_SECTION", len(lines))
    if dimension is None:
        raise ParseError("missing DIMENSION", len(lines))
    if len(coords) != dimension:
        raise ParseError(
            f"expected {dimension} coordinates, found {len(coords)}", len(lines)
        )
    return TspInstance(
        name=name or "unnamed",
        dimension=dimension,
        coords=tuple(coords),
        edge_weight_type=weight_type or "EUC_2D",
    )


def euc_2d(a: tuple[float, float], b: tuple[float, float]) -> int:
    """TSPLIB rounded euclidean distance (nearest integer)."""
    return int(math.sqrt((a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2) + 0.5)


def distance_matrix(inst: TspInstance) -> np.ndarray:
    pts = np.asarray(inst.coords)
    diff = pts[:, None, :] - pts[None, :, :]
    return np.floor(np.sqrt((diff * diff).sum(axis=2)) + 0.5).astype(np.int64)


def _check_permutation(order: Sequence[int], dimension: int) -> None:
    if len(order) != dimension or set(order) != set(range(dimension)):
        raise NotAPermutation(f"order is not a permutation of 0..{dimension - 1}")


def tour_length(inst: TspInstance, order: Sequence[int]) -> float:
    """Cycle length under per-edge nearest-integer rounding."""
    _check_permutation(order, inst.dimension)
    total = 0
    for pos in range(len(order)):
        total += euc_2d(inst.coords[order[pos]], inst.coords[order[(pos + 1) % len(order)]])
    return float(total)


@dataclass(frozen=True)
class Tour:
    order: tuple[int, ...]
    length: float

    @classmethod
    def from_order(cls, inst: TspInstance, order: Sequence[int]) -> "Tour":
        return cls(order=tuple(int(c) for c in order), length=tour_length(inst, order))


def gap_percent(base_obj: float, cae_obj: float) -> float:
    """Relative improvement of cae_obj over base_obj, in percent (may be negative)."""
    if not base_obj > 0:
        raise NonpositiveBase(f"base objective must be > 0, got {base_obj}")
    return (base_obj - cae_obj) / base_obj * 100.0


@dataclass(frozen=True)
class MetaheuristicConfig:
    algorithm: str
    iterations: int
    population_size: int = 24
    rng_seed: int = 0
    plugin: GuideFn | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.population_size < 2:
            raise ValueError("population/colony size must be >= 2")


def _edge_list(dist: np.ndarray) -> list[tuple[int, int, float]]:
    n = dist.shape[0]
    return [(i, j, float(dist[i, j])) for i in range(n) for j in range(i + 1, n)]


def _edge_scores(inst: TspInstance, dist: np.ndarray, plugin: GuideFn | None,
                 default: Callable[[float], float]) -> np.ndarray:
    """Symmetric per-edge score matrix from the plugin or the default rule.

    One plugin call covers the whole edge batch; shim errors surface as
    PluginFailure.
    """
    n = dist.shape[0]
    edges = _edge_list(dist)
    if plugin is None:
        values = [default(d) for _, _, d in edges]
    else:
        try:
            values = plugin(edges)
        except SandboxError as exc:
            raise PluginFailure(f"guide plugin failed: {exc}") from exc
        if not isinstance(values, list) or len(values) != len(edges):
            raise PluginFailure("guide plugin returned a malformed score list")
        try:
            values = [float(v) for v in values]
        except (TypeError, ValueError):
            raise PluginFailure("guide plugin returned non-numeric scores") from None
        if not all(math.isfinite(v) for v in values):
            raise PluginFailure("guide plugin returned non-finite scores")
    scores = np.zeros((n, n))
    for (i, j, _), value in zip(edges, values):
        scores[i, j] = scores[j, i] = value
    return scores


def _tour_edges(order: Sequence[int]) -> Iterable[tuple[int, int]]:
    for pos in range(len(order)):
        yield order[pos], order[(pos + 1) % len(order)]


def _run_ga(inst: TspInstance, cfg: MetaheuristicConfig, dist: np.ndarray) -> tuple[Tour, dict]:
    """Permutation GA: tournament selection, order crossover, swap mutation.

    The guide slot shapes selection fitness (sum of per-edge scores); the
    best-so-far tour is always tracked on true length.
    """
    rng = random.Random(cfg.rng_seed)
    n = inst.dimension
    shaped = _edge_scores(inst, dist, cfg.plugin, default=float)

    def shaped_cost(order: list[int]) -> float:
        return float(sum(shaped[i, j] for i, j in _tour_edges(order)))

    def true_length(order: list[int]) -> float:
        return float(sum(dist[i, j] for i, j in _tour_edges(order)))

    population = []
    for _ in range(cfg.population_size):
        order = list(range(n))
        rng.shuffle(order)
        population.append(order)
    best_order = min(population, key=true_length)
    best_length = true_length(best_order)
    evaluations = cfg.population_size

    def tournament(costs: list[float]) -> list[int]:
        picks = [rng.randrange(len(population)) for _ in range(3)]
        return population[min(picks, key=lambda idx: costs[idx])]

    def order_crossover(p1: list[int], p2: list[int]) -> list[int]:
        a = rng.randrange(n)
        b = rng.randrange(n)
        lo, hi = min(a, b), max(a, b)
        child: list[int | None] = [None] * n
        child[lo : hi + 1] = p1[lo : hi + 1]
        taken = set(p1[lo : hi + 1])
        fill = [city for city in p2 if city not in taken]
        pos = 0
        for idx in list(range(hi + 1, n)) + list(range(lo)):
            child[idx] = fill[pos]
            pos += 1
        return child  # type: ignore[return-value]

    for _ in range(cfg.iterations):
        costs = [shaped_cost(ind) for ind in population]
        elite = population[min(range(len(population)), key=lambda idx: costs[idx])]
        next_population = [list(elite)]
        while len(next_population) < cfg.population_size:
            child = order_crossover(tournament(costs), tournament(costs))
            if rng.random() < 0.3:
                a, b = rng.randrange(n), rng.randrange(n)
                child[a], child[b] = child[b], child[a]
            next_population.append(child)
        population = next_population
        evaluations += cfg.population_size
        for ind in population:
            length = true_length(ind)
            if length < best_length:
                best_length = length
                best_order = list(ind)
    return Tour.from_order(inst, best_order), {"evaluations": evaluations}


def _run_aco(inst: TspInstance, cfg: MetaheuristicConfig, dist: np.ndarray) -> tuple[Tour, dict]:
    """Ant colony construction with evaporation; guide slot is desirability."""
    rng = random.Random(cfg.rng_seed)
    n = inst.dimension
    eta = _edge_scores(inst, dist, cfg.plugin, default=lambda d: 1.0 / max(d, 1e-9))
    eta = np.maximum(eta, 1e-12)
    alpha, beta, rho = 1.0, 2.0, 0.1

    nn_length = _nearest_neighbor_length(dist)
    tau = np.full((n, n), 1.0 / (n * max(nn_length, 1.0)))
    best_order: list[int] | None = None
    best_length = math.inf
    for _ in range(cfg.iterations):
        iteration_best: list[int] | None = None
        iteration_best_length = math.inf
        for _ in range(cfg.population_size):
            start = rng.randrange(n)
            order = [start]
            remaining = set(range(n)) - {start}
            while remaining:
                current = order[-1]
                choices = sorted(remaining)
                weights = [
                    (tau[current, j] ** alpha) * (eta[current, j] ** beta) for j in choices
                ]
                total = sum(weights)
                if total <= 0:
                    pick = choices[rng.randrange(len(choices))]
                else:
                    r = rng.random() * total
                    acc = 0.0
                    pick = choices[-1]
                    for j, w in zip(choices, weights):
                        acc += w
                        if r <= acc:
                            pick = j
                            break
                order.append(pick)
                remaining.discard(pick)
            length = float(sum(dist[i, j] for i, j in _tour_edges(order)))
            if length < iteration_best_length:
                iteration_best_length = length
                iteration_best = order
        if iteration_best_length < best_length:
            best_length = iteration_best_length
            best_order = iteration_best
        tau *= 1.0 - rho
        deposit_order = best_order if best_order is not None else iteration_best
        deposit_length = best_length if best_order is not None else iteration_best_length
        for i, j in _tour_edges(deposit_order):
            tau[i, j] += 1.0 / max(deposit_length, 1e-9)
            tau[j, i] = tau[i, j]
    return Tour.from_order(inst, best_order), {"evaluations": cfg.iterations * cfg.population_size}


def _nearest_neighbor_length(dist: np.ndarray) -> float:
    n = dist.shape[0]
    current = 0
    remaining = set(range(1, n))
    total = 0.0
    while remaining:
        nxt = min(remaining, key=lambda j: (dist[current, j], j))
        total += float(dist[current, nxt])
        remaining.discard(nxt)
        current = nxt
    return total + float(dist[current, 0])


def _two_opt(order: list[int], cost: np.ndarray) -> list[int]:
    """Best-improvement 2-opt to a local optimum of the given cost matrix."""
    n = len(order)
    improved = True
    while improved:
        improved = False
        best_delta = 1e-9  # strict improvement only; zero-delta moves would cycle
        best_move = None
        for a in range(n - 1):
            for b in range(a + 2, n):
                if a == 0 and b == n - 1:
                    continue
                i, i_next = order[a], order[a + 1]
                j, j_next = order[b], order[(b + 1) % n]
                delta = (
                    cost[i, i_next] + cost[j, j_next] - cost[i, j] - cost[i_next, j_next]
                )
                if delta > best_delta:
                    best_delta = delta
                    best_move = (a, b)
        if best_move is not None:
            a, b = best_move
            order[a + 1 : b + 1] = reversed(order[a + 1 : b + 1])
            improved = True
    return order


def _run_kgls(inst: TspInstance, cfg: MetaheuristicConfig, dist: np.ndarray) -> tuple[Tour, dict]:
    """Penalty-guided 2-opt: penalize the highest-utility edge at each optimum.

    The guide slot scores edges for penalization (default: edge length), so
    utility = score / (1 + penalty count).
    """
    rng = random.Random(cfg.rng_seed)
    n = inst.dimension
    scores = _edge_scores(inst, dist, cfg.plugin, default=float)
    penalties = np.zeros((n, n))
    order = list(range(n))
    rng.shuffle(order)

    def true_length(o: Sequence[int]) -> float:
        return float(sum(dist[i, j] for i, j in _tour_edges(o)))

    order = _two_opt(order, dist.astype(float))
    best_order = list(order)
    best_length = true_length(order)
    lam = 0.3 * best_length / n if n else 0.0
    for _ in range(cfg.iterations):
        utilities = {}
        for i, j in _tour_edges(order):
            key = (min(i, j), max(i, j))
            utilities[key] = scores[i, j] / (1.0 + penalties[i, j])
        top = max(sorted(utilities), key=lambda key: utilities[key])
        penalties[top[0], top[1]] += 1.0
        penalties[top[1], top[0]] = penalties[top[0], top[1]]
        augmented = dist.astype(float) + lam * penalties
        order = _two_opt(order, augmented)
        length = true_length(order)
        if length < best_length:
            best_length = length
            best_order = list(order)
    return Tour.from_order(inst, best_order), {"evaluations": cfg.iterations}


def run_metaheuristic(inst: TspInstance, cfg: MetaheuristicConfig) -> tuple[Tour, dict]:
    """Run the configured algorithm; deterministic for a fixed seed."""
    dist = distance_matrix(inst)
    started = time.perf_counter()
    if cfg.algorithm == "GA":
        tour, stats = _run_ga(inst, cfg, dist)
    elif cfg.algorithm == "ACO":
        tour, stats = _run_aco(inst, cfg, dist)
    else:
        tour, stats = _run_kgls(inst, cfg, dist)
    stats = dict(stats)
    stats["elapsed_s"] = time.perf_counter() - started
    stats["algorithm"] = cfg.algorithm
    stats["seed"] = cfg.rng_seed
    return tour, stats


def random_instance(n_cities: int, seed: int, scale: float = 1.0e6, name: str | None = None) -> TspInstance:
    """Uniform points in a scaled unit square.

    The scale keeps nearest-integer edge rounding negligible relative to
    typical distances.
    """
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0.0, 1.0, size=(n_cities, 2)) * scale
    return TspInstance(
        name=name or f"rand{n_cities}-{seed}",
        dimension=n_cities,
        coords=tuple((float(x), float(y)) for x, y in pts),
    )


def random_instance_set(n_cities: int, count: int = 64, seed: int = 0) -> list[TspInstance]:
    return [random_instance(n_cities, seed * 100_000 + i) for i in range(count)]


def load_best_known() -> dict[str, float]:
    """Bundled best-known objective table for named TSPLIB instances."""
    text = resources.files("coevo").joinpath("data/best_known.json").read_text("utf-8")
    return {k: float(v) for k, v in json.loads(text).items()}


def _mean_objective(inst: TspInstance, cfg: MetaheuristicConfig, seeds: Sequence[int]) -> float:
    totals = []
    for seed in seeds:
        tour, _ = run_metaheuristic(
            inst,
            MetaheuristicConfig(
                algorithm=cfg.algorithm,
                iterations=cfg.iterations,
                population_size=cfg.population_size,
                rng_seed=seed,
                plugin=cfg.plugin,
            ),
        )
        totals.append(tour.length)
    return float(np.mean(totals))


def gap_rows(
    instances: Sequence[TspInstance],
    plugin: GuideFn,
    baseline_cfg: MetaheuristicConfig,
    runs: int = 3,
):
    """Per-instance baseline-vs-plugin rows, objectives averaged over seeds.

    An instance whose plugin runs fail contributes the worst-case sentinel
    gap instead of aborting the whole evaluation.
    """
    from ..reporting import ReportRow

    rows = []
    seeds = tuple(baseline_cfg.rng_seed + offset for offset in range(runs))
    for inst in instances:
        base_obj = _mean_objective(inst, baseline_cfg, seeds)
        try:
            plugin_cfg = MetaheuristicConfig(
                algorithm=baseline_cfg.algorithm,
                iterations=baseline_cfg.iterations,
                population_size=baseline_cfg.population_size,
                rng_seed=baseline_cfg.rng_seed,
                plugin=plugin,
            )
            cae_obj = _mean_objective(inst, plugin_cfg, seeds)
            gap = gap_percent(base_obj, cae_obj)
        except PluginFailure:
            cae_obj = math.nan
            gap = WORST_GAP
        rows.append(
            ReportRow(
                scenario_id=inst.name,
                base_obj=base_obj,
                cae_obj=cae_obj,
                gap_percent=gap,
                runs_averaged=runs,
                seeds=seeds,
            )
        )
    return rows


def evaluate_candidate_gap(
    instances: Sequence[TspInstance],
    plugin: GuideFn,
    baseline_cfg: MetaheuristicConfig,
    runs: int = 3,
) -> float:
    """Mean per-instance gap of the plugin-augmented runs over the baseline."""
    rows = gap_rows(instances, plugin, baseline_cfg, runs)
    return float(np.mean([row.gap_percent for row in rows]))


class TspDomain:
    """Binds guide-function candidates to gap scoring on small fixtures."""

    domain_id = "tsp"
    task = "guide_tsp"
    entrypoint_params = ("algorithm", "edges")
    knowledge_tags = ("tsp", "routing", "heuristics")

    def __init__(self):
        self._fixtures = [random_instance(7, 31, scale=100.0), random_instance(6, 47, scale=100.0)]
        self._baseline = MetaheuristicConfig(
            algorithm="ACO", iterations=12, population_size=8, rng_seed=5
        )

    def fixtures(self) -> list[TspInstance]:
        return list(self._fixtures)

    def probes(self) -> ProbeSet:
        edges = [[0, 1, 5.0], [1, 2, 3.0], [0, 2, 4.0]]
        return ProbeSet(
            probes=(
                Probe(
                    probe_id="guide-shape",
                    request={"task": self.task, "algorithm": "ACO", "edges": edges},
                    expect={"scores_len": len(edges)},
                ),
            )
        )

    def check_probe(self, probe: Probe, response: Mapping[str, Any]) -> tuple[bool, str]:
        scores = response.get("scores")
        wanted = int(probe.expect["scores_len"])
        if not isinstance(scores, list) or len(scores) != wanted:
            return False, f"'scores' must be a list of length {wanted}"
        try:
            values = [float(v) for v in scores]
        except (TypeError, ValueError):
            return False, "'scores' must be numeric"
        if not all(math.isfinite(v) for v in values):
            return False, "'scores' must be finite"
        return True, "ok"

    def _plugin_from_call(self, call: Callable[[Mapping[str, Any]], dict[str, Any]]) -> GuideFn:
        algorithm = self._baseline.algorithm

        def plugin(edges: list[tuple[int, int, float]]) -> list[float]:
            response = call(
                {
                    "task": self.task,
                    "algorithm": algorithm,
                    "edges": [[i, j, dist] for i, j, dist in edges],
                }
            )
            scores = response.get("scores")
            if not isinstance(scores, list):
                raise PluginFailure("plugin response lacks a 'scores' list")
            return scores

        return plugin

    def score(self, call: Callable[[Mapping[str, Any]], dict[str, Any]]):
        plugin = self._plugin_from_call(call)
        try:
            rows = gap_rows(self._fixtures, plugin, self._baseline, runs=2)
        except SandboxError as exc:
            return self.worst_metrics(), False, f"{type(exc).__name__}: {exc}"
        mean_gap = float(np.mean([row.gap_percent for row in rows]))
        ok = all(not math.isnan(row.cae_obj) for row in rows)
        return {"gap_percent": mean_gap}, ok, "scored over fixture instances"

    def worst_metrics(self) -> dict[str, float]:
        return {"gap_percent": WORST_GAP}

    def report_rows(self, summary: RunSummary) -> list:
        if summary.call_factory is None:
            return []
        call = summary.call_factory(summary.final_best)
        plugin = self._plugin_from_call(call)
        return gap_rows(self._fixtures, plugin, self._baseline, runs=2)
