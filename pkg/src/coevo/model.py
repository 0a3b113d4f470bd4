"""Core value types shared by every other module.

A problem is a triplet of requirements, weighted objectives, and rule-backed
constraints. A candidate program is a set of named function units plus a
depends-on DAG over them. Validation produces a per-rule report with measured
metrics and a scalar fitness. All types here are immutable value objects with
a canonical JSON form; solution identity is the SHA-256 digest of that form.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

MINIMIZE = "minimize"
MAXIMIZE = "maximize"
DIRECTIONS = (MINIMIZE, MAXIMIZE)

RULE_KINDS = ("static", "functional", "performance")
SEVERITIES = ("blocking", "scoring")
ORIGINS = ("seed", "functional", "structural")

WEIGHT_SUM_TOL = 1e-12


class CycleError(Exception):
    """The dependency edges of a solution contain a cycle."""

    def __init__(self, cycle: list[str]):
        self.cycle = list(cycle)
        super().__init__("dependency cycle: " + " -> ".join(self.cycle))


class MissingMetric(Exception):
    """An objective metric is absent from a metric map."""

    def __init__(self, metric_ids: Iterable[str]):
        self.metric_ids = sorted(metric_ids)
        super().__init__("missing metrics: " + ", ".join(self.metric_ids))


def canonical_json(value: Any) -> str:
    """Serialize to the canonical form: sorted keys, no insignificant whitespace."""
    return json.dumps(value, sort_keys=True, separators=(",", ":"))


def sha256_hex(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def fitness_to_json(value: float) -> float | str:
    """Non-finite fitness is encoded as the string "inf" (JSON has no infinity)."""
    return value if math.isfinite(value) else "inf"


def fitness_from_json(value: float | int | str) -> float:
    if isinstance(value, str):
        return math.inf
    return float(value)


@dataclass(frozen=True)
class Objective:
    metric_id: str
    direction: str
    weight: float

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise ValueError(f"unknown direction: {self.direction!r}")
        if not (self.weight >= 0.0):
            raise ValueError("objective weight must be >= 0")

    def to_json(self) -> dict[str, Any]:
        return {"metric_id": self.metric_id, "direction": self.direction, "weight": self.weight}

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> "Objective":
        return cls(data["metric_id"], data["direction"], float(data["weight"]))


@dataclass(frozen=True)
class Constraint:
    constraint_id: str
    description: str
    rule_id: str

    def to_json(self) -> dict[str, Any]:
        return {
            "constraint_id": self.constraint_id,
            "description": self.description,
            "rule_id": self.rule_id,
        }

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> "Constraint":
        return cls(data["constraint_id"], data["description"], data["rule_id"])


@dataclass(frozen=True)
class ProblemSpec:
    """Problem statement: free-text requirements, weighted objectives, constraints."""

    requirements: str
    objectives: tuple[Objective, ...]
    constraints: tuple[Constraint, ...]
    domain_id: str

    def __post_init__(self):
        object.__setattr__(self, "objectives", tuple(self.objectives))
        object.__setattr__(self, "constraints", tuple(self.constraints))
        if not self.objectives:
            raise ValueError("objectives must be non-empty")
        total = sum(o.weight for o in self.objectives)
        if abs(total - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError(f"objective weights must sum to 1, got {total!r}")

    def to_json(self) -> dict[str, Any]:
        return {
            "requirements": self.requirements,
            "objectives": [o.to_json() for o in self.objectives],
            "constraints": [c.to_json() for c in self.constraints],
            "domain_id": self.domain_id,
        }

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> "ProblemSpec":
        return cls(
            requirements=data["requirements"],
            objectives=tuple(Objective.from_json(o) for o in data["objectives"]),
            constraints=tuple(Constraint.from_json(c) for c in data["constraints"]),
            domain_id=data["domain_id"],
        )


@dataclass(frozen=True)
class UnitSignature:
    """Parameter names with semantic types, plus the return type."""

    params: tuple[tuple[str, str], ...]
    returns: str = "any"

    def __post_init__(self):
        object.__setattr__(self, "params", tuple((str(n), str(t)) for n, t in self.params))

    @property
    def param_names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.params)

    def to_json(self) -> dict[str, Any]:
        return {
            "params": [{"name": n, "type": t} for n, t in self.params],
            "returns": self.returns,
        }

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> "UnitSignature":
        return cls(tuple((p["name"], p["type"]) for p in data["params"]), data["returns"])


@dataclass(frozen=True)
class FunctionUnit:
    """One named function with its source text; the unit of evolution."""

    name: str
    signature: UnitSignature
    source: str
    doc: str = ""
    origin_hash: str = ""

    def __post_init__(self):
        if not self.source.strip():
            raise ValueError("unit source must be non-empty")
        expected = sha256_hex(
            canonical_json(
                {"name": self.name, "signature": self.signature.to_json(), "source": self.source}
            )
        )
        if self.origin_hash and self.origin_hash != expected:
            raise ValueError(f"origin_hash mismatch for unit {self.name!r}")
        object.__setattr__(self, "origin_hash", expected)

    def to_json(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "signature": self.signature.to_json(),
            "source": self.source,
            "doc": self.doc,
            "origin_hash": self.origin_hash,
        }

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> "FunctionUnit":
        return cls(
            name=data["name"],
            signature=UnitSignature.from_json(data["signature"]),
            source=data["source"],
            doc=data.get("doc", ""),
            origin_hash=data.get("origin_hash", ""),
        )


@dataclass(frozen=True)
class CodeSolution:
    """A candidate program: unit map, depends-on edges, and the entry point.

    An edge (a, b) means unit a depends on unit b, so b sorts before a.
    """

    units: Mapping[str, FunctionUnit]
    deps: frozenset[tuple[str, str]]
    entrypoint: str

    def __post_init__(self):
        object.__setattr__(self, "units", dict(self.units))
        object.__setattr__(self, "deps", frozenset((a, b) for a, b in self.deps))
        for name, unit in self.units.items():
            if unit.name != name:
                raise ValueError(f"unit key {name!r} does not match unit name {unit.name!r}")
        for a, b in self.deps:
            if a not in self.units or b not in self.units:
                raise ValueError(f"dependency edge ({a!r}, {b!r}) references an unknown unit")
        if self.entrypoint not in self.units:
            raise ValueError(f"entrypoint {self.entrypoint!r} is not a unit")
        dependency_order(self)  # raises CycleError on cyclic deps

    def digest(self) -> str:
        return sha256_hex(canonical_json(self.to_json()))

    def to_json(self) -> dict[str, Any]:
        return {
            "units": {name: unit.to_json() for name, unit in sorted(self.units.items())},
            "deps": sorted([a, b] for a, b in self.deps),
            "entrypoint": self.entrypoint,
        }

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> "CodeSolution":
        return cls(
            units={name: FunctionUnit.from_json(u) for name, u in data["units"].items()},
            deps=frozenset((a, b) for a, b in data["deps"]),
            entrypoint=data["entrypoint"],
        )


def dependency_order(solution: CodeSolution) -> list[str]:
    """Topological order of unit names, dependencies first.

    Ties are broken lexicographically so the order is deterministic.
    Raises CycleError naming a cycle if the edges are cyclic.
    """
    dependents: dict[str, list[str]] = {name: [] for name in solution.units}
    indegree: dict[str, int] = {name: 0 for name in solution.units}
    for a, b in solution.deps:
        if a == b:
            raise CycleError([a, a])
        dependents[b].append(a)
        indegree[a] += 1

    ready = [name for name, deg in indegree.items() if deg == 0]
    heapq.heapify(ready)
    order: list[str] = []
    while ready:
        name = heapq.heappop(ready)
        order.append(name)
        for dep in dependents[name]:
            indegree[dep] -= 1
            if indegree[dep] == 0:
                heapq.heappush(ready, dep)
    if len(order) != len(solution.units):
        remaining = {name for name, deg in indegree.items() if deg > 0}
        raise CycleError(_find_cycle(remaining, solution.deps))
    return order


def _find_cycle(nodes: set[str], edges: frozenset[tuple[str, str]]) -> list[str]:
    adjacent: dict[str, list[str]] = {n: [] for n in nodes}
    for a, b in sorted(edges):
        if a in nodes and b in nodes:
            adjacent[a].append(b)
    start = min(nodes)
    path, seen = [start], {start}
    node = start
    while True:
        node = adjacent[node][0]
        if node in seen:
            return path[path.index(node):] + [node]
        path.append(node)
        seen.add(node)


@dataclass(frozen=True)
class ValidationRule:
    rule_id: str
    kind: str
    params: Mapping[str, Any] = field(default_factory=dict)
    severity: str = "blocking"

    def __post_init__(self):
        object.__setattr__(self, "params", dict(self.params))
        if self.kind not in RULE_KINDS:
            raise ValueError(f"unknown rule kind: {self.kind!r}")
        if self.severity not in SEVERITIES:
            raise ValueError(f"unknown severity: {self.severity!r}")
        if self.severity == "blocking" and self.kind == "performance":
            raise ValueError("blocking rules must be static or functional")

    def to_json(self) -> dict[str, Any]:
        return {
            "rule_id": self.rule_id,
            "kind": self.kind,
            "params": dict(self.params),
            "severity": self.severity,
        }

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> "ValidationRule":
        return cls(data["rule_id"], data["kind"], data.get("params", {}), data["severity"])


def load_rule_set(rules: Iterable[Mapping[str, Any]]) -> tuple[ValidationRule, ...]:
    """Build a rule set, enforcing rule_id uniqueness."""
    out = tuple(ValidationRule.from_json(r) for r in rules)
    seen: set[str] = set()
    for rule in out:
        if rule.rule_id in seen:
            raise ValueError(f"duplicate rule_id: {rule.rule_id!r}")
        seen.add(rule.rule_id)
    return out


@dataclass(frozen=True)
class RuleResult:
    rule_id: str
    passed: bool
    detail: str = ""

    def to_json(self) -> dict[str, Any]:
        return {"rule_id": self.rule_id, "passed": self.passed, "detail": self.detail}

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> "RuleResult":
        return cls(data["rule_id"], bool(data["passed"]), data.get("detail", ""))


@dataclass(frozen=True)
class ValidationReport:
    """Per-rule verdicts plus measured metrics for one candidate."""

    per_rule: tuple[RuleResult, ...]
    metrics: Mapping[str, float]
    fitness: float
    wall_time: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "per_rule", tuple(self.per_rule))
        object.__setattr__(self, "metrics", dict(self.metrics))
        if math.isnan(self.fitness):
            raise ValueError("fitness must be a number or +inf, not NaN")

    def failed_rules(self) -> tuple[str, ...]:
        return tuple(r.rule_id for r in self.per_rule if not r.passed)

    def to_json(self) -> dict[str, Any]:
        return {
            "per_rule": [r.to_json() for r in self.per_rule],
            "metrics": dict(self.metrics),
            "fitness": fitness_to_json(self.fitness),
            "wall_time": self.wall_time,
        }

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> "ValidationReport":
        return cls(
            per_rule=tuple(RuleResult.from_json(r) for r in data["per_rule"]),
            metrics={k: float(v) for k, v in data["metrics"].items()},
            fitness=fitness_from_json(data["fitness"]),
            wall_time=float(data.get("wall_time", 0.0)),
        )


def check_report_invariants(
    report: ValidationReport, rules: Iterable[ValidationRule], spec: ProblemSpec
) -> None:
    """Assert the cross-type report invariants (used by validators and tests)."""
    by_id = {r.rule_id: r for r in rules}
    blocking_passed = all(
        result.passed for result in report.per_rule if by_id[result.rule_id].severity == "blocking"
    )
    if math.isfinite(report.fitness) != blocking_passed:
        raise ValueError("fitness must be finite exactly when all blocking rules pass")
    if math.isfinite(report.fitness):
        missing = [o.metric_id for o in spec.objectives if o.metric_id not in report.metrics]
        if missing:
            raise MissingMetric(missing)


def scalarize_fitness(report_metrics: Mapping[str, float], spec: ProblemSpec) -> float:
    """Weighted scalarization with sign normalization, so lower is always better."""
    missing = [o.metric_id for o in spec.objectives if o.metric_id not in report_metrics]
    if missing:
        raise MissingMetric(missing)
    total = 0.0
    for obj in spec.objectives:
        value = float(report_metrics[obj.metric_id])
        if obj.direction == MAXIMIZE:
            value = -value
        total += obj.weight * value
    return total


@dataclass(frozen=True)
class Individual:
    """A solution with its report, generation index, parentage, and origin tag."""

    solution: CodeSolution
    report: ValidationReport | None
    generation: int
    parents: tuple[str, ...]
    origin: str
    id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "parents", tuple(self.parents))
        if self.generation < 0:
            raise ValueError("generation must be >= 0")
        if self.origin not in ORIGINS:
            raise ValueError(f"unknown origin: {self.origin!r}")
        if self.origin == "seed" and self.parents:
            raise ValueError("seed individuals have no parents")
        if self.origin == "functional" and len(self.parents) != 1:
            raise ValueError("functional individuals have exactly one parent")
        if self.origin == "structural" and len(self.parents) < 2:
            raise ValueError("structural individuals have at least two parents")
        digest = self.solution.digest()
        if self.id and self.id != digest:
            raise ValueError("individual id does not match solution digest")
        object.__setattr__(self, "id", digest)

    @property
    def fitness(self) -> float:
        return self.report.fitness if self.report is not None else math.inf

    def to_json(self) -> dict[str, Any]:
        return {
            "solution": self.solution.to_json(),
            "report": self.report.to_json() if self.report is not None else None,
            "generation": self.generation,
            "parents": list(self.parents),
            "origin": self.origin,
            "id": self.id,
        }

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> "Individual":
        report = data.get("report")
        return cls(
            solution=CodeSolution.from_json(data["solution"]),
            report=ValidationReport.from_json(report) if report is not None else None,
            generation=int(data["generation"]),
            parents=tuple(data["parents"]),
            origin=data["origin"],
            id=data.get("id", ""),
        )
