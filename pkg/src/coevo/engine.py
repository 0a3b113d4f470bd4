"""Generational co-evolution over candidate programs.

One run: structure the problem statement, seed a validated population under a
repair loop, then alternate per-unit (functional) and cross-individual
(structural) offspring generation with union-and-truncate selection and a
long-term reflection memory injected into the next generation's prompts.
Every artifact is persisted per generation so a run can be replayed
byte-identically from its transcript.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Mapping, Sequence

from . import sandbox
from .domains.base import Domain, RunSummary
from .gateway import (
    BudgetExceeded,
    CompletionParams,
    Gateway,
    PromptTemplate,
    ProviderUnavailable,
    ReplayMiss,
    render,
)
from .gateway import KnowledgeBase
from .model import (
    CodeSolution,
    CycleError,
    Individual,
    ProblemSpec,
    ValidationRule,
    canonical_json,
    sha256_hex,
)
from .sourcecode import (
    SourceParseError,
    extract_code_block,
    missing_references,
    replace_unit,
    solution_from_source,
    solution_source,
)

OPERATORS = ("reflect", "crossover", "mutate")


class InvalidSpec(Exception):
    pass


class ParseError(Exception):
    """The model's structured response could not be parsed after retries."""


class SeedExhausted(Exception):
    """The call budget ran out before the seed population was complete."""


class RecombinationInvalid(Exception):
    """A structural offspring had cyclic or dangling references after repair."""


@dataclass(frozen=True)
class UnitStub:
    name: str
    signature: str
    purpose: str
    entrypoint: bool = False


@dataclass(frozen=True)
class StructuredUnderstanding:
    restated_requirements: str
    identified_objectives: tuple[str, ...]
    identified_constraints: tuple[str, ...]
    suggested_decomposition: tuple[UnitStub, ...]

    def __post_init__(self):
        object.__setattr__(self, "identified_objectives", tuple(self.identified_objectives))
        object.__setattr__(self, "identified_constraints", tuple(self.identified_constraints))
        object.__setattr__(self, "suggested_decomposition", tuple(self.suggested_decomposition))
        names = [stub.name for stub in self.suggested_decomposition]
        if len(set(names)) != len(names):
            raise ValueError("decomposition stub names must be unique")
        if not any(stub.entrypoint for stub in self.suggested_decomposition):
            raise ValueError("at least one stub must be an entrypoint candidate")

    @property
    def entrypoint_name(self) -> str:
        return next(s.name for s in self.suggested_decomposition if s.entrypoint)

    def to_text(self) -> str:
        lines = [self.restated_requirements, "", "Objectives:"]
        lines += [f"- {o}" for o in self.identified_objectives]
        lines.append("Constraints:")
        lines += [f"- {c}" for c in self.identified_constraints]
        lines.append("Decomposition:")
        for stub in self.suggested_decomposition:
            marker = " (entry point)" if stub.entrypoint else ""
            lines.append(f"- {stub.signature}: {stub.purpose}{marker}")
        return "\n".join(lines)


@dataclass(frozen=True)
class EvolutionConfig:
    population_size: int = 4
    functional_offspring: int = 2
    structural_offspring: int = 2
    max_generations: int = 3
    repair_attempts: int = 1
    rng_seed: int = 0
    operator_weights: Mapping[str, float] = field(
        default_factory=lambda: {"reflect": 1.0, "crossover": 1.0, "mutate": 1.0}
    )
    epsilon: float = 0.0
    patience: int = 0  # 0 disables early stopping

    def __post_init__(self):
        object.__setattr__(self, "operator_weights", dict(self.operator_weights))
        if self.population_size < 2:
            raise ValueError("population_size must be >= 2")
        if self.functional_offspring < 0 or self.structural_offspring < 0:
            raise ValueError("offspring counts must be >= 0")
        if self.functional_offspring + self.structural_offspring < 1:
            raise ValueError("at least one offspring per generation is required")
        if self.max_generations < 1:
            raise ValueError("max_generations must be >= 1")
        if self.repair_attempts < 0:
            raise ValueError("repair_attempts must be >= 0")
        unknown = set(self.operator_weights) - set(OPERATORS)
        if unknown:
            raise ValueError(f"unknown operators: {sorted(unknown)}")
        if any(w < 0 for w in self.operator_weights.values()):
            raise ValueError("operator weights must be >= 0")
        if not any(w > 0 for w in self.operator_weights.values()):
            raise ValueError("operator weights must not all be zero")
        if self.epsilon < 0 or self.patience < 0:
            raise ValueError("epsilon and patience must be >= 0")

    def to_json(self) -> dict[str, Any]:
        return {
            "population_size": self.population_size,
            "functional_offspring": self.functional_offspring,
            "structural_offspring": self.structural_offspring,
            "max_generations": self.max_generations,
            "repair_attempts": self.repair_attempts,
            "rng_seed": self.rng_seed,
            "operator_weights": dict(self.operator_weights),
            "epsilon": self.epsilon,
            "patience": self.patience,
        }

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> "EvolutionConfig":
        return cls(**data)


@dataclass(frozen=True)
class MemoryEntry:
    generation: int
    summary_text: str
    best_fitness: float


@dataclass(frozen=True)
class ReflectionMemory:
    entries: tuple[MemoryEntry, ...] = ()
    capacity: int = 8

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        if self.capacity < 1:
            raise ValueError("capacity must be >= 1")
        if len(self.entries) > self.capacity:
            raise ValueError("memory holds more entries than its capacity")
        generations = [e.generation for e in self.entries]
        if generations != sorted(generations):
            raise ValueError("memory entries must be sorted by generation")

    def with_entry(self, entry: MemoryEntry) -> "ReflectionMemory":
        entries = (self.entries + (entry,))[-self.capacity:]
        return ReflectionMemory(entries=entries, capacity=self.capacity)

    def to_text(self) -> str:
        if not self.entries:
            return "(no notes yet)"
        return "\n".join(
            f"gen {e.generation} (best {e.best_fitness:.6g}): {e.summary_text}"
            for e in self.entries
        )


@dataclass(frozen=True)
class Population:
    individuals: tuple[Individual, ...]
    generation: int

    def __post_init__(self):
        object.__setattr__(self, "individuals", tuple(self.individuals))

    @property
    def best(self) -> Individual:
        return min(self.individuals, key=lambda ind: (ind.fitness, ind.id))

    def to_json(self) -> dict[str, Any]:
        return {
            "generation": self.generation,
            "individuals": [ind.to_json() for ind in self.individuals],
        }


@dataclass
class RunResult:
    run_id: str
    run_dir: Path
    snapshots: list[Population]
    lineage: list[dict[str, Any]]
    report_rows: list
    best: Individual


def _weighted_choice(rng: random.Random, weights: Mapping[str, float]) -> str:
    names = [name for name in OPERATORS if weights.get(name, 0.0) > 0]
    totals = [weights[name] for name in names]
    return rng.choices(names, weights=totals, k=1)[0]


def select_next_generation(
    population: Population,
    functional_offspring: Sequence[Individual],
    structural_offspring: Sequence[Individual],
    population_size: int,
) -> Population:
    """Union-and-truncate: dedup by id (earliest generation wins), sort by
    (fitness, id), keep the best population_size."""
    merged: dict[str, Individual] = {}
    for ind in list(population.individuals) + list(functional_offspring) + list(structural_offspring):
        held = merged.get(ind.id)
        if held is None or ind.generation < held.generation:
            merged[ind.id] = ind
    ranked = sorted(merged.values(), key=lambda ind: (ind.fitness, ind.id))
    return Population(
        individuals=tuple(ranked[:population_size]),
        generation=population.generation + 1,
    )


class Engine:
    """Wires the gateway, sandbox validator, and domain into one run loop."""

    def __init__(
        self,
        gateway: Gateway,
        templates: Mapping[str, PromptTemplate],
        domain: Domain,
        rules: Sequence[ValidationRule],
        limits: sandbox.ExecutionLimits,
        spec: ProblemSpec,
        kb: KnowledgeBase,
        cfg: EvolutionConfig,
        params: CompletionParams,
        shim_cmd: Sequence[str] | None = None,
        memory_capacity: int = 8,
    ):
        self.gateway = gateway
        self.templates = dict(templates)
        self.domain = domain
        self.rules = tuple(rules)
        self.limits = limits
        self.spec = spec
        self.kb = kb
        self.cfg = cfg
        self.params = params
        self.shim_cmd = tuple(shim_cmd) if shim_cmd is not None else None
        self.memory_capacity = memory_capacity
        self.lineage: list[dict[str, Any]] = []
        self.events: list[str] = []
        self._seen_solutions: set[str] = set()

        rule_ids = {rule.rule_id for rule in self.rules}
        for constraint in spec.constraints:
            if constraint.rule_id not in rule_ids:
                raise InvalidSpec(
                    f"constraint {constraint.constraint_id!r} references unknown rule "
                    f"{constraint.rule_id!r}"
                )

    # -- gateway helpers ---------------------------------------------------

    def _complete(self, template_id: str, bindings: Mapping[str, str]) -> str:
        prompt = render(self.templates[template_id], bindings)
        return self.gateway.complete(prompt, self.params)

    def _rng(self, *parts: Any) -> random.Random:
        key = sha256_hex("|".join(str(p) for p in (self.cfg.rng_seed,) + parts))
        return random.Random(int(key[:16], 16))

    def _log(self, message: str) -> None:
        self.events.append(message)

    def _record_lineage(self, individual: Individual, detail: str = "") -> None:
        self.lineage.append(
            {
                "id": individual.id,
                "generation": individual.generation,
                "origin": individual.origin,
                "parents": list(individual.parents),
                "fitness": individual.fitness if math.isfinite(individual.fitness) else "inf",
                "detail": detail,
            }
        )

    def _validate(self, solution: CodeSolution):
        return sandbox.validate(
            solution, self.rules, self.domain, self.limits, self.spec, self.shim_cmd
        )

    # -- pipeline stages ----------------------------------------------------

    def understand(self) -> StructuredUnderstanding:
        """Structure the problem statement through the model, retrying parse
        failures up to three attempts."""
        if not self.spec.requirements.strip():
            raise InvalidSpec("problem spec has empty requirements text")
        objectives = "\n".join(
            f"- {o.metric_id} ({o.direction}, weight {o.weight})" for o in self.spec.objectives
        )
        constraints = "\n".join(
            f"- {c.constraint_id}: {c.description} [rule {c.rule_id}]"
            for c in self.spec.constraints
        ) or "- none"
        base_prompt = render(
            self.templates["p_s"],
            {
                "requirements": self.spec.requirements,
                "objectives": objectives,
                "constraints": constraints,
                "domain_id": self.spec.domain_id,
            },
        )
        last_error = "no attempts made"
        for attempt in range(1, 4):
            prompt = base_prompt
            if attempt > 1:
                prompt += f"\n\nAttempt {attempt}: the previous response was not valid JSON."
            response = self.gateway.complete(prompt, self.params)
            try:
                return self._parse_understanding(response)
            except (ValueError, KeyError, TypeError) as exc:
                last_error = str(exc)
        raise ParseError(f"could not parse understanding after 3 attempts: {last_error}")

    @staticmethod
    def _parse_understanding(response: str) -> StructuredUnderstanding:
        data = json.loads(extract_code_block(response))
        stubs = tuple(
            UnitStub(
                name=s["name"],
                signature=s["signature"],
                purpose=s["purpose"],
                entrypoint=bool(s.get("entrypoint", False)),
            )
            for s in data["suggested_decomposition"]
        )
        return StructuredUnderstanding(
            restated_requirements=data["restated_requirements"],
            identified_objectives=tuple(data["identified_objectives"]),
            identified_constraints=tuple(data["identified_constraints"]),
            suggested_decomposition=stubs,
        )

    def _generate_candidate(self, understanding: StructuredUnderstanding, slot: int) -> CodeSolution:
        """One meta-prompt hop: ask for a generation prompt, then for code."""
        plan = self._complete(
            "p_w",
            {
                "understanding": understanding.to_text(),
                "knowledge": self.kb.select(self.domain.knowledge_tags) or "(none)",
                "slot": str(slot),
            },
        )
        code_response = self._complete(
            "p_f",
            {
                "generated_prompt": plan,
                "entrypoint": understanding.entrypoint_name,
                "entrypoint_params": ", ".join(self.domain.entrypoint_params),
            },
        )
        return solution_from_source(
            extract_code_block(code_response), understanding.entrypoint_name
        )

    def _repair_candidate(
        self, source_text: str, failures: str, entrypoint: str
    ) -> CodeSolution:
        response = self._complete(
            "repair",
            {
                "solution_source": source_text,
                "failures": failures,
                "entrypoint": entrypoint,
                "entrypoint_params": ", ".join(self.domain.entrypoint_params),
            },
        )
        return solution_from_source(extract_code_block(response), entrypoint)

    def seed_population(self, understanding: StructuredUnderstanding) -> Population:
        """Produce exactly population_size validated seeds, repairing failures."""
        entrypoint = understanding.entrypoint_name
        seeds: list[Individual] = []
        max_slots = self.cfg.population_size * 4
        slot = 0
        try:
            while len(seeds) < self.cfg.population_size:
                if slot >= max_slots:
                    raise SeedExhausted(
                        f"{len(seeds)}/{self.cfg.population_size} seeds after {slot} attempts"
                    )
                slot += 1
                solution: CodeSolution | None = None
                failures = ""
                source_text = ""
                try:
                    solution = self._generate_candidate(understanding, slot)
                except (SourceParseError, CycleError) as exc:
                    failures = f"candidate does not parse: {exc}"
                repairs_left = self.cfg.repair_attempts
                while True:
                    if solution is not None:
                        report = self._validate(solution)
                        if math.isfinite(report.fitness):
                            individual = Individual(
                                solution=solution,
                                report=report,
                                generation=0,
                                parents=(),
                                origin="seed",
                            )
                            if individual.id not in {s.id for s in seeds}:
                                seeds.append(individual)
                                self._record_lineage(individual, detail=f"slot {slot}")
                            break
                        failures = sandbox.failure_summary(report)
                        source_text = solution_source(solution)
                    if repairs_left == 0:
                        self._log(f"seed slot {slot} abandoned: {failures}")
                        break
                    repairs_left -= 1
                    solution = self._try_repair(
                        source_text or "(unparsed candidate)", failures, entrypoint
                    )
        except BudgetExceeded as exc:
            raise SeedExhausted(str(exc)) from exc
        return Population(individuals=tuple(seeds), generation=0)

    def _try_repair(self, source_text: str, failures: str, entrypoint: str) -> CodeSolution | None:
        try:
            return self._repair_candidate(source_text, failures, entrypoint)
        except (SourceParseError, CycleError) as exc:
            self._log(f"repair produced unparseable code: {exc}")
            return None

    def evolve_functional(
        self, population: Population, memory: ReflectionMemory
    ) -> list[Individual]:
        """Per-unit offspring: reflect / mutate / crossover scoped to one unit."""
        offspring: list[Individual] = []
        generation = population.generation + 1
        for slot in range(self.cfg.functional_offspring):
            rng = self._rng("functional", population.generation, slot)
            operator = _weighted_choice(rng, self.cfg.operator_weights)
            parent = rng.choice(list(population.individuals))
            unit_name = rng.choice(sorted(parent.solution.units))
            try:
                child_solution, detail = self._functional_child(
                    population, memory, rng, operator, parent, unit_name
                )
            except BudgetExceeded:
                self._log("functional offspring skipped: budget exhausted")
                break
            except (SourceParseError, CycleError) as exc:
                self._log(f"functional offspring dropped ({operator} on {unit_name}): {exc}")
                continue
            report = self._validate(child_solution)
            child = Individual(
                solution=child_solution,
                report=report,
                generation=generation,
                parents=(parent.id,),
                origin="functional",
            )
            offspring.append(child)
            self._record_lineage(child, detail=detail)
        return offspring

    def _functional_child(self, population, memory, rng, operator, parent, unit_name):
        solution = parent.solution
        source_text = solution_source(solution)
        memory_text = memory.to_text()
        if operator == "crossover":
            donors = [
                ind
                for ind in population.individuals
                if ind.id != parent.id and unit_name in ind.solution.units
            ]
            if not donors:
                operator = "mutate"  # no same-named unit to merge; degrade
            else:
                donor = rng.choice(donors)
                response = self._complete(
                    "crossover",
                    {
                        "recipient_source": source_text,
                        "donor_unit_source": donor.solution.units[unit_name].source,
                        "unit_name": unit_name,
                        "memory": memory_text,
                    },
                )
                new_solution = replace_unit(
                    solution, unit_name, extract_code_block(response)
                )
                return new_solution, f"crossover unit {unit_name} donor {donor.id[:12]}"
        if operator == "reflect":
            report_text = (
                sandbox.report_summary(parent.report) if parent.report is not None else "(none)"
            )
            response = self._complete(
                "reflect_short",
                {
                    "solution_source": source_text,
                    "report_summary": report_text,
                    "memory": memory_text,
                    "unit_name": unit_name,
                },
            )
        else:
            response = self._complete(
                "mutate",
                {
                    "solution_source": source_text,
                    "memory": memory_text,
                    "unit_name": unit_name,
                },
            )
        new_solution = replace_unit(solution, unit_name, extract_code_block(response))
        return new_solution, f"{operator} unit {unit_name}"

    def evolve_structural(
        self, population: Population, memory: ReflectionMemory
    ) -> list[Individual]:
        """Cross-individual offspring: recombine unit inventories of >= 2 parents."""
        if len(population.individuals) < 2:
            raise ValueError("structural evolution needs at least two individuals")
        offspring: list[Individual] = []
        generation = population.generation + 1
        for slot in range(self.cfg.structural_offspring):
            rng = self._rng("structural", population.generation, slot)
            parents = rng.sample(list(population.individuals), 2)
            inventory = "\n\n".join(
                f"Parent {index + 1} (fitness {parent.fitness:.6g}):\n"
                + solution_source(parent.solution)
                for index, parent in enumerate(parents)
            )
            bindings = {
                "parents_inventory": inventory,
                "memory": memory.to_text(),
                "entrypoint": parents[0].solution.entrypoint,
                "entrypoint_params": ", ".join(self.domain.entrypoint_params),
            }
            try:
                solution = self._structural_child(bindings)
            except BudgetExceeded:
                self._log("structural offspring skipped: budget exhausted")
                break
            except RecombinationInvalid as exc:
                self._log(f"structural offspring dropped: {exc}")
                continue
            report = self._validate(solution)
            child = Individual(
                solution=solution,
                report=report,
                generation=generation,
                parents=tuple(parent.id for parent in parents),
                origin="structural",
            )
            offspring.append(child)
            self._record_lineage(child, detail="recombine")
        return offspring

    def _structural_child(self, bindings: Mapping[str, str]) -> CodeSolution:
        """Recombine with one repair attempt on invalid structure."""
        entrypoint = bindings["entrypoint"]
        response = self._complete("recombine", bindings)
        failure: str
        try:
            solution = self._checked_recombination(extract_code_block(response), entrypoint)
            if solution is not None:
                return solution
            failure = "recombined program references undefined units"
        except (SourceParseError, CycleError) as exc:
            failure = str(exc)
        repair_response = self._complete(
            "repair",
            {
                "solution_source": extract_code_block(response),
                "failures": failure,
                "entrypoint": entrypoint,
                "entrypoint_params": bindings["entrypoint_params"],
            },
        )
        try:
            solution = self._checked_recombination(extract_code_block(repair_response), entrypoint)
        except (SourceParseError, CycleError) as exc:
            raise RecombinationInvalid(f"repair failed: {exc}") from exc
        if solution is None:
            raise RecombinationInvalid("repair failed: undefined unit references remain")
        return solution

    @staticmethod
    def _checked_recombination(code: str, entrypoint: str) -> CodeSolution | None:
        solution = solution_from_source(code, entrypoint)
        if missing_references(solution):
            return None
        return solution

    def reflect_long_term(
        self, memory: ReflectionMemory, population: Population
    ) -> ReflectionMemory:
        """Append a cross-generation note; degrade to an extractive summary on
        gateway failure so evolution never blocks on reflection."""
        ranked = sorted(population.individuals, key=lambda ind: (ind.fitness, ind.id))
        best, worst = ranked[0], ranked[-1]
        best_fitness = best.fitness

        def describe(individual: Individual) -> str:
            if individual.report is None:
                return "unvalidated candidate"
            return sandbox.report_summary(individual.report)

        try:
            summary = self._complete(
                "reflect_long",
                {
                    "previous_entries": memory.to_text(),
                    "best_summary": describe(best),
                    "worst_summary": describe(worst),
                },
            ).strip()
        except (ProviderUnavailable, BudgetExceeded, TimeoutError, ReplayMiss) as exc:
            failed = best.report.failed_rules() if best.report is not None else ()
            summary = (
                f"extractive fallback: best fitness {best_fitness:.6g}, "
                f"{len(failed)} failing rules ({type(exc).__name__})"
            )
            self._log(f"long-term reflection degraded: {exc}")
        entry = MemoryEntry(
            generation=population.generation,
            summary_text=summary,
            best_fitness=best_fitness,
        )
        return memory.with_entry(entry)

    # -- full run -------------------------------------------------------------

    def run(
        self,
        output_dir: Path,
        persist_config: Mapping[str, Any] | None = None,
        run_id: str | None = None,
    ) -> RunResult:
        if run_id is None:
            stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%SZ")
            digest = sha256_hex(canonical_json(self.cfg.to_json()) + self.spec.requirements)[:8]
            run_id = f"{stamp}-{digest}"
        run_dir = Path(output_dir) / run_id
        run_dir.mkdir(parents=True, exist_ok=True)
        if persist_config is not None:
            (run_dir / "config.json").write_text(
                json.dumps(persist_config, indent=1, sort_keys=True) + "\n", encoding="utf-8"
            )

        snapshots: list[Population] = []
        try:
            understanding = self.understand()
            population = self.seed_population(understanding)
        except SeedExhausted:
            self._persist(run_dir, snapshots)
            raise

        snapshots.append(population)
        self._persist(run_dir, snapshots)

        memory = ReflectionMemory(capacity=self.memory_capacity)
        best_history = [population.best.fitness]
        stagnant = 0
        for _ in range(self.cfg.max_generations):
            functional = self.evolve_functional(population, memory)
            structural = (
                self.evolve_structural(population, memory)
                if self.cfg.structural_offspring > 0
                else []
            )
            population = select_next_generation(
                population, functional, structural, self.cfg.population_size
            )
            snapshots.append(population)
            self._persist(run_dir, snapshots)
            memory = self.reflect_long_term(memory, population)

            best = population.best.fitness
            improvement = best_history[-1] - best
            best_history.append(best)
            if improvement <= self.cfg.epsilon:
                stagnant += 1
            else:
                stagnant = 0
            if self.cfg.patience > 0 and stagnant >= self.cfg.patience:
                self._log(f"early stop: no improvement over {stagnant} generations")
                break

        rows = self._final_report_rows(snapshots)
        self._persist(run_dir, snapshots, rows)
        return RunResult(
            run_id=run_id,
            run_dir=run_dir,
            snapshots=snapshots,
            lineage=list(self.lineage),
            report_rows=rows,
            best=snapshots[-1].best,
        )

    def _final_report_rows(self, snapshots: list[Population]) -> list:
        def call_factory(individual: Individual):
            def call(request: Mapping[str, Any]) -> dict[str, Any]:
                return sandbox.execute_candidate(
                    individual.solution, request, self.limits, self.shim_cmd
                )

            return call

        summary = RunSummary(
            initial_best=snapshots[0].best,
            final_best=snapshots[-1].best,
            rng_seed=self.cfg.rng_seed,
            call_factory=call_factory,
        )
        try:
            return list(self.domain.report_rows(summary))
        except Exception as exc:  # report rows must never kill a finished run
            self._log(f"report rows unavailable: {exc}")
            return []

    def _persist(self, run_dir: Path, snapshots: list[Population], rows: list | None = None) -> None:
        from .reporting import save_rows_json

        for population in snapshots:
            payload = {
                "generation": population.generation,
                "individuals": [
                    self._normalized_individual(ind) for ind in population.individuals
                ],
            }
            path = run_dir / f"generation_{population.generation}.json"
            path.write_text(canonical_json(payload) + "\n", encoding="utf-8")
        (run_dir / "lineage.json").write_text(
            canonical_json({"events": self.lineage}) + "\n", encoding="utf-8"
        )
        self.gateway.transcript.save_jsonl(run_dir / "transcript.jsonl")
        if rows is not None:
            save_rows_json(rows, run_dir / "report_rows.json")

    @staticmethod
    def _normalized_individual(individual: Individual) -> dict[str, Any]:
        # Wall time is a measurement, not a decision; zero it in persisted
        # snapshots so replayed runs are byte-identical.
        data = individual.to_json()
        if data["report"] is not None:
            data["report"]["wall_time"] = 0.0
        return data
