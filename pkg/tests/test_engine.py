import hashlib
import json
import math
from pathlib import Path

import pytest

from coevo.domains import get_domain
from coevo.engine import (
    Engine,
    EvolutionConfig,
    InvalidSpec,
    MemoryEntry,
    ParseError,
    Population,
    ReflectionMemory,
    SeedExhausted,
    select_next_generation,
)
from coevo.gateway import (
    CompletionParams,
    Gateway,
    KnowledgeBase,
    ProviderUnavailable,
    ReplayProvider,
    Snippet,
    Transcript,
    load_templates,
)
from coevo.mockllm import quadratic_mock_response
from coevo.model import (
    Individual,
    RuleResult,
    ValidationReport,
)
from coevo.sourcecode import solution_from_source

PARAMS = CompletionParams(provider_id="test", seed=3)


class ScriptedProvider:
    """Per-task FIFO scripts; anything unscripted falls back to the bundled mock."""

    def __init__(self, scripts=None, fail_tasks=()):
        self.scripts = {k: list(v) for k, v in (scripts or {}).items()}
        self.fail_tasks = set(fail_tasks)

    def complete(self, prompt, params):
        task = prompt.splitlines()[0].removeprefix("### TASK:").strip()
        if task in self.fail_tasks:
            raise ProviderUnavailable(f"scripted outage for {task}")
        queue = self.scripts.get(task)
        if queue:
            return queue.pop(0)
        return quadratic_mock_response(prompt, params.seed)


def build_engine(provider, quad_spec, quad_rules, limits, cfg=None, max_calls=None):
    gateway = Gateway(providers={"test": provider}, max_calls=max_calls)
    return Engine(
        gateway=gateway,
        templates=load_templates(),
        domain=get_domain("quadratic"),
        rules=quad_rules,
        limits=limits,
        spec=quad_spec,
        kb=KnowledgeBase(snippets=(Snippet("k1", "hint", "text", ("quadratic",)),)),
        cfg=cfg or EvolutionConfig(
            population_size=2,
            functional_offspring=1,
            structural_offspring=1,
            max_generations=2,
            repair_attempts=1,
            rng_seed=11,
        ),
        params=PARAMS,
    )


def fake_individual(tag: str, fitness: float, generation: int = 0, origin: str = "seed",
                    parents=()):
    solution = solution_from_source(
        f"def solve(A_diag, b, x0, max_iter, tol):\n    return {{'x': list(x0), 'tag': '{tag}'}}",
        "solve",
    )
    report = ValidationReport(
        per_rule=(RuleResult("r", math.isfinite(fitness), ""),),
        metrics={"suboptimality": fitness} if math.isfinite(fitness) else {},
        fitness=fitness,
    )
    return Individual(
        solution=solution, report=report, generation=generation, parents=tuple(parents),
        origin=origin,
    )


BROKEN_FENCED = "```python\ndef (broken\n```"
DANGLING_FENCED = (
    "```python\ndef solve(A_diag, b, x0, max_iter, tol):\n    return helper(x0)\n```"
)


class TestUnderstand:
    def test_mock_returns_structured_understanding(self, quad_spec, quad_rules, limits):
        engine = build_engine(ScriptedProvider(), quad_spec, quad_rules, limits)
        understanding = engine.understand()
        assert understanding.entrypoint_name == "solve"
        assert len(understanding.suggested_decomposition) == 3

    def test_junk_three_times_is_parse_error(self, quad_spec, quad_rules, limits):
        provider = ScriptedProvider(scripts={"understand": ["junk", "junk", "junk"]})
        engine = build_engine(provider, quad_spec, quad_rules, limits)
        with pytest.raises(ParseError):
            engine.understand()
        assert engine.gateway.calls_made == 3

    def test_empty_requirements_is_invalid_spec(self, quad_spec, quad_rules, limits):
        from dataclasses import replace

        engine = build_engine(
            ScriptedProvider(), replace(quad_spec, requirements="  "), quad_rules, limits
        )
        with pytest.raises(InvalidSpec):
            engine.understand()

    def test_unknown_constraint_rule_is_invalid_spec(self, quad_spec, quad_rules, limits):
        from dataclasses import replace

        from coevo.model import Constraint

        bad_spec = replace(
            quad_spec, constraints=(Constraint("c", "d", "no-such-rule"),)
        )
        with pytest.raises(InvalidSpec):
            build_engine(ScriptedProvider(), bad_spec, quad_rules, limits)


BAD_SIGNATURE = "```python\ndef solve(x0):\n    return {'x': list(x0), 'trace': []}\n```"


class TestSeedPopulation:
    def test_two_valid_candidates_immediately(self, quad_spec, quad_rules, limits):
        engine = build_engine(ScriptedProvider(), quad_spec, quad_rules, limits)
        population = engine.seed_population(engine.understand())
        assert len(population.individuals) == 2
        assert population.generation == 0
        assert all(ind.origin == "seed" for ind in population.individuals)
        assert all(math.isfinite(ind.fitness) for ind in population.individuals)

    def test_blocking_failure_triggers_one_repair_round(self, quad_spec, quad_rules, limits):
        provider = ScriptedProvider(scripts={"generate-code": [BAD_SIGNATURE]})
        engine = build_engine(provider, quad_spec, quad_rules, limits)
        population = engine.seed_population(engine.understand())
        assert len(population.individuals) == 2
        repair_calls = [
            e for e in engine.gateway.transcript.entries
            if e.prompt_text.startswith("### TASK: repair")
        ]
        assert len(repair_calls) == 1

    def test_budget_exhaustion_is_seed_exhausted(self, quad_spec, quad_rules, limits):
        cfg = EvolutionConfig(
            population_size=3,
            functional_offspring=1,
            structural_offspring=0,
            max_generations=1,
            rng_seed=1,
        )
        engine = build_engine(
            ScriptedProvider(), quad_spec, quad_rules, limits, cfg=cfg, max_calls=3
        )
        understanding = engine.understand()
        with pytest.raises(SeedExhausted):
            engine.seed_population(understanding)


SOLVE_ONLY = """
import numpy as np

def solve(A_diag, b, x0, max_iter, tol):
    a = np.asarray(A_diag, dtype=float)
    lin = np.asarray(b, dtype=float)
    x = np.asarray(x0, dtype=float).copy()
    step = 0.5 / float(a.mean(axis=0).max())
    trace = []
    for t in range(int(max_iter)):
        g = (a * x + lin).mean(axis=0)
        x = x - step * g
        trace.append([t, float(np.mean(0.5 * (a * x * x).sum(axis=1) + lin.dot(x)))])
    return {"x": x.tolist(), "trace": trace}
"""


class TestEvolveFunctional:
    def seeded_population(self, engine):
        return engine.seed_population(engine.understand())

    def test_offspring_changes_at_most_one_unit(self, quad_spec, quad_rules, limits):
        cfg = EvolutionConfig(
            population_size=2, functional_offspring=2, structural_offspring=0,
            max_generations=1, rng_seed=5,
            operator_weights={"mutate": 1.0},
        )
        engine = build_engine(ScriptedProvider(), quad_spec, quad_rules, limits, cfg=cfg)
        population = self.seeded_population(engine)
        offspring = engine.evolve_functional(population, ReflectionMemory())
        assert offspring
        parents = {ind.id: ind for ind in population.individuals}
        for child in offspring:
            assert child.origin == "functional"
            assert len(child.parents) == 1
            parent = parents[child.parents[0]]
            changed = [
                name
                for name in parent.solution.units
                if child.solution.units[name].source != parent.solution.units[name].source
            ]
            assert set(child.solution.units) == set(parent.solution.units)
            assert len(changed) <= 1

    def test_single_unit_parent_mutation_rewrites_that_unit(self, quad_spec, quad_rules, limits):
        cfg = EvolutionConfig(
            population_size=2, functional_offspring=1, structural_offspring=0,
            max_generations=1, rng_seed=5, operator_weights={"mutate": 1.0},
        )
        solve_only = "```python\n" + SOLVE_ONLY + "```"
        provider = ScriptedProvider(scripts={"generate-code": [solve_only]})
        engine = build_engine(provider, quad_spec, quad_rules, limits, cfg=cfg)
        population = self.seeded_population(engine)
        one_unit_parents = [
            ind for ind in population.individuals if set(ind.solution.units) == {"solve"}
        ]
        assert one_unit_parents
        offspring = engine.evolve_functional(population, ReflectionMemory())
        assert offspring

    def test_zero_offspring_requested(self, quad_spec, quad_rules, limits):
        cfg = EvolutionConfig(
            population_size=2, functional_offspring=0, structural_offspring=1,
            max_generations=1, rng_seed=5,
        )
        engine = build_engine(ScriptedProvider(), quad_spec, quad_rules, limits, cfg=cfg)
        population = self.seeded_population(engine)
        assert engine.evolve_functional(population, ReflectionMemory()) == []

    def test_uncompilable_rewrite_dropped_and_logged(self, quad_spec, quad_rules, limits):
        cfg = EvolutionConfig(
            population_size=2, functional_offspring=1, structural_offspring=0,
            max_generations=1, rng_seed=5, operator_weights={"mutate": 1.0},
        )
        provider = ScriptedProvider(
            scripts={"mutate-unit": [BROKEN_FENCED]}
        )
        engine = build_engine(provider, quad_spec, quad_rules, limits, cfg=cfg)
        population = self.seeded_population(engine)
        offspring = engine.evolve_functional(population, ReflectionMemory())
        assert offspring == []
        assert any("dropped" in event for event in engine.events)


class TestEvolveStructural:
    def test_recombination_produces_two_parent_offspring(self, quad_spec, quad_rules, limits):
        engine = build_engine(ScriptedProvider(), quad_spec, quad_rules, limits)
        population = engine.seed_population(engine.understand())
        offspring = engine.evolve_structural(population, ReflectionMemory())
        assert offspring
        child = offspring[0]
        assert child.origin == "structural"
        assert len(set(child.parents)) == 2
        parent_ids = {ind.id for ind in population.individuals}
        assert set(child.parents) <= parent_ids

    def test_dangling_reference_with_failed_repair_dropped(self, quad_spec, quad_rules, limits):
        provider = ScriptedProvider(
            scripts={"recombine": [DANGLING_FENCED], "repair": [DANGLING_FENCED]}
        )
        cfg = EvolutionConfig(
            population_size=2, functional_offspring=0, structural_offspring=1,
            max_generations=1, rng_seed=7,
        )
        engine = build_engine(provider, quad_spec, quad_rules, limits, cfg=cfg)
        population = engine.seed_population(engine.understand())
        offspring = engine.evolve_structural(population, ReflectionMemory())
        assert offspring == []
        assert any("dropped" in event for event in engine.events)

    def test_population_of_one_rejected(self, quad_spec, quad_rules, limits):
        engine = build_engine(ScriptedProvider(), quad_spec, quad_rules, limits)
        lone = Population(individuals=(fake_individual("a", 1.0),), generation=0)
        with pytest.raises(ValueError):
            engine.evolve_structural(lone, ReflectionMemory())


class TestSelectNextGeneration:
    def test_sort_and_truncate(self):
        population = Population(
            individuals=(fake_individual("a", 3.0), fake_individual("b", 5.0)),
            generation=0,
        )
        f_new = [fake_individual("c", 4.0, generation=1, origin="functional",
                                 parents=(population.individuals[0].id,))]
        s_new = [fake_individual("d", 2.0, generation=1, origin="structural",
                                 parents=(population.individuals[0].id, population.individuals[1].id))]
        result = select_next_generation(population, f_new, s_new, population_size=2)
        assert [ind.fitness for ind in result.individuals] == [2.0, 3.0]
        assert result.generation == 1

    def test_duplicate_id_kept_once_earliest_generation(self):
        original = fake_individual("same", 3.0)
        duplicate = fake_individual("same", 3.0, generation=1, origin="functional",
                                    parents=("someparent",))
        population = Population(
            individuals=(original, fake_individual("other", 4.0)), generation=0
        )
        result = select_next_generation(population, [duplicate], [], population_size=2)
        assert [ind.id for ind in result.individuals].count(original.id) == 1
        kept = next(ind for ind in result.individuals if ind.id == original.id)
        assert kept.generation == 0

    def test_all_invalid_offspring_keeps_current_population(self):
        population = Population(
            individuals=(fake_individual("a", 3.0), fake_individual("b", 5.0)),
            generation=0,
        )
        invalid = [
            fake_individual("x", math.inf, generation=1, origin="functional", parents=("p",))
        ]
        result = select_next_generation(population, invalid, [], population_size=2)
        assert {ind.id for ind in result.individuals} == {
            ind.id for ind in population.individuals
        }


class TestReflectionMemory:
    def test_append_within_capacity(self):
        memory = ReflectionMemory(capacity=2)
        memory = memory.with_entry(MemoryEntry(0, "g0", 1.0))
        memory = memory.with_entry(MemoryEntry(1, "g1", 0.5))
        assert [e.generation for e in memory.entries] == [0, 1]

    def test_eviction_beyond_capacity(self):
        memory = ReflectionMemory(capacity=2)
        for gen in range(3):
            memory = memory.with_entry(MemoryEntry(gen, f"g{gen}", 1.0))
        assert [e.generation for e in memory.entries] == [1, 2]

    def test_gateway_down_appends_extractive_fallback(self, quad_spec, quad_rules, limits):
        provider = ScriptedProvider(fail_tasks={"reflect-long"})
        engine = build_engine(provider, quad_spec, quad_rules, limits)
        population = Population(
            individuals=(fake_individual("a", 1.0), fake_individual("b", 2.0)),
            generation=0,
        )
        memory = engine.reflect_long_term(ReflectionMemory(), population)
        assert len(memory.entries) == 1
        assert "extractive fallback" in memory.entries[0].summary_text


class TestRun:
    def test_two_generations_three_snapshots(self, quad_spec, quad_rules, limits, tmp_path):
        engine = build_engine(ScriptedProvider(), quad_spec, quad_rules, limits)
        result = engine.run(tmp_path)
        assert [p.generation for p in result.snapshots] == [0, 1, 2]
        snapshot_files = sorted(p.name for p in result.run_dir.glob("generation_*.json"))
        assert snapshot_files == [
            "generation_0.json",
            "generation_1.json",
            "generation_2.json",
        ]
        assert (result.run_dir / "lineage.json").exists()
        assert (result.run_dir / "transcript.jsonl").exists()
        assert (result.run_dir / "report_rows.json").exists()

    def test_population_size_constant_and_elite_monotone(
        self, quad_spec, quad_rules, limits, tmp_path
    ):
        cfg = EvolutionConfig(
            population_size=3, functional_offspring=2, structural_offspring=1,
            max_generations=3, rng_seed=2,
        )
        engine = build_engine(ScriptedProvider(), quad_spec, quad_rules, limits, cfg=cfg)
        result = engine.run(tmp_path)
        bests = []
        for population in result.snapshots:
            assert len(population.individuals) == 3
            bests.append(population.best.fitness)
        assert all(later <= earlier for earlier, later in zip(bests, bests[1:]))

    def test_origin_bookkeeping_parents_exist(self, quad_spec, quad_rules, limits, tmp_path):
        engine = build_engine(ScriptedProvider(), quad_spec, quad_rules, limits)
        result = engine.run(tmp_path)
        seen: set[str] = set()
        for event in result.lineage:
            if event["origin"] != "seed":
                assert set(event["parents"]) <= seen, event
            seen.add(event["id"])
        for population in result.snapshots:
            for ind in population.individuals:
                if ind.origin == "seed":
                    assert ind.parents == ()

    def test_flat_fitness_early_stops_after_one_generation(
        self, quad_spec, quad_rules, limits, tmp_path
    ):
        # every offspring is uncompilable, so each generation keeps the same
        # population; with patience 1 and epsilon 0 the run stops after g1
        provider = ScriptedProvider(
            scripts={
                "mutate-unit": [BROKEN_FENCED] * 10,
                "reflect-unit": [BROKEN_FENCED] * 10,
                "crossover-unit": [BROKEN_FENCED] * 10,
                "recombine": [BROKEN_FENCED] * 10,
                "repair": [BROKEN_FENCED] * 10,
            }
        )
        cfg = EvolutionConfig(
            population_size=2, functional_offspring=1, structural_offspring=1,
            max_generations=5, repair_attempts=0, rng_seed=4, epsilon=0.0, patience=1,
        )
        engine = build_engine(provider, quad_spec, quad_rules, limits, cfg=cfg)
        result = engine.run(tmp_path)
        assert [p.generation for p in result.snapshots] == [0, 1]
        assert {i.id for i in result.snapshots[0].individuals} == {
            i.id for i in result.snapshots[1].individuals
        }

    def test_record_then_replay_byte_identical(self, quad_spec, quad_rules, limits, tmp_path):
        engine = build_engine(ScriptedProvider(), quad_spec, quad_rules, limits)
        recorded = engine.run(tmp_path, run_id="recorded")

        def digest_artifacts(run_dir: Path) -> dict[str, str]:
            return {
                p.name: hashlib.sha256(p.read_bytes()).hexdigest()
                for p in sorted(run_dir.iterdir())
            }

        reference = digest_artifacts(recorded.run_dir)
        transcript = Transcript.load_jsonl(recorded.run_dir / "transcript.jsonl")
        replay_gateway = Gateway(providers={"test": ReplayProvider(transcript)})
        replay_engine = Engine(
            gateway=replay_gateway,
            templates=load_templates(),
            domain=get_domain("quadratic"),
            rules=quad_rules,
            limits=limits,
            spec=quad_spec,
            kb=KnowledgeBase(snippets=(Snippet("k1", "hint", "text", ("quadratic",)),)),
            cfg=engine.cfg,
            params=PARAMS,
        )
        replayed = replay_engine.run(tmp_path, run_id="replayed")
        assert digest_artifacts(replayed.run_dir) == reference
