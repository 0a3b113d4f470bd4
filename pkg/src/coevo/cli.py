"""Operator surface: evolve / report / bench-quad / eval-tsp / replay.

Exit codes are a stable contract: 0 ok, 1 config error, 2 budget exhaustion,
3 internal error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from . import reporting
from .domains import get_domain, register_builtin_domains
from .domains import quadratic as quad
from .domains import tsp as tsp_domain
from .engine import Engine, EvolutionConfig, SeedExhausted
from .gateway import (
    BudgetExceeded,
    CompletionParams,
    Gateway,
    HttpProvider,
    ProviderUnavailable,
    ReplayProvider,
    Transcript,
    load_templates,
)
from .mockllm import quadratic_mock_provider
from .model import CodeSolution, ProblemSpec, load_rule_set
from .reporting import EmptyRun, ReportRow
from .sandbox import ExecutionLimits, execute_candidate

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_BUDGET = 2
EXIT_INTERNAL = 3


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    """One evolve run, loaded from a single JSON document."""

    spec_path: Path
    domain_id: str
    rules_path: Path
    evolution: EvolutionConfig
    provider: CompletionParams
    limits: ExecutionLimits
    output_dir: Path
    max_calls: int | None = None
    max_tokens: int | None = None

    def to_json(self) -> dict[str, Any]:
        data: dict[str, Any] = {
            "spec": str(self.spec_path),
            "domain_id": self.domain_id,
            "rules": str(self.rules_path),
            "evolution": self.evolution.to_json(),
            "provider": {
                "provider_id": self.provider.provider_id,
                "temperature": self.provider.temperature,
                "max_tokens": self.provider.max_tokens,
                "seed": self.provider.seed,
            },
            "limits": self.limits.to_json(),
            "output_dir": str(self.output_dir),
        }
        if self.max_calls is not None:
            data["max_calls"] = self.max_calls
        if self.max_tokens is not None:
            data["max_tokens"] = self.max_tokens
        return data

    @classmethod
    def from_json(cls, data: Mapping[str, Any], base_dir: Path) -> "RunConfig":
        try:
            provider = data["provider"]
            return cls(
                spec_path=_resolve(base_dir, data["spec"]),
                domain_id=data["domain_id"],
                rules_path=_resolve(base_dir, data["rules"]),
                evolution=EvolutionConfig.from_json(data["evolution"]),
                provider=CompletionParams(
                    provider_id=provider["provider_id"],
                    temperature=float(provider.get("temperature", 0.0)),
                    max_tokens=int(provider.get("max_tokens", 4096)),
                    seed=int(provider.get("seed", 0)),
                ),
                limits=ExecutionLimits.from_json(data["limits"]),
                output_dir=_resolve(base_dir, data["output_dir"], must_exist=False),
                max_calls=data.get("max_calls"),
                max_tokens=data.get("max_tokens"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad run config: {exc}") from exc


def _resolve(base_dir: Path, value: str, must_exist: bool = True) -> Path:
    path = Path(value)
    if not path.is_absolute():
        path = base_dir / path
    if must_exist and not path.exists():
        raise ConfigError(f"referenced path does not exist: {path}")
    return path


def load_run_config(path: Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file does not exist: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except ValueError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return RunConfig.from_json(data, path.parent.resolve())


def _load_spec(path: Path) -> ProblemSpec:
    try:
        return ProblemSpec.from_json(json.loads(path.read_text(encoding="utf-8")))
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"bad problem spec {path}: {exc}") from exc


def _load_rules(path: Path):
    try:
        return load_rule_set(json.loads(path.read_text(encoding="utf-8")))
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"bad rule set {path}: {exc}") from exc


def _build_gateway(config: RunConfig, transcript: Transcript | None = None) -> Gateway:
    provider_id = config.provider.provider_id
    if provider_id == "mock":
        provider: Any = quadratic_mock_provider()
    elif provider_id == "http":
        try:
            provider = HttpProvider()
        except ProviderUnavailable as exc:
            raise ConfigError(str(exc)) from exc
    elif provider_id == "replay":
        if transcript is None:
            raise ConfigError("replay provider needs a recorded transcript")
        provider = ReplayProvider(transcript)
    else:
        raise ConfigError(f"unknown provider_id: {provider_id!r}")
    return Gateway(
        providers={provider_id: provider},
        max_calls=config.max_calls,
        max_tokens=config.max_tokens,
    )


def _build_engine(config: RunConfig, gateway: Gateway) -> Engine:
    register_builtin_domains()
    spec = _load_spec(config.spec_path)
    if spec.domain_id != config.domain_id:
        raise ConfigError(
            f"config domain_id {config.domain_id!r} does not match spec "
            f"domain_id {spec.domain_id!r}"
        )
    try:
        domain = get_domain(config.domain_id)
    except Exception as exc:
        raise ConfigError(str(exc)) from exc
    rules = _load_rules(config.rules_path)
    from .gateway import KnowledgeBase, Snippet

    kb = KnowledgeBase(
        snippets=(
            Snippet(
                snippet_id="k1",
                title="gradient descent stability",
                text="A fixed gradient step is stable below two divided by the "
                "largest curvature; larger stable steps converge faster.",
                tags=("quadratic", "optimization"),
            ),
            Snippet(
                snippet_id="k2",
                title="edge desirability",
                text="Shorter edges deserve higher desirability; inverse distance "
                "is the classic choice.",
                tags=("tsp", "routing"),
            ),
        )
    )
    return Engine(
        gateway=gateway,
        templates=load_templates(),
        domain=domain,
        rules=rules,
        limits=config.limits,
        spec=spec,
        kb=kb,
        cfg=config.evolution,
        params=config.provider,
    )


def cmd_evolve(config_path: Path) -> int:
    config = load_run_config(config_path)
    gateway = _build_gateway(config)
    engine = _build_engine(config, gateway)
    try:
        result = engine.run(config.output_dir, persist_config=config.to_json())
    except SeedExhausted as exc:
        print(f"seed population exhausted: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    for population in result.snapshots:
        best = population.best.fitness
        shown = best if math.isfinite(best) else "inf"
        print(f"generation {population.generation}: best fitness {shown}")
    print(f"run directory: {result.run_dir}")
    return EXIT_OK


def cmd_replay(run_dir: Path) -> int:
    run_dir = Path(run_dir)
    config_path = run_dir / "config.json"
    transcript_path = run_dir / "transcript.jsonl"
    if not config_path.exists() or not transcript_path.exists():
        raise ConfigError(f"{run_dir} lacks config.json or transcript.jsonl")
    config = load_run_config(config_path)
    transcript = Transcript.load_jsonl(transcript_path)
    replay_params = CompletionParams(
        provider_id="replay",
        temperature=config.provider.temperature,
        max_tokens=config.provider.max_tokens,
        seed=config.provider.seed,
    )
    # Replayed completions must hash identically to the recorded ones.
    replay_config = RunConfig(
        spec_path=config.spec_path,
        domain_id=config.domain_id,
        rules_path=config.rules_path,
        evolution=config.evolution,
        provider=config.provider,
        limits=config.limits,
        output_dir=config.output_dir,
        max_calls=config.max_calls,
        max_tokens=config.max_tokens,
    )
    gateway = Gateway(
        providers={config.provider.provider_id: ReplayProvider(transcript)},
        max_calls=config.max_calls,
        max_tokens=config.max_tokens,
    )
    engine = _build_engine(replay_config, gateway)
    try:
        result = engine.run(config.output_dir, persist_config=replay_config.to_json())
    except SeedExhausted as exc:
        print(f"seed population exhausted: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    print(f"replayed into: {result.run_dir}")
    return EXIT_OK


def cmd_report(run_dir: Path, fmt: str) -> int:
    run_dir = Path(run_dir)
    snapshot_paths = sorted(run_dir.glob("generation_*.json"))
    if not run_dir.exists() or not snapshot_paths:
        raise EmptyRun(f"no generation snapshots under {run_dir}")
    rows_path = run_dir / "report_rows.json"
    rows = reporting.load_rows_json(rows_path) if rows_path.exists() else []

    points = []
    for path in snapshot_paths:
        data = json.loads(path.read_text(encoding="utf-8"))
        fitnesses = [
            ind["report"]["fitness"] if ind["report"] is not None else "inf"
            for ind in data["individuals"]
        ]
        numeric = [f for f in fitnesses if not isinstance(f, str)]
        best = min(numeric) if numeric else math.inf
        points.append((data["generation"], best))
    points.sort()
    (run_dir / "convergence.csv").write_text(
        reporting.convergence_csv(points), encoding="utf-8"
    )

    if fmt == "csv":
        text = reporting.rows_to_csv(rows)
        (run_dir / "report.csv").write_text(text, encoding="utf-8")
        print(text, end="")
    else:
        text = reporting.rows_to_table(rows)
        (run_dir / "report.txt").write_text(text, encoding="utf-8")
        print(text, end="")
    return EXIT_OK


def cmd_bench_quad(
    n: int,
    d: int,
    xi_list: Sequence[float],
    seeds: Sequence[int],
    variants: Sequence[str],
    k: int,
    max_iter: int,
    tol: float,
    out_dir: Path,
) -> int:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary_lines = ["variant,xi,seed,iterations_to_tol,final_suboptimality"]
    for xi in xi_list:
        for seed in seeds:
            inst = quad.generate_instance(n, d, xi, seed)
            x_star, f_star = quad.closed_form_optimum(inst)
            for variant_name in variants:
                variant = quad.SolverVariant(variant=variant_name, k=k)
                try:
                    x_best, trace = quad.lisr_solve(
                        inst, variant, np.zeros(d), max_iter=max_iter, tol=tol
                    )
                except quad.NumericalBreakdown as exc:
                    print(
                        f"cell variant={variant_name} xi={xi} seed={seed} broke down: {exc}",
                        file=sys.stderr,
                    )
                    summary_lines.append(f"{variant_name},{xi},{seed},,nan")
                    continue
                trace_path = out_dir / f"trace_{variant_name}_xi{xi:g}_seed{seed}.csv"
                quad.save_trace_csv(trace, trace_path)
                iters = quad.iterations_to_tolerance(trace, f_star)
                f_best = quad.objective_and_gradient(inst, x_best)[0]
                subopt = (f_best - f_star) / (1.0 + abs(f_star))
                summary_lines.append(
                    f"{variant_name},{xi:g},{seed},"
                    f"{iters if iters is not None else ''},{subopt!r}"
                )
    (out_dir / "summary.csv").write_text("\n".join(summary_lines) + "\n", encoding="utf-8")
    print(f"bench artifacts in: {out_dir}")
    return EXIT_OK


def _load_plugin_candidate(path: Path, limits: ExecutionLimits):
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    solution = CodeSolution.from_json(data)

    def plugin(edges):
        response = execute_candidate(
            solution,
            {"task": "guide_tsp", "algorithm": "plugin", "edges": [list(e) for e in edges]},
            limits,
        )
        scores = response.get("scores")
        if not isinstance(scores, list):
            raise tsp_domain.PluginFailure("plugin response lacks a 'scores' list")
        return scores

    return plugin


def cmd_eval_tsp(
    instances_dir: Path,
    algorithm: str,
    seeds: Sequence[int],
    iterations: int,
    plugin_path: Path | None,
    out_path: Path | None,
) -> int:
    instances_dir = Path(instances_dir)
    paths = sorted(instances_dir.glob("*.tsp"))
    if not paths:
        raise ConfigError(f"no .tsp files under {instances_dir}")
    instances = [tsp_domain.parse_instance(p.read_text(encoding="utf-8")) for p in paths]
    limits = ExecutionLimits()
    rows: list[ReportRow] = []
    for inst in instances:
        objs = []
        for seed in seeds:
            cfg = tsp_domain.MetaheuristicConfig(
                algorithm=algorithm, iterations=iterations, rng_seed=seed
            )
            tour, _ = tsp_domain.run_metaheuristic(inst, cfg)
            objs.append(tour.length)
        base_obj = float(np.mean(objs))
        if plugin_path is not None:
            plugin = _load_plugin_candidate(plugin_path, limits)
            plugged = []
            for seed in seeds:
                cfg = tsp_domain.MetaheuristicConfig(
                    algorithm=algorithm, iterations=iterations, rng_seed=seed, plugin=plugin
                )
                tour, _ = tsp_domain.run_metaheuristic(inst, cfg)
                plugged.append(tour.length)
            cae_obj = float(np.mean(plugged))
        else:
            cae_obj = base_obj
        rows.append(
            ReportRow(
                scenario_id=inst.name,
                base_obj=base_obj,
                cae_obj=cae_obj,
                gap_percent=tsp_domain.gap_percent(base_obj, cae_obj),
                runs_averaged=len(seeds),
                seeds=tuple(seeds),
            )
        )
    text = reporting.rows_to_csv(rows)
    if out_path is not None:
        Path(out_path).write_text(text, encoding="utf-8")
    print(text, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coevo")
    sub = parser.add_subparsers(dest="command", required=True)

    p_evolve = sub.add_parser("evolve", help="run one evolution from a config file")
    p_evolve.add_argument("--config", required=True, type=Path)

    p_report = sub.add_parser("report", help="emit report rows and convergence data")
    p_report.add_argument("--run", required=True, type=Path)
    p_report.add_argument("--format", choices=("csv", "table"), default="table")

    p_bench = sub.add_parser("bench-quad", help="solver variant comparison traces")
    p_bench.add_argument("--n", type=int, default=20)
    p_bench.add_argument("--d", type=int, default=10)
    p_bench.add_argument("--xi", type=float, nargs="+", default=[4.0])
    p_bench.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3])
    p_bench.add_argument("--variants", nargs="+", choices=("a", "b"), default=["a", "b"])
    p_bench.add_argument("--k", type=int, default=3)
    p_bench.add_argument("--max-iter", type=int, default=2000)
    p_bench.add_argument("--tol", type=float, default=1e-16)
    p_bench.add_argument("--out", type=Path, default=Path("bench_quad"))

    p_eval = sub.add_parser("eval-tsp", help="baseline (and plugin) objective table")
    p_eval.add_argument("--instances", required=True, type=Path)
    p_eval.add_argument("--algo", required=True, choices=tsp_domain.ALGORITHMS)
    p_eval.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p_eval.add_argument("--iterations", type=int, default=60)
    p_eval.add_argument("--plugin", type=Path, default=None)
    p_eval.add_argument("--out", type=Path, default=None)

    p_replay = sub.add_parser("replay", help="re-run a recorded run from its transcript")
    p_replay.add_argument("--run", required=True, type=Path)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "evolve":
            return cmd_evolve(args.config)
        if args.command == "report":
            return cmd_report(args.run, args.format)
        if args.command == "bench-quad":
            return cmd_bench_quad(
                n=args.n,
                d=args.d,
                xi_list=args.xi,
                seeds=args.seeds,
                variants=args.variants,
                k=args.k,
                max_iter=args.max_iter,
                tol=args.tol,
                out_dir=args.out,
            )
        if args.command == "eval-tsp":
            return cmd_eval_tsp(
                instances_dir=args.instances,
                algorithm=args.algo,
                seeds=args.seeds,
                iterations=args.iterations,
                plugin_path=args.plugin,
                out_path=args.out,
            )
        if args.command == "replay":
            return cmd_replay(args.run)
        parser.error(f"unknown command {args.command!r}")
    except (ConfigError, EmptyRun) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SeedExhausted, BudgetExceeded) as exc:
        print(f"budget exhausted: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except Exception as exc:  # stable exit-code contract for operators
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
