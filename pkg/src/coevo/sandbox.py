"""Out-of-process candidate execution and rule-based validation.

Each candidate runs in its own shim process behind a line-delimited JSON
protocol; a crashing or hanging candidate never takes the engine down. The
validator runs static checks first, then functional probes, then the
domain's performance scoring, and scalarizes fitness when every blocking
rule passed.
"""

from __future__ import annotations

import json
import math
import os
import queue
import signal
import subprocess
import sys
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping

from .model import (
    CodeSolution,
    ProblemSpec,
    RuleResult,
    ValidationReport,
    ValidationRule,
    canonical_json,
    dependency_order,
    scalarize_fitness,
)


class SandboxError(Exception):
    pass


class CompileFailure(SandboxError):
    """The shim could not load the candidate source bundle."""


class RuntimeFailure(SandboxError):
    """The candidate raised during a call; carries the shim's traceback text."""

    def __init__(self, error: str, traceback_text: str = ""):
        self.error = error
        self.traceback_text = traceback_text
        super().__init__(error)


class Timeout(SandboxError):
    """The candidate exceeded the wall-time limit and was killed."""


class ProtocolError(SandboxError):
    """The shim produced a malformed or unexpected response."""


class OutputOverflow(SandboxError):
    """A shim response line exceeded the configured stdout cap."""


@dataclass(frozen=True)
class ExecutionLimits:
    wall_time_limit: float = 20.0
    memory_limit: int = 1 << 31
    max_stdout: int = 8_000_000

    def __post_init__(self):
        if self.wall_time_limit <= 0 or self.memory_limit <= 0 or self.max_stdout <= 0:
            raise ValueError("execution limits must be positive")

    def to_json(self) -> dict[str, Any]:
        return {
            "wall_time_limit": self.wall_time_limit,
            "memory_limit": self.memory_limit,
            "max_stdout": self.max_stdout,
        }

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> "ExecutionLimits":
        return cls(
            wall_time_limit=float(data["wall_time_limit"]),
            memory_limit=int(data["memory_limit"]),
            max_stdout=int(data["max_stdout"]),
        )


@dataclass(frozen=True)
class Probe:
    probe_id: str
    request: Mapping[str, Any]
    expect: Mapping[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class ProbeSet:
    probes: tuple[Probe, ...]

    def __post_init__(self):
        object.__setattr__(self, "probes", tuple(self.probes))
        if not self.probes:
            raise ValueError("probe set must be non-empty")


def default_shim_cmd() -> tuple[str, ...]:
    return (sys.executable, "-m", "candidate_shim")


def _set_child_limits(memory_limit: int):
    def preexec():
        try:
            import resource

            resource.setrlimit(resource.RLIMIT_AS, (memory_limit, memory_limit))
        except Exception:
            pass  # best effort; wall-time enforcement still applies

    return preexec


class ShimSession:
    """One shim process hosting one candidate; strictly request/response."""

    def __init__(
        self,
        limits: ExecutionLimits,
        shim_cmd: Iterable[str] | None = None,
    ):
        self.limits = limits
        cmd = tuple(shim_cmd) if shim_cmd is not None else default_shim_cmd()
        env = dict(os.environ)
        env.setdefault("OPENBLAS_NUM_THREADS", "1")
        env.setdefault("OMP_NUM_THREADS", "1")
        popen_kwargs: dict[str, Any] = {}
        if os.name == "posix":
            popen_kwargs["preexec_fn"] = _set_child_limits(limits.memory_limit)
            popen_kwargs["start_new_session"] = True
        self.proc = subprocess.Popen(
            list(cmd),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            text=True,
            env=env,
            **popen_kwargs,
        )
        self._lines: queue.Queue = queue.Queue()
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()
        self._closed = False

    def _read_loop(self) -> None:
        try:
            for line in self.proc.stdout:
                self._lines.put(line)
        except ValueError:
            pass  # stdout closed during shutdown
        self._lines.put(None)

    def _roundtrip(self, message: Mapping[str, Any]) -> dict[str, Any]:
        if self.proc.poll() is not None:
            raise ProtocolError("shim process is not running")
        try:
            self.proc.stdin.write(json.dumps(message, separators=(",", ":")) + "\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise ProtocolError(f"shim pipe closed: {exc}") from exc
        try:
            line = self._lines.get(timeout=self.limits.wall_time_limit)
        except queue.Empty:
            self.kill()
            raise Timeout(f"no response within {self.limits.wall_time_limit}s") from None
        if line is None:
            raise ProtocolError("shim exited without responding")
        if len(line) > self.limits.max_stdout:
            self.kill()
            raise OutputOverflow(f"response line of {len(line)} bytes exceeds max_stdout")
        try:
            reply = json.loads(line)
        except ValueError as exc:
            raise ProtocolError(f"malformed shim response: {exc}") from exc
        if not isinstance(reply, dict) or "ok" not in reply:
            raise ProtocolError("shim response missing 'ok' field")
        return reply

    def load(self, solution: CodeSolution) -> None:
        units = [
            {"name": name, "source": solution.units[name].source}
            for name in dependency_order(solution)
        ]
        reply = self._roundtrip(
            {"op": "load", "units": units, "entrypoint": solution.entrypoint}
        )
        if not reply["ok"]:
            raise CompileFailure(str(reply.get("error", "load failed")))

    def call(self, request: Mapping[str, Any]) -> dict[str, Any]:
        reply = self._roundtrip({"op": "call", "request": dict(request)})
        if not reply["ok"]:
            raise RuntimeFailure(
                str(reply.get("error", "call failed")), str(reply.get("traceback", ""))
            )
        response = reply.get("response")
        if not isinstance(response, dict):
            raise ProtocolError("shim call response is not an object")
        return response

    def kill(self) -> None:
        if self.proc.poll() is None:
            try:
                if os.name == "posix":
                    os.killpg(self.proc.pid, signal.SIGKILL)
                else:
                    self.proc.kill()
            except (ProcessLookupError, PermissionError):
                pass
        try:
            self.proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            pass

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        if self.proc.poll() is None:
            try:
                self.proc.stdin.write('{"op":"shutdown"}\n')
                self.proc.stdin.flush()
                self.proc.stdin.close()
            except (BrokenPipeError, OSError):
                pass
            try:
                self.proc.wait(timeout=2)
            except subprocess.TimeoutExpired:
                pass
        self.kill()

    def __enter__(self) -> "ShimSession":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


def execute_candidate(
    solution: CodeSolution,
    request: Mapping[str, Any],
    limits: ExecutionLimits,
    shim_cmd: Iterable[str] | None = None,
) -> dict[str, Any]:
    """Run one request against a candidate in a fresh shim process."""
    with ShimSession(limits, shim_cmd) as session:
        session.load(solution)
        return session.call(request)


def validate(
    solution: CodeSolution,
    rules: Iterable[ValidationRule],
    domain,
    limits: ExecutionLimits,
    spec: ProblemSpec,
    shim_cmd: Iterable[str] | None = None,
) -> ValidationReport:
    """Apply the rule set to a candidate and produce its ValidationReport.

    All candidate failures are captured inside the report; this function only
    raises for misconfiguration (e.g. an empty rule set).
    """
    rules = tuple(rules)
    if not rules:
        raise ValueError("rule set must be non-empty")
    started = time.perf_counter()
    results: dict[str, RuleResult] = {}
    metrics: dict[str, float] = {}

    session: ShimSession | None = None
    load_ok = False
    load_detail = ""
    try:
        session = ShimSession(limits, shim_cmd)
        session.load(solution)
        load_ok = True
        load_detail = "loaded"
    except SandboxError as exc:
        load_detail = f"{type(exc).__name__}: {exc}"
        if session is not None:
            session.close()
            session = None

    def guarded_call(request: Mapping[str, Any]) -> dict[str, Any]:
        if session is None:
            raise ProtocolError("candidate not loaded")
        return session.call(request)

    try:
        static_rules = [r for r in rules if r.kind == "static"]
        for rule in static_rules:
            check = rule.params.get("check", "load")
            if check == "load":
                results[rule.rule_id] = RuleResult(rule.rule_id, load_ok, load_detail)
            elif check == "dag":
                try:
                    order = dependency_order(solution)
                    results[rule.rule_id] = RuleResult(
                        rule.rule_id, True, f"{len(order)} units in order"
                    )
                except Exception as exc:  # CycleError surfaces here
                    results[rule.rule_id] = RuleResult(rule.rule_id, False, str(exc))
            elif check == "entrypoint":
                unit = solution.units[solution.entrypoint]
                have = set(unit.signature.param_names)
                needed = set(domain.entrypoint_params)
                missing = sorted(needed - have)
                if missing:
                    results[rule.rule_id] = RuleResult(
                        rule.rule_id, False, "missing parameters: " + ", ".join(missing)
                    )
                else:
                    results[rule.rule_id] = RuleResult(rule.rule_id, True, "signature ok")
            else:
                results[rule.rule_id] = RuleResult(rule.rule_id, False, f"unknown check {check!r}")

        for rule in (r for r in rules if r.kind == "functional"):
            if not load_ok:
                results[rule.rule_id] = RuleResult(rule.rule_id, False, "skipped: load failed")
                continue
            passed = True
            detail = "all probes ok"
            for probe in domain.probes().probes:
                try:
                    response = guarded_call(probe.request)
                except SandboxError as exc:
                    passed, detail = False, f"probe {probe.probe_id}: {type(exc).__name__}: {exc}"
                    break
                ok, why = domain.check_probe(probe, response)
                if not ok:
                    passed, detail = False, f"probe {probe.probe_id}: {why}"
                    break
            results[rule.rule_id] = RuleResult(rule.rule_id, passed, detail)

        for rule in (r for r in rules if r.kind == "performance"):
            if not load_ok:
                metrics.update(domain.worst_metrics())
                results[rule.rule_id] = RuleResult(rule.rule_id, False, "skipped: load failed")
                continue
            scored, ok, detail = domain.score(guarded_call)
            metrics.update(scored)
            results[rule.rule_id] = RuleResult(rule.rule_id, ok, detail)
    finally:
        if session is not None:
            session.close()

    by_id = {r.rule_id: r for r in rules}
    blocking_ok = all(
        results[rid].passed for rid in results if by_id[rid].severity == "blocking"
    )
    fitness = scalarize_fitness(metrics, spec) if blocking_ok else math.inf
    return ValidationReport(
        per_rule=tuple(results[rule.rule_id] for rule in rules),
        metrics=metrics,
        fitness=fitness,
        wall_time=time.perf_counter() - started,
    )


def report_summary(report: ValidationReport) -> str:
    """Compact text form of a report for prompts and logs."""
    lines = []
    for result in report.per_rule:
        status = "pass" if result.passed else "FAIL"
        lines.append(f"{result.rule_id}: {status} ({result.detail})" if result.detail else f"{result.rule_id}: {status}")
    metric_text = ", ".join(f"{k}={v:.6g}" for k, v in sorted(report.metrics.items()))
    lines.append(f"metrics: {metric_text}" if metric_text else "metrics: none")
    lines.append(f"fitness: {report.fitness if math.isfinite(report.fitness) else 'inf'}")
    return "\n".join(lines)


def failure_summary(report: ValidationReport) -> str:
    failed = [r for r in report.per_rule if not r.passed]
    if not failed:
        return "no failing rules"
    return "\n".join(f"{r.rule_id}: {r.detail}" for r in failed)
