"""Domain contract consumed by the sandbox validator and the engine."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Mapping, Protocol, runtime_checkable

from ..model import Individual
from ..sandbox import Probe, ProbeSet

CallFn = Callable[[Mapping[str, Any]], dict[str, Any]]


class UnknownDomain(Exception):
    pass


@dataclass
class RunSummary:
    """What a finished run hands to the domain for report rows."""

    initial_best: Individual
    final_best: Individual
    rng_seed: int
    call_factory: Callable[[Individual], Any] | None = None


@runtime_checkable
class Domain(Protocol):
    domain_id: str
    task: str
    entrypoint_params: tuple[str, ...]
    knowledge_tags: tuple[str, ...]

    def probes(self) -> ProbeSet: ...

    def check_probe(self, probe: Probe, response: Mapping[str, Any]) -> tuple[bool, str]: ...

    def score(self, call: CallFn) -> tuple[dict[str, float], bool, str]: ...

    def worst_metrics(self) -> dict[str, float]: ...

    def report_rows(self, summary: RunSummary) -> list: ...


_REGISTRY: dict[str, Domain] = {}


def register_domain(domain: Domain, replace: bool = False) -> None:
    if domain.domain_id in _REGISTRY and not replace:
        raise ValueError(f"domain {domain.domain_id!r} already registered")
    _REGISTRY[domain.domain_id] = domain


def get_domain(domain_id: str) -> Domain:
    try:
        return _REGISTRY[domain_id]
    except KeyError:
        raise UnknownDomain(f"no domain registered for {domain_id!r}") from None
