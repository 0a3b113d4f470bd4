"""Evaluation domains: each binds a problem family to the candidate contract."""

from __future__ import annotations

from .base import Domain, RunSummary, UnknownDomain, get_domain, register_domain

__all__ = ["Domain", "RunSummary", "UnknownDomain", "get_domain", "register_domain"]


def register_builtin_domains() -> None:
    from .quadratic import QuadraticDomain
    from .tsp import TspDomain

    for domain in (QuadraticDomain(), TspDomain()):
        register_domain(domain, replace=True)
