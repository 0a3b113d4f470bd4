"""Provider-agnostic language-model gateway.

Prompt templates are data files with single-brace placeholders. Every
completion is appended to the run's transcript (JSON Lines), and a transcript
can drive a later run in replay mode so engine decisions reproduce exactly.
"""

from __future__ import annotations

import json
import os
import re
import threading
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping

from .model import canonical_json, sha256_hex

TEMPLATE_IDS = (
    "p_s",
    "p_w",
    "p_f",
    "reflect_short",
    "reflect_long",
    "crossover",
    "mutate",
    "recombine",
    "repair",
)

PLACEHOLDER_RE = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")

ENV_LLM_URL = "CAE_LLM_URL"
ENV_LLM_KEY = "CAE_LLM_KEY"


class MissingPlaceholder(Exception):
    def __init__(self, names: Iterable[str]):
        self.names = sorted(names)
        super().__init__("missing placeholders: " + ", ".join(self.names))


class ProviderUnavailable(Exception):
    pass


class BudgetExceeded(Exception):
    pass


class ReplayMiss(Exception):
    pass


@dataclass(frozen=True)
class PromptTemplate:
    template_id: str
    body: str
    required_placeholders: frozenset[str]

    def __post_init__(self):
        object.__setattr__(self, "required_placeholders", frozenset(self.required_placeholders))
        present = set(PLACEHOLDER_RE.findall(self.body))
        absent = self.required_placeholders - present
        if absent:
            raise ValueError(
                f"template {self.template_id!r} body lacks required placeholders: "
                + ", ".join(sorted(absent))
            )


def render(template: PromptTemplate, bindings: Mapping[str, str]) -> str:
    """Substitute placeholders verbatim; binding content is never escaped."""
    present = set(PLACEHOLDER_RE.findall(template.body))
    missing = (template.required_placeholders | present) - set(bindings)
    if missing:
        raise MissingPlaceholder(missing)
    return PLACEHOLDER_RE.sub(lambda m: str(bindings[m.group(1)]), template.body)


def load_templates(directory: Path | None = None) -> dict[str, PromptTemplate]:
    """Load one template per file from the bundled directory (or an override)."""
    templates: dict[str, PromptTemplate] = {}
    if directory is None:
        root = resources.files("coevo").joinpath("templates")
        entries = [(p.name, p.read_text(encoding="utf-8")) for p in root.iterdir()]
    else:
        entries = [(p.name, p.read_text(encoding="utf-8")) for p in sorted(directory.iterdir())]
    for name, body in sorted(entries):
        if not name.endswith(".txt"):
            continue
        template_id = name[: -len(".txt")]
        required = frozenset(PLACEHOLDER_RE.findall(body))
        templates[template_id] = PromptTemplate(template_id, body, required)
    missing = set(TEMPLATE_IDS) - set(templates)
    if missing:
        raise FileNotFoundError("missing template files: " + ", ".join(sorted(missing)))
    return templates


@dataclass(frozen=True)
class Snippet:
    snippet_id: str
    title: str
    text: str
    tags: tuple[str, ...]


@dataclass(frozen=True)
class KnowledgeBase:
    snippets: tuple[Snippet, ...]

    def __post_init__(self):
        object.__setattr__(self, "snippets", tuple(self.snippets))
        ids = [s.snippet_id for s in self.snippets]
        if len(set(ids)) != len(ids):
            raise ValueError("snippet_ids must be unique")

    def select(self, tags: Iterable[str]) -> str:
        """All snippets matching any tag, concatenated in snippet_id order."""
        wanted = set(tags)
        chosen = [s for s in self.snippets if wanted & set(s.tags)]
        chosen.sort(key=lambda s: s.snippet_id)
        return "\n\n".join(f"[{s.title}]\n{s.text}" for s in chosen)


@dataclass(frozen=True)
class CompletionParams:
    provider_id: str
    temperature: float = 0.0
    max_tokens: int = 4096
    seed: int = 0


def request_digest(prompt: str, params: CompletionParams) -> str:
    return sha256_hex(
        canonical_json(
            {
                "prompt": prompt,
                "provider_id": params.provider_id,
                "temperature": params.temperature,
                "max_tokens": params.max_tokens,
                "seed": params.seed,
            }
        )
    )


@dataclass(frozen=True)
class TranscriptEntry:
    request_digest: str
    prompt_text: str
    response_text: str
    provider_id: str
    latency: float

    def to_json(self) -> dict[str, Any]:
        return {
            "request_digest": self.request_digest,
            "prompt_text": self.prompt_text,
            "response_text": self.response_text,
            "provider_id": self.provider_id,
            "latency": self.latency,
        }

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> "TranscriptEntry":
        return cls(
            data["request_digest"],
            data["prompt_text"],
            data["response_text"],
            data["provider_id"],
            float(data["latency"]),
        )


class Transcript:
    """Append-only record of gateway traffic, one JSON object per line on disk."""

    def __init__(self, entries: Iterable[TranscriptEntry] = ()):
        self._entries: list[TranscriptEntry] = list(entries)

    @property
    def entries(self) -> tuple[TranscriptEntry, ...]:
        return tuple(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def append(self, entry: TranscriptEntry) -> None:
        self._entries.append(entry)

    def save_jsonl(self, path: Path) -> None:
        with open(path, "w", encoding="utf-8") as handle:
            for entry in self._entries:
                handle.write(canonical_json(entry.to_json()) + "\n")

    @classmethod
    def load_jsonl(cls, path: Path) -> "Transcript":
        entries = []
        with open(path, "r", encoding="utf-8") as handle:
            for line in handle:
                line = line.strip()
                if line:
                    entries.append(TranscriptEntry.from_json(json.loads(line)))
        return cls(entries)


def replay(transcript: Transcript, prompt: str, params: CompletionParams) -> TranscriptEntry:
    """Return the next unconsumed entry whose request digest matches the prompt.

    Entries with the same digest are consumed in recorded order. The cursor
    state lives on the transcript object; replay mode is single-threaded.
    """
    digest = request_digest(prompt, params)
    cursors: dict[str, int] = getattr(transcript, "_replay_cursors", None) or {}
    if not hasattr(transcript, "_replay_cursors"):
        transcript._replay_cursors = cursors  # type: ignore[attr-defined]
    start = cursors.get(digest, 0)
    for index in range(start, len(transcript.entries)):
        entry = transcript.entries[index]
        if entry.request_digest == digest:
            cursors[digest] = index + 1
            return entry
    raise ReplayMiss(f"no unconsumed transcript entry for digest {digest[:12]}...")


@dataclass(frozen=True)
class MockRule:
    """Scripted mock behavior: exact request-digest match or prompt substring."""

    response: str
    match_digest: str = ""
    match_substring: str = ""

    def matches(self, prompt: str, digest: str) -> bool:
        if self.match_digest:
            return digest == self.match_digest
        if self.match_substring:
            return self.match_substring in prompt
        return False


class MockProvider:
    """Deterministic scripted provider: rules first, then a pure fallback.

    With a fixed seed the output is a pure function of (prompt, seed).
    """

    def __init__(
        self,
        rules: Iterable[MockRule] = (),
        fallback: Callable[[str, int], str] | None = None,
    ):
        self.rules = tuple(rules)
        self.fallback = fallback

    def complete(self, prompt: str, params: CompletionParams) -> str:
        digest = request_digest(prompt, params)
        for rule in self.rules:
            if rule.matches(prompt, digest):
                return rule.response
        if self.fallback is not None:
            return self.fallback(prompt, params.seed)
        raise ProviderUnavailable("mock has no rule for this prompt and no fallback")


class HttpProvider:
    """Chat-completion endpoint client; base URL and key come from environment."""

    def __init__(self, base_url: str | None = None, api_key: str | None = None,
                 model: str = "", timeout: float = 120.0):
        self.base_url = base_url or os.environ.get(ENV_LLM_URL, "")
        self.api_key = api_key or os.environ.get(ENV_LLM_KEY, "")
        self.model = model
        self.timeout = timeout
        if not self.base_url:
            raise ProviderUnavailable(f"no endpoint configured ({ENV_LLM_URL} unset)")

    def complete(self, prompt: str, params: CompletionParams) -> str:
        import requests

        payload: dict[str, Any] = {
            "messages": [{"role": "user", "content": prompt}],
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
            "seed": params.seed,
        }
        if self.model:
            payload["model"] = self.model
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            response = requests.post(
                self.base_url, json=payload, headers=headers, timeout=self.timeout
            )
        except requests.Timeout as exc:
            raise TimeoutError(str(exc)) from exc
        except requests.RequestException as exc:
            raise ProviderUnavailable(str(exc)) from exc
        if response.status_code != 200:
            raise ProviderUnavailable(f"provider returned HTTP {response.status_code}")
        return response.json()["choices"][0]["message"]["content"]


class ReplayProvider:
    """Serves responses from a recorded transcript instead of a live model."""

    def __init__(self, transcript: Transcript):
        self.transcript = transcript

    def take(self, prompt: str, params: CompletionParams) -> TranscriptEntry:
        return replay(self.transcript, prompt, params)

    def complete(self, prompt: str, params: CompletionParams) -> str:
        return self.take(prompt, params).response_text


def estimate_tokens(text: str) -> int:
    # Rough 4-chars-per-token budget heuristic; exact accounting is provider-side.
    return max(1, len(text) // 4)


class Gateway:
    """Routes completions to a registered provider and records every call."""

    def __init__(
        self,
        providers: Mapping[str, Any],
        transcript: Transcript | None = None,
        max_calls: int | None = None,
        max_tokens: int | None = None,
    ):
        self.providers = dict(providers)
        self.transcript = transcript if transcript is not None else Transcript()
        self.max_calls = max_calls
        self.max_tokens = max_tokens
        self.calls_made = 0
        self.tokens_used = 0
        self._lock = threading.Lock()

    def complete(self, prompt: str, params: CompletionParams) -> str:
        provider = self.providers.get(params.provider_id)
        if provider is None:
            raise ProviderUnavailable(f"unknown provider: {params.provider_id!r}")
        with self._lock:
            if self.max_calls is not None and self.calls_made >= self.max_calls:
                raise BudgetExceeded(f"call budget of {self.max_calls} exhausted")
            if self.max_tokens is not None and self.tokens_used >= self.max_tokens:
                raise BudgetExceeded(f"token budget of {self.max_tokens} exhausted")
            self.calls_made += 1

        if isinstance(provider, ReplayProvider):
            entry = provider.take(prompt, params)
            if entry.prompt_text != prompt:
                raise ReplayMiss("digest matched but prompt text differs")
        else:
            started = time.perf_counter()
            response = provider.complete(prompt, params)
            entry = TranscriptEntry(
                request_digest=request_digest(prompt, params),
                prompt_text=prompt,
                response_text=response,
                provider_id=params.provider_id,
                latency=time.perf_counter() - started,
            )
        with self._lock:
            self.tokens_used += estimate_tokens(prompt) + estimate_tokens(entry.response_text)
            self.transcript.append(entry)
        return entry.response_text
