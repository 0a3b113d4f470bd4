import json

import pytest

from coevo.gateway import (
    BudgetExceeded,
    CompletionParams,
    Gateway,
    KnowledgeBase,
    MissingPlaceholder,
    MockProvider,
    MockRule,
    PromptTemplate,
    ProviderUnavailable,
    ReplayMiss,
    ReplayProvider,
    Snippet,
    TEMPLATE_IDS,
    Transcript,
    TranscriptEntry,
    load_templates,
    render,
    replay,
    request_digest,
)

PARAMS = CompletionParams(provider_id="mock", seed=1)


def template(body: str, required=None) -> PromptTemplate:
    import re

    found = frozenset(re.findall(r"\{([A-Za-z_][A-Za-z0-9_]*)\}", body))
    return PromptTemplate("t", body, frozenset(required) if required else found)


class TestRender:
    def test_substitution(self):
        assert render(template("Solve: {q}"), {"q": "TSP"}) == "Solve: TSP"

    def test_missing_placeholder_listed(self):
        with pytest.raises(MissingPlaceholder) as exc_info:
            render(template("{a}{b}"), {"a": "x"})
        assert exc_info.value.names == ["b"]

    def test_no_placeholders_identity(self):
        assert render(template("plain body"), {}) == "plain body"

    def test_binding_content_not_escaped(self):
        assert render(template("{a}"), {"a": "{weird} {{text}}"}) == "{weird} {{text}}"

    def test_required_placeholder_must_appear_in_body(self):
        with pytest.raises(ValueError):
            PromptTemplate("t", "no placeholders", frozenset({"missing"}))


class TestTemplates:
    def test_all_bundled_templates_load(self):
        templates = load_templates()
        assert set(TEMPLATE_IDS) <= set(templates)

    def test_bundled_templates_render_placeholder_free(self):
        import re

        templates = load_templates()
        for tpl in templates.values():
            bindings = {name: "X" for name in tpl.required_placeholders}
            rendered = render(tpl, bindings)
            assert not re.findall(r"\{[A-Za-z_][A-Za-z0-9_]*\}", rendered), tpl.template_id


class TestKnowledgeBase:
    def test_unique_ids_enforced(self):
        with pytest.raises(ValueError):
            KnowledgeBase(
                snippets=(
                    Snippet("s1", "a", "t", ("x",)),
                    Snippet("s1", "b", "t", ("y",)),
                )
            )

    def test_tag_selection_in_id_order(self):
        kb = KnowledgeBase(
            snippets=(
                Snippet("s2", "second", "2", ("tsp",)),
                Snippet("s1", "first", "1", ("tsp", "other")),
                Snippet("s3", "third", "3", ("unrelated",)),
            )
        )
        text = kb.select(("tsp",))
        assert text.index("first") < text.index("second")
        assert "third" not in text


class TestComplete:
    def test_scripted_digest_rule(self):
        digest = request_digest("the prompt", PARAMS)
        provider = MockProvider(rules=(MockRule(response="CODE_A", match_digest=digest),))
        gateway = Gateway(providers={"mock": provider})
        assert gateway.complete("the prompt", PARAMS) == "CODE_A"

    def test_unknown_provider(self):
        gateway = Gateway(providers={})
        with pytest.raises(ProviderUnavailable):
            gateway.complete("p", PARAMS)

    def test_third_call_exceeds_budget_of_two(self):
        provider = MockProvider(fallback=lambda prompt, seed: "ok")
        gateway = Gateway(providers={"mock": provider}, max_calls=2)
        gateway.complete("a", PARAMS)
        gateway.complete("b", PARAMS)
        with pytest.raises(BudgetExceeded):
            gateway.complete("c", PARAMS)

    def test_mock_is_pure_function_of_prompt_and_seed(self):
        provider = MockProvider(
            fallback=lambda prompt, seed: f"{hash((prompt, seed)) % 97}"
        )
        g1 = Gateway(providers={"mock": provider})
        g2 = Gateway(providers={"mock": provider})
        assert g1.complete("p", PARAMS) == g2.complete("p", PARAMS)

    def test_transcript_prompt_text_is_verbatim(self):
        provider = MockProvider(fallback=lambda prompt, seed: "r")
        gateway = Gateway(providers={"mock": provider})
        prompt = render(template("Solve: {q}"), {"q": "TSP"})
        gateway.complete(prompt, PARAMS)
        assert gateway.transcript.entries[0].prompt_text == prompt


class TestReplay:
    def entry(self, prompt: str, response: str) -> TranscriptEntry:
        return TranscriptEntry(
            request_digest=request_digest(prompt, PARAMS),
            prompt_text=prompt,
            response_text=response,
            provider_id="mock",
            latency=0.01,
        )

    def test_single_entry(self):
        transcript = Transcript([self.entry("p1", "r1")])
        assert replay(transcript, "p1", PARAMS).response_text == "r1"

    def test_repeated_digest_consumed_in_order(self):
        transcript = Transcript([self.entry("p", "r1"), self.entry("p", "r2")])
        assert replay(transcript, "p", PARAMS).response_text == "r1"
        assert replay(transcript, "p", PARAMS).response_text == "r2"

    def test_miss_when_absent(self):
        transcript = Transcript([self.entry("p1", "r1")])
        with pytest.raises(ReplayMiss):
            replay(transcript, "p2", PARAMS)

    def test_miss_when_exhausted(self):
        transcript = Transcript([self.entry("p", "r1")])
        replay(transcript, "p", PARAMS)
        with pytest.raises(ReplayMiss):
            replay(transcript, "p", PARAMS)

    def test_jsonl_round_trip(self, tmp_path):
        transcript = Transcript([self.entry("p1", "r1"), self.entry("p2", "r2")])
        path = tmp_path / "t.jsonl"
        transcript.save_jsonl(path)
        again = Transcript.load_jsonl(path)
        assert again.entries == transcript.entries

    def test_record_then_replay_same_responses(self):
        provider = MockProvider(fallback=lambda prompt, seed: f"resp:{prompt}")
        recorder = Gateway(providers={"mock": provider})
        prompts = ["a", "b", "a"]
        recorded = [recorder.complete(p, PARAMS) for p in prompts]

        replayer = Gateway(
            providers={"mock": ReplayProvider(Transcript(list(recorder.transcript.entries)))}
        )
        replayed = [replayer.complete(p, PARAMS) for p in prompts]
        assert replayed == recorded
        assert replayer.transcript.entries == recorder.transcript.entries


class TestTranscriptEntryDigest:
    def test_digest_depends_on_params(self):
        one = request_digest("p", CompletionParams(provider_id="mock", seed=1))
        two = request_digest("p", CompletionParams(provider_id="mock", seed=2))
        assert one != two

    def test_entry_json_round_trip(self):
        entry = TranscriptEntry("d", "p", "r", "mock", 0.25)
        assert TranscriptEntry.from_json(json.loads(json.dumps(entry.to_json()))) == entry
