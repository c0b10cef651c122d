import json

import pytest

from eor.domain import Document, Query
from eor.reader import (
    CacheCorruptionError,
    PromptError,
    ReaderGateway,
    ReaderRequest,
    ReplayCache,
    ReplayMissError,
    TransportError,
    cache_key,
    forbid_network,
    generate,
    render_prompt,
    request_key,
    template_body,
)
from eor.stubs import CountingTransport, ToyReaderTransport

QUERY = Query("q1", "Who wrote Hamlet?")
DOC = Document.from_text("Hamlet was written by William Shakespeare.")


class TestTemplates:
    def test_all_kind_family_pairs_match_goldens(self, golden_template_dir):
        golden_files = sorted(golden_template_dir.glob("*.txt"))
        assert len(golden_files) == 8
        for path in golden_files:
            kind, family = path.stem.split("__")
            assert template_body(kind, family).encode("utf-8") == path.read_bytes()

    def test_refree_rendering(self):
        assert (
            render_prompt("refree", "chat-instruct-15-words", QUERY)
            == "Please directly answer the following question within 15 words:\nWho wrote Hamlet?"
        )

    def test_rag_prefix(self):
        prompt = render_prompt("rag", "chat-instruct-15-words", QUERY, DOC)
        assert prompt.startswith("Assuming the following paragraphs are true:")
        assert DOC.text in prompt
        assert prompt.endswith("Who wrote Hamlet?")

    def test_parametric_rendering(self):
        expected = "Generate a background document to answer the given question.\nWho wrote Hamlet?."
        assert render_prompt("parametric", "chat-instruct-15-words", QUERY) == expected

    def test_no_unreplaced_placeholders(self):
        for kind in ("refree", "rag", "parametric", "compress"):
            for family in ("chat-instruct-15-words", "chat-instruct-few-words"):
                doc = DOC if kind in ("rag", "compress") else None
                prompt = render_prompt(kind, family, QUERY, doc)
                assert "{query}" not in prompt and "{document}" not in prompt

    def test_rag_requires_document(self):
        with pytest.raises(PromptError):
            render_prompt("rag", "chat-instruct-15-words", QUERY)
        with pytest.raises(PromptError):
            render_prompt("compress", "chat-instruct-15-words", QUERY, Document(()))


class TestCacheKey:
    def test_pure_function_of_request(self):
        a = cache_key("m", "p", True, 64)
        b = cache_key("m", "p", True, 64)
        assert a == b and len(a) == 64

    def test_sensitive_to_every_component(self):
        base = cache_key("m", "p", True, 64)
        assert cache_key("m2", "p", True, 64) != base
        assert cache_key("m", "p2", True, 64) != base
        assert cache_key("m", "p", True, 65) != base


class TestReaderRequest:
    def test_rejects_non_greedy(self):
        with pytest.raises(ValueError, match="greedy"):
            ReaderRequest("m", "p", greedy=False)


class TestReplayCache:
    def test_lookup_after_store(self, tmp_path):
        cache = ReplayCache(tmp_path / "c.jsonl")
        cache.store("k1", "value", model_id="m")
        assert cache.lookup("k1") == "value"
        reloaded = ReplayCache(tmp_path / "c.jsonl")
        assert reloaded.lookup("k1") == "value"

    def test_duplicate_identical_store_is_noop(self, tmp_path):
        path = tmp_path / "c.jsonl"
        cache = ReplayCache(path)
        cache.store("k", "v")
        cache.store("k", "v")
        assert len(path.read_text().splitlines()) == 1

    def test_conflicting_store_is_corruption(self):
        cache = ReplayCache()
        cache.store("k", "v")
        with pytest.raises(CacheCorruptionError):
            cache.store("k", "different")

    def test_conflicting_file_entries_detected_on_load(self, tmp_path):
        path = tmp_path / "c.jsonl"
        lines = [
            json.dumps({"key": "k", "model_id": "m", "response": "a"}),
            json.dumps({"key": "k", "model_id": "m", "response": "b"}),
        ]
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(CacheCorruptionError):
            ReplayCache(path)


class TestGenerate:
    def test_replay_hit_makes_no_network_calls(self):
        cache = ReplayCache()
        request = ReaderRequest("m", "prompt")
        cache.store(request_key(request), "stored")
        counter = CountingTransport(ToyReaderTransport())
        assert generate(request, cache, "replay", counter) == "stored"
        assert counter.calls == 0

    def test_replay_miss_names_the_key(self):
        cache = ReplayCache()
        request = ReaderRequest("m", "prompt")
        with pytest.raises(ReplayMissError) as err:
            generate(request, cache, "replay")
        assert err.value.key == request_key(request)

    def test_record_mode_calls_once_per_unique_request(self):
        cache = ReplayCache()
        counter = CountingTransport(ToyReaderTransport())
        request = ReaderRequest("m", "Please directly answer the following question within 15 words:\nx?")
        first = generate(request, cache, "record", counter)
        second = generate(request, cache, "record", counter)
        assert first == second
        assert counter.calls == 1

    def test_live_mode_bypasses_cache(self):
        cache = ReplayCache()
        counter = CountingTransport(ToyReaderTransport())
        request = ReaderRequest("m", "Please directly answer the following question within 15 words:\nx?")
        generate(request, cache, "live", counter)
        generate(request, cache, "live", counter)
        assert counter.calls == 2
        assert len(cache) == 0

    def test_forbid_network_raises(self):
        with pytest.raises(TransportError, match="disabled"):
            forbid_network({})


class TestReaderGateway:
    def test_full_replay_session_is_offline(self):
        record_cache = ReplayCache()
        transport = CountingTransport(ToyReaderTransport())
        recorder = ReaderGateway("toy", record_cache, mode="record", transport=transport)
        query = Query("q9", "what is the capital of country9?")
        doc = Document.from_text("country9 report capital9")
        answers = [recorder.answer(query), recorder.answer(query, doc),
                   recorder.background_document(query), recorder.summarize(query, doc)]
        recorded_calls = transport.calls

        replayer = ReaderGateway("toy", record_cache, mode="replay", transport=CountingTransport(ToyReaderTransport()))
        replayed = [replayer.answer(query), replayer.answer(query, doc),
                    replayer.background_document(query), replayer.summarize(query, doc)]
        assert replayed == answers
        assert replayer.transport.calls == 0
        assert recorded_calls == 4

    def test_empty_document_falls_back_to_closed_book_prompt(self):
        cache = ReplayCache()
        gateway = ReaderGateway("toy", cache, mode="record", transport=ToyReaderTransport())
        query = Query("q3", "what is the capital of country3?")
        assert gateway.answer(query, Document(())) == gateway.answer(query)
