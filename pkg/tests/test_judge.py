import json
import math
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from corpusmetrics.judge import (
    AVAILABLE_PROMPTS,
    JudgeConfig,
    ScriptedTransport,
    TransportError,
    UnknownPromptError,
    UnparseableScoreError,
    judge_corpus,
    judge_text,
    load_prompt,
    parse_score,
    render_prompt,
    write_scores_csv,
)

CFG = JudgeConfig(backoff_base=0.0, max_retries=2)


class TestRenderPrompt:
    def test_readability_plain_has_paper_phrases(self):
        _, user = render_prompt("readability", "plain", "Hi.")
        assert "how readable is this text" in user
        assert user.endswith("Please answer with a single number.")
        assert "<Text>Hi.</Text>" in user

    def test_coherence_plain_has_paper_phrases(self):
        system, user = render_prompt("coherence", "plain", "Hi.")
        assert "skilled at identifying the coherence" in system
        assert "how coherent is this text" in user
        assert "build from sentence to sentence" in user

    def test_coherence_examples_contains_positive_example(self):
        _, user = render_prompt("coherence", "examples", "t")
        assert "The process of photosynthesis is essential" in user
        assert "Photosynthesis is a process. Leaves are green." in user

    def test_cot_variants_ask_for_analysis_first(self):
        for dimension in ("readability", "coherence"):
            _, user = render_prompt(dimension, "cot", "t")
            assert "After your analysis" in user

    def test_substitution_is_byte_exact(self):
        text = "Some text\nwith a newline."
        prompt = load_prompt("grammar", "plain")
        _, user = render_prompt("grammar", "plain", text)
        expected = prompt.user_template.replace("<Text></Text>", f"<Text>{text}</Text>")
        assert user == expected
        assert user.replace(f"<Text>{text}</Text>", "<Text></Text>") == prompt.user_template

    def test_injective_in_text(self):
        a = render_prompt("clarity", "plain", "first")
        b = render_prompt("clarity", "plain", "second")
        assert a != b

    def test_render_is_stable_across_calls(self):
        assert render_prompt("fluency", "plain", "x") == render_prompt("fluency", "plain", "x")

    def test_empty_text_is_error(self):
        with pytest.raises(ValueError):
            render_prompt("coherence", "plain", "")

    def test_unknown_combination_is_error(self):
        with pytest.raises(UnknownPromptError):
            render_prompt("consistency", "examples", "t")
        with pytest.raises(UnknownPromptError):
            render_prompt("grammar", "cot", "t")
        with pytest.raises(UnknownPromptError):
            render_prompt("sentiment", "plain", "t")

    def test_every_shipped_template_loads_with_one_slot(self):
        for dimension, variant in AVAILABLE_PROMPTS:
            prompt = load_prompt(dimension, variant)
            assert prompt.user_template.count("<Text></Text>") == 1
            assert prompt.system_text

    def test_plain_variants_end_with_single_number_instruction(self):
        for dimension, variant in AVAILABLE_PROMPTS:
            if variant == "plain":
                prompt = load_prompt(dimension, variant)
                assert prompt.user_template.endswith("Please answer with a single number.")


class TestParseScore:
    @pytest.mark.parametrize(
        "reply,expected",
        [
            ("87", 87),
            ("The text flows well. Score: 92.", 92),
            ("1", 1),
            ("100", 100),
            ("I rate it 55 out of 100", 100),
            ("Scale is 1-100. The text is disjointed... 12", 12),
            ("Analysis: three sentences, 0 transitions.\n\nScore: 41", 41),
        ],
    )
    def test_fixtures(self, reply, expected):
        assert parse_score(reply) == expected

    @pytest.mark.parametrize("reply", ["It is incoherent.", "", "0", "101", "950", "92.5"])
    def test_unparseable(self, reply):
        with pytest.raises(UnparseableScoreError):
            parse_score(reply)

    def test_error_carries_raw_response(self):
        with pytest.raises(UnparseableScoreError) as err:
            parse_score("nope")
        assert err.value.raw_response == "nope"

    def test_every_bare_integer_round_trips(self):
        for k in range(1, 101):
            assert parse_score(str(k)) == k


class TestJudgeText:
    def test_scripted_score(self):
        score = judge_text("text", "coherence", "plain", CFG, ScriptedTransport(["75"]))
        assert score.value == 75
        assert score.raw_response == "75"
        assert score.dimension == "coherence"
        assert score.model_id == CFG.model_name

    def test_retry_on_garbage_then_success(self):
        transport = ScriptedTransport(["total nonsense", "60"])
        score = judge_text("text", "coherence", "plain", CFG, transport)
        assert score.value == 60
        assert transport.calls == 2

    def test_retry_on_transport_error_then_success(self):
        transport = ScriptedTransport(["HTTP 500", "42"])
        assert judge_text("t", "clarity", "plain", CFG, transport).value == 42

    def test_persistent_failure_raises_after_retries(self):
        transport = ScriptedTransport(["HTTP 500"])
        with pytest.raises(TransportError):
            judge_text("t", "clarity", "plain", CFG, transport)
        assert transport.calls == CFG.max_retries + 1

    def test_persistent_garbage_raises_unparseable(self):
        with pytest.raises(UnparseableScoreError):
            judge_text("t", "clarity", "plain", CFG, ScriptedTransport(["???"]))


class TestJudgeCorpus:
    def test_constant_mock_mean(self):
        texts = {f"d{i}": f"text {i}" for i in range(10)}
        result = judge_corpus(texts, "coherence", "plain", CFG, transport=ScriptedTransport(["90"]))
        assert result.mean == pytest.approx(90.0)
        assert len(result.scores) == 10

    def test_alternating_mock_mean(self):
        texts = {f"d{i}": f"text {i}" for i in range(10)}
        cfg = JudgeConfig(backoff_base=0.0, max_in_flight=1)  # keep reply order aligned
        result = judge_corpus(texts, "coherence", "plain", cfg, transport=ScriptedTransport(["80", "100"]))
        assert result.mean == pytest.approx(90.0)

    def test_mean_equals_arithmetic_mean(self):
        texts = {f"d{i}": "t" for i in range(7)}
        cfg = JudgeConfig(backoff_base=0.0, max_in_flight=1)
        replies = ["13", "99", "57", "42", "88", "61", "70"]
        result = judge_corpus(texts, "grammar", "plain", cfg, transport=ScriptedTransport(replies))
        expected = math.fsum(int(r) for r in replies) / len(replies)
        assert result.mean == pytest.approx(expected, abs=1e-12)

    def test_seeded_sample_is_stable(self):
        texts = {f"d{i}": "t" for i in range(20)}
        picks = [
            tuple(
                judge_corpus(
                    texts, "clarity", "plain", CFG,
                    sample_size=3, seed=11, transport=ScriptedTransport(["50"]),
                ).scores
            )
            for _ in range(3)
        ]
        assert len(picks[0]) == 3
        assert picks[0] == picks[1] == picks[2]

    def test_failures_excluded_from_mean(self):
        texts = {"a": "t", "b": "t", "c": "t"}
        cfg = JudgeConfig(backoff_base=0.0, max_retries=0, max_in_flight=1)
        result = judge_corpus(
            texts, "clarity", "plain", cfg, transport=ScriptedTransport(["80", "junk", "100"])
        )
        assert set(result.failures) == {"b"}
        assert result.mean == pytest.approx(90.0)

    def test_all_failed_is_error(self):
        cfg = JudgeConfig(backoff_base=0.0, max_retries=0)
        with pytest.raises(RuntimeError):
            judge_corpus({"a": "t"}, "clarity", "plain", cfg, transport=ScriptedTransport(["no"]))

    def test_empty_corpus_is_error(self):
        with pytest.raises(ValueError):
            judge_corpus({}, "clarity", "plain", CFG, transport=ScriptedTransport(["1"]))

    def test_in_flight_never_exceeds_cap(self):
        texts = {f"d{i}": "t" for i in range(24)}
        transport = ScriptedTransport(["64"])
        transport.delay = 0.01
        cfg = JudgeConfig(backoff_base=0.0, max_in_flight=3)
        judge_corpus(texts, "coherence", "plain", cfg, transport=transport)
        assert transport.max_in_flight_seen <= 3

    def test_serial_cap_of_one(self):
        texts = {f"d{i}": "t" for i in range(8)}
        transport = ScriptedTransport(["64"])
        transport.delay = 0.005
        cfg = JudgeConfig(backoff_base=0.0, max_in_flight=1)
        judge_corpus(texts, "coherence", "plain", cfg, transport=transport)
        assert transport.max_in_flight_seen == 1

    def test_scores_csv(self, tmp_path):
        texts = {"doc1": "t", "doc2": "t"}
        result = judge_corpus(texts, "fluency", "plain", CFG, transport=ScriptedTransport(["33"]))
        out = tmp_path / "scores.csv"
        write_scores_csv(result, out)
        lines = out.read_text().splitlines()
        assert lines[0] == "doc_id,dimension,variant,score,model_id"
        assert lines[1] == "doc1,fluency,plain,33,judge-model"


class _ChatHandler(BaseHTTPRequestHandler):
    seen: list = []

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        type(self).seen.append({"path": self.path, "body": body, "auth": self.headers.get("Authorization")})
        reply = json.dumps({"choices": [{"message": {"content": "77"}}]}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(reply)))
        self.end_headers()
        self.wfile.write(reply)

    def log_message(self, *args):
        pass


@pytest.fixture
def chat_server():
    _ChatHandler.seen = []
    server = ThreadingHTTPServer(("127.0.0.1", 0), _ChatHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}/v1/chat/completions"
    server.shutdown()


class TestHttpTransport:
    def test_wire_format_and_bearer_token(self, chat_server, monkeypatch):
        monkeypatch.setenv("CORPUSMETRICS_API_KEY", "sk-test-123")
        cfg = JudgeConfig(endpoint_url=chat_server, model_name="my-judge", temperature=0.0)
        score = judge_text("Judge me.", "readability", "plain", cfg)
        assert score.value == 77
        request = _ChatHandler.seen[0]
        assert request["path"] == "/v1/chat/completions"
        assert request["auth"] == "Bearer sk-test-123"
        body = request["body"]
        assert body["model"] == "my-judge"
        assert body["temperature"] == 0.0
        assert [m["role"] for m in body["messages"]] == ["system", "user"]
        assert "<Text>Judge me.</Text>" in body["messages"][1]["content"]

    def test_unreachable_endpoint_is_transport_error(self):
        cfg = JudgeConfig(
            endpoint_url="http://127.0.0.1:1/v1/chat/completions",
            backoff_base=0.0,
            max_retries=0,
            timeout=0.5,
        )
        with pytest.raises(TransportError):
            judge_text("t", "clarity", "plain", cfg)


class TestScriptedTransportFile:
    def test_from_file_plain_and_json_lines(self, tmp_path):
        path = tmp_path / "replies.txt"
        path.write_text('90\n"Line one.\\nScore: 85"\n')
        transport = ScriptedTransport.from_file(path)
        assert transport.complete("s", "u") == "90"
        assert transport.complete("s", "u") == "Line one.\nScore: 85"
        assert transport.complete("s", "u") == "90"  # cycles
