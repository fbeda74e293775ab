import json
import random
import threading
import time
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from dualdrive.core import (
    DrivingStyle,
    Instruction,
    Intention,
    MetaAction,
    ScenarioDescription,
)
from dualdrive.reasoner import (
    BackendConfig,
    BackendError,
    Prompt,
    ReasonerOutput,
    ResponseParseError,
    build_prompt,
    heuristic_infer,
    infer_remote,
    parse_response,
    reason,
    serialize_output,
)


def scenario(hv_speed=3.0, c=8.0, av_speed=3.0):
    return ScenarioDescription((-20.0, 0.0, av_speed, 0.0, 0.0, -20.0, 0.0, hv_speed, c))


NO_INSTRUCTION = Instruction()


class TestBuildPrompt:
    def test_byte_identical_for_same_inputs(self):
        s = scenario()
        a = build_prompt(s, NO_INSTRUCTION, "I will be Slower", version=4)
        b = build_prompt(s, NO_INSTRUCTION, "I will be Slower", version=4)
        assert a.text == b.text
        assert a.built_from_version == 4

    def test_all_nine_values_present_two_decimals(self):
        s = ScenarioDescription((1.234, -2.5, 3.0, 0.0, 4.5678, 5.0, 0.25, 1.0, 6.75))
        text = build_prompt(s, NO_INSTRUCTION).text
        for v in s.values:
            assert f"{v:.2f}" in text

    def test_instruction_verbatim(self):
        text = build_prompt(scenario(), Instruction(text="I will be slower")).text
        assert "I will be slower" in text

    def test_empty_instruction_shows_none(self):
        text = build_prompt(scenario(), NO_INSTRUCTION).text
        assert "Instruction from the human driver: none" in text

    def test_staged_question_order(self):
        text = build_prompt(scenario(), NO_INSTRUCTION).text.lower()
        i_intent = text.index("yield or to rush")
        i_style = text.index("driving style")
        i_action = text.index("accelerate, decelerate, or maintain")
        i_ehmi = text.index("ehmi text")
        assert i_intent < i_style < i_action < i_ehmi


class TestHeuristicInfer:
    def test_stopped_opponent(self):
        out = heuristic_infer(scenario(hv_speed=0.0, c=4.0), NO_INSTRUCTION)
        assert out.intention is Intention.YIELD
        assert out.style is DrivingStyle.CONSERVATIVE
        assert out.action is MetaAction.ACCELERATE
        assert out.ehmi == "I will be Faster"

    def test_fast_opponent_close_conflict(self):
        out = heuristic_infer(scenario(hv_speed=4.5, c=2.0), NO_INSTRUCTION)
        assert out.intention is Intention.RUSH
        assert out.style is DrivingStyle.AGGRESSIVE
        assert out.action is MetaAction.DECELERATE
        assert out.ehmi == "I will be Slower"

    def test_default_branch(self):
        out = heuristic_infer(scenario(hv_speed=3.0, c=8.0), NO_INSTRUCTION)
        assert out.intention is Intention.RUSH
        assert out.style is DrivingStyle.GENERAL
        assert out.action is MetaAction.MAINTAIN
        assert out.ehmi == "Maintaining"

    def test_slower_instruction_forces_yield(self):
        out = heuristic_infer(scenario(hv_speed=3.0, c=8.0),
                              Instruction(text="I will be SLOWER"))
        assert out.intention is Intention.YIELD
        assert out.action is MetaAction.ACCELERATE

    def test_pure_function(self):
        s = scenario(hv_speed=1.0, c=2.5)
        assert heuristic_infer(s, NO_INSTRUCTION) == heuristic_infer(s, NO_INSTRUCTION)


VALID_OBJ = ('{"intention":"yield","style":"conservative",'
             '"action":"ACCELERATE","ehmi":"I will be Faster"}')


class TestParseResponse:
    def test_bare_object(self):
        out = parse_response(VALID_OBJ)
        assert out.intention is Intention.YIELD
        assert out.style is DrivingStyle.CONSERVATIVE
        assert out.action is MetaAction.ACCELERATE
        assert out.ehmi == "I will be Faster"

    def test_prose_wrapped_object(self):
        out = parse_response(f"Sure! Here is my answer: {VALID_OBJ} Hope that helps.")
        assert out.action is MetaAction.ACCELERATE

    def test_fuzz_prose_wrapping(self):
        rng = random.Random(99)
        words = ["the", "vehicle", "will", "{", "}", "yield", "ok", "now", '"', "[1,2]"]
        for _ in range(200):
            prefix = " ".join(rng.choices(words, k=rng.randrange(0, 12)))
            suffix = " ".join(rng.choices(words, k=rng.randrange(0, 12)))
            out = parse_response(f"{prefix} {VALID_OBJ} {suffix}")
            assert out.action is MetaAction.ACCELERATE

    def test_bad_vocabulary_rejected(self):
        with pytest.raises(ResponseParseError):
            parse_response('{"intention":"maybe","style":"general","action":"MAINTAIN","ehmi":""}')

    def test_missing_field_rejected(self):
        with pytest.raises(ResponseParseError):
            parse_response('{"intention":"yield"}')

    def test_garbage_rejected_with_raw_attached(self):
        with pytest.raises(ResponseParseError) as exc:
            parse_response("no structure here at all")
        assert exc.value.raw == "no structure here at all"

    def test_overlong_ehmi_clamped(self):
        obj = json.dumps({"intention": "rush", "style": "general",
                          "action": "MAINTAIN", "ehmi": "x" * 300})
        assert len(parse_response(obj).ehmi) == 64

    def test_roundtrip_serialize_parse(self):
        rng = random.Random(5)
        for _ in range(100):
            out = ReasonerOutput(
                intention=rng.choice(list(Intention)),
                style=rng.choice(list(DrivingStyle)),
                action=rng.choice(list(MetaAction)),
                ehmi=rng.choice(["", "I will be Faster", "custom text 123"]),
            )
            parsed = parse_response(serialize_output(out))
            assert (parsed.intention, parsed.style, parsed.action, parsed.ehmi) == \
                (out.intention, out.style, out.action, out.ehmi)


class _StubHandler(BaseHTTPRequestHandler):
    behavior = "ok"

    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length))
        assert body["stream"] is False
        if self.behavior == "slow":
            time.sleep(1.5)
        if self.behavior == "error":
            self.send_response(500)
            self.end_headers()
            return
        reply = {"response": f"Answer: {VALID_OBJ}", "model": body["model"]}
        payload = json.dumps(reply).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


@pytest.fixture
def stub_server():
    server = HTTPServer(("127.0.0.1", 0), _StubHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_port}"
    server.shutdown()


class TestInferRemote:
    def test_happy_path(self, stub_server):
        _StubHandler.behavior = "ok"
        cfg = BackendConfig(kind="remote", endpoint=stub_server, model="test-model")
        text, latency = infer_remote(build_prompt(scenario(), NO_INSTRUCTION), cfg)
        assert VALID_OBJ in text
        assert latency > 0.0

    def test_unreachable_endpoint(self):
        cfg = BackendConfig(kind="remote", endpoint="http://127.0.0.1:9",
                            model="test-model", timeout=1.0, max_retries=0)
        start = time.perf_counter()
        with pytest.raises(BackendError):
            infer_remote(build_prompt(scenario(), NO_INSTRUCTION), cfg)
        assert time.perf_counter() - start < cfg.timeout + 1.0

    def test_timeout(self, stub_server):
        _StubHandler.behavior = "slow"
        cfg = BackendConfig(kind="remote", endpoint=stub_server, model="test-model",
                            timeout=0.3, max_retries=0)
        with pytest.raises(BackendError):
            infer_remote(build_prompt(scenario(), NO_INSTRUCTION), cfg)
        _StubHandler.behavior = "ok"

    def test_http_error_status(self, stub_server):
        _StubHandler.behavior = "error"
        cfg = BackendConfig(kind="remote", endpoint=stub_server, model="test-model",
                            timeout=2.0, max_retries=0)
        with pytest.raises(BackendError):
            infer_remote(build_prompt(scenario(), NO_INSTRUCTION), cfg)
        _StubHandler.behavior = "ok"


class TestReason:
    def test_heuristic_path_equals_heuristic_infer(self):
        s = scenario(hv_speed=0.2, c=3.0)
        assert reason(s, NO_INSTRUCTION, BackendConfig()) == heuristic_infer(s, NO_INSTRUCTION)

    def test_remote_valid_schema_uses_model_name(self, stub_server):
        _StubHandler.behavior = "ok"
        cfg = BackendConfig(kind="remote", endpoint=stub_server, model="mini-7b")
        out = reason(scenario(), NO_INSTRUCTION, cfg)
        assert out.backend == "mini-7b"
        assert out.action is MetaAction.ACCELERATE
        assert out.latency > 0.0

    def test_remote_garbage_falls_back_flagged(self):
        cfg = BackendConfig(kind="remote", endpoint="http://example.invalid",
                            model="m", max_retries=0)
        out = reason(scenario(), NO_INSTRUCTION, cfg, transport=lambda _: "gibberish")
        assert out.backend == "heuristic-fallback"

    def test_totality_fuzz(self):
        """Valid-wrapped, truncated and garbage replies: reason() always
        returns a vocabulary-valid output; fallback flag set exactly when
        parsing fails."""
        rng = random.Random(1234)
        cfg = BackendConfig(kind="remote", endpoint="http://stub", model="m", max_retries=0)
        vocabulary_hits = 0
        for k in range(1000):
            roll = rng.random()
            if roll < 0.4:
                raw = f"{'bla ' * rng.randrange(0, 5)}{VALID_OBJ}{' trailing' * rng.randrange(0, 3)}"
                should_parse = True
            elif roll < 0.7:
                cut = rng.randrange(0, len(VALID_OBJ) - 1)
                raw = VALID_OBJ[:cut]
                should_parse = False
            else:
                raw = "".join(rng.choices('{}[]"abc:,123 ', k=rng.randrange(0, 40)))
                try:
                    parse_response(raw)
                    should_parse = True
                except ResponseParseError:
                    should_parse = False
            out = reason(scenario(), NO_INSTRUCTION, cfg, transport=lambda _: raw)
            assert out.intention in list(Intention)
            assert out.style in list(DrivingStyle)
            assert out.action in list(MetaAction)
            assert isinstance(out.ehmi, str) and len(out.ehmi) <= 64
            assert (out.backend == "heuristic-fallback") == (not should_parse)
            vocabulary_hits += 1
        assert vocabulary_hits == 1000

    def test_ehmi_never_precedes_action_in_prompt(self):
        text = build_prompt(scenario(), NO_INSTRUCTION).text.lower()
        assert text.index("ehmi text") > text.index("accelerate, decelerate, or maintain")


class TestBackendConfig:
    def test_remote_requires_endpoint_and_model(self):
        with pytest.raises(ValueError):
            BackendConfig(kind="remote")
        with pytest.raises(ValueError):
            BackendConfig(kind="bogus")
