"""The slow system: staged inference of intention, style, action and eHMI.

A standardized prompt is built from the numeric scenario and the latest human
instruction, then answered either by a remote language-model endpoint or by a
deterministic heuristic.  The staged order matters: the eHMI message is always
derived from the chosen action, never the reverse.  ``reason`` is total — any
backend or parse failure falls back to the heuristic and flags it.

``reason`` may block for seconds with a remote backend, so the runtime gives
it a dedicated task; only one inference is ever in flight.
"""

from __future__ import annotations

import json
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, replace
from typing import Callable, Optional

from dualdrive.core import (
    EHMI_FASTER,
    EHMI_MAINTAIN,
    EHMI_SLOWER,
    DrivingStyle,
    Instruction,
    Intention,
    MetaAction,
    ScenarioDescription,
    VocabularyError,
    clamp_ehmi,
    parse_action,
    parse_intention,
    parse_style,
)


class BackendError(RuntimeError):
    """The remote backend failed (connection, timeout, bad status)."""


class ResponseParseError(ValueError):
    """No valid structured answer could be extracted from the raw text."""

    def __init__(self, message: str, raw: str):
        super().__init__(message)
        self.raw = raw


@dataclass(frozen=True)
class Prompt:
    text: str
    built_from_version: int = 0


@dataclass(frozen=True)
class ReasonerOutput:
    intention: Intention
    style: DrivingStyle
    action: MetaAction
    ehmi: str
    latency: float = 0.0
    backend: str = "heuristic"


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "heuristic"          # "heuristic" | "remote"
    endpoint: str = ""
    model: str = ""
    timeout: float = 15.0
    max_retries: int = 1

    def __post_init__(self):
        if self.kind not in ("heuristic", "remote"):
            raise ValueError(f"unknown backend kind: {self.kind!r}")
        if self.kind == "remote" and (not self.endpoint or not self.model):
            raise ValueError("remote backend requires endpoint and model")


_SCENARIO_LABELS = (
    "ego x (m)", "ego y (m)", "ego vx (m/s)", "ego vy (m/s)",
    "opponent x (m)", "opponent y (m)", "opponent vx (m/s)", "opponent vy (m/s)",
    "conflict time (s)",
)

_RESPONSE_SCHEMA = (
    'Respond with exactly one JSON object and nothing else, of the form '
    '{"intention": "yield|rush", "style": "general|aggressive|conservative", '
    '"action": "ACCELERATE|DECELERATE|MAINTAIN", "ehmi": "<short display text>"}.'
)


def build_prompt(s: ScenarioDescription, i: Instruction, last_ehmi: str = "",
                 version: int = 0) -> Prompt:
    """Deterministic prompt: role preamble, labeled scenario, instruction
    verbatim, then the four staged sub-questions and the response schema."""
    lines = [
        "You are the negotiation module of an automated vehicle crossing a",
        "conflict area shared with one human-driven opponent.",
        "",
        "Current scenario:",
    ]
    for label, value in zip(_SCENARIO_LABELS, s.values):
        lines.append(f"  {label}: {value:.2f}")
    lines.append(f"  current eHMI display: {last_ehmi if last_ehmi else 'none'}")
    lines.append("")
    lines.append(f"Instruction from the human driver: {i.text if i.text else 'none'}")
    lines.append("")
    lines.append("Answer these sub-questions in order:")
    lines.append("  1. Does the opponent intend to yield or to rush?")
    lines.append("  2. Is the opponent's driving style general, aggressive, or conservative?")
    lines.append("  3. Given that intention and style, should the ego vehicle "
                 "ACCELERATE, DECELERATE, or MAINTAIN?")
    lines.append("  4. What short eHMI text should announce the chosen action "
                 "to the opponent?")
    lines.append("")
    lines.append(_RESPONSE_SCHEMA)
    return Prompt(text="\n".join(lines), built_from_version=version)


def heuristic_infer(s: ScenarioDescription, i: Instruction) -> ReasonerOutput:
    """Deterministic stand-in for the language model.

    Thresholds mirror the narrative cases: a stopped opponent reads as a
    conservative yielder (push past it), a fast one as an aggressive rusher
    (brake if the conflict is close).
    """
    hv_speed = s.hv_speed
    c = s.conflict_time

    yields = hv_speed < 0.5 or "slower" in i.text.lower()
    intention = Intention.YIELD if yields else Intention.RUSH

    if hv_speed > 4.0:
        style = DrivingStyle.AGGRESSIVE
    elif hv_speed < 1.5:
        style = DrivingStyle.CONSERVATIVE
    else:
        style = DrivingStyle.GENERAL

    if intention is Intention.RUSH and c < 3.0:
        action = MetaAction.DECELERATE
    elif intention is Intention.YIELD:
        action = MetaAction.ACCELERATE
    else:
        action = MetaAction.MAINTAIN

    ehmi = {
        MetaAction.DECELERATE: EHMI_SLOWER,
        MetaAction.ACCELERATE: EHMI_FASTER,
        MetaAction.MAINTAIN: EHMI_MAINTAIN,
    }[action]

    return ReasonerOutput(intention=intention, style=style, action=action,
                          ehmi=ehmi, latency=0.0, backend="heuristic")


Transport = Callable[[str], str]


def _http_transport(cfg: BackendConfig) -> Transport:
    def post(prompt_text: str) -> str:
        body = json.dumps({"model": cfg.model, "prompt": prompt_text,
                           "stream": False}).encode("utf-8")
        request = urllib.request.Request(
            cfg.endpoint.rstrip("/") + "/api/generate",
            data=body, headers={"Content-Type": "application/json"}, method="POST",
        )
        try:
            with urllib.request.urlopen(request, timeout=cfg.timeout) as resp:
                if not 200 <= resp.status < 300:
                    raise BackendError(f"backend status {resp.status}")
                payload = json.loads(resp.read().decode("utf-8"))
        except BackendError:
            raise
        except (urllib.error.URLError, TimeoutError, OSError, json.JSONDecodeError) as exc:
            raise BackendError(f"backend request failed: {exc}") from exc
        if "response" not in payload:
            raise BackendError("backend reply missing 'response' field")
        return str(payload["response"])

    return post


def infer_remote(p: Prompt, cfg: BackendConfig,
                 transport: Optional[Transport] = None) -> tuple[str, float]:
    """Run the prompt against the remote endpoint; returns (text, latency_s).

    Retries up to ``cfg.max_retries`` extra times before giving up.
    """
    if cfg.kind != "remote":
        raise BackendError("infer_remote requires a remote backend config")
    send = transport if transport is not None else _http_transport(cfg)
    start = time.perf_counter()
    last_error: Exception | None = None
    for _ in range(cfg.max_retries + 1):
        try:
            text = send(p.text)
            return text, time.perf_counter() - start
        except BackendError as exc:
            last_error = exc
    raise BackendError(f"backend failed after retries: {last_error}")


_REQUIRED_KEYS = ("intention", "style", "action", "ehmi")


def parse_response(raw: str) -> ReasonerOutput:
    """Extract the first well-formed, vocabulary-valid object from the text.

    Models often wrap the answer in prose, so every '{' is tried as a decode
    start until one object validates.
    """
    decoder = json.JSONDecoder()
    failure = "no JSON object found"
    for pos, char in enumerate(raw):
        if char != "{":
            continue
        try:
            obj, _ = decoder.raw_decode(raw[pos:])
        except json.JSONDecodeError:
            continue
        if not isinstance(obj, dict):
            failure = "top-level JSON value is not an object"
            continue
        missing = [k for k in _REQUIRED_KEYS if k not in obj]
        if missing:
            failure = f"missing fields: {missing}"
            continue
        try:
            return ReasonerOutput(
                intention=parse_intention(str(obj["intention"])),
                style=parse_style(str(obj["style"])),
                action=parse_action(str(obj["action"])),
                ehmi=clamp_ehmi(str(obj["ehmi"])),
                latency=0.0,
                backend="parsed",
            )
        except VocabularyError as exc:
            failure = str(exc)
            continue
    raise ResponseParseError(failure, raw)


def serialize_output(out: ReasonerOutput) -> str:
    """Canonical structured answer (what a well-behaved backend returns)."""
    return json.dumps({
        "intention": out.intention.value,
        "style": out.style.value,
        "action": out.action.value,
        "ehmi": out.ehmi,
    })


def reason(s: ScenarioDescription, i: Instruction, cfg: BackendConfig,
           last_ehmi: str = "", version: int = 0,
           transport: Optional[Transport] = None) -> ReasonerOutput:
    """Full staged inference; total. Falls back to the heuristic on any
    backend or parse failure and flags the output as 'heuristic-fallback'."""
    if cfg.kind == "heuristic":
        return heuristic_infer(s, i)
    prompt = build_prompt(s, i, last_ehmi=last_ehmi, version=version)
    try:
        raw, latency = infer_remote(prompt, cfg, transport=transport)
        parsed = parse_response(raw)
        return replace(parsed, latency=latency, backend=cfg.model)
    except (BackendError, ResponseParseError):
        return replace(heuristic_infer(s, i), backend="heuristic-fallback")
