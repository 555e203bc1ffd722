"""Scene planning: turn an instruction into a composition prompt and
object phrases.

Three interchangeable planners produce the same ScenePlan shape:

    plan_stub    deterministic offline parser for the instruction grammar
                 "add/create a(n) <object> [<relation> the <anchor>]"
    plan_naive   degenerate variant: the raw instruction becomes the
                 composition prompt (used by the no_vlm_protocol ablation)
    plan_remote  two chat-completion calls against an OpenAI-compatible
                 endpoint with key frames attached; replies are schema-
                 validated before anything reaches the pipeline

Prompt templates ship as versioned asset files next to this module.
"""

import base64
import io
import json
import logging
import re
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import requests
from PIL import Image

from vfxlab.errors import GrammarError, PlannerError

log = logging.getLogger("vfxlab.planner")

ASSET_DIR = Path(__file__).parent / "assets" / "prompts"

RELATIONS = ("left of", "right of", "next to", "above", "below", "behind", "near", "beside")

_GRAMMAR_RE = re.compile(r"^\s*(add|create)\s+(a|an)\s+(.+?)\s*$", re.IGNORECASE)

GRAMMAR_HELP = (
    "accepted grammar: 'add|create a|an <object> [<relation> the <anchor>]' "
    f"with relations {', '.join(RELATIONS)}"
)


@dataclass(frozen=True)
class ScenePlan:
    composition_prompt: str
    original_objects: tuple
    edit_object: str
    rationale: str = ""

    def __post_init__(self):
        if not self.edit_object.strip():
            raise PlannerError("plan has an empty edit object")
        if self.edit_object.lower() not in self.composition_prompt.lower():
            raise PlannerError(
                f"composition prompt does not mention {self.edit_object!r}"
            )
        if len(set(self.original_objects)) != len(self.original_objects):
            raise PlannerError("original object phrases must be distinct")

    def to_dict(self) -> dict:
        return {
            "composition_prompt": self.composition_prompt,
            "original_objects": list(self.original_objects),
            "edit_object": self.edit_object,
            "rationale": self.rationale,
        }


@dataclass(frozen=True)
class PlannerRequest:
    instruction: str
    keyframes: tuple  # (H, W, 3) float arrays
    scene_labels: tuple = ()
    template_id: str = "v1"

    def __post_init__(self):
        if len(self.keyframes) < 1:
            raise PlannerError("planner request needs at least one keyframe")


def keyframes_of(video: np.ndarray) -> tuple:
    """First, middle, and last frames (deduplicated for short clips)."""
    n = video.shape[0]
    picks = sorted({0, n // 2, n - 1})
    return tuple(video[i] for i in picks)


def parse_instruction(instruction: str) -> tuple:
    """(object, relation or None, anchor or None) from the edit grammar."""
    m = _GRAMMAR_RE.match(instruction)
    if not m:
        raise GrammarError(f"cannot parse {instruction!r}; {GRAMMAR_HELP}")
    rest = m.group(3).strip()
    lower = rest.lower()
    for rel in RELATIONS:
        marker = f" {rel} the "
        pos = lower.find(marker)
        if pos > 0:
            obj = rest[:pos].strip()
            anchor = rest[pos + len(marker) :].strip()
            if obj and anchor:
                return obj, rel, anchor
    return rest, None, None


def _template(template_id: str, name: str) -> str:
    path = ASSET_DIR / f"{name}_{template_id}.txt"
    if not path.exists():
        raise PlannerError(f"unknown prompt template {name}_{template_id}")
    lines = [l for l in path.read_text().splitlines() if not l.startswith("#")]
    return "\n".join(lines).strip()


def plan_stub(request: PlannerRequest) -> ScenePlan:
    """Rule-based plan from the instruction grammar and stored labels."""
    obj, rel, anchor = parse_instruction(request.instruction)
    labels = list(request.scene_labels)
    listed = " and ".join(f"a {label}" for label in labels) if labels else "the scene"
    if rel is not None:
        tail = f"a {obj} {rel} the {anchor}"
        rationale = (
            f"place the {obj} {rel} the {anchor} and match the scene lighting and motion"
        )
    else:
        tail = f"a {obj}"
        rationale = f"place the {obj} where it fits the scene and match its motion"
    prompt = f"a scene with {listed} and {tail}"
    return ScenePlan(
        composition_prompt=prompt,
        original_objects=tuple(labels),
        edit_object=obj,
        rationale=rationale,
    )


def plan_naive(request: PlannerRequest) -> ScenePlan:
    """Raw instruction as the composition prompt; labels pass through."""
    obj, _, _ = parse_instruction(request.instruction)
    return ScenePlan(
        composition_prompt=request.instruction,
        original_objects=tuple(request.scene_labels),
        edit_object=obj,
        rationale="",
    )


@dataclass(frozen=True)
class RemoteEndpoint:
    url: str
    model: str = "gpt-4o"
    api_key: str = ""
    timeout: float = 10.0
    retries: int = 2
    backoff: float = 0.25


def _frame_to_data_url(frame: np.ndarray) -> str:
    as_u8 = np.clip(np.rint(np.asarray(frame) * 255.0), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(as_u8, mode="RGB").save(buf, format="PNG")
    return "data:image/png;base64," + base64.b64encode(buf.getvalue()).decode()


class ChatClient:
    """Minimal OpenAI-compatible chat-completions client with image parts."""

    def __init__(self, endpoint: RemoteEndpoint):
        self.endpoint = endpoint

    def complete(self, system: str, user_text: str, frames=()) -> str:
        content = [{"type": "text", "text": user_text}]
        for frame in frames:
            content.append(
                {"type": "image_url", "image_url": {"url": _frame_to_data_url(frame)}}
            )
        payload = {
            "model": self.endpoint.model,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": content},
            ],
        }
        headers = {"Content-Type": "application/json"}
        if self.endpoint.api_key:
            headers["Authorization"] = f"Bearer {self.endpoint.api_key}"
        last_error = None
        for attempt in range(self.endpoint.retries + 1):
            try:
                resp = requests.post(
                    self.endpoint.url.rstrip("/") + "/chat/completions",
                    json=payload,
                    headers=headers,
                    timeout=self.endpoint.timeout,
                )
                resp.raise_for_status()
                body = resp.json()
                return body["choices"][0]["message"]["content"]
            except requests.Timeout as exc:
                raise PlannerError(
                    f"chat endpoint timed out after {self.endpoint.timeout}s"
                ) from exc
            except (requests.RequestException, KeyError, IndexError, ValueError) as exc:
                last_error = exc
                if attempt < self.endpoint.retries:
                    time.sleep(self.endpoint.backoff * (2**attempt))
        raise PlannerError(f"chat endpoint failed: {last_error}") from last_error


def _json_from_reply(reply: str) -> dict:
    try:
        return json.loads(reply)
    except json.JSONDecodeError:
        start, end = reply.find("{"), reply.rfind("}")
        if start >= 0 and end > start:
            try:
                return json.loads(reply[start : end + 1])
            except json.JSONDecodeError:
                pass
    log.warning("unparseable planner reply: %r", reply)
    raise PlannerError("planner reply is not valid JSON (raw reply logged)")


def plan_remote(request: PlannerRequest, endpoint: RemoteEndpoint) -> ScenePlan:
    """Two-call protocol: composition prompt, then object phrases."""
    client = ChatClient(endpoint)
    first = _json_from_reply(
        client.complete(
            _template(request.template_id, "composition"),
            f"Instruction: {request.instruction}",
            request.keyframes,
        )
    )
    if not isinstance(first.get("composition_prompt"), str) or not isinstance(
        first.get("rationale"), str
    ):
        log.warning("bad composition reply: %r", first)
        raise PlannerError("composition reply missing required string fields")
    second = _json_from_reply(
        client.complete(
            _template(request.template_id, "objects"),
            f"Instruction: {request.instruction}\n"
            f"Composited scene: {first['composition_prompt']}",
            request.keyframes,
        )
    )
    objects = second.get("original_objects")
    edit_object = second.get("edit_object")
    if (
        not isinstance(objects, list)
        or not all(isinstance(o, str) for o in objects)
        or not isinstance(edit_object, str)
    ):
        log.warning("bad objects reply: %r", second)
        raise PlannerError("objects reply missing required fields")
    return ScenePlan(
        composition_prompt=first["composition_prompt"],
        original_objects=tuple(objects),
        edit_object=edit_object,
        rationale=first["rationale"],
    )
