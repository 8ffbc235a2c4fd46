"""Semantic constraint synthesis via forced-choice LLM queries.

For a manipulated object in a labeled scene, three question families are
asked per prompt (one question each): is a spatial relationship with a
scene object unsafe, should the robot exhibit caution near a scene object,
and may the held object be rotated. Each question is asked an odd number
of times and decided by strict majority; unparseable single answers fall
back to the permissive choice, so noise cannot invent constraints.
"""

from __future__ import annotations

import json
import logging
import threading
import time
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .envelopes import RELATIONSHIPS

log = logging.getLogger(__name__)

CONSTRAINED_ROTATION = "constrained_rotation"
FREE_ROTATION = "free_rotation"
CAUTION = "caution"
NO_CAUTION = "no_caution"

_PROMPT_ASSET = Path(__file__).parent / "assets" / "prompt_examples.json"
_DEFAULT_RULES = Path(__file__).parent / "assets" / "fixture_rules.json"


class ClientUnavailable(RuntimeError):
    """The language-model backend failed after all retries."""


class MalformedResponse(RuntimeError):
    """Every vote for one question came back unparseable."""


@dataclass(frozen=True)
class QuerySpec:
    """One forced-choice question about a scene."""

    scene_description: str
    manipulated_object: str
    target_object: str
    question_kind: str  # 'relationship' | 'caution' | 'rotation'
    relationship: str | None = None
    votes: int = 5

    def __post_init__(self):
        if self.question_kind not in ("relationship", "caution", "rotation"):
            raise ValueError(f"unknown question kind {self.question_kind!r}")
        if self.question_kind == "relationship" and self.relationship not in RELATIONSHIPS:
            raise ValueError(f"unknown relationship tag {self.relationship!r}")
        if self.votes < 1 or self.votes % 2 == 0:
            raise ValueError("votes must be an odd positive integer")

    @property
    def key(self) -> str:
        if self.question_kind == "relationship":
            return f"relationship:{self.relationship}"
        return self.question_kind


@dataclass(frozen=True)
class SemanticContext:
    """Synthesized constraint sets for one manipulated object."""

    manipulated_object: str
    spatial: tuple[tuple[str, str], ...] = ()  # (scene label, relationship)
    behavioral: tuple[tuple[str, str], ...] = ()  # (scene label, caution|no_caution)
    pose: str = FREE_ROTATION

    def __post_init__(self):
        object.__setattr__(self, "spatial", tuple(tuple(p) for p in self.spatial))
        object.__setattr__(self, "behavioral", tuple(tuple(p) for p in self.behavioral))
        for _, rel in self.spatial:
            if rel not in RELATIONSHIPS:
                raise ValueError(f"unknown relationship tag {rel!r}")
        for _, flag in self.behavioral:
            if flag not in (CAUTION, NO_CAUTION):
                raise ValueError(f"behavioral flag must be caution/no_caution, got {flag!r}")
        labels = [lbl for lbl, _ in self.behavioral]
        if len(set(labels)) != len(labels):
            raise ValueError("behavioral must contain exactly one entry per scene object")
        if self.pose not in (CONSTRAINED_ROTATION, FREE_ROTATION):
            raise ValueError(f"pose must be constrained/free rotation, got {self.pose!r}")

    def caution_objects(self) -> set[str]:
        return {lbl for lbl, flag in self.behavioral if flag == CAUTION}

    def to_dict(self) -> dict:
        return {
            "manipulated_object": self.manipulated_object,
            "spatial": [list(p) for p in self.spatial],
            "behavioral": [list(p) for p in self.behavioral],
            "pose": self.pose,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SemanticContext":
        return cls(
            manipulated_object=d["manipulated_object"],
            spatial=tuple((a, b) for a, b in d.get("spatial", [])),
            behavioral=tuple((a, b) for a, b in d.get("behavioral", [])),
            pose=d.get("pose", FREE_ROTATION),
        )


@dataclass(frozen=True)
class GroundTruthSet:
    """Benchmark entries: (scene_id, manipulated object, expected context)."""

    entries: tuple[tuple[str, str, SemanticContext], ...]

    def __post_init__(self):
        entries = tuple(self.entries)
        ids = [sid for sid, _, _ in entries]
        if len(set(ids)) != len(ids):
            raise ValueError("scene_ids must be unique")
        object.__setattr__(self, "entries", entries)

    @classmethod
    def load(cls, path) -> "GroundTruthSet":
        with open(path) as f:
            data = json.load(f)
        return cls(
            entries=tuple(
                (e["scene_id"], e["manipulated_object"], SemanticContext.from_dict(e["context"]))
                for e in data["entries"]
            )
        )


_QUESTION_TEXT = {
    "caution": (
        "Should the robot exhibit increased caution while moving the {o} close to"
        " the {target}? Answer with exactly one of: CAUTION or NO CAUTION."
    ),
    "rotation": (
        "May the robot freely rotate the {o} it is holding, or must its orientation"
        " stay constrained? Answer with exactly one of: CONSTRAINED or FREE."
    ),
}


def _load_prompt_examples() -> dict:
    with open(_PROMPT_ASSET) as f:
        return json.load(f)


def build_prompt(spec: QuerySpec) -> str:
    """Deterministic prompt: fixed in-context examples plus one question."""
    asset = _load_prompt_examples()
    lines = [asset["preamble"], ""]
    for ex in asset["examples"]:
        lines.append(f"Scene: {ex['scene']}")
        lines.append(f"Held object: {ex['object']}")
        lines.append(f"Question: {ex['question']}")
        lines.append(f"Answer: {ex['answer']}")
        lines.append("")
    lines.append(f"Scene: {spec.scene_description}")
    lines.append(f"Held object: {spec.manipulated_object}")
    if spec.question_kind == "relationship":
        q = (
            f"Is it unsafe for the {spec.manipulated_object} to be {spec.relationship.replace('_', ' ')}"
            f" the {spec.target_object}? Answer with exactly one of: UNSAFE or SAFE."
        )
    else:
        q = _QUESTION_TEXT[spec.question_kind].format(o=spec.manipulated_object, target=spec.target_object)
    lines.append(f"Question: {q}")
    lines.append("Answer:")
    return "\n".join(lines)


def parse_answer(kind: str, response: str) -> str | None:
    """Forced-choice token extraction; None when no token is present."""
    norm = response.upper()
    if kind == "relationship":
        if "UNSAFE" in norm:
            return "UNSAFE"
        if "SAFE" in norm:
            return "SAFE"
    elif kind == "caution":
        if "NO CAUTION" in norm or "NO_CAUTION" in norm:
            return "NO CAUTION"
        if "CAUTION" in norm:
            return "CAUTION"
    elif kind == "rotation":
        if "CONSTRAINED" in norm:
            return "CONSTRAINED"
        if "FREE" in norm:
            return "FREE"
    return None


_PERMISSIVE = {"relationship": "SAFE", "caution": "NO CAUTION", "rotation": "FREE"}
_RESTRICTIVE = {"relationship": "UNSAFE", "caution": "CAUTION", "rotation": "CONSTRAINED"}


class FixtureClient:
    """Deterministic table-lookup backend for tests and offline runs.

    Rules are keyed by (held object, target object, question); a missing
    entry answers with the permissive default. A rule may carry a list of
    per-vote answers, replayed cyclically.
    """

    def __init__(self, table: dict):
        self._rules: dict[tuple[str, str, str], list[str]] = {}
        for rule in table.get("rules", []):
            answers = rule.get("answers")
            if answers is None:
                answers = [rule["answer"]]
            key = (
                rule["object"].strip().lower(),
                rule.get("target", "").strip().lower(),
                rule["question"],
            )
            self._rules[key] = [str(a) for a in answers]
        self._counters: dict[tuple[str, str, str], int] = {}
        self._lock = threading.Lock()
        self.call_count = 0

    @classmethod
    def from_file(cls, path) -> "FixtureClient":
        with open(path) as f:
            return cls(json.load(f))

    @classmethod
    def default(cls) -> "FixtureClient":
        return cls.from_file(_DEFAULT_RULES)

    def ask(self, prompt: str, spec: QuerySpec) -> str:
        key = (
            spec.manipulated_object.strip().lower(),
            spec.target_object.strip().lower() if spec.question_kind != "rotation" else "",
            spec.key,
        )
        with self._lock:
            self.call_count += 1
            answers = self._rules.get(key)
            if answers is None:
                return _PERMISSIVE[spec.question_kind]
            i = self._counters.get(key, 0)
            self._counters[key] = i + 1
            return answers[i % len(answers)]


class HttpClient:
    """Chat-completion backend configured through SEMFILTER_LLM_* env vars."""

    def __init__(self, url: str, model: str, key: str = "", timeout: float = 30.0):
        self.url = url
        self.model = model
        self.key = key
        self.timeout = timeout

    @classmethod
    def from_env(cls) -> "HttpClient":
        import os

        url = os.environ.get("SEMFILTER_LLM_URL")
        model = os.environ.get("SEMFILTER_LLM_MODEL")
        if not url or not model:
            raise ClientUnavailable("SEMFILTER_LLM_URL and SEMFILTER_LLM_MODEL must be set")
        return cls(url=url, model=model, key=os.environ.get("SEMFILTER_LLM_KEY", ""))

    def ask(self, prompt: str, spec: QuerySpec) -> str:
        body = json.dumps(
            {"model": self.model, "messages": [{"role": "user", "content": prompt}], "temperature": 1.0}
        ).encode()
        req = urllib.request.Request(self.url, data=body, method="POST")
        req.add_header("Content-Type", "application/json")
        if self.key:
            req.add_header("Authorization", f"Bearer {self.key}")
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                data = json.loads(resp.read().decode())
        except Exception as exc:
            raise ClientUnavailable(str(exc)) from exc
        try:
            return data["choices"][0]["message"]["content"]
        except (KeyError, IndexError) as exc:
            raise ClientUnavailable(f"unexpected response shape: {exc}") from exc


def _ask_with_retry(client, prompt: str, spec: QuerySpec, retries: int, backoff: float) -> str:
    for attempt in range(retries):
        try:
            return client.ask(prompt, spec)
        except ClientUnavailable:
            if attempt == retries - 1:
                raise
            time.sleep(backoff * (2**attempt))
    raise ClientUnavailable("unreachable")


def _decide(spec: QuerySpec, client, retries: int, backoff: float) -> bool:
    """Strict-majority verdict for one question: True means restrictive."""
    prompt = build_prompt(spec)
    restrictive = 0
    parseable = 0
    for _ in range(spec.votes):
        answer = _ask_with_retry(client, prompt, spec, retries, backoff)
        token = parse_answer(spec.question_kind, answer)
        if token is not None:
            parseable += 1
        else:
            token = _PERMISSIVE[spec.question_kind]
        if token == _RESTRICTIVE[spec.question_kind]:
            restrictive += 1
    if parseable == 0:
        raise MalformedResponse(
            f"all {spec.votes} votes unparseable for {spec.manipulated_object!r}/{spec.key}"
        )
    return restrictive * 2 > spec.votes


def synthesize_context(
    scene_labels: list[str],
    manipulated_object: str,
    scene_description: str,
    client,
    votes: int = 5,
    catalog: tuple[str, ...] = RELATIONSHIPS,
    max_workers: int = 4,
    retries: int = 3,
    backoff: float = 0.5,
) -> SemanticContext:
    """Full semantic context from per-question majority votes.

    Issues votes x (len(scene) x len(catalog) + len(scene) + 1) queries:
    one relationship question per (object, tag) pair, one caution question
    per object, and a single rotation question.
    """
    specs: list[QuerySpec] = []
    for label in scene_labels:
        for rel in catalog:
            specs.append(
                QuerySpec(scene_description, manipulated_object, label, "relationship", rel, votes)
            )
    for label in scene_labels:
        specs.append(QuerySpec(scene_description, manipulated_object, label, "caution", votes=votes))
    specs.append(QuerySpec(scene_description, manipulated_object, "", "rotation", votes=votes))

    if max_workers > 1 and len(specs) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            verdicts = list(pool.map(lambda s: _decide(s, client, retries, backoff), specs))
    else:
        verdicts = [_decide(s, client, retries, backoff) for s in specs]

    spatial = []
    behavioral = []
    i = 0
    for label in scene_labels:
        for rel in catalog:
            if verdicts[i]:
                spatial.append((label, rel))
            i += 1
    for label in scene_labels:
        behavioral.append((label, CAUTION if verdicts[i] else NO_CAUTION))
        i += 1
    pose = CONSTRAINED_ROTATION if verdicts[i] else FREE_ROTATION
    return SemanticContext(
        manipulated_object=manipulated_object,
        spatial=tuple(spatial),
        behavioral=tuple(behavioral),
        pose=pose,
    )


def default_context(scene_labels: list[str], manipulated_object: str = "none") -> SemanticContext:
    """Constraint-free context: empty-handed or unknown objects."""
    return SemanticContext(
        manipulated_object=manipulated_object,
        spatial=(),
        behavioral=tuple((label, NO_CAUTION) for label in scene_labels),
        pose=FREE_ROTATION,
    )


def _positives(ctx: SemanticContext) -> set[tuple]:
    found: set[tuple] = {("spatial", lbl, rel) for lbl, rel in ctx.spatial}
    found |= {("caution", lbl) for lbl in ctx.caution_objects()}
    if ctx.pose == CONSTRAINED_ROTATION:
        found.add(("rotation",))
    return found


def evaluate(
    predicted: list[SemanticContext], truth: GroundTruthSet
) -> tuple[float, float]:
    """Constraint-level precision and recall against ground truth.

    Asserted constraints (spatial pairs, caution flags, constrained
    rotation) are matched entry by entry; empty predictions with no false
    positives score precision 1.0.
    """
    if len(predicted) != len(truth.entries):
        raise ValueError("predicted/truth lengths differ")
    tp = fp = fn = 0
    for ctx, (_, obj, expected) in zip(predicted, truth.entries):
        if ctx.manipulated_object != obj:
            raise ValueError(
                f"object key mismatch: predicted {ctx.manipulated_object!r}, truth {obj!r}"
            )
        p, t = _positives(ctx), _positives(expected)
        tp += len(p & t)
        fp += len(p - t)
        fn += len(t - p)
    precision = tp / (tp + fp) if (tp + fp) else 1.0
    recall = tp / (tp + fn) if (tp + fn) else 1.0
    return precision, recall


def synthesize_context_single_prompt(
    scene_labels: list[str],
    manipulated_object: str,
    scene_description: str,
    client,
    retries: int = 3,
    backoff: float = 0.5,
) -> SemanticContext:
    """Single-prompt strategy kept for benchmark comparison only.

    One request asks for the whole context as JSON; anything unparseable
    degrades to the constraint-free default.
    """
    spec = QuerySpec(scene_description, manipulated_object, "", "rotation", votes=1)
    prompt = (
        f"Scene: {scene_description}\nObjects: {', '.join(scene_labels)}\n"
        f"Held object: {manipulated_object}\n"
        "List every semantically unsafe constraint as JSON with keys"
        ' "spatial" (pairs of [object, relationship]), "caution" (object list),'
        ' and "rotation" ("CONSTRAINED" or "FREE").'
    )
    raw = _ask_with_retry(client, prompt, spec, retries, backoff)
    try:
        data = json.loads(raw[raw.index("{") : raw.rindex("}") + 1])
        spatial = tuple(
            (lbl, rel)
            for lbl, rel in data.get("spatial", [])
            if lbl in scene_labels and rel in RELATIONSHIPS
        )
        caution = {lbl for lbl in data.get("caution", []) if lbl in scene_labels}
        pose = CONSTRAINED_ROTATION if str(data.get("rotation", "")).upper() == "CONSTRAINED" else FREE_ROTATION
    except (ValueError, TypeError):
        return default_context(scene_labels, manipulated_object)
    return SemanticContext(
        manipulated_object=manipulated_object,
        spatial=spatial,
        behavioral=tuple(
            (lbl, CAUTION if lbl in caution else NO_CAUTION) for lbl in scene_labels
        ),
        pose=pose,
    )
