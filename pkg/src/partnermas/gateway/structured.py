"""Pull a JSON object out of free-form model output and check its keys."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any


class ParseFailure(ValueError):
    """No well-formed JSON object could be found in the text."""

    def __init__(self, raw_text: str) -> None:
        preview = raw_text[:200].replace("\n", " ")
        super().__init__(f"no parseable JSON object in model output: {preview!r}")
        self.raw_text = raw_text


class ShapeViolation(ValueError):
    """A parsed object is missing a required key."""

    def __init__(self, key: str, raw_text: str = "") -> None:
        super().__init__(f"structured output is missing required key {key!r}")
        self.key = key
        self.raw_text = raw_text


@dataclass(frozen=True)
class Shape:
    """Required keys of a structured output, as dotted paths.

    ``Shape("reflect", ("reflection_summary", "score_decisions.stick_with_previous_score"))``
    requires a nested ``stick_with_previous_score`` under ``score_decisions``.
    """

    name: str
    required: tuple[str, ...] = ()

    def requires(self, key: str) -> bool:
        return any(path == key or path.rsplit(".", 1)[-1] == key for path in self.required)

    def missing_key(self, obj: Any) -> str | None:
        for path in self.required:
            node = obj
            for part in path.split("."):
                if not isinstance(node, dict) or part not in node:
                    return path
                node = node[part]
        return None

    def to_dict(self) -> dict[str, Any]:
        return {"name": self.name, "required": list(self.required)}


FREE_TEXT = Shape("free-text")


def find_json_object(text: str) -> dict[str, Any]:
    """Return the first JSON object embedded in ``text``.

    Code fences and surrounding prose are skipped by trying a raw decode at
    every opening brace in order.
    """
    decoder = json.JSONDecoder()
    start = text.find("{")
    while start != -1:
        try:
            obj, _ = decoder.raw_decode(text, start)
        except json.JSONDecodeError:
            pass
        else:
            if isinstance(obj, dict):
                return obj
        start = text.find("{", start + 1)
    raise ParseFailure(text)


def extract_structured(text: str, shape: Shape) -> dict[str, Any]:
    obj = find_json_object(text)
    missing = shape.missing_key(obj)
    if missing is not None:
        raise ShapeViolation(missing, text)
    return obj
