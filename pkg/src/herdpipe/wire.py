"""Wire-protocol message schemas and validation.

The JSON schema documents under ``herdpipe/schemas/`` are the published
contract between the orchestrators and any backend implementation
(teacher, segmenter, trainer, inference). ``validate`` raises
ProtocolError carrying an excerpt of the offending payload.
"""

from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources

import jsonschema

from .errors import ProtocolError

KINDS = (
    "detect-request",
    "detect-response",
    "segment-request",
    "segment-response",
    "train-start-request",
    "train-start-response",
    "epoch-records",
    "describe-response",
    "cli-summary",
)

# an inference response reuses the detect-response schema
ALIASES = {"infer-response": "detect-response"}


@lru_cache(maxsize=None)
def schema(kind: str) -> dict:
    kind = ALIASES.get(kind, kind)
    if kind not in KINDS:
        raise ProtocolError(f"unknown message kind {kind!r}")
    text = resources.files("herdpipe.schemas").joinpath(f"{kind}.schema.json").read_text()
    return json.loads(text)


@lru_cache(maxsize=None)
def _validator(kind: str) -> jsonschema.Draft202012Validator:
    return jsonschema.Draft202012Validator(schema(kind))


def _excerpt(payload, limit: int = 200) -> str:
    try:
        text = json.dumps(payload)
    except (TypeError, ValueError):
        text = repr(payload)
    return text if len(text) <= limit else text[:limit] + "..."


def validate(kind: str, payload) -> None:
    """Raise ProtocolError unless payload conforms to the kind's schema."""
    errors = sorted(_validator(kind).iter_errors(payload), key=str)
    if errors:
        first = errors[0]
        raise ProtocolError(
            f"{kind} message invalid: {first.message}; payload: {_excerpt(payload)}"
        )


def is_valid(kind: str, payload) -> bool:
    try:
        validate(kind, payload)
        return True
    except ProtocolError:
        return False
