"""JSON Schema contracts for the back-end's JSON documents."""

from __future__ import annotations

import importlib
import json
from collections.abc import Mapping, MutableMapping
from pathlib import Path
from typing import Protocol, cast

SchemaMapping = Mapping[str, object]
MutableSchemaMapping = MutableMapping[str, object]


class _DraftValidator(Protocol):
    """Subset of the Draft 2020-12 validator API we rely on."""

    @classmethod
    def check_schema(cls, schema: Mapping[str, object]) -> None: ...

    def __init__(self, schema: Mapping[str, object]) -> None: ...

    def validate(self, payload: object) -> None: ...


def _load_draft_validator() -> type[_DraftValidator]:
    """Resolve the jsonschema Draft 2020-12 validator without requiring stubs."""

    class _ValidatorsModule(Protocol):
        Draft202012Validator: type[_DraftValidator]

    validators_module = cast(
        "_ValidatorsModule",
        importlib.import_module("jsonschema.validators"),
    )
    return validators_module.Draft202012Validator


_DRAFT_VALIDATOR: type[_DraftValidator] = _load_draft_validator()

_DRAFT = "https://json-schema.org/draft/2020-12/schema"
_QMF_KINDS = ["duration", "speech_duration", "magnitude", "imposter_mean"]

QMF_CONFIG_SCHEMA: dict[str, object] = {
    "type": "object",
    "properties": {
        "enabled": {
            "type": "array",
            "items": {"enum": _QMF_KINDS},
            "uniqueItems": True,
        },
        "duration_clip_frames": {"type": ["integer", "null"], "minimum": 1},
        "combine": {"enum": ["min_max", "mean", "min"]},
        "imposter_top_n": {"type": "integer", "minimum": 1},
        "log_transform": {
            "type": "array",
            "items": {"enum": _QMF_KINDS},
            "uniqueItems": True,
        },
    },
    "required": ["enabled"],
    "additionalProperties": False,
}

CALIBRATION_MODEL_SCHEMA: dict[str, object] = {
    "$schema": _DRAFT,
    "type": "object",
    "properties": {
        "w_s": {"type": "number"},
        "w_q": {"type": "array", "items": {"type": "number"}},
        "b": {"type": "number"},
        "qmf_config": {"anyOf": [QMF_CONFIG_SCHEMA, {"type": "null"}]},
        "effective_prior": {
            "type": "number",
            "exclusiveMinimum": 0,
            "exclusiveMaximum": 1,
        },
        "feature_names": {"type": "array", "items": {"type": "string"}},
        "snorm_std": {"enum": ["population"]},
    },
    "required": ["w_s", "w_q", "b", "qmf_config"],
    "additionalProperties": False,
}

_HPM_SCHEMA: dict[str, object] = {
    "type": "object",
    "properties": {
        "S": {"type": "integer", "minimum": 1},
        "U": {"type": "integer", "minimum": 1},
        "I": {"type": "integer", "minimum": 1},
    },
    "required": ["S", "U", "I"],
    "additionalProperties": False,
}

TRAIN_PLAN_SCHEMA: dict[str, object] = {
    "$schema": _DRAFT,
    "type": "array",
    "minItems": 1,
    "items": {
        "type": "object",
        "properties": {
            "margin": {"type": "number", "minimum": 0},
            "crop_frames": {"type": "integer", "minimum": 1},
            "lr_min": {"type": "number", "exclusiveMinimum": 0},
            "lr_max": {"type": "number", "exclusiveMinimum": 0},
            "cycle_len": {"type": "integer", "minimum": 2},
            "cycles": {"type": "integer", "minimum": 1},
            "sampler": {"enum": ["random", "hpm"]},
            "scale": {"type": "number", "exclusiveMinimum": 0},
            "batch_size": {"type": "integer", "minimum": 1},
            "augment": {"type": "boolean"},
            "frozen_extractor": {"type": "boolean"},
            "hpm": _HPM_SCHEMA,
        },
        "required": [
            "margin",
            "crop_frames",
            "lr_min",
            "lr_max",
            "cycle_len",
            "cycles",
            "sampler",
        ],
        "additionalProperties": False,
    },
}

PIPELINE_CONFIG_SCHEMA: dict[str, object] = {
    "$schema": _DRAFT,
    "type": "object",
    "properties": {
        "embeddings": {"type": "string", "minLength": 1},
        "trials": {"type": "string", "minLength": 1},
        "cohort_embeddings": {"type": "string", "minLength": 1},
        "scorer": {"enum": ["cosine", "inner", "inner_product"]},
        "snorm": {
            "type": "object",
            "properties": {
                "cohort_top_n": {"type": "integer", "minimum": 2},
                "similarity": {"enum": ["cosine", "inner", "inner_product"]},
            },
            "additionalProperties": False,
        },
        "qmf": QMF_CONFIG_SCHEMA,
        "dcf": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "properties": {
                    "p_target": {
                        "type": "number",
                        "exclusiveMinimum": 0,
                        "exclusiveMaximum": 1,
                    },
                    "c_miss": {"type": "number", "exclusiveMinimum": 0},
                    "c_fa": {"type": "number", "exclusiveMinimum": 0},
                },
                "required": ["p_target"],
                "additionalProperties": False,
            },
        },
        "calibration_trials_per_type": {
            "type": "integer",
            "minimum": 2,
            "multipleOf": 2,
        },
        "prior": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "report_json": {"type": ["string", "null"]},
    },
    "required": ["embeddings", "trials", "cohort_embeddings"],
    "additionalProperties": False,
}


def validate_schema(schema: SchemaMapping | MutableSchemaMapping) -> None:
    """Raise ``SchemaError`` if *schema* is not a valid JSON Schema."""

    _DRAFT_VALIDATOR.check_schema(dict(schema))


def validate_payload(
    payload: object, schema: SchemaMapping | MutableSchemaMapping
) -> None:
    """Validate *payload* against *schema* using Draft 2020-12 semantics."""

    validator = _DRAFT_VALIDATOR(dict(schema))
    validator.validate(payload)


def load_json_document(
    path: Path | str, schema: SchemaMapping | MutableSchemaMapping
) -> object:
    """Read a JSON file and validate it against *schema* before returning it."""

    payload: object = json.loads(Path(path).read_text(encoding="utf-8"))
    validate_payload(payload, schema)
    return payload


__all__ = [
    "CALIBRATION_MODEL_SCHEMA",
    "PIPELINE_CONFIG_SCHEMA",
    "QMF_CONFIG_SCHEMA",
    "TRAIN_PLAN_SCHEMA",
    "load_json_document",
    "validate_payload",
    "validate_schema",
]
