"""Published JSON schema for stability reports (version uapg-report/1).

Every emitted report is validated against this schema so downstream
consumers can rely on the shape.
"""

from __future__ import annotations

_POINTS = {
    "type": "array",
    "minItems": 2,
    "items": {
        "type": "array",
        "minItems": 2,
        "maxItems": 2,
        "items": {"type": "number"},
    },
}

_CURVE = {
    "type": "object",
    "required": ["video", "metric", "amplitude", "points"],
    "properties": {
        "video": {"type": "string"},
        "metric": {"type": "string"},
        "amplitude": {"type": ["number", "null"]},
        "points": _POINTS,
    },
}

_CURVE_LIST = {"type": "array", "items": _CURVE, "minItems": 1}

_METRIC_ENTRY = {
    "type": "object",
    "required": [
        "target_min", "target_max", "stability_score",
        "target_curves", "target_curves_normalized",
        "proxy_curves", "proxy_curves_normalized",
        "per_video", "dependence",
    ],
    "properties": {
        "target_min": {"type": "number"},
        "target_max": {"type": "number"},
        "stability_score": {"type": "number"},
        "target_curves": _CURVE_LIST,
        "target_curves_normalized": _CURVE_LIST,
        "proxy_curves": _CURVE_LIST,
        "proxy_curves_normalized": _CURVE_LIST,
        "per_video": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["video", "amplitude", "target_gain",
                             "proxy_loss"],
                "properties": {
                    "video": {"type": "string"},
                    "amplitude": {"type": "number"},
                    "target_gain": {"type": "number"},
                    "proxy_loss": {"type": "number"},
                },
            },
        },
        "dependence": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["amplitude", "proxy_loss", "target_gain"],
                "properties": {
                    "amplitude": {"type": "number"},
                    "proxy_loss": {"type": "number"},
                    "target_gain": {"type": "number"},
                },
            },
        },
    },
}

REPORT_SCHEMA_V1 = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "title": "uapg stability report",
    "type": "object",
    "required": ["schema", "proxy", "common_proxy_loss_interval", "config",
                 "metrics"],
    "properties": {
        "schema": {"const": "uapg-report/1"},
        "proxy": {
            "type": "object",
            "required": ["name", "cap_db", "colorspace", "loss_sign",
                         "min", "max"],
            "properties": {
                "name": {"type": "string"},
                "cap_db": {"type": "number"},
                "colorspace": {"type": "string"},
                "loss_sign": {"type": "string"},
                "min": {"type": "number"},
                "max": {"type": "number"},
            },
        },
        "common_proxy_loss_interval": {
            "type": "array",
            "minItems": 2,
            "maxItems": 2,
            "items": {"type": "number"},
        },
        "config": {"type": "object"},
        "metrics": {
            "type": "object",
            "minProperties": 1,
            "additionalProperties": _METRIC_ENTRY,
        },
    },
}
