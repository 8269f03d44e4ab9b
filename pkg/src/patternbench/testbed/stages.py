"""Pure transformation stages shared by the HTTP services and the in-process oracle.

Stages operate on the JSON-level representation (lists of dicts) so that the
HTTP composition and the functional composition can be compared byte-exactly.
All serialization goes through :func:`to_json_bytes` (sorted keys, no spaces),
the single canonical encoding of the testbed.
"""

from __future__ import annotations

import csv
import hashlib
import hmac
import io
import json
import operator
from typing import Any

from patternbench.config import StageKind
from patternbench.testbed.dataset import FIELD_NAMES, INT_FIELDS

DEFAULT_ANON_KEY = "pipeline-anon-key"

#: stage parameters used when a request does not override them; the oracle and
#: the HTTP services must agree on these for equivalence to hold
DEFAULT_PARAMS: dict[StageKind, dict[str, str]] = {
    StageKind.FILTER: {"field": "year", "op": "lt", "value": "1900"},
    StageKind.AGGREGATION: {"group_field": "year"},
    StageKind.ANONYMIZATION: {"fields": "author,first_name"},
    StageKind.FORMATTING: {"format": "json"},
}

_OPS = {
    "eq": operator.eq,
    "ne": operator.ne,
    "lt": operator.lt,
    "le": operator.le,
    "gt": operator.gt,
    "ge": operator.ge,
}


class StageError(Exception):
    """Bad stage input; maps to an HTTP 4xx at the service boundary."""

    def __init__(self, message: str, status: int = 400):
        super().__init__(message)
        self.status = status


def to_json_bytes(payload: Any) -> bytes:
    return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _check_field(field: str) -> None:
    if field not in FIELD_NAMES:
        raise StageError(f"unknown field {field!r}; known fields: {', '.join(FIELD_NAMES)}")


def _require_records(payload: Any, stage: str) -> list[dict]:
    if not isinstance(payload, list) or not all(isinstance(r, dict) for r in payload):
        raise StageError(f"{stage} expects a JSON array of records")
    return payload


def _coerce(field: str, raw: str) -> Any:
    if field in INT_FIELDS:
        try:
            return int(raw)
        except (TypeError, ValueError):
            raise StageError(f"field {field!r} needs an integer value, got {raw!r}") from None
    return raw


def filter_stage(records: list[dict], field: str, op: str, value: str) -> list[dict]:
    """Exactly the records satisfying ``field <op> value``, order preserved."""
    _check_field(field)
    if op not in _OPS:
        raise StageError(f"unknown op {op!r}; known ops: {', '.join(sorted(_OPS))}")
    compare = _OPS[op]
    needle = _coerce(field, value)
    return [record for record in records if compare(record[field], needle)]


def aggregation_stage(records: list[dict], group_field: str) -> dict[str, int]:
    """Group counts keyed by the stringified field value; counts sum to len(records)."""
    _check_field(group_field)
    counts: dict[str, int] = {}
    for record in records:
        key = str(record[group_field])
        counts[key] = counts.get(key, 0) + 1
    return counts


def _mask(value: Any, key: str) -> str:
    digest = hmac.new(key.encode("utf-8"), str(value).encode("utf-8"), hashlib.sha256)
    return "anon:" + digest.hexdigest()[:8]


def anonymization_stage(records: list[dict], mask_fields: list[str],
                        key: str = DEFAULT_ANON_KEY) -> list[dict]:
    """Replace the listed fields with a keyed-hash mask; deterministic per (value, key)."""
    for field in mask_fields:
        _check_field(field)
    if not mask_fields:
        return [dict(record) for record in records]
    masked = []
    for record in records:
        out = dict(record)
        for field in mask_fields:
            out[field] = _mask(record[field], key)
        masked.append(out)
    return masked


def _normalize(payload: Any) -> list[dict]:
    """Aggregation maps become (group, count) rows sorted by group; arrays pass through."""
    if isinstance(payload, dict):
        return [{"group": key, "count": payload[key]} for key in sorted(payload)]
    return _require_records(payload, "formatting")


def formatting_stage(payload: Any, out_format: str) -> tuple[bytes, str]:
    """Serialize records (or an aggregation map) to json or csv.

    Returns (body, content_type). CSV gets a header row plus one row per
    record, columns in sorted key order.
    """
    records = _normalize(payload)
    if out_format == "json":
        return to_json_bytes(records), "application/json"
    if out_format == "csv":
        columns = sorted({key for record in records for key in record})
        buf = io.StringIO(newline="")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(columns)
        for record in records:
            writer.writerow([record.get(col, "") for col in columns])
        return buf.getvalue().encode("utf-8"), "text/csv"
    raise StageError(f"unknown format {out_format!r}; known formats: csv, json")


def apply_stage(kind: StageKind, payload: Any, params: dict[str, str]) -> Any:
    """Run one stage on a JSON-level payload with query-style string params.

    Used identically by the HTTP services and by :func:`compose_pipeline`;
    missing params fall back to DEFAULT_PARAMS.
    """
    merged = dict(DEFAULT_PARAMS.get(kind, {}))
    merged.update({k: v for k, v in params.items() if v is not None})
    if kind is StageKind.FILTER:
        records = _require_records(payload, "filter")
        return filter_stage(records, merged["field"], merged["op"], merged["value"])
    if kind is StageKind.AGGREGATION:
        records = _require_records(payload, "aggregation")
        return aggregation_stage(records, merged["group_field"])
    if kind is StageKind.ANONYMIZATION:
        records = _require_records(payload, "anonymization")
        mask_fields = [f for f in merged["fields"].split(",") if f]
        return anonymization_stage(records, mask_fields, merged.get("key", DEFAULT_ANON_KEY))
    if kind is StageKind.FORMATTING:
        return formatting_stage(payload, merged["format"])
    raise StageError(f"{kind.value} is not a transformation stage")


def compose_pipeline(
    records: list[dict],
    stage_kinds: list[StageKind],
    params_by_stage: dict[StageKind, dict[str, str]] | None = None,
) -> tuple[bytes, str]:
    """Ground-truth oracle: apply the pure stages in order, in process.

    Returns (body, content_type) exactly as the coordinator's HTTP composition
    would produce for the same pipeline.
    """
    params_by_stage = params_by_stage or {}
    payload: Any = records
    body: bytes | None = None
    content_type = "application/json"
    for kind in stage_kinds:
        if body is not None:
            raise StageError("formatting must be the terminal stage")
        result = apply_stage(kind, payload, params_by_stage.get(kind, {}))
        if kind is StageKind.FORMATTING:
            body, content_type = result
        else:
            payload = result
    if body is None:
        body = to_json_bytes(payload)
    return body, content_type
