"""The request/response loop: one JSON document per line on stdin, one per
line on stdout, strictly serial, ids echoed back.

Malformed frames and unknown ops produce ok=false responses and the process
stays alive; only an unrecoverable model failure exits nonzero.
"""

from __future__ import annotations

import json
import sys

from .adapters import AdapterError, load_adapter
from .payload import PayloadError, decode_image, encode_field


def _error(req_id, message: str) -> dict:
    return {"id": req_id, "ok": False, "error": message}


def handle_line(adapter, line: str) -> dict:
    try:
        req = json.loads(line)
    except json.JSONDecodeError as e:
        return _error(None, f"malformed JSON: {e}")
    req_id = req.get("id")
    op = req.get("op")
    if op == "info":
        return {
            "id": req_id,
            "ok": True,
            "name": adapter.name,
            "score_lo": adapter.score_lo,
            "score_hi": adapter.score_hi,
            "supports_gradient": adapter.supports_gradient,
        }
    if op in ("score", "gradient"):
        try:
            image = decode_image(req.get("image") or {})
        except PayloadError as e:
            return _error(req_id, str(e))
        if op == "score":
            return {"id": req_id, "ok": True, "score": adapter.score(image)}
        if not adapter.supports_gradient:
            return _error(req_id,
                          f"metric {adapter.name} has no gradient")
        return {
            "id": req_id,
            "ok": True,
            "gradient": encode_field(adapter.gradient(image)),
        }
    return _error(req_id, f"unknown op {op!r}")


def serve(metric: str, device: str = "cpu", stdin=None, stdout=None) -> int:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    try:
        adapter = load_adapter(metric, device)
    except AdapterError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            resp = handle_line(adapter, line)
        except Exception as e:  # model blew up: report, then bail out
            stdout.write(json.dumps(_error(None, f"fatal: {e}")) + "\n")
            stdout.flush()
            return 1
        stdout.write(json.dumps(resp) + "\n")
        stdout.flush()
    return 0
