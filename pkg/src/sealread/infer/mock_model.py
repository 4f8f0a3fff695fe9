"""Fixture-driven stand-in for an external model process.

Usage::

    python -m sealread.infer.mock_model --fixtures answers.json [--mode echo|hang|garbage]

The fixture document looks like::

    {"classes": ["ALPHA", ..., "NON_CHARACTER"],
     "trained_on": ["syn-0001"],
     "detect":   {"<sha256 of base64 image>": [...], "default": [...]},
     "classify": {"<sha256 of base64 image>": {...}, "default": {...}}}

Answers are looked up by the SHA-256 of the request's ``image`` field and
fall back to ``default``. ``hang`` never answers a request; ``garbage``
answers with a line that is not JSON.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time

from .external import PROTOCOL


def image_key(image_b64: str) -> str:
    return hashlib.sha256(image_b64.encode("ascii")).hexdigest()


def answer(fixtures: dict, req: dict) -> dict:
    op = req.get("op")
    table = fixtures.get(op)
    if table is None:
        return {"id": req.get("id"), "error": f"unsupported op {op!r}"}
    key = image_key(req.get("image", ""))
    value = table.get(key, table.get("default"))
    if value is None:
        return {"id": req.get("id"), "error": "no fixture for this image"}
    field = "detections" if op == "detect" else "scores"
    return {"id": req.get("id"), field: value}


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="python -m sealread.infer.mock_model")
    ap.add_argument("--fixtures", required=True)
    ap.add_argument("--mode", choices=["echo", "hang", "garbage"], default="echo")
    ap.add_argument("--protocol", default=PROTOCOL, help="protocol tag announced in the handshake")
    args = ap.parse_args(argv)

    with open(args.fixtures, encoding="utf-8") as fh:
        fixtures = json.load(fh)
    hello = {"protocol": args.protocol, "ops": [op for op in ("detect", "classify") if op in fixtures]}
    if "classes" in fixtures:
        hello["classes"] = fixtures["classes"]
    if "trained_on" in fixtures:
        hello["trained_on"] = fixtures["trained_on"]
    out = sys.stdout
    out.write(json.dumps(hello) + "\n")
    out.flush()
    for line in sys.stdin:
        if not line.strip():
            continue
        if args.mode == "hang":
            time.sleep(3600)
        if args.mode == "garbage":
            out.write("this is not json\n")
            out.flush()
            continue
        try:
            req = json.loads(line)
        except json.JSONDecodeError:
            out.write(json.dumps({"id": None, "error": "bad request"}) + "\n")
        else:
            out.write(json.dumps(answer(fixtures, req)) + "\n")
        out.flush()
    return 0


if __name__ == "__main__":
    sys.exit(main())
