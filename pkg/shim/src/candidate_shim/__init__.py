"""Host process for generated candidate code.

Speaks line-delimited JSON on stdin/stdout. Three operations:

  {"op": "load", "units": [{"name": ..., "source": ...}, ...], "entrypoint": ...}
      -> {"ok": true} | {"ok": false, "error": ...}
  {"op": "call", "request": {...}}
      -> {"ok": true, "response": {...}} | {"ok": false, "error": ..., "traceback": ...}
  {"op": "shutdown"}
      -> process exit 0

Exactly one response line per request line, flushed immediately. A malformed
line yields an error response and the loop continues. Candidate code runs in
this process; isolation is the caller's job at the process boundary. Set
CAE_SHIM_DEBUG=1 to mirror traffic to stderr.
"""

from __future__ import annotations

import builtins
import io
import json
import math
import os
import sys
import traceback
from contextlib import redirect_stdout

__version__ = "0.1.0"

# Candidates get standard math/array facilities only.
ALLOWED_IMPORT_ROOTS = frozenset(
    {
        "math",
        "cmath",
        "random",
        "statistics",
        "itertools",
        "functools",
        "operator",
        "collections",
        "heapq",
        "bisect",
        "typing",
        "numpy",
    }
)

_REAL_IMPORT = builtins.__import__


def _candidate_import(name, globals=None, locals=None, fromlist=(), level=0):
    root = name.split(".")[0]
    if level == 0 and root not in ALLOWED_IMPORT_ROOTS:
        raise ImportError(f"import of {root!r} is not available to candidate code")
    return _REAL_IMPORT(name, globals, locals, fromlist, level)


def _candidate_builtins() -> dict:
    namespace = {k: getattr(builtins, k) for k in dir(builtins)}
    namespace["__import__"] = _candidate_import
    return namespace


def _sanitize(value):
    """Map a candidate result onto JSON-safe types.

    Floats keep full round-trip precision; non-finite floats become the
    strings "nan" / "inf" / "-inf". Objects with tolist() (arrays, numpy
    scalars) are converted first. Unsupported types raise TypeError.
    """
    if isinstance(value, bool) or value is None or isinstance(value, (str, int)):
        return value
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    if isinstance(value, dict):
        return {str(k): _sanitize(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_sanitize(v) for v in value]
    tolist = getattr(value, "tolist", None)
    if callable(tolist):
        return _sanitize(tolist())
    item = getattr(value, "item", None)
    if callable(item):
        return _sanitize(item())
    raise TypeError(f"unserializable value of type {type(value).__name__}")


class Host:
    """Single-threaded load/call dispatcher; load is all-or-nothing."""

    def __init__(self):
        self.namespace = None
        self.entrypoint = None

    def load(self, message) -> dict:
        # A failed load leaves no candidate behind: calls after it are not_loaded.
        self.namespace = None
        self.entrypoint = None
        units = message.get("units")
        entry_name = message.get("entrypoint")
        if not isinstance(units, list) or not isinstance(entry_name, str):
            return {"ok": False, "error": "protocol"}
        namespace = {"__builtins__": _candidate_builtins(), "__name__": "candidate"}
        sink = io.StringIO()
        try:
            with redirect_stdout(sink):
                for unit in units:
                    code = compile(unit["source"], f"<unit:{unit['name']}>", "exec")
                    exec(code, namespace)
        except BaseException as exc:  # noqa: BLE001 - candidate code may raise anything
            return {"ok": False, "error": f"{type(exc).__name__}: {exc}"}
        entry = namespace.get(entry_name)
        if not callable(entry):
            return {"ok": False, "error": f"entrypoint {entry_name!r} is not defined or not callable"}
        self.namespace = namespace
        self.entrypoint = entry
        return {"ok": True}

    def call(self, message) -> dict:
        if self.entrypoint is None:
            return {"ok": False, "error": "not_loaded"}
        request = message.get("request")
        if not isinstance(request, dict):
            return {"ok": False, "error": "protocol"}
        kwargs = {k: v for k, v in request.items() if k != "task"}
        sink = io.StringIO()
        try:
            with redirect_stdout(sink):
                result = self.entrypoint(**kwargs)
        except BaseException as exc:  # noqa: BLE001
            return {
                "ok": False,
                "error": f"{type(exc).__name__}: {exc}",
                "traceback": traceback.format_exc(),
            }
        try:
            response = _sanitize(result)
            json.dumps(response, allow_nan=False)
        except (TypeError, ValueError, RecursionError):
            return {"ok": False, "error": "unserializable"}
        return {"ok": True, "response": response}


def main() -> int:
    debug = os.environ.get("CAE_SHIM_DEBUG") == "1"
    host = Host()
    stdin = sys.stdin
    stdout = sys.stdout
    for line in stdin:
        if debug:
            print(f"shim <- {line.rstrip()}", file=sys.stderr, flush=True)
        try:
            message = json.loads(line)
            if not isinstance(message, dict):
                raise ValueError("not an object")
        except ValueError:
            message = None
        if message is None:
            reply = {"ok": False, "error": "protocol"}
        else:
            op = message.get("op")
            if op == "shutdown":
                return 0
            if op == "load":
                reply = host.load(message)
            elif op == "call":
                reply = host.call(message)
            else:
                reply = {"ok": False, "error": "protocol"}
        encoded = json.dumps(reply, separators=(",", ":"))
        stdout.write(encoded + "\n")
        stdout.flush()
        if debug:
            print(f"shim -> {encoded}", file=sys.stderr, flush=True)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
