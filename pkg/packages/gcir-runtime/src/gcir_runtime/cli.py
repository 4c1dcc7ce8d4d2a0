"""argv front door: `<command> [--key value | --key=value] ...` over the dispatch handler.

Runtime flags (--out-dir, --seed, --threads) go into the invocation context; every
other flag becomes a command parameter with dashes mapped to underscores.
"""
from __future__ import annotations

import json
import os
import sys
from typing import Any, Dict, List, Optional, Sequence, TextIO, Tuple

from .handler import CLIENT_ERRORS, handler
from .registry import CommandRegistry

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

_CONTEXT_FLAGS = {"out_dir", "seed", "threads"}


class _UsageError(Exception):
    pass


def usage(registry: Optional[CommandRegistry] = None) -> str:
    registry = registry or CommandRegistry.instance()
    names = " | ".join(registry.list_names())
    return (
        f"usage: gcir <command> [--config PATH] [--out-dir DIR] [--seed N] [--threads N] [--key value ...]\n"
        f"commands: {names}\n"
    )


def _coerce(raw: str) -> Any:
    try:
        return json.loads(raw)
    except ValueError:
        return raw


def parse_flags(tokens: Sequence[str]) -> Tuple[Dict[str, Any], Dict[str, Any]]:
    """Split flags into (params, context)."""
    params: Dict[str, Any] = {}
    context: Dict[str, Any] = {}
    i = 0
    while i < len(tokens):
        token = tokens[i]
        if not token.startswith("--") or token == "--":
            raise _UsageError(f"unexpected argument {token!r}")
        key, sep, value = token[2:].partition("=")
        if not sep:
            # the next token is always the value, so negative numbers need no quoting
            if i + 1 >= len(tokens):
                raise _UsageError(f"flag --{key} needs a value")
            value = tokens[i + 1]
            i += 1
        i += 1
        name = key.replace("-", "_")
        if name in _CONTEXT_FLAGS:
            context[name] = value
        else:
            params[name] = _coerce(value) if name != "config" else value
    return params, context


def _context(flags: Dict[str, Any]) -> Dict[str, Any]:
    ctx: Dict[str, Any] = {"out_dir": flags.get("out_dir", ".")}
    try:
        if "seed" in flags:
            ctx["seed_override"] = int(flags["seed"])
        threads = flags.get("threads") or os.getenv("GCIR_THREADS") or None
        if threads is not None:
            ctx["threads"] = int(threads)
    except ValueError as e:
        raise _UsageError(f"--seed/--threads must be integers ({e})")
    if ctx.get("threads") is not None and ctx["threads"] < 1:
        raise _UsageError("--threads must be at least 1")
    return ctx


def run(argv: Sequence[str], *, stdout: TextIO = sys.stdout, stderr: TextIO = sys.stderr) -> int:
    registry = CommandRegistry.instance()
    args: List[str] = list(argv)
    if not args or args[0] in ("-h", "--help"):
        stderr.write(usage(registry))
        return EXIT_USAGE if not args else EXIT_OK
    name, rest = args[0], args[1:]
    if name not in registry.list_names():
        stderr.write(f"unknown command {name!r}\n")
        stderr.write(usage(registry))
        return EXIT_USAGE
    try:
        params, flags = parse_flags(rest)
        ctx = _context(flags)
    except _UsageError as e:
        stderr.write(f"error: BadRequest: {e}\n")
        stderr.write(usage(registry))
        return EXIT_USAGE

    resp = handler({"action": "invoke", "method": name, "params": params, "context": ctx}, None)
    if "error" in resp:
        err = resp["error"]
        stderr.write(f"error: {err['type']}: {err['message']}\n")
        return EXIT_USAGE if err["type"] in CLIENT_ERRORS else EXIT_RUNTIME

    result = resp["result"]
    summary = result.get("summary") if isinstance(result, dict) else None
    stdout.write(summary if isinstance(summary, str) else json.dumps(result, sort_keys=True))
    stdout.write("\n")
    return EXIT_OK


def main() -> None:
    sys.exit(run(sys.argv[1:]))
