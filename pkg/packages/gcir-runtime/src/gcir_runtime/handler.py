from __future__ import annotations

import json
import os
import sys
import time
from typing import Any, Dict, Optional

from pydantic import BaseModel, ValidationError

from .context import RunContext, set_run_context
from .registry import CommandRegistry

# error types that mean "the request itself is wrong"
CLIENT_ERRORS = frozenset({"BadRequest", "ValidationError"})


class RpcError(Exception):
    def __init__(self, error_type: str, message: str) -> None:
        super().__init__(message)
        self.error_type = error_type
        self.message = message


def _response(result: Dict[str, Any] | None = None, error: Dict[str, str] | None = None) -> Dict[str, Any]:
    if error is not None:
        return {"error": error}
    return {"result": result}


def validation_message(ve: ValidationError) -> str:
    parts = []
    for err in ve.errors():
        loc = ".".join(str(p) for p in err.get("loc", ())) or "<root>"
        parts.append(f"field {loc}: {err.get('msg')}")
    return "; ".join(parts)


def _context_from(event: Dict[str, Any]) -> RunContext:
    ctx = event.get("context") or {}
    if not isinstance(ctx, dict):
        raise RpcError("BadRequest", "'context' must be an object")
    seed = ctx.get("seed_override")
    threads = ctx.get("threads")
    return RunContext(
        threads=None if threads is None else int(threads),
        out_dir=str(ctx.get("out_dir") or "."),
        seed_override=None if seed is None else int(seed),
    )


def handler(event: Dict[str, Any], context: Any = None) -> Dict[str, Any]:
    start = time.time()
    env = os.getenv("ENV", "dev")
    registry = CommandRegistry.instance()
    error_type: Optional[str] = None

    try:
        set_run_context(_context_from(event))
        action = event.get("action")
        if action == "describe_commands":
            return _response(
                {
                    "toolset": registry.toolset_name or "unknown",
                    "toolset_version": registry.toolset_version or "0.0.0",
                    "commands": registry.describe(),
                }
            )

        if action == "invoke":
            method = event.get("method")
            if not isinstance(method, str):
                raise RpcError("BadRequest", "'method' must be a string")
            try:
                spec = registry.get_command(method)
            except KeyError:
                raise RpcError("BadRequest", f"Unknown command '{method}'")
            raw_params = event.get("params", {})
            if not isinstance(raw_params, dict):
                raise RpcError("BadRequest", "'params' must be an object")
            try:
                params_model: BaseModel = spec.params_model(**raw_params)
            except ValidationError as ve:
                raise RpcError("ValidationError", validation_message(ve))
            except TypeError as te:
                raise RpcError("BadRequest", str(te))
            result_model: BaseModel = spec.func(params_model)
            if not isinstance(result_model, spec.result_model):
                raise RpcError("InternalError", "Command returned wrong result type")
            return _response(result_model.model_dump(mode="json"))

        raise RpcError("BadRequest", "Unknown action")

    except RpcError as e:
        error_type = e.error_type
        return _response(error={"type": e.error_type, "message": e.message})
    except ValidationError as ve:
        error_type = "ValidationError"
        return _response(error={"type": error_type, "message": validation_message(ve)})
    except Exception as e:  # noqa: BLE001
        # library errors carry their own error_type
        error_type = getattr(e, "error_type", "InternalError")
        return _response(error={"type": error_type, "message": str(e)})
    finally:
        print(
            json.dumps(
                {
                    "level": "INFO" if error_type is None else "ERROR",
                    "env": env,
                    "event": "command_request",
                    "duration_ms": int((time.time() - start) * 1000),
                    "action": event.get("action"),
                    "method": event.get("method"),
                    "error_type": error_type,
                }
            ),
            file=sys.stderr,
        )
